use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bizsent(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bizsent"));
    cmd.args(args).env_remove("BIZSENT_OUTPUT_DIR").env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_pipeline_and_report_with_env_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&bizsent(&["synth", "--out-dir", s(&data), "--months", "12"], &[]));
    let out = tmp.path().join("from-env");
    let run = bizsent(
        &["pipeline", "--config", s(&data.join("pipeline.toml")), "--report"],
        &[("BIZSENT_OUTPUT_DIR", &out)],
    );
    ok(&run);
    assert!(String::from_utf8_lossy(&run.stdout).contains("config hash"));
    assert!(out.join("manifest.json").is_file());
    assert!(out.join("report/report.md").is_file());
    assert!(!data.join("out").exists());

    // report can be regenerated on its own and is unchanged
    let before = fs::read(out.join("report/report.md")).unwrap();
    ok(&bizsent(&["report", "--dir", s(&out)], &[]));
    assert_eq!(fs::read(out.join("report/report.md")).unwrap(), before);
}

#[test]
fn stepwise_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&bizsent(&["synth", "--out-dir", s(d), "--months", "6"], &[]));
    ok(&bizsent(
        &["ingest", "--input", s(&d.join("survey.jsonl")), "--source", "survey", "--output", s(&d.join("survey_s.jsonl"))],
        &[],
    ));
    ok(&bizsent(
        &["ingest", "--input", s(&d.join("news.jsonl")), "--output", s(&d.join("news_s.jsonl"))],
        &[],
    ));
    let m = d.join("m");
    ok(&bizsent(
        &[
            "train", "--sentences", s(&d.join("survey_s.jsonl")), "--news", s(&d.join("news_s.jsonl")),
            "--hidden", "8", "--embedding-dim", "8", "--epochs", "3", "--lr", "0.01", "--out-dir", s(&m),
        ],
        &[],
    ));
    let eval = bizsent(
        &["eval", "--model", s(&m.join("model.bin")), "--vocab", s(&m.join("vocab.tsv")), "--sentences", s(&d.join("survey_s.jsonl"))],
        &[],
    );
    ok(&eval);
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!(report["mse"].as_f64().unwrap() >= 0.0);

    let f = d.join("f");
    ok(&bizsent(&["filter-train", "--sentences", s(&d.join("survey_s.jsonl")), "--out-dir", s(&f)], &[]));
    let apply = bizsent(
        &[
            "filter-apply", "--model", s(&f.join("ocsvm.bin")), "--vocab", s(&f.join("bow_vocab.tsv")),
            "--sentences", s(&d.join("news_s.jsonl")), "--out-dir", s(&f), "--threshold-report",
        ],
        &[],
    );
    ok(&apply);
    assert!(String::from_utf8_lossy(&apply.stdout).contains("threshold,outlier_rate"));

    // unfiltered news is refused unless explicitly allowed
    let adapt_args = |sentences: &Path| {
        vec![
            "adapt".to_string(), "--model".into(), s(&m.join("model.bin")).into(), "--vocab".into(),
            s(&m.join("vocab.tsv")).into(), "--sentences".into(), s(sentences).into(), "--thigh".into(),
            "0.5".into(), "--tlow".into(), "-0.5".into(), "--ft-epochs".into(), "1".into(),
            "--histogram-out".into(), s(&d.join("hist.csv")).into(), "--out-dir".into(), s(&d.join("a")).into(),
        ]
    };
    let refused_args = adapt_args(&d.join("news_s.jsonl"));
    let refused = bizsent(&refused_args.iter().map(String::as_str).collect::<Vec<_>>(), &[]);
    assert_eq!(refused.status.code(), Some(3));
    let args = adapt_args(&f.join("kept.jsonl"));
    ok(&bizsent(&args.iter().map(String::as_str).collect::<Vec<_>>(), &[]));
    assert!(d.join("a/model_prime.bin").is_file());
    assert!(fs::read_to_string(d.join("hist.csv")).unwrap().starts_with("lower,upper,count"));

    ok(&bizsent(
        &[
            "score", "--model", s(&d.join("a/model_prime.bin")), "--vocab", s(&m.join("vocab.tsv")),
            "--sentences", s(&f.join("kept.jsonl")), "--output", s(&d.join("scores.jsonl")),
        ],
        &[],
    ));
    ok(&bizsent(&["index", "--scores", s(&d.join("scores.jsonl")), "--output", s(&d.join("index.csv"))], &[]));
    ok(&bizsent(
        &[
            "influence", "--scores", s(&d.join("scores.jsonl")), "--word", "sales", "--word", "booming",
            "--output", s(&d.join("infl.csv")), "--chart", s(&d.join("infl.svg")),
        ],
        &[],
    ));
    assert_eq!(fs::read_to_string(d.join("infl.svg")).unwrap().matches("<polyline").count(), 2);
    ok(&bizsent(&["ewdi", "--survey", s(&d.join("survey.jsonl")), "--output", s(&d.join("di.csv"))], &[]));
    ok(&bizsent(
        &["ewdi", "--survey", s(&d.join("survey.jsonl")), "--occupation", "factory", "--weights", "1,0.75,0.5,0.25,0", "--output", s(&d.join("di_sub.csv"))],
        &[],
    ));
    let corr = bizsent(&["correlate", "--a", s(&d.join("index.csv")), "--b", s(&d.join("di.csv"))], &[]);
    ok(&corr);
    let r: serde_json::Value = serde_json::from_slice(&corr.stdout).unwrap();
    assert!(r["r"].as_f64().unwrap().abs() <= 1.0);
    assert_eq!(r["n"].as_u64(), Some(6));
}

#[test]
fn gradcheck_command_passes() {
    let out = bizsent(&["gradcheck", "--models", "3"], &[]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("worst relative error"));
}

#[test]
fn exit_codes_follow_failure_class() {
    let tmp = tempfile::tempdir().unwrap();
    // config problem: input files missing
    fs::write(tmp.path().join("p.toml"), "seed = 1\n").unwrap();
    let out = bizsent(&["pipeline", "--config", s(&tmp.path().join("p.toml"))], &[]);
    assert_eq!(out.status.code(), Some(2));
    // malformed config
    fs::write(tmp.path().join("bad.toml"), "[model]\nhiden = 3\n").unwrap();
    let out = bizsent(&["pipeline", "--config", s(&tmp.path().join("bad.toml"))], &[]);
    assert_eq!(out.status.code(), Some(2));
    // data problem: unreadable input
    let out = bizsent(&["index", "--scores", s(&tmp.path().join("none.jsonl")), "--output", s(&tmp.path().join("x.csv"))], &[]);
    assert_eq!(out.status.code(), Some(3));
}
