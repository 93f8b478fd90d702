use std::path::Path;
use std::process::{Command, Output};

fn patchpipe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchpipe")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn help_and_usage_exit_codes() {
    let help = patchpipe(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("detect-visits"));
    assert_eq!(patchpipe(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(patchpipe(&["track"]).status.code(), Some(1));
    assert_eq!(patchpipe(&["track", "--poses", "/nonexistent/poses.ndjson"]).status.code(), Some(2));
}

#[test]
fn bad_config_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"visit.r_visit_px": -1}"#).unwrap();
    let poses = dir.path().join("poses.ndjson");
    std::fs::write(&poses, "").unwrap();
    let o = patchpipe(&["--config", &s(&cfg), "track", "--poses", &s(&poses)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("visit.r_visit_px"));
    std::fs::write(&cfg, r#"{"visit.no_such_key": 1}"#).unwrap();
    assert_eq!(patchpipe(&["--config", &s(&cfg), "track", "--poses", &s(&poses)]).status.code(), Some(2));
}

#[test]
fn synth_track_detect_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let world = d.join("world");
    let wc = d.join("world_cfg.json");
    std::fs::write(&wc, r#"{"visits": 15, "seed": 2}"#).unwrap();
    assert!(patchpipe(&["--config", &s(&wc), "synth", "--out", &s(&world), "--frame-stride", "0"]).status.success());
    for f in ["world.json", "poses.ndjson", "visits_gt.ndjson", "index.csv", "flowers_gt.json", "reference.ppm"] {
        assert!(world.join(f).exists(), "{f} missing");
    }
    let tracks = d.join("tracks.ndjson");
    assert!(patchpipe(&["track", "--poses", &s(&world.join("poses.ndjson")), "--out", &s(&tracks)]).status.success());
    let events = d.join("events.ndjson");
    let o = patchpipe(&[
        "detect-visits",
        "--tracks",
        &s(&tracks),
        "--flowers",
        "auto",
        "--reference",
        &s(&world.join("reference.ppm")),
        "--out",
        &s(&events),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = patchpipe(&["eval-visits", "--predicted", &s(&events), "--annotated", &s(&world.join("visits_gt.ndjson"))]);
    assert!(stdout(&o).starts_with("annotated 15 "), "{}", stdout(&o));
    assert!(stdout(&o).contains("recall 1.000"), "{}", stdout(&o));

    // Streaming run writes the same events as the batch commands.
    let streamed = d.join("stream.ndjson");
    let stats = d.join("stats.csv");
    let o = patchpipe(&[
        "run",
        "--poses",
        &s(&world.join("poses.ndjson")),
        "--flowers",
        &s(&world.join("flowers_gt.json")),
        "--sink",
        &format!("file:{}", s(&streamed)),
        "--queue",
        "1",
        "--bench",
        "--stats",
        &s(&stats),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let batch = d.join("batch.ndjson");
    patchpipe(&["detect-visits", "--tracks", &s(&tracks), "--flowers", &s(&world.join("flowers_gt.json")), "--out", &s(&batch)]);
    assert_eq!(std::fs::read(&streamed).unwrap(), std::fs::read(&batch).unwrap());
    let o = patchpipe(&["bench-report", "--stats", &s(&stats), "--budget-fps", "20"]);
    assert!(stdout(&o).starts_with("PASS"), "{}", stdout(&o));
}

#[test]
fn bench_report_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let stats = dir.path().join("stats.csv");
    let header = "stage,frames,mean_ms,p50_ms,p95_ms,max_ms,throughput_fps,stalls\n";
    for (mean, frames, verdict) in [("13.0", 100, "PASS"), ("60.0", 100, "FAIL"), ("0.0", 0, "INDETERMINATE")] {
        std::fs::write(&stats, format!("{header}end_to_end,{frames},{mean},{mean},{mean},{mean},50.0,0\n")).unwrap();
        let out = dir.path().join("summary.csv");
        let o = patchpipe(&["bench-report", "--stats", &s(&stats), "--budget-fps", "20", "--out", &s(&out)]);
        assert_eq!(o.status.code(), Some(0));
        assert!(stdout(&o).starts_with(verdict), "{}", stdout(&o));
        assert!(std::fs::read_to_string(&out).unwrap().contains(&verdict.to_lowercase()));
    }
    assert_eq!(patchpipe(&["bench-report", "--stats", &s(&stats), "--budget-fps", "0"]).status.code(), Some(1));
}
