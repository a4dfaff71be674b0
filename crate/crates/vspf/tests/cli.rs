//! Command-line behaviour: exit codes, file handling, and the
//! phantom -> register -> TRE pipeline.

use vspf::bench::{make_phantom_pair, tre, PhantomSpec};
use vspf::cli::run_cli;
use vspf::registration::RegistrationReport;
use vspf::transform::RigidParams;
use vspf::volume::load_volume;

#[test]
fn help_exits_zero() {
    assert_eq!(run_cli(["vspf", "--help"]), 0);
    assert_eq!(run_cli(["vspf", "register", "--help"]), 0);
    assert_eq!(run_cli(["vspf", "bench", "--help"]), 0);
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(run_cli(["vspf", "register", "--definitely-not-a-flag", "x"]), 1);
    assert_eq!(run_cli(["vspf", "no-such-subcommand"]), 1);
}

#[test]
fn missing_reference_is_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.json");
    let code = run_cli([
        "vspf",
        "register",
        "--ref",
        "/nonexistent/volume.mhd",
        "--mov",
        "/nonexistent/volume.mhd",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn phantom_register_tre_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let pair_dir = dir.path().join("pair");
    let code = run_cli([
        "vspf",
        "phantom",
        "--seed",
        "9",
        "--out-dir",
        pair_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    for f in ["ref.mhd", "ref.raw", "mov.mhd", "mov.raw", "pair.json"] {
        assert!(pair_dir.join(f).is_file(), "{f} missing");
    }

    let out = dir.path().join("result.json");
    let code = run_cli([
        "vspf",
        "register",
        "--ref",
        pair_dir.join("ref.mhd").to_str().unwrap(),
        "--mov",
        pair_dir.join("mov.mhd").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--rate",
        "0.01",
        "--seed",
        "4",
    ]);
    assert_eq!(code, 0);
    let report: RegistrationReport =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let est = RigidParams::from_vec6(&report.theta);

    let stored = vspf::cli::load_pair(&pair_dir).unwrap();
    let tres = tre(&stored.gold, &est, &stored.voi_points);
    let max = tres.iter().cloned().fold(0.0f64, f64::max);
    assert!(max < 1.0, "pipeline max TRE {max} mm");
}

#[test]
fn vspf_export_writes_probability_volume() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PhantomSpec {
        size: 32,
        max_translation_mm: 3.0,
        max_rotation_rad: 0.08,
        ..PhantomSpec::default()
    };
    let pair = make_phantom_pair(&spec, 8).unwrap();
    let pair_dir = dir.path().join("pair");
    std::fs::create_dir_all(&pair_dir).unwrap();
    vspf::cli::save_pair(&pair, &pair_dir).unwrap();

    let out = dir.path().join("field.mhd");
    let code = run_cli([
        "vspf",
        "vspf-export",
        "--ref",
        pair_dir.join("ref.mhd").to_str().unwrap(),
        "--mov",
        pair_dir.join("mov.mhd").to_str().unwrap(),
        "--level",
        "2",
        "--out",
        out.to_str().unwrap(),
        "--rate",
        "0.01",
        "--seed",
        "3",
    ]);
    assert_eq!(code, 0);
    let field = load_volume(&out).unwrap();
    assert_eq!(field.dims, [16, 16, 16]);
    assert!(field.data.iter().all(|&p| (0.0..=1.0).contains(&p)));
    // The expected count matches the configured sampling budget.
    let expected: f64 = field.data.iter().sum();
    let m = 0.01 * pair.reference.len() as f64;
    assert!((expected - m).abs() <= 1e-3 * m, "sum p = {expected}, M = {m}");
}

#[test]
fn register_dumps_histogram_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PhantomSpec {
        size: 24,
        max_translation_mm: 3.0,
        max_rotation_rad: 0.08,
        ..PhantomSpec::default()
    };
    let pair = make_phantom_pair(&spec, 2).unwrap();
    let pair_dir = dir.path().join("pair");
    std::fs::create_dir_all(&pair_dir).unwrap();
    vspf::cli::save_pair(&pair, &pair_dir).unwrap();

    let out = dir.path().join("result.json");
    let hist = dir.path().join("hist.csv");
    let trace = dir.path().join("trace.csv");
    let code = run_cli([
        "vspf",
        "register",
        "--ref",
        pair_dir.join("ref.mhd").to_str().unwrap(),
        "--mov",
        pair_dir.join("mov.mhd").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--rate",
        "0.05",
        "--seed",
        "1",
        "--dump-histogram",
        hist.to_str().unwrap(),
        "--dump-nmi-trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let hist_body = std::fs::read_to_string(&hist).unwrap();
    let rows: Vec<&str> = hist_body.lines().collect();
    assert_eq!(rows.len(), 32, "expected 32 histogram rows");
    assert!(rows.iter().all(|r| r.split(',').count() == 32));
    let trace_body = std::fs::read_to_string(&trace).unwrap();
    assert!(trace_body.starts_with("level,iteration,nmi"));
    assert!(trace_body.lines().count() > 2);
}

#[test]
fn learn_cli_writes_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PhantomSpec {
        size: 16,
        max_translation_mm: 1.5,
        max_rotation_rad: 0.04,
        ..PhantomSpec::default()
    };
    let mut entries = Vec::new();
    for i in 0..2u64 {
        let pair = make_phantom_pair(&spec, 20 + i).unwrap();
        let pdir = dir.path().join(format!("p{i}"));
        std::fs::create_dir_all(&pdir).unwrap();
        vspf::cli::save_pair(&pair, &pdir).unwrap();
        let body = std::fs::read_to_string(pdir.join("pair.json")).unwrap();
        let mut entry: serde_json::Value = serde_json::from_str(&body).unwrap();
        entry["ref"] = format!("p{i}/ref.mhd").into();
        entry["mov"] = format!("p{i}/mov.mhd").into();
        entries.push(entry);
    }
    let manifest = dir.path().join("pairs.json");
    std::fs::write(&manifest, serde_json::to_string(&entries).unwrap()).unwrap();

    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"sampling_rate": 0.05, "seed": 6, "optimizer_per_level": [
            {"max_iters": 8}, {"max_iters": 12}
        ]}"#,
    )
    .unwrap();
    let out = dir.path().join("schedule.json");
    let code = run_cli([
        "vspf",
        "learn",
        "--pairs-manifest",
        manifest.to_str().unwrap(),
        "--param",
        "ph",
        "--out",
        out.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--grid-step",
        "0.25",
        "--trials",
        "1",
    ]);
    assert_eq!(code, 0);
    let schedule = vspf::learning::LearnedSchedule::load(&out).unwrap();
    assert_eq!(schedule.entries.len(), 2);
    let values = schedule.values_per_level(2).unwrap();
    assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
}
