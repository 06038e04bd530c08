use std::path::Path;
use std::process::{Command, Output};

use saga::harness::{log_from_csv, sample_metrics, BenchmarkReport};
use saga::net::{NetConfig, PlannerNet};
use saga::world::{DepthImage, PillarWorld};

fn saga(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saga"))
        .args(args)
        .env_remove("SAGA_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_world_is_deterministic_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    for out in [&a, &b] {
        let o = saga(&["gen-world", "--seed", "7", "--density", "0.05", "--out", p(out)]);
        assert_eq!(code(&o), 0, "{o:?}");
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(PillarWorld::load(&a).unwrap().pillars.len(), 40);
    let meta = std::fs::read_to_string(dir.path().join("a.txt.meta")).unwrap();
    assert!(meta.contains("density=0.05") && meta.contains("pillars=40"));

    let o = saga(&["gen-world", "--seed", "7", "--density", "-1", "--out", p(&a)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn seed_env_fallback_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("env.txt");
    let o = Command::new(env!("CARGO_BIN_EXE_saga"))
        .args(["gen-world", "--out", p(&env_out)])
        .env("SAGA_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let flag_out = dir.path().join("flag.txt");
    assert_eq!(code(&saga(&["gen-world", "--seed", "7", "--out", p(&flag_out)])), 0);
    assert_eq!(std::fs::read(&env_out).unwrap(), std::fs::read(&flag_out).unwrap());

    // file overrides env, --set overrides file
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed=3\ndensity=0.1\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_saga"))
        .args(["--config", p(&cfg), "--set", "seed=5", "gen-world", "--out", p(&env_out)])
        .env("SAGA_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let w = PillarWorld::load(&env_out).unwrap();
    assert_eq!((w.seed, w.density), (5, 0.1));
}

#[test]
fn unknown_config_key_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.txt");
    let o = saga(&["--set", "lamda_safe=3", "gen-world", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lamda_safe"));
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "v_max=2\nspeed=3\n").unwrap();
    assert_eq!(code(&saga(&["--config", p(&cfg), "gen-world", "--out", p(&out)])), 2);
}

#[test]
fn fly_oracle_free_space_and_summary_matches_csv() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("empty.txt");
    PillarWorld::empty().save(&world).unwrap();
    let prefix = dir.path().join("ep");
    let o = saga(&["fly", "--world", p(&world), "--mode", "oracle", "--vmax", "2", "--out-prefix", p(&prefix)]);
    assert_eq!(code(&o), 0, "{o:?}");
    let line = stdout(&o);
    assert!(line.starts_with("success=1 failure_cause=none"), "{line}");

    let csv = std::fs::read_to_string(dir.path().join("ep.csv")).unwrap();
    let m = sample_metrics(&log_from_csv(&csv, Path::new("ep.csv")).unwrap()).unwrap();
    let field = |k: &str| -> String {
        line.split_whitespace()
            .find_map(|f| f.strip_prefix(&format!("{k}=")))
            .unwrap()
            .to_string()
    };
    use saga::fmt::sig9;
    assert_eq!(field("time_s"), sig9(m.time_consumption));
    assert_eq!(field("length_m"), sig9(m.traj_length));
    assert_eq!(field("avg_safety_m"), sig9(m.avg_safety));
    assert_eq!(field("min_safety_m"), sig9(m.min_safety));
    let meta = std::fs::read_to_string(dir.path().join("ep.meta")).unwrap();
    assert!(meta.contains("world=") && meta.contains("sha256="));
}

#[test]
fn fly_validation_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("w.txt");
    PillarWorld::empty().save(&world).unwrap();
    let prefix = dir.path().join("ep");
    let o = saga(&["fly", "--world", p(&world), "--mode", "learned", "--out-prefix", p(&prefix)]);
    assert_eq!(code(&o), 2);
    let o = saga(&["fly", "--world", "/no/such/world.txt", "--out-prefix", p(&prefix)]);
    assert_eq!(code(&o), 2);
    let o = saga(&["fly", "--world", p(&world), "--mode", "sideways", "--out-prefix", p(&prefix)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn fly_numerical_fault_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("w.txt");
    PillarWorld::empty().save(&world).unwrap();
    let weights = dir.path().join("n.sagw");
    PlannerNet::init(NetConfig::tiny(), 1).unwrap().save(&weights).unwrap();
    let prefix = dir.path().join("ep");
    // terminal velocities scale with v_max and overflow the trajectory
    let o = saga(&[
        "fly",
        "--world",
        p(&world),
        "--weights",
        p(&weights),
        "--mode",
        "learned",
        "--vmax",
        "1e307",
        "--out-prefix",
        p(&prefix),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bench_counts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let args = |out: &Path, jobs: &'static str| {
        vec![
            "bench".to_string(),
            "--seeds".into(),
            "0-4".into(),
            "--speeds".into(),
            "2,3,4".into(),
            "--modes".into(),
            "oracle,random".into(),
            "--jobs".into(),
            jobs.into(),
            "--out".into(),
            p(out).into(),
        ]
    };
    let run = |v: Vec<String>| saga(&v.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_eq!(code(&run(args(&a, "1"))), 0);
    assert_eq!(code(&run(args(&b, "3"))), 0);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let report = BenchmarkReport::from_csv(&text, &a).unwrap();
    assert_eq!(report.rows.len(), 30);
    assert_eq!(report.aggregates.len(), 6);
    for agg in &report.aggregates {
        let rows: Vec<_> = report
            .rows
            .iter()
            .filter(|r| r.speed == agg.speed && r.mode == agg.mode)
            .collect();
        let ok = rows.iter().filter(|r| r.success).count();
        assert_eq!(agg.successes, ok);
        assert_eq!(saga::fmt::sig9(agg.success_rate), saga::fmt::sig9(ok as f64 / rows.len() as f64));
    }
}

#[test]
fn render_round_trip_and_zero_weight_plan() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("w.txt");
    assert_eq!(code(&saga(&["gen-world", "--seed", "4", "--out", p(&world)])), 0);
    let depth = dir.path().join("d.sdpt");
    let o = saga(&["render", "--world", p(&world), "--x", "-10", "--y", "1", "--yaw", "0.2", "--out", p(&depth)]);
    assert_eq!(code(&o), 0, "{o:?}");
    let img = DepthImage::load(&depth).unwrap();
    let mut bytes = Vec::new();
    img.write_to(&mut bytes);
    assert_eq!(bytes, std::fs::read(&depth).unwrap());

    let plan_meta = dir.path().join("plan.meta");
    let o = saga(&["plan", "--world", p(&world), "--zero-weights", "--meta", p(&plan_meta)]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 15);
    for r in rows {
        let score: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        assert!((score - std::f64::consts::LN_2).abs() < 1e-8);
    }
    assert!(plan_meta.exists());
    let o = saga(&["plan", "--world", p(&world), "--meta", p(&plan_meta)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_tiny_passes() {
    let dir = tempfile::tempdir().unwrap();
    let meta = dir.path().join("g.meta");
    let o = saga(&["gradcheck", "--tiny", "--meta", p(&meta)]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).starts_with("max_rel_error="));
    assert!(std::fs::read_to_string(&meta).unwrap().contains("max_rel_error"));
    assert_eq!(code(&saga(&["gradcheck", "--meta", p(&meta)])), 2);
}
