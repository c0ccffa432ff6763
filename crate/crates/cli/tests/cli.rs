use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use excursion_core::gbm_app::{make_app, region_map};
use excursion_core::majorant::Region;
use excursion_stop::config::{ConfigError, ProblemConfig, RewardKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_excursion-stop"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = bin();
    c.args(args);
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const PUT: &str = "\
model.kind = gbm
model.mu = 0.05
model.sigma = 0.25
model.q = 0.15   # discount
reward.kind = put
reward.strike = 5
boundary.kind = none
grid.x_min = 1
grid.x_max = 6
grid.s_min = 1
grid.s_max = 6
grid.nx = 11
grid.ns = 11
";

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn parse_minimal_config() {
    let c = ProblemConfig::parse(PUT, None).unwrap();
    assert_eq!(c.reward.kind, RewardKind::Put { strike: 5.0 });
    assert_eq!(c.grid.x_grid().len(), 11);
    assert_eq!(c.grid.x_grid()[10], 6.0);
    assert!(c.mc.is_none());
}

#[test]
fn config_round_trip() {
    for name in ["put.cfg", "lookback.cfg", "invest.cfg"] {
        let c = ProblemConfig::load(&configs().join(name)).unwrap();
        let again = ProblemConfig::parse(&c.to_string(), None).unwrap();
        assert_eq!(c, again, "{name}");
        assert_eq!(c.to_string(), again.to_string());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let mut c = ProblemConfig::parse(PUT, None).unwrap();
        c.model.mu = rng.random_range(-1.0..1.0);
        c.model.sigma = rng.random_range(1e-3..2.0);
        c.model.q = rng.random::<f64>() * 10f64.powi(rng.random_range(-6..3)) + 1e-12;
        c.reward.kind = RewardKind::Lookback { k: rng.random_range(0.0..1.0) };
        c.grid.x_min = rng.random_range(1e-9..1.0);
        c.grid.x_max = c.grid.x_min + rng.random::<f64>() + 1e-9;
        let again = ProblemConfig::parse(&c.to_string(), None).unwrap();
        assert_eq!(c, again);
    }
}

#[test]
fn config_errors_carry_location() {
    let empty_grid: String = PUT.lines().filter(|l| !l.starts_with("grid.")).map(|l| format!("{l}\n")).collect();
    let e = ProblemConfig::parse(&empty_grid, None).unwrap_err();
    assert_eq!(e.to_string(), "grid: missing field nx");

    let bad = PUT.replace("model.sigma = 0.25", "model.sigma = abc");
    match ProblemConfig::parse(&bad, None).unwrap_err() {
        ConfigError::Value { line, section, key, .. } => assert_eq!((line, section.as_str(), key.as_str()), (3, "model", "sigma")),
        other => panic!("{other:?}"),
    }
    let unknown = format!("{PUT}grid.nz = 3\n");
    assert!(ProblemConfig::parse(&unknown, None).unwrap_err().to_string().contains("grid.nz: unknown key"));
    let dup = format!("{PUT}grid.nx = 3\n");
    assert!(ProblemConfig::parse(&dup, None).unwrap_err().to_string().contains("already set on line 12"));
    assert!(matches!(ProblemConfig::parse("nonsense\n", None), Err(ConfigError::Syntax { line: 1, .. })));
    assert!(matches!(ProblemConfig::parse("foo.bar = 1\n", None), Err(ConfigError::Syntax { .. })));
    let neg = PUT.replace("grid.x_min = 1", "grid.x_min = -1");
    assert!(ProblemConfig::parse(&neg, None).unwrap_err().to_string().contains("positive half-line"));
    let seed = format!("{PUT}mc.seed = -4\nmc.start = 5:5\n");
    assert!(ProblemConfig::parse(&seed, None).unwrap_err().to_string().contains("mc.seed"));
    let start = format!("{PUT}mc.start = 6:5\n");
    assert!(ProblemConfig::parse(&start, None).unwrap_err().to_string().contains("s0 >= x0"));
}

#[test]
fn solve_put_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "put.cfg", PUT);
    let out = dir.path().join("out");
    let o = run(&["--out-dir", out.to_str().unwrap(), "solve", cfg.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("dx=0.500000") && text.contains("corollary1"));

    let head = std::fs::read_to_string(out.join("vss.csv")).unwrap();
    assert!(head.starts_with("s,l_star,value,gamma_slope,method,boundary_binding\n"));
    assert!(head.ends_with('\n'));
    let vss = csv_rows(&out.join("vss.csv"));
    assert_eq!(vss.len(), 11);
    let at5 = vss.iter().find(|r| r[0] == "5.0").unwrap();
    assert!((at5[1].parse::<f64>().unwrap() - 1.42396).abs() < 1e-5);
    assert_eq!(at5[4], "corollary1");

    let surf = csv_rows(&out.join("surface.csv"));
    assert_eq!(surf.len(), 121);
    for r in &surf {
        let (x, s): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        assert!(["STOP", "CONTINUE", "INFEASIBLE"].contains(&r[3].as_str()));
        assert_eq!(r[3] == "INFEASIBLE", x > s, "{r:?}");
        if r[3] == "STOP" {
            let v: f64 = r[2].parse().unwrap();
            assert!((v - (5.0 - x)).abs() < 1e-9);
        }
    }
}

#[test]
fn solve_quiet_and_output_dir_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("tables");
    let cfg = write_cfg(dir.path(), "put.cfg", &format!("{PUT}output.dir = {}\n", target.display()));
    let o = run(&["--quiet", "solve", cfg.to_str().unwrap()], &[]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    assert!(target.join("vss.csv").exists() && target.join("surface.csv").exists());
}

#[test]
fn solve_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let empty_grid: String = PUT.lines().filter(|l| !l.starts_with("grid.")).map(|l| format!("{l}\n")).collect();
    let cfg = write_cfg(dir.path(), "a.cfg", &empty_grid);
    let o = run(&["--out-dir", dir.path().to_str().unwrap(), "solve", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid: missing field nx"));

    let o = run(&["solve", dir.path().join("missing.cfg").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));

    // Income x^3 grows faster than the discount: its potential is infinite.
    let bad = PUT.replace("reward.kind = put\nreward.strike = 5", "reward.kind = power_income\nreward.p = 3");
    let cfg = write_cfg(dir.path(), "b.cfg", &bad);
    let o = run(&["--out-dir", dir.path().to_str().unwrap(), "solve", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let msg = stderr(&o);
    assert!(msg.starts_with("error: ConvergenceViolated: "), "{msg}");
}

#[test]
fn solve_invest_regions_match_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--quiet", "--out-dir", dir.path().to_str().unwrap(), "solve", configs().join("invest.cfg").to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = ProblemConfig::load(&configs().join("invest.cfg")).unwrap();
    let (xs, ss) = (cfg.grid.x_grid(), cfg.grid.s_grid());
    let p = make_app(0.05, 0.1, 0.1, 0.8).unwrap();
    let oracle = region_map(&p, &xs, &ss).unwrap();
    let rows = csv_rows(&dir.path().join("surface.csv"));
    let mut mismatched = 0;
    for (j, _) in ss.iter().enumerate() {
        for (i, _) in xs.iter().enumerate() {
            let got = &rows[j * xs.len() + i][3];
            let want = oracle.surface.region[j][i];
            if got != want.as_str() {
                // Allowed only next to a region edge of the oracle.
                let near = [i.saturating_sub(1), (i + 1).min(xs.len() - 1)]
                    .iter()
                    .any(|&k| oracle.surface.region[j][k].as_str() == got.as_str());
                assert!(near, "cell ({}, {}) {got} vs {:?}", xs[i], ss[j], want);
                mismatched += 1;
            }
        }
    }
    assert!(mismatched <= ss.len());
    assert!(rows.iter().any(|r| r[3] == Region::Continue.as_str()));
}

#[test]
fn table_reward_matches_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let mut table = String::from("x,s,h\n");
    for &s in &[1.0, 100.0] {
        for i in 0..=600 {
            let x = i as f64 * 0.01;
            table.push_str(&format!("{x},{s},{}\n", (5.0f64 - x).max(0.0)));
        }
    }
    std::fs::write(dir.path().join("put.csv"), table).unwrap();
    let text = PUT.replace("reward.kind = put\nreward.strike = 5", "reward.kind = table\nreward.path = put.csv");
    let cfg = write_cfg(dir.path(), "t.cfg", &text);
    let o = run(&["--quiet", "--out-dir", dir.path().to_str().unwrap(), "solve", cfg.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let vss = csv_rows(&dir.path().join("vss.csv"));
    let at5 = vss.iter().find(|r| r[0] == "5.0").unwrap();
    assert!((at5[1].parse::<f64>().unwrap() - 1.42396).abs() < 2e-3, "{at5:?}");

    std::fs::write(dir.path().join("put.csv"), "x,s\n1,2\n").unwrap();
    let o = run(&["--out-dir", dir.path().to_str().unwrap(), "solve", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing column h"));
}

fn sim_cfg(dir: &Path) -> PathBuf {
    write_cfg(
        dir,
        "sim.cfg",
        &format!("{PUT}mc.paths = 3000\nmc.dt = 0.002\nmc.t_max = 40\nmc.seed = 5\nmc.start = 5:5, 4.5:5\n"),
    )
}

#[test]
fn simulate_is_reproducible_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sim_cfg(dir.path());
    let mut outputs = Vec::new();
    for threads in ["1", "4", "1"] {
        let out = dir.path().join(format!("o{}", outputs.len()));
        let o = run(
            &["--quiet", "--out-dir", out.to_str().unwrap(), "simulate", cfg.to_str().unwrap()],
            &[("EXCURSION_STOP_THREADS", threads)],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(std::fs::read(out.join("mc.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert!(text.starts_with("x0,s0,estimate,stderr,n_stopped,n_absorbed,n_censored\n"));
    let rows = csv_rows(&dir.path().join("o0/mc.csv"));
    assert_eq!(rows.len(), 2);
    let n: usize = rows[0][4..].iter().map(|v| v.parse::<usize>().unwrap()).sum();
    assert_eq!(n, 3000);
}

#[test]
fn simulate_overrides_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sim_cfg(dir.path());
    let d = dir.path().to_str().unwrap();
    let o = run(&["--out-dir", d, "simulate", cfg.to_str().unwrap(), "--paths", "500", "--seed", "9"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("500 paths") && text.contains("seed=9"));
    let z: f64 = text.lines().nth(2).unwrap().split_whitespace().nth(5).unwrap().parse().unwrap();
    assert!(z.abs() < 4.0, "{text}");

    assert_eq!(run(&["simulate", cfg.to_str().unwrap(), "--seed", "x1"], &[]).status.code(), Some(2));
    assert_eq!(run(&["simulate", cfg.to_str().unwrap(), "--paths", "-3"], &[]).status.code(), Some(2));
    let o = run(&["--out-dir", d, "simulate", cfg.to_str().unwrap()], &[("EXCURSION_STOP_THREADS", "0")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("EXCURSION_STOP_THREADS"));

    let no_mc = write_cfg(dir.path(), "nomc.cfg", PUT);
    let o = run(&["--out-dir", d, "simulate", no_mc.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mc: section required"));

    let anti = write_cfg(dir.path(), "anti.cfg", &format!("{PUT}mc.paths = 3\nmc.antithetic = true\nmc.start = 5:5\n"));
    let o = run(&["--out-dir", d, "simulate", anti.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("InvalidParameter"));
}

#[test]
fn demos() {
    for name in ["put", "shepp", "invest"] {
        let o = run(&["demo", name], &[]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stdout));
        assert!(String::from_utf8_lossy(&o.stdout).contains("all checks passed"));
    }
    let o = run(&["demo", "put"], &[]);
    let text = String::from_utf8_lossy(&o.stdout);
    let x_star = text.lines().find(|l| l.contains("x* at s=5")).unwrap();
    assert!(x_star.contains("3.5760399"));

    // The stored k=1/2 constant is not reproduced; the k=0 value is printed next to it.
    let o = run(&["demo", "lookback"], &[]);
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("0.70163618") && text.contains("0.78407286"));

    let o = run(&["demo", "nope"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(run(&["--quiet", "demo", "put"], &[]).stdout.is_empty());
}

#[test]
fn usage_errors() {
    assert_eq!(run(&[], &[]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"], &[]).status.code(), Some(2));
    assert_eq!(run(&["--help"], &[]).status.code(), Some(0));
}
