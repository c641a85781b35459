mod common;

use ftcons::scenario::{cmd_check, cmd_montecarlo, cmd_run, cmd_sweep, Grid, Scenario, ScenarioFile, SweepParam};
use ftcons::Error;

const PAIR: &str = r#"
name = "pair"
mode = "full-state"

[topology]
adjacency = [[0, 1], [1, 0]]

[model]
kind = "custom-affine"
initial = [[1.0], [-1.0]]

[gains]
alpha = 1.2
a = 10.0
b = 0.1
gamma = 1.5
k1 = [[20.0]]
k2 = [[0.1]]

[delay]
default = { kind = "constant", value = 0.05 }

[disturbance]
gain = "friction"
w = 1.0

[integration]
step = 1e-3
horizon = 0.5
"#;

fn shipped() -> Vec<&'static str> {
    vec![
        "hinf_unicycle_4.scn",
        "stochastic_unicycle_4.scn",
        "leader_unicycle_4.scn",
        "stochastic_leader_unicycle_4.scn",
        "partial_unicycle_4.scn",
    ]
}

#[test]
fn echo_round_trips() {
    for name in shipped() {
        let file = ScenarioFile::load(&common::scenario_path(name)).unwrap();
        let again = ScenarioFile::parse(&file.echo()).unwrap();
        assert_eq!(file, again, "{name}");
    }
    let file = ScenarioFile::parse(PAIR).unwrap();
    assert_eq!(ScenarioFile::parse(&file.echo()).unwrap(), file);
}

#[test]
fn benchmark_file_matches_experiment() {
    let scn = Scenario::load(&common::scenario_path("hinf_unicycle_4.scn")).unwrap();
    let p = scn.file.model.params.unwrap();
    assert_eq!((p.m, p.r_axle, p.r_wheel, p.p), (10.0, 0.5, 0.05, 0.04));
    assert_eq!(scn.file.model.initial, vec![vec![0.5, 0.5], vec![0.3, 0.2], vec![0.8, 0.1], vec![0.1, 0.7]]);
    let g = &scn.base_gains;
    assert_eq!((g.alpha, g.a, g.b, g.gamma), (1.2, 10.0, 0.1, Some(1.5)));
    assert!((g.d - 0.35).abs() < 1e-15);
    let report = cmd_check(&scn, false).unwrap().report;
    assert!((report.d - 0.35).abs() < 1e-15);
}

#[test]
fn missing_gamma_is_rejected() {
    let text = PAIR.replace("gamma = 1.5\n", "");
    match ScenarioFile::parse(&text) {
        Err(Error::Validation(m)) => assert!(m.contains("gamma required"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn delay_above_bound_is_rejected() {
    let text = PAIR.replace("k2 = [[0.1]]", "k2 = [[0.1]]\nd = 0.3").replace(
        r#"{ kind = "constant", value = 0.05 }"#,
        r#"{ kind = "exp-decay", c0 = 0.1, c1 = 0.25 }"#,
    );
    match ScenarioFile::parse(&text) {
        Err(Error::Validation(m)) => assert!(m.contains("delay exceeds bound d"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn parse_errors_carry_the_line() {
    let text = PAIR.replace("b = 0.1", "b = \"oops\"");
    let line = text.lines().position(|l| l.contains("oops")).unwrap() + 1;
    match ScenarioFile::parse(&text) {
        Err(Error::Parse { line: got, .. }) => assert_eq!(got, line),
        other => panic!("{other:?}"),
    }
    assert!(matches!(ScenarioFile::parse("mode = "), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn zero_gains_are_reported_infeasible() {
    let text = PAIR.replace("k1 = [[20.0]]", "k1 = [[0.0]]").replace("k2 = [[0.1]]", "k2 = [[0.0]]");
    let scn = Scenario::parse(&text).unwrap();
    let c = cmd_check(&scn, false).unwrap();
    assert!(c.report.q > 0.0);
    assert!(c.report.settling_bound.is_none());
    assert!(matches!(cmd_check(&scn, true), Err(Error::Infeasible { .. })));
    let run = cmd_run(&scn, None, false).unwrap();
    assert!(!run.summary.warnings.is_empty());
    assert!(matches!(cmd_run(&scn, None, true), Err(Error::Infeasible { .. })));
}

#[test]
fn zero_horizon_gives_one_row() {
    let scn = Scenario::parse(&PAIR.replace("horizon = 0.5", "horizon = 0.0")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cmd_run(&scn, Some(dir.path()), false).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(csv.lines().next().unwrap(), "t,x_1_1,x_2_1,u_1_1,u_2_1,e_norm,V,int_z2,int_w2");
}

#[test]
fn pair_settles_before_bound() {
    let scn = Scenario::parse(PAIR).unwrap();
    let out = cmd_run(&scn, None, false).unwrap();
    let s = out.summary;
    assert!(s.check.feasible);
    assert_eq!(s.bound_respected, Some(true), "{:?} vs {:?}", s.settling_time, s.check.report.settling_bound);
}

#[test]
fn sweeps() {
    let scn = Scenario::parse(PAIR).unwrap();
    let empty = cmd_sweep(&scn, SweepParam::D, &Grid(vec![]), true, None).unwrap();
    assert!(empty.rows.is_empty());
    let g: Grid = "1.01:3:5".parse().unwrap();
    let sweep = cmd_sweep(&scn, SweepParam::Gamma, &g, false, None).unwrap();
    let star = sweep.gamma_star.unwrap();
    assert!(star > 1.0);
    for row in &sweep.rows {
        assert_eq!(row.feasible, row.value >= star, "{row:?} vs {star}");
    }
    let qs: Vec<f64> = sweep.rows.iter().map(|r| r.q).collect();
    assert!(qs.windows(2).all(|w| w[1] <= w[0]));
    assert!(matches!(
        cmd_sweep(&scn, SweepParam::NoisePower, &Grid(vec![0.1]), false, None),
        Err(Error::Validation(_))
    ));
}

fn noisy_pair() -> String {
    PAIR.replace("mode = \"full-state\"", "mode = \"stochastic\"")
        .replace("gamma = 1.5\n", "")
        .replace("[disturbance]\ngain = \"friction\"\nw = 1.0\n", "[noise]\npower = 0.1\n")
        .replace("horizon = 0.5", "horizon = 0.2\nseed = 5\nruns = 4")
}

#[test]
fn stochastic_runs_are_reproducible() {
    let scn = Scenario::parse(&noisy_pair()).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_run(&scn, Some(a.path()), false).unwrap();
    cmd_run(&scn, Some(b.path()), false).unwrap();
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("trajectory.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn single_run_monte_carlo_is_the_path() {
    let scn = Scenario::parse(&noisy_pair()).unwrap();
    let mc = cmd_montecarlo(&scn, Some(1), None, None, false).unwrap();
    let path = cmd_run(&scn, None, false).unwrap().trajectory;
    assert_eq!(mc.stats.mean, path.e_norm);
    assert_eq!(mc.stats.q05, path.e_norm);
}

#[test]
fn zero_noise_band_collapses() {
    let scn = Scenario::parse(&noisy_pair().replace("power = 0.1", "power = 0.0")).unwrap();
    let mc = cmd_montecarlo(&scn, Some(4), None, None, false).unwrap();
    assert_eq!(mc.stats.q05, mc.stats.q95);
    let det = Scenario::parse(&noisy_pair().replace("power = 0.1", "power = 0.0")).unwrap();
    let path = cmd_run(&det, None, false).unwrap().trajectory;
    for (m, p) in mc.stats.mean.iter().zip(&path.e_norm) {
        assert!((m - p).abs() <= 1e-15 * p.abs().max(1.0));
    }
}

#[test]
fn energy_accumulators_converge_under_step_halving() {
    let scn = Scenario::load(&common::scenario_path("hinf_unicycle_4.scn")).unwrap();
    let coarse = cmd_run(&scn, None, false).unwrap().trajectory;
    let mut file = scn.file.clone();
    file.integration.step /= 2.0;
    let fine = cmd_run(&Scenario::build(file).unwrap(), None, false).unwrap().trajectory;
    for (c, f) in [
        (coarse.int_z2.last().unwrap(), fine.int_z2.last().unwrap()),
        (coarse.int_w2.last().unwrap(), fine.int_w2.last().unwrap()),
    ] {
        assert!((c - f).abs() <= 0.01 * f.abs(), "{c} vs {f}");
    }
}
