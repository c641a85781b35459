use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use serde::Serialize;

use super::schema::{rows_of, ResolvedGains, Rows, Scenario, SynthesisInfo};
use crate::control::GainSet;
use crate::criteria::{CriteriaReport, Structure, Target};
use crate::error::{Error, Result};
use crate::sim::{
    detect_settling, hinf_ratio, monte_carlo, run_scenario, settling_time, InitialFunction, MonteCarlo,
    Trajectory,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainsOut {
    pub k1: Rows,
    pub k2: Rows,
    pub k3: Option<Rows>,
    pub c: Option<Rows>,
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    pub gamma: Option<f64>,
    pub d: f64,
}

impl From<&GainSet> for GainsOut {
    fn from(g: &GainSet) -> Self {
        Self {
            k1: rows_of(&g.k1),
            k2: rows_of(&g.k2),
            k3: g.k3.as_ref().map(rows_of),
            c: g.c.as_ref().map(rows_of),
            alpha: g.alpha,
            a: g.a,
            b: g.b,
            gamma: g.gamma,
            d: g.d,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub target: Target,
    pub structure: Structure,
    pub feasible: bool,
    pub report: CriteriaReport,
    /// Criteria of the gains written in the file, before any search.
    pub fixed_report: CriteriaReport,
    pub synthesis: Option<SynthesisInfo>,
    pub gains: GainsOut,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    #[serde(flatten)]
    pub check: CheckSummary,
    pub settling_time: Option<f64>,
    pub settling_tol: f64,
    pub bound_respected: Option<bool>,
    pub final_e_norm: f64,
    /// `∫‖z‖² / ∫‖w‖²` of a run from zero initial error.
    pub hinf_ratio: Option<f64>,
    pub seed: Option<(u64, u64)>,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
}

pub struct RunOutcome {
    pub summary: RunSummary,
    pub trajectory: Trajectory,
    pub gains: GainSet,
}

fn check_summary(scn: &Scenario, resolved: &ResolvedGains) -> CheckSummary {
    CheckSummary {
        name: scn.file.name.clone(),
        target: scn.target(),
        structure: scn.structure(),
        feasible: resolved.report.feasible(),
        report: resolved.report.clone(),
        fixed_report: resolved.fixed.clone(),
        synthesis: resolved.synthesis.clone(),
        gains: GainsOut::from(&resolved.gains),
    }
}

fn require(strict: bool, report: &CriteriaReport) -> Result<()> {
    if strict && !report.feasible() {
        Err(Error::Infeasible { q: report.q })
    } else {
        Ok(())
    }
}

/// Evaluates (and, with a search space, synthesizes) gains.
pub fn cmd_check(scn: &Scenario, strict: bool) -> Result<CheckSummary> {
    let resolved = scn.resolve_gains()?;
    require(strict, &resolved.report)?;
    Ok(check_summary(scn, &resolved))
}

/// Initial state with zero error on `[−d, 0]`, same auxiliaries.
fn zero_error_initial(scn: &Scenario) -> Result<InitialFunction> {
    let cl = &scn.closed_loop;
    let n = cl.n();
    let x = match cl.reference_at(0.0) {
        Some((r, _)) if scn.structure() == Structure::LeaderFollower => {
            DVector::from_fn(cl.consensus_dim(), |k, _| r[k % n])
        }
        _ => DVector::zeros(cl.consensus_dim()),
    };
    let aux = scn.z0.rows(cl.consensus_dim(), scn.z0.len() - cl.consensus_dim()).into_owned();
    Ok(InitialFunction::Constant(cl.pack(&x, &aux)?))
}

/// Simulates the scenario; writes outputs when `out_dir` is given.
pub fn cmd_run(scn: &Scenario, out_dir: Option<&Path>, strict: bool) -> Result<RunOutcome> {
    let resolved = scn.resolve_gains()?;
    require(strict, &resolved.report)?;
    let mut warnings = Vec::new();
    if !resolved.report.feasible() {
        warnings.push(format!(
            "gains do not satisfy the criteria (q = {:.6e}); no settling bound applies",
            resolved.report.q
        ));
    }
    let cl = scn.with_gains(&resolved.gains)?;
    let settings = scn.settings();
    let traj = run_scenario(&cl, &settings, scn.initial_function())?;
    let tol = scn.file.criteria.settle_tol;
    let settling = detect_settling(&traj, tol);
    let bound = resolved.report.settling_bound;
    let ratio = if scn.target() == Target::Hinf && !cl.disturbance.w.is_zero() {
        let zero = run_scenario(&cl, &settings, zero_error_initial(scn)?)?;
        match hinf_ratio(&zero) {
            Ok(r) => Some(r),
            Err(Error::ZeroDisturbance) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    if settling.is_none() {
        warnings.push(format!("‖e‖ did not settle below {tol} within the horizon"));
    }
    let mut summary = RunSummary {
        check: check_summary(scn, &resolved),
        settling_time: settling,
        settling_tol: tol,
        bound_respected: match (settling, bound) {
            (Some(t), Some(b)) => Some(t <= b),
            _ => None,
        },
        final_e_norm: traj.e_norm.last().copied().unwrap_or(0.0),
        hinf_ratio: ratio,
        seed: traj.seed,
        warnings,
        files: Vec::new(),
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let files = [
            ("trajectory.csv", trajectory_csv(&traj, cl.agents(), cl.n())),
            ("scenario.scn", scn.file.echo()),
        ];
        for (name, body) in files {
            fs::write(dir.join(name), body)?;
            summary.files.push(name.into());
        }
        summary.files.push("summary.txt".into());
        summary.files.push("summary.json".into());
        fs::write(dir.join("summary.txt"), render_run(&summary))?;
        fs::write(dir.join("summary.json"), to_json(&summary))?;
    }
    Ok(RunOutcome {
        summary,
        trajectory: traj,
        gains: resolved.gains,
    })
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("summary serializes");
    s.push('\n');
    s
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// `t, x_i_k…, u_i_k…, e_norm, V, int_z2, int_w2` with 17 significant digits.
pub fn trajectory_csv(traj: &Trajectory, agents: usize, n: usize) -> String {
    let mut out = String::from("t");
    for prefix in ["x", "u"] {
        for i in 1..=agents {
            for k in 1..=n {
                write!(out, ",{prefix}_{i}_{k}").unwrap();
            }
        }
    }
    out.push_str(",e_norm,V,int_z2,int_w2\n");
    for k in 0..traj.len() {
        out.push_str(&num(traj.times[k]));
        for v in traj.states[k].iter().chain(traj.controls[k].iter()) {
            out.push(',');
            out.push_str(&num(*v));
        }
        for v in [traj.e_norm[k], traj.v[k], traj.int_z2[k], traj.int_w2[k]] {
            out.push(',');
            out.push_str(&num(v));
        }
        out.push('\n');
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "none".into())
}

fn matrix_line(m: &Rows) -> String {
    let rows: Vec<String> = m
        .iter()
        .map(|r| r.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "))
        .collect();
    format!("[[{}]]", rows.join("], ["))
}

pub fn render_check(c: &CheckSummary) -> String {
    let r = &c.report;
    let mut s = String::new();
    writeln!(s, "scenario: {}", c.name).unwrap();
    writeln!(s, "target: {:?}  structure: {:?}", c.target, c.structure).unwrap();
    if let Some(syn) = &c.synthesis {
        match syn.index {
            Some(i) => writeln!(
                s,
                "search: candidate {i} chosen ({} of {} feasible)",
                syn.feasible, syn.evaluated
            ),
            None => writeln!(
                s,
                "search: no feasible candidate among {} (smallest q = {:.6e}); using fixed gains",
                syn.evaluated, syn.best_q
            ),
        }
        .unwrap();
    }
    writeln!(s, "K1 = {}", matrix_line(&c.gains.k1)).unwrap();
    writeln!(s, "K2 = {}", matrix_line(&c.gains.k2)).unwrap();
    if let Some(k3) = &c.gains.k3 {
        writeln!(s, "K3 = {}", matrix_line(k3)).unwrap();
    }
    writeln!(
        s,
        "alpha = {}  a = {}  b = {}  gamma = {}  d = {}",
        c.gains.alpha,
        c.gains.a,
        c.gains.b,
        c.gains.gamma.map(|g| g.to_string()).unwrap_or_else(|| "none".into()),
        c.gains.d
    )
    .unwrap();
    writeln!(s, "q = {:.6e}  ({})", r.q, if r.rate.ok { "ok" } else { "violated" }).unwrap();
    writeln!(
        s,
        "delay LMI margin = {:.6e}  ({})",
        r.delay_lmi.margin,
        if r.delay_lmi.ok { "ok" } else { "violated" }
    )
    .unwrap();
    if let Some(db) = r.disturbance_bound {
        writeln!(
            s,
            "disturbance covering margin = {:.6e}  ({})",
            db.margin,
            if db.ok { "ok" } else { "violated" }
        )
        .unwrap();
    }
    writeln!(s, "V0 = {:.6e}", r.v0).unwrap();
    writeln!(s, "settling bound = {}", opt(r.settling_bound)).unwrap();
    writeln!(s, "feasible: {}", c.feasible).unwrap();
    s
}

pub fn render_run(r: &RunSummary) -> String {
    let mut s = render_check(&r.check);
    writeln!(s, "settling time (tol {}) = {}", r.settling_tol, opt(r.settling_time)).unwrap();
    if let Some(ok) = r.bound_respected {
        writeln!(s, "settled within bound: {ok}").unwrap();
    }
    writeln!(s, "final ‖e‖ = {:.6e}", r.final_e_norm).unwrap();
    if let Some(ratio) = r.hinf_ratio {
        writeln!(s, "disturbance ratio = {ratio:.6e}").unwrap();
    }
    if let Some((seed, stream)) = r.seed {
        writeln!(s, "seed = {seed}  stream = {stream}").unwrap();
    }
    for w in &r.warnings {
        writeln!(s, "warning: {w}").unwrap();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    D,
    A,
    B,
    Gamma,
    NoisePower,
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "d" => SweepParam::D,
            "a" => SweepParam::A,
            "b" => SweepParam::B,
            "gamma" => SweepParam::Gamma,
            "noise" | "noise-power" | "power" => SweepParam::NoisePower,
            _ => return Err(Error::Validation(format!("unknown sweep parameter {s:?}"))),
        })
    }
}

/// `start:stop:count` (inclusive, evenly spaced) or a comma-separated list.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

impl FromStr for Grid {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("bad grid {s:?}; expected start:stop:count or a list"));
        let s = s.trim();
        if s.is_empty() {
            return Ok(Grid(Vec::new()));
        }
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() == 3 {
            let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
            let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
            let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
            return Ok(Grid(match n {
                0 => Vec::new(),
                1 => vec![a],
                _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
            }));
        }
        if parts.len() != 1 {
            return Err(bad());
        }
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()
            .map(Grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub q: f64,
    pub feasible: bool,
    pub settling_bound: Option<f64>,
    pub settling_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
    /// Smallest feasible `γ` (bisection), for `γ` sweeps.
    pub gamma_star: Option<f64>,
}

/// Scenario with one parameter changed. Changing `d` rescales the delay
/// profile so its supremum keeps the same ratio to `d`.
fn perturbed(scn: &Scenario, gains: &GainSet, param: SweepParam, v: f64) -> Result<(Scenario, GainSet)> {
    let mut file = scn.file.clone();
    let mut g = gains.clone();
    match param {
        SweepParam::D => {
            let k = v / gains.d;
            file.delay = file.delay.scaled(k);
            file.gains.d = Some(v);
            g.d = v;
        }
        SweepParam::A => {
            file.gains.a = v;
            g.a = v;
        }
        SweepParam::B => {
            file.gains.b = v;
            g.b = v;
        }
        SweepParam::Gamma => {
            file.gains.gamma = Some(v);
            g.gamma = Some(v);
        }
        SweepParam::NoisePower => match &mut file.noise {
            Some(n) => n.power = v,
            None => return Err(Error::Validation("noise sweep needs a [noise] section".into())),
        },
    }
    Ok((Scenario::build(file)?, g))
}

fn gamma_feasible(scn: &Scenario, gains: &GainSet, gamma: f64) -> Result<bool> {
    let mut g = gains.clone();
    g.gamma = Some(gamma);
    Ok(scn.evaluate(&g)?.feasible())
}

/// Bisects for the smallest feasible `γ > 1`; `None` when even very large
/// `γ` stays infeasible.
pub fn gamma_star(scn: &Scenario, gains: &GainSet) -> Result<Option<f64>> {
    let mut hi = 2.0;
    while !gamma_feasible(scn, gains, hi)? {
        hi *= 2.0;
        if hi > 1e8 {
            return Ok(None);
        }
    }
    let mut lo = 1.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gamma_feasible(scn, gains, mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Re-evaluates the criteria (and optionally simulates) at every grid
/// value, holding the resolved gains fixed.
pub fn cmd_sweep(
    scn: &Scenario,
    param: SweepParam,
    grid: &Grid,
    simulate: bool,
    out_dir: Option<&Path>,
) -> Result<SweepResult> {
    if param == SweepParam::Gamma && scn.target() != Target::Hinf {
        return Err(Error::Validation("gamma sweeps need a robust scenario".into()));
    }
    let gains = scn.resolve_gains()?.gains;
    let mut rows = Vec::with_capacity(grid.0.len());
    for &v in &grid.0 {
        let (s, g) = perturbed(scn, &gains, param, v)?;
        let report = s.evaluate(&g)?;
        let settling_time = if simulate {
            let cl = s.with_gains(&g)?;
            let traj = run_scenario(&cl, &s.settings(), s.initial_function())?;
            detect_settling(&traj, s.file.criteria.settle_tol)
        } else {
            None
        };
        rows.push(SweepRow {
            value: v,
            q: report.q,
            feasible: report.feasible(),
            settling_bound: report.settling_bound,
            settling_time,
        });
    }
    let gamma_star = if param == SweepParam::Gamma {
        gamma_star(scn, &gains)?
    } else {
        None
    };
    let result = SweepResult { param, rows, gamma_star };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("sweep.csv"), sweep_csv(&result))?;
        fs::write(dir.join("sweep.json"), to_json(&result))?;
    }
    Ok(result)
}

pub fn sweep_csv(r: &SweepResult) -> String {
    let mut out = String::from("value,q,feasible,settling_bound,settling_time\n");
    let cell = |v: Option<f64>| v.map(num).unwrap_or_default();
    for row in &r.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            num(row.value),
            num(row.q),
            row.feasible,
            cell(row.settling_bound),
            cell(row.settling_time)
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloSummary {
    #[serde(flatten)]
    pub check: CheckSummary,
    pub runs: usize,
    pub root_seed: u64,
    /// Settling of the pathwise mean and 95th percentile of `‖e‖`.
    pub mean_settling_time: Option<f64>,
    pub q95_settling_time: Option<f64>,
    pub files: Vec<String>,
}

pub struct MonteCarloOutcome {
    pub summary: MonteCarloSummary,
    pub stats: MonteCarlo,
}

pub fn cmd_montecarlo(
    scn: &Scenario,
    runs: Option<usize>,
    seed: Option<u64>,
    out_dir: Option<&Path>,
    strict: bool,
) -> Result<MonteCarloOutcome> {
    let resolved = scn.resolve_gains()?;
    require(strict, &resolved.report)?;
    let cl = scn.with_gains(&resolved.gains)?;
    let runs = runs.unwrap_or(scn.file.integration.runs);
    let root_seed = seed.unwrap_or(scn.file.integration.seed);
    let stats = monte_carlo(&cl, &scn.settings(), scn.initial_function(), runs, root_seed)?;
    let tol = scn.file.criteria.settle_tol;
    let mut summary = MonteCarloSummary {
        check: check_summary(scn, &resolved),
        runs,
        root_seed,
        mean_settling_time: settling_time(&stats.times, &stats.mean, tol),
        q95_settling_time: settling_time(&stats.times, &stats.q95, tol),
        files: Vec::new(),
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let mut csv = String::from("t,mean,q05,q95\n");
        for k in 0..stats.times.len() {
            writeln!(
                csv,
                "{},{},{},{}",
                num(stats.times[k]),
                num(stats.mean[k]),
                num(stats.q05[k]),
                num(stats.q95[k])
            )
            .unwrap();
        }
        fs::write(dir.join("montecarlo.csv"), csv)?;
        summary.files = vec!["montecarlo.csv".into(), "summary.txt".into(), "summary.json".into()];
        let mut text = render_check(&summary.check);
        writeln!(text, "runs = {runs}  root seed = {root_seed}").unwrap();
        writeln!(text, "mean settling time = {}", opt(summary.mean_settling_time)).unwrap();
        writeln!(text, "q95 settling time = {}", opt(summary.q95_settling_time)).unwrap();
        fs::write(dir.join("summary.txt"), text)?;
        fs::write(dir.join("summary.json"), to_json(&summary))?;
        fs::write(dir.join("scenario.scn"), scn.file.echo())?;
    }
    Ok(MonteCarloOutcome { summary, stats })
}

/// `--out`, else `$SIM_OUT_DIR`, else `./out`.
pub fn output_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os("SIM_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}
