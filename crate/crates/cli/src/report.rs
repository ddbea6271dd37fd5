//! Text reports and file output for the subcommands.

use std::fmt::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use nhmpc_core::cost::tailored_exponents;
use nhmpc_core::liealg::build_filtration;
use nhmpc_core::mpc::{max_deviation, run_closed_loop, stationarity_check, value_function_report, ClosedLoopTrace, Scenario};
use nhmpc_core::ocp::SolveStatus;
use nhmpc_core::privcoord::{extract_homogeneous_approx, verify_homogeneity, ChartedSystem, PrivilegedChart};

use crate::config::{CostKind, ScenarioConfig};
use crate::svg::{figure, Series};
use crate::CliError;

/// Final error below which a run counts as converged.
pub const CONVERGED_TOL: f64 = 1e-3;
/// Largest excursion from the initial state for a stationary run.
pub const STATIONARY_TOL: f64 = 1e-6;

fn tuple<T: std::fmt::Display>(v: impl IntoIterator<Item = T>) -> String {
    let s: Vec<String> = v.into_iter().map(|x| x.to_string()).collect();
    format!("({})", s.join(", "))
}

pub fn analyze(cfg: &ScenarioConfig) -> Result<String, CliError> {
    let model = cfg.model()?;
    let n = model.state_dim();
    let d = cfg.setpoint(n)?;
    let f = build_filtration(&model, &d, n)?;
    let chart = Arc::new(PrivilegedChart::new(&f, &model)?);
    let approx = extract_homogeneous_approx(&ChartedSystem::new(model.clone(), chart.clone())?)?;
    let mut out = String::new();
    let params: Vec<String> = model.params().iter().map(|(k, v)| format!("{k} = {v}")).collect();
    let _ = writeln!(out, "vehicle: {} {}", model.name(), tuple(params));
    let _ = writeln!(out, "setpoint: {}", tuple(d.iter()));
    let _ = writeln!(out, "growth vector: {}", tuple(&f.growth));
    let _ = writeln!(out, "weights: {}", tuple(&f.weights));
    let _ = writeln!(out, "degree: {}", f.degree);
    let _ = writeln!(out, "adapted frame at the setpoint:");
    for (j, w) in f.words.iter().enumerate() {
        let _ = writeln!(out, "  {w} = {}", tuple(f.frame.column(j).iter()));
    }
    let _ = writeln!(out, "privileged coordinates:");
    for line in chart.describe().lines() {
        let _ = writeln!(out, "  {line}");
    }
    let _ = writeln!(out, "homogeneous approximation:");
    for line in approx.describe().lines() {
        let _ = writeln!(out, "  {line}");
    }
    let _ = writeln!(out, "coefficients (field component exponents value):");
    for line in approx.coefficient_table().lines() {
        let _ = writeln!(out, "  {line}");
    }
    let _ = writeln!(out, "homogeneity residual: {:e}", verify_homogeneity(&approx));
    let s = vec![1; model.input_dim()];
    let (e, fu, deg) = tailored_exponents(&f.weights, &s, cfg.cost.cancel_gcd)?;
    let _ = writeln!(
        out,
        "tailored exponents: state {}, input {}, degree {deg} (cancel_gcd = {})",
        tuple(e),
        tuple(fu),
        cfg.cost.cancel_gcd
    );
    Ok(out)
}

pub struct RunOutput {
    pub scenario: Scenario,
    pub trace: ClosedLoopTrace,
    pub summary: String,
    pub aborted: Option<String>,
}

fn verdict(sc: &Scenario, tr: &ClosedLoopTrace) -> &'static str {
    if tr.len() < 2 {
        return "single instant";
    }
    let last = tr.final_state().expect("non-empty trace");
    if (last - &sc.setpoint).amax() < CONVERGED_TOL {
        "converged"
    } else if stationarity_check(tr, STATIONARY_TOL) {
        "stationary"
    } else {
        "not converged"
    }
}

fn status_counts(tr: &ClosedLoopTrace) -> String {
    let all = [SolveStatus::Converged, SolveStatus::Stalled, SolveStatus::MaxIter, SolveStatus::InfeasibleGuess];
    let parts: Vec<String> = all
        .iter()
        .map(|s| (s, tr.diagnostics.iter().filter(|d| d.status == *s).count()))
        .filter(|(_, c)| *c > 0)
        .map(|(s, c)| format!("{} {c}", s.as_str()))
        .collect();
    parts.join(", ")
}

fn summarize(name: &str, cfg: &ScenarioConfig, sc: &Scenario, tr: &ClosedLoopTrace) -> String {
    let mut out = String::new();
    let kind = match cfg.cost.kind {
        CostKind::Tailored => "tailored",
        CostKind::Quadratic => "quadratic",
    };
    let _ = writeln!(
        out,
        "scenario {name}: {}, {kind} cost, H = {}, dt = {}, duration = {}",
        sc.model.name(),
        sc.horizon,
        sc.dt,
        sc.duration
    );
    let _ = writeln!(out, "initial state: {}", tuple(sc.x0.iter()));
    if let Some(x) = tr.final_state() {
        let t = tr.times[tr.len() - 1];
        let dev: Vec<String> = (&x - &sc.setpoint).iter().enumerate().map(|(i, v)| format!("x{} {:.3e}", i + 1, v.abs())).collect();
        let _ = writeln!(out, "final |x - d| at t = {t}: {}", dev.join(", "));
        let _ = writeln!(out, "max deviation from x0: {:.3e}", max_deviation(tr));
    }
    if let Ok(r) = value_function_report(&tr.values) {
        let _ = writeln!(out, "value function: V(0) = {:.6e}, V(T) = {:.6e}", tr.values[0], tr.values[tr.len() - 1]);
        let plateau = match r.plateau_start {
            Some(k) if r.reached_floor => format!("floor from t = {}", tr.times[k]),
            Some(k) => format!("stagnant from t = {}", tr.times[k]),
            None => "none".into(),
        };
        let _ = writeln!(out, "max relative increase before plateau: {:.3e}, plateau: {plateau}", r.max_relative_increase);
    }
    let _ = writeln!(out, "solver: {} iterations; {}", tr.total_iterations(), status_counts(tr));
    if let Some(msg) = &tr.aborted {
        let _ = writeln!(out, "aborted: {msg}");
    }
    let _ = writeln!(out, "verdict: {}", verdict(sc, tr));
    out
}

fn write_outputs(dir: &Path, name: &str, tr: &ClosedLoopTrace, summary: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)?;
    let mut csv = Vec::new();
    tr.write_csv(&mut csv)?;
    std::fs::write(dir.join(format!("{name}.csv")), csv)?;
    std::fs::write(dir.join(format!("{name}_summary.txt")), summary)?;
    Ok(dir.join(format!("{name}.svg")))
}

fn simulate(cfg: &ScenarioConfig, name: &str) -> Result<RunOutput, CliError> {
    let sc = cfg.scenario()?;
    let trace = run_closed_loop(&sc)?;
    let summary = summarize(name, cfg, &sc, &trace);
    let aborted = trace.aborted.clone();
    Ok(RunOutput { scenario: sc, trace, summary, aborted })
}

pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput, CliError> {
    let name = cfg.output.name.as_str();
    let out = simulate(cfg, name)?;
    let svg_path = write_outputs(Path::new(&cfg.output.dir), name, &out.trace, &out.summary)?;
    if cfg.output.svg && out.trace.len() > 1 {
        let s = Series { label: name, model: &out.scenario.model, trace: &out.trace };
        std::fs::write(svg_path, figure(&[s]))?;
    }
    Ok(out)
}

pub fn compare(a: &ScenarioConfig, b: &ScenarioConfig) -> Result<String, CliError> {
    let (ma, mb) = (a.model()?, b.model()?);
    if ma.name() != mb.name() || ma.params() != mb.params() {
        return Err(CliError::Config(format!("compare needs the same vehicle, got {} and {}", ma.name(), mb.name())));
    }
    let (xa, xb) = (a.initial_state(&ma)?, b.initial_state(&mb)?);
    if xa != xb {
        return Err(CliError::Config("compare needs the same initial state".into()));
    }
    let (na, nb) = if a.output.name == b.output.name {
        (format!("{}_a", a.output.name), format!("{}_b", b.output.name))
    } else {
        (a.output.name.clone(), b.output.name.clone())
    };
    let (ra, rb) = std::thread::scope(|s| {
        let ha = s.spawn(|| simulate(a, &na));
        let hb = s.spawn(|| simulate(b, &nb));
        (ha.join().expect("scenario thread"), hb.join().expect("scenario thread"))
    });
    let (ra, rb) = (ra?, rb?);
    let dir = Path::new(&a.output.dir);
    write_outputs(dir, &na, &ra.trace, &ra.summary)?;
    write_outputs(Path::new(&b.output.dir), &nb, &rb.trace, &rb.summary)?;

    let mut out = String::new();
    let _ = writeln!(out, "{:<28}{:>18}{:>18}", "", na, nb);
    let row = |out: &mut String, label: &str, va: String, vb: String| {
        let _ = writeln!(out, "{label:<28}{va:>18}{vb:>18}");
    };
    let kind = |c: &ScenarioConfig| match c.cost.kind {
        CostKind::Tailored => "tailored".to_string(),
        CostKind::Quadratic => "quadratic".to_string(),
    };
    row(&mut out, "cost", kind(a), kind(b));
    row(&mut out, "horizon", a.horizon.steps.to_string(), b.horizon.steps.to_string());
    let final_err = |r: &RunOutput| r.trace.final_state().map(|x| x - &r.scenario.setpoint).unwrap_or_else(|| DVector::zeros(0));
    let (ea, eb) = (final_err(&ra), final_err(&rb));
    for i in 0..ea.len().min(eb.len()) {
        row(&mut out, &format!("final |x{} - d{}|", i + 1, i + 1), format!("{:.3e}", ea[i].abs()), format!("{:.3e}", eb[i].abs()));
    }
    let v = |r: &RunOutput, last: bool| {
        let vs = &r.trace.values;
        format!("{:.3e}", if last { vs[vs.len() - 1] } else { vs[0] })
    };
    row(&mut out, "V(0)", v(&ra, false), v(&rb, false));
    row(&mut out, "V(T)", v(&ra, true), v(&rb, true));
    row(&mut out, "solver iterations", ra.trace.total_iterations().to_string(), rb.trace.total_iterations().to_string());
    row(&mut out, "verdict", verdict(&ra.scenario, &ra.trace).into(), verdict(&rb.scenario, &rb.trace).into());
    let diff = if ra.trace.states.shape() == rb.trace.states.shape() {
        format!("{:e}", (&ra.trace.states - &rb.trace.states).amax())
    } else {
        "traces differ in length".into()
    };
    let _ = writeln!(out, "max state difference: {diff}");

    if (a.output.svg || b.output.svg) && ra.trace.len() > 1 && rb.trace.len() > 1 {
        let series = [
            Series { label: &na, model: &ra.scenario.model, trace: &ra.trace },
            Series { label: &nb, model: &rb.scenario.model, trace: &rb.trace },
        ];
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{na}_vs_{nb}.svg")), figure(&series))?;
    }
    Ok(out)
}
