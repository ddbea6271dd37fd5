//! Receding-horizon closed loop and its diagnostics.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::{build_quadratic, build_tailored, StageCost};
use crate::error::{check_len, Error, Result};
use crate::liealg::build_filtration;
use crate::models::{StateVector, VehicleModel};
use crate::ocp::{shift_warm_start, solve, OcpProblem, OcpSolution, SolveStatus, SolverSettings};
use crate::privcoord::PrivilegedChart;

/// A value function below `FLOOR_RATIO · V(0)` counts as converged.
pub const FLOOR_RATIO: f64 = 1e-12;
/// Relative band within which a value function counts as stagnant.
pub const PLATEAU_BAND: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum CostSpec {
    /// Tailored cost in privileged coordinates. `scale: None` normalizes the
    /// cost to one at the initial state.
    Tailored {
        q: Vec<f64>,
        r: Vec<f64>,
        cancel_gcd: bool,
        scale: Option<f64>,
    },
    Quadratic { q: DMatrix<f64>, r: DMatrix<f64> },
}

impl CostSpec {
    pub fn unit_tailored(n_x: usize, n_u: usize, cancel_gcd: bool) -> Self {
        CostSpec::Tailored { q: vec![1.0; n_x], r: vec![1.0; n_u], cancel_gcd, scale: None }
    }

    pub fn unit_quadratic(n_x: usize, n_u: usize) -> Self {
        CostSpec::Quadratic { q: DMatrix::identity(n_x, n_x), r: DMatrix::identity(n_u, n_u) }
    }

    pub fn is_tailored(&self) -> bool {
        matches!(self, CostSpec::Tailored { .. })
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub model: VehicleModel,
    pub setpoint: StateVector,
    pub x0: StateVector,
    pub cost: CostSpec,
    pub dt: f64,
    pub horizon: usize,
    /// Simulated time in seconds, a multiple of `dt`.
    pub duration: f64,
    pub solver: SolverSettings,
    pub seed: u64,
}

impl Scenario {
    /// Unit-weight scenario with the default solver settings.
    pub fn new(model: VehicleModel, setpoint: StateVector, x0: StateVector, cost: CostSpec, dt: f64, horizon: usize, duration: f64) -> Self {
        Scenario { model, setpoint, x0, cost, dt, horizon, duration, solver: SolverSettings::default(), seed: 0 }
    }

    /// Number of sampling intervals.
    pub fn steps(&self) -> Result<usize> {
        let ratio = self.duration / self.dt;
        let n = ratio.round();
        if !(self.dt > 0.0) || !ratio.is_finite() || n < 0.0 || (ratio - n).abs() > 1e-9 * ratio.abs().max(1.0) {
            return Err(Error::InvalidScenario(format!(
                "duration {} is not a nonnegative multiple of the sampling time {}",
                self.duration, self.dt
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.model.state_dim();
        check_len("setpoint", n, self.setpoint.len())?;
        check_len("initial state", n, self.x0.len())?;
        if self.horizon == 0 {
            return Err(Error::InvalidScenario("horizon must be at least 1".into()));
        }
        if self.setpoint.iter().chain(self.x0.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidScenario("states must be finite".into()));
        }
        self.steps()?;
        Ok(())
    }

    /// The stage cost, with its chart at the setpoint.
    pub fn build_cost(&self) -> Result<StageCost> {
        let n = self.model.state_dim();
        let m = self.model.input_dim();
        match &self.cost {
            CostSpec::Tailored { q, r, cancel_gcd, scale } => {
                let f = build_filtration(&self.model, &self.setpoint, n)?;
                let chart = Arc::new(PrivilegedChart::new(&f, &self.model)?);
                let cost = build_tailored(chart, q, r, *cancel_gcd, scale.unwrap_or(1.0))?;
                match scale {
                    Some(_) => Ok(cost),
                    None => cost.with_auto_scale(&self.x0),
                }
            }
            CostSpec::Quadratic { q, r } => {
                if q.shape() != (n, n) || r.shape() != (m, m) {
                    return Err(Error::DimensionMismatch {
                        what: "quadratic weights",
                        expected: n * n + m * m,
                        got: q.len() + r.len(),
                    });
                }
                build_quadratic(q.clone(), r.clone(), &self.setpoint)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub iterations: usize,
    pub status: SolveStatus,
    pub residual: f64,
}

/// One row per sampling instant `t_k = k·dt`, `k = 0..=N`. The input in row
/// `k` is the first block of the OCP solved at `t_k`; rows below `N` were
/// applied to the plant.
#[derive(Clone, Debug)]
pub struct ClosedLoopTrace {
    pub times: Vec<f64>,
    /// Plant states in original coordinates, one per row.
    pub states: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
    /// Chart states handed to the OCP.
    pub chart_states: DMatrix<f64>,
    pub values: Vec<f64>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Set when the loop stopped before the final instant.
    pub aborted: Option<String>,
}

impl ClosedLoopTrace {
    fn empty(n: usize, m: usize) -> Self {
        ClosedLoopTrace {
            times: Vec::new(),
            states: DMatrix::zeros(0, n),
            inputs: DMatrix::zeros(0, m),
            chart_states: DMatrix::zeros(0, n),
            values: Vec::new(),
            diagnostics: Vec::new(),
            aborted: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<DVector<f64>> {
        (!self.is_empty()).then(|| self.states.row(self.len() - 1).transpose())
    }

    pub fn total_iterations(&self) -> usize {
        self.diagnostics.iter().map(|d| d.iterations).sum()
    }

    fn push(&mut self, t: f64, x: &DVector<f64>, z: &DVector<f64>, sol: &OcpSolution) {
        let k = self.len();
        self.times.push(t);
        self.states = std::mem::replace(&mut self.states, DMatrix::zeros(0, 0)).insert_row(k, 0.0);
        self.states.row_mut(k).copy_from(&x.transpose());
        self.chart_states = std::mem::replace(&mut self.chart_states, DMatrix::zeros(0, 0)).insert_row(k, 0.0);
        self.chart_states.row_mut(k).copy_from(&z.transpose());
        self.inputs = std::mem::replace(&mut self.inputs, DMatrix::zeros(0, 0)).insert_row(k, 0.0);
        self.inputs.row_mut(k).copy_from(&sol.inputs.row(0));
        self.values.push(sol.objective);
        self.diagnostics.push(StepDiagnostics { iterations: sol.iterations, status: sol.status, residual: sol.residual });
    }

    /// Writes `t,x1..xn,u1..um,V,iters,status`, one row per instant, with
    /// shortest round-trip float formatting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.states.ncols()).map(|i| format!("x{i}")));
        header.extend((1..=self.inputs.ncols()).map(|i| format!("u{i}")));
        header.extend(["V", "iters", "status"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![format!("{}", self.times[k])];
            row.extend(self.states.row(k).iter().map(|v| format!("{v}")));
            row.extend(self.inputs.row(k).iter().map(|v| format!("{v}")));
            row.push(format!("{}", self.values[k]));
            row.push(self.diagnostics[k].iterations.to_string());
            row.push(self.diagnostics[k].status.as_str().to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// One zero-order-hold interval of the plant, RK4 with `substeps` steps.
pub fn plant_step(model: &VehicleModel, x: &DVector<f64>, u: &DVector<f64>, dt: f64, substeps: usize) -> Result<DVector<f64>> {
    let h = dt / substeps as f64;
    let mut x = x.clone();
    for _ in 0..substeps {
        let k1 = model.dynamics(&x, u)?;
        let k2 = model.dynamics(&(&x + &k1 * (h / 2.0)), u)?;
        let k3 = model.dynamics(&(&x + &k2 * (h / 2.0)), u)?;
        let k4 = model.dynamics(&(&x + &k3 * h), u)?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(x)
}

/// Runs the receding-horizon loop of `scenario` on the nominal plant.
///
/// The first OCP is solved cold (with restarts where they apply), later ones
/// from the shifted previous solution when warm starting is on. A solver
/// hitting its iteration limit is logged and the loop continues; a diverging
/// rollout ends the loop and the partial trace is returned with `aborted`
/// set.
pub fn run_closed_loop(scenario: &Scenario) -> Result<ClosedLoopTrace> {
    scenario.validate()?;
    let steps = scenario.steps()?;
    let cost = scenario.build_cost()?;
    let chart = cost.chart().clone();
    let model = &scenario.model;
    let mut settings = scenario.solver.clone();
    settings.seed = scenario.seed;
    let mut trace = ClosedLoopTrace::empty(model.state_dim(), model.input_dim());
    let mut x = scenario.x0.clone();
    let mut previous: Option<OcpSolution> = None;
    for k in 0..=steps {
        let t = k as f64 * scenario.dt;
        let z = match chart.forward(&x) {
            Ok(z) if z.iter().all(|v| v.is_finite()) => z,
            _ => {
                trace.aborted = Some(format!("state left the chart domain at t = {t}"));
                return Ok(trace);
            }
        };
        let problem = OcpProblem::new(model, cost.clone(), scenario.dt, scenario.horizon, z.clone(), settings.substeps)?;
        let guess = match (&previous, settings.warm_start) {
            (Some(p), true) => Some(shift_warm_start(p)),
            _ => None,
        };
        let sol = match solve(&problem, guess.as_ref(), &settings) {
            Ok(sol) => sol,
            Err(e) => {
                trace.aborted = Some(format!("solver failed at t = {t}: {e}"));
                return Ok(trace);
            }
        };
        trace.push(t, &x, &z, &sol);
        if k < steps {
            let u = sol.inputs.row(0).transpose();
            match plant_step(model, &x, &u, scenario.dt, settings.substeps) {
                Ok(next) if next.iter().all(|v| v.is_finite()) => x = next,
                _ => {
                    trace.aborted = Some(format!("{}", Error::RolloutDivergence(k)));
                    return Ok(trace);
                }
            }
        }
        previous = Some(sol);
    }
    Ok(trace)
}

/// Whether the trace never leaves its initial state by more than `tol` in
/// the max norm.
pub fn stationarity_check(trace: &ClosedLoopTrace, tol: f64) -> bool {
    max_deviation(trace) <= tol
}

/// `max_t ‖x(t) − x(0)‖_∞`.
pub fn max_deviation(trace: &ClosedLoopTrace) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    let x0 = trace.states.row(0);
    (0..trace.len()).map(|k| (trace.states.row(k) - x0).amax()).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueReport {
    /// Largest consecutive increase `V_{k+1} − V_k`, zero if none.
    pub max_increase: f64,
    /// Largest `(V_{k+1} − V_k) / V_k` among steps before the plateau.
    pub max_relative_increase: f64,
    /// Smallest logged value.
    pub floor: f64,
    /// `V_last / V_0`.
    pub decrease_ratio: f64,
    /// First index from which the value is at the numerical floor or stays
    /// within a relative band, if any.
    pub plateau_start: Option<usize>,
    /// Whether the floor `FLOOR_RATIO · V_0` was reached.
    pub reached_floor: bool,
}

impl ValueReport {
    pub fn monotone_until_plateau(&self, rel_tol: f64) -> bool {
        self.max_relative_increase <= rel_tol
    }
}

/// Monotonicity statistics of the logged value function.
pub fn value_function_report(values: &[f64]) -> Result<ValueReport> {
    if values.len() < 2 {
        return Err(Error::InvalidParameter("a value report needs at least two samples".into()));
    }
    let v0 = values[0];
    let floor_level = FLOOR_RATIO * v0.abs();
    let floor_at = values.iter().position(|v| *v <= floor_level);
    let stagnant_at = (0..values.len() - 1).find(|&k| {
        let vk = values[k];
        values[k..].iter().all(|v| (v - vk).abs() <= PLATEAU_BAND * vk.abs())
    });
    let plateau_start = match (floor_at, stagnant_at) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    let end = plateau_start.unwrap_or(values.len() - 1);
    let increases = values.windows(2).map(|w| (w[1] - w[0]).max(0.0));
    let max_increase = increases.fold(0.0, f64::max);
    let max_relative_increase = values[..=end]
        .windows(2)
        .map(|w| if w[0] > 0.0 { ((w[1] - w[0]) / w[0]).max(0.0) } else if w[1] > w[0] { f64::INFINITY } else { 0.0 })
        .fold(0.0, f64::max);
    Ok(ValueReport {
        max_increase,
        max_relative_increase,
        floor: values.iter().copied().fold(f64::INFINITY, f64::min),
        decrease_ratio: if v0 != 0.0 { values[values.len() - 1] / v0 } else { 0.0 },
        plateau_start,
        reached_floor: floor_at.is_some(),
    })
}

fn is_builtin(model: &VehicleModel) -> bool {
    matches!(model.name().as_str(), "unicycle" | "kinematic_car" | "one_trailer" | "two_trailer")
}

/// `G(x)ᵀ Q x`, whose vanishing makes zero input optimal for a quadratic
/// cost around the origin.
pub fn insufficiency_residual(model: &VehicleModel, q: &DMatrix<f64>, x: &StateVector) -> DVector<f64> {
    model.input_matrix(x).transpose() * (q * x)
}

/// A nonzero `x0` with `‖x0‖ ≤ ε` and `‖x0ᵀ Q G(x0)‖ < 1e-12`.
///
/// Built-in vehicles with `Q = I` get `(0, ε/2, 0, …, 0)`. Otherwise the
/// equations are solved by damped Gauss-Newton on the sphere of radius
/// `ε/2`, from up to 100 seeded starts.
pub fn find_insufficiency_state(model: &VehicleModel, q: &DMatrix<f64>, eps: f64) -> Result<StateVector> {
    let n = model.state_dim();
    if q.shape() != (n, n) {
        return Err(Error::DimensionMismatch { what: "state weight", expected: n * n, got: q.len() });
    }
    if (q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) || q.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("Q"));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {eps}")));
    }
    let radius = eps / 2.0;
    let ok = |x: &StateVector| insufficiency_residual(model, q, x).norm() < 1e-12;
    if is_builtin(model) && (q - DMatrix::identity(n, n)).amax() == 0.0 {
        let mut x = DVector::zeros(n);
        x[1] = radius;
        if ok(&x) {
            return Ok(x);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x1e33a);
    const RESTARTS: usize = 100;
    for _ in 0..RESTARTS {
        let mut x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        if x.norm() < 1e-3 {
            continue;
        }
        x *= radius / x.norm();
        if let Some(x) = sphere_newton(model, q, x, radius) {
            if ok(&x) {
                return Ok(x);
            }
        }
    }
    Err(Error::NoSolutionFound(RESTARTS))
}

fn residual_jacobian(model: &VehicleModel, q: &DMatrix<f64>, x: &StateVector) -> DMatrix<f64> {
    let g = model.input_matrix(x);
    let qx = q * x;
    let mut jac = g.transpose() * q;
    for i in 0..model.input_dim() {
        let ji = model.field_jacobian(i, x);
        let row = qx.transpose() * ji;
        let mut r = jac.row_mut(i);
        r += row;
    }
    jac
}

fn sphere_newton(model: &VehicleModel, q: &DMatrix<f64>, mut x: StateVector, radius: f64) -> Option<StateVector> {
    let n = x.len();
    let mut lambda = 1e-3;
    let mut f = insufficiency_residual(model, q, &x);
    for _ in 0..200 {
        if f.norm() < 1e-14 {
            return Some(x);
        }
        let unit = &x / x.norm();
        let proj = DMatrix::identity(n, n) - &unit * unit.transpose();
        let j = residual_jacobian(model, q, &x) * &proj;
        let lhs = j.transpose() * &j + DMatrix::identity(n, n) * lambda;
        let step = lhs.lu().solve(&(-(j.transpose() * &f)))?;
        let step = &proj * step;
        let mut trial = &x + step;
        trial *= radius / trial.norm();
        let ft = insufficiency_residual(model, q, &trial);
        if ft.norm() < f.norm() {
            x = trial;
            f = ft;
            lambda = (lambda * 0.3).max(1e-12);
        } else {
            lambda *= 10.0;
            if lambda > 1e8 {
                break;
            }
        }
    }
    (f.norm() < 1e-12).then_some(x)
}
