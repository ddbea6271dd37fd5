//! Finite-horizon optimal control by single shooting.
//!
//! Inputs are held constant over each sampling interval and the exact
//! charted dynamics are integrated by classical RK4 with a fixed number of
//! substeps. The objective `δt Σ_{k<H} ℓ(z_k, u_k)` is differentiated by
//! reverse propagation through the integrator.

pub mod solver;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::StageCost;
use crate::error::{check_len, Error, Result};
use crate::models::VehicleModel;
use crate::privcoord::{ChartWorkspace, ChartedSystem};
use solver::{minimize_box, MinimizeSettings, Objective, Termination};

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    pub max_iter: usize,
    pub tol: f64,
    /// Random restarts used when zero inputs are a stationary point.
    pub restarts: usize,
    pub seed: u64,
    pub substeps: usize,
    pub warm_start: bool,
    pub memory: usize,
    pub nonmonotone_window: usize,
    pub pg_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iter: 2000,
            tol: 1e-8,
            restarts: 8,
            seed: 0,
            substeps: 4,
            warm_start: true,
            memory: 10,
            nonmonotone_window: 5,
            pg_iters: 20,
        }
    }
}

impl SolverSettings {
    fn minimize_settings(&self) -> MinimizeSettings {
        MinimizeSettings {
            max_iter: self.max_iter,
            tol: self.tol,
            memory: self.memory,
            nonmonotone_window: self.nonmonotone_window,
            pg_iters: self.pg_iters,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Stalled,
    InfeasibleGuess,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::Stalled => "stalled",
            SolveStatus::InfeasibleGuess => "infeasible_guess",
        }
    }
}

#[derive(Clone, Debug)]
pub struct OcpProblem {
    pub system: ChartedSystem,
    pub cost: StageCost,
    pub dt: f64,
    pub horizon: usize,
    pub input_bounds: Vec<(f64, f64)>,
    pub z0: DVector<f64>,
    pub substeps: usize,
}

#[derive(Clone, Debug)]
pub struct OcpSolution {
    /// `H × n_u`, row `k` held over `[kδt, (k+1)δt)`.
    pub inputs: DMatrix<f64>,
    /// `(H+1) × n_x` predicted chart states.
    pub states: DMatrix<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub residual: f64,
    pub status: SolveStatus,
}

impl OcpProblem {
    /// The OCP for `model` and `cost`, in the cost's chart, with the model's
    /// input bounds.
    pub fn new(model: &VehicleModel, cost: StageCost, dt: f64, horizon: usize, z0: DVector<f64>, substeps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("sampling time must be positive, got {dt}")));
        }
        if horizon == 0 || substeps == 0 {
            return Err(Error::InvalidParameter("horizon and substeps must be at least 1".into()));
        }
        check_len("initial chart state", model.state_dim(), z0.len())?;
        check_len("cost inputs", model.input_dim(), cost.input_dim())?;
        let system = ChartedSystem::new(model.clone(), cost.chart().clone())?;
        Ok(OcpProblem {
            system,
            cost,
            dt,
            horizon,
            input_bounds: model.input_bounds().to_vec(),
            z0,
            substeps,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.system.input_dim()
    }

    fn check_inputs(&self, inputs: &DMatrix<f64>) -> Result<()> {
        check_len("input rows", self.horizon, inputs.nrows())?;
        check_len("input columns", self.input_dim(), inputs.ncols())
    }

    fn flatten(&self, inputs: &DMatrix<f64>) -> Vec<f64> {
        let m = self.input_dim();
        (0..self.horizon * m).map(|i| inputs[(i / m, i % m)]).collect()
    }

    fn unflatten(&self, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.horizon, self.input_dim(), v)
    }

    fn bounds_flat(&self) -> (Vec<f64>, Vec<f64>) {
        let lo = (0..self.horizon).flat_map(|_| self.input_bounds.iter().map(|b| b.0)).collect();
        let hi = (0..self.horizon).flat_map(|_| self.input_bounds.iter().map(|b| b.1)).collect();
        (lo, hi)
    }
}

/// Integration scratch, with stage states kept for the reverse sweep.
struct Shooter<'a> {
    p: &'a OcpProblem,
    ws: ChartWorkspace,
    g: DMatrix<f64>,
    jacs: Vec<DMatrix<f64>>,
    // stage states, laid out [step][substep][stage][component]
    stages: Vec<f64>,
    states: Vec<f64>,
    // scratch vectors
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    scale: f64,
}

impl<'a> Shooter<'a> {
    fn new(p: &'a OcpProblem) -> Self {
        let n = p.state_dim();
        let m = p.input_dim();
        Shooter {
            p,
            ws: p.system.workspace(),
            g: DMatrix::zeros(n, m),
            jacs: vec![DMatrix::zeros(n, n); m],
            stages: vec![0.0; p.horizon * p.substeps * 4 * n],
            states: vec![0.0; (p.horizon + 1) * n],
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            scale: 1.0,
        }
    }

    fn field(&mut self, z: &[f64], u: &[f64], out_k: usize) {
        self.p.system.input_matrix_into(z, &mut self.ws, &mut self.g);
        let n = z.len();
        for j in 0..n {
            let mut s = 0.0;
            for (i, ui) in u.iter().enumerate() {
                s += self.g[(j, i)] * ui;
            }
            self.k[out_k][j] = s;
        }
    }

    /// Forward sweep. Returns the objective and fills `states`/`stages`.
    fn rollout(&mut self, u: &[f64]) -> Result<f64> {
        let p = self.p;
        let n = p.state_dim();
        let m = p.input_dim();
        let h = p.dt / p.substeps as f64;
        self.states[..n].copy_from_slice(p.z0.as_slice());
        let mut total = 0.0;
        let mut z = p.z0.as_slice().to_vec();
        for step in 0..p.horizon {
            let uk = &u[step * m..(step + 1) * m];
            total += p.cost.eval_local(&z, uk);
            for sub in 0..p.substeps {
                let base = ((step * p.substeps + sub) * 4) * n;
                // stage 1
                self.stages[base..base + n].copy_from_slice(&z);
                self.field(&z, uk, 0);
                for (s, c) in [(1, 0.5), (2, 0.5), (3, 1.0)] {
                    for j in 0..n {
                        self.tmp[j] = z[j] + c * h * self.k[s - 1][j];
                    }
                    self.stages[base + s * n..base + (s + 1) * n].copy_from_slice(&self.tmp);
                    let t = self.tmp.clone();
                    self.field(&t, uk, s);
                }
                for j in 0..n {
                    z[j] += h / 6.0 * (self.k[0][j] + 2.0 * self.k[1][j] + 2.0 * self.k[2][j] + self.k[3][j]);
                }
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::RolloutDivergence(step));
            }
            self.states[(step + 1) * n..(step + 2) * n].copy_from_slice(&z);
        }
        Ok(p.dt * total)
    }

    // w += Aᵀ v, A = Σ_i u_i ∂Z_i/∂z at z; b += Gᵀ v
    fn stage_adjoint(&mut self, z: &[f64], u: &[f64], v: &[f64], w: &mut [f64], b: &mut [f64]) {
        let n = z.len();
        self.p.system.jacobians_into(z, &mut self.ws, &mut self.jacs);
        self.p.system.input_matrix_into(z, &mut self.ws, &mut self.g);
        for (i, ui) in u.iter().enumerate() {
            let mut gb = 0.0;
            for j in 0..n {
                gb += self.g[(j, i)] * v[j];
            }
            b[i] += gb;
            if *ui == 0.0 {
                continue;
            }
            let jac = &self.jacs[i];
            for c in 0..n {
                let mut s = 0.0;
                for r in 0..n {
                    s += jac[(r, c)] * v[r];
                }
                w[c] += ui * s;
            }
        }
    }

    /// Objective and gradient with respect to the flattened inputs.
    fn gradient(&mut self, u: &[f64], grad: &mut [f64]) -> Result<f64> {
        let total = self.rollout(u)?;
        let p = self.p;
        let n = p.state_dim();
        let m = p.input_dim();
        let h = p.dt / p.substeps as f64;
        grad.iter_mut().for_each(|v| *v = 0.0);
        let mut lam = vec![0.0; n];
        let mut gk: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        let mut sbar = vec![0.0; n];
        for step in (0..p.horizon).rev() {
            let uk: Vec<f64> = u[step * m..(step + 1) * m].to_vec();
            let mut ubar = vec![0.0; m];
            for sub in (0..p.substeps).rev() {
                let base = ((step * p.substeps + sub) * 4) * n;
                for j in 0..n {
                    gk[0][j] = h / 6.0 * lam[j];
                    gk[1][j] = h / 3.0 * lam[j];
                    gk[2][j] = h / 3.0 * lam[j];
                    gk[3][j] = h / 6.0 * lam[j];
                }
                let mut zbar = lam.clone();
                for (stage, carry) in [(3usize, h), (2, 0.5 * h), (1, 0.5 * h), (0, 0.0)] {
                    let zs: Vec<f64> = self.stages[base + stage * n..base + (stage + 1) * n].to_vec();
                    sbar.iter_mut().for_each(|v| *v = 0.0);
                    let v = gk[stage].clone();
                    self.stage_adjoint(&zs, &uk, &v, &mut sbar, &mut ubar);
                    for j in 0..n {
                        zbar[j] += sbar[j];
                    }
                    if stage > 0 {
                        for j in 0..n {
                            gk[stage - 1][j] += carry * sbar[j];
                        }
                    }
                }
                lam = zbar;
            }
            let zk: Vec<f64> = self.states[step * n..(step + 1) * n].to_vec();
            p.cost
                .grad_local_acc(&zk, &uk, p.dt, &mut lam, &mut grad[step * m..(step + 1) * m]);
            for i in 0..m {
                grad[step * m + i] += ubar[i];
            }
        }
        Ok(total)
    }
}

impl Objective for Shooter<'_> {
    fn value(&mut self, x: &[f64]) -> Option<f64> {
        self.rollout(x).ok().map(|v| v * self.scale).filter(|v| v.is_finite())
    }
    fn value_grad(&mut self, x: &[f64], grad: &mut [f64]) -> Option<f64> {
        let v = self.gradient(x, grad).ok()?;
        grad.iter_mut().for_each(|g| *g *= self.scale);
        Some(v * self.scale).filter(|v| v.is_finite() && grad.iter().all(|g| g.is_finite()))
    }
}

/// Predicted chart states for piecewise-constant inputs, `(H+1) × n_x`.
pub fn rollout(problem: &OcpProblem, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    problem.check_inputs(inputs)?;
    let mut sh = Shooter::new(problem);
    sh.rollout(&problem.flatten(inputs))?;
    Ok(DMatrix::from_row_slice(problem.horizon + 1, problem.state_dim(), &sh.states))
}

/// `δt Σ_{k<H} ℓ(z_k, u_k)`.
pub fn objective(problem: &OcpProblem, inputs: &DMatrix<f64>) -> Result<f64> {
    problem.check_inputs(inputs)?;
    Shooter::new(problem).rollout(&problem.flatten(inputs))
}

/// Gradient of [`objective`] with respect to the inputs, `H × n_u`.
pub fn gradient(problem: &OcpProblem, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    problem.check_inputs(inputs)?;
    let mut g = vec![0.0; problem.horizon * problem.input_dim()];
    Shooter::new(problem).gradient(&problem.flatten(inputs), &mut g)?;
    Ok(problem.unflatten(&g))
}

/// Drops the first input block and repeats the last one.
pub fn shift_warm_start(previous: &OcpSolution) -> DMatrix<f64> {
    let h = previous.inputs.nrows();
    DMatrix::from_fn(h, previous.inputs.ncols(), |k, i| previous.inputs[((k + 1).min(h - 1), i)])
}

struct Attempt {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    residual: f64,
    termination: Termination,
}

fn run_from(problem: &OcpProblem, start: &[f64], settings: &SolverSettings) -> Attempt {
    let (lo, hi) = problem.bounds_flat();
    let mut sh = Shooter::new(problem);
    let mut x = start.to_vec();
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
    // normalize by the starting objective so the relative tolerance is
    // meaningful close to the setpoint
    if let Ok(j0) = sh.rollout(&x) {
        if j0 > 0.0 && j0.is_finite() {
            sh.scale = 1.0 / j0;
        }
    }
    let scale = sh.scale;
    let m = minimize_box(&mut sh, &x, &lo, &hi, &settings.minimize_settings());
    Attempt {
        value: m.value / scale,
        residual: m.residual / scale,
        x: m.x,
        iterations: m.iterations,
        termination: m.termination,
    }
}

/// Whether zero inputs are a first-order stationary point of the problem,
/// judged by the default solver tolerance.
pub fn zero_input_is_stationary(problem: &OcpProblem) -> bool {
    zero_input_within(problem, SolverSettings::default().tol)
}

// the solver would stop immediately at zero inputs: normalized objective 1,
// so its test reads residual <= 2 tol
fn zero_input_within(problem: &OcpProblem, tol: f64) -> bool {
    let zero = DMatrix::zeros(problem.horizon, problem.input_dim());
    match (objective(problem, &zero), gradient(problem, &zero)) {
        (Ok(j), Ok(g)) => {
            let (lo, hi) = problem.bounds_flat();
            let x = vec![0.0; lo.len()];
            let gf = problem.flatten(&g);
            if j == 0.0 {
                return true;
            }
            let scale = 1.0 / j;
            let gs: Vec<f64> = gf.iter().map(|v| v * scale).collect();
            solver_residual(&x, &gs, &lo, &hi) <= 2.0 * tol
        }
        _ => false,
    }
}

// zero inputs at zero cost are already optimal
fn zero_objective_positive(problem: &OcpProblem) -> bool {
    objective(problem, &DMatrix::zeros(problem.horizon, problem.input_dim())).is_ok_and(|j| j > 0.0)
}

fn solver_residual(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (xi, gi))| ((xi - gi).clamp(lo[i], hi[i]) - xi).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Solves the OCP from `guess`, or from zero inputs when there is none.
///
/// Without a guess, a tailored cost whose zero input sequence is stationary
/// is additionally started from `settings.restarts` seeded random input
/// sequences; the lowest objective wins. Restarts run concurrently.
pub fn solve(problem: &OcpProblem, guess: Option<&DMatrix<f64>>, settings: &SolverSettings) -> Result<OcpSolution> {
    let nvar = problem.horizon * problem.input_dim();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    match guess {
        Some(g) => {
            problem.check_inputs(g)?;
            starts.push(problem.flatten(g));
        }
        None => {
            starts.push(vec![0.0; nvar]);
            if problem.cost.is_tailored() && settings.restarts > 0 && zero_objective_positive(problem) && zero_input_within(problem, settings.tol) {
                let (lo, hi) = problem.bounds_flat();
                let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
                for _ in 0..settings.restarts {
                    starts.push((0..nvar).map(|i| if lo[i] < hi[i] { rng.gen_range(lo[i]..=hi[i]) } else { lo[i] }).collect());
                }
            }
        }
    }

    let attempts: Vec<Attempt> = if starts.len() == 1 {
        vec![run_from(problem, &starts[0], settings)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = starts
                .iter()
                .map(|s| scope.spawn(move || run_from(problem, s, settings)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("solver thread")).collect()
        })
    };
    let iterations = attempts.iter().map(|a| a.iterations).sum();
    let best = attempts
        .into_iter()
        .filter(|a| a.value.is_finite())
        .min_by(|a, b| a.value.total_cmp(&b.value));
    let Some(best) = best else {
        let inputs = problem.unflatten(&vec![0.0; nvar]);
        let states = rollout(problem, &inputs)?;
        let objective = objective(problem, &inputs)?;
        return Ok(OcpSolution {
            inputs,
            states,
            objective,
            iterations,
            residual: f64::INFINITY,
            status: SolveStatus::InfeasibleGuess,
        });
    };
    let inputs = problem.unflatten(&best.x);
    let states = rollout(problem, &inputs)?;
    let status = match best.termination {
        Termination::Converged => SolveStatus::Converged,
        Termination::MaxIter => SolveStatus::MaxIter,
        Termination::Stalled => SolveStatus::Stalled,
        Termination::Infeasible => SolveStatus::InfeasibleGuess,
    };
    Ok(OcpSolution {
        inputs,
        states,
        objective: best.value,
        iterations,
        residual: best.residual,
        status,
    })
}
