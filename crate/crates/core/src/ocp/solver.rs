//! Box-constrained minimization: a short projected-gradient phase with a
//! non-monotone Armijo rule, then projected L-BFGS with monotone
//! backtracking.

use std::collections::VecDeque;

/// A smooth objective. `None` signals that `x` is outside the domain
/// (for instance a diverging rollout) and is treated as `+∞`.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> Option<f64>;
    fn value_grad(&mut self, x: &[f64], grad: &mut [f64]) -> Option<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimizeSettings {
    pub max_iter: usize,
    pub tol: f64,
    pub memory: usize,
    pub nonmonotone_window: usize,
    pub pg_iters: usize,
}

impl Default for MinimizeSettings {
    fn default() -> Self {
        MinimizeSettings {
            max_iter: 2000,
            tol: 1e-8,
            memory: 10,
            nonmonotone_window: 5,
            pg_iters: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIter,
    Stalled,
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Norm of `P(x − ∇f) − x` at the returned point.
    pub residual: f64,
    pub termination: Termination,
    /// Objective after every accepted L-BFGS step, starting with the value
    /// on entry to that phase.
    pub monotone_history: Vec<f64>,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACK: usize = 50;
// L-BFGS gives up when this many accepted steps gained less than
// `STALL_DECREASE` relative objective decrease
const STALL_WINDOW: usize = 50;
const STALL_DECREASE: f64 = 1e-8;

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn projected_residual(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (xi, gi))| {
            let p = (xi - gi).clamp(lo[i], hi[i]);
            (p - xi).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over the box `[lo, hi]` starting from `x0` (clamped).
pub fn minimize_box(f: &mut dyn Objective, x0: &[f64], lo: &[f64], hi: &[f64], s: &MinimizeSettings) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let Some(mut fx) = f.value_grad(&x, &mut g) else {
        return Minimum {
            x,
            value: f64::INFINITY,
            iterations: 0,
            residual: f64::INFINITY,
            termination: Termination::Infeasible,
            monotone_history: Vec::new(),
        };
    };
    let converged = |fx: f64, x: &[f64], g: &[f64]| projected_residual(x, g, lo, hi) <= s.tol * (1.0 + fx.abs());

    let mut best = (fx, x.clone(), g.clone());
    let mut iter = 0;
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];

    // projected gradient, Barzilai-Borwein steps, non-monotone acceptance
    let mut recent: VecDeque<f64> = VecDeque::from([fx]);
    let mut step = 1.0;
    let mut done = converged(fx, &x, &g);
    while !done && iter < s.pg_iters.min(s.max_iter) {
        let reference = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            for i in 0..n {
                xt[i] = x[i] - alpha * g[i];
            }
            project(&mut xt, lo, hi);
            let decrease: f64 = (0..n).map(|i| g[i] * (x[i] - xt[i])).sum();
            if decrease <= 0.0 {
                break;
            }
            if let Some(ft) = f.value(&xt) {
                if ft <= reference - ARMIJO_C * decrease {
                    accepted = Some(ft);
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some(_) = accepted else { break };
        let Some(ft) = f.value_grad(&xt, &mut gt) else { break };
        iter += 1;
        let sv: Vec<f64> = (0..n).map(|i| xt[i] - x[i]).collect();
        let yv: Vec<f64> = (0..n).map(|i| gt[i] - g[i]).collect();
        let sy = dot(&sv, &yv);
        step = if sy > 0.0 { (dot(&sv, &sv) / sy).clamp(1e-10, 1e10) } else { 1.0 };
        x.copy_from_slice(&xt);
        g.copy_from_slice(&gt);
        fx = ft;
        if fx < best.0 {
            best = (fx, x.clone(), g.clone());
        }
        recent.push_back(fx);
        if recent.len() > s.nonmonotone_window.max(1) {
            recent.pop_front();
        }
        done = converged(fx, &x, &g);
    }

    // continue monotonically from the best point seen so far
    let (mut fx, mut x, mut g) = best;
    let mut history = vec![fx];
    let mut termination = if converged(fx, &x, &g) { Termination::Converged } else { Termination::MaxIter };
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let eps_bound = |i: usize| (hi[i] - lo[i]).abs() * 1e-12;
    while termination == Termination::MaxIter && iter < s.max_iter {
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let e = eps_bound(i);
                !((x[i] <= lo[i] + e && g[i] > 0.0) || (x[i] >= hi[i] - e && g[i] < 0.0))
            })
            .collect();
        let mut d = two_loop(&g, &free, &mem);
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            mem.clear();
            d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
            slope = dot(&d, &g);
            if !(slope < 0.0) {
                termination = Termination::Converged;
                break;
            }
        }
        // first trial clipped so the step is not absurdly long without curvature info
        let mut alpha = if mem.is_empty() {
            let dn = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
            (1.0f64).min(1.0 / dn.max(1e-300))
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            for i in 0..n {
                xt[i] = x[i] + alpha * d[i];
            }
            project(&mut xt, lo, hi);
            let lin: f64 = (0..n).map(|i| g[i] * (xt[i] - x[i])).sum();
            if lin >= 0.0 {
                alpha *= 0.5;
                continue;
            }
            if let Some(ft) = f.value(&xt) {
                if ft <= fx + ARMIJO_C * lin {
                    accepted = Some(ft);
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some(_) = accepted else {
            if mem.is_empty() {
                termination = Termination::Stalled;
                break;
            }
            mem.clear();
            continue;
        };
        let Some(ft) = f.value_grad(&xt, &mut gt) else {
            termination = Termination::Stalled;
            break;
        };
        iter += 1;
        let sv: Vec<f64> = (0..n).map(|i| xt[i] - x[i]).collect();
        let yv: Vec<f64> = (0..n).map(|i| gt[i] - g[i]).collect();
        let sy = dot(&sv, &yv);
        if sy > 1e-12 * dot(&sv, &sv).sqrt() * dot(&yv, &yv).sqrt() && sy > 0.0 {
            mem.push_back((sv, yv, 1.0 / sy));
            if mem.len() > s.memory.max(1) {
                mem.pop_front();
            }
        }
        x.copy_from_slice(&xt);
        g.copy_from_slice(&gt);
        fx = ft;
        history.push(fx);
        if converged(fx, &x, &g) {
            termination = Termination::Converged;
        } else if history.len() > STALL_WINDOW {
            let old = history[history.len() - 1 - STALL_WINDOW];
            if old - fx <= STALL_DECREASE * fx.abs().max(f64::MIN_POSITIVE) {
                termination = Termination::Stalled;
            }
        }
    }
    Minimum {
        residual: projected_residual(&x, &g, lo, hi),
        x,
        value: fx,
        iterations: iter,
        termination,
        monotone_history: history,
    }
}

// L-BFGS two-loop recursion restricted to the free variables.
fn two_loop(g: &[f64], free: &[bool], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let n = g.len();
    let mask = |v: &[f64]| -> Vec<f64> { (0..n).map(|i| if free[i] { v[i] } else { 0.0 }).collect() };
    let mut q = mask(g);
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(&mask(s), &q);
        let ym = mask(y);
        for i in 0..n {
            q[i] -= a * ym[i];
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let (sm, ym) = (mask(s), mask(y));
        let yy = dot(&ym, &ym);
        let sy = dot(&sm, &ym);
        if yy > 0.0 && sy > 0.0 {
            let gamma = sy / yy;
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(&mask(y), &q);
        let sm = mask(s);
        for i in 0..n {
            q[i] += (a - b) * sm[i];
        }
    }
    mask(&q).into_iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;
    impl Objective for Rosenbrock {
        fn value(&mut self, x: &[f64]) -> Option<f64> {
            Some((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        }
        fn value_grad(&mut self, x: &[f64], g: &mut [f64]) -> Option<f64> {
            g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
            g[1] = 200.0 * (x[1] - x[0] * x[0]);
            self.value(x)
        }
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let m = minimize_box(&mut Rosenbrock, &[-1.2, 1.0], &[-5.0; 2], &[5.0; 2], &MinimizeSettings::default());
        assert_eq!(m.termination, Termination::Converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn active_bound_is_respected() {
        let m = minimize_box(&mut Rosenbrock, &[0.0, 0.0], &[-2.0, -2.0], &[0.5, 2.0], &MinimizeSettings::default());
        assert_eq!(m.termination, Termination::Converged);
        assert_eq!(m.x[0], 0.5);
        assert!((m.x[1] - 0.25).abs() < 1e-6);
        assert!(m.monotone_history.windows(2).all(|w| w[1] <= w[0]));
    }

    struct Quartic;
    impl Objective for Quartic {
        fn value(&mut self, x: &[f64]) -> Option<f64> {
            Some(x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * (v - 0.3).powi(4)).sum())
        }
        fn value_grad(&mut self, x: &[f64], g: &mut [f64]) -> Option<f64> {
            for (i, v) in x.iter().enumerate() {
                g[i] = 4.0 * (i + 1) as f64 * (v - 0.3).powi(3);
            }
            self.value(x)
        }
    }

    #[test]
    fn flat_minimum_is_approached() {
        let s = MinimizeSettings::default();
        let m = minimize_box(&mut Quartic, &[1.0; 6], &[-1.0; 6], &[1.0; 6], &s);
        assert!(m.value < 1e-8, "{}", m.value);
        assert!(m.x.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    struct Wall;
    impl Objective for Wall {
        fn value(&mut self, x: &[f64]) -> Option<f64> {
            (x[0] > 0.5).then_some(x[0] * x[0]).or(Some(0.25)).filter(|_| x[0] < 2.0)
        }
        fn value_grad(&mut self, x: &[f64], g: &mut [f64]) -> Option<f64> {
            g[0] = if x[0] > 0.5 { 2.0 * x[0] } else { 0.0 };
            self.value(x)
        }
    }

    #[test]
    fn infeasible_start_is_reported() {
        let m = minimize_box(&mut Wall, &[3.0], &[-5.0], &[5.0], &MinimizeSettings::default());
        assert_eq!(m.termination, Termination::Infeasible);
    }
}
