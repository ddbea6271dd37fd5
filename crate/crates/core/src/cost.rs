//! Stage costs: the homogeneous tailored cost and the quadratic baseline.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::models::StateVector;
use crate::privcoord::PrivilegedChart;

/// `σ (Σ q_i |z_i|^{e_i} + Σ r_j |u_j|^{f_j})` in privileged coordinates.
#[derive(Clone, Debug)]
pub struct TailoredCost {
    pub state_exponents: Vec<u32>,
    pub input_exponents: Vec<u32>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub scale: f64,
    /// Homogeneity degree of the unscaled cost, `2 Π r_i` divided by the
    /// cancelled common factor.
    pub degree: u64,
    pub chart: Arc<PrivilegedChart>,
}

/// `(x − d)ᵀ Q (x − d) + uᵀ R u`.
#[derive(Clone, Debug)]
pub struct QuadraticCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub chart: Arc<PrivilegedChart>,
}

#[derive(Clone, Debug)]
pub enum StageCost {
    Tailored(TailoredCost),
    Quadratic(QuadraticCost),
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Exponents `d / r_i` and `d / s_j` with `d = 2 Π r_i`, optionally divided
/// by their greatest common divisor. Returns `(state, input, degree)`.
pub fn tailored_exponents(r: &[usize], s: &[usize], cancel_gcd: bool) -> Result<(Vec<u32>, Vec<u32>, u64)> {
    if r.is_empty() || s.is_empty() || r.iter().chain(s).any(|&w| w == 0) {
        return Err(Error::InvalidParameter("dilation exponents must be positive".into()));
    }
    let d: u64 = 2 * r.iter().map(|&w| w as u64).product::<u64>();
    let raw: Vec<u64> = r
        .iter()
        .chain(s)
        .map(|&w| {
            let w = w as u64;
            if d % w == 0 {
                Ok(d / w)
            } else {
                Err(Error::NonIntegerExponent { degree: d, weight: w })
            }
        })
        .collect::<Result<_>>()?;
    let g = if cancel_gcd {
        raw.iter().fold(0, |acc, &e| gcd(acc, e))
    } else {
        1
    };
    let all: Vec<u32> = raw.iter().map(|&e| (e / g) as u32).collect();
    let (state, input) = all.split_at(r.len());
    Ok((state.to_vec(), input.to_vec(), d / g))
}

/// Builds the tailored cost on a privileged chart. Inputs have dilation
/// exponents one.
pub fn build_tailored(chart: Arc<PrivilegedChart>, q: &[f64], r: &[f64], cancel_gcd: bool, scale: f64) -> Result<StageCost> {
    let n = chart.dim();
    check_len("state weights", n, q.len())?;
    if !chart.is_privileged() {
        return Err(Error::InvalidParameter("tailored cost needs a privileged chart".into()));
    }
    if q.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || q.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidParameter("state weights must be non-negative and not all zero".into()));
    }
    if r.is_empty() || r.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter("input weights must be positive".into()));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("cost scale must be positive, got {scale}")));
    }
    let s = vec![1; r.len()];
    let (state_exponents, input_exponents, degree) = tailored_exponents(&chart.weights, &s, cancel_gcd)?;
    Ok(StageCost::Tailored(TailoredCost {
        state_exponents,
        input_exponents,
        q: q.to_vec(),
        r: r.to_vec(),
        scale,
        degree,
        chart,
    }))
}

/// Builds the quadratic cost around `d`.
pub fn build_quadratic(q: DMatrix<f64>, r: DMatrix<f64>, d: &StateVector) -> Result<StageCost> {
    check_len("Q rows", d.len(), q.nrows())?;
    check_len("Q columns", d.len(), q.ncols())?;
    check_len("R columns", r.nrows(), r.ncols())?;
    check_spd(&q, "Q")?;
    check_spd(&r, "R")?;
    Ok(StageCost::Quadratic(QuadraticCost {
        q,
        r,
        chart: Arc::new(PrivilegedChart::translation(d)),
    }))
}

fn check_spd(m: &DMatrix<f64>, name: &'static str) -> Result<()> {
    let sym = (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax());
    if !sym || m.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(name));
    }
    Ok(())
}

#[inline]
fn abs_pow(v: f64, e: u32) -> f64 {
    v.abs().powi(e as i32)
}

// d/dv |v|^e, taking 0 at v = 0
#[inline]
fn abs_pow_grad(v: f64, e: u32) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        e as f64 * v.abs().powi(e as i32 - 1) * v.signum()
    }
}

impl StageCost {
    pub fn chart(&self) -> &Arc<PrivilegedChart> {
        match self {
            StageCost::Tailored(c) => &c.chart,
            StageCost::Quadratic(c) => &c.chart,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.chart().dim()
    }

    pub fn input_dim(&self) -> usize {
        match self {
            StageCost::Tailored(c) => c.r.len(),
            StageCost::Quadratic(c) => c.r.nrows(),
        }
    }

    pub fn is_tailored(&self) -> bool {
        matches!(self, StageCost::Tailored(_))
    }

    /// Cost in chart coordinates.
    pub fn eval_local(&self, z: &[f64], u: &[f64]) -> f64 {
        match self {
            StageCost::Tailored(c) => c.scale * c.unscaled(z, u),
            StageCost::Quadratic(c) => {
                let z = DVector::from_row_slice(z);
                let u = DVector::from_row_slice(u);
                z.dot(&(&c.q * &z)) + u.dot(&(&c.r * &u))
            }
        }
    }

    /// Gradients of [`eval_local`](Self::eval_local), accumulated into
    /// `gz` and `gu` with factor `w`.
    pub fn grad_local_acc(&self, z: &[f64], u: &[f64], w: f64, gz: &mut [f64], gu: &mut [f64]) {
        match self {
            StageCost::Tailored(c) => {
                let k = w * c.scale;
                for i in 0..z.len() {
                    gz[i] += k * c.q[i] * abs_pow_grad(z[i], c.state_exponents[i]);
                }
                for j in 0..u.len() {
                    gu[j] += k * c.r[j] * abs_pow_grad(u[j], c.input_exponents[j]);
                }
            }
            StageCost::Quadratic(c) => {
                for i in 0..z.len() {
                    let s: f64 = (0..z.len()).map(|k| (c.q[(i, k)] + c.q[(k, i)]) * z[k]).sum();
                    gz[i] += w * s;
                }
                for j in 0..u.len() {
                    let s: f64 = (0..u.len()).map(|k| (c.r[(j, k)] + c.r[(k, j)]) * u[k]).sum();
                    gu[j] += w * s;
                }
            }
        }
    }

    pub fn grad_local(&self, z: &[f64], u: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let mut gz = DVector::zeros(z.len());
        let mut gu = DVector::zeros(u.len());
        self.grad_local_acc(z, u, 1.0, gz.as_mut_slice(), gu.as_mut_slice());
        (gz, gu)
    }

    /// Cost at a state in original coordinates.
    pub fn eval(&self, x: &StateVector, u: &DVector<f64>) -> Result<f64> {
        check_len("input", self.input_dim(), u.len())?;
        let z = self.chart().forward(x)?;
        Ok(self.eval_local(z.as_slice(), u.as_slice()))
    }

    /// Rescales a tailored cost so that `eval(x0, 0) = 1`. Quadratic costs
    /// and states with zero cost are left unchanged.
    pub fn with_auto_scale(mut self, x0: &StateVector) -> Result<Self> {
        if let StageCost::Tailored(c) = &mut self {
            let z = c.chart.forward(x0)?;
            let raw = c.unscaled(z.as_slice(), &vec![0.0; c.r.len()]);
            if raw > 0.0 && raw.is_finite() {
                c.scale = 1.0 / raw;
            }
        }
        Ok(self)
    }
}

impl TailoredCost {
    fn unscaled(&self, z: &[f64], u: &[f64]) -> f64 {
        let s: f64 = z
            .iter()
            .zip(&self.q)
            .zip(&self.state_exponents)
            .map(|((v, q), e)| q * abs_pow(*v, *e))
            .sum();
        s + u
            .iter()
            .zip(&self.r)
            .zip(&self.input_exponents)
            .map(|((v, r), e)| r * abs_pow(*v, *e))
            .sum::<f64>()
    }
}
