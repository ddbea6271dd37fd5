//! Privileged coordinates by Bellaïche's two-step construction, and the
//! homogeneous nilpotent approximation of the fields in those coordinates.
//!
//! With `F` the adapted frame at `d` (columns), step one maps
//! `y = F⁻¹ (x − d)`. Step two subtracts polynomial corrections
//! `z_j = y_j − Σ_k h_{j,k}(y_1, …, y_{j−1})`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::liealg::{nonholonomic_order_of, LieFiltration, AMBIGUOUS_TOL, ZERO_TOL};
use crate::models::{StateVector, VehicleModel};
use crate::poly::{eval_field, lie_derivative, poly_bracket, MonomialBasis, Poly, PolyField};

const RICHARDSON_EPS: [f64; 3] = [1e-2, 5e-3, 2.5e-3];
const FIT_RADIUS: f64 = 0.5;
const FIT_RESIDUAL_TOL: f64 = 1e-6;
const COEFF_CHOP: f64 = 1e-8;

/// One correction polynomial `h_{j,k}` of step two.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionTerm {
    /// Zero-based coordinate index `j`.
    pub coordinate: usize,
    /// Total degree `k` of every monomial in `poly`.
    pub order: usize,
    /// Polynomial in `y`.
    pub poly: Poly,
}

/// A local chart `x ↦ z` around a setpoint.
///
/// Built either from a filtration (privileged coordinates) or as a plain
/// translation `z = x − d` for costs that do not need privileged coordinates.
#[derive(Clone, Debug)]
pub struct PrivilegedChart {
    pub setpoint: StateVector,
    pub frame: DMatrix<f64>,
    frame_inv: DMatrix<f64>,
    pub weights: Vec<usize>,
    terms: Vec<CorrectionTerm>,
    // Σ_k h_{j,k}, with first and second derivatives, for the f64 paths.
    corr: Vec<Poly>,
    corr_d1: Vec<Vec<Poly>>,
    corr_d2: Vec<Vec<Vec<Poly>>>,
    privileged: bool,
}

/// Step one: `y = F⁻¹ (x − d)`.
pub fn step1_transform(filtration: &LieFiltration, x: &StateVector) -> Result<DVector<f64>> {
    check_len("state", filtration.setpoint.len(), x.len())?;
    let inv = invert_frame(&filtration.frame)?;
    Ok(inv * (x - &filtration.setpoint))
}

fn invert_frame(frame: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sv = frame.clone().svd(false, false).singular_values;
    if sv.min() <= 1e-12 * sv.max() {
        return Err(Error::SingularFrame);
    }
    frame.clone().try_inverse().ok_or(Error::SingularFrame)
}

fn chart_degree(max_weight: usize) -> usize {
    (2 * max_weight).max(max_weight + 2)
}

/// Fields of `words` in `y` coordinates: `F⁻¹ W(d + F y)`.
fn fields_in_y(
    model: &VehicleModel,
    filtration: &LieFiltration,
    frame_inv: &DMatrix<f64>,
    basis: &Arc<MonomialBasis>,
    include_frame: bool,
) -> (Vec<PolyField>, Vec<PolyField>) {
    let n = model.state_dim();
    let xi = model.taylor_fields(filtration.setpoint.as_slice(), basis);
    let args: Vec<Poly> = (0..n)
        .map(|k| {
            let row: Vec<f64> = filtration.frame.row(k).iter().copied().collect();
            Poly::affine(basis, 0.0, &row)
        })
        .collect();
    let to_y = |f: &PolyField| -> PolyField {
        let composed: Vec<Poly> = f.iter().map(|p| p.compose(&args)).collect();
        linear_map(frame_inv, &composed)
    };
    let gens: Vec<PolyField> = xi.iter().map(to_y).collect();
    let frame = if include_frame {
        filtration.words.iter().map(|w| to_y(&w.field(&xi))).collect()
    } else {
        Vec::new()
    };
    (gens, frame)
}

fn linear_map(m: &DMatrix<f64>, f: &[Poly]) -> PolyField {
    let basis = f[0].basis();
    (0..m.nrows())
        .map(|j| {
            let mut acc = Poly::zero(basis);
            for (k, p) in f.iter().enumerate() {
                let a = m[(j, k)];
                if a != 0.0 {
                    acc = acc + p.clone() * a;
                }
            }
            acc
        })
        .collect()
}

/// Step two: the correction polynomials `h_{j,k}` for every coordinate of
/// weight three or more. Negligible terms are dropped, so built-ins at the
/// origin give an empty list.
pub fn step2_corrections(filtration: &LieFiltration, model: &VehicleModel) -> Result<Vec<CorrectionTerm>> {
    let n = model.state_dim();
    check_len("setpoint", n, filtration.setpoint.len())?;
    let frame_inv = invert_frame(&filtration.frame)?;
    let w = &filtration.weights;
    let basis = MonomialBasis::shared(n, chart_degree(filtration.max_weight()));
    let (_, frame_y) = fields_in_y(model, filtration, &frame_inv, &basis, true);

    let mut terms = Vec::new();
    for j in 0..n {
        if w[j] < 3 {
            continue;
        }
        let mut g = Poly::variable(&basis, j);
        for k in 2..w[j] {
            let mut h = Poly::zero(&basis);
            for alpha in multi_indices(j, k) {
                let wa: usize = alpha.iter().zip(w).map(|(a, wi)| *a as usize * wi).sum();
                if wa >= w[j] {
                    continue;
                }
                // Y_1^{α_1} ⋯ Y_{j−1}^{α_{j−1}} g, rightmost operator first
                let mut f = g.clone();
                for i in (0..j).rev() {
                    for _ in 0..alpha[i] {
                        f = lie_derivative(&f, &frame_y[i]);
                    }
                }
                let v = f.value_at_origin();
                let a = v.abs();
                if a < AMBIGUOUS_TOL {
                    continue;
                }
                if a < ZERO_TOL {
                    return Err(Error::AmbiguousOrder { magnitude: a });
                }
                let denom: f64 = alpha.iter().map(|&ai| factorial(ai as usize)).product();
                let mut exps = alpha.clone();
                exps.resize(n, 0);
                let mut mono = Poly::zero(&basis);
                mono.set_coefficient(&exps, v / denom);
                h = h + mono;
            }
            if h.max_abs_coefficient() > 0.0 {
                g = g - h.clone();
                terms.push(CorrectionTerm {
                    coordinate: j,
                    order: k,
                    poly: h,
                });
            }
        }
    }
    Ok(terms)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// All multi-indices over `vars` variables with total `k`.
fn multi_indices(vars: usize, k: usize) -> Vec<Vec<u8>> {
    if vars == 0 {
        return if k == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in (0..=k).rev() {
        for mut rest in multi_indices(vars - 1, k - first) {
            rest.insert(0, first as u8);
            out.push(rest);
        }
    }
    out
}

impl PrivilegedChart {
    /// Privileged coordinates at the filtration's setpoint.
    pub fn new(filtration: &LieFiltration, model: &VehicleModel) -> Result<Self> {
        let frame_inv = invert_frame(&filtration.frame)?;
        let terms = step2_corrections(filtration, model)?;
        Ok(Self::assemble(
            filtration.setpoint.clone(),
            filtration.frame.clone(),
            frame_inv,
            filtration.weights.clone(),
            terms,
            true,
        ))
    }

    /// The translation `z = x − d`. Weights are reported as all ones.
    pub fn translation(d: &StateVector) -> Self {
        let n = d.len();
        Self::assemble(
            d.clone(),
            DMatrix::identity(n, n),
            DMatrix::identity(n, n),
            vec![1; n],
            Vec::new(),
            false,
        )
    }

    fn assemble(
        setpoint: StateVector,
        frame: DMatrix<f64>,
        frame_inv: DMatrix<f64>,
        weights: Vec<usize>,
        terms: Vec<CorrectionTerm>,
        privileged: bool,
    ) -> Self {
        let n = setpoint.len();
        let (corr, corr_d1, corr_d2) = if terms.is_empty() {
            (Vec::new(), Vec::new(), Vec::new())
        } else {
            let basis = terms[0].poly.basis().clone();
            let mut corr = vec![Poly::zero(&basis); n];
            for t in &terms {
                corr[t.coordinate] = corr[t.coordinate].clone() + t.poly.clone();
            }
            let d1: Vec<Vec<Poly>> = corr
                .iter()
                .map(|c| (0..n).map(|l| c.derivative(l)).collect())
                .collect();
            let d2 = d1
                .iter()
                .map(|row| row.iter().map(|p| (0..n).map(|k| p.derivative(k)).collect()).collect())
                .collect();
            (corr, d1, d2)
        };
        PrivilegedChart {
            setpoint,
            frame,
            frame_inv,
            weights,
            terms,
            corr,
            corr_d1,
            corr_d2,
            privileged,
        }
    }

    pub fn dim(&self) -> usize {
        self.setpoint.len()
    }

    pub fn frame_inverse(&self) -> &DMatrix<f64> {
        &self.frame_inv
    }

    pub fn corrections(&self) -> &[CorrectionTerm] {
        &self.terms
    }

    pub fn is_privileged(&self) -> bool {
        self.privileged
    }

    pub fn has_corrections(&self) -> bool {
        !self.terms.is_empty()
    }

    /// `x ↦ y`.
    pub fn step1(&self, x: &[f64]) -> DVector<f64> {
        let xi = DVector::from_iterator(x.len(), x.iter().zip(self.setpoint.iter()).map(|(a, b)| a - b));
        &self.frame_inv * xi
    }

    fn y_to_z(&self, y: &DVector<f64>) -> DVector<f64> {
        if self.corr.is_empty() {
            return y.clone();
        }
        DVector::from_fn(y.len(), |j, _| y[j] - self.corr[j].eval(y.as_slice()))
    }

    fn z_to_y(&self, z: &[f64]) -> DVector<f64> {
        let mut y = DVector::from_row_slice(z);
        if self.corr.is_empty() {
            return y;
        }
        // h_j only involves y_1..y_{j−1}
        for j in 0..y.len() {
            y[j] = z[j] + self.corr[j].eval(y.as_slice());
        }
        y
    }

    pub fn forward(&self, x: &StateVector) -> Result<DVector<f64>> {
        check_len("state", self.dim(), x.len())?;
        Ok(self.y_to_z(&self.step1(x.as_slice())))
    }

    pub fn inverse(&self, z: &DVector<f64>) -> Result<StateVector> {
        check_len("chart state", self.dim(), z.len())?;
        Ok(self.inverse_slice(z.as_slice()))
    }

    pub(crate) fn inverse_slice(&self, z: &[f64]) -> StateVector {
        &self.setpoint + &self.frame * self.z_to_y(z)
    }

    // Dψ(y) = I − ∂h/∂y
    fn dpsi(&self, y: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::identity(n, n);
        for (j, row) in self.corr_d1.iter().enumerate() {
            for (l, p) in row.iter().enumerate() {
                m[(j, l)] -= p.eval(y);
            }
        }
        m
    }

    /// `∂z/∂x` at `x`.
    pub fn forward_jacobian(&self, x: &StateVector) -> DMatrix<f64> {
        let y = self.step1(x.as_slice());
        self.dpsi(y.as_slice()) * &self.frame_inv
    }

    /// `∂x/∂z` at `z`.
    pub fn inverse_jacobian(&self, z: &[f64]) -> DMatrix<f64> {
        let y = self.z_to_y(z);
        let dpsi = self.dpsi(y.as_slice());
        let inv = dpsi.try_inverse().expect("unit lower-triangular");
        &self.frame * inv
    }

    /// The forward map as polynomials in `ξ = x − d`, truncated at the
    /// chart's degree.
    pub fn forward_polys(&self) -> Vec<Poly> {
        let n = self.dim();
        let degree = self
            .terms
            .iter()
            .map(|t| t.poly.basis().degree())
            .max()
            .unwrap_or(1)
            .max(1);
        let basis = MonomialBasis::shared(n, degree);
        let y: Vec<Poly> = (0..n)
            .map(|j| {
                let row: Vec<f64> = self.frame_inv.row(j).iter().copied().collect();
                Poly::affine(&basis, 0.0, &row)
            })
            .collect();
        if self.corr.is_empty() {
            return y;
        }
        (0..n)
            .map(|j| y[j].clone() - self.corr[j].compose(&y))
            .collect()
    }

    /// Human-readable `y` and `z` maps, one line per coordinate.
    pub fn describe(&self) -> String {
        let zero = self.setpoint.iter().all(|v| *v == 0.0);
        let var = if zero { "x" } else { "ξ" };
        let mut out = String::new();
        if !zero {
            out.push_str("ξ = x - d\n");
        }
        let n = self.dim();
        for j in 0..n {
            let row: Vec<f64> = self.frame_inv.row(j).iter().map(|v| chop(*v)).collect();
            let basis = MonomialBasis::shared(n, 1);
            out.push_str(&format!("y{} = {}\n", j + 1, Poly::affine(&basis, 0.0, &row).to_text(var)));
        }
        if self.corr.is_empty() {
            out.push_str("z = y\n");
        } else {
            for j in 0..n {
                let mut c = self.corr[j].clone();
                c.chop(1e-12);
                if c.max_abs_coefficient() == 0.0 {
                    out.push_str(&format!("z{} = y{}\n", j + 1, j + 1));
                } else {
                    out.push_str(&format!("z{} = y{} - ({})\n", j + 1, j + 1, c.to_text("y")));
                }
            }
        }
        out
    }
}

fn chop(v: f64) -> f64 {
    if v.abs() < 1e-12 {
        0.0
    } else {
        v
    }
}

/// The model's fields expressed in a chart, `Z_i(z) = (∂z/∂x) X_i(x(z))`.
#[derive(Clone, Debug)]
pub struct ChartedSystem {
    pub model: VehicleModel,
    pub chart: Arc<PrivilegedChart>,
}

/// Scratch space for [`ChartedSystem`] evaluations.
#[derive(Clone, Debug)]
pub struct ChartWorkspace {
    g: DMatrix<f64>,
    jx: Vec<DMatrix<f64>>,
}

impl ChartedSystem {
    pub fn new(model: VehicleModel, chart: Arc<PrivilegedChart>) -> Result<Self> {
        check_len("chart", model.state_dim(), chart.dim())?;
        Ok(ChartedSystem { model, chart })
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    pub fn workspace(&self) -> ChartWorkspace {
        let n = self.state_dim();
        let m = self.input_dim();
        ChartWorkspace {
            g: DMatrix::zeros(n, m),
            jx: vec![DMatrix::zeros(n, n); m],
        }
    }

    /// `G_z(z)`, the fields in chart coordinates as columns.
    pub fn input_matrix_into(&self, z: &[f64], ws: &mut ChartWorkspace, out: &mut DMatrix<f64>) {
        let c = &self.chart;
        let y = c.z_to_y(z);
        let x = &c.setpoint + &c.frame * &y;
        self.model.input_matrix_into(x.as_slice(), &mut ws.g);
        if c.corr.is_empty() {
            c.frame_inv.mul_to(&ws.g, out);
        } else {
            *out = c.dpsi(y.as_slice()) * (&c.frame_inv * &ws.g);
        }
    }

    pub fn input_matrix(&self, z: &[f64]) -> DMatrix<f64> {
        let mut ws = self.workspace();
        let mut out = DMatrix::zeros(self.state_dim(), self.input_dim());
        self.input_matrix_into(z, &mut ws, &mut out);
        out
    }

    /// `∂Z_i/∂z` for every field.
    pub fn jacobians_into(&self, z: &[f64], ws: &mut ChartWorkspace, out: &mut [DMatrix<f64>]) {
        let c = &self.chart;
        let y = c.z_to_y(z);
        let x = &c.setpoint + &c.frame * &y;
        self.model.jacobians_into(x.as_slice(), &mut ws.jx);
        if c.corr.is_empty() {
            for (o, jx) in out.iter_mut().zip(&ws.jx) {
                *o = &c.frame_inv * jx * &c.frame;
            }
            return;
        }
        let n = self.state_dim();
        self.model.input_matrix_into(x.as_slice(), &mut ws.g);
        let dpsi = c.dpsi(y.as_slice());
        let dy_dz = dpsi.clone().try_inverse().expect("unit lower-triangular");
        for (i, o) in out.iter_mut().enumerate() {
            let v = &c.frame_inv * ws.g.column(i);
            let dv = &c.frame_inv * &ws.jx[i] * &c.frame;
            let mut d = &dpsi * dv;
            for j in 0..n {
                for k in 0..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        s += c.corr_d2[j][l][k].eval(y.as_slice()) * v[l];
                    }
                    d[(j, k)] -= s;
                }
            }
            *o = d * &dy_dz;
        }
    }

    pub fn jacobians(&self, z: &[f64]) -> Vec<DMatrix<f64>> {
        let n = self.state_dim();
        let mut ws = self.workspace();
        let mut out = vec![DMatrix::zeros(n, n); self.input_dim()];
        self.jacobians_into(z, &mut ws, &mut out);
        out
    }

    /// Taylor expansions of `Z_i` about `z = 0`, truncated at `degree`.
    pub fn taylor_fields(&self, filtration: &LieFiltration, degree: usize) -> Vec<PolyField> {
        let n = self.state_dim();
        let basis = MonomialBasis::shared(n, degree);
        let c = &self.chart;
        let (gens_y, _) = fields_in_y(&self.model, filtration, &c.frame_inv, &basis, false);
        if c.corr.is_empty() {
            return gens_y;
        }
        // y(z) by forward substitution through the triangular corrections
        let mut y: Vec<Poly> = (0..n).map(|j| Poly::variable(&basis, j)).collect();
        for j in 0..n {
            let cj = rebase(&c.corr[j], &basis);
            let args: Vec<Poly> = y.clone();
            y[j] = Poly::variable(&basis, j) + cj.compose(&args);
        }
        let dpsi: Vec<Vec<Poly>> = (0..n)
            .map(|j| {
                (0..n)
                    .map(|l| {
                        let d = rebase(&c.corr_d1[j][l], &basis).compose(&y);
                        let id = if j == l { 1.0 } else { 0.0 };
                        Poly::constant_in(&basis, id) - d
                    })
                    .collect()
            })
            .collect();
        gens_y
            .iter()
            .map(|f| {
                let fy: Vec<Poly> = f.iter().map(|p| p.compose(&y)).collect();
                (0..n)
                    .map(|j| {
                        let mut acc = Poly::zero(&basis);
                        for l in 0..n {
                            acc = acc + &dpsi[j][l] * &fy[l];
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    /// Non-holonomic orders of `z_1, …, z_n` along the charted generators.
    pub fn coordinate_orders(&self, filtration: &LieFiltration) -> Result<Vec<usize>> {
        let wmax = filtration.max_weight();
        let jets = self.taylor_fields(filtration, chart_degree(wmax));
        let basis = jets[0][0].basis().clone();
        (0..self.state_dim())
            .map(|j| {
                nonholonomic_order_of(&Poly::variable(&basis, j), &jets, wmax)?
                    .ok_or(Error::OrderNotDetermined(j))
            })
            .collect()
    }
}

// Re-expresses a polynomial in another basis over the same variables.
fn rebase(p: &Poly, basis: &Arc<MonomialBasis>) -> Poly {
    let mut out = Poly::zero(basis);
    for (e, c) in p.terms() {
        if let Some(i) = basis.index_of(e) {
            out.coefficients_mut()[i] = c;
        }
    }
    out
}

/// Weighted degree `Σ_k w_k a_k` of a monomial.
pub fn weighted_degree(exps: &[u8], weights: &[usize]) -> usize {
    exps.iter().zip(weights).map(|(a, w)| *a as usize * w).sum()
}

/// The homogeneous nilpotent approximation `ż = Σ_i Ẑ_i(z) u_i`.
#[derive(Clone, Debug)]
pub struct HomogeneousApprox {
    /// `fields[i][j]` is component `j` of `Ẑ_i`, a polynomial in `z`.
    pub fields: Vec<PolyField>,
    /// State dilation exponents.
    pub r: Vec<usize>,
    /// Input dilation exponents.
    pub s: Vec<usize>,
    pub tau: i32,
}

impl HomogeneousApprox {
    /// Keeps the monomials of weighted degree `w_j − 1` in component `j` of
    /// the Taylor expansion of the charted fields.
    pub fn from_taylor(system: &ChartedSystem, filtration: &LieFiltration) -> Self {
        let w = &filtration.weights;
        let wmax = filtration.max_weight();
        let jets = system.taylor_fields(filtration, chart_degree(wmax));
        let basis = MonomialBasis::shared(system.state_dim(), wmax);
        let fields = jets
            .iter()
            .map(|f| {
                f.iter()
                    .enumerate()
                    .map(|(j, p)| {
                        let mut out = Poly::zero(&basis);
                        for (e, c) in p.terms() {
                            if weighted_degree(e, w) + 1 == w[j] && c.abs() >= COEFF_CHOP {
                                out.set_coefficient(e, c);
                            }
                        }
                        out
                    })
                    .collect()
            })
            .collect();
        HomogeneousApprox {
            fields,
            r: w.clone(),
            s: vec![1; system.input_dim()],
            tau: 0,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.r.len()
    }

    pub fn input_dim(&self) -> usize {
        self.fields.len()
    }

    /// `Ĝ(z)` with the fields as columns.
    pub fn input_matrix(&self, z: &[f64]) -> DMatrix<f64> {
        let n = self.state_dim();
        DMatrix::from_fn(n, self.input_dim(), |j, i| self.fields[i][j].eval(z))
    }

    /// Component `j` of every field depends on `z_1, …, z_{j−1}` only.
    pub fn is_triangular(&self) -> bool {
        self.fields.iter().all(|f| {
            f.iter()
                .enumerate()
                .all(|(j, p)| p.terms().all(|(e, _)| e[j..].iter().all(|a| *a == 0)))
        })
    }

    /// Largest coefficient among all brackets of exactly `depth` generators.
    pub fn bracket_magnitude(&self, depth: usize) -> f64 {
        let mut level: Vec<PolyField> = self.fields.clone();
        for _ in 1..depth {
            let mut next = Vec::new();
            for g in &self.fields {
                for w in &level {
                    next.push(poly_bracket(g, w));
                }
            }
            level = next;
        }
        level
            .iter()
            .flat_map(|f| f.iter().map(|p| p.max_abs_coefficient()))
            .fold(0.0, f64::max)
    }

    /// Coefficient table, one line per nonzero term: `field component exponents coefficient`.
    pub fn coefficient_table(&self) -> String {
        let mut out = String::new();
        for (i, f) in self.fields.iter().enumerate() {
            for (j, p) in f.iter().enumerate() {
                for (e, c) in p.terms() {
                    let e: Vec<String> = e.iter().map(|a| a.to_string()).collect();
                    out.push_str(&format!("{} {} [{}] {}\n", i + 1, j + 1, e.join(","), c));
                }
            }
        }
        out
    }

    /// Each field as a column of polynomial text.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for (i, f) in self.fields.iter().enumerate() {
            let comps: Vec<String> = f.iter().map(|p| p.to_text("z")).collect();
            out.push_str(&format!("Z{}^[-1] = ({})\n", i + 1, comps.join(", ")));
        }
        out
    }
}

/// Extracts the approximation by the dilation limit
/// `Ẑ_{i,j}(z) = lim_{ε→0} ε^{1−w_j} Z_{i,j}(Λ_ε z)`.
///
/// The limit is Richardson-extrapolated from three values of `ε` at sample
/// points, then the monomials of weighted degree `w_j − 1` are fitted by least
/// squares. A poor fit means the limit does not exist in the assumed form.
pub fn extract_homogeneous_approx(system: &ChartedSystem) -> Result<HomogeneousApprox> {
    let w = system.chart.weights.clone();
    let n = system.state_dim();
    let m = system.input_dim();
    let wmax = *w.iter().max().expect("non-empty");
    let basis = MonomialBasis::shared(n, wmax);

    let mut rng = ChaCha8Rng::seed_from_u64(0xd11a7e);
    let samples = (3 * basis.len()).max(24);
    let points: Vec<Vec<f64>> = (0..samples)
        .map(|_| (0..n).map(|_| rng.gen_range(-FIT_RADIUS..FIT_RADIUS)).collect())
        .collect();

    // limits[p] = n × m matrix of extrapolated limits at point p
    let mut ws = system.workspace();
    let mut g = DMatrix::zeros(n, m);
    let limits: Vec<DMatrix<f64>> = points
        .iter()
        .map(|z| {
            let phi: Vec<DMatrix<f64>> = RICHARDSON_EPS
                .iter()
                .map(|&eps| {
                    let zs: Vec<f64> = z.iter().zip(&w).map(|(v, wj)| v * eps.powi(*wj as i32)).collect();
                    system.input_matrix_into(&zs, &mut ws, &mut g);
                    let mut out = g.clone();
                    for j in 0..n {
                        let scale = eps.powi(1 - w[j] as i32);
                        out.row_mut(j).iter_mut().for_each(|v| *v *= scale);
                    }
                    out
                })
                .collect();
            let r1a = &phi[1] * 2.0 - &phi[0];
            let r1b = &phi[2] * 2.0 - &phi[1];
            (r1b * 4.0 - r1a) / 3.0
        })
        .collect();

    let mut fields = vec![vec![Poly::zero(&basis); n]; m];
    for j in 0..n {
        let monos: Vec<usize> = (0..basis.len())
            .filter(|&k| weighted_degree(basis.exponents(k), &w) + 1 == w[j])
            .collect();
        let a = DMatrix::from_fn(samples, monos.len(), |p, c| {
            let e = basis.exponents(monos[c]);
            e.iter()
                .enumerate()
                .map(|(v, &ex)| points[p][v].powi(ex as i32))
                .product()
        });
        let svd = a.clone().svd(true, true);
        for i in 0..m {
            let b = DVector::from_fn(samples, |p, _| limits[p][(j, i)]);
            let coef = svd.solve(&b, 1e-12).expect("svd with vectors");
            let residual = (&a * &coef - &b).amax() / b.amax().max(1.0);
            if residual > FIT_RESIDUAL_TOL || !residual.is_finite() {
                return Err(Error::DivergentLimit {
                    field: i,
                    component: j,
                    residual,
                });
            }
            for (c, &k) in monos.iter().enumerate() {
                if coef[c].abs() >= COEFF_CHOP {
                    fields[i][j].coefficients_mut()[k] = coef[c];
                }
            }
        }
    }
    Ok(HomogeneousApprox {
        fields,
        r: w,
        s: vec![1; m],
        tau: 0,
    })
}

/// Largest homogeneity defect over 200 seeded samples using the
/// approximation's own exponents.
pub fn verify_homogeneity(approx: &HomogeneousApprox) -> f64 {
    verify_homogeneity_with(approx, &approx.r, &approx.s, approx.tau)
}

/// `max ‖Ĝ(Λ_α z) Δ_α u − α^τ Λ_α Ĝ(z) u‖_∞` over samples with
/// `z, u ∈ [−1, 1]` and `α ∈ (0, 2]`.
pub fn verify_homogeneity_with(approx: &HomogeneousApprox, r: &[usize], s: &[usize], tau: i32) -> f64 {
    let n = approx.state_dim();
    let m = approx.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x40a0);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let alpha: f64 = 2.0 - rng.gen_range(0.0..2.0);
        let zs: Vec<f64> = z.iter().zip(r).map(|(v, ri)| v * alpha.powi(*ri as i32)).collect();
        let us = DVector::from_fn(m, |i, _| u[i] * alpha.powi(s[i] as i32));
        let lhs = approx.input_matrix(&zs) * us;
        let mut rhs = approx.input_matrix(&z) * &u * alpha.powi(tau);
        for j in 0..n {
            rhs[j] *= alpha.powi(r[j] as i32);
        }
        worst = worst.max((lhs - rhs).amax());
    }
    worst
}

/// Field values of a polynomial field at a point, as a vector.
pub fn field_at(field: &[Poly], z: &[f64]) -> DVector<f64> {
    DVector::from_vec(eval_field(field, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liealg::build_filtration;
    use crate::models::builtin_models;
    use nalgebra::dvector;

    fn setup(model: &VehicleModel, d: StateVector) -> (LieFiltration, ChartedSystem) {
        let f = build_filtration(model, &d, 6).unwrap();
        let chart = PrivilegedChart::new(&f, model).unwrap();
        let sys = ChartedSystem::new(model.clone(), Arc::new(chart)).unwrap();
        (f, sys)
    }

    fn random_states(n: usize, count: usize, scale: f64, seed: u64) -> Vec<StateVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale)))
            .collect()
    }

    #[test]
    fn unicycle_rotated_frame_at_any_setpoint() {
        let m = VehicleModel::unicycle();
        let d = dvector![1.0, -0.5, 0.9];
        let f = build_filtration(&m, &d, 4).unwrap();
        for x in random_states(3, 100, 3.0, 1) {
            let y = step1_transform(&f, &x).unwrap();
            let (dx, dy) = (x[0] - d[0], x[1] - d[1]);
            let want = dvector![
                dx * d[2].cos() + dy * d[2].sin(),
                x[2] - d[2],
                dx * d[2].sin() - dy * d[2].cos()
            ];
            assert!((y - want).amax() < 1e-12);
        }
    }

    #[test]
    fn printed_maps_at_the_origin() {
        let l = 0.2;
        let car = VehicleModel::kinematic_car(l).unwrap();
        let f = build_filtration(&car, &DVector::zeros(4), 4).unwrap();
        for x in random_states(4, 100, 2.0, 2) {
            let y = step1_transform(&f, &x).unwrap();
            let want = dvector![x[0], x[3], -l * x[2], l * x[1]];
            assert!((y - want).amax() < 1e-12);
        }

        let l1 = 0.19;
        let one = VehicleModel::one_trailer(l1).unwrap();
        let f = build_filtration(&one, &DVector::zeros(4), 4).unwrap();
        for x in random_states(4, 100, 2.0, 3) {
            let y = step1_transform(&f, &x).unwrap();
            let want = dvector![x[0], x[2], -x[1], l1 * (x[1] - l1 * x[3])];
            assert!((y - want).amax() < 1e-12);
        }

        let (l1, l2) = (0.2, 0.3);
        let two = VehicleModel::two_trailer(l1, l2).unwrap();
        let f = build_filtration(&two, &DVector::zeros(5), 5).unwrap();
        for x in random_states(5, 100, 2.0, 4) {
            let y = step1_transform(&f, &x).unwrap();
            let want = dvector![
                x[0],
                x[2],
                -x[1],
                x[1] * (l1 + l2) - x[3] * l1 * (l1 + l2) - x[4] * l2 * l2,
                -x[1] * l1 * l2 + x[3] * l1 * l1 * l2 + x[4] * l1 * l2 * l2
            ];
            assert!((&y - &want).amax() < 1e-12, "{y} vs {want}");
        }
    }

    #[test]
    fn no_corrections_at_the_origin() {
        for model in builtin_models() {
            let f = build_filtration(&model, &DVector::zeros(model.state_dim()), 6).unwrap();
            assert!(step2_corrections(&f, &model).unwrap().is_empty(), "{}", model.name());
        }
    }

    #[test]
    fn car_with_steering_offset_gets_corrections() {
        let car = VehicleModel::kinematic_car(0.2).unwrap();
        let (f, sys) = setup(&car, dvector![0.0, 0.0, 0.0, 0.4]);
        assert!(sys.chart.has_corrections());
        assert_eq!(sys.coordinate_orders(&f).unwrap(), f.weights);
    }

    #[test]
    fn privileged_orders_equal_weights() {
        for model in builtin_models() {
            let (f, sys) = setup(&model, DVector::zeros(model.state_dim()));
            assert_eq!(sys.coordinate_orders(&f).unwrap(), f.weights, "{}", model.name());
        }
    }

    #[test]
    fn chart_round_trip() {
        let car = VehicleModel::kinematic_car(0.2).unwrap();
        let offsets = [DVector::zeros(4), dvector![0.1, -0.2, 0.3, 0.4]];
        for d in offsets {
            let (_, sys) = setup(&car, d.clone());
            let c = &sys.chart;
            assert!(c.forward(&d).unwrap().amax() < 1e-15);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..200 {
                let mut z = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
                z *= 0.5 * rng.gen_range(0.0..1.0) / z.norm();
                let back = c.forward(&c.inverse(&z).unwrap()).unwrap();
                assert!((back - z).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn charted_fields_map_back_to_the_model() {
        let cases = [
            (VehicleModel::unicycle(), dvector![1.0, 1.0, 0.785]),
            (VehicleModel::kinematic_car(0.2).unwrap(), dvector![0.0, 0.0, 0.0, 0.3]),
            (VehicleModel::one_trailer(0.19).unwrap(), DVector::zeros(4)),
            (VehicleModel::two_trailer(0.2, 0.2).unwrap(), DVector::zeros(5)),
        ];
        for (model, d) in cases {
            let n = model.state_dim();
            let (_, sys) = setup(&model, d.clone());
            for x in random_states(n, 100, 0.5, 5) {
                let x = &x + &d;
                let z = sys.chart.forward(&x).unwrap();
                let gz = sys.input_matrix(z.as_slice());
                let back = sys.chart.inverse_jacobian(z.as_slice()) * gz;
                let gx = model.input_matrix(&x);
                assert!((back - gx).amax() < 1e-10, "{}", model.name());
            }
        }
    }

    #[test]
    fn charted_jacobians_match_finite_differences() {
        let car = VehicleModel::kinematic_car(0.2).unwrap();
        for d in [DVector::zeros(4), dvector![0.0, 0.0, 0.0, 0.3]] {
            let (_, sys) = setup(&car, d);
            for z in random_states(4, 20, 0.3, 6) {
                let jac = sys.jacobians(z.as_slice());
                for k in 0..4 {
                    let h = 1e-6;
                    let mut zp = z.clone();
                    zp[k] += h;
                    let mut zm = z.clone();
                    zm[k] -= h;
                    let col = (sys.input_matrix(zp.as_slice()) - sys.input_matrix(zm.as_slice())) / (2.0 * h);
                    for i in 0..2 {
                        let diff = (jac[i].column(k) - col.column(i)).amax();
                        assert!(diff < 1e-6 * (1.0 + jac[i].amax()), "diff {diff}");
                    }
                }
            }
        }
    }

    fn expect_chain(approx: &HomogeneousApprox) {
        let n = approx.state_dim();
        let basis = approx.fields[0][0].basis().clone();
        for j in 0..n {
            let want1 = match j {
                0 => Poly::constant_in(&basis, 1.0),
                1 => Poly::zero(&basis),
                _ => Poly::variable(&basis, j - 1) * -1.0,
            };
            let want2 = if j == 1 { Poly::constant_in(&basis, 1.0) } else { Poly::zero(&basis) };
            let e1 = (&approx.fields[0][j] - &want1).max_abs_coefficient();
            let e2 = (&approx.fields[1][j] - &want2).max_abs_coefficient();
            assert!(e1 < 1e-6 && e2 < 1e-6, "component {j}: {e1} {e2}\n{}", approx.describe());
        }
    }

    #[test]
    fn printed_approximations() {
        for model in builtin_models() {
            let (f, sys) = setup(&model, DVector::zeros(model.state_dim()));
            let approx = extract_homogeneous_approx(&sys).unwrap();
            expect_chain(&approx);
            let taylor = HomogeneousApprox::from_taylor(&sys, &f);
            for (a, b) in approx.fields.iter().zip(&taylor.fields) {
                for (p, q) in a.iter().zip(b) {
                    assert!((p - q).max_abs_coefficient() < 1e-6);
                }
            }
            assert!(verify_homogeneity(&approx) < 1e-10);
        }
    }

    #[test]
    fn approximations_are_triangular_and_nilpotent() {
        for model in builtin_models() {
            let (f, sys) = setup(&model, DVector::zeros(model.state_dim()));
            let approx = HomogeneousApprox::from_taylor(&sys, &f);
            assert!(approx.is_triangular());
            assert_eq!(approx.bracket_magnitude(f.max_weight() + 1), 0.0);
            assert!(approx.bracket_magnitude(f.max_weight()) > 0.1);
        }
    }

    #[test]
    fn wrong_weights_break_homogeneity() {
        let m = VehicleModel::unicycle();
        let (_, sys) = setup(&m, DVector::zeros(3));
        let approx = extract_homogeneous_approx(&sys).unwrap();
        assert!(verify_homogeneity_with(&approx, &[1, 1, 2], &[1, 1], 0) < 1e-12);
        assert!(verify_homogeneity_with(&approx, &[1, 1, 1], &[1, 1], 0) > 0.1);
    }

    #[test]
    fn non_privileged_chart_has_divergent_limit() {
        let car = VehicleModel::kinematic_car(0.2).unwrap();
        let f = build_filtration(&car, &DVector::zeros(4), 4).unwrap();
        let mut chart = PrivilegedChart::translation(&DVector::zeros(4));
        chart.weights = f.weights.clone();
        let sys = ChartedSystem::new(car, Arc::new(chart)).unwrap();
        assert!(matches!(
            extract_homogeneous_approx(&sys),
            Err(Error::DivergentLimit { .. })
        ));
    }

    #[test]
    fn approximation_error_has_the_expected_order() {
        let model = VehicleModel::kinematic_car(0.2).unwrap();
        let (_, sys) = setup(&model, DVector::zeros(4));
        let approx = extract_homogeneous_approx(&sys).unwrap();
        let w = &sys.chart.weights;
        let z0 = [0.6, -0.4, 0.5, 0.3];
        let eps: Vec<f64> = (0..9).map(|k| 1e-3 * 10f64.powf(k as f64 / 4.0)).collect();
        for j in 0..4 {
            let mut pts = Vec::new();
            for &e in &eps {
                let z: Vec<f64> = z0.iter().zip(w).map(|(v, wj)| v * e.powi(*wj as i32)).collect();
                let err = (sys.input_matrix(&z) - approx.input_matrix(&z)).row(j).amax();
                pts.push((e.ln(), err.ln()));
            }
            if pts.iter().all(|p| p.1 < (1e-13f64).ln()) {
                continue; // exact in this component
            }
            let k = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
            let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
                / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
            assert!(slope >= w[j] as f64 - 1.0 + 0.9, "component {j}: slope {slope}");
        }
    }
}
