//! Truncated multivariate polynomials.
//!
//! A [`Poly`] holds the coefficients of a polynomial in `n` variables up to a
//! fixed total degree `K`. Products drop every monomial above `K`, so a `Poly`
//! doubles as a Taylor jet: evaluating a smooth function on `Poly` arguments
//! yields its Taylor expansion to order `K`. Lie brackets, non-holonomic
//! derivatives and chart compositions are all computed on this type.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

/// Scalar type the vehicle fields are written against.
///
/// Implemented by `f64` for plain evaluation and by [`Poly`] for Taylor
/// expansion.
pub trait Real:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Mul<f64, Output = Self>
    + Add<f64, Output = Self>
{
    /// Constant `c` living in the same space as `self`.
    fn constant(&self, c: f64) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn constant(&self, c: f64) -> Self {
        c
    }
    #[inline]
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    #[inline]
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
}

/// Graded monomial ordering with precomputed product and derivative tables.
#[derive(Debug)]
pub struct MonomialBasis {
    nvars: usize,
    degree: usize,
    exponents: Vec<Vec<u8>>,
    degrees: Vec<usize>,
    lookup: HashMap<Vec<u8>, usize>,
    products: Vec<(u32, u32, u32)>,
    // derivs[v][m] = (target monomial, factor) of d/dx_v applied to monomial m
    derivs: Vec<Vec<Option<(usize, f64)>>>,
}

fn compositions(nvars: usize, total: usize, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if prefix.len() + 1 == nvars {
        prefix.push(total as u8);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in (0..=total).rev() {
        prefix.push(first as u8);
        compositions(nvars, total - first, prefix, out);
        prefix.pop();
    }
}

impl MonomialBasis {
    fn build(nvars: usize, degree: usize) -> Self {
        assert!(nvars > 0, "polynomial basis needs at least one variable");
        let mut exponents = Vec::new();
        for deg in 0..=degree {
            compositions(nvars, deg, &mut Vec::with_capacity(nvars), &mut exponents);
        }
        let degrees: Vec<usize> = exponents
            .iter()
            .map(|e| e.iter().map(|&a| a as usize).sum())
            .collect();
        let lookup: HashMap<Vec<u8>, usize> = exponents
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();

        let mut products = Vec::new();
        let mut buf = vec![0u8; nvars];
        for (i, ei) in exponents.iter().enumerate() {
            for (j, ej) in exponents.iter().enumerate() {
                // graded order: every later j has at least this degree
                if degrees[i] + degrees[j] > degree {
                    break;
                }
                for v in 0..nvars {
                    buf[v] = ei[v] + ej[v];
                }
                let k = lookup[&buf];
                products.push((i as u32, j as u32, k as u32));
            }
        }

        let mut derivs = vec![vec![None; exponents.len()]; nvars];
        for (m, e) in exponents.iter().enumerate() {
            for v in 0..nvars {
                if e[v] > 0 {
                    let mut t = e.clone();
                    t[v] -= 1;
                    derivs[v][m] = Some((lookup[&t], e[v] as f64));
                }
            }
        }

        MonomialBasis {
            nvars,
            degree,
            exponents,
            degrees,
            lookup,
            products,
            derivs,
        }
    }

    /// Shared basis for `nvars` variables truncated at total degree `degree`.
    pub fn shared(nvars: usize, degree: usize) -> Arc<MonomialBasis> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<MonomialBasis>>>> =
            OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("basis cache poisoned");
        guard
            .entry((nvars, degree))
            .or_insert_with(|| Arc::new(MonomialBasis::build(nvars, degree)))
            .clone()
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self, m: usize) -> &[u8] {
        &self.exponents[m]
    }

    pub fn total_degree(&self, m: usize) -> usize {
        self.degrees[m]
    }

    pub fn index_of(&self, exps: &[u8]) -> Option<usize> {
        self.lookup.get(exps).copied()
    }
}

/// Polynomial over a shared [`MonomialBasis`].
#[derive(Clone)]
pub struct Poly {
    basis: Arc<MonomialBasis>,
    coef: Vec<f64>,
}

impl Poly {
    pub fn zero(basis: &Arc<MonomialBasis>) -> Self {
        Poly {
            basis: basis.clone(),
            coef: vec![0.0; basis.len()],
        }
    }

    pub fn constant_in(basis: &Arc<MonomialBasis>, c: f64) -> Self {
        let mut p = Poly::zero(basis);
        p.coef[0] = c;
        p
    }

    /// The coordinate function `x_v`.
    pub fn variable(basis: &Arc<MonomialBasis>, v: usize) -> Self {
        let mut p = Poly::zero(basis);
        if basis.degree >= 1 {
            let mut e = vec![0u8; basis.nvars];
            e[v] = 1;
            p.coef[basis.lookup[&e]] = 1.0;
        }
        p
    }

    /// Affine polynomial `c + Σ_v a_v x_v`.
    pub fn affine(basis: &Arc<MonomialBasis>, c: f64, linear: &[f64]) -> Self {
        let mut p = Poly::constant_in(basis, c);
        for (v, &a) in linear.iter().enumerate() {
            if a != 0.0 {
                p.add_scaled_monomial_var(v, a);
            }
        }
        p
    }

    fn add_scaled_monomial_var(&mut self, v: usize, a: f64) {
        if self.basis.degree == 0 {
            return;
        }
        let mut e = vec![0u8; self.basis.nvars];
        e[v] = 1;
        let idx = self.basis.lookup[&e];
        self.coef[idx] += a;
    }

    pub fn basis(&self) -> &Arc<MonomialBasis> {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coef
    }

    pub fn value_at_origin(&self) -> f64 {
        self.coef[0]
    }

    pub fn coefficient(&self, exps: &[u8]) -> f64 {
        self.basis.index_of(exps).map_or(0.0, |i| self.coef[i])
    }

    pub fn set_coefficient(&mut self, exps: &[u8], c: f64) {
        let i = self
            .basis
            .index_of(exps)
            .expect("monomial outside truncation degree");
        self.coef[i] = c;
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.coef.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Partial derivative with respect to variable `v`.
    pub fn derivative(&self, v: usize) -> Poly {
        let mut out = Poly::zero(&self.basis);
        for (m, c) in self.coef.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            if let Some((t, f)) = self.basis.derivs[v][m] {
                out.coef[t] += c * f;
            }
        }
        out
    }

    /// Evaluates at a point.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.basis.nvars);
        let mut acc = 0.0;
        for (m, c) in self.coef.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            let mut term = *c;
            for (v, &a) in self.basis.exponents[m].iter().enumerate() {
                if a > 0 {
                    term *= x[v].powi(a as i32);
                }
            }
            acc += term;
        }
        acc
    }

    /// Substitutes `x_v = args[v]`. The arguments may live in a different basis;
    /// the result lives in theirs.
    pub fn compose(&self, args: &[Poly]) -> Poly {
        assert_eq!(args.len(), self.basis.nvars);
        let target = args[0].basis.clone();
        let deg = self.basis.degree;
        // powers[v][a] = args[v]^a
        let mut powers: Vec<Vec<Poly>> = Vec::with_capacity(args.len());
        for arg in args {
            let mut row = vec![Poly::constant_in(&target, 1.0)];
            for a in 1..=deg {
                let next = &row[a - 1] * arg;
                row.push(next);
            }
            powers.push(row);
        }
        let mut out = Poly::zero(&target);
        for (m, c) in self.coef.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            let mut term = Poly::constant_in(&target, *c);
            for (v, &a) in self.basis.exponents[m].iter().enumerate() {
                if a > 0 {
                    term = &term * &powers[v][a as usize];
                }
            }
            out = out + term;
        }
        out
    }

    /// Copy truncated to monomials of total degree at most `max_degree`.
    pub fn truncated(&self, max_degree: usize) -> Poly {
        let mut out = self.clone();
        for (m, c) in out.coef.iter_mut().enumerate() {
            if self.basis.degrees[m] > max_degree {
                *c = 0.0;
            }
        }
        out
    }

    /// Sets coefficients with magnitude below `tol` to zero.
    pub fn chop(&mut self, tol: f64) {
        for c in &mut self.coef {
            if c.abs() < tol {
                *c = 0.0;
            }
        }
    }

    /// Iterates over the non-zero terms as `(exponents, coefficient)`.
    pub fn terms(&self) -> impl Iterator<Item = (&[u8], f64)> + '_ {
        self.coef
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(move |(m, c)| (self.basis.exponents[m].as_slice(), *c))
    }

    /// Renders the polynomial with variables named `{prefix}{index+1}`.
    pub fn to_text(&self, prefix: &str) -> String {
        let mut parts = Vec::new();
        for (exps, c) in self.terms() {
            let mut mono = Vec::new();
            for (v, &a) in exps.iter().enumerate() {
                match a {
                    0 => {}
                    1 => mono.push(format!("{prefix}{}", v + 1)),
                    _ => mono.push(format!("{prefix}{}^{a}", v + 1)),
                }
            }
            let body = if mono.is_empty() {
                format!("{c}")
            } else if c == 1.0 {
                mono.join("*")
            } else if c == -1.0 {
                format!("-{}", mono.join("*"))
            } else {
                format!("{c}*{}", mono.join("*"))
            };
            parts.push(body);
        }
        if parts.is_empty() {
            "0".to_string()
        } else {
            parts.join(" + ").replace("+ -", "- ")
        }
    }

    fn nilpotent_part(&self) -> Poly {
        let mut h = self.clone();
        h.coef[0] = 0.0;
        h
    }

    fn recip(&self) -> Poly {
        let c = self.coef[0];
        assert!(c != 0.0, "reciprocal of a jet with zero constant term");
        // 1/(c+h) = (1/c) Σ (-h/c)^k, h nilpotent of order > degree
        let q = self.nilpotent_part() * (-1.0 / c);
        let mut sum = Poly::constant_in(&self.basis, 1.0);
        let mut pow = Poly::constant_in(&self.basis, 1.0);
        for _ in 0..self.basis.degree {
            pow = &pow * &q;
            sum = sum + pow.clone();
        }
        sum * (1.0 / c)
    }

    // (cos h, sin h) for a nilpotent h
    fn cos_sin_nilpotent(h: &Poly) -> (Poly, Poly) {
        let basis = &h.basis;
        let mut cos = Poly::constant_in(basis, 1.0);
        let mut sin = Poly::zero(basis);
        let mut pow = Poly::constant_in(basis, 1.0);
        let mut fact = 1.0;
        for k in 1..=basis.degree {
            pow = &pow * h;
            fact *= k as f64;
            let term = pow.clone() * (1.0 / fact);
            match k % 4 {
                0 => cos = cos + term,
                1 => sin = sin + term,
                2 => cos = cos - term,
                _ => sin = sin - term,
            }
        }
        (cos, sin)
    }

    fn same_basis(&self, other: &Poly) {
        debug_assert!(
            Arc::ptr_eq(&self.basis, &other.basis),
            "polynomials from different bases"
        );
    }
}

impl fmt::Debug for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Poly({})", self.to_text("x"))
    }
}

impl PartialEq for Poly {
    fn eq(&self, other: &Self) -> bool {
        self.basis.nvars == other.basis.nvars
            && self.basis.degree == other.basis.degree
            && self.coef == other.coef
    }
}

impl<'a> Add<&'a Poly> for &'a Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        self.same_basis(rhs);
        let coef = self.coef.iter().zip(&rhs.coef).map(|(a, b)| a + b).collect();
        Poly {
            basis: self.basis.clone(),
            coef,
        }
    }
}

impl Add for Poly {
    type Output = Poly;
    fn add(mut self, rhs: Poly) -> Poly {
        self.same_basis(&rhs);
        for (a, b) in self.coef.iter_mut().zip(&rhs.coef) {
            *a += b;
        }
        self
    }
}

impl<'a> Sub<&'a Poly> for &'a Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        self.same_basis(rhs);
        let coef = self.coef.iter().zip(&rhs.coef).map(|(a, b)| a - b).collect();
        Poly {
            basis: self.basis.clone(),
            coef,
        }
    }
}

impl Sub for Poly {
    type Output = Poly;
    fn sub(mut self, rhs: Poly) -> Poly {
        self.same_basis(&rhs);
        for (a, b) in self.coef.iter_mut().zip(&rhs.coef) {
            *a -= b;
        }
        self
    }
}

impl<'a> Mul<&'a Poly> for &'a Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        self.same_basis(rhs);
        let mut out = Poly::zero(&self.basis);
        let a = &self.coef;
        let b = &rhs.coef;
        for &(i, j, k) in &self.basis.products {
            let ai = a[i as usize];
            if ai == 0.0 {
                continue;
            }
            out.coef[k as usize] += ai * b[j as usize];
        }
        out
    }
}

impl Mul for Poly {
    type Output = Poly;
    fn mul(self, rhs: Poly) -> Poly {
        &self * &rhs
    }
}

impl Mul<f64> for Poly {
    type Output = Poly;
    fn mul(mut self, rhs: f64) -> Poly {
        for c in &mut self.coef {
            *c *= rhs;
        }
        self
    }
}

impl Add<f64> for Poly {
    type Output = Poly;
    fn add(mut self, rhs: f64) -> Poly {
        self.coef[0] += rhs;
        self
    }
}

impl Div for Poly {
    type Output = Poly;
    fn div(self, rhs: Poly) -> Poly {
        &self * &rhs.recip()
    }
}

impl Neg for Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self * -1.0
    }
}

impl Real for Poly {
    fn constant(&self, c: f64) -> Self {
        Poly::constant_in(&self.basis, c)
    }

    fn sin(&self) -> Self {
        let c = self.coef[0];
        let (ch, sh) = Poly::cos_sin_nilpotent(&self.nilpotent_part());
        ch * c.sin() + sh * c.cos()
    }

    fn cos(&self) -> Self {
        let c = self.coef[0];
        let (ch, sh) = Poly::cos_sin_nilpotent(&self.nilpotent_part());
        ch * c.cos() - sh * c.sin()
    }
}

/// Polynomial vector field, one polynomial per component.
pub type PolyField = Vec<Poly>;

/// Lie derivative `X f = Σ_k X_k ∂f/∂x_k`.
pub fn lie_derivative(f: &Poly, field: &[Poly]) -> Poly {
    let mut out = Poly::zero(f.basis());
    for (k, xk) in field.iter().enumerate() {
        let dk = f.derivative(k);
        if dk.max_abs_coefficient() == 0.0 {
            continue;
        }
        out = out + xk * &dk;
    }
    out
}

/// Lie bracket `[X, Y] = (∂Y/∂x) X − (∂X/∂x) Y` of polynomial fields.
pub fn poly_bracket(x: &[Poly], y: &[Poly]) -> PolyField {
    x.iter()
        .zip(y)
        .map(|(xj, yj)| lie_derivative(yj, x) - lie_derivative(xj, y))
        .collect()
}

pub fn eval_field(field: &[Poly], at: &[f64]) -> Vec<f64> {
    field.iter().map(|p| p.eval(at)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_sizes_are_binomial() {
        // C(n + K, K)
        assert_eq!(MonomialBasis::shared(3, 4).len(), 35);
        assert_eq!(MonomialBasis::shared(5, 5).len(), 252);
        assert_eq!(MonomialBasis::shared(1, 6).len(), 7);
    }

    #[test]
    fn sin_cos_match_taylor_series() {
        let b = MonomialBasis::shared(1, 7);
        let x = Poly::variable(&b, 0) + 0.3;
        let s = x.sin();
        // derivatives of sin at 0.3: sin, cos, -sin, -cos, ...
        let expect = [
            0.3f64.sin(),
            0.3f64.cos(),
            -0.3f64.sin() / 2.0,
            -0.3f64.cos() / 6.0,
            0.3f64.sin() / 24.0,
        ];
        for (k, e) in expect.iter().enumerate() {
            assert!((s.coefficient(&[k as u8]) - e).abs() < 1e-15);
        }
        let c = x.cos();
        assert!((c.coefficient(&[1]) + 0.3f64.sin()).abs() < 1e-15);
        let one = s.clone() * s + c.clone() * c;
        assert!((one.value_at_origin() - 1.0).abs() < 1e-15);
        assert!(one.coefficients()[1..].iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn division_inverts_multiplication() {
        let b = MonomialBasis::shared(2, 5);
        let p = Poly::variable(&b, 0) * 2.0 + Poly::variable(&b, 1) + 1.5;
        let q = Poly::variable(&b, 1).cos() + 0.5;
        let r = (p.clone() * q.clone()) / q;
        for (a, e) in r.coefficients().iter().zip(p.coefficients()) {
            assert!((a - e).abs() < 1e-13);
        }
    }

    #[test]
    fn derivative_and_eval_agree_with_hand_values() {
        let b = MonomialBasis::shared(2, 3);
        let x = Poly::variable(&b, 0);
        let y = Poly::variable(&b, 1);
        let p = &(&x * &x) * &y + y.clone() * 3.0;
        assert_eq!(p.eval(&[2.0, 1.0]), 7.0);
        let dx = p.derivative(0);
        assert_eq!(dx.eval(&[2.0, 1.0]), 4.0);
        let dy = p.derivative(1);
        assert_eq!(dy.eval(&[2.0, 5.0]), 7.0);
    }

    #[test]
    fn compose_substitutes_linear_maps() {
        let b = MonomialBasis::shared(2, 4);
        let x = Poly::variable(&b, 0);
        let y = Poly::variable(&b, 1);
        let p = &x * &y;
        // x = u + v, y = u - v  =>  u^2 - v^2
        let q = p.compose(&[&x + &y, &x - &y]);
        assert_eq!(q.coefficient(&[2, 0]), 1.0);
        assert_eq!(q.coefficient(&[0, 2]), -1.0);
        assert_eq!(q.coefficient(&[1, 1]), 0.0);
    }

    #[test]
    fn bracket_of_unicycle_polynomial_fields() {
        // X1 = (1, 0, -x2), X2 = (0, 1, 0): [X1, X2] = (0, 0, 1)
        let b = MonomialBasis::shared(3, 3);
        let zero = Poly::zero(&b);
        let one = Poly::constant_in(&b, 1.0);
        let x1 = vec![one.clone(), zero.clone(), -Poly::variable(&b, 1)];
        let x2 = vec![zero.clone(), one, zero];
        let br = poly_bracket(&x1, &x2);
        assert_eq!(eval_field(&br, &[0.3, -0.2, 0.7]), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn text_rendering() {
        let b = MonomialBasis::shared(3, 2);
        let p = Poly::variable(&b, 1) * -1.0 + 1.0;
        assert_eq!(p.to_text("z"), "1 - z2");
        assert_eq!(Poly::zero(&b).to_text("z"), "0");
    }
}
