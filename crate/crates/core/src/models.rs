//! Driftless kinematic vehicle models `ẋ = G(x) u = Σ_i X_i(x) u_i`.
//!
//! The four built-in vehicles are written once against [`Real`], so the same
//! code yields plain values and Taylor expansions. New models plug in through
//! [`FieldDefinition`].

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::poly::{MonomialBasis, Poly, PolyField, Real};

/// State of a vehicle. Angles are stored unwrapped, in radians.
pub type StateVector = DVector<f64>;
pub type InputVector = DVector<f64>;

/// Definition of the input vector fields of a driftless system.
///
/// Implementors write each field once, generic over the scalar type, and
/// optionally provide hand-coded Jacobians.
pub trait FieldDefinition: Send + Sync + fmt::Debug + 'static {
    fn name(&self) -> String;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// Named geometric constants.
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    /// Writes `X_i(x)_j` into `out[i * n_x + j]`. `out` arrives zeroed.
    fn write_fields<S: Real>(&self, x: &[S], out: &mut [S]);

    /// Writes `∂X_i/∂x` into `out[i]`. Return `false` to fall back to central
    /// finite differences.
    fn write_jacobians(&self, _x: &[f64], _out: &mut [DMatrix<f64>]) -> bool {
        false
    }
}

// Object-safe view of a `FieldDefinition`.
trait DynFields: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn params(&self) -> BTreeMap<String, f64>;
    fn eval(&self, x: &[f64], out: &mut [f64]);
    fn eval_poly(&self, x: &[Poly]) -> Vec<Poly>;
    fn jacobians(&self, x: &[f64], out: &mut [DMatrix<f64>]) -> bool;
}

impl<T: FieldDefinition> DynFields for T {
    fn name(&self) -> String {
        FieldDefinition::name(self)
    }
    fn state_dim(&self) -> usize {
        FieldDefinition::state_dim(self)
    }
    fn input_dim(&self) -> usize {
        FieldDefinition::input_dim(self)
    }
    fn params(&self) -> BTreeMap<String, f64> {
        FieldDefinition::params(self)
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        self.write_fields(x, out);
    }
    fn eval_poly(&self, x: &[Poly]) -> Vec<Poly> {
        let n = FieldDefinition::state_dim(self) * FieldDefinition::input_dim(self);
        let mut out = vec![x[0].constant(0.0); n];
        self.write_fields(x, &mut out);
        out
    }
    fn jacobians(&self, x: &[f64], out: &mut [DMatrix<f64>]) -> bool {
        self.write_jacobians(x, out)
    }
}

/// A driftless vehicle model with input bounds.
///
/// Immutable after construction; cloning shares the field definition.
#[derive(Clone, Debug)]
pub struct VehicleModel {
    fields: Arc<dyn DynFields>,
    input_bounds: Vec<(f64, f64)>,
}

impl VehicleModel {
    /// Wraps a user-defined field set. Jacobians fall back to finite
    /// differences unless the definition supplies them.
    ///
    /// Fully actuated systems (`n_u = n_x`) are accepted so that analysis
    /// routines can be exercised on them; vehicles proper have `n_u < n_x`.
    pub fn custom<F: FieldDefinition>(def: F, input_bounds: Vec<(f64, f64)>) -> Result<Self> {
        let n_x = def.state_dim();
        let n_u = def.input_dim();
        if n_x == 0 || n_u == 0 || n_u > n_x {
            return Err(Error::InvalidParameter(format!(
                "model `{}` has n_x = {n_x}, n_u = {n_u}",
                def.name()
            )));
        }
        check_len("input bounds", n_u, input_bounds.len())?;
        validate_bounds(&input_bounds)?;
        Ok(VehicleModel {
            fields: Arc::new(def),
            input_bounds,
        })
    }

    /// Differential-drive robot, state `(x, y, θ)`, inputs `(v, ω)`.
    pub fn unicycle() -> Self {
        Self::custom(Unicycle, vec![(-1.0, 1.0); 2]).expect("valid built-in")
    }

    /// Front-wheel driven car with axle distance `l`, state `(x, y, θ, φ)`.
    pub fn kinematic_car(l: f64) -> Result<Self> {
        positive("l", l)?;
        Self::custom(KinematicCar { l }, vec![(-1.0, 1.0); 2])
    }

    /// Unicycle towing one on-axle trailer, state `(x, y, θ, θ_1)`.
    pub fn one_trailer(l1: f64) -> Result<Self> {
        positive("l1", l1)?;
        Self::custom(
            OneTrailer { l1 },
            vec![(-0.4, 0.4), (-PI / 8.0, PI / 8.0)],
        )
    }

    /// Unicycle towing two on-axle trailers, state `(x, y, θ, θ_1, θ_2)`.
    pub fn two_trailer(l1: f64, l2: f64) -> Result<Self> {
        positive("l1", l1)?;
        positive("l2", l2)?;
        Self::custom(TwoTrailer { l1, l2 }, vec![(-1.0, 1.0); 2])
    }

    /// Looks a built-in up by name: `unicycle`, `kinematic_car`,
    /// `one_trailer` or `two_trailer`. Missing lengths default to 0.2 m.
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let allowed: &[&str] = match name {
            "unicycle" => &[],
            "kinematic_car" => &["l"],
            "one_trailer" => &["l1"],
            "two_trailer" => &["l1", "l2"],
            other => return Err(Error::UnknownModel(other.to_string())),
        };
        if let Some(bad) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::InvalidParameter(format!(
                "model `{name}` has no parameter `{bad}`"
            )));
        }
        let get = |k: &str| params.get(k).copied().unwrap_or(0.2);
        match name {
            "unicycle" => Ok(Self::unicycle()),
            "kinematic_car" => Self::kinematic_car(get("l")),
            "one_trailer" => Self::one_trailer(get("l1")),
            _ => Self::two_trailer(get("l1"), get("l2")),
        }
    }

    /// Replaces the input bounds.
    pub fn with_input_bounds(mut self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        check_len("input bounds", self.input_dim(), bounds.len())?;
        validate_bounds(&bounds)?;
        self.input_bounds = bounds;
        Ok(self)
    }

    pub fn name(&self) -> String {
        self.fields.name()
    }

    pub fn state_dim(&self) -> usize {
        self.fields.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.fields.input_dim()
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        self.fields.params()
    }

    pub fn input_bounds(&self) -> &[(f64, f64)] {
        &self.input_bounds
    }

    /// `G(x)` written into a preallocated `n_x × n_u` matrix.
    pub fn input_matrix_into(&self, x: &[f64], g: &mut DMatrix<f64>) {
        debug_assert_eq!(g.shape(), (self.state_dim(), self.input_dim()));
        self.fields.eval(x, g.as_mut_slice());
    }

    pub fn input_matrix(&self, x: &StateVector) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.state_dim(), self.input_dim());
        self.input_matrix_into(x.as_slice(), &mut g);
        g
    }

    /// The i-th input vector field at `x`.
    pub fn field(&self, i: usize, x: &StateVector) -> DVector<f64> {
        self.input_matrix(x).column(i).into_owned()
    }

    /// `∂X_i/∂x` for every field, analytic when available.
    pub fn jacobians_into(&self, x: &[f64], out: &mut [DMatrix<f64>]) {
        if !self.fields.jacobians(x, out) {
            for (i, jac) in out.iter_mut().enumerate() {
                *jac = self.fd_jacobian(i, x);
            }
        }
    }

    pub fn field_jacobian(&self, i: usize, x: &StateVector) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut out = vec![DMatrix::zeros(n, n); self.input_dim()];
        self.jacobians_into(x.as_slice(), &mut out);
        out.swap_remove(i)
    }

    /// Central-difference Jacobian of field `i` with step `1e-6 (1 + |x_k|)`.
    pub fn fd_jacobian(&self, i: usize, x: &[f64]) -> DMatrix<f64> {
        let n = self.state_dim();
        let m = self.input_dim();
        let mut jac = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        let mut gp = vec![0.0; n * m];
        let mut gm = vec![0.0; n * m];
        for k in 0..n {
            let h = 1e-6 * (1.0 + x[k].abs());
            xp[k] = x[k] + h;
            self.fields.eval(&xp, &mut gp);
            xp[k] = x[k] - h;
            self.fields.eval(&xp, &mut gm);
            xp[k] = x[k];
            for j in 0..n {
                jac[(j, k)] = (gp[i * n + j] - gm[i * n + j]) / (2.0 * h);
            }
        }
        jac
    }

    /// `ẋ = G(x) u`. Input bounds are not enforced here.
    pub fn dynamics(&self, x: &StateVector, u: &InputVector) -> Result<StateVector> {
        check_len("state", self.state_dim(), x.len())?;
        check_len("input", self.input_dim(), u.len())?;
        Ok(self.input_matrix(x) * u)
    }

    /// Taylor expansion of every field about `d`, in the variables
    /// `ξ = x − d`, truncated at the degree of `basis`.
    pub fn taylor_fields(&self, d: &[f64], basis: &Arc<MonomialBasis>) -> Vec<PolyField> {
        let n = self.state_dim();
        let args: Vec<Poly> = (0..n)
            .map(|k| Poly::variable(basis, k) + d[k])
            .collect();
        self.split_fields(self.fields.eval_poly(&args))
    }

    /// Fields evaluated on polynomial arguments (a Taylor jet).
    pub fn fields_on(&self, x: &[Poly]) -> Vec<PolyField> {
        self.split_fields(self.fields.eval_poly(x))
    }

    fn split_fields(&self, flat: Vec<Poly>) -> Vec<PolyField> {
        let n = self.state_dim();
        flat.chunks(n).map(|c| c.to_vec()).collect()
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

fn validate_bounds(bounds: &[(f64, f64)]) -> Result<()> {
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo <= 0.0 && 0.0 <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "input bound {i} = [{lo}, {hi}] must be finite and contain 0"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Unicycle;

impl FieldDefinition for Unicycle {
    fn name(&self) -> String {
        "unicycle".into()
    }
    fn state_dim(&self) -> usize {
        3
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn write_fields<S: Real>(&self, x: &[S], out: &mut [S]) {
        let th = &x[2];
        out[0] = th.cos();
        out[1] = th.sin();
        out[5] = th.constant(1.0);
    }
    fn write_jacobians(&self, x: &[f64], out: &mut [DMatrix<f64>]) -> bool {
        let (s, c) = x[2].sin_cos();
        out[0].fill(0.0);
        out[0][(0, 2)] = -s;
        out[0][(1, 2)] = c;
        out[1].fill(0.0);
        true
    }
}

#[derive(Debug, Clone, Copy)]
struct KinematicCar {
    l: f64,
}

impl FieldDefinition for KinematicCar {
    fn name(&self) -> String {
        "kinematic_car".into()
    }
    fn state_dim(&self) -> usize {
        4
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("l".to_string(), self.l)])
    }
    fn write_fields<S: Real>(&self, x: &[S], out: &mut [S]) {
        let (th, phi) = (&x[2], &x[3]);
        let cphi = phi.cos();
        out[0] = th.cos() * cphi.clone();
        out[1] = th.sin() * cphi;
        out[2] = phi.sin() * (1.0 / self.l);
        out[7] = th.constant(1.0);
    }
    fn write_jacobians(&self, x: &[f64], out: &mut [DMatrix<f64>]) -> bool {
        let (st, ct) = x[2].sin_cos();
        let (sp, cp) = x[3].sin_cos();
        let j = &mut out[0];
        j.fill(0.0);
        j[(0, 2)] = -st * cp;
        j[(1, 2)] = ct * cp;
        j[(0, 3)] = -ct * sp;
        j[(1, 3)] = -st * sp;
        j[(2, 3)] = cp / self.l;
        out[1].fill(0.0);
        true
    }
}

#[derive(Debug, Clone, Copy)]
struct OneTrailer {
    l1: f64,
}

impl FieldDefinition for OneTrailer {
    fn name(&self) -> String {
        "one_trailer".into()
    }
    fn state_dim(&self) -> usize {
        4
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("l1".to_string(), self.l1)])
    }
    fn write_fields<S: Real>(&self, x: &[S], out: &mut [S]) {
        let (th, th1) = (&x[2], &x[3]);
        out[0] = th.cos();
        out[1] = th.sin();
        out[3] = (th.clone() - th1.clone()).sin() * (1.0 / self.l1);
        out[6] = th.constant(1.0);
    }
    fn write_jacobians(&self, x: &[f64], out: &mut [DMatrix<f64>]) -> bool {
        let (st, ct) = x[2].sin_cos();
        let ca = (x[2] - x[3]).cos() / self.l1;
        let j = &mut out[0];
        j.fill(0.0);
        j[(0, 2)] = -st;
        j[(1, 2)] = ct;
        j[(3, 2)] = ca;
        j[(3, 3)] = -ca;
        out[1].fill(0.0);
        true
    }
}

#[derive(Debug, Clone, Copy)]
struct TwoTrailer {
    l1: f64,
    l2: f64,
}

impl FieldDefinition for TwoTrailer {
    fn name(&self) -> String {
        "two_trailer".into()
    }
    fn state_dim(&self) -> usize {
        5
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("l1".to_string(), self.l1), ("l2".to_string(), self.l2)])
    }
    fn write_fields<S: Real>(&self, x: &[S], out: &mut [S]) {
        let (th, th1, th2) = (&x[2], &x[3], &x[4]);
        let a = th.clone() - th1.clone();
        let b = th1.clone() - th2.clone();
        out[0] = th.cos();
        out[1] = th.sin();
        out[3] = a.sin() * (1.0 / self.l1);
        out[4] = a.cos() * b.sin() * (1.0 / self.l2);
        out[7] = th.constant(1.0);
    }
    fn write_jacobians(&self, x: &[f64], out: &mut [DMatrix<f64>]) -> bool {
        let (st, ct) = x[2].sin_cos();
        let (sa, ca) = (x[2] - x[3]).sin_cos();
        let (sb, cb) = (x[3] - x[4]).sin_cos();
        let j = &mut out[0];
        j.fill(0.0);
        j[(0, 2)] = -st;
        j[(1, 2)] = ct;
        j[(3, 2)] = ca / self.l1;
        j[(3, 3)] = -ca / self.l1;
        j[(4, 2)] = -sa * sb / self.l2;
        j[(4, 3)] = (sa * sb + ca * cb) / self.l2;
        j[(4, 4)] = -ca * cb / self.l2;
        out[1].fill(0.0);
        true
    }
}

/// The four built-in vehicles with the parameters used in the shipped
/// scenarios.
pub fn builtin_models() -> Vec<VehicleModel> {
    vec![
        VehicleModel::unicycle(),
        VehicleModel::kinematic_car(0.2).expect("valid"),
        VehicleModel::one_trailer(0.19).expect("valid"),
        VehicleModel::two_trailer(0.2, 0.2).expect("valid"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dynamics_examples() {
        let uni = VehicleModel::unicycle();
        let xd = uni.dynamics(&dvector![0.0, 0.0, 0.0], &dvector![1.0, 0.0]).unwrap();
        assert_eq!(xd, dvector![1.0, 0.0, 0.0]);

        let car = VehicleModel::kinematic_car(0.2).unwrap();
        let xd = car
            .dynamics(&dvector![0.0, 0.0, 0.0, 0.0], &dvector![1.0, 1.0])
            .unwrap();
        assert_eq!(xd, dvector![1.0, 0.0, 0.0, 1.0]);

        let tt = VehicleModel::two_trailer(0.2, 0.2).unwrap();
        let xd = tt.dynamics(&DVector::zeros(5), &dvector![1.0, 0.0]).unwrap();
        assert_eq!(xd, dvector![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let uni = VehicleModel::unicycle();
        let err = uni.dynamics(&dvector![0.0, 0.0], &dvector![1.0, 0.0]);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        let err = uni.dynamics(&dvector![0.0, 0.0, 0.0], &dvector![1.0]);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn builtin_field_values() {
        let car = VehicleModel::kinematic_car(0.2).unwrap();
        let zero = DVector::zeros(4);
        assert_eq!(car.field(0, &zero), dvector![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(car.field(1, &zero), dvector![0.0, 0.0, 0.0, 1.0]);

        let one = VehicleModel::one_trailer(0.19).unwrap();
        let x = dvector![0.0, 0.0, 0.7, 0.7];
        assert_eq!(one.field(0, &x)[3], 0.0);

        let two = VehicleModel::two_trailer(0.2, 0.2).unwrap();
        let x = dvector![0.0, 0.0, PI / 2.0, 0.0, 0.0];
        assert!((two.field(0, &x)[3] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn non_positive_lengths_are_rejected() {
        assert!(VehicleModel::kinematic_car(0.0).is_err());
        assert!(VehicleModel::one_trailer(-1.0).is_err());
        assert!(VehicleModel::two_trailer(0.2, f64::NAN).is_err());
    }

    #[test]
    fn bounds_must_contain_zero() {
        let uni = VehicleModel::unicycle();
        assert!(uni.clone().with_input_bounds(vec![(0.1, 1.0), (-1.0, 1.0)]).is_err());
        assert!(uni.clone().with_input_bounds(vec![(-1.0, 1.0)]).is_err());
        let ok = uni.with_input_bounds(vec![(-0.5, 0.5), (0.0, 0.0)]).unwrap();
        assert_eq!(ok.input_bounds()[1], (0.0, 0.0));
    }

    #[test]
    fn lookup_by_name() {
        let params = BTreeMap::from([("l".to_string(), 0.3)]);
        let car = VehicleModel::from_name("kinematic_car", &params).unwrap();
        assert_eq!(car.params()["l"], 0.3);
        assert!(matches!(
            VehicleModel::from_name("bicycle", &BTreeMap::new()),
            Err(Error::UnknownModel(_))
        ));
        assert!(VehicleModel::from_name("unicycle", &params).is_err());
        let tt = VehicleModel::from_name("two_trailer", &BTreeMap::new()).unwrap();
        assert_eq!(tt.params()["l2"], 0.2);
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for model in builtin_models() {
            let n = model.state_dim();
            for _ in 0..100 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let mut analytic = vec![DMatrix::zeros(n, n); model.input_dim()];
                model.jacobians_into(&x, &mut analytic);
                for (i, ja) in analytic.iter().enumerate() {
                    let jf = model.fd_jacobian(i, &x);
                    let scale = 1.0 + ja.amax();
                    assert!(
                        (ja - &jf).amax() < 1e-6 * scale,
                        "{} field {i}: {ja} vs {jf}",
                        model.name()
                    );
                }
            }
        }
    }

    #[test]
    fn taylor_expansion_reproduces_values_and_jacobians() {
        let model = VehicleModel::two_trailer(0.2, 0.3).unwrap();
        let d = [0.1, -0.2, 0.3, -0.4, 0.5];
        let basis = MonomialBasis::shared(5, 3);
        let fields = model.taylor_fields(&d, &basis);
        let g = model.input_matrix(&DVector::from_row_slice(&d));
        let jac = model.field_jacobian(0, &DVector::from_row_slice(&d));
        for j in 0..5 {
            assert!((fields[0][j].value_at_origin() - g[(j, 0)]).abs() < 1e-15);
            for k in 0..5 {
                let mut e = vec![0u8; 5];
                e[k] = 1;
                assert!((fields[0][j].coefficient(&e) - jac[(j, k)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn nonholonomic_constraints_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let uni = VehicleModel::unicycle();
        let l = 0.2;
        let car = VehicleModel::kinematic_car(l).unwrap();
        for _ in 0..200 {
            let x = DVector::from_fn(3, |_, _| rng.gen_range(-4.0..4.0));
            let u = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let xd = uni.dynamics(&x, &u).unwrap();
            assert!((xd[0] * x[2].sin() - xd[1] * x[2].cos()).abs() < 1e-15);

            let x = DVector::from_fn(4, |_, _| rng.gen_range(-4.0..4.0));
            let xd = car.dynamics(&x, &u).unwrap();
            let (th, ph) = (x[2], x[3]);
            assert!((xd[0] * th.sin() - xd[1] * th.cos()).abs() < 1e-15);
            let front =
                xd[0] * (th + ph).sin() - xd[1] * (th + ph).cos() - xd[2] * l * ph.cos();
            assert!(front.abs() < 1e-14);
        }
    }

    #[test]
    fn user_defined_model_uses_finite_difference_jacobian() {
        #[derive(Debug)]
        struct Brockett;
        impl FieldDefinition for Brockett {
            fn name(&self) -> String {
                "brockett".into()
            }
            fn state_dim(&self) -> usize {
                3
            }
            fn input_dim(&self) -> usize {
                2
            }
            fn write_fields<S: Real>(&self, x: &[S], out: &mut [S]) {
                out[0] = x[0].constant(1.0);
                out[2] = -x[1].clone();
                out[4] = x[0].constant(1.0);
                out[5] = x[0].clone();
            }
        }
        let m = VehicleModel::custom(Brockett, vec![(-1.0, 1.0); 2]).unwrap();
        let jac = m.field_jacobian(0, &dvector![0.3, 0.4, 0.5]);
        assert!((jac[(2, 1)] + 1.0).abs() < 1e-9);
        assert!(jac[(2, 0)].abs() < 1e-9);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn builtins_are_driftless(x in proptest::collection::vec(-10.0f64..10.0, 5)) {
            for model in builtin_models() {
                let n = model.state_dim();
                let xs = DVector::from_row_slice(&x[..n]);
                let xd = model.dynamics(&xs, &DVector::zeros(2)).unwrap();
                prop_assert!(xd.iter().all(|v| *v == 0.0));
            }
        }
    }
}
