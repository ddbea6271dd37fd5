//! Iterated Lie brackets, the bracket-generated filtration at a point, and
//! non-holonomic orders of coordinate functions.
//!
//! Brackets of depth two and more are computed on truncated Taylor expansions
//! of the fields, which keeps every derivative exact up to roundoff.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::models::{StateVector, VehicleModel};
use crate::poly::{lie_derivative, poly_bracket, MonomialBasis, Poly, PolyField};

/// Values below this magnitude count as zero.
pub const ZERO_TOL: f64 = 1e-6;
/// Lower edge of the band in which a derivative is neither clearly zero nor
/// clearly nonzero.
pub const AMBIGUOUS_TOL: f64 = 1e-8;
/// Relative singular-value threshold for numerical rank.
pub const RANK_TOL: f64 = 1e-9;

const REGULARITY_SAMPLES: usize = 8;
const REGULARITY_RADIUS: f64 = 1e-4;

/// A bracket expression over the generators, e.g. `[X1,[X1,X2]]`.
/// Generator indices are zero-based internally and printed one-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BracketWord {
    Generator(usize),
    Bracket(Box<BracketWord>, Box<BracketWord>),
}

impl BracketWord {
    pub fn generator(i: usize) -> Self {
        BracketWord::Generator(i)
    }

    pub fn bracket(a: BracketWord, b: BracketWord) -> Self {
        BracketWord::Bracket(Box::new(a), Box::new(b))
    }

    /// Number of generator occurrences, so `X1` has depth 1 and
    /// `[X1,[X1,X2]]` depth 3.
    pub fn depth(&self) -> usize {
        match self {
            BracketWord::Generator(_) => 1,
            BracketWord::Bracket(a, b) => a.depth() + b.depth(),
        }
    }

    pub fn references_only(&self, n_u: usize) -> bool {
        match self {
            BracketWord::Generator(i) => *i < n_u,
            BracketWord::Bracket(a, b) => a.references_only(n_u) && b.references_only(n_u),
        }
    }

    /// Evaluates the word on polynomial generator fields.
    pub fn field(&self, generators: &[PolyField]) -> PolyField {
        match self {
            BracketWord::Generator(i) => generators[*i].clone(),
            BracketWord::Bracket(a, b) => poly_bracket(&a.field(generators), &b.field(generators)),
        }
    }
}

impl fmt::Display for BracketWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BracketWord::Generator(i) => write!(f, "X{}", i + 1),
            BracketWord::Bracket(a, b) => write!(f, "[{a},{b}]"),
        }
    }
}

/// A vector field that can be evaluated together with its Jacobian.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> DVector<f64>;
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64>;
}

/// The i-th input field of a model.
pub struct ModelField<'a> {
    pub model: &'a VehicleModel,
    pub index: usize,
}

impl VectorField for ModelField<'_> {
    fn dim(&self) -> usize {
        self.model.state_dim()
    }
    fn value(&self, x: &[f64]) -> DVector<f64> {
        self.model.field(self.index, &DVector::from_row_slice(x))
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        self.model.field_jacobian(self.index, &DVector::from_row_slice(x))
    }
}

/// A bracket word of a model's fields, expanded afresh at each query point.
pub struct WordField<'a> {
    pub model: &'a VehicleModel,
    pub word: BracketWord,
}

impl WordField<'_> {
    fn jet(&self, x: &[f64]) -> PolyField {
        let basis = MonomialBasis::shared(self.model.state_dim(), self.word.depth());
        self.word.field(&self.model.taylor_fields(x, &basis))
    }
}

impl VectorField for WordField<'_> {
    fn dim(&self) -> usize {
        self.model.state_dim()
    }
    fn value(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), self.jet(x).iter().map(|p| p.value_at_origin()))
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        jet_jacobian(&self.jet(x))
    }
}

/// Jacobian at the expansion point of a polynomial field.
pub(crate) fn jet_jacobian(field: &[Poly]) -> DMatrix<f64> {
    let n = field.len();
    let nv = field[0].basis().nvars();
    let mut e = vec![0u8; nv];
    DMatrix::from_fn(n, nv, |j, k| {
        e.iter_mut().for_each(|v| *v = 0);
        e[k] = 1;
        field[j].coefficient(&e)
    })
}

/// `[X, Y](x) = (∂Y/∂x) X − (∂X/∂x) Y`.
pub fn lie_bracket(x: &dyn VectorField, y: &dyn VectorField, at: &[f64]) -> Result<DVector<f64>> {
    check_len("bracket field", x.dim(), y.dim())?;
    check_len("state", x.dim(), at.len())?;
    Ok(y.jacobian(at) * x.value(at) - x.jacobian(at) * y.value(at))
}

/// Numerical rank with a singular-value threshold relative to the largest
/// singular value.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

/// The filtration `Δ¹ ⊆ Δ² ⊆ …` at a regular point, with an adapted frame.
#[derive(Clone, Debug)]
pub struct LieFiltration {
    pub setpoint: StateVector,
    /// One word per frame column, ordered by weight.
    pub words: Vec<BracketWord>,
    /// Columns are the adapted-frame fields at the setpoint.
    pub frame: DMatrix<f64>,
    pub growth: Vec<usize>,
    pub weights: Vec<usize>,
    pub degree: usize,
    generator_jets: Vec<PolyField>,
}

impl LieFiltration {
    /// Taylor expansions of the generators about the setpoint in `x − d`.
    pub fn generator_jets(&self) -> &[PolyField] {
        &self.generator_jets
    }

    pub fn max_weight(&self) -> usize {
        *self.weights.last().expect("non-empty")
    }
}

struct Greedy {
    words: Vec<BracketWord>,
    frame: DMatrix<f64>,
    growth: Vec<usize>,
    weights: Vec<usize>,
    /// Every non-vanishing word considered, grouped by depth.
    levels: Vec<Vec<(BracketWord, PolyField)>>,
    generators: Vec<PolyField>,
    full_rank: bool,
}

fn greedy(model: &VehicleModel, d: &[f64], max_depth: usize) -> Greedy {
    let n = model.state_dim();
    let m = model.input_dim();
    let cap = max_depth.min(n.saturating_sub(1) + 1).max(1);
    let basis = MonomialBasis::shared(n, cap + 2);
    let generators = model.taylor_fields(d, &basis);

    let mut g = Greedy {
        words: Vec::new(),
        frame: DMatrix::zeros(n, 0),
        growth: Vec::new(),
        weights: Vec::new(),
        levels: Vec::new(),
        generators: generators.clone(),
        full_rank: false,
    };
    let consider = |g: &mut Greedy, word: BracketWord, jet: PolyField, depth: usize,
                        accepted: &mut Vec<(BracketWord, PolyField)>,
                        rejected: &mut Vec<(BracketWord, PolyField)>| {
        if jet.iter().all(|p| p.max_abs_coefficient() < 1e-14) {
            return;
        }
        let rank = g.frame.ncols();
        if rank < n {
            let v = DVector::from_iterator(n, jet.iter().map(|p| p.value_at_origin()));
            let mut trial = g.frame.clone().insert_column(rank, 0.0);
            trial.set_column(rank, &v);
            if numerical_rank(&trial) > rank {
                g.frame = trial;
                g.words.push(word.clone());
                g.weights.push(depth);
                accepted.push((word, jet));
                return;
            }
        }
        rejected.push((word, jet));
    };

    let mut prev: Vec<(BracketWord, PolyField)> = Vec::new();
    for depth in 1..=cap {
        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        if depth == 1 {
            for (i, jet) in generators.iter().enumerate() {
                consider(&mut g, BracketWord::generator(i), jet.clone(), 1, &mut accepted, &mut rejected);
            }
        } else {
            for i in 0..m {
                for (w, wjet) in &prev {
                    if *w == BracketWord::Generator(i) {
                        continue;
                    }
                    let jet = poly_bracket(&generators[i], wjet);
                    let word = BracketWord::bracket(BracketWord::generator(i), w.clone());
                    consider(&mut g, word, jet, depth, &mut accepted, &mut rejected);
                }
            }
        }
        let rank = g.frame.ncols();
        g.growth.push(rank);
        accepted.extend(rejected);
        g.levels.push(accepted.clone());
        prev = accepted;
        if rank == n {
            g.full_rank = true;
            break;
        }
        if prev.is_empty() {
            break;
        }
    }
    g
}

/// Builds the filtration at `d` by greedy selection of bracket words.
///
/// Generators come first in index order, then words `[X_i, W]` with `i`
/// ascending and `W` running over the previous depth. A word enters the frame
/// iff it raises the numerical rank at `d`.
pub fn build_filtration(model: &VehicleModel, d: &StateVector, max_depth: usize) -> Result<LieFiltration> {
    check_len("setpoint", model.state_dim(), d.len())?;
    if max_depth == 0 {
        return Err(Error::InvalidParameter("max_depth must be at least 1".into()));
    }
    let g = greedy(model, d.as_slice(), max_depth);
    if !g.full_rank {
        return Err(Error::NotControllableAtDepth(max_depth));
    }
    check_regular(&g)?;
    let degree = g.growth.len();
    Ok(LieFiltration {
        setpoint: d.clone(),
        words: g.words,
        frame: g.frame,
        growth: g.growth,
        weights: g.weights,
        degree,
        generator_jets: g.generators,
    })
}

fn check_regular(g: &Greedy) -> Result<()> {
    let n = g.frame.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..REGULARITY_SAMPLES {
        let mut dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        dir.iter_mut().for_each(|v| *v *= REGULARITY_RADIUS / norm);

        let mut cols: Vec<DVector<f64>> = Vec::new();
        let mut nearby = Vec::new();
        for level in &g.levels {
            for (_, jet) in level {
                cols.push(DVector::from_iterator(n, jet.iter().map(|p| p.eval(&dir))));
            }
            nearby.push(numerical_rank(&DMatrix::from_columns(&cols)));
        }
        if nearby != g.growth {
            return Err(Error::IrregularPoint {
                at_setpoint: g.growth.clone(),
                nearby,
            });
        }
    }
    Ok(())
}

/// True iff the brackets up to `max_depth` span the tangent space at `d`.
pub fn larc_check(model: &VehicleModel, d: &StateVector, max_depth: usize) -> bool {
    d.len() == model.state_dim() && max_depth > 0 && greedy(model, d.as_slice(), max_depth).full_rank
}

/// Smallest `k` such that some length-`k` derivative of `f` along the
/// generators is nonzero at the expansion point, searching up to `max_order`.
/// `Ok(None)` means every derivative up to `max_order` vanishes.
pub fn nonholonomic_order_of(f: &Poly, generators: &[PolyField], max_order: usize) -> Result<Option<usize>> {
    let classify = |v: f64| -> Result<bool> {
        let a = v.abs();
        if a >= ZERO_TOL {
            Ok(true)
        } else if a >= AMBIGUOUS_TOL {
            Err(Error::AmbiguousOrder { magnitude: a })
        } else {
            Ok(false)
        }
    };
    if classify(f.value_at_origin())? {
        return Ok(Some(0));
    }
    let mut level = vec![f.clone()];
    for k in 1..=max_order {
        let mut next = Vec::with_capacity(level.len() * generators.len());
        let mut hit = false;
        for g in &level {
            for x in generators {
                let dg = lie_derivative(g, x);
                hit |= classify(dg.value_at_origin())?;
                if dg.max_abs_coefficient() > 1e-15 {
                    next.push(dg);
                }
            }
        }
        if hit {
            return Ok(Some(k));
        }
        level = next;
    }
    Ok(None)
}

/// Non-holonomic order at the setpoint of the coordinate function
/// `x ↦ x_j − d_j`.
pub fn nonholonomic_order(model: &VehicleModel, filtration: &LieFiltration, j: usize) -> Result<usize> {
    let n = model.state_dim();
    if j >= n {
        return Err(Error::InvalidParameter(format!("coordinate index {j} out of range")));
    }
    let jets = filtration.generator_jets();
    let basis: &Arc<MonomialBasis> = jets[0][0].basis();
    let f = Poly::variable(basis, j);
    nonholonomic_order_of(&f, jets, filtration.max_weight())?.ok_or(Error::OrderNotDetermined(j))
}
