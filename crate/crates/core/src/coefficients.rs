//! SDE coefficients, their partial derivatives and growth metadata, the
//! multi-index algebra and the Itô–Taylor coefficient functions `f_α`.
//!
//! `f_α` is obtained by applying `L^{j_1} ⋯ L^{j_ℓ}` to the state `x`
//! (note `L^0 x = F` and `L^1 x = G`), where
//!
//! ```text
//! L^0 = ∂_u + F ∂_x + ½ G² ∂_xx,    L^1 = G ∂_x.
//! ```
//!
//! The operators act on polynomials in the symbols `x`, `F`, `G` and their
//! partials. Each symbol is resolved against the closed-form partials
//! registered on the [`CoefficientSet`], so a missing derivative is reported
//! by name before any evaluation happens.
//!
//! The `dr` drift `H` is a function of `u` alone. A state-dependent `H` has
//! no representation here because the convergence analysis for the
//! Euler–Maruyama-type scheme does not cover it.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)] // Unused when std is in the crate graph.
use num_traits::Float;

use crate::noise::NoiseStream;

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type StateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Exact terminal value `(x0, E_T, B_{E_T}) ↦ X_T` for sets that have one.
pub type ExactSolution = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoefficientError {
    #[error("unsupported Itô–Taylor order {0}; supported orders are 0.5, 1 and 1.5")]
    UnsupportedOrder(f64),
    #[error("the empty multi-index has no {0}")]
    EmptyIndex(&'static str),
    #[error("missing partial derivative {0}")]
    MissingPartial(String),
    #[error("assumption violated: {0}")]
    AssumptionViolation(String),
    #[error("missing metadata: {0}")]
    MissingMetadata(&'static str),
    #[error("invalid metadata {name} = {value}")]
    InvalidMetadata { name: &'static str, value: f64 },
    #[error("coefficient set is missing its {0} coefficient")]
    MissingCoefficient(&'static str),
    #[error("unknown coefficient set {0:?}")]
    UnknownSet(String),
}

// ---------------------------------------------------------------------------
// Multi-indices

/// A finite sequence over `{0, 1}`; `0` integrates against `dE`, `1`
/// against `dB_E`. The empty index is `v`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct MultiIndex(Vec<u8>);

impl MultiIndex {
    /// Panics if an entry is not 0 or 1.
    pub fn new(entries: &[u8]) -> Self {
        assert!(entries.iter().all(|&j| j <= 1), "multi-index entries must be 0 or 1");
        Self(entries.to_vec())
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn entries(&self) -> &[u8] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `ℓ(α)`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// `n(α)`, the number of zero entries.
    pub fn zeros(&self) -> usize {
        self.0.iter().filter(|&&j| j == 0).count()
    }

    /// `-α`, the index without its first entry.
    pub fn remove_first(&self) -> Result<Self, CoefficientError> {
        match self.0.split_first() {
            Some((_, rest)) => Ok(Self(rest.to_vec())),
            None => Err(CoefficientError::EmptyIndex("first entry")),
        }
    }

    /// `α-`, the index without its last entry.
    pub fn remove_last(&self) -> Result<Self, CoefficientError> {
        match self.0.split_last() {
            Some((_, rest)) => Ok(Self(rest.to_vec())),
            None => Err(CoefficientError::EmptyIndex("last entry")),
        }
    }

    /// All indices of exactly length `len`, in lexicographic order.
    pub fn all_of_length(len: usize) -> impl Iterator<Item = MultiIndex> {
        (0u32..1 << len).map(move |bits| {
            MultiIndex((0..len).map(|i| ((bits >> (len - 1 - i)) & 1) as u8).collect())
        })
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Shorter indices first, then lexicographic.
impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("v");
        }
        f.write_str("(")?;
        for (i, j) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{j}")?;
        }
        f.write_str(")")
    }
}

/// Supported Itô–Taylor orders. Up to 1.5 every multiple integral is a
/// function of the step's Brownian increment and its time integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaylorOrder {
    Half,
    One,
    OneAndHalf,
}

impl TaylorOrder {
    pub fn from_f64(gamma: f64) -> Result<Self, CoefficientError> {
        if gamma == 0.5 {
            Ok(Self::Half)
        } else if gamma == 1.0 {
            Ok(Self::One)
        } else if gamma == 1.5 {
            Ok(Self::OneAndHalf)
        } else {
            Err(CoefficientError::UnsupportedOrder(gamma))
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Self::Half => 0.5,
            Self::One => 1.0,
            Self::OneAndHalf => 1.5,
        }
    }

    /// `2γ`.
    fn twice(self) -> usize {
        match self {
            Self::Half => 1,
            Self::One => 2,
            Self::OneAndHalf => 3,
        }
    }

    /// Whether `α ∈ A_γ`.
    pub fn contains(self, alpha: &MultiIndex) -> bool {
        let (l, n) = (alpha.len(), alpha.zeros());
        l + n <= self.twice() || (l == n && 2 * l == self.twice() + 1)
    }
}

/// `A_γ`, sorted, including `v`.
pub fn hierarchical_set(gamma: f64) -> Result<Vec<MultiIndex>, CoefficientError> {
    let order = TaylorOrder::from_f64(gamma)?;
    Ok(hierarchical_set_of(order))
}

pub fn hierarchical_set_of(order: TaylorOrder) -> Vec<MultiIndex> {
    // ℓ + n ≥ ℓ, and the second branch has ℓ = γ + ½, so no member is longer
    // than 2γ.
    (0..=order.twice())
        .flat_map(MultiIndex::all_of_length)
        .filter(|a| order.contains(a))
        .collect()
}

/// `R(A_γ) = {α ∉ A_γ : -α ∈ A_γ}`, sorted.
pub fn remainder_set(gamma: f64) -> Result<Vec<MultiIndex>, CoefficientError> {
    let order = TaylorOrder::from_f64(gamma)?;
    Ok(remainder_set_of(order))
}

pub fn remainder_set_of(order: TaylorOrder) -> Vec<MultiIndex> {
    let mut out: Vec<MultiIndex> = hierarchical_set_of(order)
        .into_iter()
        .flat_map(|tail| {
            (0u8..=1).map(move |j| {
                let mut e = vec![j];
                e.extend_from_slice(tail.entries());
                MultiIndex(e)
            })
        })
        .filter(|a| !order.contains(a))
        .collect();
    out.sort();
    out.dedup();
    out
}

/// `φ(α) = ℓ + n - 1` if `ℓ ≠ n`, else `2ℓ - 2`.
pub fn phi(alpha: &MultiIndex) -> Result<usize, CoefficientError> {
    let (l, n) = (alpha.len(), alpha.zeros());
    if l == 0 {
        return Err(CoefficientError::EmptyIndex("phi value"));
    }
    Ok(if l != n { l + n - 1 } else { 2 * l - 2 })
}

// ---------------------------------------------------------------------------
// Partial derivative symbols

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    /// The `dE` drift `F`.
    Drift,
    /// The `dB_E` diffusion `G`.
    Diffusion,
}

/// `∂_u^du ∂_x^dx` applied to `F` or `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Partial {
    pub component: Component,
    pub du: u8,
    pub dx: u8,
}

impl Partial {
    pub const F: Partial = Partial::f(0, 0);
    pub const G: Partial = Partial::g(0, 0);

    pub const fn f(du: u8, dx: u8) -> Self {
        Self {
            component: Component::Drift,
            du,
            dx,
        }
    }

    pub const fn g(du: u8, dx: u8) -> Self {
        Self {
            component: Component::Diffusion,
            du,
            dx,
        }
    }

    pub fn order(self) -> u8 {
        self.du + self.dx
    }

    fn d_u(self) -> Self {
        Self {
            du: self.du + 1,
            ..self
        }
    }

    fn d_x(self) -> Self {
        Self {
            dx: self.dx + 1,
            ..self
        }
    }

    /// Whether `self` is obtained from `other` by further differentiation.
    fn derives_from(self, other: Partial) -> bool {
        self.component == other.component && self.du >= other.du && self.dx >= other.dx
    }
}

impl fmt::Display for Partial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.component {
            Component::Drift => "F",
            Component::Diffusion => "G",
        })?;
        if self.order() > 0 {
            f.write_str("_")?;
            for _ in 0..self.du {
                f.write_str("u")?;
            }
            for _ in 0..self.dx {
                f.write_str("x")?;
            }
        }
        Ok(())
    }
}

#[derive(Clone)]
enum PartialFn {
    Zero,
    Closed(StateFn),
}

// ---------------------------------------------------------------------------
// Growth metadata

/// A bound function with its regular-variation index.
#[derive(Clone)]
pub struct Bound {
    func: TimeFn,
    /// Index of `h` (for the Lipschitz/growth bound) or of `log k`.
    pub index: f64,
    pub constant: bool,
}

impl Bound {
    pub fn new(func: impl Fn(f64) -> f64 + Send + Sync + 'static, index: f64) -> Self {
        Self {
            func: Arc::new(func),
            index,
            constant: false,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            func: Arc::new(move |_| value),
            index: 0.0,
            constant: true,
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        (self.func)(u)
    }

    /// `None` when constant, else the index.
    pub fn rate_index(&self) -> Option<f64> {
        if self.constant {
            None
        } else {
            Some(self.index)
        }
    }
}

impl fmt::Debug for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Bound")
            .field("index", &self.index)
            .field("constant", &self.constant)
            .finish()
    }
}

/// Hölder data `(θ, K)` in the time variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Holder {
    pub theta: f64,
    pub k: f64,
}

// ---------------------------------------------------------------------------
// Coefficient sets

/// The coefficients `H(u)`, `F(u, x)`, `G(u, x)` with derivative suite and
/// metadata. Immutable and cheap to clone.
#[derive(Clone)]
pub struct CoefficientSet {
    name: String,
    drift_dr: Option<TimeFn>,
    drift: StateFn,
    diffusion: StateFn,
    partials: BTreeMap<Partial, PartialFn>,
    h_bound: Option<Bound>,
    k_bound: Option<Bound>,
    holder: Option<Holder>,
    state_free_diffusion: bool,
    exact: Option<ExactSolution>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("has_drift_dr", &self.drift_dr.is_some())
            .field("partials", &self.partials.keys().map(ToString::to_string).collect::<Vec<_>>())
            .field("h_bound", &self.h_bound)
            .field("k_bound", &self.k_bound)
            .field("holder", &self.holder)
            .field("state_free_diffusion", &self.state_free_diffusion)
            .field("has_exact_solution", &self.exact.is_some())
            .finish()
    }
}

impl CoefficientSet {
    pub fn builder(name: impl Into<String>) -> CoefficientSetBuilder {
        CoefficientSetBuilder {
            name: name.into(),
            drift_dr: None,
            drift: None,
            diffusion: None,
            partials: BTreeMap::new(),
            h_bound: None,
            k_bound: None,
            holder: None,
            state_free_diffusion: false,
            exact: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `H(u)`, zero when the set has no `dr` drift.
    #[inline]
    pub fn drift_dr(&self, u: f64) -> f64 {
        self.drift_dr.as_ref().map_or(0.0, |h| h(u))
    }

    /// Whether `H ≢ 0` was declared.
    pub fn has_drift_dr(&self) -> bool {
        self.drift_dr.is_some()
    }

    /// `F(u, x)`.
    #[inline]
    pub fn drift(&self, u: f64, x: f64) -> f64 {
        (self.drift)(u, x)
    }

    /// `G(u, x)`.
    #[inline]
    pub fn diffusion(&self, u: f64, x: f64) -> f64 {
        (self.diffusion)(u, x)
    }

    pub fn h_bound(&self) -> Option<&Bound> {
        self.h_bound.as_ref()
    }

    pub fn k_bound(&self) -> Option<&Bound> {
        self.k_bound.as_ref()
    }

    pub fn holder(&self) -> Option<Holder> {
        self.holder
    }

    /// Declared `G(u, x) = G(u)`.
    pub fn state_free_diffusion(&self) -> bool {
        self.state_free_diffusion
    }

    pub fn exact_solution(&self) -> Option<&ExactSolution> {
        self.exact.as_ref()
    }

    /// Registered partials other than `F` and `G` themselves.
    pub fn supplied_partials(&self) -> impl Iterator<Item = Partial> + '_ {
        self.partials.keys().copied()
    }

    fn is_zero(&self, p: Partial) -> bool {
        self.partials
            .iter()
            .any(|(q, f)| matches!(f, PartialFn::Zero) && p.derives_from(*q))
    }

    fn resolve(&self, p: Partial) -> Result<Slot, CoefficientError> {
        if p == Partial::F {
            return Ok(Slot::Func(self.drift.clone()));
        }
        if p == Partial::G {
            return Ok(Slot::Func(self.diffusion.clone()));
        }
        if self.is_zero(p) {
            return Ok(Slot::Zero);
        }
        match self.partials.get(&p) {
            Some(PartialFn::Closed(f)) => Ok(Slot::Func(f.clone())),
            Some(PartialFn::Zero) => Ok(Slot::Zero),
            None => Err(CoefficientError::MissingPartial(p.to_string())),
        }
    }

    /// Evaluates one partial, `F` and `G` included.
    pub fn partial(&self, p: Partial, u: f64, x: f64) -> Result<f64, CoefficientError> {
        Ok(match self.resolve(p)? {
            Slot::Zero => 0.0,
            Slot::State => x,
            Slot::Func(f) => f(u, x),
        })
    }

    /// Closure for one partial, for use in hot loops.
    pub fn partial_fn(&self, p: Partial) -> Result<StateFn, CoefficientError> {
        Ok(match self.resolve(p)? {
            Slot::Zero => Arc::new(|_, _| 0.0),
            Slot::State => Arc::new(|_, x| x),
            Slot::Func(f) => f,
        })
    }

    /// `f_α` as a compiled polynomial in the registered partials.
    pub fn coefficient_function(&self, alpha: &MultiIndex) -> Result<CoefficientFunction, CoefficientError> {
        let mut expr = Expr::state();
        for &j in alpha.entries().iter().rev() {
            expr = if j == 0 { expr.l0() } else { expr.l1() };
            expr.prune(|p| self.is_zero(p));
        }
        CoefficientFunction::compile(self, alpha.clone(), expr)
    }

    /// Samples `n` points `(u, x, y)` with `u ∈ [0, u_max]`, `x, y ∈
    /// [-x_max, x_max]` and checks the Lipschitz and linear-growth bounds
    /// against `h`, the Hölder bound when declared, and state independence
    /// of `G` when declared. Returns the first violation.
    pub fn spot_check(
        &self,
        n: usize,
        u_max: f64,
        x_max: f64,
        rng: &mut NoiseStream,
    ) -> Result<(), SpotCheckFailure> {
        let h = self
            .h_bound
            .as_ref()
            .ok_or(SpotCheckFailure::missing("h bound"))?;
        let le = |lhs: f64, rhs: f64| lhs <= rhs * (1.0 + 1e-12) + 1e-12;
        for _ in 0..n {
            let u = u_max * rng.open01();
            let v = u_max * rng.open01();
            let x = x_max * (2.0 * rng.open01() - 1.0);
            let y = x_max * (2.0 * rng.open01() - 1.0);
            let hu = h.eval(u);

            let lip = (self.drift(u, x) - self.drift(u, y)).abs()
                + (self.diffusion(u, x) - self.diffusion(u, y)).abs();
            if !le(lip, hu * (x - y).abs()) {
                return Err(SpotCheckFailure::at("Lipschitz", u, x, y, lip, hu * (x - y).abs()));
            }
            let growth =
                self.drift_dr(u).abs() + self.drift(u, x).abs() + self.diffusion(u, x).abs();
            if !le(growth, hu * (1.0 + x.abs())) {
                return Err(SpotCheckFailure::at("linear growth", u, x, y, growth, hu * (1.0 + x.abs())));
            }
            if let Some(Holder { theta, k }) = self.holder {
                let lhs = (self.drift_dr(u) - self.drift_dr(v)).abs()
                    + (self.drift(u, x) - self.drift(v, x)).abs()
                    + (self.diffusion(u, x) - self.diffusion(v, x)).abs();
                let rhs = k * (u - v).abs().powf(theta) * (1.0 + x.abs());
                if !le(lhs, rhs) {
                    return Err(SpotCheckFailure::at("Hölder in time", u, x, v, lhs, rhs));
                }
            }
            if self.state_free_diffusion {
                let diff = (self.diffusion(u, x) - self.diffusion(u, y)).abs();
                if !le(diff, 0.0) {
                    return Err(SpotCheckFailure::at("state-free diffusion", u, x, y, diff, 0.0));
                }
            }
        }
        Ok(())
    }

    /// Compares every registered partial with a central finite difference
    /// of its parent at `n` random points. The step is `1e-6 · max(1, |z|)`
    /// in the differentiated variable `z`, and the comparison is relative
    /// to `max(1, |value|)`.
    pub fn check_partials(
        &self,
        n: usize,
        u_max: f64,
        x_max: f64,
        rtol: f64,
        rng: &mut NoiseStream,
    ) -> Result<(), PartialMismatch> {
        for (&p, f) in &self.partials {
            let PartialFn::Closed(f) = f else { continue };
            let (parent, by_u) = if p.du > 0 {
                (Partial { du: p.du - 1, ..p }, true)
            } else {
                (Partial { dx: p.dx - 1, ..p }, false)
            };
            let parent = self.partial_fn(parent).map_err(|_| PartialMismatch {
                partial: p.to_string(),
                u: f64::NAN,
                x: f64::NAN,
                supplied: f64::NAN,
                finite_difference: f64::NAN,
            })?;
            for _ in 0..n {
                // Keep u - step inside the domain.
                let u = 0.01 + u_max * rng.open01();
                let x = x_max * (2.0 * rng.open01() - 1.0);
                let supplied = f(u, x);
                let fd = if by_u {
                    let s = 1e-6 * u.abs().max(1.0);
                    (parent(u + s, x) - parent(u - s, x)) / (2.0 * s)
                } else {
                    let s = 1e-6 * x.abs().max(1.0);
                    (parent(u, x + s) - parent(u, x - s)) / (2.0 * s)
                };
                if (supplied - fd).abs() > rtol * supplied.abs().max(1.0) {
                    return Err(PartialMismatch {
                        partial: p.to_string(),
                        u,
                        x,
                        supplied,
                        finite_difference: fd,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{assumption} bound fails at u={u}, x={x}, other={other}: {lhs} > {rhs}")]
pub struct SpotCheckFailure {
    pub assumption: &'static str,
    pub u: f64,
    pub x: f64,
    /// The second state (or time, for the Hölder check).
    pub other: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl SpotCheckFailure {
    fn at(assumption: &'static str, u: f64, x: f64, other: f64, lhs: f64, rhs: f64) -> Self {
        Self {
            assumption,
            u,
            x,
            other,
            lhs,
            rhs,
        }
    }

    fn missing(what: &'static str) -> Self {
        Self::at(what, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("partial {partial} disagrees with finite differences at u={u}, x={x}: {supplied} vs {finite_difference}")]
pub struct PartialMismatch {
    pub partial: String,
    pub u: f64,
    pub x: f64,
    pub supplied: f64,
    pub finite_difference: f64,
}

pub struct CoefficientSetBuilder {
    name: String,
    drift_dr: Option<TimeFn>,
    drift: Option<StateFn>,
    diffusion: Option<StateFn>,
    partials: BTreeMap<Partial, PartialFn>,
    h_bound: Option<Bound>,
    k_bound: Option<Bound>,
    holder: Option<Holder>,
    state_free_diffusion: bool,
    exact: Option<ExactSolution>,
}

impl CoefficientSetBuilder {
    /// `H(u)`, the drift against physical time.
    pub fn drift_dr(mut self, h: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.drift_dr = Some(Arc::new(h));
        self
    }

    /// `F(u, x)`, the drift against `dE`.
    pub fn drift(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.drift = Some(Arc::new(f));
        self
    }

    /// `G(u, x)`, the diffusion against `dB_E`.
    pub fn diffusion(mut self, g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.diffusion = Some(Arc::new(g));
        self
    }

    pub fn partial(mut self, p: Partial, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.partials.insert(p, PartialFn::Closed(Arc::new(f)));
        self
    }

    /// Declares `p` and all its further derivatives identically zero.
    pub fn zero_partial(mut self, p: Partial) -> Self {
        self.partials.insert(p, PartialFn::Zero);
        self
    }

    pub fn h_bound(mut self, bound: Bound) -> Self {
        self.h_bound = Some(bound);
        self
    }

    pub fn k_bound(mut self, bound: Bound) -> Self {
        self.k_bound = Some(bound);
        self
    }

    pub fn holder(mut self, theta: f64, k: f64) -> Self {
        self.holder = Some(Holder { theta, k });
        self
    }

    /// Declares `G(u, x) = G(u)` and registers `G_x ≡ 0`.
    pub fn state_free_diffusion(mut self) -> Self {
        self.state_free_diffusion = true;
        self.partials.insert(Partial::g(0, 1), PartialFn::Zero);
        self
    }

    pub fn exact_solution(mut self, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.exact = Some(Arc::new(f));
        self
    }

    pub fn build(self) -> Result<CoefficientSet, CoefficientError> {
        let drift = self.drift.ok_or(CoefficientError::MissingCoefficient("drift"))?;
        let diffusion = self
            .diffusion
            .ok_or(CoefficientError::MissingCoefficient("diffusion"))?;
        if let Some(Holder { theta, k }) = self.holder {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(CoefficientError::InvalidMetadata {
                    name: "theta",
                    value: theta,
                });
            }
            if !(k > 0.0) {
                return Err(CoefficientError::InvalidMetadata { name: "K", value: k });
            }
        }
        for (name, bound) in [("q", &self.h_bound), ("q_tilde", &self.k_bound)] {
            if let Some(b) = bound {
                if !(b.index >= 0.0 && b.index.is_finite()) {
                    return Err(CoefficientError::InvalidMetadata {
                        name,
                        value: b.index,
                    });
                }
            }
        }
        if self.partials.contains_key(&Partial::F) || self.partials.contains_key(&Partial::G) {
            return Err(CoefficientError::AssumptionViolation(
                "F and G are set through drift() and diffusion(), not as partials".to_string(),
            ));
        }
        Ok(CoefficientSet {
            name: self.name,
            drift_dr: self.drift_dr,
            drift,
            diffusion,
            partials: self.partials,
            h_bound: self.h_bound,
            k_bound: self.k_bound,
            holder: self.holder,
            state_free_diffusion: self.state_free_diffusion,
            exact: self.exact,
        })
    }
}

// ---------------------------------------------------------------------------
// Polynomial algebra over partial symbols

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Symbol {
    State,
    P(Partial),
}

#[derive(Debug, Clone, PartialEq)]
struct Monomial {
    coef: f64,
    /// Sorted.
    factors: Vec<Symbol>,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Expr(Vec<Monomial>);

impl Expr {
    fn state() -> Self {
        Expr(vec![Monomial {
            coef: 1.0,
            factors: vec![Symbol::State],
        }])
    }

    fn symbol(s: Symbol) -> Self {
        Expr(vec![Monomial {
            coef: 1.0,
            factors: vec![s],
        }])
    }

    fn derivative(&self, by_u: bool) -> Self {
        let mut out = Vec::new();
        for m in &self.0 {
            for (i, s) in m.factors.iter().enumerate() {
                let replacement = match (*s, by_u) {
                    (Symbol::State, true) => continue,
                    (Symbol::State, false) => None,
                    (Symbol::P(p), true) => Some(Symbol::P(p.d_u())),
                    (Symbol::P(p), false) => Some(Symbol::P(p.d_x())),
                };
                let mut factors = m.factors.clone();
                match replacement {
                    Some(r) => factors[i] = r,
                    None => {
                        factors.remove(i);
                    }
                }
                factors.sort();
                out.push(Monomial {
                    coef: m.coef,
                    factors,
                });
            }
        }
        let mut e = Expr(out);
        e.collect();
        e
    }

    fn scale(mut self, c: f64) -> Self {
        for m in &mut self.0 {
            m.coef *= c;
        }
        self
    }

    fn times(&self, other: &Expr) -> Self {
        let mut out = Vec::with_capacity(self.0.len() * other.0.len());
        for a in &self.0 {
            for b in &other.0 {
                let mut factors = a.factors.clone();
                factors.extend_from_slice(&b.factors);
                factors.sort();
                out.push(Monomial {
                    coef: a.coef * b.coef,
                    factors,
                });
            }
        }
        let mut e = Expr(out);
        e.collect();
        e
    }

    fn plus(mut self, other: Expr) -> Self {
        self.0.extend(other.0);
        self.collect();
        self
    }

    /// `∂_u + F ∂_x + ½ G² ∂_xx`.
    fn l0(&self) -> Self {
        let f = Expr::symbol(Symbol::P(Partial::F));
        let g = Expr::symbol(Symbol::P(Partial::G));
        let dx = self.derivative(false);
        let dxx = dx.derivative(false);
        self.derivative(true)
            .plus(f.times(&dx))
            .plus(g.times(&g).times(&dxx).scale(0.5))
    }

    /// `G ∂_x`.
    fn l1(&self) -> Self {
        Expr::symbol(Symbol::P(Partial::G)).times(&self.derivative(false))
    }

    fn prune(&mut self, is_zero: impl Fn(Partial) -> bool) {
        self.0.retain(|m| {
            m.factors.iter().all(|s| match s {
                Symbol::State => true,
                Symbol::P(p) => !is_zero(*p),
            })
        });
    }

    /// Merges equal monomials and drops zero coefficients.
    fn collect(&mut self) {
        self.0.sort_by(|a, b| a.factors.cmp(&b.factors));
        let mut merged: Vec<Monomial> = Vec::with_capacity(self.0.len());
        for m in self.0.drain(..) {
            match merged.last_mut() {
                Some(last) if last.factors == m.factors => last.coef += m.coef,
                _ => merged.push(m),
            }
        }
        merged.retain(|m| m.coef != 0.0);
        self.0 = merged;
    }
}

#[derive(Clone)]
enum Slot {
    Zero,
    State,
    Func(StateFn),
}

const INLINE_SLOTS: usize = 16;

/// A compiled `f_α`: `Σ c_i Π s_ij(u, x)` over resolved partial slots.
#[derive(Clone)]
pub struct CoefficientFunction {
    alpha: MultiIndex,
    slots: Vec<Slot>,
    names: Vec<String>,
    terms: Vec<(f64, Vec<usize>)>,
}

impl fmt::Debug for CoefficientFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f_{} = {}", self.alpha, self.describe())
    }
}

impl CoefficientFunction {
    fn compile(set: &CoefficientSet, alpha: MultiIndex, expr: Expr) -> Result<Self, CoefficientError> {
        let mut symbols: Vec<Symbol> = expr.0.iter().flat_map(|m| m.factors.iter().copied()).collect();
        symbols.sort();
        symbols.dedup();
        let mut slots = Vec::with_capacity(symbols.len());
        let mut names = Vec::with_capacity(symbols.len());
        for s in &symbols {
            match s {
                Symbol::State => {
                    slots.push(Slot::State);
                    names.push("x".to_string());
                }
                Symbol::P(p) => {
                    slots.push(set.resolve(*p)?);
                    names.push(p.to_string());
                }
            }
        }
        let terms = expr
            .0
            .iter()
            .map(|m| {
                let idx = m
                    .factors
                    .iter()
                    .map(|s| symbols.binary_search(s).expect("symbol collected above"))
                    .collect();
                (m.coef, idx)
            })
            .collect();
        Ok(Self {
            alpha,
            slots,
            names,
            terms,
        })
    }

    pub fn alpha(&self) -> &MultiIndex {
        &self.alpha
    }

    /// Names of the partials this function reads.
    pub fn required_partials(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str).filter(|n| *n != "x")
    }

    /// Human-readable polynomial, e.g. `1*G*G_x`.
    pub fn describe(&self) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut s = String::new();
        for (k, (c, idx)) in self.terms.iter().enumerate() {
            if k > 0 {
                s.push_str(" + ");
            }
            s.push_str(&format!("{c}"));
            for &i in idx {
                s.push('*');
                s.push_str(&self.names[i]);
            }
        }
        s
    }

    #[inline]
    pub fn eval(&self, u: f64, x: f64) -> f64 {
        let n = self.slots.len();
        let mut inline = [0.0; INLINE_SLOTS];
        let mut heap;
        let values: &mut [f64] = if n <= INLINE_SLOTS {
            &mut inline[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        for (v, s) in values.iter_mut().zip(&self.slots) {
            *v = match s {
                Slot::Zero => 0.0,
                Slot::State => x,
                Slot::Func(f) => f(u, x),
            };
        }
        self.terms
            .iter()
            .map(|(c, idx)| idx.iter().fold(*c, |acc, &i| acc * values[i]))
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Theoretical rates

/// Scheme families with a rate guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateScheme {
    EulerMaruyama,
    Milstein,
    ItoTaylor(TaylorOrder),
}

/// The assumption regime a guarantee comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateRegime {
    /// Euler–Maruyama, general diffusion: order `min{θ, ½}`.
    EulerMaruyama,
    /// Euler–Maruyama with `H = H(u)`, `G = G(u)` and a `k` bound: order `θ`.
    EulerMaruyamaAdditive,
    /// Milstein with `H ≡ 0`: order 1.
    Milstein,
    /// Itô–Taylor of order `γ` with `H ≡ 0`.
    ItoTaylor(TaylorOrder),
}

/// Growth inputs of a rate lookup. `None` marks a constant bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthInputs {
    pub q: Option<f64>,
    pub q_tilde: Option<f64>,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateGuarantee {
    pub regime: RateRegime,
    pub order: f64,
    /// Whether `β` lies in the open interval `required_range`.
    pub beta_valid: bool,
    pub required_range: (f64, f64),
}

/// Order and `β`-range for the given regime.
pub fn rate_for_regime(
    regime: RateRegime,
    growth: GrowthInputs,
    beta: f64,
) -> Result<RateGuarantee, CoefficientError> {
    let GrowthInputs { q, q_tilde, theta } = growth;
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(CoefficientError::InvalidMetadata {
            name: "theta",
            value: theta,
        });
    }
    for (name, v) in [("q", q), ("q_tilde", q_tilde)] {
        if let Some(v) = v {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CoefficientError::InvalidMetadata { name, value: v });
            }
        }
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(CoefficientError::InvalidMetadata {
            name: "beta",
            value: beta,
        });
    }
    let from_q = |qq: f64| ((qq - 1.0) / qq, 1.0);
    let (order, range) = match regime {
        RateRegime::EulerMaruyama => {
            let range = match q {
                None => (0.5, 1.0),
                Some(q) => ((2.0 * q + 1.0) / (2.0 * q + 2.0), 1.0),
            };
            (theta.min(0.5), range)
        }
        RateRegime::EulerMaruyamaAdditive => {
            let range = if q.is_none() && q_tilde.is_none() {
                (0.0, 1.0)
            } else {
                from_q((2.0 * q.unwrap_or(0.0) + 1.0).max(q_tilde.unwrap_or(0.0)))
            };
            (theta, range)
        }
        RateRegime::Milstein | RateRegime::ItoTaylor(_) => {
            let range = if q.is_none() && q_tilde.is_none() {
                (0.5, 1.0)
            } else {
                from_q((2.0 * q.unwrap_or(0.0) + 2.0).max(q_tilde.unwrap_or(0.0)))
            };
            let order = match regime {
                RateRegime::ItoTaylor(g) => g.value(),
                _ => 1.0,
            };
            (order, range)
        }
    };
    Ok(RateGuarantee {
        regime,
        order,
        beta_valid: beta > range.0 && beta < range.1,
        required_range: range,
    })
}

/// The guarantee the coefficient set's declared metadata supports.
///
/// For Euler–Maruyama the additive-noise regime is selected when the set
/// declares a state-free diffusion and a `k` bound.
pub fn theoretical_rate(
    set: &CoefficientSet,
    scheme: RateScheme,
    beta: f64,
) -> Result<RateGuarantee, CoefficientError> {
    let theta = set.holder.ok_or(CoefficientError::MissingMetadata("Hölder exponent theta"))?.theta;
    let h = set.h_bound.as_ref().ok_or(CoefficientError::MissingMetadata("h bound"))?;
    let regime = match scheme {
        RateScheme::EulerMaruyama if set.state_free_diffusion && set.k_bound.is_some() => {
            RateRegime::EulerMaruyamaAdditive
        }
        RateScheme::EulerMaruyama => RateRegime::EulerMaruyama,
        RateScheme::Milstein | RateScheme::ItoTaylor(_) => {
            if set.has_drift_dr() {
                return Err(CoefficientError::AssumptionViolation(format!(
                    "{} needs H ≡ 0 but set {:?} declares a dr drift",
                    match scheme {
                        RateScheme::Milstein => "the Milstein guarantee",
                        _ => "the Itô–Taylor guarantee",
                    },
                    set.name
                )));
            }
            if set.k_bound.is_none() {
                return Err(CoefficientError::MissingMetadata("k bound"));
            }
            match scheme {
                RateScheme::ItoTaylor(g) => RateRegime::ItoTaylor(g),
                _ => RateRegime::Milstein,
            }
        }
    };
    let growth = GrowthInputs {
        q: h.rate_index(),
        q_tilde: set.k_bound.as_ref().and_then(Bound::rate_index),
        theta,
    };
    rate_for_regime(regime, growth, beta)
}

// ---------------------------------------------------------------------------
// Built-in sets

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 3] = ["ex1", "ex2", "tc-gbm"];

/// Parameters of the built-in time-changed geometric Brownian motion.
pub const GBM_MU: f64 = 0.05;
pub const GBM_SIGMA: f64 = 0.2;

pub fn builtin(name: &str) -> Result<CoefficientSet, CoefficientError> {
    match name {
        "ex1" => Ok(ex1()),
        "ex2" => Ok(ex2()),
        "tc-gbm" => Ok(time_changed_gbm(GBM_MU, GBM_SIGMA)),
        other => Err(CoefficientError::UnknownSet(other.to_string())),
    }
}

/// `c(u) = √(1+u)` and its first three derivatives.
fn sqrt1p(k: u8, u: f64) -> f64 {
    let s = (1.0 + u).sqrt();
    match k {
        0 => s,
        1 => 0.5 / s,
        2 => -0.25 / (s * (1.0 + u)),
        3 => 0.375 / (s * (1.0 + u) * (1.0 + u)),
        _ => unreachable!("only three derivatives are registered"),
    }
}

/// Registers `∂_u^k ∂_x^j` of `c(u)·x` for `k ≤ 3`, `j ≤ 1`, and zero for
/// `j ≥ 2`.
fn linear_in_state(
    mut b: CoefficientSetBuilder,
    part: fn(u8, u8) -> Partial,
    c: fn(u8, f64) -> f64,
) -> CoefficientSetBuilder {
    for k in 0..=3u8 {
        if k > 0 {
            b = b.partial(part(k, 0), move |u, x| c(k, u) * x);
        }
        b = b.partial(part(k, 1), move |u, _| c(k, u));
    }
    b.zero_partial(part(0, 2))
}

/// Registers `∂_u^k c(u)` for `k ≤ 3` and zero state derivatives.
fn state_free(
    mut b: CoefficientSetBuilder,
    part: fn(u8, u8) -> Partial,
    c: fn(u8, f64) -> f64,
) -> CoefficientSetBuilder {
    for k in 1..=3u8 {
        b = b.partial(part(k, 0), move |u, _| c(k, u));
    }
    b.zero_partial(part(0, 1))
}

/// `dX = √(1+E) dr + √(1+E) X dE + √(1+E) X dB_E`.
pub fn ex1() -> CoefficientSet {
    let b = CoefficientSet::builder("ex1")
        .drift_dr(|u| (1.0 + u).sqrt())
        .drift(|u, x| (1.0 + u).sqrt() * x)
        .diffusion(|u, x| (1.0 + u).sqrt() * x)
        .h_bound(Bound::new(|u| 2.0 * (1.0 + u).sqrt(), 0.5))
        .holder(1.0, 1.0);
    let b = linear_in_state(b, Partial::f, sqrt1p);
    linear_in_state(b, Partial::g, sqrt1p)
        .build()
        .expect("ex1 is well formed")
}

/// `dY = √(1+E) dr + √(1+E) Y dE + √(1+E) dB_E`.
pub fn ex2() -> CoefficientSet {
    let b = CoefficientSet::builder("ex2")
        .drift_dr(|u| (1.0 + u).sqrt())
        .drift(|u, x| (1.0 + u).sqrt() * x)
        .diffusion(|u, _| (1.0 + u).sqrt())
        .h_bound(Bound::new(|u| 2.0 * (1.0 + u).sqrt(), 0.5))
        // |F_u| + |F_x H| + |F_x F| + |F_x G| + |F_xx G²| ≤ (3 + 2u)(1 + |x|),
        // and log(3 + 2u) is slowly varying.
        .k_bound(Bound::new(|u| 3.0 + 2.0 * u, 0.0))
        .holder(1.0, 1.0)
        .state_free_diffusion();
    let b = linear_in_state(b, Partial::f, sqrt1p);
    state_free(b, Partial::g, sqrt1p)
        .build()
        .expect("ex2 is well formed")
}

/// `dX = μX dE + σX dB_E` with `X_T = x0 exp((μ - σ²/2) E_T + σ B_{E_T})`.
pub fn time_changed_gbm(mu: f64, sigma: f64) -> CoefficientSet {
    let h = mu.abs() + sigma.abs();
    // Every remainder integrand is c·x with |c| ≤ max(h, h³).
    let k = h.max(h * h * h).max(f64::MIN_POSITIVE);
    CoefficientSet::builder("tc-gbm")
        .drift(move |_, x| mu * x)
        .diffusion(move |_, x| sigma * x)
        .partial(Partial::f(0, 1), move |_, _| mu)
        .partial(Partial::g(0, 1), move |_, _| sigma)
        .zero_partial(Partial::f(1, 0))
        .zero_partial(Partial::g(1, 0))
        .zero_partial(Partial::f(0, 2))
        .zero_partial(Partial::g(0, 2))
        .h_bound(Bound::constant(h.max(f64::MIN_POSITIVE)))
        .k_bound(Bound::constant(k))
        .holder(1.0, 1.0)
        .exact_solution(move |x0, e, b| x0 * ((mu - 0.5 * sigma * sigma) * e + sigma * b).exp())
        .build()
        .expect("tc-gbm is well formed")
}
