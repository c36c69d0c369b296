//! Euler–Maruyama-, Milstein- and Itô–Taylor-type stepping on the random
//! partition `τ_n = D_{nδ}`.
//!
//! Every scheme advances the state from `τ_n` to `τ_{n+1}` using the inner
//! clock value `u = nδ`, the inner step `δ`, the outer step
//! `τ_{n+1} - τ_n`, and the Brownian increment over `[nδ, (n+1)δ]` on the
//! inner clock. Itô–Taylor of order 1.5 also uses `ΔZ = ∫ (B_s - B_{nδ}) ds`
//! over the same inner interval.
//!
//! Brownian increments live in [`InnerNoise`], indexed by inner-clock step.
//! A coarse run at `mδ` consumes block sums of the fine increments, so fine
//! and coarse solutions see the same Brownian path.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // Unused when std is in the crate graph.
use num_traits::Float;

use crate::coefficients::{
    hierarchical_set_of, CoefficientError, CoefficientFunction, CoefficientSet, MultiIndex,
    Partial, StateFn, TaylorOrder,
};
use crate::noise::{area_given_increment, Channel, NoiseStream};
use crate::time_change::{DiscretizedTimeChange, TimeChangeError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchemeError {
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error(transparent)]
    TimeChange(#[from] TimeChangeError),
    #[error("non-finite state after step {step} (state before the step: {x})")]
    NonFinite { step: usize, x: f64 },
    #[error("assumption violated: {0}")]
    AssumptionViolation(String),
    #[error("multiple integral for {0} is not available; supported orders stop at 1.5")]
    UnsupportedIndex(String),
    #[error("noise covers {available} inner steps of size {noise_delta} but {needed} steps of size {path_delta} are required")]
    NoiseMismatch {
        available: usize,
        needed: usize,
        noise_delta: f64,
        path_delta: f64,
    },
    #[error("noise was drawn without the time integral of B, which order 1.5 needs")]
    MissingArea,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    EulerMaruyama,
    Milstein,
    ItoTaylor(TaylorOrder),
}

/// What the Milstein correction subtracts from `ΔB²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MilsteinCompensator {
    /// The inner step `δ`, which is the quadratic variation of `B∘E` over
    /// one step.
    #[default]
    InnerClockDelta,
    /// The outer step `τ_{n+1} - τ_n`.
    OuterClockTau,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub milstein_compensator: MilsteinCompensator,
}

impl SchemeConfig {
    pub fn euler_maruyama() -> Self {
        Self {
            kind: SchemeKind::EulerMaruyama,
            milstein_compensator: MilsteinCompensator::default(),
        }
    }

    pub fn milstein(compensator: MilsteinCompensator) -> Self {
        Self {
            kind: SchemeKind::Milstein,
            milstein_compensator: compensator,
        }
    }

    pub fn ito_taylor(gamma: f64) -> Result<Self, SchemeError> {
        Ok(Self {
            kind: SchemeKind::ItoTaylor(TaylorOrder::from_f64(gamma)?),
            milstein_compensator: MilsteinCompensator::default(),
        })
    }

    /// Whether the scheme reads `ΔZ`.
    pub fn needs_area(&self) -> bool {
        self.kind == SchemeKind::ItoTaylor(TaylorOrder::OneAndHalf)
    }
}

/// Brownian data for one step on the inner clock.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepNoise {
    /// `ΔB`.
    pub db: f64,
    /// `ΔZ = ∫ (B_s - B_start) ds`; zero when not drawn.
    pub dz: f64,
}

#[inline]
fn finite(step: usize, x_before: f64, value: f64) -> Result<f64, SchemeError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(SchemeError::NonFinite { step, x: x_before })
    }
}

/// `x + H(nδ)τ + F(nδ, x)δ + G(nδ, x)ΔB`.
pub fn em_step(
    set: &CoefficientSet,
    n: usize,
    x: f64,
    tau_step: f64,
    delta: f64,
    db: f64,
) -> Result<f64, SchemeError> {
    let u = n as f64 * delta;
    let next = x + set.drift_dr(u) * tau_step + set.drift(u, x) * delta + set.diffusion(u, x) * db;
    finite(n, x, next)
}

/// Euler–Maruyama without `H` plus `½ G G_x (ΔB² - c)`, where `c` is `δ` or
/// `τ_step` depending on the compensator.
pub fn milstein_step(
    set: &CoefficientSet,
    n: usize,
    x: f64,
    tau_step: f64,
    delta: f64,
    db: f64,
    compensator: MilsteinCompensator,
) -> Result<f64, SchemeError> {
    require_no_drift_dr(set, "Milstein")?;
    let u = n as f64 * delta;
    let gx = set.partial(Partial::g(0, 1), u, x)?;
    Ok(milstein_update(set, gx, n, u, x, tau_step, delta, db, compensator)?)
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn milstein_update(
    set: &CoefficientSet,
    gx: f64,
    n: usize,
    u: f64,
    x: f64,
    tau_step: f64,
    h: f64,
    db: f64,
    compensator: MilsteinCompensator,
) -> Result<f64, SchemeError> {
    let g = set.diffusion(u, x);
    let c = match compensator {
        MilsteinCompensator::InnerClockDelta => h,
        MilsteinCompensator::OuterClockTau => tau_step,
    };
    let next = x + set.drift(u, x) * h + g * db + 0.5 * (g * gx) * (db * db - c);
    finite(n, x, next)
}

fn require_no_drift_dr(set: &CoefficientSet, scheme: &str) -> Result<(), SchemeError> {
    if set.has_drift_dr() {
        Err(SchemeError::AssumptionViolation(format!(
            "the {scheme}-type scheme needs H ≡ 0 but set {:?} declares a dr drift",
            set.name()
        )))
    } else {
        Ok(())
    }
}

/// `I_α` of the constant 1 over an inner step of length `delta`, from the
/// step's `ΔB` and `ΔZ`.
pub fn multiple_integral(alpha: &MultiIndex, delta: f64, db: f64, dz: f64) -> Result<f64, SchemeError> {
    Ok(match alpha.entries() {
        [0] => delta,
        [1] => db,
        [0, 0] => 0.5 * delta * delta,
        [1, 1] => 0.5 * (db * db - delta),
        [1, 0] => dz,
        [0, 1] => delta * db - dz,
        [1, 1, 1] => (db * db * db - 3.0 * delta * db) / 6.0,
        _ => return Err(SchemeError::UnsupportedIndex(format!("{alpha}"))),
    })
}

/// `x + Σ_{α ∈ A_γ \ {v}} f_α(nδ, x) I_α`. Builds the coefficient functions
/// on every call; use [`Stepper`] in loops.
pub fn ito_taylor_step(
    set: &CoefficientSet,
    order: TaylorOrder,
    n: usize,
    x: f64,
    delta: f64,
    noise: StepNoise,
) -> Result<f64, SchemeError> {
    let stepper = Stepper::new(
        set,
        SchemeConfig {
            kind: SchemeKind::ItoTaylor(order),
            milstein_compensator: MilsteinCompensator::default(),
        },
    )?;
    stepper.step(n, n as f64 * delta, x, 0.0, delta, noise)
}

#[derive(Clone)]
enum Prepared {
    EulerMaruyama,
    Milstein { gx: StateFn, compensator: MilsteinCompensator },
    ItoTaylor(Vec<(MultiIndex, CoefficientFunction)>),
}

/// A scheme bound to a coefficient set with every needed partial resolved.
#[derive(Clone)]
pub struct Stepper {
    set: CoefficientSet,
    config: SchemeConfig,
    prepared: Prepared,
}

impl core::fmt::Debug for Stepper {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Stepper")
            .field("set", &self.set.name())
            .field("config", &self.config)
            .finish()
    }
}

impl Stepper {
    pub fn new(set: &CoefficientSet, config: SchemeConfig) -> Result<Self, SchemeError> {
        let prepared = match config.kind {
            SchemeKind::EulerMaruyama => Prepared::EulerMaruyama,
            SchemeKind::Milstein => {
                require_no_drift_dr(set, "Milstein")?;
                Prepared::Milstein {
                    gx: set.partial_fn(Partial::g(0, 1))?,
                    compensator: config.milstein_compensator,
                }
            }
            SchemeKind::ItoTaylor(order) => {
                require_no_drift_dr(set, "Itô–Taylor")?;
                let terms = hierarchical_set_of(order)
                    .into_iter()
                    .filter(|a| !a.is_empty())
                    .map(|a| {
                        let f = set.coefficient_function(&a)?;
                        Ok((a, f))
                    })
                    .collect::<Result<Vec<_>, CoefficientError>>()?;
                Prepared::ItoTaylor(terms)
            }
        };
        Ok(Self {
            set: set.clone(),
            config,
            prepared,
        })
    }

    pub fn config(&self) -> SchemeConfig {
        self.config
    }

    pub fn set(&self) -> &CoefficientSet {
        &self.set
    }

    /// One step from inner time `u` over an inner interval of length `h`
    /// and an outer interval of length `tau_step`. `n` labels errors.
    #[inline]
    pub fn step(
        &self,
        n: usize,
        u: f64,
        x: f64,
        tau_step: f64,
        h: f64,
        noise: StepNoise,
    ) -> Result<f64, SchemeError> {
        match &self.prepared {
            Prepared::EulerMaruyama => {
                let s = &self.set;
                let next = x + s.drift_dr(u) * tau_step + s.drift(u, x) * h + s.diffusion(u, x) * noise.db;
                finite(n, x, next)
            }
            Prepared::Milstein { gx, compensator } => {
                milstein_update(&self.set, gx(u, x), n, u, x, tau_step, h, noise.db, *compensator)
            }
            Prepared::ItoTaylor(terms) => {
                let mut next = x;
                for (alpha, f) in terms {
                    next += f.eval(u, x) * multiple_integral(alpha, h, noise.db, noise.dz)?;
                }
                finite(n, x, next)
            }
        }
    }
}

/// Brownian increments (and optionally time integrals) on an inner grid.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerNoise {
    delta: f64,
    db: Vec<f64>,
    dz: Option<Vec<f64>>,
}

impl InnerNoise {
    /// Draws `steps` increments from the Brownian channel of
    /// `(seed, stream_id)` and, when `with_area`, the conditional time
    /// integrals from the area channel. `ΔB` does not depend on `with_area`.
    pub fn draw(delta: f64, steps: usize, with_area: bool, seed: u64, stream_id: u64) -> Self {
        let mut brownian = NoiseStream::on_channel(seed, stream_id, Channel::Brownian);
        Self::draw_from(delta, steps, with_area, &mut brownian)
    }

    /// As [`Self::draw`], reading `ΔB` from `rng` and the area draws from the
    /// area channel of the same `(seed, stream_id)`.
    pub fn draw_from(delta: f64, steps: usize, with_area: bool, rng: &mut NoiseStream) -> Self {
        let sd = delta.sqrt();
        let db: Vec<f64> = (0..steps).map(|_| sd * rng.standard_normal()).collect();
        let dz = with_area.then(|| {
            let mut area = NoiseStream::on_channel(rng.seed(), rng.stream_id(), Channel::Area);
            db.iter()
                .map(|&b| area_given_increment(delta, b, area.standard_normal()))
                .collect()
        });
        Self { delta, db, dz }
    }

    pub fn from_increments(delta: f64, db: Vec<f64>, dz: Option<Vec<f64>>) -> Self {
        if let Some(z) = &dz {
            assert_eq!(z.len(), db.len(), "increment and area lengths differ");
        }
        Self { delta, db, dz }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.db.is_empty()
    }

    pub fn has_area(&self) -> bool {
        self.dz.is_some()
    }

    pub fn increments(&self) -> &[f64] {
        &self.db
    }

    pub fn areas(&self) -> Option<&[f64]> {
        self.dz.as_deref()
    }

    #[inline]
    pub fn step(&self, k: usize) -> StepNoise {
        StepNoise {
            db: self.db[k],
            dz: self.dz.as_ref().map_or(0.0, |z| z[k]),
        }
    }

    /// `B_{nδ} - B_0`.
    pub fn brownian_at(&self, n: usize) -> f64 {
        self.db[..n].iter().sum()
    }

    /// Noise over the inner interval covering fine steps `[start, end)`.
    /// The area is exact: `Σ_k [(B_k - B_start) δ + ΔZ_k]`.
    pub fn aggregate(&self, start: usize, end: usize) -> StepNoise {
        let mut db = 0.0;
        let mut dz = 0.0;
        for k in start..end {
            if let Some(z) = &self.dz {
                dz += db * self.delta + z[k];
            }
            db += self.db[k];
        }
        StepNoise { db, dz }
    }

    /// Noise at step `mδ`, from complete blocks of `m` fine steps.
    pub fn coarsen(&self, m: usize) -> InnerNoise {
        assert!(m >= 1, "coarsening factor must be at least 1");
        if m == 1 {
            return self.clone();
        }
        let blocks = self.db.len() / m;
        let mut db = Vec::with_capacity(blocks);
        let mut dz = self.dz.as_ref().map(|_| Vec::with_capacity(blocks));
        for b in 0..blocks {
            let s = self.aggregate(b * m, (b + 1) * m);
            db.push(s.db);
            if let Some(z) = dz.as_mut() {
                z.push(s.dz);
            }
        }
        InnerNoise {
            delta: self.delta * m as f64,
            db,
            dz,
        }
    }
}

/// `X^δ` at the grid points `τ_0, …, τ_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath {
    time_change: DiscretizedTimeChange,
    x0: f64,
    values: Vec<f64>,
}

impl SolutionPath {
    pub fn time_change(&self) -> &DiscretizedTimeChange {
        &self.time_change
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    /// `values[n] = X^δ_{τ_n}`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn terminal(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Piecewise-constant evaluation: `X^δ_t = X^δ_{τ_n}` for
    /// `t ∈ [τ_n, τ_{n+1})`.
    pub fn evaluate_at(&self, t: f64) -> Result<f64, SchemeError> {
        Ok(self.values[self.time_change.step_index(t)?])
    }
}

/// Steps `X` along the whole partition of `path`, reading `noise` step by
/// step. The noise grid must match the path grid and cover `N` steps.
pub fn simulate_on_noise(
    stepper: &Stepper,
    path: &DiscretizedTimeChange,
    noise: &InnerNoise,
    x0: f64,
) -> Result<Vec<f64>, SchemeError> {
    let n_steps = path.stop_index();
    check_noise(stepper, path, noise, n_steps)?;
    let delta = path.delta();
    let d = path.d_values();
    let mut values = Vec::with_capacity(n_steps + 1);
    let mut x = x0;
    values.push(x);
    for n in 0..n_steps {
        x = stepper.step(n, n as f64 * delta, x, d[n + 1] - d[n], delta, noise.step(n))?;
        values.push(x);
    }
    Ok(values)
}

fn check_noise(
    stepper: &Stepper,
    path: &DiscretizedTimeChange,
    noise: &InnerNoise,
    needed: usize,
) -> Result<(), SchemeError> {
    // Coarsened grids are built by repeated multiplication, so allow for
    // rounding in the step comparison.
    let same_grid = (noise.delta() - path.delta()).abs() <= 1e-12 * path.delta();
    if !same_grid || noise.len() < needed {
        return Err(SchemeError::NoiseMismatch {
            available: noise.len(),
            needed,
            noise_delta: noise.delta(),
            path_delta: path.delta(),
        });
    }
    if stepper.config().needs_area() && !noise.has_area() {
        return Err(SchemeError::MissingArea);
    }
    Ok(())
}

/// Simulates `X^δ` on `path`, drawing the Brownian increments from `rng`
/// (and the area draws, when the scheme needs them, from the area channel
/// of the same seed and stream).
pub fn simulate_solution(
    set: &CoefficientSet,
    config: SchemeConfig,
    path: &DiscretizedTimeChange,
    rng: &mut NoiseStream,
    x0: f64,
) -> Result<SolutionPath, SchemeError> {
    let stepper = Stepper::new(set, config)?;
    let noise = InnerNoise::draw_from(path.delta(), path.stop_index(), config.needs_area(), rng);
    let values = simulate_on_noise(&stepper, path, &noise, x0)?;
    Ok(SolutionPath {
        time_change: path.clone(),
        x0,
        values,
    })
}

/// As [`simulate_solution`] with caller-supplied noise.
pub fn solution_on_noise(
    set: &CoefficientSet,
    config: SchemeConfig,
    path: &DiscretizedTimeChange,
    noise: &InnerNoise,
    x0: f64,
) -> Result<SolutionPath, SchemeError> {
    let stepper = Stepper::new(set, config)?;
    let values = simulate_on_noise(&stepper, path, noise, x0)?;
    Ok(SolutionPath {
        time_change: path.clone(),
        x0,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{ex1, ex2, time_changed_gbm, Bound};
    use crate::noise::SubordinatorSpec;
    use crate::stats::{covariance, MeanEstimate};
    use alloc::vec;
    use proptest::prelude::*;

    fn constant_set(h: Option<f64>, f: f64, g: f64) -> CoefficientSet {
        let mut b = CoefficientSet::builder("const")
            .drift(move |_, _| f)
            .diffusion(move |_, _| g)
            .state_free_diffusion()
            .zero_partial(Partial::f(0, 1))
            .zero_partial(Partial::f(1, 0))
            .zero_partial(Partial::g(1, 0))
            .h_bound(Bound::constant(1.0));
        if let Some(h) = h {
            b = b.drift_dr(move |_| h);
        }
        b.build().unwrap()
    }

    fn path(seed: u64, delta: f64) -> DiscretizedTimeChange {
        let spec = SubordinatorSpec::stable(0.8).unwrap();
        let mut rng = NoiseStream::on_channel(seed, 0, Channel::Subordinator);
        DiscretizedTimeChange::simulate(&spec, delta, 1.0, &mut rng).unwrap()
    }

    #[test]
    fn telescoping_examples() {
        let p = path(1, 2f64.powi(-8));
        let noise = InnerNoise::draw(p.delta(), p.stop_index(), false, 1, 0);
        let em = SchemeConfig::euler_maruyama();

        let dr = solution_on_noise(&constant_set(Some(1.0), 0.0, 0.0), em, &p, &noise, 0.0).unwrap();
        for (n, v) in dr.values().iter().enumerate() {
            assert!((v - p.tau(n)).abs() < 1e-12);
        }
        let bm = solution_on_noise(&constant_set(None, 0.0, 1.0), em, &p, &noise, 0.0).unwrap();
        for (n, v) in bm.values().iter().enumerate() {
            assert!((v - noise.brownian_at(n)).abs() < 1e-12);
        }
        let de = solution_on_noise(&constant_set(None, 1.0, 0.0), em, &p, &noise, 0.0).unwrap();
        for (n, v) in de.values().iter().enumerate() {
            assert!((v - n as f64 * p.delta()).abs() < 1e-12);
        }
    }

    #[test]
    fn milstein_examples() {
        let s = CoefficientSet::builder("x")
            .drift(|_, _| 0.0)
            .diffusion(|_, x| x)
            .partial(Partial::g(0, 1), |_, _| 1.0)
            .build()
            .unwrap();
        let v = milstein_step(&s, 0, 1.0, 0.3, 0.01, 0.2, MilsteinCompensator::InnerClockDelta).unwrap();
        assert!((v - 1.215).abs() < 1e-15);
        let outer = milstein_step(&s, 0, 1.0, 0.3, 0.01, 0.2, MilsteinCompensator::OuterClockTau).unwrap();
        assert!((outer - (1.0 + 0.2 + 0.5 * (0.04 - 0.3))).abs() < 1e-15);

        // With G_x ≡ 0 the correction vanishes.
        let add = constant_set(None, 0.3, 0.7);
        let a = milstein_step(&add, 2, 1.5, 0.1, 0.01, -0.05, MilsteinCompensator::InnerClockDelta).unwrap();
        let b = em_step(&add, 2, 1.5, 0.1, 0.01, -0.05).unwrap();
        assert_eq!(a, b);

        assert!(matches!(
            milstein_step(&ex1(), 0, 1.0, 0.1, 0.01, 0.0, MilsteinCompensator::InnerClockDelta),
            Err(SchemeError::AssumptionViolation(_))
        ));
    }

    #[test]
    fn compensated_square_has_mean_zero() {
        let mut rng = NoiseStream::new(31, 0);
        let delta = 0.01;
        let xs: Vec<f64> = (0..100_000)
            .map(|_| {
                let b = crate::noise::brownian_increment(delta, &mut rng);
                b * b - delta
            })
            .collect();
        assert!(MeanEstimate::from_samples(&xs).unwrap().within(0.0, 4.0));
    }

    #[test]
    fn multiple_integral_closed_forms() {
        let i = |e: &[u8], db, dz| multiple_integral(&MultiIndex::new(e), 0.1, db, dz).unwrap();
        assert!((i(&[0, 0], 0.0, 0.0) - 0.005).abs() < 1e-18);
        assert_eq!(i(&[0], 0.3, 0.0), 0.1);
        assert_eq!(i(&[1], 0.3, 0.0), 0.3);
        for &(db, dz) in &[(0.3, 0.01), (-1.2, 0.4), (0.0, -0.02)] {
            let sum = i(&[1, 0], db, dz) + i(&[0, 1], db, dz);
            assert!((sum - 0.1 * db).abs() < 1e-15);
        }
        assert!(matches!(
            multiple_integral(&MultiIndex::new(&[0, 1, 1]), 0.1, 0.0, 0.0),
            Err(SchemeError::UnsupportedIndex(_))
        ));
    }

    #[test]
    fn multiple_integral_moments() {
        let delta = 0.1;
        let n = 100_000;
        let mut rng = NoiseStream::new(12, 0);
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| crate::noise::correlated_area_pair(delta, &mut rng))
            .collect();
        let int = |e: &[u8]| -> Vec<f64> {
            let a = MultiIndex::new(e);
            pairs
                .iter()
                .map(|&(b, z)| multiple_integral(&a, delta, b, z).unwrap())
                .collect()
        };
        let sq = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x * x).collect() };
        let i1 = int(&[1]);
        let i11 = int(&[1, 1]);
        let i10 = int(&[1, 0]);
        let i111 = int(&[1, 1, 1]);
        let m = |v: &[f64]| MeanEstimate::from_samples(v).unwrap();
        assert!(m(&i1).within(0.0, 4.0));
        assert!(m(&sq(&i1)).within(delta, 4.0));
        assert!(m(&i11).within(0.0, 4.0));
        assert!(m(&sq(&i11)).within(delta * delta / 2.0, 4.0));
        assert!(m(&sq(&i10)).within(delta.powi(3) / 3.0, 4.0));
        assert!(covariance(&i1, &i10).unwrap().within(delta * delta / 2.0, 4.0));
        assert!(m(&sq(&i111)).within(delta.powi(3) / 6.0, 4.0));
    }

    /// Left-point Itô sums and a trapezoid time integral on a fine path.
    fn fine_grid_integrals(delta: f64, k: usize, rng: &mut NoiseStream) -> [f64; 7] {
        let h = delta / k as f64;
        let (mut b, mut area, mut i11, mut i111, mut i01) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for j in 0..k {
            let db = crate::noise::brownian_increment(h, rng);
            i111 += i11 * db;
            i11 += b * db;
            i01 += j as f64 * h * db;
            area += (b + 0.5 * db) * h;
            b += db;
        }
        [delta, b, 0.5 * delta * delta, i11, area, i01, i111]
    }

    #[test]
    fn multiple_integrals_match_fine_grid_oracle() {
        let delta = 0.1;
        let indices: [&[u8]; 7] = [&[0], &[1], &[0, 0], &[1, 1], &[1, 0], &[0, 1], &[1, 1, 1]];
        let mut rng = NoiseStream::new(99, 0);
        let mut abs_err = [0.0; 7];
        let paths = 100;
        for _ in 0..paths {
            let oracle = fine_grid_integrals(delta, 10_000, &mut rng);
            let (db, dz) = (oracle[1], oracle[4]);
            for (k, e) in indices.iter().enumerate() {
                let closed = multiple_integral(&MultiIndex::new(e), delta, db, dz).unwrap();
                abs_err[k] += (closed - oracle[k]).abs() / paths as f64;
            }
        }
        for (k, e) in indices.iter().enumerate() {
            let a = MultiIndex::new(e);
            let scale = delta.powf((a.len() + a.zeros()) as f64 / 2.0);
            assert!(abs_err[k] <= 1e-2 * scale, "{a}: {} vs scale {scale}", abs_err[k]);
        }
    }

    #[test]
    fn ito_taylor_1_5_on_gbm_by_hand() {
        let (mu, sigma) = (0.05, 0.2);
        let s = time_changed_gbm(mu, sigma);
        let (delta, db, dz, x) = (0.01, 0.1, 0.0005, 1.0);
        let got = ito_taylor_step(&s, TaylorOrder::OneAndHalf, 0, x, delta, StepNoise { db, dz }).unwrap();
        let want = x
            + mu * x * delta
            + sigma * x * db
            + sigma * sigma * x * 0.5 * (db * db - delta)
            + mu * sigma * x * (delta * db - dz)
            + sigma * mu * x * dz
            + mu * mu * x * delta * delta / 2.0
            + sigma.powi(3) * x * (db.powi(3) - 3.0 * delta * db) / 6.0;
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        assert!((got - 1.020_507_458_333_333).abs() < 1e-12, "{got}");
    }

    #[test]
    fn area_noise_coarsening_is_exact() {
        // Fine areas from an explicit path make the block formula checkable.
        let delta = 0.25;
        let db = vec![0.1, -0.3, 0.2, 0.05];
        let dz = vec![0.01, -0.02, 0.03, 0.0];
        let fine = InnerNoise::from_increments(delta, db.clone(), Some(dz.clone()));
        let c = fine.coarsen(2);
        assert_eq!(c.len(), 2);
        assert!((c.increments()[0] - (-0.2)).abs() < 1e-15);
        let want_z0 = 0.01 + (0.1 * delta + -0.02);
        assert!((c.areas().unwrap()[0] - want_z0).abs() < 1e-15);
        let want_z1 = 0.03 + (0.2 * delta + 0.0);
        assert!((c.areas().unwrap()[1] - want_z1).abs() < 1e-15);
        // Coarsening twice equals coarsening once by the product.
        let a = fine.coarsen(2).coarsen(2);
        let b = fine.coarsen(4);
        assert!((a.increments()[0] - b.increments()[0]).abs() < 1e-15);
        assert!((a.areas().unwrap()[0] - b.areas().unwrap()[0]).abs() < 1e-15);
    }

    #[test]
    fn increments_do_not_depend_on_area_flag() {
        let a = InnerNoise::draw(0.01, 50, false, 4, 2);
        let b = InnerNoise::draw(0.01, 50, true, 4, 2);
        assert_eq!(a.increments(), b.increments());
        assert!(b.has_area() && !a.has_area());
    }

    #[test]
    fn evaluation_rule() {
        let p = DiscretizedTimeChange::from_values(0.5, 3.0, vec![0.0, 1.2, 1.9, 3.4]).unwrap();
        let noise = InnerNoise::from_increments(0.5, vec![0.3, -0.1], None);
        let sol = solution_on_noise(&ex2(), SchemeConfig::euler_maruyama(), &p, &noise, 1.0).unwrap();
        assert_eq!(sol.values().len(), 3);
        assert_eq!(sol.evaluate_at(0.0).unwrap(), 1.0);
        assert_eq!(sol.evaluate_at(1.2).unwrap(), sol.values()[1]);
        assert_eq!(sol.evaluate_at(1.5).unwrap(), sol.values()[1]);
        assert_eq!(sol.evaluate_at(3.0).unwrap(), sol.values()[2]);
        assert!(sol.evaluate_at(3.1).is_err());

        // N = 0: a single value.
        let p0 = DiscretizedTimeChange::from_values(0.5, 1.0, vec![0.0, 1.5]).unwrap();
        let empty = InnerNoise::from_increments(0.5, vec![], None);
        let sol0 = solution_on_noise(&ex1(), SchemeConfig::euler_maruyama(), &p0, &empty, 2.0).unwrap();
        assert_eq!(sol0.values(), &[2.0]);
    }

    #[test]
    fn ex1_em_smoke() {
        let p = path(7, 2f64.powi(-10));
        let mut rng = NoiseStream::on_channel(7, 0, Channel::Brownian);
        let sol = simulate_solution(&ex1(), SchemeConfig::euler_maruyama(), &p, &mut rng, 1.0).unwrap();
        assert_eq!(sol.values().len(), p.stop_index() + 1);
        assert!(sol.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn overflow_is_reported_with_step() {
        let s = CoefficientSet::builder("explode")
            .drift(|_, x| x * x * 1e10)
            .diffusion(|_, _| 0.0)
            .build()
            .unwrap();
        let p = path(3, 2f64.powi(-6));
        let noise = InnerNoise::draw(p.delta(), p.stop_index(), false, 3, 0);
        let err = solution_on_noise(&s, SchemeConfig::euler_maruyama(), &p, &noise, 1.0).unwrap_err();
        assert!(matches!(err, SchemeError::NonFinite { .. }), "{err:?}");
    }

    #[test]
    fn noise_mismatch_is_reported() {
        let p = path(3, 2f64.powi(-6));
        let short = InnerNoise::draw(p.delta(), 0, false, 3, 0);
        if p.stop_index() > 0 {
            assert!(matches!(
                solution_on_noise(&ex1(), SchemeConfig::euler_maruyama(), &p, &short, 1.0),
                Err(SchemeError::NoiseMismatch { .. })
            ));
        }
        let no_area = InnerNoise::draw(p.delta(), p.stop_index(), false, 3, 0);
        assert_eq!(
            solution_on_noise(&time_changed_gbm(0.05, 0.2), SchemeConfig::ito_taylor(1.5).unwrap(), &p, &no_area, 1.0),
            Err(SchemeError::MissingArea)
        );
    }

    #[test]
    fn milstein_tracks_exact_gbm() {
        let s = time_changed_gbm(0.05, 0.2);
        let exact = s.exact_solution().unwrap().clone();
        for seed in 0..10 {
            let p = path(seed, 2f64.powi(-10));
            let noise = InnerNoise::draw(p.delta(), p.stop_index(), false, seed, 0);
            let sol = solution_on_noise(
                &s,
                SchemeConfig::milstein(MilsteinCompensator::InnerClockDelta),
                &p,
                &noise,
                1.0,
            )
            .unwrap();
            let n = p.stop_index();
            let want = exact(1.0, n as f64 * p.delta(), noise.brownian_at(n));
            assert!((sol.terminal() - want).abs() < 10.0 * p.delta(), "{} vs {want}", sol.terminal());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn scheme_nesting(seed in any::<u64>(), x in -3.0f64..3.0, k in 0usize..200) {
            let mut rng = NoiseStream::new(seed, 0);
            let delta = 2f64.powi(-8);
            let (db, dz) = crate::noise::correlated_area_pair(delta, &mut rng);
            let noise = StepNoise { db, dz };
            let tau = 0.01;
            for s in [time_changed_gbm(0.05, 0.2), {
                // ex1 without its dr drift.
                let e = ex1();
                let mut b = CoefficientSet::builder("ex1-no-h")
                    .drift(|u, x| (1.0 + u).sqrt() * x)
                    .diffusion(|u, x| (1.0 + u).sqrt() * x);
                for p in e.supplied_partials() {
                    let e2 = e.clone();
                    b = b.partial(p, move |u, x| e2.partial(p, u, x).unwrap());
                }
                b.build().unwrap()
            }] {
                let half = ito_taylor_step(&s, TaylorOrder::Half, k, x, delta, noise).unwrap();
                let em = em_step(&s, k, x, tau, delta, db).unwrap();
                prop_assert!((half - em).abs() <= 1e-12 * em.abs().max(1e-300));
                let one = ito_taylor_step(&s, TaylorOrder::One, k, x, delta, noise).unwrap();
                let mil = milstein_step(&s, k, x, tau, delta, db, MilsteinCompensator::InnerClockDelta).unwrap();
                prop_assert!((one - mil).abs() <= 1e-12 * mil.abs().max(1e-300));
            }
        }

        #[test]
        fn coarse_noise_is_block_sums(seed in any::<u64>(), m_pow in 0u32..5) {
            let m = 1usize << m_pow;
            let fine = InnerNoise::draw(2f64.powi(-10), 256, true, seed, 1);
            let coarse = fine.coarsen(m);
            prop_assert_eq!(coarse.len(), 256 / m);
            for b in 0..coarse.len() {
                let direct: f64 = fine.increments()[b * m..(b + 1) * m].iter().sum();
                prop_assert!((coarse.increments()[b] - direct).abs() < 1e-14);
            }
            let total = fine.brownian_at(256);
            prop_assert!((coarse.brownian_at(coarse.len()) - total).abs() < 1e-12);
        }

        #[test]
        fn determinism(seed in any::<u64>()) {
            let p = path(seed, 2f64.powi(-7));
            let mut a = NoiseStream::on_channel(seed, 0, Channel::Brownian);
            let mut b = NoiseStream::on_channel(seed, 0, Channel::Brownian);
            let s = ex1();
            let x = simulate_solution(&s, SchemeConfig::euler_maruyama(), &p, &mut a, 1.0).unwrap();
            let y = simulate_solution(&s, SchemeConfig::euler_maruyama(), &p, &mut b, 1.0).unwrap();
            prop_assert_eq!(x, y);
        }
    }
}
