//! Moment classifiers and Monte Carlo probes of the inverse subordinator.
//!
//! The classifiers are exact statements about when `E[e^{f(E_t)}]` and
//! `E[1/f(E_t)]` are finite. The probes are Monte Carlo evidence only:
//! finiteness of an expectation cannot be decided from samples, so the
//! probe reports a hint based on whether a single summand dominates the
//! running sum.
//!
//! Every estimator draws path `i` from streams keyed by `(seed, i)`, so
//! results do not depend on the [`PathExecutor`] used.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // Unused when std is in the crate graph.
use num_traits::Float;

use crate::executor::PathExecutor;
use crate::noise::{Channel, NoiseError, NoiseStream, SubordinatorSpec};
use crate::stats::{linear_fit, CompensatedSum, LinearFit, MeanEstimate};
use crate::time_change::DEFAULT_MAX_STEPS;

/// Default inner step used to realize `E_t` by `E^δ_t`.
pub const DEFAULT_DELTA: f64 = 1.0 / 4096.0;
/// Share of the running total above which one summand counts as dominant.
pub const DOMINANCE_THRESHOLD: f64 = 0.5;
/// Sample sizes at which the probe records its running mean.
pub const PROBE_CHECKPOINTS: [usize; 3] = [1_000, 10_000, 100_000];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("inverse step {delta} is too coarse for the event E_t <= {u}; need delta < u/4")]
    ResolutionTooCoarse { delta: f64, u: f64 },
    #[error("time grid needs at least 4 positive points spanning a factor of 10")]
    DegenerateGrid,
    #[error("time grid must be nondecreasing")]
    UnsortedGrid,
    #[error("invalid argument {name} = {value}")]
    InvalidArgument { name: &'static str, value: f64 },
    #[error("the probe only supports Power and ExpOfPower test functions")]
    UnsupportedTestFunction,
    #[error("every path was excluded")]
    AllExcluded,
    #[error("subordinator did not pass {t} within {steps} steps")]
    StepCapExceeded { t: f64, steps: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MomentVerdict {
    Finite,
    Infinite,
    Boundary,
}

/// Exponential moments `E[e^{f(E_t)}]` for `f` regularly varying with index
/// `p`: finite for `p < 1/(1-β)`, infinite above, undecided at equality.
///
/// For `β = 0` (Gamma-like subordinators) the criterion also assumes
/// `ψ(∞) = ∞` with `ψ'` regularly varying of index `-1`; that hypothesis is
/// taken as given, not checked.
pub fn classify_exp_moment(beta: f64, p: f64) -> MomentVerdict {
    debug_assert!((0.0..1.0).contains(&beta) && p > 0.0);
    let critical = 1.0 / (1.0 - beta);
    if (p - critical).abs() <= 1e-12 * critical {
        MomentVerdict::Boundary
    } else if p < critical {
        MomentVerdict::Finite
    } else {
        MomentVerdict::Infinite
    }
}

/// Negative moments `E[1/f(E_t)]` for `f` regularly varying at 0 with
/// index `p`. At `p = 1` the moment is infinite when the Lévy tail at `t`
/// is positive and `f(s) ≤ cs` near zero (`linear_near_zero`); otherwise
/// the boundary is reported as such. A zero tail with `p > 1` is also
/// reported as a boundary.
pub fn classify_negative_moment(p: f64, levy_tail_at_t: f64, linear_near_zero: bool) -> MomentVerdict {
    debug_assert!(p > 0.0 && levy_tail_at_t >= 0.0);
    if p < 1.0 {
        MomentVerdict::Finite
    } else if p == 1.0 {
        if levy_tail_at_t > 0.0 && linear_near_zero {
            MomentVerdict::Infinite
        } else {
            MomentVerdict::Boundary
        }
    } else if levy_tail_at_t > 0.0 {
        MomentVerdict::Infinite
    } else {
        MomentVerdict::Boundary
    }
}

/// A source of `E_t` samples along one path per stream id.
pub trait InverseClock: Sync {
    /// Inner grid step; `E_t` values are multiples of it.
    fn delta(&self) -> f64;

    /// `E_t` at each of the nondecreasing times `ts`, all on path `stream_id`.
    fn sample(&self, ts: &[f64], stream_id: u64) -> Result<Vec<f64>, DiagnosticsError>;
}

/// `E^δ` of a simulated subordinator.
#[derive(Debug, Clone)]
pub struct SubordinatorClock {
    pub spec: SubordinatorSpec,
    pub delta: f64,
    pub seed: u64,
}

impl SubordinatorClock {
    pub fn new(spec: SubordinatorSpec, delta: f64, seed: u64) -> Self {
        Self { spec, delta, seed }
    }
}

impl InverseClock for SubordinatorClock {
    fn delta(&self) -> f64 {
        self.delta
    }

    fn sample(&self, ts: &[f64], stream_id: u64) -> Result<Vec<f64>, DiagnosticsError> {
        if ts.windows(2).any(|w| w[0] > w[1]) {
            return Err(DiagnosticsError::UnsortedGrid);
        }
        let sampler = self.spec.sampler(self.delta)?;
        let mut rng = NoiseStream::on_channel(self.seed, stream_id, Channel::Subordinator);
        let mut n = 0u64;
        let mut next = sampler.sample(&mut rng)?;
        let mut out = Vec::with_capacity(ts.len());
        for &t in ts {
            // Invariant: D_{nδ} ≤ t_prev and next = D_{(n+1)δ}.
            while next <= t {
                if n == DEFAULT_MAX_STEPS {
                    return Err(DiagnosticsError::StepCapExceeded { t, steps: n });
                }
                n += 1;
                next += sampler.sample(&mut rng)?;
            }
            out.push(n as f64 * self.delta);
        }
        Ok(out)
    }
}

/// Test double with `E_t = t`.
#[derive(Debug, Clone, Copy)]
pub struct IdentityClock {
    pub delta: f64,
}

impl InverseClock for IdentityClock {
    fn delta(&self) -> f64 {
        self.delta
    }

    fn sample(&self, ts: &[f64], _stream_id: u64) -> Result<Vec<f64>, DiagnosticsError> {
        Ok(ts.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallBallEstimate {
    /// Frequency of `{E^δ_t ≤ u}`.
    pub p_hat: f64,
    pub std_error: f64,
    /// `ν[t, ∞) · u`.
    pub predicted: f64,
    pub n: usize,
}

impl SmallBallEstimate {
    /// `|p_hat - predicted| ≤ k·se + slack·predicted`.
    pub fn agrees(&self, k: f64, slack: f64) -> bool {
        (self.p_hat - self.predicted).abs() <= k * self.std_error + slack * self.predicted
    }
}

/// Frequency of `{E^δ_t ≤ u}` against `ν[t, ∞) u`.
///
/// `E^δ_t ≤ u` holds iff `D_{kδ} > t` with `k = ⌊u/δ⌋ + 1`, so each path
/// only needs `k` increments.
pub fn estimate_small_ball<E: PathExecutor>(
    spec: &SubordinatorSpec,
    t: f64,
    u: f64,
    n: usize,
    delta: f64,
    seed: u64,
    executor: &E,
) -> Result<SmallBallEstimate, DiagnosticsError> {
    if !(t > 0.0) {
        return Err(DiagnosticsError::InvalidArgument { name: "t", value: t });
    }
    if !(u > 0.0) {
        return Err(DiagnosticsError::InvalidArgument { name: "u", value: u });
    }
    if n == 0 {
        return Err(DiagnosticsError::InvalidArgument { name: "n", value: 0.0 });
    }
    if delta >= u / 4.0 {
        return Err(DiagnosticsError::ResolutionTooCoarse { delta, u });
    }
    let predicted = spec.levy_tail(t)? * u;
    let sampler = spec.sampler(delta)?;
    let k = (u / delta).floor() as usize + 1;
    let hits = executor.run(n, |i| -> Result<bool, NoiseError> {
        let mut rng = NoiseStream::on_channel(seed, i as u64, Channel::Subordinator);
        let mut d = 0.0;
        for _ in 0..k {
            d += sampler.sample(&mut rng)?;
            if d > t {
                return Ok(true);
            }
        }
        Ok(false)
    });
    let mut count = 0usize;
    for h in hits {
        count += usize::from(h?);
    }
    let p_hat = count as f64 / n as f64;
    Ok(SmallBallEstimate {
        p_hat,
        std_error: (p_hat * (1.0 - p_hat) / n as f64).sqrt(),
        predicted,
        n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    /// Fitted exponent of `E[E_t] ∝ t^slope`.
    pub fit: LinearFit,
    /// `(t, mean E_t)` per grid point.
    pub means: Vec<(f64, MeanEstimate)>,
}

/// Least-squares slope of `log mean(E_t)` against `log t`.
pub fn estimate_mean_scaling<C: InverseClock, E: PathExecutor>(
    clock: &C,
    t_grid: &[f64],
    n: usize,
    executor: &E,
) -> Result<ScalingFit, DiagnosticsError> {
    let lo = t_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t_grid.iter().copied().fold(0.0, f64::max);
    if t_grid.len() < 4 || !(lo > 0.0) || hi < 10.0 * lo {
        return Err(DiagnosticsError::DegenerateGrid);
    }
    if t_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(DiagnosticsError::UnsortedGrid);
    }
    if n < 2 {
        return Err(DiagnosticsError::InvalidArgument { name: "n", value: n as f64 });
    }
    let samples = executor.run(n, |i| clock.sample(t_grid, i as u64));
    let mut columns: Vec<Vec<f64>> = (0..t_grid.len()).map(|_| Vec::with_capacity(n)).collect();
    for s in samples {
        for (col, e) in columns.iter_mut().zip(s?) {
            col.push(e);
        }
    }
    let means: Vec<(f64, MeanEstimate)> = t_grid
        .iter()
        .zip(&columns)
        .map(|(&t, col)| (t, MeanEstimate::from_samples(col).expect("n >= 2")))
        .collect();
    if means.iter().any(|(_, m)| !(m.mean > 0.0)) {
        return Err(DiagnosticsError::DegenerateGrid);
    }
    let xs: Vec<f64> = means.iter().map(|(t, _)| t.ln()).collect();
    let ys: Vec<f64> = means.iter().map(|(_, m)| m.mean.ln()).collect();
    let fit = linear_fit(&xs, &ys).ok_or(DiagnosticsError::DegenerateGrid)?;
    Ok(ScalingFit { fit, means })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitBracket {
    /// `√(2/π) mean(E_T^{-1/2} e^{-1/(2E_T)})`.
    pub lower: MeanEstimate,
    /// Frequency of `{max_n B_{nδ} ≤ 1}` over the grid up to `E^δ_T`.
    pub estimate: MeanEstimate,
    /// `√(2/π) mean(E_T^{-1/2})`.
    pub upper: MeanEstimate,
    /// Paths with `E^δ_T = 0`, left out of all three means.
    pub excluded: usize,
}

impl ExitBracket {
    /// `lower - k·se ≤ estimate ≤ upper + k·se`, with the standard errors
    /// of the estimate and the bound combined in quadrature.
    pub fn holds(&self, k: f64) -> bool {
        let se = |a: &MeanEstimate| (a.std_error.powi(2) + self.estimate.std_error.powi(2)).sqrt();
        self.estimate.mean >= self.lower.mean - k * se(&self.lower)
            && self.estimate.mean <= self.upper.mean + k * se(&self.upper)
    }
}

/// One-sided exit bracket for `B∘E` on `[0, T]`, with `B` on the Brownian
/// channel of each path.
pub fn exit_probability_bracket<C: InverseClock, E: PathExecutor>(
    clock: &C,
    horizon: f64,
    n: usize,
    seed: u64,
    executor: &E,
) -> Result<ExitBracket, DiagnosticsError> {
    if !(horizon > 0.0) {
        return Err(DiagnosticsError::InvalidArgument {
            name: "T",
            value: horizon,
        });
    }
    let delta = clock.delta();
    let c = (2.0 / PI).sqrt();
    let rows = executor.run(n, |i| -> Result<Option<(f64, f64, f64)>, DiagnosticsError> {
        let e = clock.sample(&[horizon], i as u64)?[0];
        if e <= 0.0 {
            return Ok(None);
        }
        let steps = (e / delta).round() as usize;
        let mut rng = NoiseStream::on_channel(seed, i as u64, Channel::Brownian);
        let sd = delta.sqrt();
        let mut b = 0.0;
        let mut below = true;
        for _ in 0..steps {
            b += sd * rng.standard_normal();
            if b > 1.0 {
                below = false;
                break;
            }
        }
        let inv_sqrt = 1.0 / e.sqrt();
        Ok(Some((
            c * inv_sqrt * (-0.5 / e).exp(),
            f64::from(u8::from(below)),
            c * inv_sqrt,
        )))
    });
    let mut lower = Vec::with_capacity(n);
    let mut estimate = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut excluded = 0;
    for r in rows {
        match r? {
            Some((l, e, u)) => {
                lower.push(l);
                estimate.push(e);
                upper.push(u);
            }
            None => excluded += 1,
        }
    }
    let mean = |v: &[f64]| MeanEstimate::from_samples(v).ok_or(DiagnosticsError::AllExcluded);
    Ok(ExitBracket {
        lower: mean(&lower)?,
        estimate: mean(&estimate)?,
        upper: mean(&upper)?,
        excluded,
    })
}

/// Test functions `f` for moment queries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    /// `f(s) = λ s`.
    Power(f64),
    /// `f(s) = s^p`.
    ExpOfPower(f64),
    /// `f(s) = s^p`, used in `E[1/f(E_t)]`.
    InversePower(f64),
}

impl TestFunction {
    /// The regular-variation index of `f`.
    pub fn index(&self) -> f64 {
        match *self {
            TestFunction::Power(_) => 1.0,
            TestFunction::ExpOfPower(p) | TestFunction::InversePower(p) => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentQuery {
    pub spec: SubordinatorSpec,
    pub t: f64,
    pub test_function: TestFunction,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeHint {
    StableMean,
    DivergingMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    /// `(sample size, running mean)` at each checkpoint reached.
    pub running_means: Vec<(usize, f64)>,
    /// Largest single summand divided by the total.
    pub max_term_share: f64,
    pub overflowed: usize,
    pub hint: ProbeHint,
}

/// Running means of `e^{f(E^δ_t)}` with the max-term dominance hint.
pub fn probe_exp_moment<E: PathExecutor>(
    query: &MomentQuery,
    delta: f64,
    seed: u64,
    executor: &E,
) -> Result<ProbeResult, DiagnosticsError> {
    let f = query.test_function;
    if let TestFunction::InversePower(_) = f {
        return Err(DiagnosticsError::UnsupportedTestFunction);
    }
    let exponent = move |e: f64| match f {
        TestFunction::Power(lambda) => lambda * e,
        TestFunction::ExpOfPower(p) | TestFunction::InversePower(p) => e.powf(p),
    };
    if query.n_samples == 0 {
        return Err(DiagnosticsError::InvalidArgument { name: "n_samples", value: 0.0 });
    }
    let clock = SubordinatorClock::new(query.spec.clone(), delta, seed);
    let terms = executor.run(query.n_samples, |i| {
        clock.sample(&[query.t], i as u64).map(|e| exponent(e[0]).exp())
    });
    let mut total = CompensatedSum::new();
    let mut max_term = 0.0f64;
    let mut overflowed = 0;
    let mut running_means = Vec::new();
    for (i, term) in terms.into_iter().enumerate() {
        let term = term?;
        if !term.is_finite() {
            overflowed += 1;
        }
        total.add(term);
        max_term = max_term.max(term);
        let count = i + 1;
        if PROBE_CHECKPOINTS.contains(&count) || count == query.n_samples {
            if running_means.last().map(|&(c, _)| c) != Some(count) {
                running_means.push((count, total.value() / count as f64));
            }
        }
    }
    let total = total.value();
    let max_term_share = if overflowed > 0 || !total.is_finite() {
        1.0
    } else {
        max_term / total
    };
    let hint = if overflowed > 0 || max_term_share > DOMINANCE_THRESHOLD {
        ProbeHint::DivergingMean
    } else {
        ProbeHint::StableMean
    };
    Ok(ProbeResult {
        running_means,
        max_term_share,
        overflowed,
        hint,
    })
}
