//! Strong-error experiments on coupled paths and log-log order fitting.
//!
//! For each path the harness simulates one fine time change at `δ_ref`,
//! extended so that every coarse step `mδ_ref` reaches past the horizon,
//! and one Brownian path on the fine inner grid. Every coarse solution is
//! driven by the coarsened time change and the block sums of the same
//! Brownian increments.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // Unused when std is in the crate graph.
use num_traits::Float;

use crate::coefficients::CoefficientSet;
use crate::executor::PathExecutor;
use crate::noise::{Channel, NoiseStream, SubordinatorSpec};
use crate::schemes::{simulate_on_noise, InnerNoise, SchemeConfig, SchemeError, Stepper};
use crate::stats::{linear_fit, LinearFit, MeanEstimate};
use crate::time_change::{DiscretizedTimeChange, TimeChangeError, DEFAULT_MAX_STEPS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConvergenceError {
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    TimeChange(#[from] TimeChangeError),
    #[error("step {delta} is not 2^j times the reference step {delta_ref} for an integer j >= 1")]
    NotDyadicMultiple { delta: f64, delta_ref: f64 },
    #[error("step list is empty")]
    NoSteps,
    #[error("invalid argument {name} = {value}")]
    InvalidArgument { name: &'static str, value: f64 },
    #[error("coefficient set '{0}' has no exact solution registered")]
    NoExactSolution(String),
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("need at least two rows with positive error, got {0}")]
    TooFewRows(usize),
    #[error("error {error} at step {delta} is not positive")]
    NonPositiveError { delta: f64, error: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorMode {
    /// Against the solution at `δ_ref` on the same noise.
    #[default]
    VsReference,
    /// Against the registered exact solution at `(E^{δ_ref}_T, B_{E^{δ_ref}_T})`.
    VsClosedForm,
}

/// How the coarse solution is read at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TerminalRule {
    /// `X^δ_{τ_N}`, the piecewise-constant value at `T`.
    #[default]
    Step,
    /// One extra step from `τ_N` to `T` over the inner interval
    /// `[Nδ, E^{δ_ref}_T]`, so the coarse and reference solutions end at the
    /// same inner time.
    Interpolated,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub sde: CoefficientSet,
    pub subordinator: SubordinatorSpec,
    pub scheme: SchemeConfig,
    pub horizon: f64,
    pub x0: f64,
    pub delta_ref: f64,
    pub deltas: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub error_mode: ErrorMode,
    pub terminal: TerminalRule,
}

impl ExperimentConfig {
    /// Reference step `2^-13`, steps `2^-12, …, 2^-7`, 100 paths, `T = 1`,
    /// `x0 = 1`.
    pub fn new(sde: CoefficientSet, subordinator: SubordinatorSpec, scheme: SchemeConfig, seed: u64) -> Self {
        Self {
            sde,
            subordinator,
            scheme,
            horizon: 1.0,
            x0: 1.0,
            delta_ref: 2f64.powi(-13),
            deltas: (7..=12).map(|k| 2f64.powi(-k)).collect(),
            n_paths: 100,
            seed,
            error_mode: ErrorMode::VsReference,
            terminal: TerminalRule::Step,
        }
    }

    /// Coarsening factors `δ/δ_ref`, one per entry of `deltas`.
    pub fn factors(&self) -> Result<Vec<usize>, ConvergenceError> {
        if self.deltas.is_empty() {
            return Err(ConvergenceError::NoSteps);
        }
        if !(self.delta_ref > 0.0 && self.delta_ref < 1.0) {
            return Err(ConvergenceError::InvalidArgument {
                name: "delta_ref",
                value: self.delta_ref,
            });
        }
        self.deltas
            .iter()
            .map(|&delta| {
                let ratio = delta / self.delta_ref;
                let m = ratio.round();
                let dyadic = m >= 2.0 && (ratio - m).abs() <= 1e-9 * m && (m as u64).is_power_of_two();
                if dyadic && delta < 1.0 {
                    Ok(m as usize)
                } else {
                    Err(ConvergenceError::NotDyadicMultiple {
                        delta,
                        delta_ref: self.delta_ref,
                    })
                }
            })
            .collect()
    }

    fn validate(&self) -> Result<Vec<usize>, ConvergenceError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(ConvergenceError::InvalidArgument {
                name: "horizon",
                value: self.horizon,
            });
        }
        if !self.x0.is_finite() {
            return Err(ConvergenceError::InvalidArgument { name: "x0", value: self.x0 });
        }
        if self.n_paths == 0 {
            return Err(ConvergenceError::InvalidArgument { name: "n_paths", value: 0.0 });
        }
        if self.error_mode == ErrorMode::VsClosedForm && self.sde.exact_solution().is_none() {
            return Err(ConvergenceError::NoExactSolution(self.sde.name().into()));
        }
        self.factors()
    }
}

/// Errors of one path, one entry per configured step in config order.
/// `None` marks a coarse solution that overflowed.
#[derive(Debug, Clone, PartialEq)]
pub struct PathErrors {
    pub terminal: Vec<Option<f64>>,
    /// `max_n |X^δ_{τ_n} - X^{ref}_{τ_n}|` over the coarse anchors up to `N`.
    pub sup: Vec<Option<f64>>,
}

/// Runs path `index` of the experiment. `Ok(None)` means the reference
/// solution overflowed and the path is excluded from every row.
pub fn run_path(
    config: &ExperimentConfig,
    stepper: &Stepper,
    factors: &[usize],
    index: u64,
) -> Result<Option<PathErrors>, ConvergenceError> {
    let multiple = factors.iter().copied().max().unwrap_or(1);
    let mut sub = NoiseStream::on_channel(config.seed, index, Channel::Subordinator);
    let fine = DiscretizedTimeChange::simulate_extended(
        &config.subordinator,
        config.delta_ref,
        config.horizon,
        multiple,
        DEFAULT_MAX_STEPS,
        &mut sub,
    )?;
    let extended_len = fine.d_values().len() - 1;
    let noise = InnerNoise::draw(config.delta_ref, extended_len, config.scheme.needs_area(), config.seed, index);
    let n_ref = fine.stop_index();

    // Reference values at fine indices 0..=N_ref.
    let reference: Vec<f64> = match config.error_mode {
        ErrorMode::VsReference => match simulate_on_noise(stepper, &fine, &noise, config.x0) {
            Ok(v) => v,
            Err(SchemeError::NonFinite { .. }) => return Ok(None),
            Err(e) => return Err(e.into()),
        },
        ErrorMode::VsClosedForm => {
            let exact = config.sde.exact_solution().expect("validated");
            let mut b = 0.0;
            let mut out = Vec::with_capacity(n_ref + 1);
            out.push(exact(config.x0, 0.0, 0.0));
            for k in 0..n_ref {
                b += noise.increments()[k];
                out.push(exact(config.x0, (k + 1) as f64 * config.delta_ref, b));
            }
            out
        }
    };
    let target = reference[n_ref];

    let mut terminal = vec![None; factors.len()];
    let mut sup = vec![None; factors.len()];
    for (slot, &m) in factors.iter().enumerate() {
        let coarse = fine.coarsen(m)?;
        let coarse_noise = noise.coarsen(m);
        let values = match simulate_on_noise(stepper, &coarse, &coarse_noise, config.x0) {
            Ok(v) => v,
            Err(SchemeError::NonFinite { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let n = coarse.stop_index();
        let end = match config.terminal {
            TerminalRule::Step => values[n],
            TerminalRule::Interpolated => {
                let start = n * m;
                let step = noise.aggregate(start, n_ref);
                let h = (n_ref - start) as f64 * config.delta_ref;
                let tau_step = config.horizon - coarse.tau(n);
                match stepper.step(n, n as f64 * coarse.delta(), values[n], tau_step, h, step) {
                    Ok(x) => x,
                    Err(SchemeError::NonFinite { .. }) => continue,
                    Err(e) => return Err(e.into()),
                }
            }
        };
        terminal[slot] = Some((end - target).abs());
        sup[slot] = Some(
            values
                .iter()
                .enumerate()
                .map(|(j, &x)| (x - reference[j * m]).abs())
                .fold(0.0, f64::max),
        );
    }
    Ok(Some(PathErrors { terminal, sup }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub delta: f64,
    /// Mean terminal error over the paths kept for this row; `None` when
    /// every path was excluded.
    pub error: Option<MeanEstimate>,
    pub sup_error: Option<MeanEstimate>,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// Sorted by increasing `δ`.
    pub rows: Vec<ConvergenceRow>,
    /// Base-2 log-log fit of error against `δ`.
    pub fit: Result<LinearFit, FitError>,
}

impl ConvergenceReport {
    pub fn slope(&self) -> Option<f64> {
        self.fit.as_ref().ok().map(|f| f.slope)
    }
}

/// Runs every path through `executor` and aggregates per row.
pub fn run_convergence<E: PathExecutor>(
    config: &ExperimentConfig,
    executor: &E,
) -> Result<ConvergenceReport, ConvergenceError> {
    let factors = config.validate()?;
    let stepper = Stepper::new(&config.sde, config.scheme)?;
    let results = executor.run(config.n_paths, |i| run_path(config, &stepper, &factors, i as u64));

    let k = factors.len();
    let mut terminal: Vec<Vec<f64>> = vec![Vec::with_capacity(config.n_paths); k];
    let mut sup: Vec<Vec<f64>> = vec![Vec::with_capacity(config.n_paths); k];
    let mut excluded = vec![0usize; k];
    for r in results {
        match r? {
            None => excluded.iter_mut().for_each(|e| *e += 1),
            Some(p) => {
                for slot in 0..k {
                    match (p.terminal[slot], p.sup[slot]) {
                        (Some(t), Some(s)) => {
                            terminal[slot].push(t);
                            sup[slot].push(s);
                        }
                        _ => excluded[slot] += 1,
                    }
                }
            }
        }
    }
    let mut rows: Vec<ConvergenceRow> = (0..k)
        .map(|slot| ConvergenceRow {
            delta: config.deltas[slot],
            error: MeanEstimate::from_samples(&terminal[slot]),
            sup_error: MeanEstimate::from_samples(&sup[slot]),
            excluded: excluded[slot],
        })
        .collect();
    rows.sort_by(|a, b| a.delta.total_cmp(&b.delta));

    let pairs: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.delta, r.error.map_or(f64::NAN, |e| e.mean)))
        .collect();
    Ok(ConvergenceReport {
        fit: fit_order(&pairs),
        rows,
    })
}

/// Formats `x` with 15 significant digits.
pub fn format_sig15(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.14e}")
    } else {
        format!("{x}")
    }
}

/// CSV with columns `delta,log2_delta,error,log2_error,excluded`. A row
/// without an error prints `NaN` in both error columns.
pub fn report_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("delta,log2_delta,error,log2_error,excluded\n");
    for row in &report.rows {
        let e = row.error.map_or(f64::NAN, |e| e.mean);
        let line = format!(
            "{},{},{},{},{}\n",
            format_sig15(row.delta),
            format_sig15(row.delta.log2()),
            format_sig15(e),
            format_sig15(e.log2()),
            row.excluded
        );
        out.push_str(&line);
    }
    out
}

/// Least-squares line through `(log2 δ, log2 error)`.
///
/// A missing row error should be passed as NaN; it is rejected like a
/// nonpositive one.
pub fn fit_order(rows: &[(f64, f64)]) -> Result<LinearFit, FitError> {
    if let Some(&(delta, error)) = rows.iter().find(|(_, e)| !(*e > 0.0)) {
        return Err(FitError::NonPositiveError { delta, error });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.0.log2()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.1.log2()).collect();
    linear_fit(&xs, &ys).ok_or(FitError::TooFewRows(rows.len()))
}
