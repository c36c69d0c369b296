use rayon::prelude::*;
use rayon::ThreadPool;
use subdiff_core::executor::PathExecutor;

use crate::error::CliError;

/// Runs paths on a rayon pool. Results come back in index order, so
/// reductions match [`subdiff_core::executor::Serial`] bit for bit.
#[derive(Debug)]
pub struct RayonExecutor {
    pool: ThreadPool,
}

impl RayonExecutor {
    /// `threads = 0` lets rayon pick the thread count.
    pub fn new(threads: usize) -> Result<Self, CliError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl PathExecutor for RayonExecutor {
    fn run<T, F>(&self, n_paths: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n_paths).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use subdiff_core::coefficients::ex1;
    use subdiff_core::convergence::{report_csv, run_convergence, ExperimentConfig};
    use subdiff_core::executor::Serial;
    use subdiff_core::{SchemeConfig, SubordinatorSpec};

    #[test]
    fn matches_serial_bit_for_bit() {
        let mut c = ExperimentConfig::new(ex1(), SubordinatorSpec::stable(0.8).unwrap(), SchemeConfig::euler_maruyama(), 9);
        c.delta_ref = 2f64.powi(-9);
        c.deltas = (5..=8).map(|k| 2f64.powi(-k)).collect();
        c.n_paths = 40;
        let serial = run_convergence(&c, &Serial).unwrap();
        for threads in [1, 3, 8] {
            let par = run_convergence(&c, &RayonExecutor::new(threads).unwrap()).unwrap();
            assert_eq!(par, serial);
            assert_eq!(report_csv(&par), report_csv(&serial));
        }
    }
}
