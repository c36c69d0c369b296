//! Path dumps: a binary replay format for time changes and per-step CSV.
//!
//! Binary layout, all little-endian: `δ: f64`, `T: f64`, `N: u64`, then
//! the grid values `D_0, D_δ, …` as `f64` until end of file.

use std::io::{Read, Write};
use std::path::Path;

use subdiff_core::convergence::format_sig15;
use subdiff_core::{DiscretizedTimeChange, SolutionPath};

use crate::error::CliError;

const HEADER: usize = 24;

pub fn encode_time_change(path: &DiscretizedTimeChange) -> Vec<u8> {
    let d = path.d_values();
    let mut out = Vec::with_capacity(HEADER + 8 * d.len());
    out.extend_from_slice(&path.delta().to_le_bytes());
    out.extend_from_slice(&path.horizon().to_le_bytes());
    out.extend_from_slice(&(path.stop_index() as u64).to_le_bytes());
    for v in d {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_time_change(bytes: &[u8]) -> Result<DiscretizedTimeChange, CliError> {
    let bad = |msg: &str| CliError::Usage(format!("time-change dump: {msg}"));
    if bytes.len() < HEADER || (bytes.len() - HEADER) % 8 != 0 {
        return Err(bad("truncated file"));
    }
    let word = |i: usize| -> [u8; 8] { bytes[i..i + 8].try_into().expect("8 bytes") };
    let delta = f64::from_le_bytes(word(0));
    let horizon = f64::from_le_bytes(word(8));
    let stop = u64::from_le_bytes(word(16));
    let values: Vec<f64> = bytes[HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let path = DiscretizedTimeChange::from_values(delta, horizon, values).map_err(|e| bad(&e.to_string()))?;
    if path.stop_index() as u64 != stop {
        return Err(bad("stored stop index does not match the grid"));
    }
    Ok(path)
}

pub fn write_time_change(path: &DiscretizedTimeChange, file: &Path) -> Result<(), CliError> {
    let mut f = std::fs::File::create(file).map_err(|e| CliError::io(file, e))?;
    f.write_all(&encode_time_change(path)).map_err(|e| CliError::io(file, e))
}

pub fn read_time_change(file: &Path) -> Result<DiscretizedTimeChange, CliError> {
    let mut bytes = Vec::new();
    std::fs::File::open(file)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::io(file, e))?;
    decode_time_change(&bytes)
}

/// Columns `n,tau_n,E_delta,X_delta`, one row per grid point up to `N`.
pub fn write_path_csv<W: Write>(solution: &SolutionPath, out: W) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Usage(format!("path csv: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "tau_n", "E_delta", "X_delta"]).map_err(io)?;
    let tc = solution.time_change();
    for (n, x) in solution.values().iter().enumerate() {
        w.write_record([
            n.to_string(),
            format_sig15(tc.tau(n)),
            format_sig15(n as f64 * tc.delta()),
            format_sig15(*x),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Usage(format!("path csv: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use subdiff_core::coefficients::ex1;
    use subdiff_core::noise::Channel;
    use subdiff_core::schemes::simulate_solution;
    use subdiff_core::{NoiseStream, SchemeConfig, SubordinatorSpec};

    fn sample_path() -> DiscretizedTimeChange {
        let mut rng = NoiseStream::on_channel(3, 0, Channel::Subordinator);
        DiscretizedTimeChange::simulate(&SubordinatorSpec::stable(0.8).unwrap(), 2f64.powi(-8), 1.0, &mut rng).unwrap()
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let p = sample_path();
        let bytes = encode_time_change(&p);
        assert_eq!(bytes.len(), 24 + 8 * p.d_values().len());
        assert_eq!(decode_time_change(&bytes).unwrap(), p);

        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("tc.bin");
        write_time_change(&p, &file).unwrap();
        assert_eq!(read_time_change(&file).unwrap(), p);
    }

    #[test]
    fn corrupt_dumps_are_rejected() {
        let p = sample_path();
        let bytes = encode_time_change(&p);
        assert!(decode_time_change(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong_stop = bytes.clone();
        wrong_stop[16] ^= 1;
        assert!(decode_time_change(&wrong_stop).is_err());
    }

    #[test]
    fn path_csv_columns() {
        let p = sample_path();
        let mut rng = NoiseStream::on_channel(3, 0, Channel::Brownian);
        let sol = simulate_solution(&ex1(), SchemeConfig::euler_maruyama(), &p, &mut rng, 1.0).unwrap();
        let mut buf = Vec::new();
        write_path_csv(&sol, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("n,tau_n,E_delta,X_delta"));
        assert_eq!(lines.count(), p.stop_index() + 1);
        let last = text.lines().last().unwrap();
        let fields: Vec<f64> = last.split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields[0] as usize, p.stop_index());
        assert_eq!(fields[2], p.terminal_inverse());
        assert!(((fields[3] - sol.terminal()) / sol.terminal()).abs() < 1e-14);
    }
}
