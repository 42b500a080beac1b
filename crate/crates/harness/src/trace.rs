//! Trace persistence. CSV rows are one line per (round, scheme, seed) with
//! a fixed header; files are written to a temporary sibling and renamed so
//! a failed run leaves nothing partial. Identical runs produce
//! byte-identical files.

use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("trace row {context}: non-finite value {value}")]
    NonFinite { context: String, value: f64 },
    #[error("json encode: {0}")]
    Json(#[from] serde_json::Error),
}

pub const TRACE_HEADER: &str = "round,scheme,seed,loss,gradnorm_sq,rho,mask_fill,max_mem_sq";
pub const SWEEP_HEADER: &str =
    "snr_db,power_watts,round,scheme,seed,loss,gradnorm_sq,rho,mask_fill,max_mem_sq";

/// One per-round record of a training run.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub round: usize,
    pub scheme: String,
    pub seed: u64,
    pub loss: f64,
    pub gradnorm_sq: f64,
    pub rho: f64,
    pub mask_fill: f64,
    pub max_mem_sq: f64,
}

impl TraceRow {
    fn check_finite(&self) -> Result<(), TraceError> {
        for (name, v) in [
            ("loss", self.loss),
            ("gradnorm_sq", self.gradnorm_sq),
            ("rho", self.rho),
            ("mask_fill", self.mask_fill),
            ("max_mem_sq", self.max_mem_sq),
        ] {
            if !v.is_finite() {
                return Err(TraceError::NonFinite {
                    context: format!(
                        "{name} (round {}, scheme {}, seed {})",
                        self.round, self.scheme, self.seed
                    ),
                    value: v,
                });
            }
        }
        Ok(())
    }

    fn write_fields(&self, out: &mut String) {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{}",
            self.round,
            self.scheme,
            self.seed,
            self.loss,
            self.gradnorm_sq,
            self.rho,
            self.mask_fill,
            self.max_mem_sq
        );
    }
}

/// A sweep record: a final-round trace row tagged with its operating point.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub power_watts: f64,
    #[serde(flatten)]
    pub row: TraceRow,
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), TraceError> {
    let io_err = |source| TraceError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

/// Write training-trace CSV.
pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<(), TraceError> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for row in rows {
        row.check_finite()?;
        row.write_fields(&mut out);
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Write sweep CSV (final-round rows per operating point).
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), TraceError> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for sweep in rows {
        sweep.row.check_finite()?;
        if !sweep.snr_db.is_finite() {
            return Err(TraceError::NonFinite {
                context: "snr_db".into(),
                value: sweep.snr_db,
            });
        }
        let _ = write!(&mut out, "{},{},", sweep.snr_db, sweep.power_watts);
        sweep.row.write_fields(&mut out);
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Pretty-printed JSON, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), TraceError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}
