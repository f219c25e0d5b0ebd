//! Per-client communication/computation delay models.
//!
//! Synthetic delays combine a size/link-speed transfer time with a uniform
//! compute time and stay constant across rounds. Trace-backed delays carry a
//! per-client mean plus unit-mean log-normal round jitter, so the expected
//! round delay of a client equals its trace mean.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::roster::{ClientId, ClientRoster};

/// Synthetic delay parameters: transfer of `model_size_bytes` over a link
/// speed drawn uniformly from `link_speed_range` (bytes/s), plus a compute
/// time drawn uniformly from `compute_range` (seconds).
#[derive(Clone, Debug)]
pub struct SyntheticDelayConfig {
    pub model_size_bytes: f64,
    pub link_speed_range: (f64, f64),
    pub compute_range: (f64, f64),
}

impl Default for SyntheticDelayConfig {
    fn default() -> Self {
        SyntheticDelayConfig {
            model_size_bytes: 1_000_000.0,
            link_speed_range: (200_000.0, 5_000_000.0),
            compute_range: (15.0, 100.0),
        }
    }
}

/// Trace-backed delay parameters: per-client mean delays, a global jitter
/// sigma, and optional per-client sigma overrides (aligned with the means).
#[derive(Clone, Debug, PartialEq)]
pub struct TraceDelayConfig {
    pub mean_delays: Vec<f64>,
    pub lognormal_sigma: f64,
    pub per_client_sigma: Option<Vec<f64>>,
}

/// Round-delay sampler over a delay-sorted roster.
#[derive(Clone, Debug)]
pub enum DelayModel {
    /// Delays constant across rounds.
    Constant { means: Vec<f64> },
    /// Unit-mean multiplicative log-normal jitter around each mean.
    LogNormal {
        means: Vec<f64>,
        sigma: f64,
        per_client_sigma: Option<Vec<f64>>,
    },
}

/// Draws per-client mean delays from the synthetic model.
pub fn synthesize_delays(cfg: &SyntheticDelayConfig, m: usize, seed: u64) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidParameter("need at least one client".into()));
    }
    let (c_lo, c_hi) = cfg.link_speed_range;
    let (t_lo, t_hi) = cfg.compute_range;
    if !(c_lo.is_finite() && c_hi.is_finite() && c_lo > 0.0 && c_hi >= c_lo) {
        return Err(Error::InvalidParameter(format!(
            "link speed range must satisfy 0 < lo <= hi, got [{c_lo}, {c_hi}]"
        )));
    }
    if !(t_lo.is_finite() && t_hi.is_finite() && t_lo > 0.0 && t_hi >= t_lo) {
        return Err(Error::InvalidParameter(format!(
            "compute range must satisfy 0 < lo <= hi, got [{t_lo}, {t_hi}]"
        )));
    }
    if !(cfg.model_size_bytes.is_finite() && cfg.model_size_bytes >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "model size must be nonnegative, got {}",
            cfg.model_size_bytes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut delays = Vec::with_capacity(m);
    for _ in 0..m {
        let speed = if c_hi > c_lo { rng.random_range(c_lo..c_hi) } else { c_lo };
        let compute = if t_hi > t_lo { rng.random_range(t_lo..t_hi) } else { t_lo };
        delays.push(cfg.model_size_bytes / speed + compute);
    }
    Ok(delays)
}

/// Builds the sorted roster and a constant-delay model from synthetic means.
pub fn build_synthetic(
    cfg: &SyntheticDelayConfig,
    m: usize,
    seed: u64,
) -> Result<(ClientRoster, DelayModel)> {
    let means = synthesize_delays(cfg, m, seed)?;
    let roster = ClientRoster::from_delays(&means)?;
    let sorted = roster.mean_delays().to_vec();
    Ok((roster, DelayModel::Constant { means: sorted }))
}

/// Builds the sorted roster and a jittered model from a trace config.
pub fn build_trace(cfg: &TraceDelayConfig) -> Result<(ClientRoster, DelayModel)> {
    if !(cfg.lognormal_sigma.is_finite() && cfg.lognormal_sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "jitter sigma must be nonnegative, got {}",
            cfg.lognormal_sigma
        )));
    }
    if let Some(sigmas) = &cfg.per_client_sigma {
        if sigmas.len() != cfg.mean_delays.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} sigma overrides for {} clients",
                sigmas.len(),
                cfg.mean_delays.len()
            )));
        }
        if let Some(bad) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "per-client sigma must be nonnegative, got {bad}"
            )));
        }
    }
    let roster = ClientRoster::from_delays(&cfg.mean_delays)?;
    let means = roster.mean_delays().to_vec();
    let per_client_sigma = cfg
        .per_client_sigma
        .as_ref()
        .map(|s| roster.source_indices().iter().map(|&i| s[i]).collect());
    Ok((
        roster,
        DelayModel::LogNormal {
            means,
            sigma: cfg.lognormal_sigma,
            per_client_sigma,
        },
    ))
}

impl DelayModel {
    /// Mean delay of a client in roster order.
    pub fn mean(&self, id: ClientId) -> f64 {
        match self {
            DelayModel::Constant { means } => means[id.index0()],
            DelayModel::LogNormal { means, .. } => means[id.index0()],
        }
    }

    /// Samples this round's delay for one client. Constant models ignore the
    /// RNG; jittered models multiply the mean by exp(sigma Z - sigma^2/2),
    /// which has unit mean.
    pub fn sample(&self, id: ClientId, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            DelayModel::Constant { means } => means[id.index0()],
            DelayModel::LogNormal {
                means,
                sigma,
                per_client_sigma,
            } => {
                let s = per_client_sigma
                    .as_ref()
                    .map(|v| v[id.index0()])
                    .unwrap_or(*sigma);
                if s == 0.0 {
                    return means[id.index0()];
                }
                let z: f64 = StandardNormal.sample(rng);
                means[id.index0()] * (s * z - s * s / 2.0).exp()
            }
        }
    }
}

/// Parses a delay trace: header `client_id,mean_delay_s` with an optional
/// third `sigma` column, one row per client, ids exactly 1..=m in any order.
pub fn parse_trace_str(text: &str) -> Result<TraceDelayConfig> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (_, header) = lines.next().ok_or(Error::TraceParse {
        line: 1,
        msg: "empty trace file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_sigma = match cols.as_slice() {
        ["client_id", "mean_delay_s"] => false,
        ["client_id", "mean_delay_s", "sigma"] => true,
        _ => {
            return Err(Error::TraceParse {
                line: 1,
                msg: format!(
                    "expected header 'client_id,mean_delay_s[,sigma]', got '{header}'"
                ),
            })
        }
    };

    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    for (line, text) in lines {
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        let expect = if has_sigma { 3 } else { 2 };
        if fields.len() != expect {
            return Err(Error::TraceParse {
                line,
                msg: format!("expected {expect} fields, got {}", fields.len()),
            });
        }
        let id: usize = fields[0].parse().map_err(|_| Error::TraceParse {
            line,
            msg: format!("client id '{}' is not a positive integer", fields[0]),
        })?;
        if id == 0 {
            return Err(Error::TraceParse {
                line,
                msg: "client ids are 1-based".into(),
            });
        }
        let delay: f64 = fields[1].parse().map_err(|_| Error::TraceParse {
            line,
            msg: format!("mean delay '{}' is not a number", fields[1]),
        })?;
        if !(delay.is_finite() && delay > 0.0) {
            return Err(Error::TraceParse {
                line,
                msg: format!("mean delay must be positive and finite, got {delay}"),
            });
        }
        let sigma = if has_sigma {
            let s: f64 = fields[2].parse().map_err(|_| Error::TraceParse {
                line,
                msg: format!("sigma '{}' is not a number", fields[2]),
            })?;
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::TraceParse {
                    line,
                    msg: format!("sigma must be nonnegative and finite, got {s}"),
                });
            }
            s
        } else {
            0.0
        };
        rows.push((id, delay, sigma));
    }

    if rows.is_empty() {
        return Err(Error::TraceParse {
            line: 1,
            msg: "trace has a header but no client rows".into(),
        });
    }
    let m = rows.len();
    let mut means = vec![f64::NAN; m];
    let mut sigmas = vec![0.0; m];
    for &(id, delay, sigma) in &rows {
        if id > m {
            return Err(Error::TraceParse {
                line: 1,
                msg: format!("client id {id} out of range for {m} rows (ids must be 1..={m})"),
            });
        }
        if !means[id - 1].is_nan() {
            return Err(Error::TraceParse {
                line: 1,
                msg: format!("duplicate client id {id}"),
            });
        }
        means[id - 1] = delay;
        sigmas[id - 1] = sigma;
    }
    Ok(TraceDelayConfig {
        mean_delays: means,
        lognormal_sigma: 0.0,
        per_client_sigma: if has_sigma { Some(sigmas) } else { None },
    })
}

/// Reads and parses a trace file from disk.
pub fn read_trace(path: &Path) -> Result<TraceDelayConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::TraceParse {
        line: 0,
        msg: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_trace_str(&text)
}

/// Writes a trace file; `sigmas` adds the optional third column.
pub fn write_trace(path: &Path, means: &[f64], sigmas: Option<&[f64]>) -> Result<()> {
    let mut out = String::new();
    match sigmas {
        Some(s) => {
            if s.len() != means.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} sigmas for {} means",
                    s.len(),
                    means.len()
                )));
            }
            out.push_str("client_id,mean_delay_s,sigma\n");
            for (i, (m, sg)) in means.iter().zip(s.iter()).enumerate() {
                out.push_str(&format!("{},{},{}\n", i + 1, m, sg));
            }
        }
        None => {
            out.push_str("client_id,mean_delay_s\n");
            for (i, m) in means.iter().enumerate() {
                out.push_str(&format!("{},{}\n", i + 1, m));
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::TraceParse {
        line: 0,
        msg: format!("cannot write {}: {e}", path.display()),
    })
}
