//! Monte Carlo pulse records and the estimators built on them.
//!
//! Each shot draws a phonon number `m` from the thermal law and then a
//! quadrature outcome `y ~ Normal(2mA, e^{−2r})`. Shots are generated in
//! fixed batches of [`BATCH`], batch `b` using ChaCha20 stream `b` of the
//! record seed, so a record does not depend on how batches are scheduled.

use std::io::Write;

use libm::erfc;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{self, ProtocolParams};

pub const BATCH: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub y: f64,
    pub m_true: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub shots: Vec<Shot>,
    pub params: ProtocolParams,
    pub seed: u64,
}

/// Inverse-CDF geometric draw with `P(m) = (1−q) q^m`.
fn draw_phonons(rng: &mut ChaCha20Rng, q: f64) -> u64 {
    if q <= 0.0 {
        return 0;
    }
    let u: f64 = 1.0 - rng.random::<f64>();
    (u.ln() / q.ln()).floor() as u64
}

fn sample_batch(p: &ProtocolParams, seed: u64, batch: usize, len: usize) -> Vec<Shot> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(batch as u64);
    let q = p.thermal_n / (p.thermal_n + 1.0);
    let sigma = (-p.squeeze_r).exp();
    (0..len)
        .map(|_| {
            let m = draw_phonons(&mut rng, q);
            let z: f64 = rng.sample(StandardNormal);
            Shot { y: 2.0 * m as f64 * p.pulse_area + sigma * z, m_true: m }
        })
        .collect()
}

/// Draw `shots` pulses; identical for identical `(params, shots, seed)`.
pub fn sample_record(p: &ProtocolParams, shots: usize, seed: u64) -> Result<MeasurementRecord> {
    p.validate()?;
    if shots == 0 {
        return Err(crate::error::invalid("shots", "must be >= 1"));
    }
    let batches = shots.div_ceil(BATCH);
    let parts: Vec<Vec<Shot>> =
        (0..batches).into_par_iter().map(|b| sample_batch(p, seed, b, BATCH.min(shots - b * BATCH))).collect();
    Ok(MeasurementRecord { shots: parts.concat(), params: *p, seed })
}

/// Nearest sector centre `round(y / 2A)`, ties to even, clamped at 0.
pub fn assign_m(y: f64, p: &ProtocolParams) -> u64 {
    let m = (y / (2.0 * p.pulse_area)).round_ties_even();
    if m > 0.0 {
        m as u64
    } else {
        0
    }
}

/// Probability that a shot lands outside its own sector bin.
///
/// Interior sectors lose both Gaussian tails beyond `A`; sector 0 only
/// the upper one.
pub fn misassignment_probability(p: &ProtocolParams) -> f64 {
    let x = p.pulse_area * p.squeeze_r.exp() / std::f64::consts::SQRT_2;
    let tail = erfc(x);
    let p0 = 1.0 / (p.thermal_n + 1.0);
    p0 * 0.5 * tail + (1.0 - p0) * tail
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n_hat: f64,
    pub n_stderr: f64,
    /// `None` when `n_hat ≤ 0`, where no temperature corresponds.
    pub t_hat_kelvin: Option<f64>,
    pub t_stderr_kelvin: Option<f64>,
    pub misassign_rate: f64,
    pub shots: usize,
    pub seed: u64,
}

fn check_record(record: &MeasurementRecord) -> Result<()> {
    if record.shots.len() < 2 {
        return Err(Error::DegenerateRecord(format!("{} shot(s); need at least 2", record.shots.len())));
    }
    if let Some(i) = record.shots.iter().position(|s| !s.y.is_finite()) {
        return Err(Error::DegenerateRecord(format!("shot {i} is not finite")));
    }
    Ok(())
}

/// Direct average: `N̂ = mean(y) / 2A`, with delta-method temperature.
pub fn estimate(record: &MeasurementRecord) -> Result<EstimateReport> {
    check_record(record)?;
    let p = &record.params;
    let n = record.shots.len() as f64;
    let mean = record.shots.iter().map(|s| s.y).sum::<f64>() / n;
    let var = record.shots.iter().map(|s| (s.y - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let scale = 2.0 * p.pulse_area;
    let n_hat = mean / scale;
    let n_stderr = var.sqrt() / (scale * n.sqrt());
    let (t_hat_kelvin, t_stderr_kelvin) = if n_hat > 0.0 {
        let t = protocol::temperature_from_n(n_hat, p.nu)?;
        let slope = protocol::temperature_slope(n_hat, p.nu)?;
        (Some(t), Some(slope * n_stderr))
    } else {
        (None, None)
    };
    let wrong = record.shots.iter().filter(|s| assign_m(s.y, p) != s.m_true).count();
    Ok(EstimateReport {
        n_hat,
        n_stderr,
        t_hat_kelvin,
        t_stderr_kelvin,
        misassign_rate: wrong as f64 / n,
        shots: record.shots.len(),
        seed: record.seed,
    })
}

/// Per-shot assignments binned by phonon number.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssignmentHistogram {
    pub counts: Vec<u64>,
    /// Mean of the assigned phonon numbers.
    pub n_hat: f64,
}

impl AssignmentHistogram {
    pub fn probabilities(&self) -> Vec<f64> {
        let total: u64 = self.counts.iter().sum();
        self.counts.iter().map(|&c| c as f64 / total as f64).collect()
    }
}

/// Alternative estimator: round each shot to a sector and histogram.
pub fn assignment_histogram(record: &MeasurementRecord) -> Result<AssignmentHistogram> {
    check_record(record)?;
    let ms: Vec<u64> = record.shots.iter().map(|s| assign_m(s.y, &record.params)).collect();
    let top = *ms.iter().max().unwrap_or(&0) as usize;
    let mut counts = vec![0u64; top + 1];
    for &m in &ms {
        counts[m as usize] += 1;
    }
    let n_hat = ms.iter().map(|&m| m as f64).sum::<f64>() / ms.len() as f64;
    Ok(AssignmentHistogram { counts, n_hat })
}

/// CSV with header `shot,y,m_true`.
pub fn write_record_csv<W: Write>(record: &MeasurementRecord, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["shot", "y", "m_true"])?;
    for (i, s) in record.shots.iter().enumerate() {
        w.write_record([i.to_string(), s.y.to_string(), s.m_true.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json<W: Write>(report: &EstimateReport, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, report)?;
    out.write_all(b"\n")?;
    Ok(())
}
