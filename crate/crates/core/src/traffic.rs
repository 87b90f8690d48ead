//! XR downlink traffic: one video frame per period with truncated-Gaussian
//! arrival jitter and frame size.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatrsNormal};

use crate::error::{Error, Result};

/// Rejections tolerated before falling back to inverse-CDF sampling.
const MAX_REJECTIONS: usize = 10_000;

/// A Gaussian truncated to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncGaussParams {
    pub mean: f64,
    pub std: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TruncGaussParams {
    pub fn new(mean: f64, std: f64, lo: f64, hi: f64) -> Result<Self> {
        let p = Self { mean, std, lo, hi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo <= self.hi) {
            return Err(Error::Domain(format!("interval [{}, {}] is empty", self.lo, self.hi)));
        }
        if !(self.std >= 0.0) || !self.mean.is_finite() {
            return Err(Error::Domain(format!(
                "truncated Gaussian needs finite mean and std >= 0 (got {}, {})",
                self.mean, self.std
            )));
        }
        Ok(())
    }

    /// Same distribution with every parameter multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self { mean: self.mean * k, std: self.std * k, lo: self.lo * k, hi: self.hi * k }
    }
}

/// Draw one sample from a truncated Gaussian.
///
/// A degenerate interval returns its single point; a zero deviation returns
/// the mean clamped into the interval.
pub fn sample_trunc_gauss<R: Rng + ?Sized>(params: &TruncGaussParams, rng: &mut R) -> Result<f64> {
    params.validate()?;
    if params.lo == params.hi {
        return Ok(params.lo);
    }
    if params.std == 0.0 {
        return Ok(params.mean.clamp(params.lo, params.hi));
    }
    let normal = Normal::new(params.mean, params.std)
        .map_err(|e| Error::Domain(format!("normal distribution: {e}")))?;
    for _ in 0..MAX_REJECTIONS {
        let x = normal.sample(rng);
        if (params.lo..=params.hi).contains(&x) {
            return Ok(x);
        }
    }
    // Interval sits far in a tail; invert the CDF over the truncated mass.
    let n = StatrsNormal::new(params.mean, params.std)
        .map_err(|e| Error::Domain(format!("normal distribution: {e}")))?;
    let (a, b) = (n.cdf(params.lo), n.cdf(params.hi));
    let u: f64 = rng.random();
    Ok(n.inverse_cdf(a + u * (b - a)).clamp(params.lo, params.hi))
}

/// One XR video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct XrPacket {
    pub ue_id: usize,
    pub seq: u64,
    pub arrival_ms: f64,
    pub size_bits: u64,
    pub deadline_ms: f64,
    pub remaining_bits: u64,
}

impl XrPacket {
    pub fn is_delivered(&self) -> bool {
        self.remaining_bits == 0
    }
}

/// Frame-level traffic source configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XrSource {
    pub fps: f64,
    /// Jitter in milliseconds.
    pub jitter: TruncGaussParams,
    /// Frame size in bytes.
    pub size_bytes: TruncGaussParams,
    pub pdb_ms: f64,
}

impl XrSource {
    pub fn period_ms(&self) -> f64 {
        1000.0 / self.fps
    }

    /// Mean offered load in bits per second, ignoring the byte round-up.
    pub fn mean_rate_bps(&self) -> f64 {
        self.size_bytes.mean * 8.0 * self.fps
    }
}

/// Generate the frames of one UE over `[0, horizon_ms)`.
///
/// Frame `k` is nominally due at `k * 1000 / fps` and is shifted by a jitter
/// sample. Arrival times are clamped at zero and the output is ordered by
/// arrival; sequence numbers keep the nominal order.
pub fn generate_arrivals<R: Rng + ?Sized>(
    ue_id: usize,
    source: &XrSource,
    horizon_ms: f64,
    rng: &mut R,
) -> Result<Vec<XrPacket>> {
    if !(source.fps > 0.0) {
        return Err(Error::Domain(format!("fps = {} must be positive", source.fps)));
    }
    if !(horizon_ms > 0.0) {
        return Err(Error::Domain(format!("horizon = {horizon_ms} ms must be positive")));
    }
    let period = source.period_ms();
    let mut packets = Vec::with_capacity((horizon_ms / period).ceil() as usize);
    let mut seq = 0u64;
    loop {
        let nominal = seq as f64 * period;
        if nominal >= horizon_ms {
            break;
        }
        let jitter = sample_trunc_gauss(&source.jitter, rng)?;
        let bytes = sample_trunc_gauss(&source.size_bytes, rng)?.ceil().max(1.0) as u64;
        let arrival_ms = (nominal + jitter).max(0.0);
        packets.push(XrPacket {
            ue_id,
            seq,
            arrival_ms,
            size_bits: bytes * 8,
            deadline_ms: arrival_ms + source.pdb_ms,
            remaining_bits: bytes * 8,
        });
        seq += 1;
    }
    packets.sort_by(|a, b| a.arrival_ms.total_cmp(&b.arrival_ms).then(a.seq.cmp(&b.seq)));
    Ok(packets)
}
