//! Closed-form error and retransmission expectations for CBG-based HARQ.
//!
//! Everything here is a pure function of its arguments. The simulator uses
//! these as oracles, and the `analytics` subcommand sweeps them over grids.
//!
//! Probabilities follow the equal-size CBG approximation: a transport block
//! of `m` groups fails iff at least one group fails, with groups failing
//! independently and identically.

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};

/// Upper bound on CBGs per transport block for PDSCH.
pub const MAX_CBGS: u32 = 8;

fn check_groups(m: u32) -> Result<()> {
    if m >= 1 {
        Ok(())
    } else {
        Err(Error::Domain(format!("CBG count m = {m} must be at least 1")))
    }
}

/// A TB/CBG error-probability pair tied together by the i.i.d. group model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorPoint {
    pub p_tb: f64,
    pub p_cbg: f64,
    pub m: u32,
}

impl ErrorPoint {
    pub fn from_tb(p_tb: f64, m: u32) -> Result<Self> {
        check_point_groups(m)?;
        Ok(Self { p_tb, p_cbg: cbg_error_from_tb(p_tb, m)?, m })
    }

    pub fn from_cbg(p_cbg: f64, m: u32) -> Result<Self> {
        check_point_groups(m)?;
        Ok(Self { p_tb: tb_error_from_cbg(p_cbg, m)?, p_cbg, m })
    }
}

fn check_point_groups(m: u32) -> Result<()> {
    if (1..=MAX_CBGS).contains(&m) {
        Ok(())
    } else {
        Err(Error::Domain(format!("CBG count m = {m} must lie in 1..={MAX_CBGS}")))
    }
}

/// Expected retransmitted CBG counts after the first and second transmissions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RetxExpectation {
    pub r_first: f64,
    pub r_second: f64,
    /// Error probability of the second transmission, `f(p_tb)`.
    pub f_second: f64,
}

/// Spectral efficiencies achieved by the MCS choices of the CBG and TB cases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyInputs {
    xi_cbg: f64,
    xi_tb: f64,
}

impl EfficiencyInputs {
    pub fn new(xi_cbg: f64, xi_tb: f64) -> Result<Self> {
        for (name, v) in [("xi_cbg", xi_cbg), ("xi_tb", xi_tb)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} = {v} must be strictly positive")));
            }
        }
        Ok(Self { xi_cbg, xi_tb })
    }

    pub fn xi_cbg(&self) -> f64 {
        self.xi_cbg
    }

    pub fn xi_tb(&self) -> f64 {
        self.xi_tb
    }
}

/// Error probability of a second transmission as a function of the first-TX TB error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SecondTxModel {
    /// Soft combining makes every second transmission succeed: `f(p) = 0`.
    Successful,
    /// `f(p) = rho * p` with `rho` in `[0, 1]`.
    Proportional { rho: f64 },
}

impl SecondTxModel {
    pub fn proportional(rho: f64) -> Result<Self> {
        check_probability("rho", rho)?;
        Ok(Self::Proportional { rho })
    }

    pub fn eval(&self, p_tb: f64) -> f64 {
        match *self {
            Self::Successful => 0.0,
            Self::Proportional { rho } => rho * p_tb,
        }
    }
}

/// How the first-retransmission expectation is weighted.
///
/// `AsWritten` multiplies the unconditional failed-CBG mean by `p_tb` once more.
/// `Conditional` drops that leading factor. Both are kept for sensitivity runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstTxConvention {
    #[default]
    AsWritten,
    Conditional,
}

/// TB error probability from a per-CBG error probability: `1 - (1 - p_cbg)^m`.
pub fn tb_error_from_cbg(p_cbg: f64, m: u32) -> Result<f64> {
    check_probability("p_cbg", p_cbg)?;
    check_groups(m)?;
    Ok(-(f64::from(m) * (-p_cbg).ln_1p()).exp_m1())
}

/// Per-CBG error probability from a TB error probability: `1 - (1 - p_tb)^(1/m)`.
pub fn cbg_error_from_tb(p_tb: f64, m: u32) -> Result<f64> {
    check_probability("p_tb", p_tb)?;
    check_groups(m)?;
    Ok(-((-p_tb).ln_1p() / f64::from(m)).exp_m1())
}

fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// Probability that exactly `k` of `m` CBGs fail.
pub fn failed_cbg_pmf(k: u32, p_cbg: f64, m: u32) -> Result<f64> {
    check_probability("p_cbg", p_cbg)?;
    check_groups(m)?;
    if k > m {
        return Err(Error::Domain(format!("failed count k = {k} exceeds m = {m}")));
    }
    Ok(binomial(m, k) * p_cbg.powi(k as i32) * (1.0 - p_cbg).powi((m - k) as i32))
}

/// `P(failed <= k_max | failed >= 1)` at the TB operating point `p_tb`.
pub fn conditional_failed_at_most(k_max: u32, p_tb: f64, m: u32) -> Result<f64> {
    let p_cbg = cbg_error_from_tb(p_tb, m)?;
    if p_tb == 0.0 {
        return Err(Error::DivisionByZero("conditioning on a TB failure with p_tb = 0"));
    }
    let mut acc = 0.0;
    for k in 1..=k_max.min(m) {
        acc += failed_cbg_pmf(k, p_cbg, m)?;
    }
    Ok(acc / p_tb)
}

fn partial_failed_mean(k_max: u32, p_cbg: f64, m: u32) -> Result<f64> {
    let mut acc = 0.0;
    for k in 1..=k_max {
        acc += f64::from(k) * failed_cbg_pmf(k, p_cbg, m)?;
    }
    Ok(acc)
}

/// Expected CBGs retransmitted after the first transmission.
pub fn expected_retx_first(p_tb: f64, m: u32) -> Result<f64> {
    expected_retx_first_with(p_tb, m, FirstTxConvention::AsWritten)
}

pub fn expected_retx_first_with(p_tb: f64, m: u32, convention: FirstTxConvention) -> Result<f64> {
    let p_cbg = cbg_error_from_tb(p_tb, m)?;
    let mean = partial_failed_mean(m, p_cbg, m)?;
    Ok(match convention {
        FirstTxConvention::AsWritten => p_tb * mean,
        FirstTxConvention::Conditional => mean,
    })
}

/// Expected CBGs retransmitted after the second transmission.
///
/// The failed-CBG sum is truncated at `ceil(r_first)` clamped to `[1, m]`.
pub fn expected_retx_second<F>(p_tb: f64, m: u32, f: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    expected_retx_second_with(p_tb, m, f, FirstTxConvention::AsWritten)
}

pub fn expected_retx_second_with<F>(
    p_tb: f64,
    m: u32,
    f: F,
    convention: FirstTxConvention,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let f_second = eval_second(&f, p_tb)?;
    let r_first = expected_retx_first_with(p_tb, m, convention)?;
    let upper = truncation_limit(r_first, m);
    let p_cbg = cbg_error_from_tb(p_tb, m)?;
    Ok(f_second * partial_failed_mean(upper, p_cbg, m)?)
}

fn truncation_limit(r_first: f64, m: u32) -> u32 {
    (r_first.ceil() as u32).clamp(1, m)
}

fn eval_second<F: Fn(f64) -> f64>(f: &F, p_tb: f64) -> Result<f64> {
    let v = f(p_tb);
    check_probability("f(p_tb)", v)?;
    Ok(v)
}

pub fn retx_expectation<F>(
    p_tb: f64,
    m: u32,
    f: F,
    convention: FirstTxConvention,
) -> Result<RetxExpectation>
where
    F: Fn(f64) -> f64,
{
    Ok(RetxExpectation {
        r_first: expected_retx_first_with(p_tb, m, convention)?,
        r_second: expected_retx_second_with(p_tb, m, &f, convention)?,
        f_second: eval_second(&f, p_tb)?,
    })
}

/// Radio resource efficiency gain of CBG-based over TB-based retransmission, in percent.
///
/// The numerator is evaluated at the CBG-case operating point, the denominator
/// at the TB-case operating point.
pub fn rreg<F>(
    p_tb_cbgcase: f64,
    p_tb_tbcase: f64,
    m: u32,
    eff: EfficiencyInputs,
    f: F,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    rreg_with(p_tb_cbgcase, p_tb_tbcase, m, eff, f, FirstTxConvention::AsWritten)
}

pub fn rreg_with<F>(
    p_tb_cbgcase: f64,
    p_tb_tbcase: f64,
    m: u32,
    eff: EfficiencyInputs,
    f: F,
    convention: FirstTxConvention,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let cbg = retx_expectation(p_tb_cbgcase, m, &f, convention)?;
    check_probability("p_tb_tbcase", p_tb_tbcase)?;
    let m = f64::from(m);
    let numerator = (m + cbg.r_first + cbg.r_second) / eff.xi_cbg;
    let tb_f = eval_second(&f, p_tb_tbcase)?;
    let denominator = (m + p_tb_tbcase * m + tb_f * m) / eff.xi_tb;
    if denominator == 0.0 {
        return Err(Error::DivisionByZero("TB-case resource term"));
    }
    Ok(100.0 * (1.0 - numerator / denominator))
}

fn check_steps(step_up: f64, step_down: f64) -> Result<()> {
    if step_up > 0.0 && step_down > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "step sizes must be positive (step_up = {step_up}, step_down = {step_down})"
        )))
    }
}

/// First-transmission CBG error rate reached by per-CBG offset stepping.
pub fn cbger_target(step_up: f64, step_down: f64) -> Result<f64> {
    check_steps(step_up, step_down)?;
    Ok(1.0 / (1.0 + step_up / step_down))
}

/// Residual TB error rate of second transmissions reached by the 2nd-TX controller.
pub fn residual_tber_target(step_up: f64, step_down: f64) -> Result<f64> {
    check_steps(step_up, step_down)?;
    Ok(1.0 / (1.0 + step_up / (2.0 * step_down)))
}

/// Step-down size that makes ACK/NACK stepping converge to `target`.
pub fn step_down_for_target(step_up: f64, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Domain(format!("target {target} must lie in (0, 1)")));
    }
    check_steps(step_up, 1.0)?;
    Ok(step_up * target / (1.0 - target))
}

/// One row of an analytics grid sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub p_tb: f64,
    pub m: u32,
    pub p_cbg: f64,
    pub r_first: f64,
    pub r_second: f64,
    pub rreg_percent: f64,
}

/// Grid sweep parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub p_tb: Vec<f64>,
    pub m: Vec<u32>,
    pub eff: EfficiencyInputs,
    pub second_tx: SecondTxModel,
    /// TB-case operating point; `None` reuses the row's `p_tb`.
    pub p_tb_baseline: Option<f64>,
    pub convention: FirstTxConvention,
}

pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    let f = |p: f64| spec.second_tx.eval(p);
    let mut rows = Vec::with_capacity(spec.p_tb.len() * spec.m.len());
    for &m in &spec.m {
        for &p_tb in &spec.p_tb {
            let point = ErrorPoint::from_tb(p_tb, m)?;
            let retx = retx_expectation(p_tb, m, f, spec.convention)?;
            let baseline = spec.p_tb_baseline.unwrap_or(p_tb);
            rows.push(SweepRow {
                p_tb,
                m,
                p_cbg: point.p_cbg,
                r_first: retx.r_first,
                r_second: retx.r_second,
                rreg_percent: rreg_with(p_tb, baseline, m, spec.eff, f, spec.convention)?,
            });
        }
    }
    Ok(rows)
}
