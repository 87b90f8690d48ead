//! MCS selection and outer-loop offset control.
//!
//! Three policies share one offset state:
//!
//! * `Traditional` steps on the single TB ACK/NACK of first transmissions.
//! * `EollaAlg1` scales both steps by the NACK fraction of each first-TX
//!   multi-bit feedback, steering the first-TX CBG error rate.
//! * `EollaAlg2` steps down on any all-ACK first or second transmission and
//!   steps up by the NACK fraction of failed second transmissions, steering
//!   the residual error after the first retransmission.

use serde::{Deserialize, Serialize};

use crate::analytics::{cbger_target, residual_tber_target};
use crate::error::{Error, Result};
use crate::harq::CbgFeedback;
use crate::link::LinkModel;

/// Slack on the target comparison so an entry evaluated exactly at its
/// anchor still qualifies despite rounding.
const TARGET_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OllaPolicy {
    #[serde(alias = "TRADITIONAL")]
    Traditional,
    #[serde(alias = "EOLLA_ALG1")]
    EollaAlg1,
    #[serde(alias = "EOLLA_ALG2")]
    EollaAlg2,
}

impl OllaPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Traditional => "traditional",
            Self::EollaAlg1 => "eolla_alg1",
            Self::EollaAlg2 => "eolla_alg2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OllaState {
    pub policy: OllaPolicy,
    pub offset_db: f64,
    pub step_up_db: f64,
    pub step_down_db: f64,
    pub offset_min_db: f64,
    pub offset_max_db: f64,
}

impl OllaState {
    pub fn new(
        policy: OllaPolicy,
        initial_offset_db: f64,
        step_up_db: f64,
        step_down_db: f64,
        bounds_db: (f64, f64),
    ) -> Result<Self> {
        if !(step_up_db > 0.0 && step_down_db > 0.0) {
            return Err(Error::Domain(format!(
                "OLLA steps must be positive (up {step_up_db}, down {step_down_db})"
            )));
        }
        let (lo, hi) = bounds_db;
        if !(lo <= hi) {
            return Err(Error::Domain(format!("offset bounds [{lo}, {hi}] are empty")));
        }
        Ok(Self {
            policy,
            offset_db: initial_offset_db.clamp(lo, hi),
            step_up_db,
            step_down_db,
            offset_min_db: lo,
            offset_max_db: hi,
        })
    }

    /// CQI SINR compensated by the current offset.
    pub fn effective_sinr(&self, cqi_sinr_db: f64) -> f64 {
        cqi_sinr_db - self.offset_db
    }

    fn shift(&mut self, delta: f64) {
        self.offset_db = (self.offset_db + delta).clamp(self.offset_min_db, self.offset_max_db);
    }

    /// Boolean TB feedback of a first transmission.
    pub fn update_traditional(&mut self, tb_ack: bool) {
        if tb_ack {
            self.shift(-self.step_down_db);
        } else {
            self.shift(self.step_up_db);
        }
    }

    /// First-transmission multi-bit feedback, applied once per feedback.
    pub fn update_alg1(&mut self, feedback: &CbgFeedback) {
        let m = f64::from(feedback.m);
        let f = f64::from(feedback.f());
        self.shift(-self.step_down_db * (m - f) / m + self.step_up_db * f / m);
    }

    /// First- or second-transmission multi-bit feedback. Later transmissions are ignored.
    pub fn update_alg2(&mut self, feedback: &CbgFeedback) {
        match feedback.tx_index {
            1 | 2 if feedback.all_ack() => self.shift(-self.step_down_db),
            2 => {
                let m = f64::from(feedback.m);
                self.shift(self.step_up_db * f64::from(feedback.f()) / m);
            }
            _ => {}
        }
    }

    /// Route feedback to this state's policy.
    pub fn apply(&mut self, feedback: &CbgFeedback) {
        match self.policy {
            OllaPolicy::Traditional => {
                if feedback.tx_index == 1 {
                    self.update_traditional(feedback.all_ack());
                }
            }
            OllaPolicy::EollaAlg1 => {
                if feedback.tx_index == 1 {
                    self.update_alg1(feedback);
                }
            }
            OllaPolicy::EollaAlg2 => self.update_alg2(feedback),
        }
    }

    /// Error rate the offset loop steers to.
    pub fn converged_operating_point(&self) -> Result<f64> {
        match self.policy {
            OllaPolicy::EollaAlg1 => cbger_target(self.step_up_db, self.step_down_db),
            OllaPolicy::EollaAlg2 => residual_tber_target(self.step_up_db, self.step_down_db),
            OllaPolicy::Traditional => Err(Error::Policy(
                "traditional OLLA converges to the first-TX TBER 1/(1 + up/down); use traditional_tber_target".into(),
            )),
        }
    }

    /// First-TX TB error rate of traditional ACK/NACK stepping.
    pub fn traditional_tber_target(&self) -> f64 {
        1.0 / (1.0 + self.step_up_db / self.step_down_db)
    }
}

/// Highest-efficiency MCS whose TB error at `effective_sinr_db` stays within
/// `tber_target`, or index 0 when none qualifies.
pub fn select_mcs(effective_sinr_db: f64, tber_target: f64, link: &LinkModel) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for e in link.table.entries() {
        if link.tb_error_probability(effective_sinr_db, e) <= tber_target + TARGET_SLACK
            && best.is_none_or(|(_, se)| e.spectral_efficiency > se)
        {
            best = Some((e.index, e.spectral_efficiency));
        }
    }
    best.map_or(0, |(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::tb_error_from_cbg;
    use crate::harq::CbgMask;
    use crate::link::McsTable;

    fn state(policy: OllaPolicy, up: f64, down: f64) -> OllaState {
        OllaState::new(policy, 0.0, up, down, (-25.0, 15.0)).unwrap()
    }

    fn feedback(tx_index: u8, m: u32, f: u32) -> CbgFeedback {
        CbgFeedback {
            process_id: 0,
            tx_index,
            m,
            transmitted: CbgMask::all(m),
            nack: CbgMask::from_bits(((1u16 << f) - 1) as u8),
        }
    }

    fn link() -> LinkModel {
        LinkModel::new(McsTable::nr_256qam(-5.0, 1.0).unwrap(), 2.0).unwrap()
    }

    #[test]
    fn effective_sinr_examples() {
        let mut s = state(OllaPolicy::Traditional, 0.5, 0.05);
        assert_eq!(s.effective_sinr(13.25), 13.25);
        s.offset_db = 3.0;
        assert_eq!(s.effective_sinr(20.0), 17.0);
        s.offset_db = -2.0;
        assert_eq!(s.effective_sinr(20.0), 22.0);
    }

    #[test]
    fn traditional_steps() {
        let mut s = state(OllaPolicy::Traditional, 0.5, 0.0556);
        s.update_traditional(true);
        assert!((s.offset_db + 0.0556).abs() < 1e-15);
        let mut s = state(OllaPolicy::Traditional, 0.5, 0.0556);
        s.update_traditional(false);
        assert_eq!(s.offset_db, 0.5);
        s.offset_db = 15.0;
        s.update_traditional(false);
        assert_eq!(s.offset_db, 15.0);
        s.offset_db = -25.0;
        s.update_traditional(true);
        assert_eq!(s.offset_db, -25.0);
    }

    #[test]
    fn alg1_steps() {
        let mut s = state(OllaPolicy::EollaAlg1, 0.5, 0.21);
        s.update_alg1(&feedback(1, 8, 0));
        assert!((s.offset_db + 0.21).abs() < 1e-15);
        let mut s = state(OllaPolicy::EollaAlg1, 0.5, 0.21);
        s.update_alg1(&feedback(1, 8, 8));
        assert!((s.offset_db - 0.5).abs() < 1e-15);
        let mut s = state(OllaPolicy::EollaAlg1, 0.5, 0.21);
        s.update_alg1(&feedback(1, 8, 2));
        assert!((s.offset_db + 0.0325).abs() < 1e-15);
    }

    #[test]
    fn alg2_steps() {
        let mut s = state(OllaPolicy::EollaAlg2, 0.5, 0.044);
        s.update_alg2(&feedback(1, 8, 3));
        assert_eq!(s.offset_db, 0.0);
        s.update_alg2(&feedback(2, 8, 2));
        assert!((s.offset_db - 0.125).abs() < 1e-15);
        let mut s = state(OllaPolicy::EollaAlg2, 0.5, 0.044);
        s.update_alg2(&feedback(1, 8, 0));
        assert!((s.offset_db + 0.044).abs() < 1e-15);
        s.update_alg2(&feedback(2, 8, 0));
        assert!((s.offset_db + 0.088).abs() < 1e-15);
        s.update_alg2(&feedback(3, 8, 5));
        s.update_alg2(&feedback(4, 8, 0));
        assert!((s.offset_db + 0.088).abs() < 1e-15);
    }

    #[test]
    fn apply_routes_by_policy() {
        let mut t = state(OllaPolicy::Traditional, 0.5, 0.05);
        t.apply(&feedback(2, 1, 1));
        assert_eq!(t.offset_db, 0.0);
        t.apply(&feedback(1, 1, 1));
        assert_eq!(t.offset_db, 0.5);
        let mut a1 = state(OllaPolicy::EollaAlg1, 0.5, 0.21);
        a1.apply(&feedback(2, 8, 8));
        assert_eq!(a1.offset_db, 0.0);
    }

    #[test]
    fn operating_points() {
        let s = state(OllaPolicy::EollaAlg1, 0.5, 0.21);
        assert!((s.converged_operating_point().unwrap() - 0.2958).abs() < 1e-4);
        let s = state(OllaPolicy::EollaAlg2, 0.5, 0.044);
        assert!((s.converged_operating_point().unwrap() - 0.1497).abs() < 1e-3);
        let s = state(OllaPolicy::EollaAlg1, 0.3, 0.3);
        assert_eq!(s.converged_operating_point().unwrap(), 0.5);
        let s = state(OllaPolicy::Traditional, 0.5, 0.0556);
        assert!(matches!(s.converged_operating_point(), Err(Error::Policy(_))));
        assert!((s.traditional_tber_target() - 0.1).abs() < 1e-3);
    }

    #[test]
    fn invalid_state_rejected() {
        assert!(OllaState::new(OllaPolicy::Traditional, 0.0, 0.0, 0.1, (-1.0, 1.0)).is_err());
        assert!(OllaState::new(OllaPolicy::Traditional, 0.0, 0.5, 0.1, (1.0, -1.0)).is_err());
    }

    #[test]
    fn mcs_selection_examples() {
        let link = link();
        assert_eq!(select_mcs(-30.0, 0.1, &link), 0);
        for e in link.table.entries() {
            assert_eq!(select_mcs(e.sinr_ref_db, 0.1, &link), e.index);
        }
        assert_eq!(select_mcs(-30.0, 1.0, &link), 27);
        assert_eq!(select_mcs(100.0, 0.1, &link), 27);
    }

    #[test]
    fn alg1_inner_target_is_permissive() {
        let t = tb_error_from_cbg(cbger_target(0.5, 0.21).unwrap(), 8).unwrap();
        let link = link();
        assert!(select_mcs(5.0, t, &link) > select_mcs(5.0, 0.1, &link));
    }

    #[test]
    fn policy_names_parse() {
        #[derive(Deserialize)]
        struct W {
            p: OllaPolicy,
        }
        let w: W = toml::from_str("p = \"EOLLA_ALG2\"").unwrap();
        assert_eq!(w.p, OllaPolicy::EollaAlg2);
        let w: W = toml::from_str("p = \"eolla_alg1\"").unwrap();
        assert_eq!(w.p, OllaPolicy::EollaAlg1);
    }
}
