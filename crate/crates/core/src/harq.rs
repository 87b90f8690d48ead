//! Transport block segmentation, CBG-based HARQ processes and multi-bit feedback.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::{cb_error_probability, combined_sinr, LinkModel, MAX_CB_BITS};

/// Allowed values for the configured maximum number of CBGs per TB.
pub const ALLOWED_N_MAX: [u32; 4] = [2, 4, 6, 8];

/// Transmissions per process: the first plus three retransmissions.
pub const DEFAULT_MAX_TX: u8 = 4;

/// Bitmap over at most eight CBGs. Bit `i` is CBG `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct CbgMask(u8);

impl CbgMask {
    pub const EMPTY: Self = Self(0);

    pub fn all(m: u32) -> Self {
        debug_assert!((1..=8).contains(&m));
        Self(((1u16 << m) - 1) as u8)
    }

    pub fn from_bits(bits: u8) -> Self {
        Self(bits)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }

    pub fn contains(self, i: usize) -> bool {
        i < 8 && self.0 & (1 << i) != 0
    }

    pub fn insert(&mut self, i: usize) {
        self.0 |= 1 << i;
    }

    pub fn is_subset_of(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn difference(self, other: Self) -> Self {
        Self(self.0 & !other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..8).filter(move |&i| self.contains(i))
    }

    /// `m` characters, CBG 0 first; `1` marks a set bit.
    pub fn to_bit_string(self, m: u32) -> String {
        (0..m as usize).map(|i| if self.contains(i) { '1' } else { '0' }).collect()
    }
}

/// How a transport block maps onto code blocks and CBGs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CbgLayout {
    pub tb_bits: u64,
    /// Number of code blocks.
    pub c: u32,
    /// Configured CBG maximum; 1 in TB-based mode.
    pub n_max: u32,
    /// Actual number of CBGs, `min(n_max, c)`.
    pub m: u32,
    pub cbs_per_cbg: Vec<u32>,
}

impl CbgLayout {
    /// Bits carried by each CBG. Boundaries follow the CB counts, rounded to whole bits.
    pub fn cbg_bits(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.m as usize);
        let mut cum = 0u64;
        let mut prev = 0u64;
        for &n in &self.cbs_per_cbg {
            cum += u64::from(n);
            let edge = self.bit_edge(cum);
            out.push(edge - prev);
            prev = edge;
        }
        out
    }

    /// Half-open bit range `[start, end)` of CBG `i` within the TB.
    pub fn cbg_range(&self, i: usize) -> (u64, u64) {
        let before: u64 = self.cbs_per_cbg[..i].iter().map(|&n| u64::from(n)).sum();
        let upto = before + u64::from(self.cbs_per_cbg[i]);
        (self.bit_edge(before), self.bit_edge(upto))
    }

    fn bit_edge(&self, cbs: u64) -> u64 {
        let c = u128::from(self.c);
        ((u128::from(self.tb_bits) * u128::from(cbs) + c / 2) / c) as u64
    }

    pub fn cbs_in(&self, mask: CbgMask) -> u32 {
        mask.iter().map(|i| self.cbs_per_cbg[i]).sum()
    }
}

fn balanced_layout(tb_bits: u64, n_max: u32) -> CbgLayout {
    let c = tb_bits.div_ceil(MAX_CB_BITS) as u32;
    let m = n_max.min(c);
    let (base, extra) = (c / m, c % m);
    let cbs_per_cbg = (0..m).map(|i| if i < extra { base + 1 } else { base }).collect();
    CbgLayout { tb_bits, c, n_max, m, cbs_per_cbg }
}

/// Split a transport block into code blocks and at most `n_max` CBGs.
pub fn segment(tb_bits: u64, n_max: u32) -> Result<CbgLayout> {
    if tb_bits == 0 {
        return Err(Error::Domain("transport block must carry at least one bit".into()));
    }
    if !ALLOWED_N_MAX.contains(&n_max) {
        return Err(Error::Domain(format!("n_max = {n_max} must be one of {{2,4,6,8}}")));
    }
    Ok(balanced_layout(tb_bits, n_max))
}

/// Retransmission granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarqMode {
    /// One ACK/NACK per TB; every retransmission resends the whole TB.
    Tb,
    /// One ACK/NACK per CBG with at most `n_max` groups.
    Cbg { n_max: u32 },
}

impl HarqMode {
    pub fn layout(self, tb_bits: u64) -> Result<CbgLayout> {
        match self {
            Self::Tb => {
                if tb_bits == 0 {
                    return Err(Error::Domain("transport block must carry at least one bit".into()));
                }
                Ok(balanced_layout(tb_bits, 1))
            }
            Self::Cbg { n_max } => segment(tb_bits, n_max),
        }
    }
}

/// Multi-bit HARQ feedback for one transmission of one process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CbgFeedback {
    pub process_id: usize,
    /// 1 for the first transmission, 2 for the first retransmission, ...
    pub tx_index: u8,
    pub m: u32,
    /// CBGs carried by the transmission being answered.
    pub transmitted: CbgMask,
    /// CBGs reported as NACK; always a subset of `transmitted`.
    pub nack: CbgMask,
}

impl CbgFeedback {
    /// Number of NACK bits.
    pub fn f(&self) -> u32 {
        self.nack.count()
    }

    pub fn all_ack(&self) -> bool {
        self.nack.is_empty()
    }

    /// ACK (`true`) or NACK per CBG, CBG 0 first. Untransmitted CBGs read ACK.
    pub fn bits(&self) -> Vec<bool> {
        (0..self.m as usize).map(|i| !self.nack.contains(i)).collect()
    }

    /// CBGs decoded by this transmission.
    pub fn newly_acked(&self) -> CbgMask {
        self.transmitted.difference(self.nack)
    }
}

/// A slice of one packet carried by a transport block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketSegment {
    /// Index of the packet in its UE's packet list.
    pub packet: usize,
    /// Offset of the slice inside the TB.
    pub tb_offset: u64,
    pub bits: u64,
}

/// The owning packets lost their last chance of delivery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossEvent {
    pub process_id: usize,
    pub ue_id: usize,
    pub pending: CbgMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarqProcess {
    pub process_id: usize,
    pub ue_id: usize,
    pub layout: CbgLayout,
    pub pending: CbgMask,
    pub tx_count: u8,
    pub max_tx: u8,
    /// Per-CBG SINRs of every transmission that carried the CBG.
    pub sinr_history: Vec<Vec<f64>>,
    /// Frozen at the first transmission.
    pub mcs_index: usize,
    pub prbs_initial: u32,
    /// Payload bits one PRB carries at `mcs_index`.
    pub bits_per_prb: f64,
    pub segments: Vec<PacketSegment>,
    /// Combine all transmissions of a CBG; otherwise decode each attempt alone.
    pub chase_combining: bool,
}

impl HarqProcess {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        process_id: usize,
        ue_id: usize,
        layout: CbgLayout,
        mcs_index: usize,
        prbs_initial: u32,
        bits_per_prb: f64,
        segments: Vec<PacketSegment>,
        max_tx: u8,
    ) -> Self {
        let m = layout.m;
        Self {
            process_id,
            ue_id,
            pending: CbgMask::all(m),
            sinr_history: vec![Vec::new(); m as usize],
            layout,
            tx_count: 0,
            max_tx,
            mcs_index,
            prbs_initial,
            bits_per_prb,
            segments,
            chase_combining: true,
        }
    }

    pub fn is_exhausted(&self) -> bool {
        self.tx_count >= self.max_tx
    }

    /// Transmit the pending CBGs once at `sinr_db` and draw the per-CB outcomes.
    pub fn draw_outcome<R: Rng + ?Sized>(
        &mut self,
        sinr_db: f64,
        link: &LinkModel,
        rng: &mut R,
    ) -> Result<CbgFeedback> {
        if self.is_exhausted() {
            return Err(Error::ExhaustedProcess { process_id: self.process_id, tx_count: self.tx_count });
        }
        if self.pending.is_empty() {
            return Err(Error::Domain(format!("process {} has nothing pending", self.process_id)));
        }
        let mcs = link
            .table
            .get(self.mcs_index)
            .ok_or_else(|| Error::Domain(format!("MCS index {} not in table", self.mcs_index)))?;
        self.tx_count += 1;
        let transmitted = self.pending;
        let mut nack = CbgMask::EMPTY;
        for i in transmitted.iter() {
            let history = &mut self.sinr_history[i];
            history.push(sinr_db);
            let effective = if self.chase_combining { combined_sinr(history)? } else { sinr_db };
            let p_cb = cb_error_probability(link.tb_error_probability(effective, mcs), self.layout.c)?;
            let mut failed = false;
            for _ in 0..self.layout.cbs_per_cbg[i] {
                failed |= rng.random::<f64>() < p_cb;
            }
            if failed {
                nack.insert(i);
            }
        }
        self.pending = nack;
        Ok(CbgFeedback {
            process_id: self.process_id,
            tx_index: self.tx_count,
            m: self.layout.m,
            transmitted,
            nack,
        })
    }

    /// PRBs needed to retransmit the pending CBGs at the frozen MCS.
    pub fn retransmission_payload(&self) -> u32 {
        let cbs = self.layout.cbs_in(self.pending);
        if cbs == 0 {
            return 0;
        }
        let bits = self.layout.tb_bits as f64 * f64::from(cbs) / f64::from(self.layout.c);
        let prbs = (bits / self.bits_per_prb - 1e-9).ceil().max(1.0) as u32;
        prbs.min(self.prbs_initial)
    }

    /// Loss event when every transmission is spent and CBGs are still pending.
    pub fn residual_failure(&self) -> Option<LossEvent> {
        (self.is_exhausted() && !self.pending.is_empty()).then_some(LossEvent {
            process_id: self.process_id,
            ue_id: self.ue_id,
            pending: self.pending,
        })
    }
}

impl fmt::Display for CbgLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TB {} bits: C={} M={} groups {:?}", self.tb_bits, self.c, self.m, self.cbs_per_cbg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::McsTable;
    use crate::rng::stream;

    fn link() -> LinkModel {
        LinkModel::new(McsTable::nr_256qam(-5.0, 1.0).unwrap(), 2.0).unwrap()
    }

    fn process(tb_bits: u64, mode: HarqMode) -> HarqProcess {
        let layout = mode.layout(tb_bits).unwrap();
        let bits_per_prb = 1000.0;
        let prbs = (tb_bits as f64 / bits_per_prb).ceil() as u32;
        HarqProcess::new(0, 0, layout, 10, prbs, bits_per_prb, vec![], DEFAULT_MAX_TX)
    }

    #[test]
    fn segmentation_examples() {
        let l = segment(8448, 8).unwrap();
        assert_eq!((l.c, l.m, l.cbs_per_cbg.clone()), (1, 1, vec![1]));
        let l = segment(8 * 8448, 8).unwrap();
        assert_eq!((l.c, l.m), (8, 8));
        assert_eq!(l.cbs_per_cbg, vec![1; 8]);
        let l = segment(13 * 8448, 8).unwrap();
        assert_eq!((l.c, l.m), (13, 8));
        assert_eq!(l.cbs_per_cbg, vec![2, 2, 2, 2, 2, 1, 1, 1]);
        assert_eq!(segment(8449, 4).unwrap().c, 2);
    }

    #[test]
    fn segmentation_rejects_bad_input() {
        assert!(segment(0, 8).is_err());
        assert!(segment(1000, 5).is_err());
        assert!(segment(1000, 1).is_err());
    }

    #[test]
    fn tb_mode_is_single_group() {
        let l = HarqMode::Tb.layout(13 * 8448).unwrap();
        assert_eq!((l.c, l.m, l.n_max), (13, 1, 1));
        assert_eq!(l.cbs_per_cbg, vec![13]);
    }

    #[test]
    fn cbg_bits_partition_the_tb() {
        let l = segment(100_003, 6).unwrap();
        let bits = l.cbg_bits();
        assert_eq!(bits.iter().sum::<u64>(), 100_003);
        for i in 0..l.m as usize {
            let (a, b) = l.cbg_range(i);
            assert_eq!(b - a, bits[i]);
        }
    }

    #[test]
    fn mask_basics() {
        let all = CbgMask::all(8);
        assert_eq!(all.bits(), 0xff);
        assert_eq!(CbgMask::all(3).to_bit_string(4), "1110");
        let mut m = CbgMask::EMPTY;
        m.insert(2);
        m.insert(5);
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![2, 5]);
        assert!(m.is_subset_of(all));
        assert_eq!(all.difference(m).count(), 6);
    }

    #[test]
    fn perfect_channel_acks_everything() {
        let mut rng = stream(1, "h");
        let mut p = process(13 * 8448, HarqMode::Cbg { n_max: 8 });
        let fb = p.draw_outcome(f64::INFINITY, &link(), &mut rng).unwrap();
        assert!(fb.all_ack());
        assert_eq!(fb.bits(), vec![true; 8]);
        assert!(p.pending.is_empty());
        assert_eq!(p.residual_failure(), None);
    }

    #[test]
    fn hopeless_channel_nacks_all_pending() {
        let mut rng = stream(2, "h");
        let mut p = process(13 * 8448, HarqMode::Cbg { n_max: 8 });
        let fb = p.draw_outcome(f64::NEG_INFINITY, &link(), &mut rng).unwrap();
        assert_eq!(fb.f(), 8);
        assert_eq!(fb.nack, CbgMask::all(8));
        assert_eq!(p.sinr_history[0].len(), 1);
    }

    #[test]
    fn exhausted_process_refuses_to_transmit() {
        let mut rng = stream(3, "h");
        let mut p = process(4 * 8448, HarqMode::Cbg { n_max: 4 });
        for tx in 1..=4 {
            let fb = p.draw_outcome(f64::NEG_INFINITY, &link(), &mut rng).unwrap();
            assert_eq!(fb.tx_index, tx);
        }
        assert!(matches!(
            p.draw_outcome(0.0, &link(), &mut rng),
            Err(Error::ExhaustedProcess { tx_count: 4, .. })
        ));
        let loss = p.residual_failure().unwrap();
        assert_eq!(loss.pending, CbgMask::all(4));
    }

    #[test]
    fn pending_subset_gets_nack_only_for_transmitted() {
        let mut rng = stream(4, "h");
        let mut p = process(8 * 8448, HarqMode::Cbg { n_max: 8 });
        p.pending = CbgMask::from_bits(0b0000_0101);
        let fb = p.draw_outcome(f64::NEG_INFINITY, &link(), &mut rng).unwrap();
        assert_eq!(fb.nack, CbgMask::from_bits(0b0000_0101));
        assert_eq!(fb.bits(), vec![false, true, false, true, true, true, true, true]);
        assert!(p.sinr_history[1].is_empty());
    }

    #[test]
    fn retransmission_payload_proportional() {
        let mut p = process(8 * 8448, HarqMode::Cbg { n_max: 8 });
        assert_eq!(p.retransmission_payload(), p.prbs_initial);
        p.pending = CbgMask::from_bits(1);
        // 8448 bits at 1000 bits/PRB
        assert_eq!(p.retransmission_payload(), 9);
        assert_eq!(p.prbs_initial, 68);

        let mut p = process(13 * 8448, HarqMode::Cbg { n_max: 8 });
        p.pending = CbgMask::from_bits(1);
        // 2 of 13 CBs of 109824 bits = 16896 bits
        assert_eq!(p.retransmission_payload(), 17);

        let mut p = process(13 * 8448, HarqMode::Tb);
        assert_eq!(p.retransmission_payload(), p.prbs_initial);
        p.pending = CbgMask::from_bits(1);
        assert_eq!(p.retransmission_payload(), p.prbs_initial);
    }

    #[test]
    fn combining_lowers_failure_probability() {
        let link = link();
        let mcs = link.table.get(10).unwrap();
        let s = mcs.sinr_ref_db;
        let first = link.tb_error_probability(combined_sinr(&[s]).unwrap(), mcs);
        let second = link.tb_error_probability(combined_sinr(&[s, s]).unwrap(), mcs);
        assert!(second < first);
    }
}
