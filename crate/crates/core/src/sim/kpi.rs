//! Per-UE KPI counters.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct KpiRecord {
    pub ue_id: usize,
    pub packets_total: u64,
    /// Fully delivered within the delay budget.
    pub packets_on_time: u64,
    /// Budget expired before full delivery.
    pub packets_late: u64,
    /// HARQ gave up on part of the packet before its deadline.
    pub packets_lost: u64,
    pub delay_samples_ms: Vec<f64>,
    pub prb_used: u64,
    /// New transport blocks per MCS index.
    pub mcs_histogram: Vec<u64>,
    pub first_tx_tb: u64,
    pub first_tx_tb_failed: u64,
    pub first_tx_cbg_sent: u64,
    pub first_tx_cbg_failed: u64,
    pub second_tx_count: u64,
    pub second_tx_failed: u64,
}

impl KpiRecord {
    pub fn new(ue_id: usize, mcs_levels: usize) -> Self {
        Self { ue_id, mcs_histogram: vec![0; mcs_levels], ..Self::default() }
    }

    pub fn in_flight(&self) -> u64 {
        self.packets_total - self.packets_on_time - self.packets_late - self.packets_lost
    }

    pub fn on_time_fraction(&self) -> Option<f64> {
        (self.packets_total > 0).then(|| self.packets_on_time as f64 / self.packets_total as f64)
    }

    pub fn first_tx_cbger(&self) -> Option<f64> {
        ratio(self.first_tx_cbg_failed, self.first_tx_cbg_sent)
    }

    pub fn first_tx_tber(&self) -> Option<f64> {
        ratio(self.first_tx_tb_failed, self.first_tx_tb)
    }

    /// Share of second transmissions that still left CBGs pending.
    pub fn residual_tber(&self) -> Option<f64> {
        ratio(self.second_tx_failed, self.second_tx_count)
    }

    /// Add another record's counters into this one.
    pub fn merge(&mut self, other: &KpiRecord) {
        self.packets_total += other.packets_total;
        self.packets_on_time += other.packets_on_time;
        self.packets_late += other.packets_late;
        self.packets_lost += other.packets_lost;
        self.delay_samples_ms.extend_from_slice(&other.delay_samples_ms);
        self.prb_used += other.prb_used;
        if self.mcs_histogram.len() < other.mcs_histogram.len() {
            self.mcs_histogram.resize(other.mcs_histogram.len(), 0);
        }
        for (a, b) in self.mcs_histogram.iter_mut().zip(&other.mcs_histogram) {
            *a += b;
        }
        self.first_tx_tb += other.first_tx_tb;
        self.first_tx_tb_failed += other.first_tx_tb_failed;
        self.first_tx_cbg_sent += other.first_tx_cbg_sent;
        self.first_tx_cbg_failed += other.first_tx_cbg_failed;
        self.second_tx_count += other.second_tx_count;
        self.second_tx_failed += other.second_tx_failed;
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// A UE is satisfied when strictly more than `reliability` of its packets arrive on time.
pub fn satisfied(kpi: &KpiRecord, reliability: f64) -> Result<bool> {
    let frac = kpi
        .on_time_fraction()
        .ok_or(Error::EmptyInput("satisfaction needs at least one packet"))?;
    Ok(frac > reliability)
}
