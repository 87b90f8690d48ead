//! Scenario configuration.
//!
//! Scenarios are TOML documents. Every key is optional and defaults to the
//! reference evaluation setup; unknown keys are rejected. Overrides use dotted
//! paths (`la.step_down_db=0.21`) and are applied before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytics::{
    cbger_target, residual_tber_target, step_down_for_target, tb_error_from_cbg, EfficiencyInputs,
    FirstTxConvention, SecondTxModel, SweepSpec,
};
use crate::error::{Error, Result};
use crate::harq::{HarqMode, ALLOWED_N_MAX};
use crate::link::{CqiModel, LinkModel, McsTable};
use crate::olla::{OllaPolicy, OllaState};
use crate::sim::tdd::TddPattern;
use crate::traffic::{TruncGaussParams, XrSource};

/// Slot length at 30 kHz subcarrier spacing.
pub const SLOT_MS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    /// Base seed; run `i` uses a seed derived from it.
    pub seed: u64,
    /// Independent replications per result.
    pub runs: usize,
    pub horizon_ms: f64,
    /// Leading share of the horizon excluded from KPI tallies.
    pub warmup_fraction: f64,
    pub cells: usize,
    pub ues_per_cell: usize,
    /// A UE is satisfied when strictly more than this share of its packets is on time.
    pub reliability: f64,
    pub output_dir: PathBuf,
    pub traffic: TrafficConfig,
    pub channel: ChannelConfig,
    pub link: LinkConfig,
    pub phy: PhyConfig,
    pub harq: HarqConfig,
    pub la: LaConfig,
    pub scheduler: SchedulerConfig,
    pub capacity: CapacityConfig,
    pub analytics: AnalyticsConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub fps: f64,
    /// Jitter in milliseconds.
    pub jitter: TruncGaussParams,
    /// Frame size in kilobytes (1 kB = 1000 bytes).
    pub frame_size: TruncGaussParams,
    pub pdb_ms: f64,
    /// Shift each UE's frame clock by a uniform phase within one period.
    pub random_phase: bool,
    /// Nominal service rate label. Recorded as metadata only.
    pub required_rate_mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Per-UE geometry SINR is uniform over `[lo, hi]` dB.
    pub geometry_db: [f64; 2],
    pub fading_std_db: f64,
    /// Per-slot correlation of the fading term.
    pub fading_rho: f64,
    pub cqi_period_ms: f64,
    pub cqi_delay_ms: f64,
    pub cqi_noise_std_db: f64,
    pub cqi_step_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// Optional CSV MCS table; the built-in 256QAM table is used otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcs_table: Option<PathBuf>,
    pub first_ref_db: f64,
    pub ref_spacing_db: f64,
    /// Logistic slope in nats per dB.
    pub slope: f64,
    pub chase_combining: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhyConfig {
    pub prbs: u32,
    pub tdd_pattern: String,
    pub symbols_per_slot: u32,
    /// Symbols per slot lost to control and reference signals.
    pub overhead_symbols: u32,
    pub subcarriers_per_prb: u32,
    /// Spatial layers; a plain throughput multiplier.
    pub layers: u32,
    pub processing_delay_symbols: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarqModeSetting {
    /// TB feedback for traditional OLLA, CBG feedback for the eOLLA policies.
    Auto,
    Tb,
    Cbg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarqConfig {
    pub mode: HarqModeSetting,
    pub n_max: u32,
    pub max_retx: u8,
    pub processes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaConfig {
    pub policy: OllaPolicy,
    pub step_up_db: f64,
    /// Defaults per policy: 0.21 for Algorithm 1, 0.044 for Algorithm 2 and
    /// the value matching `tber_target` for traditional OLLA.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_down_db: Option<f64>,
    /// TB error target of traditional OLLA and inner target of Algorithm 2.
    pub tber_target: f64,
    /// Overrides the inner-loop target fed to MCS selection.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_target: Option<f64>,
    pub offset_bounds_db: [f64; 2],
    pub initial_offset_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    /// Averaging window of the proportional-fair throughput estimate.
    pub pf_window_slots: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacityConfig {
    pub ue_counts: Vec<usize>,
    pub satisfied_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondTxSetting {
    Successful,
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsConfig {
    pub p_tb: Vec<f64>,
    pub m: Vec<u32>,
    pub xi_cbg: f64,
    pub xi_tb: f64,
    pub second_tx: SecondTxSetting,
    pub rho: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_tb_baseline: Option<f64>,
    pub first_tx_convention: FirstTxConvention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub offset_trace: bool,
    pub harq_trace: bool,
    pub packet_trace: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 1,
            runs: 15,
            horizon_ms: 10_000.0,
            warmup_fraction: 0.1,
            cells: 3,
            ues_per_cell: 3,
            reliability: 0.99,
            output_dir: PathBuf::from("out"),
            traffic: TrafficConfig::default(),
            channel: ChannelConfig::default(),
            link: LinkConfig::default(),
            phy: PhyConfig::default(),
            harq: HarqConfig::default(),
            la: LaConfig::default(),
            scheduler: SchedulerConfig::default(),
            capacity: CapacityConfig::default(),
            analytics: AnalyticsConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            fps: 60.0,
            jitter: TruncGaussParams { mean: 0.0, std: 2.0, lo: -4.0, hi: 4.0 },
            frame_size: TruncGaussParams { mean: 62.5, std: 6.25, lo: 31.25, hi: 93.75 },
            pdb_ms: 10.0,
            random_phase: true,
            required_rate_mbps: 45.0,
        }
    }
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            geometry_db: [10.0, 30.0],
            fading_std_db: 2.0,
            fading_rho: 0.99,
            cqi_period_ms: 2.0,
            cqi_delay_ms: 2.0,
            cqi_noise_std_db: 1.0,
            cqi_step_db: 1.0,
        }
    }
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            mcs_table: None,
            first_ref_db: -5.0,
            ref_spacing_db: 1.0,
            slope: 2.0,
            chase_combining: true,
        }
    }
}

impl Default for PhyConfig {
    fn default() -> Self {
        Self {
            prbs: 272,
            tdd_pattern: "DDDSU".into(),
            symbols_per_slot: 14,
            overhead_symbols: 2,
            subcarriers_per_prb: 12,
            layers: 1,
            processing_delay_symbols: 6,
        }
    }
}

impl Default for HarqConfig {
    fn default() -> Self {
        Self { mode: HarqModeSetting::Auto, n_max: 8, max_retx: 3, processes: 16 }
    }
}

impl Default for LaConfig {
    fn default() -> Self {
        Self {
            policy: OllaPolicy::Traditional,
            step_up_db: 0.5,
            step_down_db: None,
            tber_target: 0.1,
            inner_target: None,
            offset_bounds_db: [-25.0, 15.0],
            initial_offset_db: 0.0,
        }
    }
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { pf_window_slots: 100.0 }
    }
}

impl Default for CapacityConfig {
    fn default() -> Self {
        Self { ue_counts: (1..=10).collect(), satisfied_fraction: 0.9 }
    }
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        Self {
            p_tb: (1..=6).map(|i| f64::from(i) * 0.05).collect(),
            m: vec![2, 4, 6, 8],
            xi_cbg: 1.0,
            xi_tb: 1.0,
            second_tx: SecondTxSetting::Successful,
            rho: 1.0,
            p_tb_baseline: None,
            first_tx_convention: FirstTxConvention::AsWritten,
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { offset_trace: true, harq_trace: false, packet_trace: false }
    }
}

/// Targets implied by the link-adaptation block, echoed into run metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedTargets {
    pub policy: OllaPolicy,
    pub step_up_db: f64,
    pub step_down_db: f64,
    /// Inner-loop TB error target used for MCS selection.
    pub inner_tber_target: f64,
    /// Error rate the offset loop converges to (first-TX TBER, first-TX
    /// CBGER or 2nd-TX residual TBER depending on the policy).
    pub converged_target: f64,
}

fn constraint(key: &str, constraint: impl Into<String>) -> Error {
    Error::Constraint { key: key.into(), constraint: constraint.into() }
}

fn check(cond: bool, key: &str, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(constraint(key, msg))
    }
}

fn check_trunc(key: &str, p: &TruncGaussParams) -> Result<()> {
    p.validate().map_err(|e| constraint(key, e.to_string()))
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::parse(text, &[], Path::new("<inline>"))
    }

    /// Parse `text`, apply `key=value` overrides and validate.
    pub fn parse(text: &str, overrides: &[String], origin: &Path) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
            path: origin.to_path_buf(),
            message: e.message().to_string(),
        })?;
        for ov in overrides {
            apply_override(&mut doc, ov)?;
        }
        let scenario: Scenario = Scenario::deserialize(doc).map_err(|e| {
            let message = e.message().to_string();
            match message.strip_prefix("unknown field `") {
                Some(rest) => Error::UnknownKey(rest.split('`').next().unwrap_or(rest).to_string()),
                None => Error::Parse { path: origin.to_path_buf(), message },
            }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.runs >= 1, "runs", "must be at least 1")?;
        check(self.horizon_ms > 0.0, "horizon_ms", "must be positive")?;
        check((0.0..1.0).contains(&self.warmup_fraction), "warmup_fraction", "must lie in [0, 1)")?;
        check(self.cells >= 1, "cells", "must be at least 1")?;
        check((0.0..1.0).contains(&self.reliability), "reliability", "must lie in [0, 1)")?;

        let t = &self.traffic;
        check(t.fps > 0.0, "traffic.fps", "must be positive")?;
        check(t.pdb_ms > 0.0, "traffic.pdb_ms", "must be positive")?;
        check_trunc("traffic.jitter", &t.jitter)?;
        check_trunc("traffic.frame_size", &t.frame_size)?;
        check(t.frame_size.hi > 0.0, "traffic.frame_size", "upper bound must be positive")?;

        let c = &self.channel;
        check(c.geometry_db[0] <= c.geometry_db[1], "channel.geometry_db", "needs lo <= hi")?;
        check(c.fading_std_db >= 0.0, "channel.fading_std_db", "must be non-negative")?;
        check((0.0..=1.0).contains(&c.fading_rho), "channel.fading_rho", "must lie in [0, 1]")?;
        check(c.cqi_period_ms >= SLOT_MS, "channel.cqi_period_ms", "must be at least one slot")?;
        check(c.cqi_delay_ms >= 0.0, "channel.cqi_delay_ms", "must be non-negative")?;
        check(c.cqi_noise_std_db >= 0.0, "channel.cqi_noise_std_db", "must be non-negative")?;
        check(c.cqi_step_db >= 0.0, "channel.cqi_step_db", "must be non-negative")?;

        check(self.link.slope > 0.0, "link.slope", "must be positive")?;
        if self.link.mcs_table.is_none() {
            let (lo, hi) = McsTable::SPACING_DB;
            check(
                (lo..=hi).contains(&self.link.ref_spacing_db),
                "link.ref_spacing_db",
                &format!("must lie in [{lo}, {hi}] dB"),
            )?;
        }

        let p = &self.phy;
        check(p.prbs >= 1, "phy.prbs", "must be at least 1")?;
        TddPattern::parse(&p.tdd_pattern).map_err(|e| constraint("phy.tdd_pattern", e.to_string()))?;
        check(p.overhead_symbols < p.symbols_per_slot, "phy.overhead_symbols", "must leave data symbols")?;
        check(p.subcarriers_per_prb >= 1, "phy.subcarriers_per_prb", "must be at least 1")?;
        check(p.layers >= 1, "phy.layers", "must be at least 1")?;

        let h = &self.harq;
        check(
            ALLOWED_N_MAX.contains(&h.n_max),
            "harq.n_max",
            "must be one of {2,4,6,8}",
        )?;
        check(h.max_retx <= 7, "harq.max_retx", "must be at most 7")?;
        check(h.processes >= 1, "harq.processes", "must be at least 1")?;

        let la = &self.la;
        check(la.step_up_db > 0.0, "la.step_up_db", "must be positive")?;
        if let Some(d) = la.step_down_db {
            check(d > 0.0, "la.step_down_db", "must be positive")?;
        }
        check(la.tber_target > 0.0 && la.tber_target < 1.0, "la.tber_target", "must lie in (0, 1)")?;
        if let Some(t) = la.inner_target {
            check(t > 0.0 && t <= 1.0, "la.inner_target", "must lie in (0, 1]")?;
        }
        let [lo, hi] = la.offset_bounds_db;
        check(lo <= hi, "la.offset_bounds_db", "needs min <= max")?;
        check(
            (lo..=hi).contains(&la.initial_offset_db),
            "la.initial_offset_db",
            "must lie within la.offset_bounds_db",
        )?;

        check(self.scheduler.pf_window_slots >= 1.0, "scheduler.pf_window_slots", "must be at least 1")?;

        let cap = &self.capacity;
        check(!cap.ue_counts.is_empty(), "capacity.ue_counts", "must not be empty")?;
        check(
            cap.ue_counts.windows(2).all(|w| w[0] < w[1]),
            "capacity.ue_counts",
            "must be strictly ascending",
        )?;
        check(
            (0.0..=1.0).contains(&cap.satisfied_fraction),
            "capacity.satisfied_fraction",
            "must lie in [0, 1]",
        )?;

        let a = &self.analytics;
        check(
            a.p_tb.iter().all(|p| (0.0..=1.0).contains(p)),
            "analytics.p_tb",
            "entries must be probabilities",
        )?;
        check(
            a.m.iter().all(|m| (1..=8).contains(m)),
            "analytics.m",
            "entries must lie in 1..=8",
        )?;
        EfficiencyInputs::new(a.xi_cbg, a.xi_tb).map_err(|e| constraint("analytics.xi_cbg", e.to_string()))?;
        check((0.0..=1.0).contains(&a.rho), "analytics.rho", "must lie in [0, 1]")?;
        if let Some(p) = a.p_tb_baseline {
            check((0.0..=1.0).contains(&p), "analytics.p_tb_baseline", "must be a probability")?;
        }
        Ok(())
    }

    pub fn slot_ms(&self) -> f64 {
        SLOT_MS
    }

    pub fn tdd(&self) -> TddPattern {
        TddPattern::parse(&self.phy.tdd_pattern).expect("validated pattern")
    }

    pub fn harq_mode(&self) -> HarqMode {
        let cbg = HarqMode::Cbg { n_max: self.harq.n_max };
        match self.harq.mode {
            HarqModeSetting::Tb => HarqMode::Tb,
            HarqModeSetting::Cbg => cbg,
            HarqModeSetting::Auto => match self.la.policy {
                OllaPolicy::Traditional => HarqMode::Tb,
                OllaPolicy::EollaAlg1 | OllaPolicy::EollaAlg2 => cbg,
            },
        }
    }

    pub fn max_tx(&self) -> u8 {
        self.harq.max_retx + 1
    }

    /// Data resource elements in one PRB over one slot.
    pub fn re_per_prb(&self) -> f64 {
        f64::from(self.phy.subcarriers_per_prb * (self.phy.symbols_per_slot - self.phy.overhead_symbols))
    }

    pub fn link_model(&self) -> Result<LinkModel> {
        let table = match &self.link.mcs_table {
            Some(path) => McsTable::from_csv_path(path)?,
            None => McsTable::nr_256qam(self.link.first_ref_db, self.link.ref_spacing_db)?,
        };
        LinkModel::new(table, self.link.slope)
    }

    pub fn xr_source(&self) -> XrSource {
        XrSource {
            fps: self.traffic.fps,
            jitter: self.traffic.jitter,
            size_bytes: self.traffic.frame_size.scaled(1000.0),
            pdb_ms: self.traffic.pdb_ms,
        }
    }

    pub fn cqi_model(&self) -> CqiModel {
        CqiModel {
            noise_std_db: self.channel.cqi_noise_std_db,
            quantization_step_db: self.channel.cqi_step_db,
        }
    }

    pub fn step_down_db(&self) -> f64 {
        self.la.step_down_db.unwrap_or_else(|| match self.la.policy {
            OllaPolicy::Traditional => {
                step_down_for_target(self.la.step_up_db, self.la.tber_target).expect("validated target")
            }
            OllaPolicy::EollaAlg1 => 0.21,
            OllaPolicy::EollaAlg2 => 0.044,
        })
    }

    pub fn olla_state(&self) -> Result<OllaState> {
        let [lo, hi] = self.la.offset_bounds_db;
        OllaState::new(self.la.policy, self.la.initial_offset_db, self.la.step_up_db, self.step_down_db(), (lo, hi))
    }

    pub fn derived_targets(&self) -> Result<DerivedTargets> {
        let (up, down) = (self.la.step_up_db, self.step_down_db());
        let (inner, converged) = match self.la.policy {
            OllaPolicy::Traditional => (self.la.tber_target, 1.0 / (1.0 + up / down)),
            OllaPolicy::EollaAlg1 => {
                let cbger = cbger_target(up, down)?;
                (tb_error_from_cbg(cbger, self.harq.n_max)?, cbger)
            }
            OllaPolicy::EollaAlg2 => (self.la.tber_target, residual_tber_target(up, down)?),
        };
        Ok(DerivedTargets {
            policy: self.la.policy,
            step_up_db: up,
            step_down_db: down,
            inner_tber_target: self.la.inner_target.unwrap_or(inner),
            converged_target: converged,
        })
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let a = &self.analytics;
        Ok(SweepSpec {
            p_tb: a.p_tb.clone(),
            m: a.m.clone(),
            eff: EfficiencyInputs::new(a.xi_cbg, a.xi_tb)?,
            second_tx: match a.second_tx {
                SecondTxSetting::Successful => SecondTxModel::Successful,
                SecondTxSetting::Proportional => SecondTxModel::proportional(a.rho)?,
            },
            p_tb_baseline: a.p_tb_baseline,
            convention: a.first_tx_convention,
        })
    }

    /// Fully resolved scenario: derived defaults written out explicitly.
    pub fn resolved(&self) -> Self {
        let mut s = self.clone();
        s.la.step_down_db = Some(self.step_down_db());
        s
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

/// Load and validate a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    load_scenario_with(path, &[])
}

pub fn load_scenario_with(path: &Path, overrides: &[String]) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    Scenario::parse(&text, overrides, path)
}

fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Override(assignment.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Override(assignment.to_string()));
    }
    let value = parse_value(raw.trim());
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().expect("non-empty key");
    let mut table = doc;
    for part in parts {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(constraint(key, format!("`{part}` is not a section"))),
        };
    }
    table.insert(leaf.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
