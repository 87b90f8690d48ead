//! Link abstraction: MCS table, SINR-to-TB-error curves, chase combining,
//! CQI reporting and the per-UE SINR process.
//!
//! Every MCS entry carries an anchor SINR at which its TB error probability is
//! exactly 10%. The curve around the anchor is logistic in dB:
//!
//! ```text
//! p(sinr) = 1 / (1 + exp(slope * (sinr - anchor) + ln 9))
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};

/// Maximum payload of one code block, in bits.
pub const MAX_CB_BITS: u64 = 8448;

/// TB error probability at every entry's anchor SINR.
pub const ANCHOR_TBER: f64 = 0.1;

/// Modulation order and code rate (x1024) of the 28-entry 256QAM table.
const NR_256QAM: [(u8, f64); 28] = [
    (2, 120.0),
    (2, 193.0),
    (2, 308.0),
    (2, 449.0),
    (2, 602.0),
    (4, 378.0),
    (4, 434.0),
    (4, 490.0),
    (4, 553.0),
    (4, 616.0),
    (4, 658.0),
    (6, 466.0),
    (6, 517.0),
    (6, 567.0),
    (6, 616.0),
    (6, 666.0),
    (6, 719.0),
    (6, 772.0),
    (6, 822.0),
    (6, 873.0),
    (8, 682.5),
    (8, 711.0),
    (8, 754.0),
    (8, 797.0),
    (8, 841.0),
    (8, 885.0),
    (8, 916.5),
    (8, 948.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub index: usize,
    pub modulation_order: u8,
    pub code_rate: f64,
    /// Information bits per resource element.
    pub spectral_efficiency: f64,
    /// SINR at which this entry's TB error probability is 10%.
    pub sinr_ref_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

impl McsTable {
    /// Allowed gap between consecutive anchors, in dB.
    pub const SPACING_DB: (f64, f64) = (0.5, 2.5);

    pub fn new(entries: Vec<McsEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("MCS table"));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.index != i {
                return Err(Error::Domain(format!("MCS entry {i} carries index {}", e.index)));
            }
            if ![2, 4, 6, 8].contains(&e.modulation_order) {
                return Err(Error::Domain(format!(
                    "MCS {i}: modulation order {} not in {{2,4,6,8}}",
                    e.modulation_order
                )));
            }
            if !(e.code_rate > 0.0 && e.code_rate < 1.0) {
                return Err(Error::Domain(format!("MCS {i}: code rate {} not in (0,1)", e.code_rate)));
            }
            if !(e.spectral_efficiency > 0.0) {
                return Err(Error::Domain(format!("MCS {i}: spectral efficiency must be positive")));
            }
        }
        for w in entries.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.spectral_efficiency <= a.spectral_efficiency {
                return Err(Error::Domain(format!(
                    "spectral efficiency must increase strictly (MCS {} -> {})",
                    a.index, b.index
                )));
            }
            let gap = b.sinr_ref_db - a.sinr_ref_db;
            if !(Self::SPACING_DB.0..=Self::SPACING_DB.1).contains(&gap) {
                return Err(Error::Domain(format!(
                    "anchor spacing {gap} dB between MCS {} and {} outside [{}, {}]",
                    a.index,
                    b.index,
                    Self::SPACING_DB.0,
                    Self::SPACING_DB.1
                )));
            }
        }
        Ok(Self { entries })
    }

    /// QPSK..256QAM table with anchors `first_ref_db + i * spacing_db`.
    pub fn nr_256qam(first_ref_db: f64, spacing_db: f64) -> Result<Self> {
        let entries = NR_256QAM
            .iter()
            .enumerate()
            .map(|(index, &(qm, r1024))| {
                let code_rate = r1024 / 1024.0;
                McsEntry {
                    index,
                    modulation_order: qm,
                    code_rate,
                    spectral_efficiency: f64::from(qm) * code_rate,
                    sinr_ref_db: first_ref_db + spacing_db * index as f64,
                }
            })
            .collect();
        Self::new(entries)
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let entries = rdr.deserialize().collect::<std::result::Result<Vec<McsEntry>, _>>()?;
        Self::new(entries)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&McsEntry> {
        self.entries.get(index)
    }

    pub fn highest(&self) -> usize {
        self.entries.len() - 1
    }
}

/// SINR-to-error mapping shared by every UE.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    pub table: McsTable,
    /// Logistic slope in nats per dB.
    pub slope: f64,
}

impl LinkModel {
    pub fn new(table: McsTable, slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope.is_finite()) {
            return Err(Error::Domain(format!("curve slope {slope} must be positive")));
        }
        Ok(Self { table, slope })
    }

    /// TB error probability of `mcs` at `sinr_db`.
    pub fn tb_error_probability(&self, sinr_db: f64, mcs: &McsEntry) -> f64 {
        let z = self.slope * (sinr_db - mcs.sinr_ref_db) + 9f64.ln();
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }

    pub fn tb_error_at(&self, sinr_db: f64, index: usize) -> f64 {
        self.tb_error_probability(sinr_db, &self.table.entries[index])
    }

    /// Shift from an entry's anchor to the SINR where its error equals `target`.
    pub fn margin_for_target(&self, target: f64) -> f64 {
        (((1.0 - target) / target).ln() - 9f64.ln()) / self.slope
    }
}

/// Per-CB error probability that reproduces `p_tb` over `c` i.i.d. code blocks.
pub fn cb_error_probability(p_tb: f64, c: u32) -> Result<f64> {
    check_probability("p_tb", p_tb)?;
    if c == 0 {
        return Err(Error::Domain("code block count must be at least 1".into()));
    }
    Ok(-((-p_tb).ln_1p() / f64::from(c)).exp_m1())
}

/// Chase-combined SINR: linear power sum of all transmissions.
pub fn combined_sinr(transmission_sinrs_db: &[f64]) -> Result<f64> {
    if transmission_sinrs_db.is_empty() {
        return Err(Error::EmptyInput("combined_sinr needs at least one transmission"));
    }
    if transmission_sinrs_db.len() == 1 {
        return Ok(transmission_sinrs_db[0]);
    }
    let linear: f64 = transmission_sinrs_db.iter().map(|s| 10f64.powf(s / 10.0)).sum();
    Ok(10.0 * linear.log10())
}

/// Round `x` to the nearest multiple of `step`; `step == 0` is a passthrough.
pub fn quantize(x: f64, step: f64) -> f64 {
    if step > 0.0 {
        (x / step).round() * step
    } else {
        x
    }
}

/// What the scheduler knows about one UE's channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub ue_id: usize,
    pub true_sinr_db: f64,
    /// Last CQI that has reached the base station.
    pub cqi_sinr_db: f64,
    pub last_report_ms: f64,
}

/// CQI measurement model: Gaussian noise, then quantization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqiModel {
    pub noise_std_db: f64,
    pub quantization_step_db: f64,
}

impl CqiModel {
    /// Measure the current true SINR. The caller applies the reporting delay.
    pub fn report<R: Rng + ?Sized>(&self, state: &ChannelState, rng: &mut R) -> f64 {
        let noise = if self.noise_std_db > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            self.noise_std_db * z
        } else {
            0.0
        };
        quantize(state.true_sinr_db + noise, self.quantization_step_db)
    }
}

/// Per-UE SINR: a static geometry term plus first-order autoregressive fading in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrProcess {
    geometry_db: f64,
    /// Per-slot correlation of the fading term.
    rho: f64,
    std_db: f64,
    fading_db: f64,
}

impl SinrProcess {
    /// Starts the fading term in its stationary distribution.
    pub fn new<R: Rng + ?Sized>(geometry_db: f64, rho: f64, std_db: f64, rng: &mut R) -> Self {
        let z: f64 = StandardNormal.sample(rng);
        Self { geometry_db, rho, std_db, fading_db: std_db * z }
    }

    pub fn geometry_db(&self) -> f64 {
        self.geometry_db
    }

    pub fn current_db(&self) -> f64 {
        self.geometry_db + self.fading_db
    }

    /// Advance one slot and return the new SINR.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        if self.std_db > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            self.fading_db = self.rho * self.fading_db + (1.0 - self.rho * self.rho).sqrt() * self.std_db * z;
        }
        self.current_db()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn model() -> LinkModel {
        LinkModel::new(McsTable::nr_256qam(-5.0, 1.0).unwrap(), 2.0).unwrap()
    }

    #[test]
    fn default_table_shape() {
        let t = McsTable::nr_256qam(-5.0, 1.0).unwrap();
        assert_eq!(t.len(), 28);
        let first = t.get(0).unwrap();
        let last = t.get(27).unwrap();
        assert!((first.spectral_efficiency - 0.2344).abs() < 1e-4);
        assert!((last.spectral_efficiency - 7.4063).abs() < 1e-4);
        assert_eq!(first.modulation_order, 2);
        assert_eq!(last.modulation_order, 8);
    }

    #[test]
    fn table_validation() {
        assert!(McsTable::nr_256qam(0.0, 3.0).is_err());
        assert!(McsTable::nr_256qam(0.0, 0.4).is_err());
        assert!(McsTable::new(vec![]).is_err());
        let mut e = McsTable::nr_256qam(0.0, 1.0).unwrap().entries().to_vec();
        e[3].spectral_efficiency = e[2].spectral_efficiency;
        assert!(McsTable::new(e).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let t = McsTable::nr_256qam(-3.0, 1.5).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let header = std::str::from_utf8(&buf).unwrap().lines().next().unwrap().to_string();
        assert_eq!(header, "index,modulation_order,code_rate,spectral_efficiency,sinr_ref_db");
        assert_eq!(McsTable::from_csv_reader(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn anchor_and_asymptotes() {
        let m = model();
        for e in m.table.entries() {
            assert!((m.tb_error_probability(e.sinr_ref_db, e) - 0.1).abs() < 1e-9);
        }
        let e = m.table.get(10).unwrap();
        assert_eq!(m.tb_error_probability(f64::INFINITY, e), 0.0);
        assert_eq!(m.tb_error_probability(f64::NEG_INFINITY, e), 1.0);
        // 1 / (1 + exp(4 + ln 9)) evaluated at 40 digits
        let v = m.tb_error_probability(e.sinr_ref_db + 2.0, e);
        assert!((v - 0.002_030_937_884_869_939).abs() < 1e-15);
    }

    #[test]
    fn margin_inverts_the_curve() {
        let m = model();
        let e = m.table.get(5).unwrap();
        for target in [0.01, 0.1, 0.3, 0.9] {
            let s = e.sinr_ref_db + m.margin_for_target(target);
            assert!((m.tb_error_probability(s, e) - target).abs() < 1e-12);
        }
    }

    #[test]
    fn cb_error_examples() {
        assert!((cb_error_probability(0.1, 1).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(cb_error_probability(0.0, 13).unwrap(), 0.0);
        assert!(cb_error_probability(1.2, 3).is_err());
        assert!(cb_error_probability(0.1, 0).is_err());
    }

    #[test]
    fn combined_sinr_examples() {
        assert_eq!(combined_sinr(&[7.5]).unwrap(), 7.5);
        assert!((combined_sinr(&[4.0, 4.0]).unwrap() - 7.010_299_956_639_812).abs() < 1e-12);
        // 10 log10(10 + 10^1.3) at 40 digits
        assert!((combined_sinr(&[10.0, 13.0]).unwrap() - 14.764_348_624_364_853).abs() < 1e-12);
        assert!(combined_sinr(&[]).is_err());
    }

    #[test]
    fn quantized_reports() {
        let mut rng = stream(1, "cqi");
        let st = ChannelState { ue_id: 0, true_sinr_db: 17.3, cqi_sinr_db: 0.0, last_report_ms: 0.0 };
        let q = CqiModel { noise_std_db: 0.0, quantization_step_db: 1.0 };
        assert_eq!(q.report(&st, &mut rng), 17.0);
        let q = CqiModel { noise_std_db: 0.0, quantization_step_db: 0.0 };
        assert_eq!(q.report(&st, &mut rng), 17.3);
    }

    #[test]
    fn sinr_process_is_stationary_without_fading() {
        let mut rng = stream(2, "ch");
        let mut p = SinrProcess::new(12.0, 0.9, 0.0, &mut rng);
        for _ in 0..10 {
            assert_eq!(p.step(&mut rng), 12.0);
        }
    }

    #[test]
    fn sinr_process_variance() {
        let mut rng = stream(3, "ch");
        let mut p = SinrProcess::new(0.0, 0.5, 2.0, &mut rng);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| p.step(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05);
        assert!((var.sqrt() - 2.0).abs() < 0.05);
    }
}
