//! Cyclic TDD slot pattern and HARQ feedback timing.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Downlink,
    /// Guard/switching slot; carries no data.
    Special,
    Uplink,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TddPattern {
    slots: Vec<SlotKind>,
}

impl TddPattern {
    /// Parse a pattern such as `DDDSU`.
    pub fn parse(text: &str) -> Result<Self> {
        let slots = text
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'D' => Ok(SlotKind::Downlink),
                'S' => Ok(SlotKind::Special),
                'U' => Ok(SlotKind::Uplink),
                other => Err(Error::Domain(format!("unknown slot kind `{other}` (expected D, S or U)"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if !slots.contains(&SlotKind::Downlink) || !slots.contains(&SlotKind::Uplink) {
            return Err(Error::Domain(format!(
                "pattern `{text}` needs at least one D and one U slot"
            )));
        }
        Ok(Self { slots })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn kind(&self, slot: u64) -> SlotKind {
        self.slots[(slot % self.slots.len() as u64) as usize]
    }

    /// First slot at which feedback for a transmission in `tx_slot` can be used.
    ///
    /// The UE needs `processing_symbols` after the end of `tx_slot`; the report
    /// goes out in the first uplink slot starting no earlier than that and is
    /// available from the following slot on.
    pub fn feedback_slot(&self, tx_slot: u64, symbols_per_slot: u32, processing_symbols: u32) -> u64 {
        let sps = u64::from(symbols_per_slot);
        let ready = (tx_slot + 1) * sps + u64::from(processing_symbols);
        let mut u = ready.div_ceil(sps);
        while self.kind(u) != SlotKind::Uplink {
            u += 1;
        }
        u + 1
    }
}

impl fmt::Display for TddPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.slots {
            let c = match s {
                SlotKind::Downlink => 'D',
                SlotKind::Special => 'S',
                SlotKind::Uplink => 'U',
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}
