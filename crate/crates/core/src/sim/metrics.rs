//! Run metrics and the global event log, plus the CSV report writer.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::model::Tick;
use crate::vnf::VnfFamily;

/// Ordered (tick, source-specific fields) records. Entries may be recorded
/// out of order within a handler; the log is kept sorted by tick with
/// insertion order breaking ties, so ticks are always non-decreasing.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    entries: Vec<(Tick, u64, String)>,
    next_seq: u64,
}

impl EventLog {
    pub fn record(&mut self, tick: Tick, rest: impl Into<String>) {
        self.entries.push((tick, self.next_seq, rest.into()));
        self.next_seq += 1;
    }

    pub fn finalize(&mut self) {
        self.entries.sort_by_key(|e| (e.0, e.1));
    }

    pub fn lines(&self) -> impl Iterator<Item = (Tick, &str)> {
        self.entries.iter().map(|(t, _, s)| (*t, s.as_str()))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (tick, _, rest) in &self.entries {
            out.push_str(&format!("{},{}\n", tick, rest));
        }
        out
    }

    pub fn is_monotone(&self) -> bool {
        self.entries.windows(2).all(|w| w[0].0 <= w[1].0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseTimes {
    pub deploy: Tick,
    pub chain: Tick,
    pub overlay: Tick,
}

impl PhaseTimes {
    pub fn total(&self) -> Tick {
        self.deploy + self.chain + self.overlay
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub provisioning_time: Tick,
    pub orchestration_time: Tick,
    pub phase_times: PhaseTimes,
    pub e2e_delay: Tick,
    /// Records processed per VNF instance.
    pub vnf_invocations: BTreeMap<String, u64>,
    pub message_count: u64,
    pub overlay_sizes: BTreeMap<String, usize>,
    /// Encoded envelopes delivered to their final consumers, in order.
    pub delivered: Vec<String>,
    pub instantiation_count: u32,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report is empty; nothing ran")]
    Empty,
    #[error("phase times {got} do not sum to orchestration time {want}")]
    PhaseSumMismatch { got: Tick, want: Tick },
    #[error("orchestration time exceeds provisioning time")]
    ProvisioningTooSmall,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MetricsReport {
    /// Records processed across all instances of one family.
    pub fn invocations_of(&self, family: VnfFamily) -> u64 {
        self.vnf_invocations
            .iter()
            .filter(|(id, _)| id.starts_with(family.as_str()))
            .map(|(_, n)| *n)
            .sum()
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        if self.message_count == 0 && self.vnf_invocations.is_empty() {
            return Err(ReportError::Empty);
        }
        if self.phase_times.total() != self.orchestration_time {
            return Err(ReportError::PhaseSumMismatch {
                got: self.phase_times.total(),
                want: self.orchestration_time,
            });
        }
        if self.provisioning_time < self.orchestration_time {
            return Err(ReportError::ProvisioningTooSmall);
        }
        Ok(())
    }

    /// The `metric,phase,value_ticks,count` table, stable row and column
    /// order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,phase,value_ticks,count\n");
        out.push_str(&format!("provisioning,total,{},\n", self.provisioning_time));
        out.push_str(&format!("orchestration,total,{},\n", self.orchestration_time));
        out.push_str(&format!("orchestration,deploy,{},\n", self.phase_times.deploy));
        out.push_str(&format!("orchestration,chain,{},\n", self.phase_times.chain));
        out.push_str(&format!("orchestration,overlay,{},\n", self.phase_times.overlay));
        out.push_str(&format!("e2e,total,{},\n", self.e2e_delay));
        out.push_str(&format!("instantiations,total,,{}\n", self.instantiation_count));
        for (instance, count) in &self.vnf_invocations {
            out.push_str(&format!("invocations,{},,{}\n", instance, count));
        }
        out.push_str(&format!("messages,total,,{}\n", self.message_count));
        for (overlay, size) in &self.overlay_sizes {
            out.push_str(&format!("overlay,{},,{}\n", overlay, size));
        }
        out
    }
}

/// Writes `metrics.csv`; refuses empty or inconsistent reports.
pub fn emit_report(report: &MetricsReport, path: &Path) -> Result<(), ReportError> {
    report.validate()?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(report.to_csv().as_bytes())?;
    Ok(())
}
