use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{AgentError, AgentState, AlertDecision, AlertMetrics};
use crate::dataset::{AnomalyKind, Episode};

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub decision: AlertDecision,
    /// Known in simulation, absent in deployment.
    pub truth: Option<Episode>,
    pub state: AgentState,
}

/// Decisions in emission order, addressable by slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecisionLog {
    records: Vec<DecisionRecord>,
    by_slot: BTreeMap<u64, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub slot: u64,
    pub activity: u8,
    pub score: f64,
    pub threshold: f64,
    pub fired: bool,
    pub truth: String,
}

fn truth_label(t: Option<Episode>) -> &'static str {
    match t {
        None => "unknown",
        Some(Episode::Normal) => "normal",
        Some(Episode::Anomalous(_)) => "anomalous",
    }
}

fn parse_truth(s: &str) -> Option<Episode> {
    match s {
        "normal" => Some(Episode::Normal),
        "anomalous" => Some(Episode::Anomalous(AnomalyKind::GainShift)),
        _ => None,
    }
}

impl DecisionLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append; a repeated slot replaces the index entry but keeps both records.
    pub fn push(&mut self, record: DecisionRecord) {
        self.by_slot.insert(record.decision.slot, self.records.len());
        self.records.push(record);
    }

    pub fn get(&self, slot: u64) -> Option<&DecisionRecord> {
        self.by_slot.get(&slot).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[DecisionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Metrics over every record with a known truth.
    pub fn metrics(&self) -> AlertMetrics {
        let mut m = AlertMetrics::default();
        for r in &self.records {
            if let Some(t) = r.truth {
                m.record(r.decision.fired, t);
            }
        }
        m
    }

    pub fn rows(&self) -> impl Iterator<Item = CsvRow> + '_ {
        self.records.iter().map(|r| CsvRow {
            slot: r.decision.slot,
            activity: r.decision.activity,
            score: r.decision.score,
            threshold: r.decision.threshold,
            fired: r.decision.fired,
            truth: truth_label(r.truth).to_string(),
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AgentError> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory csv");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<CsvRow>, AgentError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<CsvRow>, _>>()?)
}

/// Recompute metrics from logged rows.
pub fn metrics_from_rows(rows: &[CsvRow]) -> AlertMetrics {
    let mut m = AlertMetrics::default();
    for row in rows {
        if let Some(t) = parse_truth(&row.truth) {
            m.record(row.fired, t);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(slot: u64, fired: bool, truth: Option<Episode>) -> DecisionRecord {
        DecisionRecord {
            decision: AlertDecision { slot, activity: 3, score: 0.1 * slot as f64, threshold: 2.0, fired, weights: vec![0.5] },
            truth,
            state: AgentState { g: vec![], d: vec![0.0, 1.0], a: vec![1.0], activity: 3 },
        }
    }

    #[test]
    fn csv_round_trip_recomputes_metrics() {
        let mut log = DecisionLog::new();
        let anomalous = Some(Episode::Anomalous(AnomalyKind::GainShift));
        for (i, (f, t)) in [(true, Some(Episode::Normal)), (false, anomalous), (true, anomalous), (false, None)].into_iter().enumerate() {
            log.push(record(i as u64, f, t));
        }
        let text = log.to_csv_string();
        assert!(text.starts_with("slot,activity,score,threshold,fired,truth\n"));
        let rows = read_csv(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(metrics_from_rows(&rows), log.metrics());
        assert_eq!(log.get(2).unwrap().decision.slot, 2);
        assert!(log.get(9).is_none());
    }
}
