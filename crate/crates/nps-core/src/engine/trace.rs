//! Per-step record of which rule touched which slots, with the soft
//! probabilities of each chosen item. Feeds the segregation statistics and
//! supports deterministic replay.

use crate::error::{CoreError, Result};

/// One rule application: chosen (rule, primary, contextual) and the soft
/// probability of each choice. For the sequential variant `rule_prob` and
/// `primary_prob` are the marginals of the joint pair distribution; for the
/// parallel variant `primary_prob` is the gate's inclusion probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionRecord {
    pub step: u64,
    pub stage: u32,
    pub rule: u32,
    pub primary: u32,
    pub contextual: u32,
    pub rule_prob: f64,
    pub primary_prob: f64,
    pub contextual_prob: f64,
}

/// Parallel-variant gate decision for one slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateRecord {
    pub step: u64,
    pub slot: u32,
    pub included: bool,
    pub include_prob: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelectionTrace {
    pub records: Vec<SelectionRecord>,
    pub gates: Vec<GateRecord>,
}

pub const TRACE_CSV_HEADER: &str = "step,stage,rule_index,primary_index,contextual_index,rule_prob,primary_prob,contextual_prob";

impl SelectionTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Newline-delimited comma-separated export of the application records.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.step, r.stage, r.rule, r.primary, r.contextual, r.rule_prob, r.primary_prob, r.contextual_prob
            ));
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let bad = |line: &str, detail: &str| CoreError::Format {
            path: "<selection trace>".into(),
            detail: format!("{detail}: {line}"),
        };
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line.trim() != TRACE_CSV_HEADER {
                    return Err(bad(line, "unexpected header"));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(line, "expected 8 fields"));
            }
            let parse_u = |s: &str| s.trim().parse::<u64>().map_err(|_| bad(line, "bad integer"));
            let parse_f = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(line, "bad float"));
            records.push(SelectionRecord {
                step: parse_u(f[0])?,
                stage: parse_u(f[1])? as u32,
                rule: parse_u(f[2])? as u32,
                primary: parse_u(f[3])? as u32,
                contextual: parse_u(f[4])? as u32,
                rule_prob: parse_f(f[5])?,
                primary_prob: parse_f(f[6])?,
                contextual_prob: parse_f(f[7])?,
            });
        }
        Ok(SelectionTrace { records, gates: Vec::new() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut t = SelectionTrace::new();
        t.records.push(SelectionRecord {
            step: 3,
            stage: 1,
            rule: 2,
            primary: 0,
            contextual: 1,
            rule_prob: 0.625,
            primary_prob: 0.75,
            contextual_prob: 0.5,
        });
        let csv = t.to_csv();
        let back = SelectionTrace::parse_csv(&csv).unwrap();
        assert_eq!(back.records, t.records);
    }
}
