//! Rule-usage statistics: the op-by-rule selection count matrix, per-op
//! purity, global usage shares, and the greedy op-rule matching.

use crate::engine::SelectionRecord;
use crate::error::{CoreError, Result};

/// Counts of (operation -> selected rule) over an evaluation set.
#[derive(Clone, Debug, PartialEq)]
pub struct SegregationMatrix {
    pub op_names: Vec<String>,
    pub num_rules: usize,
    /// counts[op][rule]
    pub counts: Vec<Vec<u64>>,
}

impl SegregationMatrix {
    pub fn from_counts(op_names: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let num_rules = counts.first().map(|r| r.len()).unwrap_or(0);
        if op_names.len() != counts.len() || counts.iter().any(|r| r.len() != num_rules) || num_rules == 0 {
            return Err(CoreError::Usage { op: "segregation", detail: "ragged or empty count matrix".into() });
        }
        Ok(SegregationMatrix { op_names, num_rules, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, op: usize) -> u64 {
        self.counts[op].iter().sum()
    }

    /// Share of the op's selections going to its modal rule.
    pub fn purity(&self, op: usize) -> f64 {
        let total = self.row_sum(op);
        if total == 0 {
            return 0.0;
        }
        *self.counts[op].iter().max().unwrap() as f64 / total as f64
    }

    pub fn modal_rule(&self, op: usize) -> usize {
        let mut best = 0;
        for (i, c) in self.counts[op].iter().enumerate().skip(1) {
            if *c > self.counts[op][best] {
                best = i;
            }
        }
        best
    }

    /// Fraction of all selections using this rule.
    pub fn usage_share(&self, rule: usize) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.counts.iter().map(|row| row[rule]).sum::<u64>() as f64 / total as f64
    }

    /// Greedy unique matching: repeatedly take the largest remaining cell
    /// and retire its row and column. Returns (op, rule) pairs for every op
    /// (when enough rules exist).
    pub fn greedy_matching(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        let mut used_ops = vec![false; self.counts.len()];
        let mut used_rules = vec![false; self.num_rules];
        let rounds = self.counts.len().min(self.num_rules);
        for _ in 0..rounds {
            let mut best: Option<(u64, usize, usize)> = None;
            for (op, row) in self.counts.iter().enumerate() {
                if used_ops[op] {
                    continue;
                }
                for (rule, c) in row.iter().enumerate() {
                    if used_rules[rule] {
                        continue;
                    }
                    if best.map(|(bc, _, _)| *c > bc).unwrap_or(true) {
                        best = Some((*c, op, rule));
                    }
                }
            }
            let (_, op, rule) = best.expect("rounds bounded by matrix size");
            used_ops[op] = true;
            used_rules[rule] = true;
            pairs.push((op, rule));
        }
        pairs.sort_by_key(|(op, _)| *op);
        pairs
    }

    /// True when each op's modal rule is distinct and its purity clears the
    /// threshold: a perfect op-rule bijection.
    pub fn is_bijection_with_purity(&self, min_purity: f64) -> bool {
        let mut seen = vec![false; self.num_rules];
        for op in 0..self.counts.len() {
            if self.purity(op) < min_purity {
                return false;
            }
            let modal = self.modal_rule(op);
            if seen[modal] {
                return false;
            }
            seen[modal] = true;
        }
        true
    }

    /// CSV rows `op,rule,count,epoch`, one line per cell.
    pub fn to_csv(&self, epoch: usize) -> String {
        let mut out = String::from("op,rule,count,epoch\n");
        for (op, row) in self.counts.iter().enumerate() {
            for (rule, c) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", self.op_names[op], rule, c, epoch));
            }
        }
        out
    }

    /// Parse the `op,rule,count,epoch` schema; returns one matrix per epoch
    /// in ascending epoch order.
    pub fn parse_csv(text: &str) -> Result<Vec<(usize, SegregationMatrix)>> {
        let bad = |detail: String| CoreError::Format { path: "<segregation csv>".into(), detail };
        let mut cells: Vec<(String, usize, u64, usize)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if i == 0 {
                if line != "op,rule,count,epoch" {
                    return Err(bad(format!("unexpected header {line}")));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(format!("expected 4 fields: {line}")));
            }
            cells.push((
                f[0].to_string(),
                f[1].parse().map_err(|_| bad(format!("bad rule index: {line}")))?,
                f[2].parse().map_err(|_| bad(format!("bad count: {line}")))?,
                f[3].parse().map_err(|_| bad(format!("bad epoch: {line}")))?,
            ));
        }
        let mut epochs: Vec<usize> = cells.iter().map(|c| c.3).collect();
        epochs.sort_unstable();
        epochs.dedup();
        let mut out = Vec::new();
        for epoch in epochs {
            let mut op_names: Vec<String> = Vec::new();
            for (op, ..) in cells.iter().filter(|c| c.3 == epoch) {
                if !op_names.contains(op) {
                    op_names.push(op.clone());
                }
            }
            let num_rules = cells.iter().filter(|c| c.3 == epoch).map(|c| c.1 + 1).max().unwrap_or(0);
            let mut counts = vec![vec![0u64; num_rules]; op_names.len()];
            for (op, rule, count, _) in cells.iter().filter(|c| c.3 == epoch) {
                let oi = op_names.iter().position(|o| o == op).unwrap();
                counts[oi][*rule] = *count;
            }
            out.push((epoch, SegregationMatrix::from_counts(op_names, counts)?));
        }
        Ok(out)
    }
}

/// Build the op-by-rule count matrix from selection records aligned
/// one-to-one with labeled examples.
pub fn segregation(
    records: &[SelectionRecord],
    labels: &[usize],
    op_names: &[&str],
    num_rules: usize,
) -> Result<SegregationMatrix> {
    if records.len() != labels.len() {
        return Err(CoreError::Usage {
            op: "segregation",
            detail: format!("{} trace records vs {} labels", records.len(), labels.len()),
        });
    }
    let mut counts = vec![vec![0u64; num_rules]; op_names.len()];
    for (r, &label) in records.iter().zip(labels.iter()) {
        if label >= op_names.len() || (r.rule as usize) >= num_rules {
            return Err(CoreError::Usage { op: "segregation", detail: "label or rule index out of range".into() });
        }
        counts[label][r.rule as usize] += 1;
    }
    SegregationMatrix::from_counts(op_names.iter().map(|s| s.to_string()).collect(), counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Mix64;

    #[test]
    fn degenerate_single_rule_use() {
        let m = SegregationMatrix::from_counts(
            vec!["op_a".into()],
            vec![vec![0, 0, 120, 0]],
        )
        .unwrap();
        assert_eq!(m.purity(0), 1.0);
        assert_eq!(m.modal_rule(0), 2);
    }

    #[test]
    fn five_rule_reference_matrix_usage_share() {
        // A published five-rule usage table: the fourth rule collects
        // 13 + 1 + 2 + 99 = 115 of 2000 selections, a 5.75% share.
        let m = SegregationMatrix::from_counts(
            vec!["x_add".into(), "x_sub".into(), "y_sub".into(), "y_add".into()],
            vec![
                vec![360, 99, 45, 13, 0],
                vec![0, 482, 0, 1, 0],
                vec![0, 39, 453, 2, 0],
                vec![0, 57, 15, 99, 335],
            ],
        )
        .unwrap();
        assert_eq!(m.total(), 2000);
        assert!((m.usage_share(3) - 0.0575).abs() < 1e-12);
        // At least one rule sits below a 10% global share.
        let minor = (0..5).map(|r| m.usage_share(r)).fold(f64::INFINITY, f64::min);
        assert!(minor < 0.10);
    }

    #[test]
    fn uniform_selections_have_low_purity() {
        let mut rng = Mix64::new(808);
        let mut counts = vec![vec![0u64; 4]; 4];
        for _ in 0..10_000 {
            let op = rng.next_below(4);
            let rule = rng.next_below(4);
            counts[op][rule] += 1;
        }
        let m = SegregationMatrix::from_counts(
            (0..4).map(|i| format!("op{i}")).collect(),
            counts,
        )
        .unwrap();
        for op in 0..4 {
            assert!((m.purity(op) - 0.25).abs() < 0.03, "purity {}", m.purity(op));
        }
        assert!(!m.is_bijection_with_purity(0.9));
    }

    #[test]
    fn greedy_matching_on_diagonal_matrix() {
        let m = SegregationMatrix::from_counts(
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![5, 90, 5], vec![80, 10, 10], vec![3, 2, 95]],
        )
        .unwrap();
        assert_eq!(m.greedy_matching(), vec![(0, 1), (1, 0), (2, 2)]);
        assert!(m.is_bijection_with_purity(0.8));
    }

    #[test]
    fn entries_sum_to_trace_count_and_purity_bounds() {
        use crate::engine::SelectionRecord;
        let mut rng = Mix64::new(809);
        let n_rules = 3;
        let records: Vec<SelectionRecord> = (0..500)
            .map(|i| SelectionRecord {
                step: i,
                stage: 0,
                rule: rng.next_below(n_rules) as u32,
                primary: 0,
                contextual: 0,
                rule_prob: 1.0,
                primary_prob: 1.0,
                contextual_prob: 1.0,
            })
            .collect();
        let labels: Vec<usize> = (0..500).map(|_| rng.next_below(2)).collect();
        let m = segregation(&records, &labels, &["p", "q"], n_rules).unwrap();
        assert_eq!(m.total(), 500);
        for op in 0..2 {
            let p = m.purity(op);
            assert!(p >= 1.0 / n_rules as f64 - 1e-12 && p <= 1.0);
        }
    }

    #[test]
    fn misaligned_lengths_error() {
        let records: Vec<SelectionRecord> = Vec::new();
        assert!(segregation(&records, &[0], &["a"], 2).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = SegregationMatrix::from_counts(
            vec!["up".into(), "down".into()],
            vec![vec![10, 2], vec![1, 30]],
        )
        .unwrap();
        let csv = m.to_csv(7);
        let parsed = SegregationMatrix::parse_csv(&csv).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].0, 7);
        assert_eq!(parsed[0].1, m);
    }
}
