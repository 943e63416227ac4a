//! Straight-through Gumbel argmax and the attention-based selection of
//! (rule, primary slot) pairs and contextual slots.

use super::{noise_tag, AttentionVars, NoiseMode, NpsConfig, RuleSetVars, SelectionMode};
use crate::array::Array;
use crate::error::{CoreError, Result};
use crate::rng::{gumbel_keyed, Mix64};
use crate::tape::{Tape, Var};

/// Result of a straight-through hard selection.
#[derive(Clone, Copy, Debug)]
pub struct StArgmax {
    /// Hard argmax over the perturbed logits (ties broken by lowest index).
    pub index: usize,
    /// softmax((logits + noise) / temperature); the backward surrogate.
    pub soft: Var,
    /// One-hot forward value whose backward is the surrogate's.
    pub output: Var,
}

/// Hard one-hot selection over perturbed logits with the softmax surrogate
/// on the backward path. `noise` holds one perturbation per logit.
pub fn st_argmax_with_noise(tape: &mut Tape, logits: Var, temperature: f64, noise: &[f64]) -> Result<StArgmax> {
    let n = tape.value(logits).len();
    if n == 0 {
        return Err(CoreError::Usage { op: "st_argmax", detail: "empty logits".into() });
    }
    if tape.value(logits).rows() != 1 {
        return Err(CoreError::Usage { op: "st_argmax", detail: "logits must be a single row".into() });
    }
    if noise.len() != n {
        return Err(CoreError::Dim { op: "st_argmax", left: format!("[{n}]"), right: format!("[{}]", noise.len()) });
    }
    if temperature <= 0.0 {
        return Err(CoreError::Param { op: "st_argmax", detail: format!("temperature {temperature} must be > 0") });
    }
    let noise_var = tape.constant(Array::matrix(1, n, noise.to_vec()));
    let perturbed = tape.add(logits, noise_var)?;
    let scaled = tape.scale(perturbed, 1.0 / temperature);
    let soft = tape.softmax(scaled, 1)?;
    let index = argmax_lowest(tape.value(perturbed).data());
    let mut hard = Array::zeros(1, n);
    hard.data_mut()[index] = 1.0;
    let output = tape.straight_through(soft, hard)?;
    Ok(StArgmax { index, soft, output })
}

/// As [`st_argmax_with_noise`] with Gumbel(0,1) noise drawn from `rng` in
/// index order.
pub fn gumbel_st_argmax(tape: &mut Tape, logits: Var, temperature: f64, rng: &mut Mix64) -> Result<StArgmax> {
    let n = tape.value(logits).len();
    if n == 0 {
        return Err(CoreError::Usage { op: "gumbel_st_argmax", detail: "empty logits".into() });
    }
    let noise: Vec<f64> = (0..n).map(|_| crate::rng::gumbel_from_uniform(rng.next_f64())).collect();
    st_argmax_with_noise(tape, logits, temperature, &noise)
}

/// Forced hard selection: constant one-hot, probability 1 in the trace.
fn forced_one_hot(tape: &mut Tape, n: usize, index: usize) -> StArgmax {
    let mut hard = Array::zeros(1, n);
    hard.data_mut()[index] = 1.0;
    let output = tape.constant(hard.clone());
    let soft = tape.constant(hard);
    StArgmax { index, soft, output }
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Outcome of the joint (rule, primary slot) selection.
#[derive(Clone, Copy, Debug)]
pub struct PairSelection {
    pub rule: usize,
    pub primary: usize,
    /// One-hot over rules (marginal of the straight-through pair output).
    pub rule_mask: Var,
    /// One-hot over slots.
    pub primary_mask: Var,
    /// Soft marginal probability of the chosen rule / chosen primary.
    pub rule_prob: f64,
    pub primary_prob: f64,
}

/// Joint selection of one {rule, primary slot} pair among the N*M
/// candidates. Queries come from the slots, keys are the rule embeddings
/// themselves; the flattened score table is perturbed per (rule, slot)
/// identity and resolved by straight-through Gumbel argmax.
pub fn select_rule_primary_sequential(
    tape: &mut Tape,
    slots: Var,
    rules: &RuleSetVars,
    attn: &AttentionVars,
    cfg: &NpsConfig,
    noise_key: u64,
    stage: u64,
    training: bool,
    forced: Option<(usize, usize)>,
) -> Result<PairSelection> {
    let m = tape.value(slots).rows();
    let n = rules.n;
    let q = tape.matmul(slots, attn.w_query)?;
    if tape.value(q).cols() != rules.d_rule {
        return Err(CoreError::Config(format!(
            "rule-matching query size {} must equal rule embedding size {}",
            tape.value(q).cols(),
            rules.d_rule
        )));
    }
    let keys_t = tape.transpose(rules.embeddings);
    let mut logits = tape.matmul(q, keys_t)?; // M x N
    if cfg.scale_scores {
        logits = tape.scale(logits, 1.0 / (rules.d_rule as f64).sqrt());
    }
    // Row-major reshape: flat index j*N + i pairs slot j with rule i.
    let mut flat = tape.reshape(logits, 1, m * n)?;
    if training && cfg.selection_dropout_p > 0.0 {
        let mut rng = Mix64::from_parts(&[cfg.seed, noise_key, stage, noise_tag::DROPOUT]);
        flat = tape.dropout(flat, cfg.selection_dropout_p, true, &mut rng)?;
    }

    let st = match forced {
        Some((rule, primary)) => {
            if rule >= n || primary >= m {
                return Err(CoreError::Usage {
                    op: "select_rule_primary",
                    detail: format!("forced pair ({rule}, {primary}) out of range ({n} rules, {m} slots)"),
                });
            }
            forced_one_hot(tape, m * n, primary * n + rule)
        }
        None => {
            let noise: Vec<f64> = match cfg.noise {
                NoiseMode::Zero => vec![0.0; m * n],
                NoiseMode::Gumbel => (0..m * n)
                    .map(|idx| {
                        let (j, i) = (idx / n, idx % n);
                        gumbel_keyed(&[cfg.seed, noise_key, stage, noise_tag::PAIR, cfg.rule_id(i), cfg.slot_id(j)])
                    })
                    .collect(),
            };
            st_argmax_with_noise(tape, flat, cfg.temperature, &noise)?
        }
    };
    let (primary, rule) = (st.index / n, st.index % n);

    // Marginal one-hots, built by multiplying the straight-through pair
    // vector with constant 0/1 summing matrices so gradients keep flowing.
    let mut to_rule = Array::zeros(m * n, n);
    let mut to_slot = Array::zeros(m * n, m);
    for j in 0..m {
        for i in 0..n {
            to_rule.set(j * n + i, i, 1.0);
            to_slot.set(j * n + i, j, 1.0);
        }
    }
    let picked = match cfg.selection {
        SelectionMode::StraightThrough => st.output,
        SelectionMode::SoftMix => st.soft,
    };
    let to_rule = tape.constant(to_rule);
    let to_slot = tape.constant(to_slot);
    let rule_mask = tape.matmul(picked, to_rule)?;
    let primary_mask = tape.matmul(picked, to_slot)?;

    let soft = tape.value(st.soft).data();
    let rule_prob: f64 = (0..m).map(|j| soft[j * n + rule]).sum();
    let primary_prob: f64 = (0..n).map(|i| soft[primary * n + i]).sum();

    Ok(PairSelection { rule, primary, rule_mask, primary_mask, rule_prob, primary_prob })
}

/// Outcome of contextual slot selection.
#[derive(Clone, Copy, Debug)]
pub struct CtxSelection {
    pub contextual: usize,
    pub ctx_mask: Var,
    pub prob: f64,
}

/// Select the contextual slot for a primary: the query comes from the
/// primary slot's state, keys from all slots (the primary itself is
/// eligible unless the config excludes it).
pub fn select_contextual(
    tape: &mut Tape,
    slots: Var,
    primary: usize,
    primary_row: Var,
    attn: &AttentionVars,
    cfg: &NpsConfig,
    noise_key: u64,
    decision_salt: u64,
    forced: Option<usize>,
) -> Result<CtxSelection> {
    let m = tape.value(slots).rows();
    let q = tape.matmul(primary_row, attn.w_ctx_query)?;
    let keys = tape.matmul(slots, attn.w_ctx_key)?;
    let keys_t = tape.transpose(keys);
    let mut logits = tape.matmul(q, keys_t)?; // 1 x M
    if cfg.scale_scores {
        logits = tape.scale(logits, 1.0 / (attn.d_key as f64).sqrt());
    }
    if cfg.exclude_primary_context && m > 1 {
        let mut mask = Array::zeros(1, m);
        mask.data_mut()[primary] = -1e30;
        let mask = tape.constant(mask);
        logits = tape.add(logits, mask)?;
    }
    let st = match forced {
        Some(c) => {
            if c >= m {
                return Err(CoreError::Usage {
                    op: "select_contextual",
                    detail: format!("forced contextual {c} out of range ({m} slots)"),
                });
            }
            forced_one_hot(tape, m, c)
        }
        None => {
            let noise: Vec<f64> = match cfg.noise {
                NoiseMode::Zero => vec![0.0; m],
                NoiseMode::Gumbel => (0..m)
                    .map(|j| gumbel_keyed(&[cfg.seed, noise_key, decision_salt, noise_tag::CTX, cfg.slot_id(j)]))
                    .collect(),
            };
            st_argmax_with_noise(tape, logits, cfg.temperature, &noise)?
        }
    };
    let prob = tape.value(st.soft).data()[st.index];
    let ctx_mask = match cfg.selection {
        SelectionMode::StraightThrough => st.output,
        SelectionMode::SoftMix => st.soft,
    };
    Ok(CtxSelection { contextual: st.index, ctx_mask, prob })
}
