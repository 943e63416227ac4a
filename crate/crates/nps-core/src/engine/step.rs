//! Rule application: residual slot updates, the K-stage sequential
//! procedure, and the gated parallel procedure.

use super::select::{select_contextual, select_rule_primary_sequential, st_argmax_with_noise};
use super::trace::{GateRecord, SelectionRecord, SelectionTrace};
use super::{mlp_forward, noise_tag, AttentionVars, ForcedChoice, NoiseMode, NpsConfig, RuleSetVars, SelectionMode, Variant};
use crate::array::Array;
use crate::error::{CoreError, Result};
use crate::rng::gumbel_keyed;
use crate::tape::{Tape, Var};

/// Apply rule masks to slots: the selected rule's MLP reads the
/// concatenated (primary, contextual) states and its output is added to the
/// primary row only. Masks are one-hot rows (straight-through or constant).
pub fn apply_rule_masked(
    tape: &mut Tape,
    slots: Var,
    rules: &RuleSetVars,
    rule_mask: Var,
    primary_mask: Var,
    ctx_mask: Var,
) -> Result<Var> {
    let d = tape.value(slots).cols();
    if tape.value(rules.mlps[0].b2).cols() != d {
        return Err(CoreError::Config(format!(
            "rule MLP output size {} must equal slot size {d} for residual application",
            tape.value(rules.mlps[0].b2).cols()
        )));
    }
    let v_p = tape.matmul(primary_mask, slots)?;
    let v_c = tape.matmul(ctx_mask, slots)?;
    let pair = tape.concat(v_p, v_c, 1)?;
    // Every rule's MLP runs on the selected pair; the one-hot rule mask
    // picks the winner while letting gradient reach the surrogate.
    let mut outs: Option<Var> = None;
    for mlp in &rules.mlps {
        let out = mlp_forward(tape, pair, mlp)?;
        outs = Some(match outs {
            None => out,
            Some(acc) => tape.concat(acc, out, 0)?,
        });
    }
    let outs = outs.expect("rule set is never empty");
    let residual = tape.matmul(rule_mask, outs)?;
    let primary_col = tape.transpose(primary_mask);
    let update = tape.matmul(primary_col, residual)?;
    tape.add(slots, update)
}

/// Apply rule `r` to primary slot `p` with contextual slot `c` using plain
/// indices. Selecting the null rule is a skip, not an application, so `r`
/// must name a real rule.
pub fn apply_rule(tape: &mut Tape, slots: Var, r: usize, p: usize, c: usize, rules: &RuleSetVars) -> Result<Var> {
    let m = tape.value(slots).rows();
    if r >= rules.n {
        return Err(CoreError::Usage {
            op: "apply_rule",
            detail: format!("rule index {r} out of range ({} rules); the null rule has no action to apply", rules.n),
        });
    }
    if p >= m || c >= m {
        return Err(CoreError::Usage { op: "apply_rule", detail: format!("slot index out of range ({m} slots)") });
    }
    let one_hot = |tape: &mut Tape, len: usize, idx: usize| {
        let mut a = Array::zeros(1, len);
        a.data_mut()[idx] = 1.0;
        tape.constant(a)
    };
    let rule_mask = one_hot(tape, rules.n, r);
    let primary_mask = one_hot(tape, m, p);
    let ctx_mask = one_hot(tape, m, c);
    apply_rule_masked(tape, slots, rules, rule_mask, primary_mask, ctx_mask)
}

/// K stages of {select pair, select contextual, apply}; exactly one slot row
/// changes per stage. Appends one record per stage to `trace`.
#[allow(clippy::too_many_arguments)]
pub fn sequential_step(
    tape: &mut Tape,
    slots: Var,
    rules: &RuleSetVars,
    attn: &AttentionVars,
    cfg: &NpsConfig,
    noise_key: u64,
    step_index: u64,
    training: bool,
    trace: &mut SelectionTrace,
    forced: Option<&[ForcedChoice]>,
) -> Result<Var> {
    cfg.validate()?;
    if cfg.variant != Variant::Sequential {
        return Err(CoreError::Config("sequential_step requires the sequential variant".into()));
    }
    if let Some(f) = forced {
        if f.len() != cfg.stages {
            return Err(CoreError::Usage {
                op: "sequential_step",
                detail: format!("{} forced choices for {} stages", f.len(), cfg.stages),
            });
        }
    }
    let mut current = slots;
    for h in 0..cfg.stages {
        let fc = forced.map(|f| f[h]);
        let pair = select_rule_primary_sequential(
            tape,
            current,
            rules,
            attn,
            cfg,
            noise_key,
            h as u64,
            training,
            fc.map(|f| (f.rule, f.primary)),
        )?;
        let primary_row = tape.matmul(pair.primary_mask, current)?;
        let ctx = select_contextual(
            tape,
            current,
            pair.primary,
            primary_row,
            attn,
            cfg,
            noise_key,
            h as u64,
            fc.map(|f| f.contextual),
        )?;
        current = apply_rule_masked(tape, current, rules, pair.rule_mask, pair.primary_mask, ctx.ctx_mask)?;
        trace.records.push(SelectionRecord {
            step: step_index,
            stage: h as u32,
            rule: pair.rule as u32,
            primary: pair.primary as u32,
            contextual: ctx.contextual as u32,
            rule_prob: pair.rule_prob,
            primary_prob: pair.primary_prob,
            contextual_prob: ctx.prob,
        });
    }
    Ok(current)
}

/// One parallel step: every slot races its pooled-rule score against the
/// null rule (independent Gumbel noise on each side); the winners each pick
/// a rule and a contextual slot, and all residual updates are computed from
/// the pre-step state and committed simultaneously.
#[allow(clippy::too_many_arguments)]
pub fn parallel_step(
    tape: &mut Tape,
    slots: Var,
    rules: &RuleSetVars,
    attn: &AttentionVars,
    cfg: &NpsConfig,
    noise_key: u64,
    step_index: u64,
    trace: &mut SelectionTrace,
) -> Result<Var> {
    cfg.validate()?;
    if cfg.variant != Variant::Parallel {
        return Err(CoreError::Config("parallel_step requires the parallel variant".into()));
    }
    let null_emb = rules
        .null_embedding
        .ok_or_else(|| CoreError::Config("parallel step requires a null-rule embedding".into()))?;
    let pool = rules.pool.ok_or_else(|| CoreError::Config("parallel step requires the rule pooling matrix".into()))?;
    let gate_key_w = attn
        .w_gate_key
        .ok_or_else(|| CoreError::Config("parallel step requires the gate key projection".into()))?;

    let m = tape.value(slots).rows();
    let d = tape.value(slots).cols();
    let scale = if cfg.scale_scores { 1.0 / (rules.d_rule as f64).sqrt() } else { 1.0 };

    // Pooled query from all rule embeddings, raced against the null rule.
    let emb_flat = tape.reshape(rules.embeddings, 1, rules.n * rules.d_rule)?;
    let pooled = tape.matmul(emb_flat, pool)?; // 1 x d_rule
    let gate_keys = tape.matmul(slots, gate_key_w)?; // M x d_rule
    let pooled_t = tape.transpose(pooled);
    let null_t = tape.transpose(null_emb);
    let mut score_rule = tape.matmul(gate_keys, pooled_t)?; // M x 1
    let mut score_null = tape.matmul(gate_keys, null_t)?; // M x 1
    score_rule = tape.scale(score_rule, scale);
    score_null = tape.scale(score_null, scale);

    let mut updates: Vec<Var> = Vec::new();
    for p in 0..m {
        let (g_rule, g_null) = match cfg.noise {
            NoiseMode::Zero => (0.0, 0.0),
            NoiseMode::Gumbel => (
                gumbel_keyed(&[cfg.seed, noise_key, noise_tag::GATE_RULE, cfg.slot_id(p)]),
                gumbel_keyed(&[cfg.seed, noise_key, noise_tag::GATE_NULL, cfg.slot_id(p)]),
            ),
        };
        let s_rule = tape.slice_rows(score_rule, p, p + 1)?;
        let s_null = tape.slice_rows(score_null, p, p + 1)?;
        let two = tape.concat(s_rule, s_null, 1)?; // 1 x 2
        let gate = st_argmax_with_noise(tape, two, cfg.temperature, &[g_rule, g_null])?;
        let include_prob = tape.value(gate.soft).data()[0];
        let included = gate.index == 0;
        trace.gates.push(GateRecord { step: step_index, slot: p as u32, included, include_prob });
        if !included {
            continue;
        }
        // Rule selection for this primary (over the real rules only).
        let v_p = tape.gather_rows(slots, &[p as u32])?;
        let q_p = tape.matmul(v_p, attn.w_query)?;
        let keys_t = tape.transpose(rules.embeddings);
        let mut logits = tape.matmul(q_p, keys_t)?; // 1 x N
        logits = tape.scale(logits, scale);
        let rule_noise: Vec<f64> = match cfg.noise {
            NoiseMode::Zero => vec![0.0; rules.n],
            NoiseMode::Gumbel => (0..rules.n)
                .map(|i| {
                    gumbel_keyed(&[cfg.seed, noise_key, noise_tag::RULE_FOR_PRIMARY, cfg.rule_id(i), cfg.slot_id(p)])
                })
                .collect(),
        };
        let rule_sel = st_argmax_with_noise(tape, logits, cfg.temperature, &rule_noise)?;
        let rule_prob = tape.value(rule_sel.soft).data()[rule_sel.index];
        let rule_mask = match cfg.selection {
            SelectionMode::StraightThrough => rule_sel.output,
            SelectionMode::SoftMix => rule_sel.soft,
        };

        let ctx = select_contextual(tape, slots, p, v_p, attn, cfg, noise_key, cfg.slot_id(p), None)?;

        let v_c = tape.matmul(ctx.ctx_mask, slots)?;
        let pair = tape.concat(v_p, v_c, 1)?;
        let mut outs: Option<Var> = None;
        for mlp in &rules.mlps {
            let out = mlp_forward(tape, pair, mlp)?;
            outs = Some(match outs {
                None => out,
                Some(acc) => tape.concat(acc, out, 0)?,
            });
        }
        let residual = tape.matmul(rule_mask, outs.expect("non-empty rules"))?;
        if tape.value(residual).cols() != d {
            return Err(CoreError::Config(format!(
                "rule MLP output size {} must equal slot size {d}",
                tape.value(residual).cols()
            )));
        }
        // Scale by the gate's straight-through scalar (1 in the forward
        // pass) so the gate parameters receive gradient.
        let gate_var = match cfg.selection {
            SelectionMode::StraightThrough => gate.output,
            SelectionMode::SoftMix => gate.soft,
        };
        let gate_on = tape.slice_cols(gate_var, 0, 1)?;
        let gated = tape.matmul(gate_on, residual)?;
        let mut e_p = Array::zeros(m, 1);
        e_p.set(p, 0, 1.0);
        let e_p = tape.constant(e_p);
        updates.push(tape.matmul(e_p, gated)?);

        trace.records.push(SelectionRecord {
            step: step_index,
            stage: 0,
            rule: rule_sel.index as u32,
            primary: p as u32,
            contextual: ctx.contextual as u32,
            rule_prob,
            primary_prob: include_prob,
            contextual_prob: ctx.prob,
        });
    }

    // All updates read the pre-step state; commit them together.
    let mut out = slots;
    for u in updates {
        out = tape.add(out, u)?;
    }
    Ok(out)
}

/// Analytic per-step probability that a given slot's state changes under
/// uniformly random selection.
///
/// Sequential: one of M slots updates per stage, so 1/M. Parallel: with
/// `n_rules` counting the null rule among the N available, (N-1)/N. Note
/// that the parallel gate is a two-way race, so its per-slot update
/// probability under symmetric scores is 1/2, which coincides with the
/// formula exactly when the rule set holds one real rule plus the null. For
/// the convention that counts only real rules R, the same value reads
/// R/(R+1).
pub fn update_probability(variant: Variant, n_rules: usize, m_slots: usize) -> f64 {
    match variant {
        Variant::Sequential => 1.0 / m_slots as f64,
        Variant::Parallel => (n_rules as f64 - 1.0) / n_rules as f64,
    }
}

/// Replay helper: the forced choices recorded in a trace for one step.
pub fn forced_from_trace(trace: &SelectionTrace, step: u64) -> Vec<ForcedChoice> {
    let mut stages: Vec<(u32, ForcedChoice)> = trace
        .records
        .iter()
        .filter(|r| r.step == step)
        .map(|r| {
            (r.stage, ForcedChoice { rule: r.rule as usize, primary: r.primary as usize, contextual: r.contextual as usize })
        })
        .collect();
    stages.sort_by_key(|(s, _)| *s);
    stages.into_iter().map(|(_, f)| f).collect()
}
