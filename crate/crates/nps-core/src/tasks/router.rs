//! Routing-MLP baseline for the coordinate task: the attention-based
//! selection is replaced by a monolithic MLP with three output heads
//! (primary, contextual, rule), each resolved by the same straight-through
//! Gumbel argmax so both models make hard decisions. The rule MLPs are
//! identical in shape to the selection-driven model's.

use super::coord::{coord_apply, coord_slots, CoordConfig, CoordEval, CoordExample, CoordForward};
use crate::array::Array;
use crate::engine::{st_argmax_with_noise, MlpParams, MlpSpec, MlpVars, SelectionRecord};
use crate::error::{CoreError, Result};
use crate::optim::{ParamId, ParamStore};
use crate::rng::gumbel_keyed;
use crate::tape::{Tape, Var};

const TRUNK_WIDTH: usize = 32;
const TRUNK_LAYERS: usize = 4;
const NOISE_HEAD_PRIMARY: u64 = 101;
const NOISE_HEAD_CTX: u64 = 102;
const NOISE_HEAD_RULE: u64 = 103;

pub struct RouterModel {
    pub store: ParamStore,
    trunk: Vec<(ParamId, ParamId)>,
    head_primary: (ParamId, ParamId),
    head_ctx: (ParamId, ParamId),
    head_rule: (ParamId, ParamId),
    rule_mlps: Vec<MlpParams>,
    pub config: CoordConfig,
    pub seed: u64,
}

impl RouterModel {
    pub fn new(config: CoordConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut trunk = Vec::new();
        let mut in_dim = 8; // both 4-dim slots concatenated
        for layer in 0..TRUNK_LAYERS {
            let w = store.insert_uniform(&format!("router.trunk{layer}.w"), in_dim, TRUNK_WIDTH, in_dim, seed);
            let b = store.insert_zeros(&format!("router.trunk{layer}.b"), 1, TRUNK_WIDTH);
            trunk.push((w, b));
            in_dim = TRUNK_WIDTH;
        }
        let head = |store: &mut ParamStore, name: &str, out: usize| {
            (
                store.insert_uniform(&format!("router.head_{name}.w"), TRUNK_WIDTH, out, TRUNK_WIDTH, seed),
                store.insert_zeros(&format!("router.head_{name}.b"), 1, out),
            )
        };
        let head_primary = head(&mut store, "primary", 2);
        let head_ctx = head(&mut store, "contextual", 2);
        let head_rule = head(&mut store, "rule", config.num_rules);
        let mlp_spec = MlpSpec { input: 4, hidden: config.mlp_hidden, output: 2 };
        let rule_mlps = (0..config.num_rules)
            .map(|i| MlpParams::new(&mut store, &format!("router.rule{i}.mlp"), mlp_spec, seed))
            .collect();
        Ok(RouterModel { store, trunk, head_primary, head_ctx, head_rule, rule_mlps, config, seed })
    }

    /// Parameters in the routing path (trunk plus the three heads).
    pub fn selection_param_count(&self) -> usize {
        let mut ids: Vec<ParamId> = Vec::new();
        for (w, b) in &self.trunk {
            ids.push(*w);
            ids.push(*b);
        }
        for (w, b) in [self.head_primary, self.head_ctx, self.head_rule] {
            ids.push(w);
            ids.push(b);
        }
        ids.iter().map(|id| self.store.value(*id).len()).sum()
    }
}

/// Router forward: trunk and heads pick (primary, contextual, rule); the
/// application path is shared with the selection-driven model.
pub fn coord_forward_router(
    model: &RouterModel,
    tape: &mut Tape,
    store: &ParamStore,
    example: &CoordExample,
    noise_key: u64,
    training: bool,
    forced: Option<(usize, usize, usize)>,
) -> Result<CoordForward> {
    let n = model.config.num_rules;
    let slots = tape.constant(coord_slots(example));
    let flat = tape.reshape(slots, 1, 8)?;
    let mut h = flat;
    for (layer, (w, b)) in model.trunk.iter().enumerate() {
        let wv = tape.param(store, *w);
        let bv = tape.param(store, *b);
        h = tape.affine(h, wv, bv)?;
        if layer + 1 < TRUNK_LAYERS {
            h = tape.relu(h);
        }
    }

    let seed = model.seed;
    let draw = |tag: u64, len: usize| -> Vec<f64> {
        if training {
            (0..len).map(|i| gumbel_keyed(&[seed, noise_key, tag, i as u64])).collect()
        } else {
            vec![0.0; len]
        }
    };
    let select = |tape: &mut Tape, head: (ParamId, ParamId), tag: u64, len: usize, forced_idx: Option<usize>| -> Result<(usize, Var, f64)> {
        let wv = tape.param(store, head.0);
        let bv = tape.param(store, head.1);
        let logits = tape.affine(h, wv, bv)?;
        match forced_idx {
            Some(idx) => {
                let mut one = Array::zeros(1, len);
                one.data_mut()[idx] = 1.0;
                let mask = tape.constant(one);
                Ok((idx, mask, 1.0))
            }
            None => {
                let sel = st_argmax_with_noise(tape, logits, model.config.temperature, &draw(tag, len))?;
                let prob = tape.value(sel.soft).data()[sel.index];
                Ok((sel.index, sel.output, prob))
            }
        }
    };

    let (primary, primary_mask, primary_prob) =
        select(tape, model.head_primary, NOISE_HEAD_PRIMARY, 2, forced.map(|f| f.1))?;
    let (contextual, ctx_mask, ctx_prob) = select(tape, model.head_ctx, NOISE_HEAD_CTX, 2, forced.map(|f| f.2))?;
    let (rule, rule_mask, rule_prob) = select(tape, model.head_rule, NOISE_HEAD_RULE, n, forced.map(|f| f.0))?;

    let mlps: Vec<MlpVars> = model.rule_mlps.iter().map(|m| m.stage(tape, store)).collect();
    let (prediction, loss) = coord_apply(tape, &mlps, slots, rule_mask, primary_mask, ctx_mask, example)?;
    Ok(CoordForward {
        loss,
        prediction,
        record: SelectionRecord {
            step: noise_key,
            stage: 0,
            rule: rule as u32,
            primary: primary as u32,
            contextual: contextual as u32,
            rule_prob,
            primary_prob,
            contextual_prob: ctx_prob,
        },
    })
}

pub fn eval_coord_router(
    model: &RouterModel,
    examples: &[CoordExample],
    threading: crate::exec::Threading,
) -> Result<CoordEval> {
    let results = crate::exec::map_chunks(threading, examples, crate::exec::GRAD_CHUNK, |chunk_idx, chunk| {
        let base = chunk_idx * crate::exec::GRAD_CHUNK;
        let mut out = Vec::with_capacity(chunk.len());
        for (i, ex) in chunk.iter().enumerate() {
            let mut tape = Tape::new();
            let fwd = coord_forward_router(model, &mut tape, &model.store, ex, (base + i) as u64, false, None)?;
            let pred = tape.value(fwd.prediction).clone();
            out.push((tape.value(fwd.loss).data()[0], pred, fwd.record));
        }
        Ok::<_, CoreError>(out)
    });
    super::coord::collect_eval(results, examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::coord::{apply_coord_op, gen_coord_dataset, CoordNpsModel, CoordOp};

    #[test]
    fn router_has_more_selection_parameters() {
        let cfg = CoordConfig::default();
        let nps = CoordNpsModel::new(cfg.clone(), 1).unwrap();
        let router = RouterModel::new(cfg, 1).unwrap();
        assert!(
            router.selection_param_count() >= 4 * nps.selection_param_count(),
            "router {} vs selection-path {}",
            router.selection_param_count(),
            nps.selection_param_count()
        );
    }

    #[test]
    fn forced_selection_with_oracle_mlp_is_exact() {
        let mut model = RouterModel::new(CoordConfig::default(), 2).unwrap();
        for part in ["w1", "b1", "w2", "b2"] {
            let id = model.store.lookup(&format!("router.rule1.mlp.{part}")).unwrap();
            model.store.value_mut(id).data_mut().fill(0.0);
        }
        // Rule 1 computes y-subtraction: out = (x_p, y_p - y_c); exact on
        // non-negative inputs via identity ReLU paths. y_p - y_c needs a
        // signed path: h0 = y_p, h1 = y_c, out1 = h0 - h1.
        let w1_id = model.store.lookup("router.rule1.mlp.w1").unwrap();
        let mut w1 = Array::zeros(4, model.config.mlp_hidden);
        w1.set(1, 0, 1.0); // y_p
        w1.set(3, 1, 1.0); // y_c
        w1.set(0, 2, 1.0); // x_p
        *model.store.value_mut(w1_id) = w1;
        let w2_id = model.store.lookup("router.rule1.mlp.w2").unwrap();
        let mut w2 = Array::zeros(model.config.mlp_hidden, 2);
        w2.set(2, 0, 1.0);
        w2.set(0, 1, 1.0);
        w2.set(1, 1, -1.0);
        *model.store.value_mut(w2_id) = w2;

        let input = [(0.3, 0.9), (0.5, 0.4)];
        let target_primary = apply_coord_op(CoordOp::YSub, input[0], input[1]);
        let example = CoordExample {
            input,
            target: [target_primary, input[1]],
            op: CoordOp::YSub,
            primary: 0,
            contextual: 1,
        };
        assert!(example.check_invariants());
        let mut tape = Tape::new();
        let fwd =
            coord_forward_router(&model, &mut tape, &model.store, &example, 0, false, Some((1, 0, 1))).unwrap();
        assert!(tape.value(fwd.loss).data()[0] < 1e-28);
    }

    #[test]
    fn router_head_distributions_are_valid() {
        let model = RouterModel::new(CoordConfig::default(), 3).unwrap();
        let data = gen_coord_dataset(8, 3, (0.0, 1.0));
        for (i, ex) in data.iter().enumerate() {
            let mut tape = Tape::new();
            let fwd = coord_forward_router(&model, &mut tape, &model.store, ex, i as u64, true, None).unwrap();
            for p in [fwd.record.rule_prob, fwd.record.primary_prob, fwd.record.contextual_prob] {
                assert!(p > 0.0 && p <= 1.0);
            }
            assert!(tape.value(fwd.loss).data()[0].is_finite());
        }
    }
}
