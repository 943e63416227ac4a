//! The production-system core: rule sets, slot states, straight-through
//! Gumbel selection of rules and slots, and the sequential / parallel rule
//! application procedures.
//!
//! A rule is a learned embedding (its condition template) plus an MLP (its
//! action). Each application binds a rule to a primary slot (the one whose
//! state changes) and one contextual slot (the only other slot it reads);
//! the MLP output is added residually to the primary slot.

mod select;
mod step;
mod trace;

pub use select::{
    gumbel_st_argmax, select_contextual, select_rule_primary_sequential, st_argmax_with_noise, CtxSelection,
    PairSelection, StArgmax,
};
pub use step::{apply_rule, apply_rule_masked, forced_from_trace, parallel_step, sequential_step, update_probability};
pub use trace::{GateRecord, SelectionRecord, SelectionTrace};

use crate::array::Array;
use crate::error::{CoreError, Result};
use crate::optim::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Which application regime a step uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// One (rule, primary slot) pair per stage, K stages per step.
    Sequential,
    /// Every slot passes a null-rule gate; the selected set updates at once.
    Parallel,
}

/// Noise source for the selection argmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    /// Gumbel(0,1) perturbation keyed by (seed, step key, stage, identity).
    Gumbel,
    /// No perturbation; deterministic argmax (test hook and greedy eval).
    Zero,
}

/// What the selection masks carry downstream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionMode {
    /// Hard one-hot forward with the softmax surrogate on the backward path.
    /// The only mode used for training and evaluation.
    StraightThrough,
    /// The soft surrogate itself flows forward, making the whole step a
    /// smooth function. Verification hook for finite-difference checks of
    /// the full graph; never used for training.
    SoftMix,
}

/// Hyperparameters of the selection/application procedure.
#[derive(Clone, Debug)]
pub struct NpsConfig {
    pub variant: Variant,
    /// Rule application stages per step (sequential only; parallel performs
    /// exactly one).
    pub stages: usize,
    /// Gumbel softmax temperature for the backward surrogate.
    pub temperature: f64,
    /// Dropout on the flattened (rule, primary) selection scores, training
    /// only.
    pub selection_dropout_p: f64,
    /// Divide attention logits by sqrt(key size).
    pub scale_scores: bool,
    pub seed: u64,
    pub noise: NoiseMode,
    pub selection: SelectionMode,
    /// Exclude the primary slot from contextual attention. Off by default:
    /// contextual attention ranges over all slots.
    pub exclude_primary_context: bool,
    /// Identities used to key per-slot noise; defaults to slot indices.
    /// Permuting these together with slot rows permutes the noise with them.
    pub slot_ids: Option<Vec<u64>>,
    /// Identities used to key per-rule noise; defaults to rule indices.
    pub rule_ids: Option<Vec<u64>>,
}

impl NpsConfig {
    pub fn sequential(stages: usize, seed: u64) -> Self {
        NpsConfig {
            variant: Variant::Sequential,
            stages,
            temperature: 1.0,
            selection_dropout_p: 0.0,
            scale_scores: true,
            seed,
            noise: NoiseMode::Gumbel,
            selection: SelectionMode::StraightThrough,
            exclude_primary_context: false,
            slot_ids: None,
            rule_ids: None,
        }
    }

    pub fn parallel(seed: u64) -> Self {
        NpsConfig { variant: Variant::Parallel, stages: 1, ..Self::sequential(1, seed) }
    }

    pub fn with_noise(mut self, noise: NoiseMode) -> Self {
        self.noise = noise;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(CoreError::Config("stages must be >= 1".into()));
        }
        if self.temperature <= 0.0 {
            return Err(CoreError::Config(format!("temperature {} must be > 0", self.temperature)));
        }
        if !(0.0..1.0).contains(&self.selection_dropout_p) {
            return Err(CoreError::Config(format!("selection_dropout_p {} outside [0, 1)", self.selection_dropout_p)));
        }
        Ok(())
    }

    pub(crate) fn slot_id(&self, j: usize) -> u64 {
        match &self.slot_ids {
            Some(ids) => ids[j],
            None => j as u64,
        }
    }

    pub(crate) fn rule_id(&self, i: usize) -> u64 {
        match &self.rule_ids {
            Some(ids) => ids[i],
            None => i as u64,
        }
    }
}

/// Shape of every rule's action MLP: one hidden layer with ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl MlpSpec {
    /// Default action MLP for slot dimension `d_slot`: takes the
    /// concatenated (primary, contextual) pair, hidden width 128, outputs a
    /// residual of slot size.
    pub fn rule_default(d_slot: usize) -> Self {
        MlpSpec { input: 2 * d_slot, hidden: 128, output: d_slot }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MlpParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl MlpParams {
    pub fn new(store: &mut ParamStore, prefix: &str, spec: MlpSpec, seed: u64) -> Self {
        MlpParams {
            w1: store.insert_uniform(&format!("{prefix}.w1"), spec.input, spec.hidden, spec.input, seed),
            b1: store.insert_zeros(&format!("{prefix}.b1"), 1, spec.hidden),
            w2: store.insert_uniform(&format!("{prefix}.w2"), spec.hidden, spec.output, spec.hidden, seed),
            b2: store.insert_zeros(&format!("{prefix}.b2"), 1, spec.output),
        }
    }

    pub fn stage(&self, tape: &mut Tape, store: &ParamStore) -> MlpVars {
        MlpVars {
            w1: tape.param(store, self.w1),
            b1: tape.param(store, self.b1),
            w2: tape.param(store, self.w2),
            b2: tape.param(store, self.b2),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// hidden = relu(x W1 + b1); out = hidden W2 + b2.
pub fn mlp_forward(tape: &mut Tape, x: Var, mlp: &MlpVars) -> Result<Var> {
    let h = tape.affine(x, mlp.w1, mlp.b1)?;
    let h = tape.relu(h);
    tape.affine(h, mlp.w2, mlp.b2)
}

/// N rule embeddings, one action MLP per rule, and (for the parallel
/// variant) a null-rule embedding plus the pooling matrix that builds the
/// shared gate query from all rule embeddings.
#[derive(Clone, Debug)]
pub struct RuleSet {
    pub n: usize,
    pub d_rule: usize,
    pub mlp_spec: MlpSpec,
    pub embeddings: ParamId,
    pub mlps: Vec<MlpParams>,
    pub null_embedding: Option<ParamId>,
    pub pool: Option<ParamId>,
}

impl RuleSet {
    pub fn new(store: &mut ParamStore, prefix: &str, n: usize, d_rule: usize, mlp_spec: MlpSpec, seed: u64) -> Self {
        assert!(n >= 1, "at least one rule");
        let embeddings = store.insert_uniform(&format!("{prefix}.rule_embeddings"), n, d_rule, d_rule, seed);
        let mlps = (0..n)
            .map(|i| MlpParams::new(store, &format!("{prefix}.rule{i}.mlp"), mlp_spec, seed))
            .collect();
        RuleSet { n, d_rule, mlp_spec, embeddings, mlps, null_embedding: None, pool: None }
    }

    /// Add the parallel-variant extras: a null-rule embedding (no MLP) and
    /// the pooling matrix mapping concatenated rule embeddings to one query.
    pub fn with_null(mut self, store: &mut ParamStore, prefix: &str, seed: u64) -> Self {
        self.null_embedding = Some(store.insert_uniform(&format!("{prefix}.null_embedding"), 1, self.d_rule, self.d_rule, seed));
        self.pool = Some(store.insert_uniform(
            &format!("{prefix}.rule_pool"),
            self.n * self.d_rule,
            self.d_rule,
            self.n * self.d_rule,
            seed,
        ));
        self
    }

    pub fn stage(&self, tape: &mut Tape, store: &ParamStore) -> RuleSetVars {
        RuleSetVars {
            n: self.n,
            d_rule: self.d_rule,
            embeddings: tape.param(store, self.embeddings),
            mlps: self.mlps.iter().map(|m| m.stage(tape, store)).collect(),
            null_embedding: self.null_embedding.map(|id| tape.param(store, id)),
            pool: self.pool.map(|id| tape.param(store, id)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RuleSetVars {
    pub n: usize,
    pub d_rule: usize,
    pub embeddings: Var,
    pub mlps: Vec<MlpVars>,
    pub null_embedding: Option<Var>,
    pub pool: Option<Var>,
}

/// Projections for the two attention mechanisms: rule matching (queries from
/// slots, keys are the rule embeddings themselves) and contextual-slot
/// attention, plus the gate key projection used by the parallel variant.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub d_key: usize,
    /// d_slot x d_rule; rule-matching queries. Keys are rule embeddings, so
    /// the query size must equal the rule embedding size.
    pub w_query: ParamId,
    /// d_slot x d_key contextual query projection.
    pub w_ctx_query: ParamId,
    /// d_slot x d_key contextual key projection.
    pub w_ctx_key: ParamId,
    /// d_slot x d_rule gate key projection (parallel variant only).
    pub w_gate_key: Option<ParamId>,
}

impl AttentionParams {
    pub const DEFAULT_KEY_SIZE: usize = 32;

    pub fn new(store: &mut ParamStore, prefix: &str, d_slot: usize, d_rule: usize, d_key: usize, seed: u64) -> Self {
        AttentionParams {
            d_key,
            w_query: store.insert_uniform(&format!("{prefix}.w_query"), d_slot, d_rule, d_slot, seed),
            w_ctx_query: store.insert_uniform(&format!("{prefix}.w_ctx_query"), d_slot, d_key, d_slot, seed),
            w_ctx_key: store.insert_uniform(&format!("{prefix}.w_ctx_key"), d_slot, d_key, d_slot, seed),
            w_gate_key: None,
        }
    }

    pub fn with_gate(mut self, store: &mut ParamStore, prefix: &str, d_slot: usize, d_rule: usize, seed: u64) -> Self {
        self.w_gate_key = Some(store.insert_uniform(&format!("{prefix}.w_gate_key"), d_slot, d_rule, d_slot, seed));
        self
    }

    pub fn stage(&self, tape: &mut Tape, store: &ParamStore) -> AttentionVars {
        AttentionVars {
            d_key: self.d_key,
            w_query: tape.param(store, self.w_query),
            w_ctx_query: tape.param(store, self.w_ctx_query),
            w_ctx_key: tape.param(store, self.w_ctx_key),
            w_gate_key: self.w_gate_key.map(|id| tape.param(store, id)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub d_key: usize,
    pub w_query: Var,
    pub w_ctx_query: Var,
    pub w_ctx_key: Var,
    pub w_gate_key: Option<Var>,
}

/// M entity states, one row per slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotState {
    values: Array,
}

impl SlotState {
    pub fn new(values: Array) -> Result<Self> {
        if values.rows() == 0 {
            return Err(CoreError::Config("slot state needs at least one slot".into()));
        }
        Ok(SlotState { values })
    }

    pub fn num_slots(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Array {
        &self.values
    }

    pub fn into_values(self) -> Array {
        self.values
    }

    /// Stage as a constant (no gradient into the slot values).
    pub fn stage_input(&self, tape: &mut Tape) -> Var {
        tape.constant(self.values.clone())
    }

    /// Stage as a differentiable leaf.
    pub fn stage_leaf(&self, tape: &mut Tape) -> Var {
        tape.leaf(self.values.clone())
    }
}

/// A forced (rule, primary, contextual) choice for one stage; used by
/// trace replay and tests that pin the selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForcedChoice {
    pub rule: usize,
    pub primary: usize,
    pub contextual: usize,
}

/// Noise tags keep the Gumbel draws of distinct decisions independent.
pub(crate) mod noise_tag {
    pub const PAIR: u64 = 1;
    pub const CTX: u64 = 2;
    pub const GATE_RULE: u64 = 3;
    pub const GATE_NULL: u64 = 4;
    pub const RULE_FOR_PRIMARY: u64 = 5;
    pub const DROPOUT: u64 = 6;
}
