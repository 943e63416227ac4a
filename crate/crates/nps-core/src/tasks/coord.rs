//! Coordinate arithmetic: two 2-D points, one of four operations applied to
//! a randomly chosen primary coordinate with a randomly chosen contextual
//! coordinate as the second argument. The model sees input and expected
//! output concatenated per slot, selects (rule, primary, contextual), and
//! the selected rule's MLP predicts the primary's new value from the raw
//! input coordinates alone.

use crate::array::Array;
use crate::engine::{
    mlp_forward, select_contextual, select_rule_primary_sequential, AttentionParams, MlpSpec, MlpVars, NoiseMode,
    NpsConfig, RuleSet, SelectionRecord,
};
use crate::error::{CoreError, Result};
use crate::optim::ParamStore;
use crate::rng::Mix64;
use crate::tape::{Tape, Var};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoordOp {
    XAdd,
    XSub,
    YAdd,
    YSub,
}

pub const COORD_OPS: [CoordOp; 4] = [CoordOp::XAdd, CoordOp::XSub, CoordOp::YAdd, CoordOp::YSub];
pub const COORD_OP_NAMES: [&str; 4] = ["x_add", "x_sub", "y_add", "y_sub"];

impl CoordOp {
    pub fn index(self) -> usize {
        COORD_OPS.iter().position(|o| *o == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        COORD_OP_NAMES[self.index()]
    }

    pub fn from_name(name: &str) -> Result<Self> {
        COORD_OP_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| COORD_OPS[i])
            .ok_or_else(|| CoreError::Usage { op: "coord_op", detail: format!("unknown op {name}") })
    }
}

/// The four ground-truth operations; the oracle every generated example and
/// prediction is checked against.
pub fn apply_coord_op(op: CoordOp, primary: (f64, f64), contextual: (f64, f64)) -> (f64, f64) {
    match op {
        CoordOp::XAdd => (primary.0 + contextual.0, primary.1),
        CoordOp::XSub => (primary.0 - contextual.0, primary.1),
        CoordOp::YAdd => (primary.0, primary.1 + contextual.1),
        CoordOp::YSub => (primary.0, primary.1 - contextual.1),
    }
}

/// One labeled example: exactly one target coordinate differs from its
/// input counterpart (the primary); the other is bit-identical.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordExample {
    pub input: [(f64, f64); 2],
    pub target: [(f64, f64); 2],
    pub op: CoordOp,
    pub primary: usize,
    pub contextual: usize,
}

impl CoordExample {
    pub fn check_invariants(&self) -> bool {
        let expect = apply_coord_op(self.op, self.input[self.primary], self.input[self.contextual]);
        let other = 1 - self.primary;
        self.target[self.primary] == expect && self.target[other] == self.input[other]
    }
}

/// Coordinates i.i.d. uniform in `range`; op, primary, and contextual each
/// uniform (the contextual may equal the primary). Deterministic per seed.
pub fn gen_coord_dataset(n: usize, seed: u64, range: (f64, f64)) -> Vec<CoordExample> {
    let mut rng = Mix64::from_parts(&[seed, 0xC003D]);
    (0..n)
        .map(|_| {
            let input = [
                (rng.next_range(range.0, range.1), rng.next_range(range.0, range.1)),
                (rng.next_range(range.0, range.1), rng.next_range(range.0, range.1)),
            ];
            let op = COORD_OPS[rng.next_below(4)];
            let primary = rng.next_below(2);
            let contextual = rng.next_below(2);
            let mut target = input;
            target[primary] = apply_coord_op(op, input[primary], input[contextual]);
            CoordExample { input, target, op, primary, contextual }
        })
        .collect()
}

/// `x0,y0,x1,y1,tx0,ty0,tx1,ty1,op,primary,contextual` per line.
pub fn write_coord_csv(path: &Path, examples: &[CoordExample]) -> Result<()> {
    let mut out = String::from("x0,y0,x1,y1,tx0,ty0,tx1,ty1,op,primary,contextual\n");
    for e in examples {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            e.input[0].0,
            e.input[0].1,
            e.input[1].0,
            e.input[1].1,
            e.target[0].0,
            e.target[0].1,
            e.target[1].0,
            e.target[1].1,
            e.op.name(),
            e.primary,
            e.contextual
        ));
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn read_coord_csv(path: &Path) -> Result<Vec<CoordExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let bad = |detail: String| CoreError::Format { path: path.display().to_string(), detail };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(bad(format!("expected 11 fields: {line}")));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("bad float: {line}")));
        out.push(CoordExample {
            input: [(num(f[0])?, num(f[1])?), (num(f[2])?, num(f[3])?)],
            target: [(num(f[4])?, num(f[5])?), (num(f[6])?, num(f[7])?)],
            op: CoordOp::from_name(f[8].trim())?,
            primary: f[9].trim().parse().map_err(|_| bad(format!("bad primary: {line}")))?,
            contextual: f[10].trim().parse().map_err(|_| bad(format!("bad contextual: {line}")))?,
        });
    }
    Ok(out)
}

/// Task hyperparameters, defaulted to the reference schedule.
#[derive(Clone, Debug)]
pub struct CoordConfig {
    pub num_rules: usize,
    pub rule_dim: usize,
    pub mlp_hidden: usize,
    pub selection_dropout_p: f64,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub coord_range: (f64, f64),
    pub temperature: f64,
    pub key_dim: usize,
}

impl Default for CoordConfig {
    fn default() -> Self {
        CoordConfig {
            num_rules: 4,
            rule_dim: 12,
            mlp_hidden: 16,
            selection_dropout_p: 0.35,
            epochs: 300,
            batch: 64,
            learning_rate: 1e-4,
            train_size: 10_000,
            test_size: 2_000,
            coord_range: (0.0, 1.0),
            temperature: 1.0,
            key_dim: AttentionParams::DEFAULT_KEY_SIZE,
        }
    }
}

impl CoordConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_rules", self.num_rules),
            ("rule_dim", self.rule_dim),
            ("mlp_hidden", self.mlp_hidden),
            ("epochs", self.epochs),
            ("batch", self.batch),
            ("train_size", self.train_size),
            ("test_size", self.test_size),
            ("key_dim", self.key_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CoreError::Config(format!("coord config: {name} must be positive")));
            }
        }
        if self.learning_rate <= 0.0 || self.temperature <= 0.0 {
            return Err(CoreError::Config("coord config: learning_rate and temperature must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.selection_dropout_p) {
            return Err(CoreError::Config("coord config: selection_dropout_p outside [0, 1)".into()));
        }
        Ok(())
    }
}

const SLOT_DIM: usize = 4;

/// Selection-driven model: slots are (input ++ expected output) per
/// coordinate, rule MLPs read only the input halves.
pub struct CoordNpsModel {
    pub store: ParamStore,
    pub rules: RuleSet,
    pub attn: AttentionParams,
    pub config: CoordConfig,
    pub seed: u64,
}

impl CoordNpsModel {
    pub fn new(config: CoordConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mlp_spec = MlpSpec { input: 4, hidden: config.mlp_hidden, output: 2 };
        let rules = RuleSet::new(&mut store, "coord", config.num_rules, config.rule_dim, mlp_spec, seed);
        let attn = AttentionParams::new(&mut store, "coord", SLOT_DIM, config.rule_dim, config.key_dim, seed);
        Ok(CoordNpsModel { store, rules, attn, config, seed })
    }

    pub fn engine_config(&self, training: bool) -> NpsConfig {
        let mut cfg = NpsConfig::sequential(1, self.seed);
        cfg.temperature = self.config.temperature;
        cfg.selection_dropout_p = self.config.selection_dropout_p;
        if !training {
            cfg.noise = NoiseMode::Zero; // greedy evaluation
        }
        cfg
    }

    /// Parameters in the selection path (projections + rule embeddings).
    pub fn selection_param_count(&self) -> usize {
        [self.rules.embeddings, self.attn.w_query, self.attn.w_ctx_query, self.attn.w_ctx_key]
            .iter()
            .map(|id| self.store.value(*id).len())
            .sum()
    }
}

/// Slot matrix for one example: row j is (x_j, y_j, tx_j, ty_j).
pub fn coord_slots(example: &CoordExample) -> Array {
    Array::matrix(
        2,
        SLOT_DIM,
        vec![
            example.input[0].0,
            example.input[0].1,
            example.target[0].0,
            example.target[0].1,
            example.input[1].0,
            example.input[1].1,
            example.target[1].0,
            example.target[1].1,
        ],
    )
}

/// Forward output for one example.
pub struct CoordForward {
    pub loss: Var,
    /// Predicted coordinate pair (2 x 2): non-primary rows copy their input.
    pub prediction: Var,
    pub record: SelectionRecord,
}

/// Shared application path: given one-hot (or soft) masks, predict the
/// primary coordinate with the selected rule MLP over raw input coordinates
/// and copy the non-primary row through.
pub(crate) fn coord_apply(
    tape: &mut Tape,
    rule_mlps: &[MlpVars],
    slots: Var,
    rule_mask: Var,
    primary_mask: Var,
    ctx_mask: Var,
    example: &CoordExample,
) -> Result<(Var, Var)> {
    let v_p = tape.matmul(primary_mask, slots)?;
    let v_c = tape.matmul(ctx_mask, slots)?;
    let in_p = tape.slice_cols(v_p, 0, 2)?;
    let in_c = tape.slice_cols(v_c, 0, 2)?;
    let mlp_in = tape.concat(in_p, in_c, 1)?;
    let mut outs: Option<Var> = None;
    for mlp in rule_mlps {
        let out = mlp_forward(tape, mlp_in, mlp)?;
        outs = Some(match outs {
            None => out,
            Some(acc) => tape.concat(acc, out, 0)?,
        });
    }
    let pred_primary = tape.matmul(rule_mask, outs.expect("non-empty rules"))?;

    // prediction = inputs + primary_mask^T (pred_primary - in_p): the
    // non-primary row is copied bit-exactly.
    let inputs = tape.constant(Array::matrix(
        2,
        2,
        vec![example.input[0].0, example.input[0].1, example.input[1].0, example.input[1].1],
    ));
    let diff = tape.sub(pred_primary, in_p)?;
    let col = tape.transpose(primary_mask);
    let update = tape.matmul(col, diff)?;
    let prediction = tape.add(inputs, update)?;

    let target = tape.constant(Array::matrix(
        2,
        2,
        vec![example.target[0].0, example.target[0].1, example.target[1].0, example.target[1].1],
    ));
    let loss = tape.mse(prediction, target)?;
    Ok((prediction, loss))
}

/// Run one example through selection and rule application. `forced` pins
/// (rule, primary, contextual) for oracle-substitution tests and replay.
pub fn coord_forward_nps(
    model: &CoordNpsModel,
    tape: &mut Tape,
    store: &ParamStore,
    example: &CoordExample,
    noise_key: u64,
    training: bool,
    forced: Option<(usize, usize, usize)>,
) -> Result<CoordForward> {
    let cfg = model.engine_config(training);
    let rules_vars = model.rules.stage(tape, store);
    let attn_vars = model.attn.stage(tape, store);
    let slots = tape.constant(coord_slots(example));

    let pair = select_rule_primary_sequential(
        tape,
        slots,
        &rules_vars,
        &attn_vars,
        &cfg,
        noise_key,
        0,
        training,
        forced.map(|(r, p, _)| (r, p)),
    )?;
    let primary_row = tape.matmul(pair.primary_mask, slots)?;
    let ctx = select_contextual(
        tape,
        slots,
        pair.primary,
        primary_row,
        &attn_vars,
        &cfg,
        noise_key,
        0,
        forced.map(|(_, _, c)| c),
    )?;
    let (prediction, loss) =
        coord_apply(tape, &rules_vars.mlps, slots, pair.rule_mask, pair.primary_mask, ctx.ctx_mask, example)?;

    Ok(CoordForward {
        loss,
        prediction,
        record: SelectionRecord {
            step: noise_key,
            stage: 0,
            rule: pair.rule as u32,
            primary: pair.primary as u32,
            contextual: ctx.contextual as u32,
            rule_prob: pair.rule_prob,
            primary_prob: pair.primary_prob,
            contextual_prob: ctx.prob,
        },
    })
}

/// Mean squared error over the test set (both coordinates), with greedy
/// (noise-free) selection, plus per-example selections and the MSE
/// restricted to the primary coordinate.
pub struct CoordEval {
    pub mse: f64,
    pub mse_primary: f64,
    pub records: Vec<SelectionRecord>,
}

pub fn eval_coord_nps(model: &CoordNpsModel, examples: &[CoordExample], threading: crate::exec::Threading) -> Result<CoordEval> {
    let results = crate::exec::map_chunks(threading, examples, crate::exec::GRAD_CHUNK, |chunk_idx, chunk| {
        let base = chunk_idx * crate::exec::GRAD_CHUNK;
        let mut out = Vec::with_capacity(chunk.len());
        for (i, ex) in chunk.iter().enumerate() {
            let mut tape = Tape::new();
            let fwd = coord_forward_nps(model, &mut tape, &model.store, ex, (base + i) as u64, false, None)?;
            let pred = tape.value(fwd.prediction).clone();
            out.push((tape.value(fwd.loss).data()[0], pred, fwd.record));
        }
        Ok::<_, CoreError>(out)
    });
    collect_eval(results, examples)
}

pub(crate) fn collect_eval(
    results: Vec<Result<Vec<(f64, Array, SelectionRecord)>>>,
    examples: &[CoordExample],
) -> Result<CoordEval> {
    let mut mse_sum = 0.0;
    let mut primary_sq = 0.0;
    let mut records = Vec::with_capacity(examples.len());
    let mut idx = 0usize;
    for chunk in results {
        for (loss, pred, record) in chunk? {
            let ex = &examples[idx];
            mse_sum += loss;
            let p = ex.primary;
            let t = ex.target[p];
            let dx = pred.at(p, 0) - t.0;
            let dy = pred.at(p, 1) - t.1;
            primary_sq += (dx * dx + dy * dy) / 2.0;
            records.push(record);
            idx += 1;
        }
    }
    Ok(CoordEval {
        mse: mse_sum / examples.len() as f64,
        mse_primary: primary_sq / examples.len() as f64,
        records,
    })
}
