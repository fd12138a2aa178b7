//! Losses, the optimizer loop, ablation wiring, and finite-difference
//! gradient verification.
//!
//! The objective is `L = L_e + psi * L_q`: mean token cross-entropy over
//! non-PAD target positions plus a mean squared error between the node-score
//! head and the stored BM25 scores of directly retrieved nodes (articles and
//! related questions). Batch reduction pools token losses over all non-PAD
//! positions and squared errors over all scored nodes, in ascending sample
//! id order.

use crate::autodiff::{Matrix, Tape, Var};
use crate::graph::HeteroGraph;
use crate::model::{Ablation, HeteroQaModel, ModelError, PreparedSample};
use crate::nn::TapedParams;
use crate::textprep::PAD_ID;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("all target positions are PAD")]
    AllPadTargets,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("training needs at least one sample")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One batch's loss parts. The composition `l = l_e + psi * l_q` holds
/// exactly (same additions the tape performed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l: f64,
    pub l_e: f64,
    pub l_q: f64,
    pub psi: f64,
}

pub const DEFAULT_PSI: f64 = 0.01;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const GRAD_CLIP_NORM: f64 = 1.0;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub psi: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            psi: DEFAULT_PSI,
            learning_rate: DEFAULT_LEARNING_RATE,
            steps: 200,
            batch_size: 8,
            seed: 0,
        }
    }
}

/// Summed token cross-entropy over non-PAD target positions, and the count.
/// `loss = -sum log softmax(logits)[target]`; divide by the count for the
/// mean.
pub fn ce_sum(
    tape: &Tape,
    logits: Var,
    targets: &[u32],
) -> Result<(Var, usize), TrainingError> {
    let keep: Vec<usize> = targets
        .iter()
        .enumerate()
        .filter(|(_, &t)| t != PAD_ID)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(TrainingError::AllPadTargets);
    }
    let cols: Vec<usize> = keep.iter().map(|&i| targets[i] as usize).collect();
    let lsm = tape.log_softmax_rows(logits);
    let rows = tape.gather_rows(lsm, &keep);
    let picked = tape.gather_cols_per_row(rows, &cols);
    let total = tape.sum_all(picked);
    Ok((tape.scale(total, -1.0), keep.len()))
}

/// Mean token cross-entropy (PAD excluded).
pub fn ce_loss(tape: &Tape, logits: Var, targets: &[u32]) -> Result<Var, TrainingError> {
    let (sum, count) = ce_sum(tape, logits, targets)?;
    Ok(tape.scale(sum, 1.0 / count as f64))
}

/// Summed squared error between predicted node scores and stored BM25
/// scores, over exactly the scored nodes. `None` when the graph has none.
pub fn graph_sq_sum(tape: &Tape, node_scores: Var, graph: &HeteroGraph) -> Option<(Var, usize)> {
    let scored: Vec<(usize, f64)> = graph
        .nodes
        .iter()
        .filter_map(|n| n.score.map(|s| (n.id, s)))
        .collect();
    if scored.is_empty() {
        return None;
    }
    let idx: Vec<usize> = scored.iter().map(|(i, _)| *i).collect();
    let targets = Matrix::from_shape_fn((scored.len(), 1), |(r, _)| scored[r].1);
    let pred = tape.gather_rows(node_scores, &idx);
    let diff = tape.sub(pred, tape.leaf(targets));
    let sq = tape.mul(diff, diff);
    Some((tape.sum_all(sq), scored.len()))
}

/// Mean squared error over scored nodes; defined as 0 for graphs without
/// any scored node (empty-MIS samples contribute no regression loss).
pub fn graph_loss(tape: &Tape, node_scores: Var, graph: &HeteroGraph) -> Var {
    match graph_sq_sum(tape, node_scores, graph) {
        Some((sum, count)) => tape.scale(sum, 1.0 / count as f64),
        None => tape.leaf(Matrix::zeros((1, 1))),
    }
}

/// `L = L_e + psi * L_q` on the tape.
pub fn total_loss(tape: &Tape, l_e: Var, l_q: Var, psi: f64) -> Var {
    tape.add(l_e, tape.scale(l_q, psi))
}

/// Batch forward: pooled losses over prepared samples (ascending id order is
/// the caller's responsibility; [`train`] sorts once up front).
pub struct BatchLoss {
    pub loss: Var,
    pub breakdown: LossBreakdown,
}

pub fn batch_loss(
    model: &HeteroQaModel,
    tape: &Tape,
    tp: &TapedParams,
    batch: &[&PreparedSample],
    psi: f64,
) -> Result<BatchLoss, TrainingError> {
    assert!(!batch.is_empty());
    let skip_graph_loss = model.config.ablation == Ablation::NoGraphLoss;
    let mut ce_sums = Vec::new();
    let mut ce_count = 0usize;
    let mut sq_sums = Vec::new();
    let mut sq_count = 0usize;
    for prepared in batch {
        let fwd = model.forward_training(tape, tp, prepared)?;
        let (sum, count) = ce_sum(tape, fwd.logits, &fwd.targets)?;
        ce_sums.push(sum);
        ce_count += count;
        if !skip_graph_loss {
            if let Some((sum, count)) = graph_sq_sum(tape, fwd.node_scores, &prepared.graph) {
                sq_sums.push(sum);
                sq_count += count;
            }
        }
    }
    let mut ce_total = ce_sums[0];
    for s in &ce_sums[1..] {
        ce_total = tape.add(ce_total, *s);
    }
    let l_e = tape.scale(ce_total, 1.0 / ce_count as f64);
    let (loss, l_q_value) = if skip_graph_loss || sq_sums.is_empty() {
        // the loss IS the cross-entropy node, bit for bit
        (l_e, 0.0)
    } else {
        let mut sq_total = sq_sums[0];
        for s in &sq_sums[1..] {
            sq_total = tape.add(sq_total, *s);
        }
        let l_q = tape.scale(sq_total, 1.0 / sq_count as f64);
        (total_loss(tape, l_e, l_q, psi), tape.scalar(l_q))
    };
    let psi_used = if skip_graph_loss { 0.0 } else { psi };
    Ok(BatchLoss {
        loss,
        breakdown: LossBreakdown {
            l: tape.scalar(loss),
            l_e: tape.scalar(l_e),
            l_q: l_q_value,
            psi: psi_used,
        },
    })
}

/// Adam with bias correction; state per parameter name.
#[derive(Debug, Default)]
pub struct AdamState {
    m: BTreeMap<String, Matrix>,
    v: BTreeMap<String, Matrix>,
    t: usize,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(
        &mut self,
        store: &mut crate::nn::ParamStore,
        grads: &BTreeMap<String, Matrix>,
        lr: f64,
    ) {
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        for (name, grad) in grads {
            let param = store.get_mut(name);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(grad.dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(grad.dim()));
            for ((p, g), (m, v)) in param
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Scales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Matrix>, max_norm: f64) -> f64 {
    let norm_sq: f64 = grads.values().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum();
    let norm = norm_sq.sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.values_mut() {
            g.mapv_inplace(|v| v * factor);
        }
    }
    norm
}

/// Gradients of a batch loss for every parameter the forward pass touched.
pub fn batch_gradients(
    model: &HeteroQaModel,
    batch: &[&PreparedSample],
    psi: f64,
) -> Result<(LossBreakdown, BTreeMap<String, Matrix>), TrainingError> {
    let tape = Tape::new();
    let tp = TapedParams::new(&tape, &model.store);
    let out = batch_loss(model, &tape, &tp, batch, psi)?;
    let grads = tape.backward(out.loss);
    let mut by_name = BTreeMap::new();
    for (name, var) in tp.bound() {
        let shape = model.store.get(&name).dim();
        by_name.insert(name, grads.get_or_zeros(var, shape));
    }
    Ok((out.breakdown, by_name))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub breakdown: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

impl TrainLog {
    /// CSV with columns step, L, L_e, L_q; values print with full round-trip
    /// precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,L,L_e,L_q\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.step, row.breakdown.l, row.breakdown.l_e, row.breakdown.l_q
            ));
        }
        out
    }
}

/// Runs the optimizer loop over prepared samples. Batches cycle through the
/// dataset in ascending sample id order; the whole run is a deterministic
/// function of (model init, samples, config).
pub fn train(
    model: &mut HeteroQaModel,
    prepared: &[PreparedSample],
    cfg: &TrainConfig,
) -> Result<TrainLog, TrainingError> {
    if prepared.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    let mut order: Vec<&PreparedSample> = prepared.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut log = TrainLog::default();
    let mut adam = AdamState::new();
    let mut cursor = 0usize;
    for step in 0..cfg.steps {
        let batch: Vec<&PreparedSample> = (0..cfg.batch_size.min(order.len()))
            .map(|k| order[(cursor + k) % order.len()])
            .collect();
        cursor = (cursor + cfg.batch_size) % order.len();
        let (breakdown, mut grads) = batch_gradients(model, &batch, cfg.psi)?;
        if !breakdown.l.is_finite() {
            return Err(TrainingError::NonFiniteLoss { step });
        }
        clip_global_norm(&mut grads, GRAD_CLIP_NORM);
        adam.step(&mut model.store, &grads, cfg.learning_rate);
        log.rows.push(TrainLogRow { step, breakdown });
    }
    Ok(log)
}

/// Per-tensor result of the finite-difference check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// (tensor name, max relative error over its elements)
    pub per_tensor: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    pub fn failing_tensors(&self) -> Vec<&str> {
        self.per_tensor
            .iter()
            .filter(|(_, e)| *e >= self.tolerance)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, err) in &self.per_tensor {
            let status = if *err < self.tolerance { "ok" } else { "FAIL" };
            out.push_str(&format!("{status}  {err:.3e}  {name}\n"));
        }
        out.push_str(&format!(
            "max relative error {:.3e} (tolerance {:.1e}): {}\n",
            self.max_rel_err,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central finite differences against analytic gradients for every
/// registered parameter tensor, element by element.
pub fn gradcheck(
    model: &mut HeteroQaModel,
    sample: &PreparedSample,
    psi: f64,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport, TrainingError> {
    let (_, analytic) = batch_gradients(model, &[sample], psi)?;
    let loss_of = |model: &HeteroQaModel| -> Result<f64, TrainingError> {
        let tape = Tape::new();
        let tp = TapedParams::new(&tape, &model.store);
        Ok(batch_loss(model, &tape, &tp, &[sample], psi)?.breakdown.l)
    };
    let names: Vec<String> = model.store.names().map(String::from).collect();
    let mut per_tensor = Vec::with_capacity(names.len());
    let mut max_rel = 0.0f64;
    for name in names {
        let shape = model.store.get(&name).dim();
        let mut tensor_max = 0.0f64;
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let original = model.store.get(&name)[[i, j]];
                model.store.get_mut(&name)[[i, j]] = original + eps;
                let plus = loss_of(model)?;
                model.store.get_mut(&name)[[i, j]] = original - eps;
                let minus = loss_of(model)?;
                model.store.get_mut(&name)[[i, j]] = original;
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic
                    .get(&name)
                    .map(|g| g[[i, j]])
                    .unwrap_or(0.0);
                tensor_max = tensor_max.max(rel_err(a, numeric));
            }
        }
        max_rel = max_rel.max(tensor_max);
        per_tensor.push((name, tensor_max));
    }
    Ok(GradCheckReport {
        per_tensor,
        max_rel_err: max_rel,
        tolerance: tol,
    })
}
