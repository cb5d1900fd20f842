//! Loss, exact reverse-mode gradients, Adam updates, and the epoch schedule
//! that interleaves structural edits with rollback.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::init::init_rulebase;
use crate::metrics::rmse;
use crate::model::{sigmoid, InferenceTrace, RuleBase};
use crate::seed::{stream, stream_rng};
use crate::structure::{grow_rule, prune_attributes, prune_rules, EventKind, StructuralEvent};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Every training hyperparameter. Defaults follow the reference protocol:
/// learning rate 0.01, batch 512, 1500 epochs, pruning thresholds 0.1/0.25,
/// attribute pruning every 25 epochs, rule pruning every 50.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Attribute-pruning threshold on α.
    pub theta_attr: f64,
    /// Rule-pruning threshold on β.
    pub theta_rule: f64,
    /// Minimum validation-RMSE improvement that resets the patience counter.
    pub growth_threshold: f64,
    /// Epochs without improvement before a rule is grown.
    pub patience: usize,
    pub max_rules: usize,
    /// Rule count at initialization; defaults to 2 when growth is enabled and
    /// to `max_rules` otherwise.
    pub init_rules: Option<usize>,
    pub prune_attr_freq: usize,
    pub prune_rule_freq: usize,
    /// Consecutive low-weight checks required before a prune takes effect.
    pub persistence_checks: u32,
    pub l1_attr: f64,
    pub l1_rule: f64,
    /// Relative validation-RMSE degradation tolerated before a structural
    /// edit is rolled back.
    pub rollback_tolerance: f64,
    /// High-error samples seeding a grown rule; defaults to
    /// `max(8, batch_size / 64)`.
    pub grow_topk: Option<usize>,
    pub ap_enabled: bool,
    pub rgrp_enabled: bool,
    pub use_bias: bool,
    pub strict_firing: bool,
    pub rule_logit_init: f64,
    pub s_floor: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 512,
            epochs: 1500,
            theta_attr: 0.1,
            theta_rule: 0.25,
            growth_threshold: 5e-5,
            patience: 30,
            max_rules: 9,
            init_rules: None,
            prune_attr_freq: 25,
            prune_rule_freq: 50,
            persistence_checks: 2,
            l1_attr: 1e-4,
            l1_rule: 1e-4,
            rollback_tolerance: 0.02,
            grow_topk: None,
            ap_enabled: true,
            rgrp_enabled: true,
            use_bias: false,
            strict_firing: false,
            rule_logit_init: 1.0,
            s_floor: 1e-3,
            epsilon: 1e-9,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn effective_init_rules(&self) -> usize {
        self.init_rules
            .unwrap_or(if self.rgrp_enabled { 2 } else { self.max_rules })
            .min(self.max_rules)
    }

    pub fn effective_grow_topk(&self) -> usize {
        self.grow_topk.unwrap_or_else(|| 8.max(self.batch_size / 64))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.theta_attr > 0.0 && self.theta_attr < 1.0) {
            return bad(format!("theta_attr {} must lie in (0,1)", self.theta_attr));
        }
        if !(self.theta_rule > 0.0 && self.theta_rule < 1.0) {
            return bad(format!("theta_rule {} must lie in (0,1)", self.theta_rule));
        }
        if self.growth_threshold < 0.0 {
            return bad("growth_threshold must be non-negative".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.max_rules == 0 {
            return bad("max_rules must be at least 1".into());
        }
        if let Some(k) = self.init_rules {
            if k == 0 || k > self.max_rules {
                return bad(format!(
                    "init_rules {k} must lie in 1..=max_rules ({})",
                    self.max_rules
                ));
            }
        }
        if self.prune_attr_freq == 0 || self.prune_rule_freq == 0 {
            return bad("pruning frequencies must be at least 1 epoch".into());
        }
        if self.persistence_checks == 0 {
            return bad("persistence_checks must be at least 1".into());
        }
        if self.l1_attr < 0.0 || self.l1_rule < 0.0 {
            return bad("L1 coefficients must be non-negative".into());
        }
        if self.rollback_tolerance < 0.0 {
            return bad("rollback_tolerance must be non-negative".into());
        }
        if self.grow_topk == Some(0) {
            return bad("grow_topk must be at least 1".into());
        }
        if self.s_floor.is_nan() || self.s_floor <= 0.0 {
            return bad("s_floor must be positive".into());
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive".into());
        }
        Ok(())
    }
}

/// Partial derivatives of the loss, shaped like the rule base's learnable
/// parameters. Masked attribute positions stay exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub centers: Vec<Vec<f64>>,
    pub widths: Vec<Vec<f64>>,
    pub attr_logits: Vec<Vec<f64>>,
    pub rule_logits: Vec<f64>,
    pub consequents: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros(num_rules: usize, num_attrs: usize) -> Self {
        Gradients {
            centers: vec![vec![0.0; num_attrs]; num_rules],
            widths: vec![vec![0.0; num_attrs]; num_rules],
            attr_logits: vec![vec![0.0; num_attrs]; num_rules],
            rule_logits: vec![0.0; num_rules],
            consequents: vec![vec![0.0; num_attrs]; num_rules],
            bias: vec![0.0; num_rules],
        }
    }

    pub fn zeros_like(rb: &RuleBase) -> Self {
        Gradients::zeros(rb.num_rules, rb.num_attrs)
    }

    fn shape_matches(&self, rb: &RuleBase) -> bool {
        self.rule_logits.len() == rb.num_rules
            && self.centers.len() == rb.num_rules
            && self.centers.iter().all(|r| r.len() == rb.num_attrs)
    }

    /// Errors naming the first parameter block holding a non-finite entry.
    pub fn check_finite(&self) -> Result<()> {
        let grid_ok = |g: &Vec<Vec<f64>>| g.iter().flatten().all(|v| v.is_finite());
        let blocks: [(&'static str, bool); 6] = [
            ("centers", grid_ok(&self.centers)),
            ("widths", grid_ok(&self.widths)),
            ("attr_logits", grid_ok(&self.attr_logits)),
            ("rule_logits", self.rule_logits.iter().all(|v| v.is_finite())),
            ("consequents", grid_ok(&self.consequents)),
            ("bias", self.bias.iter().all(|v| v.is_finite())),
        ];
        for (name, ok) in blocks {
            if !ok {
                return Err(Error::NonFinite { block: name });
            }
        }
        Ok(())
    }
}

/// Largest elementwise discrepancy between two gradient sets, relative to
/// `max(1, |a|, |b|)`, together with the block it occurred in.
pub fn max_rel_error(a: &Gradients, b: &Gradients) -> (f64, &'static str) {
    fn grid(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| (x - y).abs() / 1.0f64.max(x.abs()).max(y.abs()))
            .fold(0.0, f64::max)
    }
    fn vecs(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / 1.0f64.max(x.abs()).max(y.abs()))
            .fold(0.0, f64::max)
    }
    let blocks = [
        ("centers", grid(&a.centers, &b.centers)),
        ("widths", grid(&a.widths, &b.widths)),
        ("attr_logits", grid(&a.attr_logits, &b.attr_logits)),
        ("rule_logits", vecs(&a.rule_logits, &b.rule_logits)),
        ("consequents", grid(&a.consequents, &b.consequents)),
        ("bias", vecs(&a.bias, &b.bias)),
    ];
    blocks
        .into_iter()
        .fold((0.0, "none"), |acc, (name, v)| if v > acc.0 { (v, name) } else { acc })
}

fn check_batch_shapes(rb: &RuleBase, x: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: format!("{} targets", x.len()),
            got: format!("{} targets", y.len()),
        });
    }
    for row in x {
        if row.len() != rb.num_attrs {
            return Err(Error::Shape {
                expected: format!("{} columns", rb.num_attrs),
                got: format!("{} columns", row.len()),
            });
        }
    }
    Ok(())
}

fn l1_penalties(rb: &RuleBase, l1_attr: f64, l1_rule: f64) -> f64 {
    // α and β are non-negative by construction, so |·| is the value itself.
    let mut pen_a = 0.0;
    for l in 0..rb.num_rules {
        for i in 0..rb.num_attrs {
            pen_a += sigmoid(rb.attr_logits[l][i]) * rb.attr_mask[l][i] as f64;
        }
    }
    let mut pen_r = 0.0;
    for l in 0..rb.num_rules {
        pen_r += sigmoid(rb.rule_logits[l]);
    }
    l1_attr * pen_a + l1_rule * pen_r
}

/// Batch loss: mean squared error plus L1 penalties on the activated
/// attribute and rule importance weights.
pub fn loss(rb: &RuleBase, x: &[Vec<f64>], y: &[f64], l1_attr: f64, l1_rule: f64) -> Result<f64> {
    check_batch_shapes(rb, x, y)?;
    let mut trace = InferenceTrace::default();
    let mut sq = 0.0;
    for (row, &target) in x.iter().zip(y) {
        rb.forward_into(row, &mut trace);
        let r = trace.y - target;
        sq += r * r;
    }
    Ok(sq / x.len() as f64 + l1_penalties(rb, l1_attr, l1_rule))
}

/// Batch loss and its exact analytic gradient in one backward pass.
pub fn loss_and_gradients(
    rb: &RuleBase,
    x: &[Vec<f64>],
    y: &[f64],
    l1_attr: f64,
    l1_rule: f64,
) -> Result<(f64, Gradients)> {
    check_batch_shapes(rb, x, y)?;
    let (num_rules, num_attrs) = (rb.num_rules, rb.num_attrs);
    let batch = x.len() as f64;
    let mut g = Gradients::zeros_like(rb);
    // dLoss/dα and dLoss/dβ accumulate over samples; the chain through the
    // sigmoids (plus the L1 terms) is applied once at the end.
    let mut g_alpha = vec![vec![0.0f64; num_attrs]; num_rules];
    let mut g_beta = vec![0.0f64; num_rules];

    let mut trace = InferenceTrace::default();
    // Factor scratch: per-rule active factors t_i = μ_i·α_i and their prefix
    // products, so ∂f/∂t_i is exact even when some factor underflows to 0.
    let mut factor_idx = vec![0usize; num_attrs];
    let mut factor_val = vec![0.0f64; num_attrs];
    let mut factor_prefix = vec![0.0f64; num_attrs];

    let mut sq = 0.0;
    for (row, &target) in x.iter().zip(y) {
        rb.forward_into(row, &mut trace);
        let r = trace.y - target;
        sq += r * r;
        let gy = 2.0 * r / batch;
        let denom = trace.denom;

        // dLoss/df̃[l] = g_w[l]/S − (Σ_m g_w[m]·f̃[m])/S² with g_w[l] = gy·y_l.
        let mut t_sum = 0.0;
        for l in 0..num_rules {
            t_sum += gy * trace.rule_out[l] * trace.f_tilde[l];
        }
        for l in 0..num_rules {
            let g_w = gy * trace.rule_out[l];
            let g_yl = gy * trace.w[l];
            for i in 0..num_attrs {
                if rb.attr_mask[l][i] == 1 {
                    g.consequents[l][i] += g_yl * row[i];
                }
            }
            if rb.use_bias {
                g.bias[l] += g_yl;
            }

            let g_ft = g_w / denom - t_sum / (denom * denom);
            let g_f = g_ft * trace.beta[l];
            g_beta[l] += g_ft * trace.firing[l];

            // Gather the participating firing factors.
            let mut count = 0;
            for i in 0..num_attrs {
                if rb.strict_firing || rb.attr_mask[l][i] == 1 {
                    factor_idx[count] = i;
                    factor_val[count] = trace.mu[l][i] * trace.alpha[l][i];
                    count += 1;
                }
            }
            if count == 0 {
                continue; // inert rule: firing is constant zero
            }
            let mut acc = 1.0;
            for p in 0..count {
                factor_prefix[p] = acc;
                acc *= factor_val[p];
            }
            let mut suffix = 1.0;
            for p in (0..count).rev() {
                let i = factor_idx[p];
                let df_dt = factor_prefix[p] * suffix;
                suffix *= factor_val[p];
                let g_t = g_f * df_dt;
                let g_mu = g_t * trace.alpha[l][i];
                g_alpha[l][i] += g_t * trace.mu[l][i];
                let dv = row[i] - rb.centers[l][i];
                let s = rb.widths[l][i];
                let common = g_mu * trace.mu[l][i] * dv / (s * s);
                g.centers[l][i] += common;
                g.widths[l][i] += common * dv / s;
            }
        }
    }

    // Chain through the activations, adding the L1 terms.
    for l in 0..num_rules {
        let beta = sigmoid(rb.rule_logits[l]);
        g.rule_logits[l] = (g_beta[l] + l1_rule) * beta * (1.0 - beta);
        for i in 0..num_attrs {
            if rb.attr_mask[l][i] == 1 {
                let sig = sigmoid(rb.attr_logits[l][i]);
                g.attr_logits[l][i] = (g_alpha[l][i] + l1_attr) * sig * (1.0 - sig);
            }
        }
    }
    g.check_finite()?;
    let total = sq / batch + l1_penalties(rb, l1_attr, l1_rule);
    Ok((total, g))
}

/// Exact analytic gradient of [`loss`] for every learnable parameter.
pub fn gradients(
    rb: &RuleBase,
    x: &[Vec<f64>],
    y: &[f64],
    l1_attr: f64,
    l1_rule: f64,
) -> Result<Gradients> {
    Ok(loss_and_gradients(rb, x, y, l1_attr, l1_rule)?.1)
}

/// Central-difference gradient oracle: `(loss(θ+h) − loss(θ−h)) / 2h` per
/// scalar parameter. Test tooling; independent of the analytic backward pass.
pub fn finite_diff_gradients(
    rb: &RuleBase,
    x: &[Vec<f64>],
    y: &[f64],
    l1_attr: f64,
    l1_rule: f64,
    h: f64,
) -> Result<Gradients> {
    assert!(h > 0.0, "step must be positive");
    let mut g = Gradients::zeros_like(rb);
    let central = |mutate: &dyn Fn(&mut RuleBase, f64)| -> Result<f64> {
        let mut plus = rb.clone();
        mutate(&mut plus, h);
        let mut minus = rb.clone();
        mutate(&mut minus, -h);
        Ok((loss(&plus, x, y, l1_attr, l1_rule)? - loss(&minus, x, y, l1_attr, l1_rule)?)
            / (2.0 * h))
    };
    for l in 0..rb.num_rules {
        for i in 0..rb.num_attrs {
            g.centers[l][i] = central(&|r, d| r.centers[l][i] += d)?;
            g.widths[l][i] = central(&|r, d| r.widths[l][i] += d)?;
            g.attr_logits[l][i] = central(&|r, d| r.attr_logits[l][i] += d)?;
            g.consequents[l][i] = central(&|r, d| r.consequents[l][i] += d)?;
        }
        g.rule_logits[l] = central(&|r, d| r.rule_logits[l] += d)?;
        if rb.use_bias {
            g.bias[l] = central(&|r, d| r.bias[l] += d)?;
        }
    }
    Ok(g)
}

/// Adam accumulators plus the structural bookkeeping carried across epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    /// First-moment estimates, shaped like the rule base.
    pub m: Gradients,
    /// Second-moment estimates.
    pub v: Gradients,
    pub step: u64,
    /// Consecutive low-α checks per (rule, attribute).
    pub attr_streaks: Vec<Vec<u32>>,
    /// Consecutive low-β checks per rule.
    pub rule_streaks: Vec<u32>,
    pub best_rb: RuleBase,
    pub best_val_rmse: f64,
    pub epochs_since_improvement: usize,
}

impl TrainState {
    pub fn new(rb: &RuleBase, val_rmse: f64) -> Self {
        TrainState {
            m: Gradients::zeros_like(rb),
            v: Gradients::zeros_like(rb),
            step: 0,
            attr_streaks: vec![vec![0; rb.num_attrs]; rb.num_rules],
            rule_streaks: vec![0; rb.num_rules],
            best_rb: rb.clone(),
            best_val_rmse: val_rmse,
            epochs_since_improvement: 0,
        }
    }

    /// Fresh zero moments for the (possibly re-shaped) rule base; the step
    /// counter restarts. Streaks and the best snapshot are untouched.
    pub fn reinit_optimizer(&mut self, rb: &RuleBase) {
        self.m = Gradients::zeros_like(rb);
        self.v = Gradients::zeros_like(rb);
        self.step = 0;
    }
}

fn adam_block(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, bc1: f64, bc2: f64) {
    for j in 0..p.len() {
        m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
        v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
        let m_hat = m[j] / bc1;
        let v_hat = v[j] / bc2;
        p[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// One bias-corrected adaptive-moment update (decay 0.9/0.999, stabilizer
/// 1e-8). Widths are re-floored afterwards.
pub fn adam_step(
    state: &mut TrainState,
    rb: &mut RuleBase,
    g: &Gradients,
    lr: f64,
) -> Result<()> {
    if !(g.shape_matches(rb) && state.m.shape_matches(rb) && state.v.shape_matches(rb)) {
        return Err(Error::StaleOptimizer);
    }
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for l in 0..rb.num_rules {
        adam_block(&mut rb.centers[l], &g.centers[l], &mut state.m.centers[l], &mut state.v.centers[l], lr, bc1, bc2);
        adam_block(&mut rb.widths[l], &g.widths[l], &mut state.m.widths[l], &mut state.v.widths[l], lr, bc1, bc2);
        adam_block(&mut rb.attr_logits[l], &g.attr_logits[l], &mut state.m.attr_logits[l], &mut state.v.attr_logits[l], lr, bc1, bc2);
        adam_block(&mut rb.consequents[l], &g.consequents[l], &mut state.m.consequents[l], &mut state.v.consequents[l], lr, bc1, bc2);
    }
    adam_block(&mut rb.rule_logits, &g.rule_logits, &mut state.m.rule_logits, &mut state.v.rule_logits, lr, bc1, bc2);
    if rb.use_bias {
        adam_block(&mut rb.bias, &g.bias, &mut state.m.bias, &mut state.v.bias, lr, bc1, bc2);
    }
    rb.floor_widths();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RollbackDecision {
    Keep,
    Restore,
}

#[derive(Debug, Clone, Copy)]
pub struct RollbackOutcome {
    pub decision: RollbackDecision,
    pub rmse_prev: f64,
    pub rmse_curr: f64,
}

/// Compares validation RMSE before and after a structural edit; the edit is
/// restored when it degrades RMSE by more than the relative tolerance.
pub fn evaluate_rollback(
    prev: &RuleBase,
    curr: &RuleBase,
    x_val: &[Vec<f64>],
    y_val: &[f64],
    tolerance: f64,
) -> Result<RollbackOutcome> {
    let rmse_prev = rmse(&prev.predict_batch(x_val)?, y_val)?;
    let rmse_curr = rmse(&curr.predict_batch(x_val)?, y_val)?;
    let decision = if rmse_curr > rmse_prev * (1.0 + tolerance) {
        RollbackDecision::Restore
    } else {
        RollbackDecision::Keep
    };
    Ok(RollbackOutcome {
        decision,
        rmse_prev,
        rmse_curr,
    })
}

/// One line of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: f64,
    #[serde(rename = "L")]
    pub rules: usize,
    pub active_attr_total: usize,
}

/// Everything `fit` observed: per-epoch curves, the structural event log, and
/// the rule bases bracketing the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_rulebase: RuleBase,
    /// Structure at the end of training (the returned model is the
    /// best-validation snapshot, which may predate later edits).
    pub final_rulebase: RuleBase,
    pub epochs: Vec<EpochRecord>,
    pub events: Vec<StructuralEvent>,
    pub best_val_rmse: f64,
}

/// One line of the JSONL training log.
#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogRecord<'a> {
    Epoch(&'a EpochRecord),
    Event(&'a StructuralEvent),
}

/// Writes the JSONL training log: structural events appear before the
/// summary line of the epoch they occurred in.
pub fn write_event_log<W: std::io::Write>(report: &TrainReport, mut out: W) -> Result<()> {
    let mut events = report.events.iter().peekable();
    let mut emit = |record: LogRecord| -> Result<()> {
        let line = serde_json::to_string(&record)?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        Ok(())
    };
    for rec in &report.epochs {
        while events.peek().is_some_and(|ev| ev.epoch <= rec.epoch) {
            emit(LogRecord::Event(events.next().unwrap()))?;
        }
        emit(LogRecord::Epoch(rec))?;
    }
    for ev in events {
        emit(LogRecord::Event(ev))?;
    }
    Ok(())
}

fn val_rmse_of(rb: &RuleBase, x_val: &[Vec<f64>], y_val: &[f64]) -> Result<f64> {
    rmse(&rb.predict_batch(x_val)?, y_val)
}

struct EditSnapshot {
    rb: RuleBase,
    attr_streaks: Vec<Vec<u32>>,
    rule_streaks: Vec<u32>,
}

fn snapshot(rb: &RuleBase, state: &TrainState) -> EditSnapshot {
    EditSnapshot {
        rb: rb.clone(),
        attr_streaks: state.attr_streaks.clone(),
        rule_streaks: state.rule_streaks.clone(),
    }
}

/// Rollback evaluation shared by every structural phase. Fills the batch's
/// RMSE fields, restores the snapshot (rule base and streaks) when the edit
/// degraded validation beyond tolerance, reinitializes the optimizer, and
/// returns the validation RMSE of whichever structure survived.
#[allow(clippy::too_many_arguments)]
fn settle_edit(
    rb: &mut RuleBase,
    state: &mut TrainState,
    snap: EditSnapshot,
    batch_events: &mut Vec<StructuralEvent>,
    x_val: &[Vec<f64>],
    y_val: &[f64],
    tolerance: f64,
    epoch: usize,
) -> Result<f64> {
    let outcome = evaluate_rollback(&snap.rb, rb, x_val, y_val, tolerance)?;
    for ev in batch_events.iter_mut() {
        ev.val_rmse_before = Some(outcome.rmse_prev);
        ev.val_rmse_after = Some(outcome.rmse_curr);
    }
    let current = match outcome.decision {
        RollbackDecision::Keep => outcome.rmse_curr,
        RollbackDecision::Restore => {
            *rb = snap.rb;
            state.attr_streaks = snap.attr_streaks;
            state.rule_streaks = snap.rule_streaks;
            let ev = StructuralEvent {
                epoch,
                kind: EventKind::Rollback,
                rule_index: None,
                attr_index: None,
                weight_value: None,
                val_rmse_before: Some(outcome.rmse_prev),
                val_rmse_after: Some(outcome.rmse_curr),
            };
            batch_events.push(ev);
            outcome.rmse_prev
        }
    };
    state.reinit_optimizer(rb);
    if current < state.best_val_rmse {
        state.best_val_rmse = current;
        state.best_rb = rb.clone();
    }
    Ok(current)
}

/// Trains a rule base on the dataset's train split, validating per epoch and
/// interleaving attribute pruning, rule pruning, and growth (in that order)
/// per the configured cadence. Returns the best-validation rule base and the
/// full report. The whole run is a pure function of `(data, cfg)`.
pub fn fit(data: &Dataset, cfg: &TrainConfig) -> Result<(RuleBase, TrainReport)> {
    cfg.validate()?;
    let (x_train, y_train) = data.rows(&data.train_idx);
    let (x_val, y_val) = data.rows(&data.val_idx);
    if x_train.is_empty() || x_val.is_empty() {
        return Err(Error::Config("dataset must provide train and val splits".into()));
    }

    let mut rb = init_rulebase(&x_train, cfg.effective_init_rules(), cfg.seed, cfg)?;
    let initial_rulebase = rb.clone();
    let mut current_val = val_rmse_of(&rb, &x_val, &y_val)?;
    let mut state = TrainState::new(&rb, current_val);

    let n = x_train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs_log = Vec::with_capacity(cfg.epochs);
    let mut events: Vec<StructuralEvent> = Vec::new();

    for epoch in 1..=cfg.epochs {
        let mut rng = stream_rng(cfg.seed, stream::SHUFFLE, epoch as u64);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| x_train[i].clone()).collect();
            let by: Vec<f64> = chunk.iter().map(|&i| y_train[i]).collect();
            let (batch_loss, grads) =
                loss_and_gradients(&rb, &bx, &by, cfg.l1_attr, cfg.l1_rule)?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("batch loss became {batch_loss}"),
                });
            }
            adam_step(&mut state, &mut rb, &grads, cfg.learning_rate)?;
            loss_sum += batch_loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / n as f64;
        current_val = val_rmse_of(&rb, &x_val, &y_val)?;

        // Improvement is measured against the best RMSE seen so far; gains at
        // or below the growth threshold count as stagnation.
        if state.best_val_rmse - current_val > cfg.growth_threshold {
            state.epochs_since_improvement = 0;
        } else {
            state.epochs_since_improvement += 1;
        }
        if current_val < state.best_val_rmse {
            state.best_val_rmse = current_val;
            state.best_rb = rb.clone();
        }

        if cfg.ap_enabled && epoch % cfg.prune_attr_freq == 0 {
            let snap = snapshot(&rb, &state);
            let mut batch = prune_attributes(
                &mut rb,
                &mut state.attr_streaks,
                cfg.theta_attr,
                cfg.persistence_checks,
                epoch,
            );
            if !batch.is_empty() {
                current_val = settle_edit(
                    &mut rb, &mut state, snap, &mut batch, &x_val, &y_val,
                    cfg.rollback_tolerance, epoch,
                )?;
                events.append(&mut batch);
            }
        }

        if cfg.rgrp_enabled && epoch % cfg.prune_rule_freq == 0 {
            let snap = snapshot(&rb, &state);
            let mut batch = prune_rules(
                &mut rb,
                &mut state.rule_streaks,
                &mut state.attr_streaks,
                cfg.theta_rule,
                cfg.persistence_checks,
                epoch,
            );
            if !batch.is_empty() {
                current_val = settle_edit(
                    &mut rb, &mut state, snap, &mut batch, &x_val, &y_val,
                    cfg.rollback_tolerance, epoch,
                )?;
                events.append(&mut batch);
            }
        }

        if cfg.rgrp_enabled
            && state.epochs_since_improvement >= cfg.patience
            && rb.num_rules < cfg.max_rules
        {
            let residuals: Vec<f64> = rb
                .predict_batch(&x_train)?
                .iter()
                .zip(&y_train)
                .map(|(p, t)| p - t)
                .collect();
            let snap = snapshot(&rb, &state);
            let mut grow_rng = stream_rng(cfg.seed, stream::GROW, epoch as u64);
            let ev = grow_rule(
                &mut rb,
                &x_train,
                &residuals,
                cfg.effective_grow_topk(),
                cfg.max_rules,
                cfg.rule_logit_init,
                &mut grow_rng,
                epoch,
            )?;
            state.attr_streaks.push(vec![0; rb.num_attrs]);
            state.rule_streaks.push(0);
            let mut batch = vec![ev];
            current_val = settle_edit(
                &mut rb, &mut state, snap, &mut batch, &x_val, &y_val,
                cfg.rollback_tolerance, epoch,
            )?;
            events.append(&mut batch);
            // One rule per trigger; the patience window restarts either way.
            state.epochs_since_improvement = 0;
        }

        epochs_log.push(EpochRecord {
            epoch,
            train_loss,
            val_rmse: current_val,
            rules: rb.num_rules,
            active_attr_total: rb.total_active_attributes(),
        });
    }

    let report = TrainReport {
        initial_rulebase,
        final_rulebase: rb,
        epochs: epochs_log,
        events,
        best_val_rmse: state.best_val_rmse,
    };
    Ok((state.best_rb, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn blank_rb(num_rules: usize, num_attrs: usize) -> RuleBase {
        RuleBase {
            num_rules,
            num_attrs,
            centers: vec![vec![0.0; num_attrs]; num_rules],
            widths: vec![vec![1.0; num_attrs]; num_rules],
            attr_logits: vec![vec![0.0; num_attrs]; num_rules],
            attr_mask: vec![vec![1; num_attrs]; num_rules],
            rule_logits: vec![0.0; num_rules],
            consequents: vec![vec![0.0; num_attrs]; num_rules],
            bias: vec![0.0; num_rules],
            use_bias: false,
            strict_firing: false,
            epsilon: 1e-9,
            s_floor: 1e-3,
        }
    }

    pub(crate) fn random_rb(
        num_rules: usize,
        num_attrs: usize,
        rng: &mut ChaCha8Rng,
        use_bias: bool,
        strict: bool,
        with_masks: bool,
    ) -> RuleBase {
        let mut rb = blank_rb(num_rules, num_attrs);
        rb.use_bias = use_bias;
        rb.strict_firing = strict;
        for l in 0..num_rules {
            for i in 0..num_attrs {
                rb.centers[l][i] = rng.random_range(-1.0..1.0);
                rb.widths[l][i] = rng.random_range(0.5..1.5);
                rb.attr_logits[l][i] = rng.random_range(-1.0..1.0);
                rb.consequents[l][i] = rng.random_range(-1.0..1.0);
                if with_masks && num_attrs > 1 && rng.random::<f64>() < 0.25 {
                    rb.attr_mask[l][i] = 0;
                }
            }
            // Keep at least one active attribute per rule.
            if rb.active_attrs(l) == 0 {
                rb.attr_mask[l][0] = 1;
            }
            rb.rule_logits[l] = rng.random_range(-1.0..1.0);
            rb.bias[l] = rng.random_range(-0.5..0.5);
        }
        rb
    }

    fn random_batch(n: usize, d: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        (x, y)
    }

    #[test]
    fn loss_examples() {
        // Perfect predictions with zero penalties → zero loss.
        let rb = blank_rb(1, 1);
        let x = vec![vec![0.5], vec![-1.0]];
        let preds = rb.predict_batch(&x).unwrap();
        assert_abs_diff_eq!(loss(&rb, &x, &preds, 0.0, 0.0).unwrap(), 0.0, epsilon = 1e-15);

        // Residuals (1, −1) → MSE 1.
        let shifted: Vec<f64> = preds.iter().zip([1.0, -1.0]).map(|(p, d)| p - d).collect();
        assert_abs_diff_eq!(loss(&rb, &x, &shifted, 0.0, 0.0).unwrap(), 1.0, epsilon = 1e-12);

        // Additive penalty: single rule, single attribute, α = 0.5.
        let l1_rule = 0.3;
        let expected = 0.5 + l1_rule * sigmoid(0.0);
        assert_abs_diff_eq!(
            loss(&rb, &x, &preds, 1.0, l1_rule).unwrap(),
            expected,
            epsilon = 1e-12
        );

        assert!(matches!(loss(&rb, &[], &[], 0.0, 0.0), Err(Error::EmptyBatch)));
    }

    #[test]
    fn zero_residuals_zero_penalty_means_zero_gradient() {
        let mut rng = crate::seed::stream_rng(1, 33, 0);
        let rb = random_rb(2, 2, &mut rng, false, false, false);
        let (x, _) = random_batch(6, 2, &mut rng);
        let y = rb.predict_batch(&x).unwrap();
        let g = gradients(&rb, &x, &y, 0.0, 0.0).unwrap();
        assert_eq!(g, Gradients::zeros_like(&rb));
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let mut rng = crate::seed::stream_rng(7, 33, 0);
        for case in 0..6 {
            let num_rules = 1 + case % 3;
            let num_attrs = 1 + (case * 2) % 4;
            let use_bias = case % 2 == 1;
            let strict = case == 4;
            let rb = random_rb(num_rules, num_attrs, &mut rng, use_bias, strict, true);
            let (x, y) = random_batch(4, num_attrs, &mut rng);
            let analytic = gradients(&rb, &x, &y, 1e-3, 1e-3).unwrap();
            let fd = finite_diff_gradients(&rb, &x, &y, 1e-3, 1e-3, 1e-5).unwrap();
            let (err, block) = max_rel_error(&analytic, &fd);
            assert!(err <= 1e-4, "case {case}: rel err {err} in block {block}");
        }
    }

    #[test]
    fn masked_positions_have_exactly_zero_gradient() {
        let mut rng = crate::seed::stream_rng(9, 33, 0);
        let mut rb = random_rb(2, 3, &mut rng, false, false, false);
        rb.attr_mask[0][1] = 0;
        rb.attr_mask[1][2] = 0;
        let (x, y) = random_batch(5, 3, &mut rng);
        let g = gradients(&rb, &x, &y, 1e-3, 1e-3).unwrap();
        for (l, i) in [(0usize, 1usize), (1, 2)] {
            assert_eq!(g.centers[l][i], 0.0);
            assert_eq!(g.widths[l][i], 0.0);
            assert_eq!(g.attr_logits[l][i], 0.0);
            assert_eq!(g.consequents[l][i], 0.0);
        }
        let fd = finite_diff_gradients(&rb, &x, &y, 1e-3, 1e-3, 1e-5).unwrap();
        for (l, i) in [(0usize, 1usize), (1, 2)] {
            assert!(fd.centers[l][i].abs() < 1e-10);
            assert!(fd.attr_logits[l][i].abs() < 1e-10);
        }
    }

    #[test]
    fn finite_difference_oracle_richardson_consistency() {
        // Halving the step should not move the estimate at leading order in
        // a region where the loss is smooth.
        let mut rng = crate::seed::stream_rng(11, 33, 0);
        let rb = random_rb(2, 2, &mut rng, false, false, false);
        let (x, y) = random_batch(4, 2, &mut rng);
        let coarse = finite_diff_gradients(&rb, &x, &y, 0.0, 0.0, 1e-4).unwrap();
        let fine = finite_diff_gradients(&rb, &x, &y, 0.0, 0.0, 5e-5).unwrap();
        let (err, _) = max_rel_error(&coarse, &fine);
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let rb0 = blank_rb(2, 2);
        let mut rb = rb0.clone();
        let mut state = TrainState::new(&rb, f64::INFINITY);
        let g = Gradients::zeros_like(&rb);
        adam_step(&mut state, &mut rb, &g, 0.1).unwrap();
        assert_eq!(rb, rb0);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut rb = blank_rb(1, 1);
        rb.consequents[0][0] = 0.7;
        let mut state = TrainState::new(&rb, f64::INFINITY);
        let mut g = Gradients::zeros_like(&rb);
        g.consequents[0][0] = 0.5;
        let lr = 0.01;
        adam_step(&mut state, &mut rb, &g, lr).unwrap();
        let delta = rb.consequents[0][0] - 0.7;
        assert!((delta + lr).abs() < lr * 1e-6, "delta {delta}");
    }

    #[test]
    fn adam_clamps_widths_at_floor() {
        let mut rb = blank_rb(1, 1);
        rb.widths[0][0] = rb.s_floor + 1e-6;
        let mut state = TrainState::new(&rb, f64::INFINITY);
        let mut g = Gradients::zeros_like(&rb);
        g.widths[0][0] = 10.0;
        adam_step(&mut state, &mut rb, &g, 0.5).unwrap();
        assert_eq!(rb.widths[0][0], rb.s_floor);
    }

    #[test]
    fn adam_rejects_stale_shapes_until_reinitialized() {
        let mut rb = blank_rb(3, 2);
        let mut state = TrainState::new(&rb, f64::INFINITY);
        let g_old = Gradients::zeros_like(&rb);
        adam_step(&mut state, &mut rb, &g_old, 0.01).unwrap();
        rb.remove_rule(2);
        let g_new = Gradients::zeros_like(&rb);
        assert!(matches!(
            adam_step(&mut state, &mut rb, &g_new, 0.01),
            Err(Error::StaleOptimizer)
        ));
        state.reinit_optimizer(&rb);
        assert_eq!(state.step, 0);
        adam_step(&mut state, &mut rb, &g_new, 0.01).unwrap();
        assert_eq!(state.step, 1);
    }

    #[test]
    fn rollback_threshold_arithmetic() {
        // Single always-firing rule predicting c·x: RMSE scales with |c − 1|
        // against targets c=1. Craft 10% and 1% degradations directly.
        let x_val: Vec<Vec<f64>> = vec![vec![1.0], vec![-1.0], vec![2.0]];
        let mk = |c: f64| {
            let mut rb = blank_rb(1, 1);
            rb.widths[0][0] = 50.0; // ≈ flat membership, w ≈ 1
            rb.consequents[0][0] = c;
            rb
        };
        let y_val: Vec<f64> = mk(1.0).predict_batch(&x_val).unwrap();
        let base = mk(1.1); // some baseline error
        let ten_pct_worse = mk(1.11);
        let one_pct_worse = mk(1.101);

        let same = evaluate_rollback(&base, &base, &x_val, &y_val, 0.02).unwrap();
        assert_eq!(same.decision, RollbackDecision::Keep);

        let worse = evaluate_rollback(&base, &ten_pct_worse, &x_val, &y_val, 0.02).unwrap();
        assert_eq!(worse.decision, RollbackDecision::Restore);
        assert!(worse.rmse_curr > worse.rmse_prev * 1.02);

        let slight = evaluate_rollback(&base, &one_pct_worse, &x_val, &y_val, 0.02).unwrap();
        assert_eq!(slight.decision, RollbackDecision::Keep);
    }

    #[test]
    fn config_validation_catches_bad_ranges() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        for bad in [
            TrainConfig { learning_rate: 0.0, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
            TrainConfig { theta_attr: 1.0, ..ok.clone() },
            TrainConfig { theta_rule: 0.0, ..ok.clone() },
            TrainConfig { init_rules: Some(10), max_rules: 9, ..ok.clone() },
            TrainConfig { prune_attr_freq: 0, ..ok.clone() },
            TrainConfig { persistence_checks: 0, ..ok.clone() },
            TrainConfig { epsilon: 0.0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!(TrainConfig::default().effective_grow_topk(), 8);
        assert_eq!(
            TrainConfig { batch_size: 1024, ..ok.clone() }.effective_grow_topk(),
            16
        );
        assert_eq!(ok.effective_init_rules(), 2);
        assert_eq!(
            TrainConfig { rgrp_enabled: false, ..ok }.effective_init_rules(),
            9
        );
    }
}
