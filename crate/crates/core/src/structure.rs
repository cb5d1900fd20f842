//! Structural edits of the rule base: attribute pruning, rule pruning, and
//! rule growth from high-error samples.
//!
//! Pruning decisions require persistence: a weight must sit below its
//! threshold at `persistence` consecutive scheduled checks before the edit
//! fires. Streak counters live with the training state and are snapshotted
//! together with the rule base so a rollback restores both.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{ATTR_LOGIT_INIT_STD, CONSEQUENT_INIT_STD};
use crate::model::{sigmoid, RuleBase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PruneAttr,
    PruneRule,
    Grow,
    Rollback,
}

/// One structural edit, ordered by (epoch, position in the log). Indices are
/// valid at the moment the event applies; events replay strictly in log
/// order. A `Rollback` event undoes the contiguous batch of same-epoch edits
/// immediately preceding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralEvent {
    pub epoch: usize,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attr_index: Option<usize>,
    /// The importance weight that drove the decision.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_rmse_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_rmse_after: Option<f64>,
}

impl StructuralEvent {
    fn new(epoch: usize, kind: EventKind) -> Self {
        StructuralEvent {
            epoch,
            kind,
            rule_index: None,
            attr_index: None,
            weight_value: None,
            val_rmse_before: None,
            val_rmse_after: None,
        }
    }
}

/// Masks attributes whose importance weight stayed below `theta_attr` for
/// `persistence` consecutive checks.
///
/// Streaks increment on every call where the weight sits below the threshold
/// and reset otherwise. The last active attribute of a rule is exempt: this
/// pass never leaves a rule without active attributes (removing whole rules
/// is rule pruning's job).
pub fn prune_attributes(
    rb: &mut RuleBase,
    streaks: &mut [Vec<u32>],
    theta_attr: f64,
    persistence: u32,
    epoch: usize,
) -> Vec<StructuralEvent> {
    assert_eq!(streaks.len(), rb.num_rules, "streak counters out of step");
    let mut events = Vec::new();
    for l in 0..rb.num_rules {
        let mut active = rb.active_attrs(l);
        for i in 0..rb.num_attrs {
            if rb.attr_mask[l][i] != 1 {
                continue;
            }
            let alpha = sigmoid(rb.attr_logits[l][i]);
            if alpha < theta_attr {
                streaks[l][i] += 1;
                if streaks[l][i] >= persistence && active > 1 {
                    rb.attr_mask[l][i] = 0;
                    active -= 1;
                    let mut ev = StructuralEvent::new(epoch, EventKind::PruneAttr);
                    ev.rule_index = Some(l);
                    ev.attr_index = Some(i);
                    ev.weight_value = Some(alpha);
                    events.push(ev);
                }
            } else {
                streaks[l][i] = 0;
            }
        }
    }
    events
}

/// Deletes rules whose importance weight stayed below `theta_rule` for
/// `persistence` consecutive checks.
///
/// At least one rule always survives: if every rule qualifies, the one with
/// the highest importance weight is retained. Removals apply highest index
/// first so each event's `rule_index` is valid when it applies.
pub fn prune_rules(
    rb: &mut RuleBase,
    rule_streaks: &mut Vec<u32>,
    attr_streaks: &mut Vec<Vec<u32>>,
    theta_rule: f64,
    persistence: u32,
    epoch: usize,
) -> Vec<StructuralEvent> {
    assert_eq!(rule_streaks.len(), rb.num_rules, "streak counters out of step");
    let betas = rb.rule_weights();
    for (l, &beta) in betas.iter().enumerate() {
        if beta < theta_rule {
            rule_streaks[l] += 1;
        } else {
            rule_streaks[l] = 0;
        }
    }
    let mut doomed: Vec<usize> = (0..rb.num_rules)
        .filter(|&l| rule_streaks[l] >= persistence)
        .collect();
    if doomed.len() == rb.num_rules {
        // Survivor guarantee: keep the best-weighted rule (lowest index wins ties).
        let keep = (0..rb.num_rules)
            .max_by(|&a, &b| betas[a].partial_cmp(&betas[b]).unwrap().then(b.cmp(&a)))
            .unwrap();
        doomed.retain(|&l| l != keep);
    }
    let mut events = Vec::new();
    for &l in doomed.iter().rev() {
        rb.remove_rule(l);
        rule_streaks.remove(l);
        attr_streaks.remove(l);
        let mut ev = StructuralEvent::new(epoch, EventKind::PruneRule);
        ev.rule_index = Some(l);
        ev.weight_value = Some(betas[l]);
        events.push(ev);
    }
    events
}

/// Adds one rule seeded from the `top_k` highest-|residual| training samples.
///
/// The new rule centers on the per-feature mean of those samples with widths
/// from their per-feature spread (floored); logits and consequents draw from
/// the same distributions used at initialization. Ties in |residual| break
/// toward the lower sample index.
#[allow(clippy::too_many_arguments)]
pub fn grow_rule(
    rb: &mut RuleBase,
    x: &[Vec<f64>],
    residuals: &[f64],
    top_k: usize,
    max_rules: usize,
    rule_logit_init: f64,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<StructuralEvent> {
    if rb.num_rules >= max_rules {
        return Err(Error::AtCapacity { max: max_rules });
    }
    assert_eq!(x.len(), residuals.len(), "residuals out of step with samples");
    assert!(!x.is_empty(), "cannot grow from an empty training set");
    let k = top_k.max(1).min(x.len());
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| {
        residuals[b]
            .abs()
            .partial_cmp(&residuals[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let chosen = &order[..k];

    let d = rb.num_attrs;
    let mut centers = vec![0.0f64; d];
    for &i in chosen {
        for j in 0..d {
            centers[j] += x[i][j];
        }
    }
    for c in centers.iter_mut() {
        *c /= k as f64;
    }
    let mut widths = vec![0.0f64; d];
    for &i in chosen {
        for j in 0..d {
            let diff = x[i][j] - centers[j];
            widths[j] += diff * diff;
        }
    }
    for w in widths.iter_mut() {
        *w = (*w / k as f64).sqrt().max(rb.s_floor);
    }

    let attr_dist = Normal::new(0.0, ATTR_LOGIT_INIT_STD).expect("valid sigma");
    let conseq_dist = Normal::new(0.0, CONSEQUENT_INIT_STD).expect("valid sigma");
    let attr_logits: Vec<f64> = (0..d).map(|_| attr_dist.sample(rng)).collect();
    let consequents: Vec<f64> = (0..d).map(|_| conseq_dist.sample(rng)).collect();
    rb.push_rule(centers, widths, attr_logits, consequents, rule_logit_init);

    let mut ev = StructuralEvent::new(epoch, EventKind::Grow);
    ev.rule_index = Some(rb.num_rules - 1);
    ev.weight_value = Some(sigmoid(rule_logit_init));
    Ok(ev)
}
