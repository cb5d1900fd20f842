//! Rule-base parameterization and the forward inference path.
//!
//! A rule base holds `L` fuzzy rules over `D` input attributes. Each rule
//! carries per-attribute Gaussian membership functions, a learnable
//! attribute-importance logit per attribute, a binary attribute mask, a
//! learnable rule-importance logit, and linear consequent coefficients.
//! Inference multiplies masked, importance-weighted memberships into firing
//! strengths, scales them by rule importance, normalizes, and mixes the
//! per-rule linear outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gaussian membership degree of `x` in the fuzzy set with center `v` and width `s`.
#[inline]
pub fn membership(x: f64, v: f64, s: f64) -> f64 {
    let z = (x - v) / s;
    (-0.5 * z * z).exp()
}

/// Importance-scaled firing strengths normalized against their own sum.
///
/// `w[l] = f[l]·β[l] / (Σ_m f[m]·β[m] + ε)`. With all-zero firing the result
/// is the zero vector; `ε` keeps the division defined.
pub fn normalized_activations(firing: &[f64], beta: &[f64], epsilon: f64) -> Vec<f64> {
    let f_tilde: Vec<f64> = firing.iter().zip(beta).map(|(f, b)| f * b).collect();
    let denom: f64 = f_tilde.iter().sum::<f64>() + epsilon;
    f_tilde.iter().map(|ft| ft / denom).collect()
}

/// All learnable parameters and masks of the fuzzy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleBase {
    pub num_rules: usize,
    pub num_attrs: usize,
    /// Gaussian centers, one row per rule (standardized-feature units).
    pub centers: Vec<Vec<f64>>,
    /// Gaussian widths, strictly positive; kept at or above `s_floor`.
    pub widths: Vec<Vec<f64>>,
    /// Pre-activation attribute importance scores.
    pub attr_logits: Vec<Vec<f64>>,
    /// Binary attribute masks; 0 removes the attribute from its rule.
    pub attr_mask: Vec<Vec<u8>>,
    /// Pre-activation rule importance scores.
    pub rule_logits: Vec<f64>,
    /// Per-attribute linear consequent coefficients.
    pub consequents: Vec<Vec<f64>>,
    /// Per-rule intercepts; read only when `use_bias` is set.
    pub bias: Vec<f64>,
    pub use_bias: bool,
    /// Literal masked-factor semantics: a masked attribute contributes a zero
    /// factor and kills its rule's firing, instead of being skipped.
    pub strict_firing: bool,
    /// Guard added to the activation denominator.
    pub epsilon: f64,
    /// Lower bound maintained on all widths.
    pub s_floor: f64,
}

/// Per-sample intermediates of one forward pass, retained for backpropagation
/// and diagnostics.
#[derive(Debug, Clone, Default)]
pub struct InferenceTrace {
    pub alpha: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub firing: Vec<f64>,
    pub beta: Vec<f64>,
    pub f_tilde: Vec<f64>,
    pub w: Vec<f64>,
    pub rule_out: Vec<f64>,
    pub y: f64,
    /// Activation denominator `Σ f̃ + ε`.
    pub denom: f64,
}

impl InferenceTrace {
    fn resize(&mut self, num_rules: usize, num_attrs: usize) {
        self.alpha.resize(num_rules, Vec::new());
        self.mu.resize(num_rules, Vec::new());
        for row in self.alpha.iter_mut().chain(self.mu.iter_mut()) {
            row.resize(num_attrs, 0.0);
        }
        self.firing.resize(num_rules, 0.0);
        self.beta.resize(num_rules, 0.0);
        self.f_tilde.resize(num_rules, 0.0);
        self.w.resize(num_rules, 0.0);
        self.rule_out.resize(num_rules, 0.0);
    }
}

impl RuleBase {
    /// Checks the structural invariants; call after hand-editing parameters.
    pub fn validate(&self) -> Result<()> {
        let (l, d) = (self.num_rules, self.num_attrs);
        if l == 0 || d == 0 {
            return Err(Error::Config("rule base needs at least 1 rule and 1 attribute".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.s_floor <= 0.0 {
            return Err(Error::Config("width floor must be positive".into()));
        }
        let rows_ok = |m: &Vec<Vec<f64>>| m.len() == l && m.iter().all(|r| r.len() == d);
        if !(rows_ok(&self.centers)
            && rows_ok(&self.widths)
            && rows_ok(&self.attr_logits)
            && rows_ok(&self.consequents)
            && self.attr_mask.len() == l
            && self.attr_mask.iter().all(|r| r.len() == d)
            && self.rule_logits.len() == l
            && self.bias.len() == l)
        {
            return Err(Error::Shape {
                expected: format!("{l}x{d} parameter grids"),
                got: "inconsistent row/column counts".into(),
            });
        }
        for row in &self.widths {
            for &s in row {
                if !(s.is_finite() && s >= self.s_floor) {
                    return Err(Error::Config(format!(
                        "width {s} below floor {}",
                        self.s_floor
                    )));
                }
            }
        }
        for row in &self.attr_mask {
            for &m in row {
                if m > 1 {
                    return Err(Error::Config(format!("mask entry {m} is not 0/1")));
                }
            }
        }
        Ok(())
    }

    /// Clamps every width to at least `s_floor`; call after parameter updates.
    pub fn floor_widths(&mut self) {
        for row in &mut self.widths {
            for s in row {
                if *s < self.s_floor {
                    *s = self.s_floor;
                }
            }
        }
    }

    /// Masked, sigmoid-activated attribute importance weights `α[l][i]`.
    pub fn attribute_weights(&self) -> Vec<Vec<f64>> {
        self.attr_logits
            .iter()
            .zip(&self.attr_mask)
            .map(|(logits, mask)| {
                logits
                    .iter()
                    .zip(mask)
                    .map(|(&w, &m)| sigmoid(w) * m as f64)
                    .collect()
            })
            .collect()
    }

    /// Sigmoid-activated rule importance weights `β[l]`.
    pub fn rule_weights(&self) -> Vec<f64> {
        self.rule_logits.iter().map(|&w| sigmoid(w)).collect()
    }

    /// Number of active (unmasked) attributes in rule `l`.
    pub fn active_attrs(&self, l: usize) -> usize {
        self.attr_mask[l].iter().map(|&m| m as usize).sum()
    }

    /// Total count of active mask entries across all rules.
    pub fn total_active_attributes(&self) -> usize {
        (0..self.num_rules).map(|l| self.active_attrs(l)).sum()
    }

    fn rule_firing(&self, l: usize, mu_row: &[f64], alpha_row: &[f64]) -> f64 {
        if self.strict_firing {
            // Literal product over every attribute: masked α=0 zeroes the rule.
            return mu_row
                .iter()
                .zip(alpha_row)
                .fold(1.0, |acc, (m, a)| acc * m * a);
        }
        // Product over active attributes only; a pruned attribute no longer
        // affects the rule. A rule with no active attributes is inert.
        let mut f = 1.0;
        let mut any = false;
        for i in 0..self.num_attrs {
            if self.attr_mask[l][i] == 1 {
                f *= mu_row[i] * alpha_row[i];
                any = true;
            }
        }
        if any {
            f
        } else {
            0.0
        }
    }

    /// Product-aggregated importance-weighted firing strengths `f[l]` for one sample.
    pub fn firing_strengths(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.num_attrs, "input dimension mismatch");
        let alpha = self.attribute_weights();
        (0..self.num_rules)
            .map(|l| {
                let mu: Vec<f64> = (0..self.num_attrs)
                    .map(|i| membership(x[i], self.centers[l][i], self.widths[l][i]))
                    .collect();
                self.rule_firing(l, &mu, &alpha[l])
            })
            .collect()
    }

    /// Per-rule consequent outputs: linear combination of active attributes.
    pub fn rule_outputs(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.num_attrs, "input dimension mismatch");
        (0..self.num_rules)
            .map(|l| {
                let mut y = if self.use_bias { self.bias[l] } else { 0.0 };
                for i in 0..self.num_attrs {
                    if self.attr_mask[l][i] == 1 {
                        y += self.consequents[l][i] * x[i];
                    }
                }
                y
            })
            .collect()
    }

    /// Full forward pass for one sample, filling `trace` in place.
    pub fn forward_into(&self, x: &[f64], trace: &mut InferenceTrace) {
        assert_eq!(x.len(), self.num_attrs, "input dimension mismatch");
        trace.resize(self.num_rules, self.num_attrs);
        let mut sum_ft = 0.0;
        for l in 0..self.num_rules {
            for i in 0..self.num_attrs {
                trace.mu[l][i] = membership(x[i], self.centers[l][i], self.widths[l][i]);
                trace.alpha[l][i] = sigmoid(self.attr_logits[l][i]) * self.attr_mask[l][i] as f64;
            }
            trace.firing[l] = self.rule_firing(l, &trace.mu[l], &trace.alpha[l]);
            trace.beta[l] = sigmoid(self.rule_logits[l]);
            trace.f_tilde[l] = trace.firing[l] * trace.beta[l];
            sum_ft += trace.f_tilde[l];

            let mut y = if self.use_bias { self.bias[l] } else { 0.0 };
            for i in 0..self.num_attrs {
                if self.attr_mask[l][i] == 1 {
                    y += self.consequents[l][i] * x[i];
                }
            }
            trace.rule_out[l] = y;
        }
        trace.denom = sum_ft + self.epsilon;
        let mut y = 0.0;
        for l in 0..self.num_rules {
            trace.w[l] = trace.f_tilde[l] / trace.denom;
            y += trace.w[l] * trace.rule_out[l];
        }
        trace.y = y;
    }

    /// Predicts one sample and returns the prediction with its trace.
    pub fn predict(&self, x: &[f64]) -> (f64, InferenceTrace) {
        let mut trace = InferenceTrace::default();
        self.forward_into(x, &mut trace);
        (trace.y, trace)
    }

    /// Predicts every row of `x`; rejects rows whose width differs from `D`.
    pub fn predict_batch(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(x.len());
        let mut trace = InferenceTrace::default();
        for row in x {
            if row.len() != self.num_attrs {
                return Err(Error::Shape {
                    expected: format!("{} columns", self.num_attrs),
                    got: format!("{} columns", row.len()),
                });
            }
            self.forward_into(row, &mut trace);
            out.push(trace.y);
        }
        Ok(out)
    }

    /// Removes rule `l`, dropping its row from every parameter grid.
    pub fn remove_rule(&mut self, l: usize) {
        assert!(l < self.num_rules && self.num_rules > 1);
        self.centers.remove(l);
        self.widths.remove(l);
        self.attr_logits.remove(l);
        self.attr_mask.remove(l);
        self.rule_logits.remove(l);
        self.consequents.remove(l);
        self.bias.remove(l);
        self.num_rules -= 1;
    }

    /// Appends a fully specified rule row.
    pub fn push_rule(
        &mut self,
        centers: Vec<f64>,
        widths: Vec<f64>,
        attr_logits: Vec<f64>,
        consequents: Vec<f64>,
        rule_logit: f64,
    ) {
        assert_eq!(centers.len(), self.num_attrs);
        self.centers.push(centers);
        self.widths.push(widths);
        self.attr_logits.push(attr_logits);
        self.attr_mask.push(vec![1; self.num_attrs]);
        self.rule_logits.push(rule_logit);
        self.consequents.push(consequents);
        self.bias.push(0.0);
        self.num_rules += 1;
        self.floor_widths();
    }

    /// Serializes to a JSON document; round-trips finite doubles exactly.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<RuleBase> {
        let rb: RuleBase = serde_json::from_str(text)?;
        rb.validate()?;
        Ok(rb)
    }
}
