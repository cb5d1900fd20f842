//! Prediction accuracy and rule-base interpretability metrics.
//!
//! Besides RMSE this module scores the geometry of the rule base: the average
//! overlap index (how much the rules' Gaussian fuzzy sets overlap per
//! attribute, lower = more distinguishable rules) and the average fuzzy set
//! position index (positional/shape dissimilarity of adjacent fuzzy sets,
//! lower = better placed sets).

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{membership, RuleBase};

const SQRT_2PI: f64 = 2.5066282746310002;
/// Width-difference threshold below which the ψ denominator is treated as zero.
const PSI_EQ_TOL: f64 = 1e-12;
/// Absolute tolerance of the overlap quadrature.
const QUAD_TOL: f64 = 1e-6;

/// Root mean squared error between predictions and observations.
pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::Shape {
            expected: format!("{} values", actual.len()),
            got: format!("{} values", pred.len()),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum_sq: f64 = pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok((sum_sq / pred.len() as f64).sqrt())
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let (left, lm, flm) = simpson(f, a, fa, m, fm);
    let (right, rm, frm) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson_rec(f, a, fa, m, fm, lm, flm, left, tol * 0.5, depth - 1)
        + adaptive_simpson_rec(f, m, fm, b, fb, rm, frm, right, tol * 0.5, depth - 1)
}

/// Adaptive Simpson quadrature over `[a, b]` with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let (whole, m, fm) = simpson(&f, a, fa, b, fb);
    adaptive_simpson_rec(&f, a, fa, b, fb, m, fm, whole, tol, 40)
}

/// Normalized overlapping area of two unnormalized Gaussians.
///
/// `∫ min(μ1, μ2) dx / min(∫μ1, ∫μ2)`; the numerator is integrated over an
/// 8-sigma window around both centers, the denominator is `min(s1,s2)·√(2π)`
/// in closed form. Result lies in `[0, 1]`, equal to 1 exactly for identical
/// Gaussians.
///
/// The window is pre-split at sigma-scale knots of both Gaussians before the
/// adaptive recursion: the overlap of well-separated sets is a narrow bump a
/// coarse whole-interval estimate would never sample.
pub fn pairwise_overlap(v1: f64, s1: f64, v2: f64, s2: f64) -> f64 {
    assert!(s1 > 0.0 && s2 > 0.0, "widths must be positive");
    let s_max = s1.max(s2);
    let lo = v1.min(v2) - 8.0 * s_max;
    let hi = v1.max(v2) + 8.0 * s_max;
    let mut knots = vec![lo, hi];
    for &(v, s) in &[(v1, s1), (v2, s2)] {
        for k in [-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0] {
            let x = v + k * s;
            if x > lo && x < hi {
                knots.push(x);
            }
        }
    }
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    knots.dedup();
    let f = |x: f64| membership(x, v1, s1).min(membership(x, v2, s2));
    let seg_tol = QUAD_TOL / (knots.len() - 1) as f64;
    let num: f64 = knots
        .windows(2)
        .map(|seg| adaptive_simpson(f, seg[0], seg[1], seg_tol))
        .sum();
    let den = s1.min(s2) * SQRT_2PI;
    (num / den).clamp(0.0, 1.0)
}

/// Fuzzy sets of attribute `d` that still exist (mask 1): `(center, width)`.
fn active_sets(rb: &RuleBase, d: usize) -> Vec<(f64, f64)> {
    (0..rb.num_rules)
        .filter(|&l| rb.attr_mask[l][d] == 1)
        .map(|l| (rb.centers[l][d], rb.widths[l][d]))
        .collect()
}

/// Average overlap index: mean over attributes of the maximum pairwise
/// normalized overlap among that attribute's fuzzy sets.
///
/// Masked `(rule, attribute)` sets no longer exist and are excluded from the
/// pair search; fewer than two rules (or two surviving sets) contribute 0.
pub fn overlap_index(rb: &RuleBase) -> f64 {
    if rb.num_rules < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for d in 0..rb.num_attrs {
        let sets = active_sets(rb, d);
        let mut best = 0.0f64;
        for i in 0..sets.len() {
            for j in (i + 1)..sets.len() {
                let ov = pairwise_overlap(sets[i].0, sets[i].1, sets[j].0, sets[j].1);
                if ov > best {
                    best = ov;
                }
            }
        }
        total += best;
    }
    total / rb.num_attrs as f64
}

/// Position/shape similarity of two adjacent fuzzy sets sorted by center:
/// `φ` uses the width sum in its denominator, `ψ` the width difference.
/// When the widths coincide, `ψ` is 1 if the centers also coincide and 0
/// otherwise (limit conventions for the singular denominator).
fn adjacent_pair_term(v1: f64, s1: f64, v2: f64, s2: f64) -> f64 {
    let dv = v1 - v2;
    let phi = (-0.5 * (dv / (s1 + s2)).powi(2)).exp();
    let ds = s1 - s2;
    let psi = if ds.abs() < PSI_EQ_TOL {
        if dv.abs() < PSI_EQ_TOL {
            1.0
        } else {
            0.0
        }
    } else {
        (-0.5 * (dv / ds).powi(2)).exp()
    };
    2.0 * (0.5 - phi + psi)
}

/// Average fuzzy set position index: per attribute, fuzzy sets are sorted by
/// center and adjacent pairs scored; the total is normalized by `L·D`.
///
/// Masked sets are excluded before sorting; fewer than two rules yield 0.
pub fn fsp_index(rb: &RuleBase) -> f64 {
    if rb.num_rules < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for d in 0..rb.num_attrs {
        let mut sets = active_sets(rb, d);
        sets.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for pair in sets.windows(2) {
            total += adjacent_pair_term(pair[0].0, pair[0].1, pair[1].0, pair[1].1);
        }
    }
    total / (rb.num_rules * rb.num_attrs) as f64
}

/// `(final_rules, final_attributes)`: rule count and total active mask entries.
pub fn structural_counts(rb: &RuleBase) -> (usize, usize) {
    (rb.num_rules, rb.total_active_attributes())
}

/// Metrics of one trained model on one evaluation split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Test RMSE in original target units.
    pub rmse: f64,
    /// Test RMSE in standardized target units.
    pub rmse_standardized: f64,
    pub i_ov: f64,
    pub i_fsp: f64,
    pub final_rules: usize,
    pub final_attributes: usize,
}

impl MetricsReport {
    /// Evaluates `rb` on the dataset's test split.
    ///
    /// Predictions and targets are destandardized through the dataset's
    /// normalization statistics before the original-units RMSE.
    pub fn evaluate(rb: &RuleBase, data: &Dataset) -> Result<MetricsReport> {
        let (x_test, y_test) = data.rows(&data.test_idx);
        let pred_std = rb.predict_batch(&x_test)?;
        let rmse_std = rmse(&pred_std, &y_test)?;
        let pred: Vec<f64> = pred_std
            .iter()
            .map(|&p| data.destandardize_target(p))
            .collect();
        let actual: Vec<f64> = y_test
            .iter()
            .map(|&t| data.destandardize_target(t))
            .collect();
        let rmse_orig = rmse(&pred, &actual)?;
        let (final_rules, final_attributes) = structural_counts(rb);
        Ok(MetricsReport {
            rmse: rmse_orig,
            rmse_standardized: rmse_std,
            i_ov: overlap_index(rb),
            i_fsp: fsp_index(rb),
            final_rules,
            final_attributes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn set_rb(centers: Vec<Vec<f64>>, widths: Vec<Vec<f64>>) -> RuleBase {
        let l = centers.len();
        let d = centers[0].len();
        RuleBase {
            num_rules: l,
            num_attrs: d,
            attr_logits: vec![vec![0.0; d]; l],
            attr_mask: vec![vec![1; d]; l],
            rule_logits: vec![1.0; l],
            consequents: vec![vec![0.0; d]; l],
            bias: vec![0.0; l],
            centers,
            widths,
            use_bias: false,
            strict_firing: false,
            epsilon: 1e-9,
            s_floor: 1e-3,
        }
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        // Residuals (3, 4) → sqrt(12.5).
        assert_abs_diff_eq!(
            rmse(&[3.0, 0.0], &[0.0, 4.0]).unwrap(),
            12.5f64.sqrt(),
            epsilon = 1e-12
        );
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rmse_invariant_under_common_permutation() {
        let pred = [1.0, -2.0, 0.5, 3.0];
        let actual = [0.5, -1.0, 0.0, 4.0];
        let a = rmse(&pred, &actual).unwrap();
        let perm = [2usize, 0, 3, 1];
        let pred_p: Vec<f64> = perm.iter().map(|&i| pred[i]).collect();
        let actual_p: Vec<f64> = perm.iter().map(|&i| actual[i]).collect();
        let b = rmse(&pred_p, &actual_p).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
    }

    #[test]
    fn overlap_of_identical_gaussians_is_one() {
        assert_abs_diff_eq!(pairwise_overlap(0.3, 0.8, 0.3, 0.8), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn overlap_closed_form_unit_widths() {
        // Equal unit widths, centers two apart: 2·(1 − Φ(1)).
        let expected = 0.31731050786291415;
        assert_abs_diff_eq!(pairwise_overlap(0.0, 1.0, 2.0, 1.0), expected, epsilon = 1e-4);
    }

    /// Fine-grid trapezoid oracle, step 1e-4, over the same 8-sigma window.
    fn trapezoid_overlap(v1: f64, s1: f64, v2: f64, s2: f64) -> f64 {
        let s_max = s1.max(s2);
        let lo = v1.min(v2) - 8.0 * s_max;
        let hi = v1.max(v2) + 8.0 * s_max;
        let step = 1e-4;
        let n = ((hi - lo) / step).ceil() as usize;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| membership(x, v1, s1).min(membership(x, v2, s2));
        let mut sum = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            sum += f(lo + i as f64 * h);
        }
        (sum * h) / (s1.min(s2) * SQRT_2PI)
    }

    #[test]
    fn overlap_nested_gaussians_matches_trapezoid_oracle() {
        let got = pairwise_overlap(0.0, 1.0, 0.0, 2.0);
        let want = trapezoid_overlap(0.0, 1.0, 0.0, 2.0);
        assert_abs_diff_eq!(got, want, epsilon = 1e-4);
        // Concentric equal-peak Gaussians: the narrower lies below the wider
        // everywhere, so min = μ_narrow and the normalized ratio is 1.
        assert_abs_diff_eq!(got, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn overlap_quadrature_agrees_with_trapezoid_on_random_pairs() {
        let mut rng = crate::seed::stream_rng(11, 77, 0);
        for _ in 0..100 {
            let v1 = rng.random_range(-2.0..2.0);
            let v2 = rng.random_range(-2.0..2.0);
            let s1 = rng.random_range(0.2..2.0);
            let s2 = rng.random_range(0.2..2.0);
            let got = pairwise_overlap(v1, s1, v2, s2);
            let want = trapezoid_overlap(v1, s1, v2, s2);
            assert!(
                (got - want).abs() < 1e-4,
                "overlap mismatch at v1={v1} s1={s1} v2={v2} s2={s2}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn overlap_is_symmetric() {
        let mut rng = crate::seed::stream_rng(12, 77, 0);
        for _ in 0..25 {
            let (v1, v2) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let (s1, s2) = (rng.random_range(0.2..2.0), rng.random_range(0.2..2.0));
            let a = pairwise_overlap(v1, s1, v2, s2);
            let b = pairwise_overlap(v2, s2, v1, s1);
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn overlap_index_extremes() {
        // Identical rules on every attribute → 1.
        let rb = set_rb(vec![vec![0.0, 1.0]; 2], vec![vec![1.0, 0.5]; 2]);
        assert_abs_diff_eq!(overlap_index(&rb), 1.0, epsilon = 1e-6);

        // Centers 20 widths apart → essentially no overlap.
        let rb = set_rb(
            vec![vec![0.0], vec![20.0]],
            vec![vec![1.0], vec![1.0]],
        );
        assert!(overlap_index(&rb) < 1e-8);

        // Single rule → 0 by convention.
        let rb = set_rb(vec![vec![0.0]], vec![vec![1.0]]);
        assert_eq!(overlap_index(&rb), 0.0);
    }

    #[test]
    fn overlap_index_ignores_masked_sets() {
        let mut rb = set_rb(
            vec![vec![0.0], vec![0.0], vec![20.0]],
            vec![vec![1.0], vec![1.0], vec![1.0]],
        );
        // Rules 0 and 1 coincide; masking rule 1's set removes the overlap.
        assert_abs_diff_eq!(overlap_index(&rb), 1.0, epsilon = 1e-6);
        rb.attr_mask[1][0] = 0;
        assert!(overlap_index(&rb) < 1e-8);
    }

    #[test]
    fn fsp_hand_case() {
        // D=1, L=2, v=(0,2), s=(1,0.5).
        let rb = set_rb(vec![vec![0.0], vec![2.0]], vec![vec![1.0], vec![0.5]]);
        let phi = (-0.5f64 * (2.0 / 1.5f64).powi(2)).exp();
        let psi = (-8.0f64).exp();
        let expected = 2.0 * (0.5 - phi + psi) / 2.0;
        assert_abs_diff_eq!(fsp_index(&rb), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(fsp_index(&rb), 0.0892232, epsilon = 1e-6);
    }

    #[test]
    fn fsp_degenerate_conventions() {
        // Identical sets: φ=1, ψ=1 → index 0.5 for L=2, D=1.
        let rb = set_rb(vec![vec![1.0], vec![1.0]], vec![vec![0.7], vec![0.7]]);
        assert_abs_diff_eq!(fsp_index(&rb), 0.5, epsilon = 1e-12);

        // Equal widths, distinct centers: ψ=0 exactly.
        let rb = set_rb(vec![vec![0.0], vec![2.0]], vec![vec![1.0], vec![1.0]]);
        let phi = (-0.5f64 * 1.0f64).exp();
        assert_abs_diff_eq!(fsp_index(&rb), 2.0 * (0.5 - phi) / 2.0, epsilon = 1e-12);

        // Single rule → 0.
        let rb = set_rb(vec![vec![0.0]], vec![vec![1.0]]);
        assert_eq!(fsp_index(&rb), 0.0);
    }

    #[test]
    fn indices_invariant_under_rule_reordering() {
        let mut rng = crate::seed::stream_rng(13, 77, 0);
        let l = 4;
        let d = 3;
        let centers: Vec<Vec<f64>> = (0..l)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let widths: Vec<Vec<f64>> = (0..l)
            .map(|_| (0..d).map(|_| rng.random_range(0.3..1.5)).collect())
            .collect();
        let rb = set_rb(centers.clone(), widths.clone());
        let perm = [2usize, 0, 3, 1];
        let rb2 = set_rb(
            perm.iter().map(|&p| centers[p].clone()).collect(),
            perm.iter().map(|&p| widths[p].clone()).collect(),
        );
        assert_abs_diff_eq!(overlap_index(&rb), overlap_index(&rb2), epsilon = 1e-9);
        assert_abs_diff_eq!(fsp_index(&rb), fsp_index(&rb2), epsilon = 1e-12);
    }

    #[test]
    fn structural_count_examples() {
        let mut rb = set_rb(vec![vec![0.0; 10]; 5], vec![vec![1.0; 10]; 5]);
        assert_eq!(structural_counts(&rb), (5, 50));
        rb.attr_mask[0][0] = 0;
        rb.attr_mask[2][4] = 0;
        rb.attr_mask[4][9] = 0;
        assert_eq!(structural_counts(&rb), (5, 47));
        // 9 rules over 27 attributes cap out at 243 active entries.
        let wide = set_rb(vec![vec![0.0; 27]; 9], vec![vec![1.0; 27]; 9]);
        assert_eq!(structural_counts(&wide), (9, 243));
    }

    #[test]
    fn fsp_index_excludes_masked_sets() {
        // Three sets; the middle one sits far away. Masking it removes the
        // distant adjacencies and leaves one close pair.
        let mut rb = set_rb(
            vec![vec![0.0], vec![50.0], vec![2.0]],
            vec![vec![1.0], vec![1.0], vec![0.5]],
        );
        let with_all = fsp_index(&rb);
        rb.attr_mask[1][0] = 0;
        let phi = (-0.5f64 * (2.0 / 1.5f64).powi(2)).exp();
        let psi = (-8.0f64).exp();
        let expected = 2.0 * (0.5 - phi + psi) / 3.0; // normalizer stays L·D
        assert_abs_diff_eq!(fsp_index(&rb), expected, epsilon = 1e-12);
        assert!(fsp_index(&rb) != with_all);
    }

    #[test]
    fn report_units_are_algebraically_consistent() {
        // Destandardize-then-RMSE equals standardized RMSE scaled by the
        // target std; two routes to the same quantity.
        let (data, _) = crate::data::synthesize(
            crate::data::SyntheticKind::PiecewiseLinear,
            200,
            2,
            0.1,
            3,
        )
        .unwrap();
        let rb = crate::init::init_rulebase(
            &data.rows(&data.train_idx).0,
            3,
            3,
            &crate::train::TrainConfig::default(),
        )
        .unwrap();
        let m = MetricsReport::evaluate(&rb, &data).unwrap();
        assert_abs_diff_eq!(
            m.rmse,
            m.rmse_standardized * data.norm.target_std,
            epsilon = 1e-9
        );
        assert_eq!(m.final_rules, 3);
        assert_eq!(m.final_attributes, 6);
    }
}
