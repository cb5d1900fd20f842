//! Data-driven rule-base initialization: K-means cluster centers become
//! Gaussian centers, per-cluster feature spread becomes the widths.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::RuleBase;
use crate::seed::{stream, stream_rng};
use crate::train::TrainConfig;

/// Standard deviation of the attribute-logit initialization.
pub const ATTR_LOGIT_INIT_STD: f64 = 0.5;
/// Standard deviation of the consequent initialization.
pub const CONSEQUENT_INIT_STD: f64 = 0.1;

const MAX_ITERS: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances of every point to its assigned center.
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center index with lowest-index tie-breaking.
fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = sq_dist(point, &centers[0]);
    for (c, center) in centers.iter().enumerate().skip(1) {
        let d = sq_dist(point, center);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best, best_d)
}

/// k-means++ seeding: the first center is uniform, later ones are sampled
/// proportionally to the squared distance from the nearest chosen center.
fn seed_centers(x: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(x[rng.random_range(0..n)].clone());
    let mut dist: Vec<f64> = x.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                u -= d;
                if u <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining points coincide with chosen centers; cycle
            // deterministically so the count still comes out to k.
            centers.len() % n
        };
        centers.push(x[next].clone());
        for (i, p) in x.iter().enumerate() {
            let d = sq_dist(p, centers.last().unwrap());
            if d < dist[i] {
                dist[i] = d;
            }
        }
    }
    centers
}

fn lloyd(x: &[Vec<f64>], mut centers: Vec<Vec<f64>>, max_iters: usize) -> KMeansResult {
    let d = x[0].len();
    let k = centers.len();
    let mut assignments: Vec<usize> = x.iter().map(|p| nearest(p, &centers).0).collect();
    for _ in 0..max_iters {
        // Means of the assigned points.
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in x.iter().zip(&assignments) {
            counts[a] += 1;
            for j in 0..d {
                sums[a][j] += p[j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centers[c][j] = sums[c][j] / counts[c] as f64;
                }
            } else {
                // Empty cluster: re-seed at the point farthest from its own
                // assigned center (lowest index on ties).
                let mut far = 0;
                let mut far_d = -1.0;
                for (i, p) in x.iter().enumerate() {
                    let dist = sq_dist(p, &centers[assignments[i]]);
                    if dist > far_d {
                        far = i;
                        far_d = dist;
                    }
                }
                centers[c] = x[far].clone();
            }
        }
        let new_assignments: Vec<usize> = x.iter().map(|p| nearest(p, &centers).0).collect();
        let converged = new_assignments == assignments;
        assignments = new_assignments;
        if converged {
            break;
        }
    }
    let inertia = x
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| sq_dist(p, &centers[a]))
        .sum();
    KMeansResult {
        centers,
        assignments,
        inertia,
    }
}

/// Deterministic seeded K-means over the rows of `x`.
pub fn kmeans(x: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if x.len() < k {
        return Err(Error::Config(format!(
            "cannot form {k} clusters from {} points",
            x.len()
        )));
    }
    let mut rng = stream_rng(seed, stream::KMEANS, 0);
    let centers = seed_centers(x, k, &mut rng);
    Ok(lloyd(x, centers, MAX_ITERS))
}

/// Builds the initial rule base from (standardized) training data.
///
/// Centers come from K-means centroids, widths from the per-cluster
/// per-feature population standard deviation (floored), attribute logits are
/// Gaussian-sampled, masks start fully active, rule logits start equal so all
/// rules contribute equally, and consequents get a small symmetric-breaking
/// Gaussian draw.
pub fn init_rulebase(x: &[Vec<f64>], k: usize, seed: u64, cfg: &TrainConfig) -> Result<RuleBase> {
    let km = kmeans(x, k, seed)?;
    let d = x[0].len();

    let mut widths = vec![vec![0.0f64; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in x.iter().zip(&km.assignments) {
        counts[a] += 1;
        for j in 0..d {
            let diff = p[j] - km.centers[a][j];
            widths[a][j] += diff * diff;
        }
    }
    for c in 0..k {
        for j in 0..d {
            let std = if counts[c] > 0 {
                (widths[c][j] / counts[c] as f64).sqrt()
            } else {
                0.0
            };
            widths[c][j] = std.max(cfg.s_floor);
        }
    }

    let mut rng = stream_rng(seed, stream::INIT_PARAMS, 0);
    let attr_dist = Normal::new(0.0, ATTR_LOGIT_INIT_STD).expect("valid sigma");
    let conseq_dist = Normal::new(0.0, CONSEQUENT_INIT_STD).expect("valid sigma");
    let attr_logits: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| attr_dist.sample(&mut rng)).collect())
        .collect();
    let consequents: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| conseq_dist.sample(&mut rng)).collect())
        .collect();

    let rb = RuleBase {
        num_rules: k,
        num_attrs: d,
        centers: km.centers,
        widths,
        attr_logits,
        attr_mask: vec![vec![1; d]; k],
        rule_logits: vec![cfg.rule_logit_init; k],
        consequents,
        bias: vec![0.0; k],
        use_bias: cfg.use_bias,
        strict_firing: cfg.strict_firing,
        epsilon: cfg.epsilon,
        s_floor: cfg.s_floor,
    };
    rb.validate()?;
    Ok(rb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn repeated_distinct_points_become_their_own_centers() {
        // Three distinct points, each repeated: zero inertia, exact centers.
        let pts = [vec![0.0, 0.0], vec![5.0, 5.0], vec![-4.0, 2.0]];
        let mut x = Vec::new();
        for p in &pts {
            for _ in 0..4 {
                x.push(p.clone());
            }
        }
        let km = kmeans(&x, 3, 1).unwrap();
        assert_abs_diff_eq!(km.inertia, 0.0, epsilon = 1e-18);
        let mut got: Vec<Vec<f64>> = km.centers.clone();
        got.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        let mut want = pts.to_vec();
        want.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(g[0], w[0], epsilon = 1e-12);
            assert_abs_diff_eq!(g[1], w[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn two_separated_blobs_are_recovered() {
        let mut rng = crate::seed::stream_rng(2, 55, 0);
        let mut x = Vec::new();
        let mut true_means = [[0.0f64; 2]; 2];
        for (b, base) in [(0usize, [0.0, 0.0]), (1usize, [10.0, 10.0])] {
            for _ in 0..60 {
                let p = vec![
                    base[0] + 0.1 * (rng.random::<f64>() - 0.5),
                    base[1] + 0.1 * (rng.random::<f64>() - 0.5),
                ];
                true_means[b][0] += p[0] / 60.0;
                true_means[b][1] += p[1] / 60.0;
                x.push(p);
            }
        }
        let km = kmeans(&x, 2, 7).unwrap();
        // Compare each center against the exhaustive per-blob mean.
        for center in &km.centers {
            let blob = if center[0] < 5.0 { 0 } else { 1 };
            assert!((center[0] - true_means[blob][0]).abs() < 0.2);
            assert!((center[1] - true_means[blob][1]).abs() < 0.2);
        }
        assert_ne!(
            km.centers[0][0] < 5.0,
            km.centers[1][0] < 5.0,
            "both centers landed on one blob"
        );
    }

    #[test]
    fn k_one_yields_column_means() {
        let x = vec![vec![1.0, 10.0], vec![3.0, 20.0], vec![5.0, 30.0]];
        let km = kmeans(&x, 1, 3).unwrap();
        assert_abs_diff_eq!(km.centers[0][0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(km.centers[0][1], 20.0, epsilon = 1e-12);
    }

    #[test]
    fn too_few_points_is_a_config_error() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(kmeans(&x, 3, 1).is_err());
        assert!(kmeans(&x, 0, 1).is_err());
    }

    #[test]
    fn inertia_non_increasing_over_iterations() {
        let mut rng = crate::seed::stream_rng(4, 55, 0);
        let x: Vec<Vec<f64>> = (0..80)
            .map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
            .collect();
        let mut seeding_rng = stream_rng(9, stream::KMEANS, 0);
        let seeds = seed_centers(&x, 4, &mut seeding_rng);
        let mut last = f64::INFINITY;
        for iters in 1..=12 {
            let km = lloyd(&x, seeds.clone(), iters);
            assert!(
                km.inertia <= last + 1e-9,
                "inertia rose at iteration {iters}: {last} -> {}",
                km.inertia
            );
            last = km.inertia;
        }
    }

    #[test]
    fn init_rulebase_floors_singleton_cluster_widths() {
        let cfg = TrainConfig::default();
        // Two tight duplicates plus one outlier: the outlier forms a
        // single-point cluster whose widths collapse to the floor.
        let x = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![50.0, 50.0],
        ];
        let rb = init_rulebase(&x, 2, 11, &cfg).unwrap();
        let singleton = (0..2)
            .find(|&l| rb.centers[l][0] > 10.0)
            .expect("outlier cluster present");
        assert_eq!(rb.widths[singleton], vec![cfg.s_floor; 2]);
    }

    #[test]
    fn k_one_on_standardized_data_gives_origin_center_unit_width() {
        let mut rng = crate::seed::stream_rng(6, 55, 0);
        let n = 400;
        let raw: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                vec![
                    rng.random::<f64>() * 4.0 - 2.0,
                    rng.random::<f64>() * 6.0 + 1.0,
                ]
            })
            .collect();
        // Standardize columns directly for the oracle comparison.
        let mut x = raw.clone();
        for j in 0..2 {
            let mean = raw.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = raw.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            for row in x.iter_mut() {
                row[j] = (row[j] - mean) / std;
            }
        }
        let rb = init_rulebase(&x, 1, 1, &TrainConfig::default()).unwrap();
        for j in 0..2 {
            assert!(rb.centers[0][j].abs() < 0.05, "center {}", rb.centers[0][j]);
            assert!((rb.widths[0][j] - 1.0).abs() < 0.05, "width {}", rb.widths[0][j]);
        }
    }

    #[test]
    fn init_is_bit_identical_for_fixed_seed() {
        let mut rng = crate::seed::stream_rng(8, 55, 0);
        let x: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let cfg = TrainConfig::default();
        let a = init_rulebase(&x, 4, 123, &cfg).unwrap();
        let b = init_rulebase(&x, 4, 123, &cfg).unwrap();
        assert_eq!(a, b);
        let c = init_rulebase(&x, 4, 124, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_starts_with_equal_rule_logits_and_full_masks() {
        let mut rng = crate::seed::stream_rng(10, 55, 0);
        let x: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let cfg = TrainConfig::default();
        let rb = init_rulebase(&x, 3, 5, &cfg).unwrap();
        assert!(rb.rule_logits.iter().all(|&w| w == cfg.rule_logit_init));
        assert_eq!(rb.total_active_attributes(), 6);
        let betas = rb.rule_weights();
        assert!(betas.windows(2).all(|p| p[0] == p[1]));
    }
}
