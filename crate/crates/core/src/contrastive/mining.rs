use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::distance::{chain_pair_grads, pairwise_distances};
use super::DistanceMetric;
use crate::error::{Error, Result};

/// Hinge on relative distances: `max(0, d_ap - d_an + m)`.
pub fn triplet_loss(d_ap: f64, d_an: f64, margin: f64) -> f64 {
    (d_ap - d_an + margin).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiningStrategy {
    #[default]
    BatchAll,
    BatchHard,
    BatchSemiHard,
}

impl MiningStrategy {
    pub const ALL: [MiningStrategy; 3] = [
        MiningStrategy::BatchAll,
        MiningStrategy::BatchSemiHard,
        MiningStrategy::BatchHard,
    ];
}

impl fmt::Display for MiningStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MiningStrategy::BatchAll => "batch-all",
            MiningStrategy::BatchHard => "batch-hard",
            MiningStrategy::BatchSemiHard => "batch-semi-hard",
        })
    }
}

impl FromStr for MiningStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "batch-all" | "all" => Ok(MiningStrategy::BatchAll),
            "batch-hard" | "hard" => Ok(MiningStrategy::BatchHard),
            "batch-semi-hard" | "semi-hard" => Ok(MiningStrategy::BatchSemiHard),
            _ => Err(Error::Config(format!("unknown mining strategy `{s}`"))),
        }
    }
}

/// How the batch-all sum is normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchAllReduction {
    /// Mean over triplets with `p != a`.
    #[default]
    ExcludeSelf,
    /// Mean over triplets including the degenerate `p == a`.
    IncludeSelf,
    /// Mean over margin-violating triplets only (`p != a`).
    ActiveOnly,
}

/// Loss, `dL/dZ` and triplet counts for one mined batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MiningOutcome {
    pub loss: f64,
    pub grad_z: Array2<f64>,
    /// Triplets (batch-all) or contributing anchors (hard / semi-hard).
    pub n_valid: usize,
    /// Of those, how many have positive loss.
    pub n_active: usize,
}

fn check_inputs(z: &Array2<f64>, y: &[usize], margin: f64) -> Result<()> {
    if z.nrows() != y.len() {
        return Err(Error::Shape(format!("{} embeddings, {} labels", z.nrows(), y.len())));
    }
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::InvalidArgument(format!("margin {margin} must be positive")));
    }
    Ok(())
}

pub fn mine(
    strategy: MiningStrategy,
    z: &Array2<f64>,
    y: &[usize],
    margin: f64,
    metric: DistanceMetric,
) -> Result<MiningOutcome> {
    match strategy {
        MiningStrategy::BatchAll => batch_all(z, y, margin, metric),
        MiningStrategy::BatchHard => batch_hard(z, y, margin, metric),
        MiningStrategy::BatchSemiHard => batch_semi_hard(z, y, margin, metric),
    }
}

/// Mean triplet loss over every valid `(a, p, n)` in the batch.
pub fn batch_all(z: &Array2<f64>, y: &[usize], margin: f64, metric: DistanceMetric) -> Result<MiningOutcome> {
    batch_all_with(z, y, margin, metric, BatchAllReduction::ExcludeSelf)
}

pub fn batch_all_with(
    z: &Array2<f64>,
    y: &[usize],
    margin: f64,
    metric: DistanceMetric,
    reduction: BatchAllReduction,
) -> Result<MiningOutcome> {
    check_inputs(z, y, margin)?;
    let d = pairwise_distances(z, metric)?;
    let b = y.len();
    let include_self = reduction == BatchAllReduction::IncludeSelf;

    // Per anchor, sorting both sides lets each positive count its active
    // negatives (and vice versa) by binary search: O(B^2 log B) overall.
    // `counts[a][j]` is (#active triplets using j as positive) minus
    // (#active triplets using j as negative).
    let mut sum = 0.0;
    let mut n_valid = 0usize;
    let mut n_active = 0usize;
    let mut counts = Array2::<f64>::zeros((b, b));
    let mut pos: Vec<(f64, usize)> = Vec::with_capacity(b);
    let mut neg: Vec<(f64, usize)> = Vec::with_capacity(b);
    let mut prefix: Vec<f64> = Vec::with_capacity(b + 1);
    for a in 0..b {
        pos.clear();
        neg.clear();
        for j in 0..b {
            if y[j] != y[a] {
                neg.push((d[[a, j]], j));
            } else if j != a || include_self {
                pos.push((d[[a, j]], j));
            }
        }
        n_valid += pos.len() * neg.len();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        neg.sort_by(|u, v| u.0.total_cmp(&v.0));
        pos.sort_by(|u, v| u.0.total_cmp(&v.0));
        prefix.clear();
        prefix.push(0.0);
        for &(dn, _) in &neg {
            prefix.push(prefix.last().unwrap() + dn);
        }
        // The hinge predicate is monotone in each distance, so it partitions
        // the sorted lists exactly as the elementwise test would.
        for &(dp, p) in &pos {
            let c = neg.partition_point(|&(dn, _)| dp - dn + margin > 0.0);
            if c > 0 {
                sum += c as f64 * (dp + margin) - prefix[c];
                n_active += c;
                counts[[a, p]] += c as f64;
            }
        }
        for &(dn, n) in &neg {
            let inactive = pos.partition_point(|&(dp, _)| dp - dn + margin <= 0.0);
            counts[[a, n]] -= (pos.len() - inactive) as f64;
        }
    }
    if n_valid == 0 {
        return Err(Error::NoValidTriplets);
    }
    let denom = match reduction {
        BatchAllReduction::ActiveOnly => n_active.max(1),
        _ => n_valid,
    } as f64;
    counts /= denom;
    let grad_z = chain_pair_grads(z, &counts, metric);
    Ok(MiningOutcome {
        loss: sum.max(0.0) / denom,
        grad_z,
        n_valid,
        n_active,
    })
}

/// Hardest positive and negative for each anchor; ties go to the lowest index.
pub fn batch_hard(z: &Array2<f64>, y: &[usize], margin: f64, metric: DistanceMetric) -> Result<MiningOutcome> {
    check_inputs(z, y, margin)?;
    let d = pairwise_distances(z, metric)?;
    let b = y.len();
    let mut coeff = Array2::<f64>::zeros((b, b));
    let mut picks = Vec::new();
    for a in 0..b {
        let mut pos: Option<usize> = None;
        let mut neg: Option<usize> = None;
        for j in 0..b {
            if j == a {
                continue;
            }
            if y[j] == y[a] {
                if pos.is_none_or(|p| d[[a, j]] > d[[a, p]]) {
                    pos = Some(j);
                }
            } else if neg.is_none_or(|n| d[[a, j]] < d[[a, n]]) {
                neg = Some(j);
            }
        }
        if let (Some(p), Some(n)) = (pos, neg) {
            picks.push((a, p, n, triplet_loss(d[[a, p]], d[[a, n]], margin)));
        }
    }
    reduce_per_anchor(z, metric, &mut coeff, picks)
}

/// Per anchor, the largest hinge among triplets with `d_ap < d_an`.
/// Anchors with no such triplet contribute 0 but still count.
pub fn batch_semi_hard(z: &Array2<f64>, y: &[usize], margin: f64, metric: DistanceMetric) -> Result<MiningOutcome> {
    check_inputs(z, y, margin)?;
    let d = pairwise_distances(z, metric)?;
    let b = y.len();
    let mut coeff = Array2::<f64>::zeros((b, b));
    let mut picks = Vec::new();
    for a in 0..b {
        let has_pos = (0..b).any(|j| j != a && y[j] == y[a]);
        let has_neg = (0..b).any(|j| y[j] != y[a]);
        if !(has_pos && has_neg) {
            continue;
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for p in 0..b {
            if p == a || y[p] != y[a] {
                continue;
            }
            for n in 0..b {
                if y[n] == y[a] {
                    continue;
                }
                let l = triplet_loss(d[[a, p]], d[[a, n]], margin);
                if l >= margin {
                    continue;
                }
                if best.is_none_or(|(_, _, bl)| l > bl) {
                    best = Some((p, n, l));
                }
            }
        }
        match best {
            Some((p, n, l)) => picks.push((a, p, n, l)),
            None => picks.push((a, a, a, 0.0)),
        }
    }
    reduce_per_anchor(z, metric, &mut coeff, picks)
}

fn reduce_per_anchor(
    z: &Array2<f64>,
    metric: DistanceMetric,
    coeff: &mut Array2<f64>,
    picks: Vec<(usize, usize, usize, f64)>,
) -> Result<MiningOutcome> {
    if picks.is_empty() {
        return Err(Error::NoValidTriplets);
    }
    let denom = picks.len() as f64;
    let mut sum = 0.0;
    let mut n_active = 0;
    for &(a, p, n, l) in &picks {
        if l > 0.0 {
            n_active += 1;
            sum += l;
            coeff[[a, p]] += 1.0 / denom;
            coeff[[a, n]] -= 1.0 / denom;
        }
    }
    Ok(MiningOutcome {
        loss: sum / denom,
        grad_z: chain_pair_grads(z, coeff, metric),
        n_valid: picks.len(),
        n_active,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn col(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()
    }

    const E: DistanceMetric = DistanceMetric::Euclidean;

    /// Triple loop over every (a, p, n).
    fn brute(z: &Array2<f64>, y: &[usize], m: f64, metric: DistanceMetric, include_self: bool) -> (f64, usize, usize) {
        let b = y.len();
        let dist = |i: usize, j: usize| metric.distance(z.row(i), z.row(j));
        let (mut sum, mut valid, mut active) = (0.0, 0, 0);
        for a in 0..b {
            for p in 0..b {
                if y[p] != y[a] || (p == a && !include_self) {
                    continue;
                }
                for n in 0..b {
                    if y[n] != y[a] {
                        valid += 1;
                        let l = triplet_loss(dist(a, p), dist(a, n), m);
                        if l > 0.0 {
                            active += 1;
                            sum += l;
                        }
                    }
                }
            }
        }
        (sum / valid as f64, valid, active)
    }

    proptest::proptest! {
        #[test]
        fn batch_all_matches_triple_loop(
            vals in proptest::collection::vec(-2.0f64..2.0, 24),
            y in proptest::collection::vec(0usize..3, 8),
            m in 0.05f64..1.5,
            include_self in proptest::bool::ANY,
        ) {
            let z = Array2::from_shape_vec((8, 3), vals).unwrap();
            let reduction = if include_self { BatchAllReduction::IncludeSelf } else { BatchAllReduction::ExcludeSelf };
            let (loss, valid, active) = brute(&z, &y, m, E, include_self);
            match batch_all_with(&z, &y, m, E, reduction) {
                Ok(out) => {
                    proptest::prop_assert_eq!(out.n_valid, valid);
                    proptest::prop_assert_eq!(out.n_active, active);
                    proptest::prop_assert!((out.loss - loss).abs() < 1e-12);
                }
                Err(_) => proptest::prop_assert_eq!(valid, 0),
            }
        }
    }

    #[test]
    fn hinge_values() {
        assert_eq!(triplet_loss(0.0, 0.5, 0.5), 0.0);
        assert_eq!(triplet_loss(2.0, 1.0, 0.5), 1.5);
        assert_eq!(triplet_loss(1.0, 3.0, 0.5), 0.0);
    }

    #[test]
    fn batch_all_separated_clusters() {
        let out = batch_all(&col(&[0.0, 0.1, 1.0, 1.1]), &[0, 0, 1, 1], 0.5, E).unwrap();
        assert_eq!(out.n_valid, 8);
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_z.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn batch_all_hand_example() {
        let out = batch_all(&col(&[0.0, 1.0, 0.4]), &[0, 0, 1], 0.2, E).unwrap();
        assert_eq!(out.n_valid, 2);
        assert!((out.loss - 0.7).abs() < 1e-12);
        assert_eq!(out.n_active, 2);
    }

    #[test]
    fn batch_all_reductions() {
        let z = col(&[0.0, 1.0, 0.4]);
        let y = [0, 0, 1];
        let inc = batch_all_with(&z, &y, 0.2, E, BatchAllReduction::IncludeSelf).unwrap();
        // Self pairs add (0,0,2), (1,1,2), (2,2,0), (2,2,1), all with zero hinge.
        assert_eq!(inc.n_valid, 6);
        assert!((inc.loss - 1.4 / 6.0).abs() < 1e-12);
        let act = batch_all_with(&col(&[0.0, 1.0, 0.4, 5.0]), &[0, 0, 1, 1], 0.2, E, BatchAllReduction::ActiveOnly).unwrap();
        let plain = batch_all(&col(&[0.0, 1.0, 0.4, 5.0]), &[0, 0, 1, 1], 0.2, E).unwrap();
        assert!(act.loss >= plain.loss);
        assert!((act.loss * act.n_active as f64 - plain.loss * plain.n_valid as f64).abs() < 1e-12);
    }

    #[test]
    fn batch_all_without_triplets() {
        assert!(matches!(
            batch_all(&col(&[0.0, 1.0]), &[0, 0], 0.2, E),
            Err(Error::NoValidTriplets)
        ));
        assert!(batch_all(&col(&[0.0, 1.0]), &[0, 0], 0.0, E).is_err());
    }

    #[test]
    fn batch_hard_hand_example() {
        let out = batch_hard(&col(&[0.0, 1.0, 0.4]), &[0, 0, 1], 0.2, E).unwrap();
        assert_eq!(out.n_valid, 2);
        assert!((out.loss - 0.7).abs() < 1e-12);
        let out = batch_hard(&col(&[0.0, 0.1, 1.0, 1.1]), &[0, 0, 1, 1], 0.5, E).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn semi_hard_hand_example() {
        let out = batch_semi_hard(&col(&[0.0, 0.3, 0.5]), &[0, 0, 1], 0.4, E).unwrap();
        // anchor 0 contributes 0.2, anchor 1 has no semi-hard triplet
        assert_eq!(out.n_valid, 2);
        assert!((out.loss - 0.1).abs() < 1e-12);
        assert_eq!(out.n_active, 1);
    }

    #[test]
    fn semi_hard_unsatisfiable_anchor() {
        // Every positive of anchor 0 is farther than every negative.
        let out = batch_semi_hard(&col(&[0.0, 2.0, 0.5]), &[0, 0, 1], 0.4, E).unwrap();
        assert_eq!(out.n_active, 0);
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn per_anchor_mining_needs_partners() {
        assert!(matches!(
            batch_hard(&col(&[0.0, 1.0]), &[0, 1], 0.2, E),
            Err(Error::NoValidTriplets)
        ));
        assert!(matches!(
            batch_semi_hard(&col(&[0.0, 1.0]), &[0, 1], 0.2, E),
            Err(Error::NoValidTriplets)
        ));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in MiningStrategy::ALL {
            assert_eq!(s.to_string().parse::<MiningStrategy>().unwrap(), s);
        }
    }
}
