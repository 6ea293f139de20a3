use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Index triples `(anchor, positive, negative)` with `y_a == y_p != y_n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfflineTripletSet {
    pub triplets: Vec<[usize; 3]>,
}

/// Index pairs with a similarity flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfflinePairSet {
    pub pairs: Vec<(usize, usize)>,
    pub similar: Vec<bool>,
}

fn groups(labels: &[usize]) -> Vec<Vec<usize>> {
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut g = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        g[l].push(i);
    }
    g.retain(|v| !v.is_empty());
    g
}

fn pick(rng: &mut Rng, items: &[usize]) -> usize {
    items[rng.below(items.len())]
}

fn distinct_pair(rng: &mut Rng, items: &[usize]) -> (usize, usize) {
    let i = rng.below(items.len());
    let mut j = rng.below(items.len() - 1);
    if j >= i {
        j += 1;
    }
    (items[i], items[j])
}

/// Anchor class uniform over classes with at least two members, then
/// distinct anchor and positive, then a uniform negative class and member.
pub fn sample_offline_triplets(labels: &[usize], count: usize, rng: &mut Rng) -> Result<OfflineTripletSet> {
    let g = groups(labels);
    if g.len() < 2 {
        return Err(Error::InvalidArgument("offline triplets need two classes".into()));
    }
    let anchor_classes: Vec<usize> = (0..g.len()).filter(|&c| g[c].len() >= 2).collect();
    if anchor_classes.is_empty() {
        return Err(Error::InvalidArgument(
            "offline triplets need a class with two samples".into(),
        ));
    }
    let triplets = (0..count)
        .map(|_| {
            let ca = pick(rng, &anchor_classes);
            let (a, p) = distinct_pair(rng, &g[ca]);
            let mut cn = rng.below(g.len() - 1);
            if cn >= ca {
                cn += 1;
            }
            [a, p, pick(rng, &g[cn])]
        })
        .collect();
    Ok(OfflineTripletSet { triplets })
}

/// Even positions are similar pairs, odd positions dissimilar ones.
pub fn sample_offline_pairs(labels: &[usize], count: usize, rng: &mut Rng) -> Result<OfflinePairSet> {
    let g = groups(labels);
    if g.len() < 2 {
        return Err(Error::InvalidArgument("offline pairs need two classes".into()));
    }
    let similar_classes: Vec<usize> = (0..g.len()).filter(|&c| g[c].len() >= 2).collect();
    if similar_classes.is_empty() {
        return Err(Error::InvalidArgument(
            "offline pairs need a class with two samples".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(count);
    let mut similar = Vec::with_capacity(count);
    for k in 0..count {
        if k % 2 == 0 {
            let c = pick(rng, &similar_classes);
            pairs.push(distinct_pair(rng, &g[c]));
            similar.push(true);
        } else {
            let all: Vec<usize> = (0..g.len()).collect();
            let (ci, cj) = distinct_pair(rng, &all);
            pairs.push((pick(rng, &g[ci]), pick(rng, &g[cj])));
            similar.push(false);
        }
    }
    Ok(OfflinePairSet { pairs, similar })
}
