//! Independent oracles shared by the integration tests: brute-force
//! mining and retrieval, and a finite-difference gradient checker with
//! guards against non-differentiable points.
#![allow(dead_code)]

use fsnids_core::contrastive::{
    batch_all, batch_hard, batch_semi_hard, contrastive_batch_loss, offline_triplet_batch_loss, DistanceMetric,
};
use fsnids_core::nn::{backward, forward, init_encoder, softmax_xent, EncoderConfig, EncoderParams, Layer};
use fsnids_core::{EmbeddingIndex, Rng};
use ndarray::{s, Array2, ArrayView1, Axis};

pub fn dist(metric: DistanceMetric, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    match metric {
        DistanceMetric::Euclidean => u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
        DistanceMetric::Manhattan => u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum(),
        DistanceMetric::Cosine => {
            let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if nu == 0.0 || nv == 0.0 {
                return 1.0;
            }
            1.0 - dot / (nu * nv)
        }
    }
}

fn hinge(d_ap: f64, d_an: f64, m: f64) -> f64 {
    (d_ap - d_an + m).max(0.0)
}

/// Mean hinge over every (a, p, n) with p != a; `None` without triplets.
pub fn brute_batch_all(z: &Array2<f64>, y: &[usize], m: f64, metric: DistanceMetric) -> Option<f64> {
    let b = y.len();
    let d = |i: usize, j: usize| dist(metric, z.row(i), z.row(j));
    let (mut sum, mut n) = (0.0, 0usize);
    for a in 0..b {
        for p in (0..b).filter(|&p| p != a && y[p] == y[a]) {
            for q in (0..b).filter(|&q| y[q] != y[a]) {
                sum += hinge(d(a, p), d(a, q), m);
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Mean over anchors having both partners of hinge(max d_ap, min d_an).
pub fn brute_batch_hard(z: &Array2<f64>, y: &[usize], m: f64, metric: DistanceMetric) -> Option<f64> {
    let b = y.len();
    let d = |i: usize, j: usize| dist(metric, z.row(i), z.row(j));
    let (mut sum, mut n) = (0.0, 0usize);
    for a in 0..b {
        let far = (0..b).filter(|&p| p != a && y[p] == y[a]).map(|p| d(a, p)).fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |x| x.max(v)))
        });
        let near = (0..b).filter(|&q| y[q] != y[a]).map(|q| d(a, q)).fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |x| x.min(v)))
        });
        if let (Some(dp), Some(dn)) = (far, near) {
            sum += hinge(dp, dn, m);
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Mean over anchors having both partners of the largest hinge among
/// triplets with d_ap < d_an (0 when there is none).
pub fn brute_semi_hard(z: &Array2<f64>, y: &[usize], m: f64, metric: DistanceMetric) -> Option<f64> {
    let b = y.len();
    let d = |i: usize, j: usize| dist(metric, z.row(i), z.row(j));
    let (mut sum, mut n) = (0.0, 0usize);
    for a in 0..b {
        let pos: Vec<usize> = (0..b).filter(|&p| p != a && y[p] == y[a]).collect();
        let neg: Vec<usize> = (0..b).filter(|&q| y[q] != y[a]).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let mut best = 0.0f64;
        for &p in &pos {
            for &q in &neg {
                if d(a, p) < d(a, q) {
                    best = best.max(hinge(d(a, p), d(a, q), m));
                }
            }
        }
        sum += best;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// First `k` of all references sorted by (distance, index).
pub fn brute_neighbors(index: &EmbeddingIndex, z: ArrayView1<f64>, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = index
        .embeddings
        .outer_iter()
        .enumerate()
        .map(|(i, r)| (i, dist(index.metric, z, r)))
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Most frequent neighbour class; ties to the smaller summed distance,
/// then the lower class id.
pub fn brute_hard_vote(index: &EmbeddingIndex, nb: &[(usize, f64)]) -> usize {
    let c = index.labels.iter().max().unwrap() + 1;
    let mut count = vec![0usize; c];
    let mut cum = vec![0.0; c];
    for &(i, d) in nb {
        count[index.labels[i]] += 1;
        cum[index.labels[i]] += d;
    }
    let mut classes: Vec<usize> = (0..c).filter(|&k| count[k] > 0).collect();
    classes.sort_by(|&a, &b| {
        count[b]
            .cmp(&count[a])
            .then(cum[a].partial_cmp(&cum[b]).unwrap())
            .then(a.cmp(&b))
    });
    classes[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    BatchAll,
    BatchHard,
    BatchSemiHard,
    ContrastivePair,
    OfflineTriplet,
    CrossEntropy,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::BatchAll,
        LossKind::BatchHard,
        LossKind::BatchSemiHard,
        LossKind::ContrastivePair,
        LossKind::OfflineTriplet,
        LossKind::CrossEntropy,
    ];
}

/// A random encoder, batch and loss whose analytic gradient can be
/// compared against central differences.
pub struct GradCase {
    pub kind: LossKind,
    pub metric: DistanceMetric,
    pub params: EncoderParams,
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub similar: Vec<bool>,
    pub margin: f64,
    pub mask_seed: u64,
}

/// Distance from a non-differentiable point, below which a case is redrawn.
pub const KINK_GUARD: f64 = 1e-3;

impl GradCase {
    pub fn random(kind: LossKind, rng: &mut Rng) -> GradCase {
        let metric = DistanceMetric::ALL[rng.below(3)];
        let n_classes = 2 + rng.below(3);
        let batch = match kind {
            LossKind::ContrastivePair => 2 * (2 + rng.below(5)),
            LossKind::OfflineTriplet => 3 * (1 + rng.below(4)),
            _ => 4 + rng.below(9),
        };
        let f_out = if kind == LossKind::CrossEntropy { n_classes } else { 2 + rng.below(4) };
        let cfg = EncoderConfig {
            f_in: 2 + rng.below(4),
            hidden_width: 2 + rng.below(7),
            depth: 1 + rng.below(2),
            f_out,
            dropout_p: [0.0, 0.2][rng.below(2)],
        };
        let mut params = init_encoder(&cfg, rng).unwrap();
        for l in &mut params.layers {
            l.b.mapv_inplace(|_| rng.uniform() - 0.5);
        }
        let x = Array2::from_shape_simple_fn((batch, cfg.f_in), || 2.0 * rng.uniform() - 1.0);
        let mut y: Vec<usize> = (0..batch).map(|_| rng.below(n_classes)).collect();
        // Triplet losses need at least one anchor with both partners.
        y[0] = 0;
        y[1] = 0;
        y[2] = 1;
        let similar = (0..batch / 2).map(|_| rng.below(2) == 0).collect();
        GradCase {
            kind,
            metric,
            params,
            x,
            y,
            similar,
            margin: 0.1 + rng.uniform(),
            mask_seed: rng.next_seed(),
        }
    }

    fn embed(&self, params: &EncoderParams) -> (Array2<f64>, fsnids_core::nn::ForwardTrace) {
        forward(params, &self.x, true, &mut Rng::new(self.mask_seed)).unwrap()
    }

    /// Loss and dL/dZ at `params`.
    fn loss_and_grad(&self, z: &Array2<f64>) -> (f64, Array2<f64>) {
        let m = self.margin;
        match self.kind {
            LossKind::BatchAll => {
                let o = batch_all(z, &self.y, m, self.metric).unwrap();
                (o.loss, o.grad_z)
            }
            LossKind::BatchHard => {
                let o = batch_hard(z, &self.y, m, self.metric).unwrap();
                (o.loss, o.grad_z)
            }
            LossKind::BatchSemiHard => {
                let o = batch_semi_hard(z, &self.y, m, self.metric).unwrap();
                (o.loss, o.grad_z)
            }
            LossKind::ContrastivePair => {
                let h = z.nrows() / 2;
                let o = contrastive_batch_loss(
                    &z.slice(s![..h, ..]).to_owned(),
                    &z.slice(s![h.., ..]).to_owned(),
                    &self.similar,
                    m,
                    self.metric,
                )
                .unwrap();
                let g = ndarray::concatenate(Axis(0), &[o.grad_left.view(), o.grad_right.view()]).unwrap();
                (o.loss, g)
            }
            LossKind::OfflineTriplet => {
                let t = z.nrows() / 3;
                let o = offline_triplet_batch_loss(
                    &z.slice(s![..t, ..]).to_owned(),
                    &z.slice(s![t..2 * t, ..]).to_owned(),
                    &z.slice(s![2 * t.., ..]).to_owned(),
                    m,
                    self.metric,
                )
                .unwrap();
                let g = ndarray::concatenate(
                    Axis(0),
                    &[o.grad_anchor.view(), o.grad_positive.view(), o.grad_negative.view()],
                )
                .unwrap();
                (o.loss, g)
            }
            LossKind::CrossEntropy => softmax_xent(z, &self.y).unwrap(),
        }
    }

    pub fn loss(&self, params: &EncoderParams) -> f64 {
        self.loss_and_grad(&self.embed(params).0).0
    }

    pub fn analytic(&self) -> Vec<Layer> {
        let (z, trace) = self.embed(&self.params);
        let (_, gz) = self.loss_and_grad(&z);
        backward(&self.params, &trace, &gz).unwrap()
    }

    /// Smallest distance from any kink the loss passes through at the
    /// current parameters.
    pub fn kink_margin(&self) -> f64 {
        let (z, trace) = self.embed(&self.params);
        let mut gap = f64::INFINITY;
        for pre in &trace.pre {
            gap = gap.min(pre.iter().fold(f64::INFINITY, |a, v| a.min(v.abs())));
        }
        let b = z.nrows();
        if self.kind == LossKind::CrossEntropy {
            return gap;
        }
        if self.metric == DistanceMetric::Manhattan {
            for i in 0..b {
                for j in i + 1..b {
                    for k in 0..z.ncols() {
                        gap = gap.min((z[[i, k]] - z[[j, k]]).abs());
                    }
                }
            }
        }
        let d = |i: usize, j: usize| dist(self.metric, z.row(i), z.row(j));
        let m = self.margin;
        match self.kind {
            LossKind::BatchAll | LossKind::BatchHard | LossKind::BatchSemiHard => {
                let y = &self.y;
                for a in 0..b {
                    let pos: Vec<f64> = (0..b).filter(|&p| p != a && y[p] == y[a]).map(|p| d(a, p)).collect();
                    let neg: Vec<f64> = (0..b).filter(|&q| y[q] != y[a]).map(|q| d(a, q)).collect();
                    let mut hinges = Vec::new();
                    for &dp in &pos {
                        for &dn in &neg {
                            let h = dp - dn + m;
                            gap = gap.min(h.abs());
                            if self.kind == LossKind::BatchSemiHard {
                                gap = gap.min((dp - dn).abs());
                                if dp < dn {
                                    hinges.push(h);
                                }
                            }
                        }
                    }
                    if self.kind == LossKind::BatchHard {
                        gap = gap.min(second_gap(&pos)).min(second_gap(&neg));
                    }
                    gap = gap.min(second_gap(&hinges));
                }
            }
            LossKind::ContrastivePair => {
                let h = b / 2;
                for i in 0..h {
                    if !self.similar[i] {
                        gap = gap.min((d(i, i + h) - m).abs());
                    }
                }
            }
            LossKind::OfflineTriplet => {
                let t = b / 3;
                for i in 0..t {
                    gap = gap.min((d(i, i + t) - d(i, i + 2 * t) + m).abs());
                }
            }
            LossKind::CrossEntropy => {}
        }
        gap
    }

    /// Largest relative deviation between analytic and central-difference
    /// gradients. Differences are scaled by max(|a|, |n|, 1e-6 max(1, |L|)):
    /// the floor tracks the difference quotient's roundoff, which grows
    /// with the loss value.
    pub fn max_relative_error(&self, h: f64) -> f64 {
        let analytic = self.analytic();
        let floor = 1e-6 * self.loss(&self.params).abs().max(1.0);
        let mut worst = 0.0f64;
        for (l, g) in analytic.iter().enumerate() {
            let (rows, cols) = g.w.dim();
            for r in 0..rows {
                for c in 0..cols {
                    let num = self.central(h, |p| &mut p.layers[l].w[[r, c]]);
                    worst = worst.max(rel(g.w[[r, c]], num, floor));
                }
                let num = self.central(h, |p| &mut p.layers[l].b[r]);
                worst = worst.max(rel(g.b[r], num, floor));
            }
        }
        worst
    }

    fn central(&self, h: f64, slot: impl Fn(&mut EncoderParams) -> &mut f64) -> f64 {
        let mut plus = self.params.clone();
        *slot(&mut plus) += h;
        let mut minus = self.params.clone();
        *slot(&mut minus) -= h;
        (self.loss(&plus) - self.loss(&minus)) / (2.0 * h)
    }
}

fn second_gap(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::INFINITY;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let top = s[0];
    let bottom = s[s.len() - 1];
    (top - s[1]).abs().min((s[s.len() - 2] - bottom).abs())
}

fn rel(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Draws cases until one sits at least [`KINK_GUARD`] from every kink.
pub fn smooth_case(kind: LossKind, rng: &mut Rng) -> GradCase {
    loop {
        let case = GradCase::random(kind, rng);
        if case.kink_margin() > KINK_GUARD {
            return case;
        }
    }
}
