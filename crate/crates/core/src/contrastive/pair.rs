use ndarray::{Array1, Array2, ArrayView1};

use super::distance::check_rows;
use super::{triplet_loss, DistanceMetric};
use crate::error::{Error, Result};

/// `y * d^2 + (1 - y) * max(0, m - d)^2` with gradients for both sides.
pub fn contrastive_pair_loss(
    z_i: ArrayView1<f64>,
    z_j: ArrayView1<f64>,
    similar: bool,
    margin: f64,
    metric: DistanceMetric,
) -> (f64, Array1<f64>, Array1<f64>) {
    let d = metric.distance(z_i, z_j);
    let (gi, gj) = metric.pair_grad(z_i, z_j);
    // dL/dd
    let (loss, scale) = if similar {
        (d * d, 2.0 * d)
    } else {
        let gap = (margin - d).max(0.0);
        (gap * gap, -2.0 * gap)
    };
    (loss, gi * scale, gj * scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairBatchLoss {
    pub loss: f64,
    pub grad_left: Array2<f64>,
    pub grad_right: Array2<f64>,
}

/// Mean contrastive loss over row-aligned pairs.
pub fn contrastive_batch_loss(
    left: &Array2<f64>,
    right: &Array2<f64>,
    similar: &[bool],
    margin: f64,
    metric: DistanceMetric,
) -> Result<PairBatchLoss> {
    if left.dim() != right.dim() || left.nrows() != similar.len() {
        return Err(Error::Shape("pair batch sides differ".into()));
    }
    if similar.is_empty() {
        return Err(Error::NoValidTriplets);
    }
    check_rows(left, metric)?;
    check_rows(right, metric)?;
    let b = similar.len() as f64;
    let mut out = PairBatchLoss {
        loss: 0.0,
        grad_left: Array2::zeros(left.dim()),
        grad_right: Array2::zeros(right.dim()),
    };
    for (k, &sim) in similar.iter().enumerate() {
        let (l, gi, gj) = contrastive_pair_loss(left.row(k), right.row(k), sim, margin, metric);
        out.loss += l / b;
        out.grad_left.row_mut(k).scaled_add(1.0 / b, &gi);
        out.grad_right.row_mut(k).scaled_add(1.0 / b, &gj);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatchLoss {
    pub loss: f64,
    pub grad_anchor: Array2<f64>,
    pub grad_positive: Array2<f64>,
    pub grad_negative: Array2<f64>,
}

/// Mean triplet loss over row-aligned, pre-sampled triplets.
pub fn offline_triplet_batch_loss(
    anchor: &Array2<f64>,
    positive: &Array2<f64>,
    negative: &Array2<f64>,
    margin: f64,
    metric: DistanceMetric,
) -> Result<TripletBatchLoss> {
    if anchor.dim() != positive.dim() || anchor.dim() != negative.dim() {
        return Err(Error::Shape("triplet batch sides differ".into()));
    }
    if anchor.nrows() == 0 {
        return Err(Error::NoValidTriplets);
    }
    for z in [anchor, positive, negative] {
        check_rows(z, metric)?;
    }
    let b = anchor.nrows() as f64;
    let mut out = TripletBatchLoss {
        loss: 0.0,
        grad_anchor: Array2::zeros(anchor.dim()),
        grad_positive: Array2::zeros(anchor.dim()),
        grad_negative: Array2::zeros(anchor.dim()),
    };
    for k in 0..anchor.nrows() {
        let (a, p, n) = (anchor.row(k), positive.row(k), negative.row(k));
        let l = triplet_loss(metric.distance(a, p), metric.distance(a, n), margin);
        if l <= 0.0 {
            continue;
        }
        out.loss += l / b;
        let (ga_p, gp) = metric.pair_grad(a, p);
        let (ga_n, gn) = metric.pair_grad(a, n);
        out.grad_anchor.row_mut(k).scaled_add(1.0 / b, &(ga_p - ga_n));
        out.grad_positive.row_mut(k).scaled_add(1.0 / b, &gp);
        out.grad_negative.row_mut(k).scaled_add(-1.0 / b, &gn);
    }
    Ok(out)
}
