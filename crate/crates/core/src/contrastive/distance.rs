use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Manhattan,
    Cosine,
}

impl DistanceMetric {
    pub const ALL: [DistanceMetric; 3] = [
        DistanceMetric::Euclidean,
        DistanceMetric::Cosine,
        DistanceMetric::Manhattan,
    ];

    /// Distance between two vectors. Euclidean is the true (unsquared) norm;
    /// cosine is `1 - cos(u, v)` and is 1 when either vector is zero.
    pub fn distance(self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
        match self {
            DistanceMetric::Euclidean => u
                .iter()
                .zip(v.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
            DistanceMetric::Manhattan => u.iter().zip(v.iter()).map(|(a, b)| (a - b).abs()).sum(),
            DistanceMetric::Cosine => {
                let nu = u.dot(&u).sqrt();
                let nv = v.dot(&v).sqrt();
                if nu == 0.0 || nv == 0.0 {
                    return 1.0;
                }
                1.0 - u.dot(&v) / (nu * nv)
            }
        }
    }

    /// Gradients of `distance(u, v)` w.r.t. `u` and `v`. Non-differentiable
    /// points (coincident vectors, zero coordinates under manhattan) get 0.
    pub fn pair_grad(self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
        match self {
            DistanceMetric::Euclidean => {
                let diff = &u - &v;
                let d = diff.dot(&diff).sqrt();
                if d == 0.0 {
                    let z = Array1::zeros(u.len());
                    return (z.clone(), z);
                }
                let du = diff / d;
                let dv = -&du;
                (du, dv)
            }
            DistanceMetric::Manhattan => {
                let du = (&u - &v).mapv(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                let dv = -&du;
                (du, dv)
            }
            DistanceMetric::Cosine => {
                let nu = u.dot(&u).sqrt();
                let nv = v.dot(&v).sqrt();
                if nu == 0.0 || nv == 0.0 {
                    let z = Array1::zeros(u.len());
                    return (z.clone(), z);
                }
                let s = u.dot(&v) / (nu * nv);
                // d(1 - s)/du = -(v / (|u||v|) - s u / |u|^2)
                let du = (&u * (s / (nu * nu))) - (&v / (nu * nv));
                let dv = (&v * (s / (nv * nv))) - (&u / (nu * nv));
                (du, dv)
            }
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::Manhattan => "manhattan",
            DistanceMetric::Cosine => "cosine",
        })
    }
}

impl FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(DistanceMetric::Euclidean),
            "manhattan" => Ok(DistanceMetric::Manhattan),
            "cosine" => Ok(DistanceMetric::Cosine),
            _ => Err(Error::Config(format!("unknown distance metric `{s}`"))),
        }
    }
}

pub(crate) fn check_rows(z: &Array2<f64>, metric: DistanceMetric) -> Result<()> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embeddings".into()));
    }
    if metric == DistanceMetric::Cosine {
        if let Some(i) = z.outer_iter().position(|r| r.iter().all(|&v| v == 0.0)) {
            return Err(Error::ZeroNorm(i));
        }
    }
    Ok(())
}

/// Symmetric `B x B` distance matrix with zero diagonal.
pub fn pairwise_distances(z: &Array2<f64>, metric: DistanceMetric) -> Result<Array2<f64>> {
    check_rows(z, metric)?;
    let n = z.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = metric.distance(z.row(i), z.row(j));
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    Ok(d)
}

/// Turns `dL/dD[i][j]` (one coefficient per ordered pair) into `dL/dZ`.
pub fn chain_pair_grads(z: &Array2<f64>, coeff: &Array2<f64>, metric: DistanceMetric) -> Array2<f64> {
    let n = z.nrows();
    let mut grad = Array2::zeros(z.dim());
    for i in 0..n {
        for j in 0..n {
            let c = coeff[[i, j]];
            if c == 0.0 || i == j {
                continue;
            }
            let (du, dv) = metric.pair_grad(z.row(i), z.row(j));
            grad.row_mut(i).scaled_add(c, &du);
            grad.row_mut(j).scaled_add(c, &dv);
        }
    }
    grad
}
