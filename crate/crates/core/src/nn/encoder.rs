use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub f_in: usize,
    pub hidden_width: usize,
    pub depth: usize,
    pub f_out: usize,
    pub dropout_p: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.f_in == 0 || self.f_out == 0 || self.depth == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidArgument(format!("degenerate encoder {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} outside [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

/// One affine map. `w` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Layer {
    pub fn zeros(out: usize, inp: usize) -> Layer {
        Layer {
            w: Array2::zeros((out, inp)),
            b: Array1::zeros(out),
        }
    }

    pub fn zeros_like(&self) -> Layer {
        Layer::zeros(self.w.nrows(), self.w.ncols())
    }

    /// Kaiming-uniform weights in `[-sqrt(6/fan_in), sqrt(6/fan_in)]`, zero bias.
    pub fn kaiming(out: usize, inp: usize, rng: &mut Rng) -> Layer {
        let bound = (6.0 / inp as f64).sqrt();
        let w = Array2::from_shape_simple_fn((out, inp), || rng.random_range(-bound..bound));
        Layer {
            w,
            b: Array1::zeros(out),
        }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

/// `depth` hidden blocks of affine, ReLU and dropout, then a final affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub layers: Vec<Layer>,
}

impl EncoderParams {
    pub fn from_layers(config: EncoderConfig, layers: Vec<Layer>) -> Result<Self> {
        let p = EncoderParams { config, layers };
        p.check_shapes()?;
        Ok(p)
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        if self.layers.len() != c.depth + 1 {
            return Err(Error::Shape(format!(
                "{} layers for depth {}",
                self.layers.len(),
                c.depth
            )));
        }
        let mut inp = c.f_in;
        for (i, l) in self.layers.iter().enumerate() {
            let out = if i == c.depth { c.f_out } else { c.hidden_width };
            if l.w.dim() != (out, inp) || l.b.len() != out {
                return Err(Error::Shape(format!(
                    "layer {i}: expected {out}x{inp}, got {:?}",
                    l.w.dim()
                )));
            }
            inp = out;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Layer::is_finite)
    }

    /// Deterministic inference-mode forward pass.
    pub fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut rng = Rng::new(0);
        forward(self, x, false, &mut rng).map(|(z, _)| z)
    }
}

pub fn init_encoder(cfg: &EncoderConfig, rng: &mut Rng) -> Result<EncoderParams> {
    cfg.validate()?;
    let mut layers = Vec::with_capacity(cfg.depth + 1);
    let mut inp = cfg.f_in;
    for _ in 0..cfg.depth {
        layers.push(Layer::kaiming(cfg.hidden_width, inp, rng));
        inp = cfg.hidden_width;
    }
    layers.push(Layer::kaiming(cfg.f_out, inp, rng));
    Ok(EncoderParams {
        config: *cfg,
        layers,
    })
}

/// Cached activations for one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer (for hidden layers after the previous dropout).
    pub inputs: Vec<Array2<f64>>,
    /// Hidden-layer pre-activations.
    pub pre: Vec<Array2<f64>>,
    /// Inverted-dropout multipliers, `None` when dropout was inactive.
    pub masks: Vec<Option<Array2<f64>>>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }
}

pub fn forward(
    params: &EncoderParams,
    x: &Array2<f64>,
    train_mode: bool,
    rng: &mut Rng,
) -> Result<(Array2<f64>, ForwardTrace)> {
    let cfg = &params.config;
    if x.ncols() != cfg.f_in {
        return Err(Error::Shape(format!("input width {} != {}", x.ncols(), cfg.f_in)));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("encoder input".into()));
    }
    let p = cfg.dropout_p;
    let keep = 1.0 - p;
    let mut trace = ForwardTrace {
        inputs: Vec::with_capacity(cfg.depth + 1),
        pre: Vec::with_capacity(cfg.depth),
        masks: Vec::with_capacity(cfg.depth),
    };
    let mut h = x.to_owned();
    for layer in &params.layers[..cfg.depth] {
        let pre = layer.apply(&h);
        let mut act = pre.mapv(|v| v.max(0.0));
        let mask = if train_mode && p > 0.0 {
            let m = Array2::from_shape_simple_fn(act.dim(), || {
                if rng.uniform() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            act *= &m;
            Some(m)
        } else {
            None
        };
        trace.inputs.push(std::mem::replace(&mut h, act));
        trace.pre.push(pre);
        trace.masks.push(mask);
    }
    let z = params.layers[cfg.depth].apply(&h);
    trace.inputs.push(h);
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("encoder output".into()));
    }
    Ok((z, trace))
}

/// Reverse-mode pass through the layers recorded in `trace`.
/// Returns one gradient [`Layer`] per parameter layer.
pub fn backward(params: &EncoderParams, trace: &ForwardTrace, grad_z: &Array2<f64>) -> Result<Vec<Layer>> {
    let cfg = &params.config;
    if trace.inputs.len() != cfg.depth + 1 {
        return Err(Error::Shape("trace does not match encoder depth".into()));
    }
    if grad_z.dim() != (trace.batch_size(), cfg.f_out) {
        return Err(Error::Shape(format!(
            "dL/dZ is {:?}, expected ({}, {})",
            grad_z.dim(),
            trace.batch_size(),
            cfg.f_out
        )));
    }
    let mut grads: Vec<Layer> = Vec::with_capacity(cfg.depth + 1);
    let mut delta = grad_z.to_owned();
    for l in (0..=cfg.depth).rev() {
        if l < cfg.depth {
            if let Some(mask) = &trace.masks[l] {
                delta *= mask;
            }
            ndarray::Zip::from(&mut delta)
                .and(&trace.pre[l])
                .for_each(|d, &pre| {
                    if pre <= 0.0 {
                        *d = 0.0;
                    }
                });
        }
        let layer = &params.layers[l];
        let gw = delta.t().dot(&trace.inputs[l]);
        let gb = delta.sum_axis(Axis(0));
        if l > 0 {
            delta = delta.dot(&layer.w);
        }
        grads.push(Layer { w: gw, b: gb });
    }
    grads.reverse();
    Ok(grads)
}
