use std::collections::HashSet;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dist::Conditional;
use crate::error::{HrtError, Result};
use crate::linalg::{column_stats, mean_and_sd, standardize};
use crate::nn::{Activation, Net, Optimizer, OptimizerKind};
use crate::rng::RngStream;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Variance floor in standardized target units.
const VAR_FLOOR: f64 = 1e-4;

/// Mixture density network: tanh MLP mapping `x_{−j}` to a Gaussian mixture
/// over `x_j`, trained by maximum likelihood with Adam and early stopping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdnConfig {
    pub components: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Fraction of rows held out for early stopping; 0 disables it.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for MdnConfig {
    fn default() -> Self {
        MdnConfig {
            components: 5,
            hidden: vec![64],
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 64,
            weight_decay: 0.0,
            validation_fraction: 0.1,
            patience: 10,
        }
    }
}

impl MdnConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(HrtError::invalid("MDN needs at least one component"));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(HrtError::invalid("MDN hidden widths must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(HrtError::invalid("MDN learning rate, epochs and batch size must be positive"));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(HrtError::invalid("MDN validation fraction must lie in [0, 0.5)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(HrtError::invalid("MDN weight decay must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Mdn {
    net: Net,
    k: usize,
    x_means: Array1<f64>,
    x_scales: Array1<f64>,
    y_mean: f64,
    y_scale: f64,
}

#[inline]
fn softplus(r: f64) -> f64 {
    if r > 30.0 {
        r
    } else {
        r.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(r: f64) -> f64 {
    1.0 / (1.0 + (-r).exp())
}

/// Mean negative log-likelihood of `y` under the network outputs and, if
/// requested, its gradient with respect to those outputs.
fn nll(out: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, k: usize, grad: Option<&mut Array2<f64>>) -> f64 {
    let m = y.len() as f64;
    let mut total = 0.0;
    let mut a = vec![0.0; k];
    let mut pi = vec![0.0; k];
    let mut var = vec![0.0; k];
    let mut grad = grad;
    for (i, row) in out.outer_iter().enumerate() {
        let yi = y[i];
        let max_logit = row.slice(s![..k]).fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        let mut zsum = 0.0;
        for c in 0..k {
            pi[c] = (row[c] - max_logit).exp();
            zsum += pi[c];
        }
        let mut amax = f64::NEG_INFINITY;
        for c in 0..k {
            pi[c] /= zsum;
            var[c] = softplus(row[2 * k + c]) + VAR_FLOOR;
            let d = yi - row[k + c];
            a[c] = pi[c].ln() - 0.5 * (LN_2PI + var[c].ln()) - 0.5 * d * d / var[c];
            amax = amax.max(a[c]);
        }
        let lse = amax + a.iter().map(|&v| (v - amax).exp()).sum::<f64>().ln();
        total -= lse;
        if let Some(g) = grad.as_deref_mut() {
            for c in 0..k {
                let gamma = (a[c] - lse).exp();
                let d = yi - row[k + c];
                g[[i, c]] = (pi[c] - gamma) / m;
                g[[i, k + c]] = -gamma * d / var[c] / m;
                let dv = gamma * (0.5 / var[c] - 0.5 * d * d / (var[c] * var[c]));
                g[[i, 2 * k + c]] = dv * sigmoid(row[2 * k + c]) / m;
            }
        }
    }
    total / m
}

impl Mdn {
    pub(crate) fn fit(
        x: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
        origin: Option<&[usize]>,
        cfg: &MdnConfig,
        rng: &RngStream,
    ) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.components;
        let (x_means, x_scales) = column_stats(x);
        let xs = standardize(x, &x_means, &x_scales);
        let (y_mean, y_scale) = mean_and_sd(y);
        let ys = y.mapv(|v| (v - y_mean) / y_scale);

        let n = x.nrows();
        // Rows sharing an origin (bootstrap copies) fall on the same side of the split.
        let groups: Vec<usize> = match origin {
            Some(o) => o.to_vec(),
            None => (0..n).collect(),
        };
        let mut ids = groups.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.shuffle(&mut rng.child(0).rng());
        let n_val = if cfg.validation_fraction > 0.0 && ids.len() >= 20 {
            ((cfg.validation_fraction * ids.len() as f64).round() as usize).max(1)
        } else {
            0
        };
        let held: HashSet<usize> = ids[..n_val].iter().copied().collect();
        let (val_idx, mut train_idx): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| held.contains(&groups[i]));
        let n_val = val_idx.len();
        let xv = xs.select(Axis(0), &val_idx);
        let yv = ys.select(Axis(0), &val_idx);

        let mut sizes = vec![x.ncols()];
        sizes.extend(&cfg.hidden);
        sizes.push(3 * k);
        let mut net = Net::new(&sizes, Activation::Tanh, &mut rng.child(1).rng());
        if k > 1 {
            let last = net.layers.last_mut().expect("output layer");
            for c in 0..k {
                last.b[k + c] = -1.5 + 3.0 * c as f64 / (k - 1) as f64;
            }
        }
        let mut opt = Optimizer::new(
            OptimizerKind::Adam {
                lr: cfg.learning_rate,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            cfg.weight_decay,
            &net,
        );

        let mut shuffle_rng = rng.child(2).rng();
        let mut best: Option<(f64, Net)> = None;
        let mut stale = 0;
        for epoch in 0..cfg.epochs {
            train_idx.shuffle(&mut shuffle_rng);
            for batch in train_idx.chunks(cfg.batch_size) {
                let xb = xs.select(Axis(0), batch);
                let yb = ys.select(Axis(0), batch);
                let outs = net.forward_cached(xb.view());
                let out = outs.last().expect("output");
                let mut g = Array2::zeros(out.raw_dim());
                let loss = nll(out.view(), yb.view(), k, Some(&mut g));
                if !loss.is_finite() {
                    return Err(HrtError::Diverged(format!("MDN likelihood non-finite in epoch {epoch}")));
                }
                let mut grads = net.backward(xb.view(), &outs, g);
                opt.step(&mut net, &mut grads);
            }
            if n_val > 0 {
                let val = nll(net.forward(xv.view()).view(), yv.view(), k, None);
                if !val.is_finite() {
                    return Err(HrtError::Diverged(format!("MDN validation likelihood non-finite in epoch {epoch}")));
                }
                match &best {
                    Some((b, _)) if val >= *b - 1e-6 => {
                        stale += 1;
                        if stale >= cfg.patience {
                            break;
                        }
                    }
                    _ => {
                        best = Some((val, net.clone()));
                        stale = 0;
                    }
                }
            }
        }
        if let Some((_, b)) = best {
            net = b;
        }
        Ok(Mdn {
            net,
            k,
            x_means,
            x_scales,
            y_mean,
            y_scale,
        })
    }

    pub(crate) fn conditional(&self, x_minus_j: ArrayView2<'_, f64>) -> Conditional {
        let xs = standardize(x_minus_j, &self.x_means, &self.x_scales);
        let out = self.net.forward(xs.view());
        let n = out.nrows();
        let k = self.k;
        let mut weights = Array2::zeros((n, k));
        let mut means = Array2::zeros((n, k));
        let mut sds = Array2::zeros((n, k));
        for (i, row) in out.outer_iter().enumerate() {
            let max_logit = row.slice(s![..k]).fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let mut z = 0.0;
            for c in 0..k {
                weights[[i, c]] = (row[c] - max_logit).exp();
                z += weights[[i, c]];
            }
            for c in 0..k {
                weights[[i, c]] /= z;
                means[[i, c]] = row[k + c] * self.y_scale + self.y_mean;
                sds[[i, c]] = (softplus(row[2 * k + c]) + VAR_FLOOR).sqrt() * self.y_scale;
            }
        }
        Conditional::Mixture { weights, means, sds }
    }
}
