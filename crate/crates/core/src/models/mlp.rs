use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{HrtError, Result};
use crate::linalg::{column_stats, mean_and_sd, standardize};
use crate::nn::{Activation, Dense, Net, Optimizer, OptimizerKind};
use crate::rng::{Purpose, RngStream};

/// Feed-forward ReLU regressor trained with RMSprop on squared error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![200, 200],
            learning_rate: 3e-5,
            epochs: 200,
            batch_size: 32,
            weight_decay: 0.0,
        }
    }
}

impl MlpConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.iter().any(|&w| w == 0) {
            return Err(HrtError::invalid("MLP hidden widths must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(HrtError::invalid("MLP learning rate, epochs and batch size must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(HrtError::invalid("MLP weight decay must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    net: Net,
    x_means: Array1<f64>,
    x_scales: Array1<f64>,
    y_mean: f64,
    y_scale: f64,
}

/// Half mean squared error of `net` on `(x, y)` and its parameter gradients.
#[doc(hidden)]
pub fn mlp_loss_and_grad(
    net_layers: &[(Array2<f64>, Array1<f64>)],
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> (f64, Vec<(Array2<f64>, Array1<f64>)>) {
    let net = Net {
        layers: net_layers
            .iter()
            .map(|(w, b)| Dense { w: w.clone(), b: b.clone() })
            .collect(),
        act: Activation::Relu,
    };
    let (loss, grads) = loss_and_grad(&net, x, y);
    (loss, grads.into_iter().map(|d| (d.w, d.b)).collect())
}

fn loss_and_grad(net: &Net, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> (f64, Vec<Dense>) {
    let outs = net.forward_cached(x);
    let pred = outs.last().expect("at least one layer").column(0).to_owned();
    let m = y.len() as f64;
    let diff = &pred - &y;
    let loss = 0.5 * diff.dot(&diff) / m;
    let dout = (diff / m).insert_axis(Axis(1));
    (loss, net.backward(x, &outs, dout))
}

impl MlpModel {
    pub(crate) fn fit(
        x: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
        cfg: &MlpConfig,
        rng: &RngStream,
    ) -> Result<Self> {
        cfg.validate()?;
        let (x_means, x_scales) = column_stats(x);
        let xs = standardize(x, &x_means, &x_scales);
        let (y_mean, y_scale) = mean_and_sd(y);
        let ys = y.mapv(|v| (v - y_mean) / y_scale);

        let mut sizes = vec![x.ncols()];
        sizes.extend(&cfg.hidden);
        sizes.push(1);
        let mut init_rng = rng.purpose(Purpose::Fit).child(0).rng();
        let mut net = Net::new(&sizes, Activation::Relu, &mut init_rng);
        let mut opt = Optimizer::new(
            OptimizerKind::RmsProp {
                lr: cfg.learning_rate,
                alpha: 0.99,
                eps: 1e-8,
            },
            cfg.weight_decay,
            &net,
        );

        let n = x.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = rng.purpose(Purpose::Fit).child(1).rng();
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let xb = xs.select(Axis(0), batch);
                let yb = ys.select(Axis(0), batch);
                let (loss, mut grads) = loss_and_grad(&net, xb.view(), yb.view());
                if !loss.is_finite() {
                    return Err(HrtError::Diverged(format!("MLP loss became non-finite in epoch {epoch}")));
                }
                epoch_loss += loss * batch.len() as f64;
                opt.step(&mut net, &mut grads);
            }
            if !epoch_loss.is_finite() {
                return Err(HrtError::Diverged(format!("MLP loss became non-finite in epoch {epoch}")));
            }
        }
        if net.params_mut().any(|p| !p.is_finite()) {
            return Err(HrtError::Diverged("MLP parameters became non-finite".into()));
        }
        Ok(MlpModel {
            net,
            x_means,
            x_scales,
            y_mean,
            y_scale,
        })
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let xs = standardize(x, &self.x_means, &self.x_scales);
        let out = self.net.forward(xs.view());
        out.column(0).mapv(|v| v * self.y_scale + self.y_mean)
    }

    /// Precomputes the first-layer pre-activation of `x` excluding column `j`.
    pub(crate) fn swap(&self, x: ArrayView2<'_, f64>, j: usize) -> MlpSwap<'_> {
        let mut xs = standardize(x, &self.x_means, &self.x_scales);
        xs.column_mut(j).fill(0.0);
        let first = &self.net.layers[0];
        let mut base = xs.dot(&first.w);
        base += &first.b;
        MlpSwap { model: self, base, j }
    }
}

/// MLP predictions on a fixed design with one column replaced.
pub(crate) struct MlpSwap<'a> {
    model: &'a MlpModel,
    base: Array2<f64>,
    j: usize,
}

impl MlpSwap<'_> {
    /// Predictions for every column, concatenated.
    pub(crate) fn predict(&self, columns: &[&[f64]]) -> Vec<f64> {
        let m = self.model;
        let n = self.base.nrows();
        let h = self.base.ncols();
        let (mean, scale) = (m.x_means[self.j], m.x_scales[self.j]);
        let wj = m.net.layers[0].w.row(self.j);
        let mut z = Array2::zeros((n * columns.len(), h));
        for (b, col) in columns.iter().enumerate() {
            for i in 0..n {
                let v = (col[i] - mean) / scale;
                let mut row = z.row_mut(b * n + i);
                for ((o, base), w) in row.iter_mut().zip(self.base.row(i)).zip(wj.iter()) {
                    *o = base + v * w;
                }
            }
        }
        let out = m.net.forward_from_first(z);
        out.column(0).iter().map(|v| v * m.y_scale + m.y_mean).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn learns_a_simple_function() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_simple_fn((200, 2), || StandardNormal.sample(&mut rng));
        let y = x.column(0).mapv(|v: f64| v.max(0.0)) + x.column(1).mapv(|v: f64| 0.5 * v);
        let cfg = MlpConfig {
            hidden: vec![16],
            learning_rate: 1e-2,
            epochs: 60,
            ..Default::default()
        };
        let m = MlpModel::fit(x.view(), y.view(), &cfg, &RngStream::new(1)).unwrap();
        let pred = m.predict(x.view());
        let mse = (&pred - &y).mapv(|d| d * d).mean().unwrap();
        let var = y.var(0.0);
        assert!(mse < 0.1 * var, "mse {mse} var {var}");
        // Pure predict.
        assert_eq!(pred, m.predict(x.view()));
    }

    #[test]
    fn divergence_is_reported() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_simple_fn((50, 3), || StandardNormal.sample(&mut rng));
        let y = x.column(0).to_owned();
        let cfg = MlpConfig {
            hidden: vec![8],
            learning_rate: 1e300,
            epochs: 5,
            ..Default::default()
        };
        assert!(matches!(
            MlpModel::fit(x.view(), y.view(), &cfg, &RngStream::new(1)),
            Err(HrtError::Diverged(_))
        ));
    }
}
