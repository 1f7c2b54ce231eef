use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::dist::Conditional;
use crate::data::support_index;
use crate::error::{HrtError, Result};
use crate::linalg::{column_stats, standardize};
use crate::nn::{Activation, Net, Optimizer, OptimizerKind};
use crate::rng::RngStream;

/// L2-penalized multinomial logistic regression of a discrete feature on `x_{−j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscreteConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for DiscreteConfig {
    fn default() -> Self {
        DiscreteConfig {
            l2: 1e-2,
            learning_rate: 0.05,
            epochs: 300,
        }
    }
}

impl DiscreteConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0) || !(self.learning_rate > 0.0) || self.epochs == 0 {
            return Err(HrtError::invalid(
                "discrete conditional needs l2 >= 0, positive learning rate and epochs",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SoftmaxConditional {
    support: Vec<f64>,
    net: Option<Net>,
    x_means: Array1<f64>,
    x_scales: Array1<f64>,
}

fn softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.outer_iter_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    z
}

impl SoftmaxConditional {
    pub(crate) fn fit(
        x: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
        support: &[f64],
        cfg: &DiscreteConfig,
        rng: &RngStream,
    ) -> Result<Self> {
        cfg.validate()?;
        let (x_means, x_scales) = column_stats(x);
        let s = support.len();
        if s <= 1 {
            return Ok(SoftmaxConditional {
                support: support.to_vec(),
                net: None,
                x_means,
                x_scales,
            });
        }
        let labels: Vec<usize> = y
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                support_index(support, v).ok_or_else(|| HrtError::Data {
                    row: i + 1,
                    message: format!("value {v} outside the declared support"),
                })
            })
            .collect::<Result<_>>()?;
        let xs = standardize(x, &x_means, &x_scales);
        let n = xs.nrows() as f64;
        let mut net = Net::new(&[x.ncols(), s], Activation::Tanh, &mut rng.child(0).rng());
        net.layers[0].w.fill(0.0);
        let mut counts = vec![0.5_f64; s];
        for &l in &labels {
            counts[l] += 1.0;
        }
        for (c, &cnt) in counts.iter().enumerate() {
            net.layers[0].b[c] = cnt.ln();
        }
        let mut opt = Optimizer::new(
            OptimizerKind::Adam {
                lr: cfg.learning_rate,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            cfg.l2,
            &net,
        );
        for _ in 0..cfg.epochs {
            let outs = net.forward_cached(xs.view());
            let mut g = softmax_rows(outs[0].clone());
            for (i, &l) in labels.iter().enumerate() {
                g[[i, l]] -= 1.0;
            }
            g /= n;
            let mut grads = net.backward(xs.view(), &outs, g);
            opt.step(&mut net, &mut grads);
        }
        if net.params_mut().any(|p| !p.is_finite()) {
            return Err(HrtError::Diverged("discrete conditional parameters non-finite".into()));
        }
        Ok(SoftmaxConditional {
            support: support.to_vec(),
            net: Some(net),
            x_means,
            x_scales,
        })
    }

    pub(crate) fn conditional(&self, x_minus_j: ArrayView2<'_, f64>) -> Conditional {
        let n = x_minus_j.nrows();
        let probs = match &self.net {
            None => Array2::ones((n, self.support.len())),
            Some(net) => {
                let xs = standardize(x_minus_j, &self.x_means, &self.x_scales);
                softmax_rows(net.forward(xs.view()))
            }
        };
        Conditional::Discrete {
            support: self.support.clone(),
            probs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn learns_a_deterministic_dependence() {
        let x = Array2::from_shape_fn((200, 1), |(i, _)| if i % 2 == 0 { -1.0 } else { 1.0 });
        let y = x.column(0).mapv(|v| if v < 0.0 { 0.0 } else { 1.0 });
        let m = SoftmaxConditional::fit(x.view(), y.view(), &[0.0, 1.0], &DiscreteConfig::default(), &RngStream::new(0))
            .unwrap();
        let c = m.conditional(x.view());
        assert!(c.density(0, 0.0) > 0.9);
        assert!(c.density(1, 1.0) > 0.9);
        for i in 0..4 {
            assert!((c.density(i, 0.0) + c.density(i, 1.0) - 1.0).abs() < 1e-12);
        }
    }
}
