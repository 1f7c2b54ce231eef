//! Minimal fully connected networks with hand-written backprop.
//!
//! Shared by the MLP predictor and the mixture density network. Weights are
//! stored `fan_in × fan_out` so a batch forward pass is `X · W + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Dense {
        Dense {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Net {
    pub layers: Vec<Dense>,
    pub act: Activation,
}

impl Net {
    /// `sizes = [input, hidden..., output]`. Hidden layers use `act`, the last layer is linear.
    /// Scaled-uniform init: He for ReLU, Glorot for tanh.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], act: Activation, rng: &mut R) -> Net {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = match act {
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                    Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite init bounds");
                Dense {
                    w: Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng)),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Net { layers, act }
    }

    fn activate(&self, z: &mut Array2<f64>) {
        match self.act {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.w);
            z += &layer.b;
            if i < last {
                self.activate(&mut z);
            }
            h = z;
        }
        h
    }

    /// Completes a forward pass given the first layer's pre-activation `x · W₀ + b₀`.
    pub fn forward_from_first(&self, mut z: Array2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        if last == 0 {
            return z;
        }
        self.activate(&mut z);
        let mut h = z;
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            let mut z = h.dot(&layer.w);
            z += &layer.b;
            if i < last {
                self.activate(&mut z);
            }
            h = z;
        }
        h
    }

    /// Forward pass keeping every layer's output (post-activation for hidden layers).
    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let last = self.layers.len() - 1;
        let mut outs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { outs[i - 1].view() };
            let mut z = input.dot(&layer.w);
            z += &layer.b;
            if i < last {
                self.activate(&mut z);
            }
            outs.push(z);
        }
        outs
    }

    /// Gradients of a loss with respect to all parameters, given `d loss / d output`.
    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        outs: &[Array2<f64>],
        dout: Array2<f64>,
    ) -> Vec<Dense> {
        let mut grads: Vec<Dense> = self.layers.iter().map(Dense::zeros_like).collect();
        let mut delta = dout;
        for i in (0..self.layers.len()).rev() {
            let input = if i == 0 { x } else { outs[i - 1].view() };
            grads[i].w = input.t().dot(&delta);
            grads[i].b = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut prev = delta.dot(&self.layers[i].w.t());
                let a = &outs[i - 1];
                match self.act {
                    Activation::Relu => Zip::from(&mut prev).and(a).for_each(|d, &av| {
                        if av <= 0.0 {
                            *d = 0.0;
                        }
                    }),
                    Activation::Tanh => {
                        Zip::from(&mut prev).and(a).for_each(|d, &av| *d *= 1.0 - av * av)
                    }
                }
                delta = prev;
            }
        }
        grads
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    #[cfg(test)]
    pub fn flatten(grads: &[Dense]) -> Vec<f64> {
        grads
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum OptimizerKind {
    RmsProp { lr: f64, alpha: f64, eps: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

pub(crate) struct Optimizer {
    kind: OptimizerKind,
    weight_decay: f64,
    m: Vec<Dense>,
    v: Vec<Dense>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64, net: &Net) -> Self {
        let zeros: Vec<Dense> = net.layers.iter().map(Dense::zeros_like).collect();
        Optimizer {
            kind,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Net, grads: &mut [Dense]) {
        self.t += 1;
        let wd = self.weight_decay;
        for (l, g) in net.layers.iter().zip(grads.iter_mut()) {
            if wd > 0.0 {
                g.w.scaled_add(wd, &l.w);
            }
        }
        match self.kind {
            OptimizerKind::RmsProp { lr, alpha, eps } => {
                for ((layer, g), v) in net.layers.iter_mut().zip(grads.iter()).zip(self.v.iter_mut()) {
                    rms_update(&mut layer.w, &g.w, &mut v.w, lr, alpha, eps);
                    rms_update_1d(&mut layer.b, &g.b, &mut v.b, lr, alpha, eps);
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.t);
                let bc2 = 1.0 - beta2.powi(self.t);
                let step = lr * bc2.sqrt() / bc1;
                for (((layer, g), m), v) in net
                    .layers
                    .iter_mut()
                    .zip(grads.iter())
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    Zip::from(&mut layer.w)
                        .and(&g.w)
                        .and(&mut m.w)
                        .and(&mut v.w)
                        .for_each(|p, &gr, mm, vv| adam_scalar(p, gr, mm, vv, beta1, beta2, step, eps));
                    Zip::from(&mut layer.b)
                        .and(&g.b)
                        .and(&mut m.b)
                        .and(&mut v.b)
                        .for_each(|p, &gr, mm, vv| adam_scalar(p, gr, mm, vv, beta1, beta2, step, eps));
                }
            }
        }
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn adam_scalar(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, b1: f64, b2: f64, step: f64, eps: f64) {
    *m = b1 * *m + (1.0 - b1) * g;
    *v = b2 * *v + (1.0 - b2) * g * g;
    *p -= step * *m / (v.sqrt() + eps);
}

fn rms_update(p: &mut Array2<f64>, g: &Array2<f64>, v: &mut Array2<f64>, lr: f64, alpha: f64, eps: f64) {
    Zip::from(p).and(g).and(v).for_each(|p, &g, v| {
        *v = alpha * *v + (1.0 - alpha) * g * g;
        *p -= lr * g / (v.sqrt() + eps);
    });
}

fn rms_update_1d(p: &mut Array1<f64>, g: &Array1<f64>, v: &mut Array1<f64>, lr: f64, alpha: f64, eps: f64) {
    Zip::from(p).and(g).and(v).for_each(|p, &g, v| {
        *v = alpha * *v + (1.0 - alpha) * g * g;
        *p -= lr * g / (v.sqrt() + eps);
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sq_loss(net: &Net, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let out = net.forward(x.view());
        0.5 * (&out - y).mapv(|d| d * d).sum()
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for act in [Activation::Tanh, Activation::Relu] {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
            let net = Net::new(&[3, 4, 2], act, &mut rng);
            let x = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
            let y = Array2::from_shape_fn((5, 2), |(i, j)| ((i + 2 * j) as f64 * 0.5).cos());
            let outs = net.forward_cached(x.view());
            let dout = outs.last().unwrap() - &y;
            let analytic = Net::flatten(&net.backward(x.view(), &outs, dout));
            let h = 1e-6;
            let mut probe = net.clone();
            let n_params = analytic.len();
            for idx in 0..n_params {
                let orig = *probe.params_mut().nth(idx).unwrap();
                *probe.params_mut().nth(idx).unwrap() = orig + h;
                let up = sq_loss(&probe, &x, &y);
                *probe.params_mut().nth(idx).unwrap() = orig - h;
                let down = sq_loss(&probe, &x, &y);
                *probe.params_mut().nth(idx).unwrap() = orig;
                let numeric = (up - down) / (2.0 * h);
                let scale = numeric.abs().max(analytic[idx].abs()).max(1e-6);
                assert!(
                    (numeric - analytic[idx]).abs() / scale < 1e-4,
                    "{act:?} param {idx}: {numeric} vs {}",
                    analytic[idx]
                );
            }
        }
    }
}
