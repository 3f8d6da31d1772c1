//! One-class-one-network perceptrons.
//!
//! Every character class owns a single-hidden-layer network trained to answer
//! "is this segment my class?". Net input of a unit is `n = w·p − b`, both
//! layers use the logistic function, and the loss is half the squared error.
//! Raw scores of all networks are normalized into a posterior vector.

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCORE_FLOOR: f64 = 1e-12;
pub const PRIOR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MlpError {
    #[error("input has {found} values, network expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("class {0} has no training example")]
    EmptyClass(usize),
    #[error("loss of class {class} became non-finite at epoch {epoch}")]
    Diverged { class: usize, epoch: usize },
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OconNet {
    pub class_id: usize,
    pub input_size: usize,
    pub hidden_size: usize,
    /// Row-major `hidden_size × input_size`.
    pub w_hidden: Vec<f64>,
    pub b_hidden: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

/// Gradient of the loss with the same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradient {
    pub w_hidden: Vec<f64>,
    pub b_hidden: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

impl OconNet {
    pub fn zeros(class_id: usize, input_size: usize, hidden_size: usize) -> Self {
        Self {
            class_id,
            input_size,
            hidden_size,
            w_hidden: vec![0.0; hidden_size * input_size],
            b_hidden: vec![0.0; hidden_size],
            w_out: vec![0.0; hidden_size],
            b_out: 0.0,
        }
    }

    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn random(class_id: usize, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(class_id, input_size, hidden_size);
        let r_in = 1.0 / (input_size as f64).sqrt();
        let r_out = 1.0 / (hidden_size as f64).sqrt();
        net.w_hidden.iter_mut().for_each(|w| *w = rng.random_range(-r_in..r_in));
        net.b_hidden.iter_mut().for_each(|w| *w = rng.random_range(-r_in..r_in));
        net.w_out.iter_mut().for_each(|w| *w = rng.random_range(-r_out..r_out));
        net.b_out = rng.random_range(-r_out..r_out);
        net
    }

    fn check(&self, input: &[f64]) -> Result<(), MlpError> {
        if input.len() != self.input_size {
            return Err(MlpError::DimensionMismatch { expected: self.input_size, found: input.len() });
        }
        Ok(())
    }

    fn hidden_into(&self, input: &[f64], hidden: &mut [f64]) {
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &self.w_hidden[j * self.input_size..(j + 1) * self.input_size];
            let n: f64 = row.iter().zip(input).map(|(w, p)| w * p).sum::<f64>() - self.b_hidden[j];
            *h = sigmoid(n);
        }
    }

    fn output(&self, hidden: &[f64]) -> f64 {
        sigmoid(self.w_out.iter().zip(hidden).map(|(w, h)| w * h).sum::<f64>() - self.b_out)
    }

    /// Raw class score in `(0, 1)`.
    pub fn forward(&self, input: &[f64]) -> Result<f64, MlpError> {
        self.check(input)?;
        let mut hidden = vec![0.0; self.hidden_size];
        self.hidden_into(input, &mut hidden);
        Ok(self.output(&hidden))
    }

    /// Loss `½(a − target)²` and its gradient by backpropagation.
    pub fn loss_gradient(&self, input: &[f64], target: f64) -> Result<(f64, NetGradient), MlpError> {
        self.check(input)?;
        let mut hidden = vec![0.0; self.hidden_size];
        self.hidden_into(input, &mut hidden);
        let a = self.output(&hidden);
        let delta_out = (a - target) * a * (1.0 - a);
        let mut g = NetGradient {
            w_hidden: vec![0.0; self.w_hidden.len()],
            b_hidden: vec![0.0; self.hidden_size],
            w_out: hidden.iter().map(|h| delta_out * h).collect(),
            b_out: -delta_out,
        };
        for j in 0..self.hidden_size {
            let h = hidden[j];
            let delta = delta_out * self.w_out[j] * h * (1.0 - h);
            g.b_hidden[j] = -delta;
            let row = &mut g.w_hidden[j * self.input_size..(j + 1) * self.input_size];
            for (gw, p) in row.iter_mut().zip(input) {
                *gw = delta * p;
            }
        }
        Ok((0.5 * (a - target).powi(2), g))
    }

    /// All parameters in a fixed order: hidden weights, hidden biases,
    /// output weights, output bias.
    pub fn params(&self) -> Vec<f64> {
        let mut v = self.w_hidden.clone();
        v.extend(&self.b_hidden);
        v.extend(&self.w_out);
        v.push(self.b_out);
        v
    }

    pub fn set_params(&mut self, v: &[f64]) {
        let (nh, h) = (self.w_hidden.len(), self.hidden_size);
        self.w_hidden.copy_from_slice(&v[..nh]);
        self.b_hidden.copy_from_slice(&v[nh..nh + h]);
        self.w_out.copy_from_slice(&v[nh + h..nh + 2 * h]);
        self.b_out = v[nh + 2 * h];
    }
}

impl NetGradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.w_hidden.clone();
        v.extend(&self.b_hidden);
        v.extend(&self.w_out);
        v.push(self.b_out);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// The literal value printed for this factor is 25, which diverges under
    /// the usual update; 0.25 is used instead.
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, momentum: 0.25, epochs: 4000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// `loss[c][e]`: mean loss of network `c` over epoch `e`; entry 0 is the
    /// loss before the first update.
    pub loss: Vec<Vec<f64>>,
}

pub fn init_nets(classes: usize, input_size: usize, hidden_size: usize, seed: u64) -> Vec<OconNet> {
    (0..classes)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            OconNet::random(c, input_size, hidden_size, &mut rng)
        })
        .collect()
}

/// Online backpropagation with momentum, one-vs-rest targets. Each network
/// shuffles the data with its own seeded stream, so the networks can train
/// in parallel and the result does not depend on scheduling.
pub fn train_backprop(nets: &mut [OconNet], inputs: &[Vec<f64>], labels: &[usize], cfg: &TrainConfig) -> Result<TrainReport, MlpError> {
    if !(cfg.learning_rate >= 0.0) || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(MlpError::BadConfig(format!("learning rate {} momentum {}", cfg.learning_rate, cfg.momentum)));
    }
    for net in nets.iter() {
        if !labels.contains(&net.class_id) {
            return Err(MlpError::EmptyClass(net.class_id));
        }
        if let Some(x) = inputs.first() {
            net.check(x)?;
        }
    }
    let results: Vec<Result<Vec<f64>, MlpError>> = nets.par_iter_mut().map(|net| train_one(net, inputs, labels, cfg)).collect();
    let loss = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(TrainReport { loss })
}

fn mean_loss(net: &OconNet, inputs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut hidden = vec![0.0; net.hidden_size];
    let total: f64 = inputs
        .iter()
        .zip(labels)
        .map(|(x, &l)| {
            net.hidden_into(x, &mut hidden);
            let y = if l == net.class_id { 1.0 } else { 0.0 };
            0.5 * (net.output(&hidden) - y).powi(2)
        })
        .sum();
    total / inputs.len().max(1) as f64
}

fn train_one(net: &mut OconNet, inputs: &[Vec<f64>], labels: &[usize], cfg: &TrainConfig) -> Result<Vec<f64>, MlpError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1 << 32 | net.class_id as u64);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let (ni, nh) = (net.input_size, net.hidden_size);
    let mut vel_wh = vec![0.0; ni * nh];
    let mut vel_bh = vec![0.0; nh];
    let mut vel_wo = vec![0.0; nh];
    let mut vel_bo = 0.0;
    let mut hidden = vec![0.0; nh];
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    losses.push(mean_loss(net, inputs, labels));
    let (lr, mu) = (cfg.learning_rate, cfg.momentum);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &k in &order {
            let x = &inputs[k];
            let y = if labels[k] == net.class_id { 1.0 } else { 0.0 };
            net.hidden_into(x, &mut hidden);
            let a = net.output(&hidden);
            total += 0.5 * (a - y) * (a - y);
            let d_out = (a - y) * a * (1.0 - a);
            for j in 0..nh {
                let h = hidden[j];
                let d = d_out * net.w_out[j] * h * (1.0 - h);
                let row = j * ni;
                for i in 0..ni {
                    let v = mu * vel_wh[row + i] - lr * d * x[i];
                    vel_wh[row + i] = v;
                    net.w_hidden[row + i] += v;
                }
                vel_bh[j] = mu * vel_bh[j] + lr * d;
                net.b_hidden[j] += vel_bh[j];
                vel_wo[j] = mu * vel_wo[j] - lr * d_out * h;
                net.w_out[j] += vel_wo[j];
            }
            vel_bo = mu * vel_bo + lr * d_out;
            net.b_out += vel_bo;
        }
        let mean = total / inputs.len().max(1) as f64;
        if !mean.is_finite() {
            return Err(MlpError::Diverged { class: net.class_id, epoch });
        }
        losses.push(mean);
    }
    Ok(losses)
}

/// Class frequencies, floored and renormalized.
pub fn class_priors(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; classes];
    for &l in labels {
        counts[l] += 1.0;
    }
    let n = labels.len().max(1) as f64;
    let floored: Vec<f64> = counts.iter().map(|c| (c / n).max(PRIOR_FLOOR)).collect();
    let z: f64 = floored.iter().sum();
    floored.iter().map(|p| p / z).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorVector {
    pub values: Vec<f64>,
    pub priors: Vec<f64>,
}

/// Normalizes raw scores (floored at [`SCORE_FLOOR`]) to sum to one.
pub fn normalize_scores(raw: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = raw.iter().map(|s| s.max(SCORE_FLOOR)).collect();
    let z: f64 = floored.iter().sum();
    floored.iter().map(|s| s / z).collect()
}

pub fn posterior_vector(nets: &[OconNet], input: &[f64], priors: &[f64]) -> Result<PosteriorVector, MlpError> {
    let raw = nets.iter().map(|n| n.forward(input)).collect::<Result<Vec<_>, _>>()?;
    Ok(PosteriorVector { values: normalize_scores(&raw), priors: priors.to_vec() })
}

/// Per-dimension zero-mean, unit-variance scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Dimensions with (near) zero spread keep a unit divisor.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m).powi(2) / n;
            }
        }
        let std = var.iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }
}

/// Concatenates each row with `width` neighbours on either side, padding
/// with zeros past the ends of the sequence.
pub fn context_windows(rows: &[Vec<f64>], width: usize) -> Vec<Vec<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    (0..rows.len())
        .map(|i| {
            let mut out = Vec::with_capacity(d * (2 * width + 1));
            for k in 0..=2 * width {
                let j = i as isize + k as isize - width as isize;
                if j < 0 || j as usize >= rows.len() {
                    out.extend(std::iter::repeat_n(0.0, d));
                } else {
                    out.extend_from_slice(&rows[j as usize]);
                }
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_network_outputs_one_half() {
        let net = OconNet::zeros(0, 3, 1);
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), 0.5);
        let mut net = net;
        net.b_out = 2.0;
        assert_relative_eq!(net.forward(&[0.0; 3]).unwrap(), sigmoid(-2.0), max_relative = 1e-15);
    }

    #[test]
    fn hand_computed_forward() {
        let mut net = OconNet::zeros(0, 2, 1);
        net.w_hidden = vec![1.0, 1.0];
        net.w_out = vec![1.0];
        let a = net.forward(&[1.0, -1.0]).unwrap();
        assert_relative_eq!(a, sigmoid(0.5), max_relative = 1e-15);
        assert!((a - 0.6225).abs() < 1e-4);
    }

    #[test]
    fn dimension_mismatch() {
        let net = OconNet::zeros(0, 3, 2);
        assert_eq!(net.forward(&[1.0]), Err(MlpError::DimensionMismatch { expected: 3, found: 1 }));
    }

    fn finite_difference_error(net: &OconNet, x: &[f64], target: f64) -> f64 {
        let (_, g) = net.loss_gradient(x, target).unwrap();
        let analytic = g.flatten();
        let base = net.params();
        let eps = 1e-5;
        let mut probe = net.clone();
        let mut worst: f64 = 0.0;
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] += eps;
            probe.set_params(&p);
            let up = probe.loss_gradient(x, target).unwrap().0;
            p[k] -= 2.0 * eps;
            probe.set_params(&p);
            let down = probe.loss_gradient(x, target).unwrap().0;
            let numeric = (up - down) / (2.0 * eps);
            let scale = analytic[k].abs().max(numeric.abs()).max(1e-7);
            worst = worst.max((analytic[k] - numeric).abs() / scale);
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..20 {
            let (ni, nh) = (rng.random_range(1..8), rng.random_range(1..6));
            let net = OconNet::random(case, ni, nh, &mut rng);
            let x: Vec<f64> = (0..ni).map(|_| rng.random_range(-2.0..2.0)).collect();
            let err = finite_difference_error(&net, &x, if case % 2 == 0 { 1.0 } else { 0.0 });
            assert!(err < 1e-4, "case {case}: {err}");
        }
    }

    fn toy(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let c = i % 2;
            xs.push((0..4).map(|_| c as f64 + rng.random_range(-0.3..0.3)).collect());
            ys.push(c);
        }
        (xs, ys)
    }

    #[test]
    fn separable_toy_set() {
        let (xs, ys) = toy(60, 1);
        let mut nets = init_nets(2, 4, 5, 3);
        let cfg = TrainConfig { learning_rate: 0.5, epochs: 200, seed: 4, ..TrainConfig::default() };
        let report = train_backprop(&mut nets, &xs, &ys, &cfg).unwrap();
        for curve in &report.loss {
            assert!(curve[5] < curve[0]);
        }
        let priors = class_priors(&ys, 2);
        let argmax = |x: &[f64]| {
            let p = posterior_vector(&nets, x, &priors).unwrap().values;
            if p[0] >= p[1] { 0 } else { 1 }
        };
        assert!(xs.iter().zip(&ys).all(|(x, &y)| argmax(x) == y));
        let (tx, ty) = toy(200, 99);
        let hits = tx.iter().zip(&ty).filter(|(x, &y)| argmax(x) == y).count();
        assert!(hits as f64 >= 0.95 * 200.0);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (xs, ys) = toy(20, 1);
        let mut nets = init_nets(2, 4, 3, 3);
        let before = nets.clone();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 7, ..TrainConfig::default() };
        train_backprop(&mut nets, &xs, &ys, &cfg).unwrap();
        assert_eq!(nets, before);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (xs, ys) = toy(30, 5);
        let cfg = TrainConfig { learning_rate: 0.1, epochs: 10, seed: 8, ..TrainConfig::default() };
        let mut a = init_nets(2, 4, 3, 1);
        let mut b = init_nets(2, 4, 3, 1);
        train_backprop(&mut a, &xs, &ys, &cfg).unwrap();
        train_backprop(&mut b, &xs, &ys, &cfg).unwrap();
        let bits = |n: &[OconNet]| n.iter().flat_map(|n| n.params()).map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn missing_class_is_reported() {
        let (xs, _) = toy(4, 1);
        let mut nets = init_nets(3, 4, 2, 0);
        let err = train_backprop(&mut nets, &xs, &[0, 1, 0, 1], &TrainConfig { epochs: 1, ..TrainConfig::default() });
        assert_eq!(err.unwrap_err(), MlpError::EmptyClass(2));
    }

    #[test]
    fn posterior_examples() {
        assert_eq!(normalize_scores(&[0.3, 0.3, 0.3, 0.3]), vec![0.25; 4]);
        let p = normalize_scores(&[0.9, 0.0, 0.0]);
        assert!(p[0] > 1.0 - 1e-10);
        let pri = class_priors(&[0, 0, 1], 3);
        assert!((pri.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(pri[2] > 0.0);
    }

    #[test]
    fn standardizer_and_windows() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(&rows);
        assert_eq!(s.apply(&rows[0]), vec![-1.0, 0.0]);
        let w = context_windows(&rows, 1);
        assert_eq!(w[0], vec![0.0, 0.0, 1.0, 5.0, 3.0, 5.0]);
        assert_eq!(w[1], vec![1.0, 5.0, 3.0, 5.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn posteriors_sum_to_one(raw in proptest::collection::vec(0.0f64..1.0, 1..20)) {
            let p = normalize_scores(&raw);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0));
        }

        #[test]
        fn outputs_stay_inside_unit_interval(seed in any::<u64>(), x in proptest::collection::vec(-50.0f64..50.0, 5)) {
            let net = OconNet::random(0, 5, 4, &mut ChaCha8Rng::seed_from_u64(seed));
            let a = net.forward(&x).unwrap();
            prop_assert!(a > 0.0 && a < 1.0);
        }
    }
}
