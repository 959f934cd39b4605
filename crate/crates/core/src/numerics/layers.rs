//! The four layer types the model is built from.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{BatchStats, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Fully connected layer: `x·w + b`.
pub fn forward_linear(g: &mut Graph, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    g.linear(x, w, b)
}

/// Weights of one LSTM layer. Gate columns are ordered input, forget,
/// candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmLayer {
    /// `[in, 4H]`
    pub w_ih: Var,
    /// `[H, 4H]`
    pub w_hh: Var,
    /// `[4H]`
    pub bias: Var,
}

/// One cell update; returns `(h, c)`.
pub fn lstm_cell(g: &mut Graph, layer: &LstmLayer, x: Var, state: Option<(Var, Var)>) -> Result<(Var, Var)> {
    let hidden = g.value(layer.w_hh).rows();
    let mut gates = g.linear(x, layer.w_ih, Some(layer.bias))?;
    if let Some((h, _)) = state {
        let rec = g.linear(h, layer.w_hh, None)?;
        gates = g.add(gates, rec)?;
    }
    let i = g.slice_cols(gates, 0, hidden)?;
    let f = g.slice_cols(gates, hidden, hidden)?;
    let cand = g.slice_cols(gates, 2 * hidden, hidden)?;
    let o = g.slice_cols(gates, 3 * hidden, hidden)?;
    let i = g.sigmoid(i)?;
    let o = g.sigmoid(o)?;
    let cand = g.tanh(cand)?;
    let mut c = g.mul(i, cand)?;
    if let Some((_, c_prev)) = state {
        let f = g.sigmoid(f)?;
        let keep = g.mul(f, c_prev)?;
        c = g.add(c, keep)?;
    }
    let tc = g.tanh(c)?;
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Stacked LSTM over `seq` (one `[batch, in]` matrix per step) from a zero
/// state. Returns the top layer's output at every step.
pub fn lstm_forward(g: &mut Graph, seq: &[Var], layers: &[LstmLayer]) -> Result<Vec<Var>> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut inputs = seq.to_vec();
    for layer in layers {
        let mut state = None;
        let mut outputs = Vec::with_capacity(inputs.len());
        for &x in &inputs {
            let (h, c) = lstm_cell(g, layer, x, state)?;
            outputs.push(h);
            state = Some((h, c));
        }
        inputs = outputs;
    }
    Ok(inputs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Learnable scale/shift of a batch-norm layer.
#[derive(Clone, Copy, Debug)]
pub struct BatchNormParams {
    pub gamma: Var,
    pub beta: Var,
}

/// Running statistics carried between training and inference.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(features: usize) -> Self {
        RunningStats {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }

    /// Exponential update with momentum 0.1.
    pub fn update(&mut self, observed: &BatchStats) {
        for (r, m) in self.mean.iter_mut().zip(&observed.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in self.var.iter_mut().zip(&observed.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }

    fn as_batch_stats(&self) -> BatchStats {
        BatchStats {
            mean: self.mean.clone(),
            var: self.var.clone(),
        }
    }
}

/// Train or inference behaviour for batch norm and dropout.
pub enum LayerMode<'a> {
    Train {
        drop_rate: f64,
        rng: &'a mut ChaCha8Rng,
    },
    Infer,
}

impl LayerMode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, LayerMode::Train { .. })
    }
}

/// Inverted-dropout mask: kept units scaled by `1/(1-rate)`; rate 1 drops all.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    if rate >= 1.0 {
        return vec![0.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect()
}

/// Batch norm, then dropout, then activation.
///
/// In training mode the statistics are the batch's own (returned for the
/// caller to fold into `running`); in inference mode `running` is applied and
/// dropout is off.
pub fn bn_dropout_act(
    g: &mut Graph,
    x: Var,
    bn: &BatchNormParams,
    running: &RunningStats,
    act: Activation,
    mode: &mut LayerMode<'_>,
) -> Result<(Var, Option<BatchStats>)> {
    match mode {
        LayerMode::Train { drop_rate, rng } => {
            let (y, stats) = g.batch_norm(x, bn.gamma, bn.beta, None, BN_EPS)?;
            let mask = dropout_mask(g.value(y).len(), *drop_rate, rng);
            let y = g.mul_const(y, mask)?;
            Ok((act.apply(g, y)?, stats))
        }
        LayerMode::Infer => {
            let (y, _) = g.batch_norm(x, bn.gamma, bn.beta, Some(&running.as_batch_stats()), BN_EPS)?;
            Ok((act.apply(g, y)?, None))
        }
    }
}

/// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init(dims: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = dims.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_parts(dims, values)
}

/// Convenience for tests and examples: a generator from a bare seed.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(dims.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn linear_trivial_cases() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1], &[3.0]));
        let w = g.constant(t(&[1, 1], &[1.0]));
        let b = g.constant(t(&[1], &[0.0]));
        let y = forward_linear(&mut g, x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).values(), &[3.0]);

        let w2 = g.constant(t(&[1, 1], &[2.0]));
        let b2 = g.constant(t(&[1], &[1.0]));
        let y = forward_linear(&mut g, x, w2, Some(b2)).unwrap();
        assert_eq!(g.value(y).values(), &[7.0]);
    }

    #[test]
    fn lstm_zero_weights_zero_output() {
        let mut g = Graph::new();
        let hidden = 3;
        let layers: Vec<LstmLayer> = (0..3)
            .map(|l| LstmLayer {
                w_ih: g.param(Tensor::zeros(vec![if l == 0 { 2 } else { hidden }, 4 * hidden])),
                w_hh: g.param(Tensor::zeros(vec![hidden, 4 * hidden])),
                bias: g.param(Tensor::zeros(vec![4 * hidden])),
            })
            .collect();
        let seq: Vec<Var> = (0..4).map(|_| g.constant(Tensor::zeros(vec![2, 2]))).collect();
        let out = lstm_forward(&mut g, &seq, &layers).unwrap();
        assert_eq!(out.len(), 4);
        for h in out {
            assert!(g.value(h).values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn lstm_empty_sequence_errors() {
        let mut g = Graph::new();
        assert!(matches!(lstm_forward(&mut g, &[], &[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn scalar_cell_matches_hand_evaluation() {
        // in = 1, H = 1; gate weights (i, f, g, o).
        let (wi, wh, b) = ([0.5, -0.3, 0.8, 0.2], [0.1, 0.4, -0.6, 0.9], [0.05, 0.1, -0.2, 0.3]);
        let (x, h0, c0) = (0.7, -0.4, 0.25);
        let pre: Vec<f64> = (0..4).map(|k| wi[k] * x + wh[k] * h0 + b[k]).collect();
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let c1 = s(pre[1]) * c0 + s(pre[0]) * pre[2].tanh();
        let h1 = s(pre[3]) * c1.tanh();

        let mut g = Graph::new();
        let layer = LstmLayer {
            w_ih: g.param(t(&[1, 4], &wi)),
            w_hh: g.param(t(&[1, 4], &wh)),
            bias: g.param(t(&[4], &b)),
        };
        let xv = g.constant(t(&[1, 1], &[x]));
        let hv = g.constant(t(&[1, 1], &[h0]));
        let cv = g.constant(t(&[1, 1], &[c0]));
        let (h, c) = lstm_cell(&mut g, &layer, xv, Some((hv, cv))).unwrap();
        assert!((g.value(h).item() - h1).abs() < 1e-15);
        assert!((g.value(c).item() - c1).abs() < 1e-15);
    }

    #[test]
    fn three_step_run_composes_single_steps() {
        let mut rng = seeded(11);
        let mut g = Graph::new();
        let hidden = 4;
        let layer = LstmLayer {
            w_ih: g.param(uniform_init(vec![3, 4 * hidden], 3, &mut rng)),
            w_hh: g.param(uniform_init(vec![hidden, 4 * hidden], hidden, &mut rng)),
            bias: g.param(uniform_init(vec![4 * hidden], hidden, &mut rng)),
        };
        let seq: Vec<Var> = (0..3).map(|_| g.constant(uniform_init(vec![2, 3], 1, &mut rng))).collect();
        let full = lstm_forward(&mut g, &seq, &[layer]).unwrap();
        let mut state = None;
        for (step, &x) in seq.iter().enumerate() {
            let (h, c) = lstm_cell(&mut g, &layer, x, state).unwrap();
            assert_eq!(g.value(h).values(), g.value(full[step]).values());
            state = Some((h, c));
        }
    }

    fn bn_setup(g: &mut Graph, features: usize) -> BatchNormParams {
        BatchNormParams {
            gamma: g.param(Tensor::filled(vec![features], 1.0)),
            beta: g.param(Tensor::zeros(vec![features])),
        }
    }

    #[test]
    fn bn_infer_identity_then_relu() {
        let mut g = Graph::new();
        let bn = bn_setup(&mut g, 1);
        let x = g.constant(t(&[2, 1], &[-1.0, 2.0]));
        let (y, stats) = bn_dropout_act(&mut g, x, &bn, &RunningStats::new(1), Activation::Relu, &mut LayerMode::Infer).unwrap();
        assert!(stats.is_none());
        let v = g.value(y).values();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 2.0 / (1.0f64 + BN_EPS).sqrt()).abs() < 1e-12);
        assert!((v[1] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn bn_train_standardizes_batch() {
        let mut g = Graph::new();
        let bn = bn_setup(&mut g, 1);
        let x = g.constant(t(&[2, 1], &[1.0, 3.0]));
        let mut rng = seeded(0);
        let mut mode = LayerMode::Train {
            drop_rate: 0.0,
            rng: &mut rng,
        };
        let (y, stats) = bn_dropout_act(&mut g, x, &bn, &RunningStats::new(1), Activation::Tanh, &mut mode).unwrap();
        let stats = stats.unwrap();
        assert_eq!((stats.mean[0], stats.var[0]), (2.0, 1.0));
        // mean 2, biased variance 1, so x̂ = ±1/sqrt(1 + eps).
        let v = g.value(y).values();
        let expect = (1.0 / (1.0f64 + BN_EPS).sqrt()).tanh();
        assert!((v[0] + expect).abs() < 1e-12 && (v[1] - expect).abs() < 1e-12);

        let (raw, _) = g.batch_norm(x, bn.gamma, bn.beta, None, BN_EPS).unwrap();
        let v = g.value(raw).values();
        assert!((v[0] + 1.0).abs() < 1e-5 && (v[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn bn_train_needs_two_rows() {
        let mut g = Graph::new();
        let bn = bn_setup(&mut g, 2);
        let x = g.constant(t(&[1, 2], &[1.0, 3.0]));
        let mut rng = seeded(0);
        let mut mode = LayerMode::Train {
            drop_rate: 0.4,
            rng: &mut rng,
        };
        let err = bn_dropout_act(&mut g, x, &bn, &RunningStats::new(2), Activation::Relu, &mut mode);
        assert!(matches!(err, Err(Error::BatchStatistics(1))));
    }

    #[test]
    fn full_dropout_zeroes_everything() {
        let mut g = Graph::new();
        let bn = bn_setup(&mut g, 3);
        let x = g.constant(t(&[2, 3], &[1.0, -2.0, 3.0, 4.0, 5.0, -6.0]));
        let mut rng = seeded(1);
        let mut mode = LayerMode::Train {
            drop_rate: 1.0,
            rng: &mut rng,
        };
        let (y, _) = bn_dropout_act(&mut g, x, &bn, &RunningStats::new(3), Activation::Tanh, &mut mode).unwrap();
        assert!(g.value(y).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_keeps_expected_scale() {
        let mut rng = seeded(5);
        let mask = dropout_mask(20_000, 0.4, &mut rng);
        let kept = mask.iter().filter(|&&m| m > 0.0).count() as f64 / 20_000.0;
        assert!((kept - 0.6).abs() < 0.02);
        assert!(mask.iter().all(|&m| m == 0.0 || (m - 1.0 / 0.6).abs() < 1e-15));
    }

    #[test]
    fn running_stats_momentum() {
        let mut r = RunningStats::new(1);
        r.update(&BatchStats {
            mean: vec![1.0],
            var: vec![3.0],
        });
        assert!((r.mean[0] - 0.1).abs() < 1e-15 && (r.var[0] - 1.2).abs() < 1e-15);
    }
}
