//! Batched forward pass on the autodiff tape.
//!
//! Every frame is a `[batch, J·3]` matrix, so one pass serves a whole
//! mini-batch of windows. Training and inference share this code; the plain
//! [`PmsModel`] prediction methods wrap it in inference mode.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use super::{branch_list, branch_prefix, running_key, BranchKind, FusionMode, PmsModel};
use crate::error::{Error, Result};
use crate::increments::{covered_range, SEGMENTS};
use crate::numerics::layers::{bn_dropout_act, dropout_mask, lstm_forward, BatchNormParams, LstmLayer};
use crate::numerics::{BatchStats, Graph, LayerMode, ParamGroup, RngState, Stream, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    /// Batch statistics and dropout; the dropout masks are drawn from
    /// counter `counter` of the seed's dropout stream.
    Train { seed: u64, counter: u64 },
    /// Running statistics, no dropout.
    Infer,
}

#[derive(Clone)]
struct BranchVars {
    prefix: String,
    fc_in: (Var, Option<Var>),
    lstm: Vec<LstmLayer>,
    fc_mid: (Var, Option<Var>),
    bn: Option<BatchNormParams>,
    fc_out_a: (Var, Option<Var>),
    fc_out_b: (Var, Option<Var>),
}

/// Output of one short prediction.
pub struct ShortOutput {
    /// The blended `L` frames.
    pub frames: Vec<Var>,
    /// Each active scale's own `L` frames from the final round.
    pub branches: Vec<(usize, Vec<Var>)>,
}

/// One forward pass: the tape, the parameter leaves on it, and the batch
/// statistics observed in training mode.
pub struct Forward<'m> {
    model: &'m PmsModel,
    pub graph: Graph,
    params: Vec<(String, Var)>,
    branches: BTreeMap<(usize, BranchKind), BranchVars>,
    rng: Option<ChaCha8Rng>,
    batch: usize,
    /// `(running statistics key, statistics)` for every batch-norm evaluation
    /// of the first short prediction, in order.
    pub bn_updates: Vec<(String, BatchStats)>,
    /// Number of short predictions evaluated so far.
    pub short_calls: usize,
    /// Rollout step of the current branch call; selects the batch-norm
    /// running statistics.
    step: usize,
}

impl<'m> Forward<'m> {
    pub fn new(model: &'m PmsModel, mode: ForwardMode, track_grads: bool) -> Self {
        Self::with_params(model, &model.params, mode, track_grads)
    }

    /// Uses `params` in place of the model's own parameters (same names and
    /// shapes), e.g. for finite-difference probes.
    pub fn with_params(model: &'m PmsModel, params: &ParamGroup, mode: ForwardMode, track_grads: bool) -> Self {
        let mut graph = Graph::new();
        let mut vars = BTreeMap::new();
        let mut list = Vec::with_capacity(params.len());
        for (name, t) in params.iter() {
            let v = if track_grads {
                graph.param(t.clone())
            } else {
                graph.constant(t.clone())
            };
            vars.insert(name.to_string(), v);
            list.push((name.to_string(), v));
        }
        let cfg = &model.config;
        let fc = |p: &str, name: &str| (vars[&format!("{p}.{name}.w")], vars.get(&format!("{p}.{name}.b")).copied());
        let mut branches = BTreeMap::new();
        for (delta, kind) in branch_list(cfg) {
            let p = branch_prefix(delta, kind);
            let lstm = (0..cfg.lstm_layers)
                .map(|l| LstmLayer {
                    w_ih: vars[&format!("{p}.lstm{l}.w_ih")],
                    w_hh: vars[&format!("{p}.lstm{l}.w_hh")],
                    bias: vars[&format!("{p}.lstm{l}.b")],
                })
                .collect();
            let bn = cfg.bn_relu.then(|| BatchNormParams {
                gamma: vars[&format!("{p}.bn.gamma")],
                beta: vars[&format!("{p}.bn.beta")],
            });
            let bv = BranchVars {
                fc_in: fc(&p, "fc_in"),
                lstm,
                fc_mid: fc(&p, "fc_mid"),
                bn,
                fc_out_a: fc(&p, "fc_out_a"),
                fc_out_b: fc(&p, "fc_out_b"),
                prefix: p,
            };
            branches.insert((delta, kind), bv);
        }
        let rng = match mode {
            ForwardMode::Train { seed, counter } => Some(RngState::new(seed, Stream::Dropout).at(counter).generator()),
            ForwardMode::Infer => None,
        };
        Forward {
            model,
            graph,
            params: list,
            branches,
            rng,
            batch: 0,
            bn_updates: Vec::new(),
            short_calls: 0,
            step: 0,
        }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    /// Frame `t` of every window as one `[batch, J·3]` constant.
    pub fn input(&mut self, windows: &[&[Vec<f64>]]) -> Result<Vec<Var>> {
        let first = windows.first().ok_or(Error::EmptySequence)?;
        let dim = self.model.config.dim();
        let frames = first.len();
        if windows.iter().any(|w| w.len() != frames || w.iter().any(|f| f.len() != dim)) {
            let bad = windows.iter().find(|w| w.len() != frames || w.iter().any(|f| f.len() != dim)).expect("exists");
            return Err(Error::shape("input", &[frames, dim], &[bad.len(), bad.first().map_or(0, Vec::len)]));
        }
        if frames == 0 {
            return Err(Error::EmptySequence);
        }
        self.batch = windows.len();
        let mut out = Vec::with_capacity(frames);
        for t in 0..frames {
            let values = windows.iter().flat_map(|w| w[t].iter().copied()).collect();
            out.push(self.graph.constant(Tensor::new(vec![windows.len(), dim], values)?));
        }
        Ok(out)
    }

    /// The branch network for one scale and kind: `δ` fused frames in, `δ`
    /// increment frames out.
    pub fn branch(&mut self, delta: usize, kind: BranchKind, fused: &[Var]) -> Result<Vec<Var>> {
        let bv = self
            .branches
            .get(&(delta, kind))
            .cloned()
            .ok_or_else(|| Error::Config(format!("no {} branch for scale {delta}", kind.tag())))?;
        if fused.len() != delta {
            return Err(Error::shape("branch_forward", &[delta], &[fused.len()]));
        }
        let dim = self.model.config.dim();
        let batch = self.graph.value(fused[0]).rows();
        for &x in fused {
            if self.graph.value(x).dims() != [batch, dim] {
                return Err(Error::shape("branch_forward", &[batch, dim], self.graph.value(x).dims()));
            }
        }
        if self.is_train() && bv.bn.is_some() && batch < 2 {
            return Err(Error::BatchStatistics(batch));
        }
        let g = &mut self.graph;
        let mut xs = Vec::with_capacity(delta);
        for &x in fused {
            xs.push(g.linear(x, bv.fc_in.0, bv.fc_in.1)?);
        }
        let hs = lstm_forward(g, &xs, &bv.lstm)?;
        let stacked = if hs.len() == 1 { hs[0] } else { g.concat_rows(&hs)? };
        let mid = g.linear(stacked, bv.fc_mid.0, bv.fc_mid.1)?;
        let cfg = &self.model.config;
        let act = match (&bv.bn, &mut self.rng) {
            (Some(bn), rng) => {
                let key = running_key(&bv.prefix, self.step);
                let running = self.model.running.get(&key).ok_or_else(|| Error::Config(format!("no running statistics {key}")))?;
                let mut mode = match rng {
                    Some(rng) => LayerMode::Train {
                        drop_rate: cfg.dropout,
                        rng,
                    },
                    None => LayerMode::Infer,
                };
                let (y, stats) = bn_dropout_act(g, mid, bn, running, cfg.activation, &mut mode)?;
                // Later short predictions of a long rollout see fed-back
                // frames; only the first one feeds the running statistics.
                if let (Some(s), 0..=1) = (stats, self.short_calls) {
                    self.bn_updates.push((key, s));
                }
                y
            }
            (None, Some(rng)) => {
                let mask = dropout_mask(g.value(mid).len(), cfg.dropout, rng);
                g.mul_const(mid, mask)?
            }
            (None, None) => mid,
        };
        let a = g.linear(act, bv.fc_out_a.0, bv.fc_out_a.1)?;
        let out = g.linear(a, bv.fc_out_b.0, bv.fc_out_b.1)?;
        if delta == 1 {
            return Ok(vec![out]);
        }
        (0..delta).map(|t| g.slice_rows(out, t * batch, batch)).collect()
    }

    /// Coefficients on `S₁..S₅` of the fused velocity and acceleration
    /// features of scale index `i`.
    fn segment_coefficients(&self, i: usize) -> ([f64; SEGMENTS], [f64; SEGMENTS]) {
        let cfg = &self.model.config;
        let (alpha, beta) = match cfg.fusion_mode {
            FusionMode::Weighted => (cfg.fusion[i].alpha, cfg.fusion[i].beta),
            FusionMode::Newest => ([0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 1.0]),
        };
        let mut cv = [0.0; SEGMENTS];
        for (k, a) in alpha.iter().enumerate() {
            cv[k + 1] += a;
            cv[k] -= a;
        }
        let mut ca = [0.0; SEGMENTS];
        for (k, b) in beta.iter().enumerate() {
            ca[k + 2] += b;
            ca[k + 1] -= 2.0 * b;
            ca[k] += b;
        }
        (cv, ca)
    }

    /// The five segments of the last `K` frames of `ctx`.
    fn segments(&self, ctx: &[Var], delta: usize) -> Result<Vec<Vec<Var>>> {
        let k = self.model.config.input_len;
        if ctx.len() < k {
            return Err(Error::InsufficientHistory {
                needed: k,
                available: ctx.len(),
            });
        }
        let win = &ctx[ctx.len() - k..];
        let range = covered_range(k, delta, self.model.config.scales.anchor)?;
        Ok(win[range].chunks_exact(delta).map(<[Var]>::to_vec).collect())
    }

    fn fuse(&mut self, segs: &[Vec<Var>], coeffs: &[f64; SEGMENTS]) -> Result<Vec<Var>> {
        let delta = segs[0].len();
        (0..delta)
            .map(|n| {
                let terms: Vec<(Var, f64)> =
                    segs.iter().zip(coeffs).filter(|(_, &c)| c != 0.0).map(|(s, &c)| (s[n], c)).collect();
                if terms.is_empty() {
                    self.graph.scale(segs[0][n], 0.0)
                } else {
                    self.graph.weighted_sum(&terms)
                }
            })
            .collect()
    }

    /// Fused velocity and acceleration features of scale index `i` from the
    /// last `K` frames of `ctx`, plus the five segments.
    pub fn scale_features(&mut self, ctx: &[Var], i: usize) -> Result<(Vec<Var>, Vec<Var>, Vec<Vec<Var>>)> {
        let delta = self.model.config.scales.deltas[i];
        let segs = self.segments(ctx, delta)?;
        let (cv, ca) = self.segment_coefficients(i);
        let fv = self.fuse(&segs, &cv)?;
        let fa = self.fuse(&segs, &ca)?;
        Ok((fv, fa, segs))
    }

    /// `L` frames from scale index `i` by repeated segment prediction.
    /// `consensus` holds the previous round's blended prediction.
    fn scale_rollout(&mut self, observed: &[Var], i: usize, consensus: Option<&[Var]>) -> Result<Vec<Var>> {
        let cfg = &self.model.config;
        let (delta, out_len, sign, correct) = (cfg.scales.deltas[i], cfg.output_len, cfg.increment_sign, cfg.accel_correction);
        let gamma = self.model.gamma(delta)?;
        let steps = out_len.div_ceil(delta);
        let mut own: Vec<Var> = Vec::with_capacity(steps * delta);
        let mut anchor = self.segments(observed, delta)?.pop().expect("five segments");
        for s in 0..steps {
            let mut ctx = observed.to_vec();
            match consensus {
                None => ctx.extend_from_slice(&own),
                Some(c) => ctx.extend_from_slice(&c[..((s + 1) * delta).min(c.len())]),
            }
            let (cv, ca) = self.segment_coefficients(i);
            let segs = self.segments(&ctx, delta)?;
            self.step = s;
            let fused_v = self.fuse(&segs, &cv)?;
            let mut inc = self.branch(delta, BranchKind::Velocity, &fused_v)?;
            if correct {
                let fused_a = self.fuse(&segs, &ca)?;
                let a_inc = self.branch(delta, BranchKind::Acceleration, &fused_a)?;
                inc = inc.iter().zip(&a_inc).map(|(&v, &a)| self.graph.add(v, a)).collect::<Result<_>>()?;
            }
            let seg: Vec<Var> = (0..delta)
                .map(|n| self.graph.weighted_sum(&[(anchor[n], 1.0), (inc[n], sign * gamma[n])]))
                .collect::<Result<_>>()?;
            own.extend_from_slice(&seg);
            anchor = seg;
        }
        self.step = 0;
        own.truncate(out_len);
        Ok(own)
    }

    /// `L` blended frames from the last `K` frames of `window`.
    pub fn predict_short(&mut self, window: &[Var]) -> Result<ShortOutput> {
        let cfg = &self.model.config;
        let k = cfg.input_len;
        if window.len() < k {
            return Err(Error::InsufficientHistory {
                needed: k,
                available: window.len(),
            });
        }
        self.short_calls += 1;
        let observed = window[window.len() - k..].to_vec();
        let active: Vec<(usize, usize, f64)> = cfg
            .scales
            .deltas
            .iter()
            .zip(&cfg.combine_weights)
            .enumerate()
            .filter(|(_, (_, &w))| w != 0.0)
            .map(|(i, (&d, &w))| (i, d, w))
            .collect();
        let (rounds, out_len) = (cfg.adjust_rounds, cfg.output_len);
        let mut consensus: Option<Vec<Var>> = None;
        let mut branches = Vec::new();
        for _ in 0..rounds {
            branches = Vec::with_capacity(active.len());
            for &(i, d, _) in &active {
                branches.push((d, self.scale_rollout(&observed, i, consensus.as_deref())?));
            }
            let blended = (0..out_len)
                .map(|t| {
                    let terms: Vec<(Var, f64)> = branches.iter().zip(&active).map(|((_, f), &(_, _, w))| (f[t], w)).collect();
                    self.graph.weighted_sum(&terms)
                })
                .collect::<Result<Vec<_>>>()?;
            consensus = Some(blended);
        }
        Ok(ShortOutput {
            frames: consensus.expect("at least one round"),
            branches,
        })
    }

    /// `horizon` frames: each step predicts `L` frames from the latest
    /// `K − L` context frames plus the previous `L` predictions.
    pub fn predict_long(&mut self, window: &[Var], horizon: usize) -> Result<Vec<Var>> {
        let (k, l) = (self.model.config.input_len, self.model.config.output_len);
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if window.len() < k {
            return Err(Error::InsufficientHistory {
                needed: k,
                available: window.len(),
            });
        }
        let mut ctx = window[window.len() - k..].to_vec();
        let mut out = Vec::with_capacity(horizon.div_ceil(l) * l);
        while out.len() < horizon {
            let step = self.predict_short(&ctx)?;
            out.extend_from_slice(&step.frames);
            ctx.drain(..l);
            ctx.extend_from_slice(&step.frames);
        }
        out.truncate(horizon);
        Ok(out)
    }

    /// Gradient of `loss` for every parameter, by name.
    pub fn gradients(&self, loss: Var) -> Result<BTreeMap<String, Vec<f64>>> {
        let mut grads = self.graph.backward(loss)?;
        Ok(self.params.iter().map(|(n, v)| (n.clone(), grads.take(*v))).collect())
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}
