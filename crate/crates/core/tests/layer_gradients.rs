//! Every layer against central finite differences on random shapes and
//! seeds, and the linear layer against a triple-loop product.

use pms_core::numerics::layers::{bn_dropout_act, forward_linear, lstm_forward, seeded, uniform_init, BatchNormParams, LstmLayer};
use pms_core::numerics::{gradient_check, Activation, GradCheckOptions, Graph, LayerMode, ParamGroup, RunningStats, Tensor, Var};
use rand::Rng;

type Grads = std::collections::BTreeMap<String, Vec<f64>>;

fn vars(g: &mut Graph, p: &ParamGroup) -> Vec<(String, Var)> {
    p.iter().map(|(n, t)| (n.to_string(), g.param(t.clone()))).collect()
}

fn get(v: &[(String, Var)], name: &str) -> Var {
    v.iter().find(|(n, _)| n == name).unwrap().1
}

/// `Σ c_i·y_i + Σ y_i²` with fixed pseudo-random `c`.
fn scalar(g: &mut Graph, y: Var) -> Var {
    let n = g.value(y).len();
    let c: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
    let lin = g.mul_const(y, c).unwrap();
    let sq = g.mul(y, y).unwrap();
    let both = g.add(lin, sq).unwrap();
    g.sum(both).unwrap()
}

fn finish(g: &Graph, loss: Var, v: &[(String, Var)]) -> (f64, Grads) {
    let mut grads = g.backward(loss).unwrap();
    (g.value(loss).item(), v.iter().map(|(n, x)| (n.clone(), grads.take(*x))).collect())
}

fn check(p: &ParamGroup, f: impl FnMut(&ParamGroup) -> pms_core::error::Result<(f64, Grads)>) -> f64 {
    let report = gradient_check(p, f, &GradCheckOptions::default()).unwrap();
    assert!(report.passed(), "{:?}", report.worst());
    report.max_rel_error()
}

#[test]
fn linear_matches_triple_loop() {
    let mut r = seeded(1);
    for _ in 0..50 {
        let (b, i, o) = (r.gen_range(1..8), r.gen_range(1..16), r.gen_range(1..16));
        let x = uniform_init(vec![b, i], 1, &mut r);
        let w = uniform_init(vec![i, o], 1, &mut r);
        let bias = uniform_init(vec![o], 1, &mut r);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.leaf(x.clone()), g.leaf(w.clone()), g.leaf(bias.clone()));
        let y = forward_linear(&mut g, xv, wv, Some(bv)).unwrap();
        let y = g.value(y).values().to_vec();
        for row in 0..b {
            for col in 0..o {
                let mut acc = bias.values()[col];
                for k in 0..i {
                    acc += x.values()[row * i + k] * w.values()[k * o + col];
                }
                assert!((y[row * o + col] - acc).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn linear_gradients_over_seeds() {
    for seed in 0..20 {
        let mut r = seeded(100 + seed);
        let (b, i, o) = (r.gen_range(1..=8), r.gen_range(1..=16), r.gen_range(1..=16));
        let mut p = ParamGroup::new();
        p.insert("x", uniform_init(vec![b, i], 1, &mut r));
        p.insert("w", uniform_init(vec![i, o], i, &mut r));
        p.insert("b", uniform_init(vec![o], i, &mut r));
        check(&p, |p| {
            let mut g = Graph::new();
            let v = vars(&mut g, p);
            let y = forward_linear(&mut g, get(&v, "x"), get(&v, "w"), Some(get(&v, "b")))?;
            let l = scalar(&mut g, y);
            Ok(finish(&g, l, &v))
        });
    }
}

#[test]
fn lstm_gradients_over_seeds() {
    for seed in 0..20 {
        let mut r = seeded(200 + seed);
        let (input, hidden, steps, batch, layers) = (r.gen_range(1..=6), r.gen_range(1..=6), r.gen_range(1..=4), r.gen_range(1..=3), r.gen_range(1..=3));
        let mut p = ParamGroup::new();
        for l in 0..layers {
            let fan = if l == 0 { input } else { hidden };
            p.insert(format!("l{l}.w_ih"), uniform_init(vec![fan, 4 * hidden], hidden, &mut r));
            p.insert(format!("l{l}.w_hh"), uniform_init(vec![hidden, 4 * hidden], hidden, &mut r));
            p.insert(format!("l{l}.b"), uniform_init(vec![4 * hidden], hidden, &mut r));
        }
        for s in 0..steps {
            p.insert(format!("x{s}"), uniform_init(vec![batch, input], 1, &mut r));
        }
        check(&p, |p| {
            let mut g = Graph::new();
            let v = vars(&mut g, p);
            let stack: Vec<LstmLayer> = (0..layers)
                .map(|l| LstmLayer {
                    w_ih: get(&v, &format!("l{l}.w_ih")),
                    w_hh: get(&v, &format!("l{l}.w_hh")),
                    bias: get(&v, &format!("l{l}.b")),
                })
                .collect();
            let seq: Vec<Var> = (0..steps).map(|s| get(&v, &format!("x{s}"))).collect();
            let out = lstm_forward(&mut g, &seq, &stack)?;
            let all = g.concat_rows(&out)?;
            let l = scalar(&mut g, all);
            Ok(finish(&g, l, &v))
        });
    }
}

#[test]
fn batch_norm_gradients_over_seeds() {
    for seed in 0..20 {
        let mut r = seeded(300 + seed);
        let (batch, features) = (r.gen_range(2..=8), r.gen_range(1..=16));
        let mut p = ParamGroup::new();
        p.insert("x", uniform_init(vec![batch, features], 1, &mut r));
        p.insert("gamma", uniform_init(vec![features], 1, &mut r));
        p.insert("beta", uniform_init(vec![features], 1, &mut r));
        let running = RunningStats {
            mean: (0..features).map(|_| r.gen_range(-0.5..0.5)).collect(),
            var: (0..features).map(|_| r.gen_range(0.5..2.0)).collect(),
        };
        for train in [false, true] {
            let mask_seed = seed;
            check(&p, |p| {
                let mut g = Graph::new();
                let v = vars(&mut g, p);
                let bn = BatchNormParams {
                    gamma: get(&v, "gamma"),
                    beta: get(&v, "beta"),
                };
                // A fresh generator per evaluation freezes the dropout mask.
                let mut rng = seeded(mask_seed);
                let mut mode = if train {
                    LayerMode::Train {
                        drop_rate: 0.25,
                        rng: &mut rng,
                    }
                } else {
                    LayerMode::Infer
                };
                let (y, _) = bn_dropout_act(&mut g, get(&v, "x"), &bn, &running, Activation::Tanh, &mut mode)?;
                let l = scalar(&mut g, y);
                Ok(finish(&g, l, &v))
            });
        }
    }
}

#[test]
fn tensors_reject_non_finite_values() {
    assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
    assert!(Tensor::new(vec![1], vec![f64::INFINITY]).is_err());
    assert!(Tensor::new(vec![3], vec![1.0, 2.0]).is_err());
}
