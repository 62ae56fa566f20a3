//! Central finite-difference checks of the hand-written reverse passes.
//!
//! Every layer is checked in isolation through the scalar loss
//! `L = Σ r ⊙ f(x)` with a fixed random `r`, and the whole model through the
//! weighted cross-entropy. Inputs to piecewise-linear operations are spaced
//! so that a step of `h` never crosses a kink or changes a max selection.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, Activation, GlobalPool};
use super::model::{self, BlockParams, LossWeights, Mode, ModelConfig, NetworkParams, SepConvParams};
use super::tensor::Tensor4;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-3;
/// Gradients smaller than this in both analytic and numeric form are
/// compared in absolute terms.
const ABS_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    /// `‖a − n‖ / max(‖a‖, ‖n‖)` over the whole tensor.
    pub rel_err: f64,
    /// Largest per-element relative error; entries whose gradient is
    /// close to zero are dominated by the O(h²) truncation term.
    pub max_elem_rel_err: f64,
    /// Perturbations that flipped an activation sign or a max selection.
    /// Central differences across such a point do not estimate the
    /// derivative, so a valid check needs this to be zero.
    pub kink_crossings: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.kink_crossings == 0 && self.rel_err <= tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ABS_FLOOR {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares `analytic` with central differences of `f` around `x`. `f`
/// also returns the decision pattern of its evaluation.
fn compare_pattern(
    name: &str,
    x: &mut [f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> (f64, Vec<usize>),
) -> GradCheckReport {
    let base = f(x).1;
    let mut worst = 0.0f64;
    let mut crossings = 0;
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let (up, pu) = f(x);
        x[i] = orig - FD_STEP;
        let (down, pd) = f(x);
        x[i] = orig;
        if pu != base || pd != base {
            crossings += 1;
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
        diff2 += (analytic[i] - numeric).powi(2);
        a2 += analytic[i] * analytic[i];
        n2 += numeric * numeric;
    }
    let scale = f64::max(a2, n2).sqrt();
    GradCheckReport {
        name: name.to_string(),
        checked: x.len(),
        rel_err: if scale < ABS_FLOOR { 0.0 } else { diff2.sqrt() / scale },
        max_elem_rel_err: worst,
        kink_crossings: crossings,
    }
}

fn compare(name: &str, x: &mut [f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> GradCheckReport {
    compare_pattern(name, x, analytic, |v| (f(v), Vec::new()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lim: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-lim..lim)).collect()
}

/// Values at least `gap` apart and at least `gap/2` away from zero.
fn spaced(rng: &mut ChaCha8Rng, n: usize, gap: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|k| {
            let m = (k / 2) as f64 + 0.5;
            if k % 2 == 0 {
                m * gap
            } else {
                -m * gap
            }
        })
        .collect();
    v.shuffle(rng);
    v
}

fn tensor(n: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Tensor4 {
    Tensor4::from_vec(n, h, w, c, data).expect("valid test tensor")
}

fn check_conv(rng: &mut ChaCha8Rng, k: usize, stride: usize, bias: bool) -> Vec<GradCheckReport> {
    let (n, h, w, cin, cout) = (2, 5, 6, 2, 3);
    let x = uniform(rng, n * h * w * cin, 1.0);
    let kern = uniform(rng, k * k * cin * cout, 1.0);
    let b = if bias { uniform(rng, cout, 0.5) } else { Vec::new() };
    let xt = tensor(n, h, w, cin, x.clone());
    let y = layers::conv2d_forward(&xt, &kern, &b, k, stride, cout);
    let r = uniform(rng, y.data.len(), 1.0);
    let dy = tensor(y.n, y.h, y.w, y.c, r.clone());
    let (dx, dk, db) = layers::conv2d_backward(&xt, &kern, k, stride, &dy);
    let tag = format!("conv{k}x{k}/s{stride}");
    let loss = |x: &[f64], kern: &[f64], b: &[f64]| {
        dot(&layers::conv2d_forward(&tensor(n, h, w, cin, x.to_vec()), kern, b, k, stride, cout).data, &r)
    };
    let mut out = vec![
        compare(&format!("{tag} input"), &mut x.clone(), &dx.data, |v| loss(v, &kern, &b)),
        compare(&format!("{tag} kernel"), &mut kern.clone(), &dk, |v| loss(&x, v, &b)),
    ];
    if bias {
        out.push(compare(&format!("{tag} bias"), &mut b.clone(), &db, |v| loss(&x, &kern, v)));
    }
    out
}

fn check_depthwise(rng: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    let (n, h, w, c, k) = (2, 5, 4, 3, 3);
    let x = uniform(rng, n * h * w * c, 1.0);
    let kern = uniform(rng, k * k * c, 1.0);
    let xt = tensor(n, h, w, c, x.clone());
    let y = layers::depthwise_forward(&xt, &kern, k);
    let r = uniform(rng, y.data.len(), 1.0);
    let (dx, dk) = layers::depthwise_backward(&xt, &kern, k, &tensor(n, h, w, c, r.clone()));
    let loss = |x: &[f64], kern: &[f64]| dot(&layers::depthwise_forward(&tensor(n, h, w, c, x.to_vec()), kern, k).data, &r);
    vec![
        compare("depthwise input", &mut x.clone(), &dx.data, |v| loss(v, &kern)),
        compare("depthwise kernel", &mut kern.clone(), &dk, |v| loss(&x, v)),
    ]
}

fn check_batchnorm(rng: &mut ChaCha8Rng, train: bool) -> Vec<GradCheckReport> {
    let (n, h, w, c) = (3, 3, 2, 2);
    let x = uniform(rng, n * h * w * c, 2.0);
    let gamma = uniform(rng, c, 1.5);
    let beta = uniform(rng, c, 0.5);
    let rm = uniform(rng, c, 0.3);
    let rv: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
    let fwd = |x: &[f64], g: &[f64], b: &[f64]| {
        layers::batchnorm_forward(&tensor(n, h, w, c, x.to_vec()), g, b, &rm, &rv, train)
    };
    let (y, cache) = fwd(&x, &gamma, &beta);
    let r = uniform(rng, y.data.len(), 1.0);
    let (dx, dg, db) = layers::batchnorm_backward(&cache, &gamma, &tensor(n, h, w, c, r.clone()));
    let loss = |x: &[f64], g: &[f64], b: &[f64]| dot(&fwd(x, g, b).0.data, &r);
    let tag = if train { "batchnorm(train)" } else { "batchnorm(infer)" };
    vec![
        compare(&format!("{tag} input"), &mut x.clone(), &dx.data, |v| loss(v, &gamma, &beta)),
        compare(&format!("{tag} gamma"), &mut gamma.clone(), &dg, |v| loss(&x, v, &beta)),
        compare(&format!("{tag} beta"), &mut beta.clone(), &db, |v| loss(&x, &gamma, v)),
    ]
}

fn check_activation(rng: &mut ChaCha8Rng, act: Activation) -> GradCheckReport {
    let x = spaced(rng, 40, 0.05);
    let xt = tensor(1, 5, 8, 1, x.clone());
    let r = uniform(rng, 40, 1.0);
    let dx = act.backward(&xt, &tensor(1, 5, 8, 1, r.clone()));
    let name = match act {
        Activation::Relu => "relu",
        Activation::Selu => "selu",
    };
    compare(name, &mut x.clone(), &dx.data, |v| {
        dot(&act.forward(&tensor(1, 5, 8, 1, v.to_vec())).data, &r)
    })
}

fn check_maxpool(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (n, h, w, c) = (2, 7, 6, 2);
    let x = spaced(rng, n * h * w * c, 0.01);
    let xt = tensor(n, h, w, c, x.clone());
    let (y, arg) = layers::maxpool_forward(&xt);
    let r = uniform(rng, y.data.len(), 1.0);
    let dx = layers::maxpool_backward(xt.shape(), &arg, &tensor(y.n, y.h, y.w, y.c, r.clone()));
    compare("maxpool 3x3/s2", &mut x.clone(), &dx.data, |v| {
        dot(&layers::maxpool_forward(&tensor(n, h, w, c, v.to_vec())).0.data, &r)
    })
}

fn check_global_pool(rng: &mut ChaCha8Rng, kind: GlobalPool) -> GradCheckReport {
    let (n, h, w, c) = (2, 3, 3, 2);
    let x = spaced(rng, n * h * w * c, 0.01);
    let xt = tensor(n, h, w, c, x.clone());
    let (y, arg) = layers::global_pool_forward(kind, &xt);
    let r = uniform(rng, y.data.len(), 1.0);
    let dx = layers::global_pool_backward(kind, xt.shape(), &arg, &tensor(y.n, y.h, y.w, y.c, r.clone()));
    let name = format!("global pool {kind:?}").to_lowercase();
    compare(&name, &mut x.clone(), &dx.data, |v| {
        dot(&layers::global_pool_forward(kind, &tensor(n, h, w, c, v.to_vec())).0.data, &r)
    })
}

fn check_dense(rng: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    let (n, d, u) = (3, 5, 4);
    let x = uniform(rng, n * d, 1.0);
    let kern = uniform(rng, d * u, 1.0);
    let b = uniform(rng, u, 0.5);
    let fwd = |x: &[f64], k: &[f64], b: &[f64]| layers::dense_forward(&tensor(n, 1, 1, d, x.to_vec()), k, b, u);
    let r = uniform(rng, n * u, 1.0);
    let (dx, dk, db) = layers::dense_backward(&tensor(n, 1, 1, d, x.clone()), &kern, &tensor(n, 1, 1, u, r.clone()));
    let loss = |x: &[f64], k: &[f64], b: &[f64]| dot(&fwd(x, k, b).data, &r);
    vec![
        compare("dense input", &mut x.clone(), &dx.data, |v| loss(v, &kern, &b)),
        compare("dense kernel", &mut kern.clone(), &dk, |v| loss(&x, v, &b)),
        compare("dense bias", &mut b.clone(), &db, |v| loss(&x, &kern, v)),
    ]
}

fn check_softmax_loss(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let n = 4;
    let z = uniform(rng, n * 2, 2.0);
    let labels = [0, 1, 1, 0];
    let w = (0.6, 3.1);
    let probs = layers::softmax_rows(&tensor(n, 1, 1, 2, z.clone()));
    let dz = layers::weighted_cross_entropy_grad(&probs, &labels, w);
    compare("softmax + weighted cross-entropy", &mut z.clone(), &dz.data, |v| {
        layers::weighted_cross_entropy(&layers::softmax_rows(&tensor(n, 1, 1, 2, v.to_vec())), &labels, w)
    })
}

fn check_sepconv(rng: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    let (n, h, w, fin, fout) = (2, 4, 5, 2, 3);
    let x = uniform(rng, n * h * w * fin, 1.0);
    let p = SepConvParams {
        depthwise: model::Param { shape: vec![3, 3, fin], data: uniform(rng, 9 * fin, 1.0) },
        pointwise: model::Param { shape: vec![1, 1, fin, fout], data: uniform(rng, fin * fout, 1.0) },
        bias: model::Param { shape: vec![fout], data: uniform(rng, fout, 0.5) },
    };
    let xt = tensor(n, h, w, fin, x.clone());
    let (y, cache) = model::sepconv_forward(&xt, &p).expect("shapes agree");
    let r = uniform(rng, y.data.len(), 1.0);
    let mut g = p.clone();
    for t in [&mut g.depthwise, &mut g.pointwise, &mut g.bias] {
        t.data.iter_mut().for_each(|v| *v = 0.0);
    }
    let dx = model::sepconv_backward(&cache, &p, &tensor(y.n, y.h, y.w, y.c, r.clone()), &mut g);
    let loss = |x: &[f64], p: &SepConvParams| {
        dot(&model::sepconv_forward(&tensor(n, h, w, fin, x.to_vec()), p).expect("shapes agree").0.data, &r)
    };
    let mut out = vec![compare("sepconv input", &mut x.clone(), &dx.data, |v| loss(v, &p))];
    for (name, analytic) in [("depthwise", &g.depthwise.data), ("pointwise", &g.pointwise.data), ("bias", &g.bias.data)] {
        let mut q = p.clone();
        let mut vals = match name {
            "depthwise" => p.depthwise.data.clone(),
            "pointwise" => p.pointwise.data.clone(),
            _ => p.bias.data.clone(),
        };
        out.push(compare(&format!("sepconv {name}"), &mut vals, analytic, |v| {
            match name {
                "depthwise" => q.depthwise.data.copy_from_slice(v),
                "pointwise" => q.pointwise.data.copy_from_slice(v),
                _ => q.bias.data.copy_from_slice(v),
            }
            loss(&x, &q)
        }));
    }
    out
}

fn check_params(
    prefix: &str,
    params: &NetworkParams,
    grads: &NetworkParams,
    keep: impl Fn(&str) -> bool,
    mut loss: impl FnMut(&NetworkParams) -> (f64, Vec<usize>),
) -> Vec<GradCheckReport> {
    let mut out = Vec::new();
    let analytic: Vec<(String, Vec<f64>, bool)> = grads
        .tensors()
        .into_iter()
        .map(|(n, p, t)| (n, p.data.clone(), t))
        .collect();
    let mut work = params.clone();
    for (idx, (name, a, trainable)) in analytic.iter().enumerate() {
        if !trainable || !keep(name) {
            continue;
        }
        let orig = params.tensors()[idx].1.data.clone();
        let mut vals = orig.clone();
        out.push(compare_pattern(&format!("{prefix} {name}"), &mut vals, a, |v| {
            work.tensors_mut()[idx].1.data.copy_from_slice(v);
            loss(&work)
        }));
        work.tensors_mut()[idx].1.data.copy_from_slice(&orig);
    }
    out
}

/// One residual block in training mode with SELU activations.
pub fn check_residual_block(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig {
        n_blocks: 1,
        input_size: 8,
        entry_filters: 2,
        sep_filters_0: 3,
        dense_units: 2,
        activation: Activation::Selu,
        ..ModelConfig::default()
    };
    let mut params = NetworkParams::init(&config, &mut rng)?;
    let block = &mut params.blocks[0];
    for bn in [&mut block.bn1, &mut block.bn2].into_iter().flatten() {
        bn.beta.data = uniform(&mut rng, bn.beta.data.len(), 0.3);
        bn.gamma.data.iter_mut().for_each(|g| *g = rng.gen_range(0.5..1.5));
    }
    let (n, h, w, c) = (2, 6, 5, 2);
    let x = uniform(&mut rng, n * h * w * c, 1.0);
    let act = config.activation;
    let run = |x: &[f64], p: &BlockParams| {
        let (y, cache) =
            model::residual_block_forward(&tensor(n, h, w, c, x.to_vec()), p, act, true).expect("valid block");
        let mut pattern = Vec::new();
        cache.decision_pattern(&mut pattern);
        (y, cache, pattern)
    };
    let (y, cache, _) = run(&x, &params.blocks[0]);
    let r = uniform(&mut rng, y.data.len(), 1.0);
    let mut grads = params.zeros_like();
    let dy = tensor(y.n, y.h, y.w, y.c, r.clone());
    let dx = model::residual_block_backward(&cache, &params.blocks[0], act, &dy, &mut grads.blocks[0]);
    let score = |x: &[f64], p: &BlockParams| {
        let (y, _, pattern) = run(x, p);
        (dot(&y.data, &r), pattern)
    };
    let mut out = vec![compare_pattern("residual block input", &mut x.clone(), &dx.data, |v| {
        score(v, &params.blocks[0])
    })];
    out.extend(check_params(
        "residual",
        &params,
        &grads,
        |name| name.starts_with("block0"),
        |p| score(&x, &p.blocks[0]),
    ));
    Ok(out)
}

/// The composed check: a two-block model on 8×8 inputs in training mode,
/// with every trainable tensor and the input differentiated through the
/// weighted loss.
pub fn check_model(seed: u64, activation: Activation) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig {
        activation,
        n_blocks: 2,
        input_size: 8,
        entry_filters: 3,
        sep_filters_0: 3,
        dense_units: 4,
        dropout_rate: 0.25,
        ..ModelConfig::default()
    };
    let mut params = NetworkParams::init(&config, &mut rng)?;
    for (name, p, _) in params.tensors_mut() {
        if name.ends_with(".beta") || name.ends_with(".bias") {
            p.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.2..0.2));
        }
    }
    let n = 2;
    let x = uniform(&mut rng, n * 8 * 8 * 3, 1.0);
    let labels = [0, 1];
    let weights = LossWeights(0.7, 1.9);
    let mode = Mode::Train { dropout_seed: seed ^ 0x5eed };
    let xt = tensor(n, 8, 8, 3, x.clone());
    let (_, _, grads) = model::loss_and_gradients(&xt, &labels, weights, &params, &config, mode)?;
    let loss = |x: &[f64], p: &NetworkParams| {
        let cache = model::model_forward(&tensor(n, 8, 8, 3, x.to_vec()), p, &config, mode).expect("valid model");
        let l = layers::weighted_cross_entropy(&cache.probs, &labels, (weights.0, weights.1));
        let mut pattern = cache.decision_pattern();
        pattern.extend(labels.iter().enumerate().map(|(b, &y)| usize::from(cache.probs.data[2 * b + y] < layers::PROB_FLOOR)));
        (l, pattern)
    };
    let mut out = vec![compare_pattern("model input", &mut x.clone(), &grads.input.data, |v| loss(v, &params))];
    out.extend(check_params("model", &params, &grads.params, |_| true, |p| loss(&x, p)));
    Ok(out)
}

/// Every layer type in isolation.
pub fn check_layers(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    out.extend(check_conv(&mut rng, 3, 2, true));
    out.extend(check_conv(&mut rng, 5, 2, true));
    out.extend(check_conv(&mut rng, 1, 2, true));
    out.extend(check_conv(&mut rng, 1, 1, false));
    out.extend(check_depthwise(&mut rng));
    out.extend(check_batchnorm(&mut rng, true));
    out.extend(check_batchnorm(&mut rng, false));
    out.push(check_activation(&mut rng, Activation::Relu));
    out.push(check_activation(&mut rng, Activation::Selu));
    out.push(check_maxpool(&mut rng));
    for kind in [GlobalPool::Avg, GlobalPool::Max, GlobalPool::Flat] {
        out.push(check_global_pool(&mut rng, kind));
    }
    out.extend(check_dense(&mut rng));
    out.push(check_softmax_loss(&mut rng));
    out.extend(check_sepconv(&mut rng));
    Ok(out)
}
