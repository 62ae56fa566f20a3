//! The classifier: an entry convolution block, `L` residual blocks built
//! from depthwise-separable convolutions, global pooling, dropout and a
//! dense head ending in a two-way softmax.
//!
//! Residual block:
//!
//! ```text
//!   u ──► act ► sepconv ► BN ► act ► sepconv ► BN ► maxpool(3, /2) ──► (+) ──► out
//!   └──────────────────── conv 1×1, stride 2 ──────────────────────────┘
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, Activation, BnCache, GlobalPool};
use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Kernel side of the depthwise convolutions inside residual blocks.
pub const SEP_KERNEL: usize = 3;
pub const NUM_CLASSES: usize = 2;

/// Input pixel spacing of the three studied resolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resolution {
    #[serde(rename = "500m")]
    M500,
    #[serde(rename = "1km")]
    Km1,
    #[serde(rename = "2km")]
    Km2,
}

impl Resolution {
    pub const ALL: [Resolution; 3] = [Resolution::M500, Resolution::Km1, Resolution::Km2];

    /// Bilinear downsampling factor relative to the 500 m composites.
    pub fn factor(self) -> usize {
        match self {
            Resolution::M500 => 1,
            Resolution::Km1 => 2,
            Resolution::Km2 => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Resolution::M500 => "500m",
            Resolution::Km1 => "1km",
            Resolution::Km2 => "2km",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.label() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub activation: Activation,
    pub entry_filters: usize,
    /// Kernel side of the entry convolution.
    pub kernel: usize,
    /// Filters of the first residual block; doubled in every later block.
    pub sep_filters_0: usize,
    pub n_blocks: usize,
    pub global_pool: GlobalPool,
    pub n_dense: usize,
    pub dense_units: usize,
    pub dropout_rate: f64,
    pub batchnorm: bool,
    pub lr: f64,
    pub input_channels: usize,
    /// Side of the (square) network input.
    pub input_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::for_resolution(Resolution::M500)
    }
}

impl ModelConfig {
    /// Optimal hyperparameters found for each input resolution, with the
    /// crop size scaled so the physical footprint stays 256 km.
    pub fn for_resolution(res: Resolution) -> Self {
        let (n_blocks, dropout_rate, lr) = match res {
            Resolution::M500 => (7, 0.5, 1e-3),
            Resolution::Km1 => (5, 0.4, 1e-2),
            Resolution::Km2 => (4, 0.6, 1e-3),
        };
        Self {
            activation: Activation::Relu,
            entry_filters: 8,
            kernel: 3,
            sep_filters_0: 8,
            n_blocks,
            global_pool: GlobalPool::Avg,
            n_dense: 1,
            dense_units: 8,
            dropout_rate,
            batchnorm: true,
            lr,
            input_channels: 3,
            input_size: 512 / res.factor(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(Error::invalid("at least one residual block is required"));
        }
        if self.entry_filters == 0 || self.sep_filters_0 == 0 || self.dense_units == 0 {
            return Err(Error::invalid("filter and unit counts must be positive"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::invalid("entry kernel size must be odd"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout rate must lie in [0, 1)"));
        }
        if self.input_channels == 0 || self.input_size == 0 {
            return Err(Error::invalid("input shape must be positive"));
        }
        Ok(())
    }

    pub fn block_filters(&self, block: usize) -> usize {
        self.sep_filters_0 << block
    }

    /// Spatial side after the entry block and `blocks` residual blocks.
    pub fn feature_side(&self, blocks: usize) -> usize {
        (0..=blocks).fold(self.input_size, |s, _| s.div_ceil(2))
    }

    fn pooled_dim(&self) -> usize {
        let c = self.block_filters(self.n_blocks - 1);
        match self.global_pool {
            GlobalPool::Flat => {
                let s = self.feature_side(self.n_blocks);
                s * s * c
            }
            _ => c,
        }
    }
}

/// Trainable parameters of a separable convolution.
pub fn sepconv_param_count(kernel: usize, fin: usize, fout: usize) -> usize {
    kernel * kernel * fin + fin * fout
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    fn he_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let limit = (6.0 / fan_in as f64).sqrt();
        Self {
            shape: shape.to_vec(),
            data: (0..shape.iter().product::<usize>())
                .map(|_| rng.gen_range(-limit..limit))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
}

impl BatchNormParams {
    fn new(c: usize) -> Self {
        Self {
            gamma: Param::filled(&[c], 1.0),
            beta: Param::zeros(&[c]),
            running_mean: Param::zeros(&[c]),
            running_var: Param::filled(&[c], 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SepConvParams {
    /// `[k][k][fin]`
    pub depthwise: Param,
    /// `[1][1][fin][fout]`
    pub pointwise: Param,
    pub bias: Param,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub sep1: SepConvParams,
    pub bn1: Option<BatchNormParams>,
    pub sep2: SepConvParams,
    pub bn2: Option<BatchNormParams>,
    /// `[1][1][fin][fout]`, applied with stride 2.
    pub skip_kernel: Param,
    pub skip_bias: Param,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub kernel: Param,
    pub bias: Param,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub entry_kernel: Param,
    pub entry_bias: Param,
    pub entry_bn: Option<BatchNormParams>,
    pub blocks: Vec<BlockParams>,
    pub hidden: Vec<DenseParams>,
    pub output: DenseParams,
}

fn push_bn<'a>(out: &mut Vec<(String, &'a Param, bool)>, prefix: &str, bn: &'a Option<BatchNormParams>) {
    if let Some(bn) = bn {
        out.push((format!("{prefix}.gamma"), &bn.gamma, true));
        out.push((format!("{prefix}.beta"), &bn.beta, true));
        out.push((format!("{prefix}.moving_mean"), &bn.running_mean, false));
        out.push((format!("{prefix}.moving_var"), &bn.running_var, false));
    }
}

fn push_bn_mut<'a>(out: &mut Vec<(String, &'a mut Param, bool)>, prefix: &str, bn: &'a mut Option<BatchNormParams>) {
    if let Some(bn) = bn {
        out.push((format!("{prefix}.gamma"), &mut bn.gamma, true));
        out.push((format!("{prefix}.beta"), &mut bn.beta, true));
        out.push((format!("{prefix}.moving_mean"), &mut bn.running_mean, false));
        out.push((format!("{prefix}.moving_var"), &mut bn.running_var, false));
    }
}

impl NetworkParams {
    /// He-uniform kernels, zero biases, γ = 1, β = 0.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let k = config.kernel;
        let cin = config.input_channels;
        let ef = config.entry_filters;
        let bn = |c| config.batchnorm.then(|| BatchNormParams::new(c));
        let entry_kernel = Param::he_uniform(&[k, k, cin, ef], k * k * cin, rng);
        let mut blocks = Vec::with_capacity(config.n_blocks);
        let mut fin = ef;
        for b in 0..config.n_blocks {
            let f = config.block_filters(b);
            let sk = SEP_KERNEL;
            let sep1 = SepConvParams {
                depthwise: Param::he_uniform(&[sk, sk, fin], sk * sk, rng),
                pointwise: Param::he_uniform(&[1, 1, fin, f], fin, rng),
                bias: Param::zeros(&[f]),
            };
            let sep2 = SepConvParams {
                depthwise: Param::he_uniform(&[sk, sk, f], sk * sk, rng),
                pointwise: Param::he_uniform(&[1, 1, f, f], f, rng),
                bias: Param::zeros(&[f]),
            };
            let skip_kernel = Param::he_uniform(&[1, 1, fin, f], fin, rng);
            blocks.push(BlockParams {
                sep1,
                bn1: bn(f),
                sep2,
                bn2: bn(f),
                skip_kernel,
                skip_bias: Param::zeros(&[f]),
            });
            fin = f;
        }
        let mut d = config.pooled_dim();
        let mut hidden = Vec::with_capacity(config.n_dense);
        for _ in 0..config.n_dense {
            let u = config.dense_units;
            hidden.push(DenseParams {
                kernel: Param::he_uniform(&[d, u], d, rng),
                bias: Param::zeros(&[u]),
            });
            d = u;
        }
        let output = DenseParams {
            kernel: Param::he_uniform(&[d, NUM_CLASSES], d, rng),
            bias: Param::zeros(&[NUM_CLASSES]),
        };
        Ok(Self {
            entry_kernel,
            entry_bias: Param::zeros(&[ef]),
            entry_bn: bn(ef),
            blocks,
            hidden,
            output,
        })
    }

    /// Every tensor in declaration order with its name and whether it is
    /// trained by gradient descent (running statistics are not).
    pub fn tensors(&self) -> Vec<(String, &Param, bool)> {
        let mut out = vec![
            ("entry.kernel".to_string(), &self.entry_kernel, true),
            ("entry.bias".to_string(), &self.entry_bias, true),
        ];
        push_bn(&mut out, "entry.bn", &self.entry_bn);
        for (i, b) in self.blocks.iter().enumerate() {
            for (j, (sep, bn)) in [(&b.sep1, &b.bn1), (&b.sep2, &b.bn2)].into_iter().enumerate() {
                let p = format!("block{i}.sep{}", j + 1);
                out.push((format!("{p}.depthwise"), &sep.depthwise, true));
                out.push((format!("{p}.pointwise"), &sep.pointwise, true));
                out.push((format!("{p}.bias"), &sep.bias, true));
                push_bn(&mut out, &format!("block{i}.bn{}", j + 1), bn);
            }
            out.push((format!("block{i}.skip.kernel"), &b.skip_kernel, true));
            out.push((format!("block{i}.skip.bias"), &b.skip_bias, true));
        }
        for (i, d) in self.hidden.iter().enumerate() {
            out.push((format!("dense{i}.kernel"), &d.kernel, true));
            out.push((format!("dense{i}.bias"), &d.bias, true));
        }
        out.push(("output.kernel".to_string(), &self.output.kernel, true));
        out.push(("output.bias".to_string(), &self.output.bias, true));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Param, bool)> {
        let mut out = vec![
            ("entry.kernel".to_string(), &mut self.entry_kernel, true),
            ("entry.bias".to_string(), &mut self.entry_bias, true),
        ];
        push_bn_mut(&mut out, "entry.bn", &mut self.entry_bn);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (j, (sep, bn)) in [(&mut b.sep1, &mut b.bn1), (&mut b.sep2, &mut b.bn2)]
                .into_iter()
                .enumerate()
            {
                let p = format!("block{i}.sep{}", j + 1);
                out.push((format!("{p}.depthwise"), &mut sep.depthwise, true));
                out.push((format!("{p}.pointwise"), &mut sep.pointwise, true));
                out.push((format!("{p}.bias"), &mut sep.bias, true));
                push_bn_mut(&mut out, &format!("block{i}.bn{}", j + 1), bn);
            }
            out.push((format!("block{i}.skip.kernel"), &mut b.skip_kernel, true));
            out.push((format!("block{i}.skip.bias"), &mut b.skip_bias, true));
        }
        for (i, d) in self.hidden.iter_mut().enumerate() {
            out.push((format!("dense{i}.kernel"), &mut d.kernel, true));
            out.push((format!("dense{i}.bias"), &mut d.bias, true));
        }
        out.push(("output.kernel".to_string(), &mut self.output.kernel, true));
        out.push(("output.bias".to_string(), &mut self.output.bias, true));
        out
    }

    pub fn trainable_count(&self) -> usize {
        self.tensors()
            .iter()
            .filter(|(_, _, t)| *t)
            .map(|(_, p, _)| p.data.len())
            .sum()
    }

    /// Same structure with every value zero; used for gradients.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, p, _) in out.tensors_mut() {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, p, _)| p.data.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalisation; dropout mask drawn from the seed.
    Train { dropout_seed: u64 },
    Infer,
}

impl Mode {
    fn is_train(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

// ---------------------------------------------------------------------------
// Building blocks

#[derive(Clone, Debug)]
pub struct SepConvCache {
    input: Tensor4,
    depthwise_out: Tensor4,
}

/// Depthwise `k×k` convolution per channel followed by a biased 1×1
/// pointwise convolution; stride 1, same padding.
pub fn sepconv_forward(x: &Tensor4, p: &SepConvParams) -> Result<(Tensor4, SepConvCache)> {
    let k = p.depthwise.shape[0];
    if p.depthwise.shape[2] != x.c || p.pointwise.shape[2] != x.c {
        return Err(Error::shape(format!(
            "separable conv expects {} input channels, got {}",
            p.depthwise.shape[2], x.c
        )));
    }
    let fout = p.pointwise.shape[3];
    let d = layers::depthwise_forward(x, &p.depthwise.data, k);
    let y = layers::conv2d_forward(&d, &p.pointwise.data, &p.bias.data, 1, 1, fout);
    Ok((
        y,
        SepConvCache {
            input: x.clone(),
            depthwise_out: d,
        },
    ))
}

/// Returns dx and accumulates parameter gradients into `g`.
pub fn sepconv_backward(cache: &SepConvCache, p: &SepConvParams, dy: &Tensor4, g: &mut SepConvParams) -> Tensor4 {
    let k = p.depthwise.shape[0];
    let (dd, dpw, db) = layers::conv2d_backward(&cache.depthwise_out, &p.pointwise.data, 1, 1, dy);
    let (dx, ddw) = layers::depthwise_backward(&cache.input, &p.depthwise.data, k, &dd);
    add_into(&mut g.pointwise.data, &dpw);
    add_into(&mut g.bias.data, &db);
    add_into(&mut g.depthwise.data, &ddw);
    dx
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn bn_forward(x: &Tensor4, bn: &Option<BatchNormParams>, train: bool) -> (Tensor4, Option<BnCache>) {
    match bn {
        Some(p) => {
            let (y, c) = layers::batchnorm_forward(
                x,
                &p.gamma.data,
                &p.beta.data,
                &p.running_mean.data,
                &p.running_var.data,
                train,
            );
            (y, Some(c))
        }
        None => (x.clone(), None),
    }
}

fn bn_backward(
    cache: &Option<BnCache>,
    bn: &Option<BatchNormParams>,
    dy: Tensor4,
    g: &mut Option<BatchNormParams>,
) -> Tensor4 {
    match (cache, bn, g) {
        (Some(c), Some(p), Some(g)) => {
            let (dx, dgamma, dbeta) = layers::batchnorm_backward(c, &p.gamma.data, &dy);
            add_into(&mut g.gamma.data, &dgamma);
            add_into(&mut g.beta.data, &dbeta);
            dx
        }
        _ => dy,
    }
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    input: Tensor4,
    sep1: SepConvCache,
    bn1: Option<BnCache>,
    b1: Tensor4,
    sep2: SepConvCache,
    bn2: Option<BnCache>,
    b2_shape: (usize, usize, usize, usize),
    pool_arg: Vec<usize>,
    /// Block output (pooled main path plus skip projection).
    pub output: Tensor4,
}

pub fn residual_block_forward(
    x: &Tensor4,
    p: &BlockParams,
    activation: Activation,
    train: bool,
) -> Result<(Tensor4, BlockCache)> {
    if p.skip_kernel.shape[2] != x.c {
        return Err(Error::shape(format!(
            "residual block expects {} channels, got {}",
            p.skip_kernel.shape[2], x.c
        )));
    }
    let f = p.skip_kernel.shape[3];
    let r1 = activation.forward(x);
    let (s1, sep1) = sepconv_forward(&r1, &p.sep1)?;
    let (b1, bn1) = bn_forward(&s1, &p.bn1, train);
    let r2 = activation.forward(&b1);
    let (s2, sep2) = sepconv_forward(&r2, &p.sep2)?;
    let (b2, bn2) = bn_forward(&s2, &p.bn2, train);
    let (mut out, pool_arg) = layers::maxpool_forward(&b2);
    let skip = layers::conv2d_forward(x, &p.skip_kernel.data, &p.skip_bias.data, 1, 2, f);
    out.add_assign(&skip);
    Ok((
        out.clone(),
        BlockCache {
            input: x.clone(),
            sep1,
            bn1,
            b1,
            sep2,
            bn2,
            b2_shape: b2.shape(),
            pool_arg,
            output: out,
        },
    ))
}

pub fn residual_block_backward(
    cache: &BlockCache,
    p: &BlockParams,
    activation: Activation,
    dy: &Tensor4,
    g: &mut BlockParams,
) -> Tensor4 {
    let (mut dx, dsk, dsb) = layers::conv2d_backward(&cache.input, &p.skip_kernel.data, 1, 2, dy);
    add_into(&mut g.skip_kernel.data, &dsk);
    add_into(&mut g.skip_bias.data, &dsb);

    let db2 = layers::maxpool_backward(cache.b2_shape, &cache.pool_arg, dy);
    let ds2 = bn_backward(&cache.bn2, &p.bn2, db2, &mut g.bn2);
    let dr2 = sepconv_backward(&cache.sep2, &p.sep2, &ds2, &mut g.sep2);
    let db1 = activation.backward(&cache.b1, &dr2);
    let ds1 = bn_backward(&cache.bn1, &p.bn1, db1, &mut g.bn1);
    let dr1 = sepconv_backward(&cache.sep1, &p.sep1, &ds1, &mut g.sep1);
    dx.add_assign(&activation.backward(&cache.input, &dr1));
    dx
}

// ---------------------------------------------------------------------------
// Whole model

#[derive(Clone, Debug)]
pub struct ForwardCache {
    mode: Mode,
    input: Tensor4,
    entry_bn: Option<BnCache>,
    entry_norm: Tensor4,
    pub blocks: Vec<BlockCache>,
    pool_arg: Vec<usize>,
    pool_in_shape: (usize, usize, usize, usize),
    dropout_mask: Vec<f64>,
    /// Inputs and pre-activations of the hidden dense layers.
    dense_in: Vec<Tensor4>,
    dense_pre: Vec<Tensor4>,
    head_in: Tensor4,
    pub logits: Tensor4,
    pub probs: Tensor4,
}

fn push_signs(t: &Tensor4, out: &mut Vec<usize>) {
    out.extend(t.data.iter().map(|&v| usize::from(v > 0.0)));
}

impl BlockCache {
    /// Activation signs and max-pool selections inside the block. Two
    /// evaluations with equal patterns lie on the same smooth piece.
    pub fn decision_pattern(&self, out: &mut Vec<usize>) {
        push_signs(&self.input, out);
        push_signs(&self.b1, out);
        out.extend_from_slice(&self.pool_arg);
    }
}

impl ForwardCache {
    /// Output of the last residual block.
    pub fn last_block_output(&self) -> &Tensor4 {
        &self.blocks.last().expect("model has at least one block").output
    }

    /// Every activation sign and max selection of the pass.
    pub fn decision_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        push_signs(&self.entry_norm, &mut out);
        for b in &self.blocks {
            b.decision_pattern(&mut out);
        }
        out.extend_from_slice(&self.pool_arg);
        for d in &self.dense_pre {
            push_signs(d, &mut out);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: NetworkParams,
    pub input: Tensor4,
    /// Gradient with respect to each residual block output.
    pub block_outputs: Vec<Tensor4>,
}

pub fn model_forward(x: &Tensor4, params: &NetworkParams, config: &ModelConfig, mode: Mode) -> Result<ForwardCache> {
    if x.c != config.input_channels {
        return Err(Error::shape(format!(
            "model expects {} input channels, got {}",
            config.input_channels, x.c
        )));
    }
    if params.blocks.len() != config.n_blocks {
        return Err(Error::shape("parameters do not match the configured block count"));
    }
    let train = mode.is_train();
    let act = config.activation;
    let entry_pre = layers::conv2d_forward(
        x,
        &params.entry_kernel.data,
        &params.entry_bias.data,
        config.kernel,
        2,
        config.entry_filters,
    );
    let (entry_norm, entry_bn) = bn_forward(&entry_pre, &params.entry_bn, train);
    let mut h = act.forward(&entry_norm);

    let mut blocks = Vec::with_capacity(params.blocks.len());
    for bp in &params.blocks {
        let (out, cache) = residual_block_forward(&h, bp, act, train)?;
        blocks.push(cache);
        h = out;
    }

    let pool_in_shape = h.shape();
    let (pooled, pool_arg) = layers::global_pool_forward(config.global_pool, &h);
    let dropout_mask = match mode {
        Mode::Train { dropout_seed } => layers::dropout_mask(pooled.data.len(), config.dropout_rate, dropout_seed),
        Mode::Infer => Vec::new(),
    };
    let mut a = pooled.clone();
    if !dropout_mask.is_empty() {
        for (v, m) in a.data.iter_mut().zip(&dropout_mask) {
            *v *= m;
        }
    }
    let mut dense_in = Vec::with_capacity(params.hidden.len());
    let mut dense_pre = Vec::with_capacity(params.hidden.len());
    for d in &params.hidden {
        let units = d.bias.data.len();
        let z = layers::dense_forward(&a, &d.kernel.data, &d.bias.data, units);
        dense_in.push(a);
        a = act.forward(&z);
        dense_pre.push(z);
    }
    let logits = layers::dense_forward(&a, &params.output.kernel.data, &params.output.bias.data, NUM_CLASSES);
    let probs = layers::softmax_rows(&logits);
    Ok(ForwardCache {
        mode,
        input: x.clone(),
        entry_bn,
        entry_norm,
        blocks,
        pool_arg,
        pool_in_shape,
        dropout_mask,
        dense_in,
        dense_pre,
        head_in: a,
        logits,
        probs,
    })
}

/// Reverse pass from an arbitrary gradient on the logits.
pub fn model_backward(cache: &ForwardCache, params: &NetworkParams, config: &ModelConfig, dlogits: &Tensor4) -> Gradients {
    let act = config.activation;
    let mut g = params.zeros_like();

    let (mut da, dk, db) = layers::dense_backward(&cache.head_in, &params.output.kernel.data, dlogits);
    add_into(&mut g.output.kernel.data, &dk);
    add_into(&mut g.output.bias.data, &db);
    for i in (0..params.hidden.len()).rev() {
        let dz = act.backward(&cache.dense_pre[i], &da);
        let (dx, dk, db) = layers::dense_backward(&cache.dense_in[i], &params.hidden[i].kernel.data, &dz);
        add_into(&mut g.hidden[i].kernel.data, &dk);
        add_into(&mut g.hidden[i].bias.data, &db);
        da = dx;
    }
    if !cache.dropout_mask.is_empty() {
        for (v, m) in da.data.iter_mut().zip(&cache.dropout_mask) {
            *v *= m;
        }
    }
    let mut dh = layers::global_pool_backward(config.global_pool, cache.pool_in_shape, &cache.pool_arg, &da);

    let mut block_outputs = vec![Tensor4::zeros(1, 1, 1, 1); params.blocks.len()];
    for i in (0..params.blocks.len()).rev() {
        block_outputs[i] = dh.clone();
        dh = residual_block_backward(&cache.blocks[i], &params.blocks[i], act, &dh, &mut g.blocks[i]);
    }

    let dnorm = act.backward(&cache.entry_norm, &dh);
    let dpre = bn_backward(&cache.entry_bn, &params.entry_bn, dnorm, &mut g.entry_bn);
    let (dx, dk, db) = layers::conv2d_backward(&cache.input, &params.entry_kernel.data, config.kernel, 2, &dpre);
    add_into(&mut g.entry_kernel.data, &dk);
    add_into(&mut g.entry_bias.data, &db);

    Gradients {
        params: g,
        input: dx,
        block_outputs,
    }
}

/// Folds the batch statistics of a training forward pass into the running
/// mean and variance.
pub fn update_running_stats(params: &mut NetworkParams, cache: &ForwardCache) {
    if !cache.mode.is_train() {
        return;
    }
    fn fold(p: &mut Option<BatchNormParams>, c: &Option<BnCache>) {
        if let (Some(p), Some(c)) = (p, c) {
            let m = layers::BN_MOMENTUM;
            for (r, b) in p.running_mean.data.iter_mut().zip(&c.batch_mean) {
                *r = m * *r + (1.0 - m) * b;
            }
            for (r, b) in p.running_var.data.iter_mut().zip(&c.batch_var) {
                *r = m * *r + (1.0 - m) * b;
            }
        }
    }
    fold(&mut params.entry_bn, &cache.entry_bn);
    for (p, c) in params.blocks.iter_mut().zip(&cache.blocks) {
        fold(&mut p.bn1, &c.bn1);
        fold(&mut p.bn2, &c.bn2);
    }
}

/// Class weights and labels for a loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights(pub f64, pub f64);

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights(1.0, 1.0)
    }
}

/// Forward pass, loss and full reverse pass in one call.
pub fn loss_and_gradients(
    x: &Tensor4,
    labels: &[usize],
    weights: LossWeights,
    params: &NetworkParams,
    config: &ModelConfig,
    mode: Mode,
) -> Result<(f64, ForwardCache, Gradients)> {
    if labels.len() != x.n {
        return Err(Error::shape("label count differs from batch size"));
    }
    let cache = model_forward(x, params, config, mode)?;
    let w = (weights.0, weights.1);
    let loss = layers::weighted_cross_entropy(&cache.probs, labels, w);
    let dlogits = layers::weighted_cross_entropy_grad(&cache.probs, labels, w);
    let grads = model_backward(&cache, params, config, &dlogits);
    Ok((loss, cache, grads))
}

pub fn loss_only(
    x: &Tensor4,
    labels: &[usize],
    weights: LossWeights,
    params: &NetworkParams,
    config: &ModelConfig,
    mode: Mode,
) -> Result<f64> {
    let cache = model_forward(x, params, config, mode)?;
    Ok(layers::weighted_cross_entropy(&cache.probs, labels, (weights.0, weights.1)))
}
