//! A small fully convolutional detector: four `conv3x3 -> ReLU -> maxpool2`
//! blocks (total stride 16), a `conv3x3 -> ReLU` detection layer, and two
//! 1x1 heads producing `4 * N` regression and `2 * N` class channels per cell.
//!
//! Forward and backward passes are written out by hand. Weights are stored
//! as `[ky][kx][cin][cout]` so the innermost loops run over contiguous
//! output channels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor3};

pub const INPUT_CHANNELS: usize = 3;
pub const NUM_BLOCKS: usize = 4;
pub const NET_STRIDE: usize = 1 << NUM_BLOCKS;

/// How the backbone convolutions are initialized. The detection layer and
/// the two heads always draw from `Normal(0, init_sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneInit {
    /// `Normal(0, 2 / fan_in)`.
    He,
    /// Same distribution as the new layers.
    Gaussian,
}

impl BackboneInit {
    pub fn code(self) -> u8 {
        match self {
            BackboneInit::He => 0,
            BackboneInit::Gaussian => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(BackboneInit::He),
            1 => Some(BackboneInit::Gaussian),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Output channels of the four backbone blocks.
    pub widths: Vec<usize>,
    pub conv6_channels: usize,
    /// Anchors per feature-map cell.
    pub n_anchors: usize,
    pub init_sigma: f64,
    pub backbone_init: BackboneInit,
    pub rng_seed: u64,
    /// Per-channel statistics images are standardized with before `forward`.
    pub input_mean: [f32; 3],
    pub input_std: [f32; 3],
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            widths: vec![8, 16, 32, 64],
            conv6_channels: 64,
            n_anchors: 2,
            init_sigma: 0.01,
            backbone_init: BackboneInit::He,
            rng_seed: 0,
            input_mean: [0.485, 0.456, 0.406],
            input_std: [0.229, 0.224, 0.225],
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != NUM_BLOCKS {
            return Err(Error::Config(format!(
                "backbone needs exactly {NUM_BLOCKS} block widths, got {}",
                self.widths.len()
            )));
        }
        if self.widths.contains(&0) || self.conv6_channels == 0 || self.n_anchors == 0 {
            return Err(Error::Config("channel counts and n_anchors must be >= 1".into()));
        }
        if !(self.init_sigma >= 0.0 && self.init_sigma.is_finite()) {
            return Err(Error::Config(format!("init_sigma {} is invalid", self.init_sigma)));
        }
        if self.input_std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("input_std entries must be positive".into()));
        }
        Ok(())
    }

    /// `(name, kernel, cin, cout)` for every conv layer, in forward order.
    pub fn layer_specs(&self) -> Vec<(String, usize, usize, usize)> {
        let mut v = Vec::with_capacity(NUM_BLOCKS + 3);
        let mut cin = INPUT_CHANNELS;
        for (b, &w) in self.widths.iter().enumerate() {
            v.push((format!("block{}.conv", b + 1), 3, cin, w));
            cin = w;
        }
        v.push(("conv6".to_string(), 3, cin, self.conv6_channels));
        v.push(("conv_reg".to_string(), 1, self.conv6_channels, 4 * self.n_anchors));
        v.push(("conv_cls".to_string(), 1, self.conv6_channels, 2 * self.n_anchors));
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub name: String,
    pub kernel: usize,
    pub cin: usize,
    pub cout: usize,
    /// `[ky][kx][cin][cout]`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(name: &str, kernel: usize, cin: usize, cout: usize) -> Self {
        Self {
            name: name.to_string(),
            kernel,
            cin,
            cout,
            weight: vec![T::zero(); kernel * kernel * cin * cout],
            bias: vec![T::zero(); cout],
        }
    }

    fn same_shape(&self, other: &ConvLayer<T>) -> bool {
        self.kernel == other.kernel && self.cin == other.cin && self.cout == other.cout
    }

    fn padding(&self) -> usize {
        self.kernel / 2
    }

    /// `[ky][kx][cout][cin]` copy used to propagate gradients to the input.
    fn transposed(&self) -> Vec<T> {
        let (cin, cout) = (self.cin, self.cout);
        let mut t = vec![T::zero(); self.weight.len()];
        for kk in 0..self.kernel * self.kernel {
            let base = kk * cin * cout;
            for ci in 0..cin {
                for co in 0..cout {
                    t[base + co * cin + ci] = self.weight[base + ci * cout + co];
                }
            }
        }
        t
    }
}

/// All learnable tensors of the network. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub layers: Vec<ConvLayer<T>>,
    /// Bumped by every optimizer step; forward caches record it.
    pub generation: u64,
}

pub type NetGrads<T> = NetParams<T>;

impl<T: Real> NetParams<T> {
    pub fn zeros(cfg: &NetConfig) -> Self {
        let layers = cfg
            .layer_specs()
            .into_iter()
            .map(|(name, k, cin, cout)| ConvLayer::zeros(&name, k, cin, cout))
            .collect();
        Self { layers, generation: 0 }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer::zeros(&l.name, l.kernel, l.cin, l.cout))
                .collect(),
            generation: 0,
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn n_anchors(&self) -> usize {
        self.layers.last().map_or(0, |l| l.cout / 2)
    }

    pub fn same_shape(&self, other: &NetParams<T>) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.same_shape(b))
    }

    pub fn convert<U: Real>(&self) -> NetParams<U> {
        NetParams {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    name: l.name.clone(),
                    kernel: l.kernel,
                    cin: l.cin,
                    cout: l.cout,
                    weight: l.weight.iter().map(|&v| U::cast(v.widen())).collect(),
                    bias: l.bias.iter().map(|&v| U::cast(v.widen())).collect(),
                })
                .collect(),
            generation: self.generation,
        }
    }

    /// Flat views over every tensor (weights then bias, layer by layer).
    pub fn tensors(&self) -> impl Iterator<Item = &[T]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

pub fn init_params<T: Real>(cfg: &NetConfig) -> Result<NetParams<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut params = NetParams::zeros(cfg);
    for (i, layer) in params.layers.iter_mut().enumerate() {
        let sigma = if i < NUM_BLOCKS && cfg.backbone_init == BackboneInit::He {
            (2.0 / (layer.kernel * layer.kernel * layer.cin) as f64).sqrt()
        } else {
            cfg.init_sigma
        };
        if sigma == 0.0 {
            continue;
        }
        let dist = Normal::new(0.0, sigma)
            .map_err(|e| Error::Config(format!("bad init sigma {sigma}: {e}")))?;
        for w in layer.weight.iter_mut() {
            *w = T::cast(dist.sample(&mut rng));
        }
    }
    Ok(params)
}

/// Intermediates kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    generation: u64,
    input: Tensor3<T>,
    /// Post-ReLU activations of the four blocks and the detection layer.
    activations: Vec<Tensor3<T>>,
    /// Pooled block outputs.
    pooled: Vec<Tensor3<T>>,
    /// Flat source index (into the matching activation) of every pooled value.
    argmax: Vec<Vec<u32>>,
    layer_shapes: Vec<(usize, usize, usize)>,
}

impl<T: Real> ForwardCache<T> {
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Whether two passes took the same piecewise-linear branches: identical
    /// ReLU on/off pattern and identical max-pool winners.
    pub fn same_branches(&self, other: &ForwardCache<T>) -> bool {
        let active = |a: &Tensor3<T>, b: &Tensor3<T>| {
            a.shape() == b.shape() && a.data.iter().zip(&b.data).all(|(x, y)| (*x > T::zero()) == (*y > T::zero()))
        };
        self.argmax == other.argmax
            && self.activations.len() == other.activations.len()
            && self.activations.iter().zip(&other.activations).all(|(a, b)| active(a, b))
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub reg: Tensor3<T>,
    pub cls: Tensor3<T>,
    pub cache: ForwardCache<T>,
}

fn layer_shapes<T>(p: &NetParams<T>) -> Vec<(usize, usize, usize)> {
    p.layers.iter().map(|l| (l.kernel, l.cin, l.cout)).collect()
}

pub fn forward<T: Real>(params: &NetParams<T>, image: &Tensor3<T>) -> Result<ForwardOutput<T>> {
    if params.layers.len() != NUM_BLOCKS + 3 {
        return Err(Error::Shape(format!(
            "expected {} layers, found {}",
            NUM_BLOCKS + 3,
            params.layers.len()
        )));
    }
    if image.channels != INPUT_CHANNELS {
        return Err(Error::Shape(format!("input has {} channels, need 3", image.channels)));
    }
    if image.height == 0
        || image.width == 0
        || !image.height.is_multiple_of(NET_STRIDE)
        || !image.width.is_multiple_of(NET_STRIDE)
    {
        return Err(Error::Shape(format!(
            "input {}x{} is not a positive multiple of {NET_STRIDE}",
            image.height, image.width
        )));
    }
    let mut cin = INPUT_CHANNELS;
    for l in &params.layers[..NUM_BLOCKS + 1] {
        if l.cin != cin {
            return Err(Error::Shape(format!("layer {} expects {} inputs, gets {cin}", l.name, l.cin)));
        }
        cin = l.cout;
    }
    for l in &params.layers[NUM_BLOCKS + 1..] {
        if l.cin != cin {
            return Err(Error::Shape(format!("layer {} expects {} inputs, gets {cin}", l.name, l.cin)));
        }
    }

    let mut activations = Vec::with_capacity(NUM_BLOCKS + 1);
    let mut pooled = Vec::with_capacity(NUM_BLOCKS);
    let mut argmax = Vec::with_capacity(NUM_BLOCKS);
    for b in 0..NUM_BLOCKS {
        let x = if b == 0 { image } else { &pooled[b - 1] };
        let mut a = conv_forward(x, &params.layers[b]);
        relu_inplace(&mut a);
        let (p, idx) = maxpool2(&a);
        activations.push(a);
        pooled.push(p);
        argmax.push(idx);
    }
    let mut c6 = conv_forward(&pooled[NUM_BLOCKS - 1], &params.layers[NUM_BLOCKS]);
    relu_inplace(&mut c6);
    let reg = conv_forward(&c6, &params.layers[NUM_BLOCKS + 1]);
    let cls = conv_forward(&c6, &params.layers[NUM_BLOCKS + 2]);
    activations.push(c6);

    Ok(ForwardOutput {
        reg,
        cls,
        cache: ForwardCache {
            generation: params.generation,
            input: image.clone(),
            activations,
            pooled,
            argmax,
            layer_shapes: layer_shapes(params),
        },
    })
}

/// Backpropagate head gradients. Returns parameter gradients and, when
/// `want_input_grad` is set, the gradient with respect to the input image.
pub fn backward<T: Real>(
    params: &NetParams<T>,
    cache: &ForwardCache<T>,
    d_reg: &Tensor3<T>,
    d_cls: &Tensor3<T>,
    want_input_grad: bool,
) -> Result<(NetGrads<T>, Option<Tensor3<T>>)> {
    if cache.generation != params.generation || cache.layer_shapes != layer_shapes(params) {
        return Err(Error::Cache(format!(
            "cache from generation {} used with parameters at generation {}",
            cache.generation, params.generation
        )));
    }
    let c6 = &cache.activations[NUM_BLOCKS];
    let reg_shape = (c6.height, c6.width, params.layers[NUM_BLOCKS + 1].cout);
    let cls_shape = (c6.height, c6.width, params.layers[NUM_BLOCKS + 2].cout);
    if d_reg.shape() != reg_shape || d_cls.shape() != cls_shape {
        return Err(Error::Shape(format!(
            "head gradients {:?}/{:?} do not match outputs {reg_shape:?}/{cls_shape:?}",
            d_reg.shape(),
            d_cls.shape()
        )));
    }

    let mut grads = params.zeros_like();
    let mut d_c6 = Tensor3::zeros(c6.height, c6.width, c6.channels);
    conv_backward(c6, &params.layers[NUM_BLOCKS + 1], d_reg, &mut grads.layers[NUM_BLOCKS + 1], Some(&mut d_c6));
    conv_backward(c6, &params.layers[NUM_BLOCKS + 2], d_cls, &mut grads.layers[NUM_BLOCKS + 2], Some(&mut d_c6));
    relu_backward(c6, &mut d_c6);

    let p4 = &cache.pooled[NUM_BLOCKS - 1];
    let mut d_pooled = Tensor3::zeros(p4.height, p4.width, p4.channels);
    conv_backward(p4, &params.layers[NUM_BLOCKS], &d_c6, &mut grads.layers[NUM_BLOCKS], Some(&mut d_pooled));

    let mut d_input = None;
    for b in (0..NUM_BLOCKS).rev() {
        let a = &cache.activations[b];
        let mut d_a = unpool2(&d_pooled, &cache.argmax[b], a);
        relu_backward(a, &mut d_a);
        let x = if b == 0 { &cache.input } else { &cache.pooled[b - 1] };
        if b > 0 || want_input_grad {
            let mut dx = Tensor3::zeros(x.height, x.width, x.channels);
            conv_backward(x, &params.layers[b], &d_a, &mut grads.layers[b], Some(&mut dx));
            if b > 0 {
                d_pooled = dx;
            } else {
                d_input = Some(dx);
            }
        } else {
            conv_backward(x, &params.layers[b], &d_a, &mut grads.layers[b], None);
        }
    }
    Ok((grads, d_input))
}

/// Plain SGD with L2 weight decay on kernels only:
/// `w <- w - lr * (g + weight_decay * w)`, `b <- b - lr * g`.
pub fn sgd_step<T: Real>(
    params: &mut NetParams<T>,
    grads: &NetGrads<T>,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if !params.same_shape(grads) {
        return Err(Error::Shape("gradients do not match parameter shapes".into()));
    }
    if !grads.all_finite() {
        return Err(Error::Divergence("non-finite gradient".into()));
    }
    let lr_t = T::cast(lr);
    let wd = T::cast(weight_decay);
    for (l, g) in params.layers.iter_mut().zip(&grads.layers) {
        for (w, &gw) in l.weight.iter_mut().zip(&g.weight) {
            *w -= lr_t * (gw + wd * *w);
        }
        for (b, &gb) in l.bias.iter_mut().zip(&g.bias) {
            *b -= lr_t * gb;
        }
    }
    params.generation += 1;
    if !params.all_finite() {
        return Err(Error::Divergence("parameters became non-finite".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// kernels

#[inline]
fn axpy<T: Real>(acc: &mut [T], a: T, x: &[T]) {
    for (y, &v) in acc.iter_mut().zip(x) {
        *y += a * v;
    }
}

/// Same-size convolution (stride 1, zero padding `kernel / 2`).
fn conv_forward<T: Real>(x: &Tensor3<T>, l: &ConvLayer<T>) -> Tensor3<T> {
    let (h, w) = (x.height, x.width);
    let (k, cin, cout, pad) = (l.kernel, l.cin, l.cout, l.padding());
    let mut out = Tensor3::zeros(h, w, cout);
    for oy in 0..h {
        for ox in 0..w {
            let o = (oy * w + ox) * cout;
            let acc = &mut out.data[o..o + cout];
            acc.copy_from_slice(&l.bias);
            for ky in 0..k {
                let Some(iy) = (oy + ky).checked_sub(pad).filter(|&v| v < h) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = (ox + kx).checked_sub(pad).filter(|&v| v < w) else {
                        continue;
                    };
                    let xin = x.pixel(iy, ix);
                    let wk = &l.weight[(ky * k + kx) * cin * cout..][..cin * cout];
                    for (&v, wrow) in xin.iter().zip(wk.chunks_exact(cout)) {
                        if v != T::zero() {
                            axpy(acc, v, wrow);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulate weight/bias gradients into `g`, and input gradients into `dx`.
fn conv_backward<T: Real>(
    x: &Tensor3<T>,
    l: &ConvLayer<T>,
    dy: &Tensor3<T>,
    g: &mut ConvLayer<T>,
    mut dx: Option<&mut Tensor3<T>>,
) {
    let (h, w) = (x.height, x.width);
    let (k, cin, cout, pad) = (l.kernel, l.cin, l.cout, l.padding());
    let wt = if dx.is_some() { l.transposed() } else { Vec::new() };
    for oy in 0..h {
        for ox in 0..w {
            let gy = dy.pixel(oy, ox);
            if gy.iter().all(|&v| v == T::zero()) {
                continue;
            }
            axpy(&mut g.bias, T::one(), gy);
            for ky in 0..k {
                let Some(iy) = (oy + ky).checked_sub(pad).filter(|&v| v < h) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = (ox + kx).checked_sub(pad).filter(|&v| v < w) else {
                        continue;
                    };
                    let kk = (ky * k + kx) * cin * cout;
                    let xin = x.pixel(iy, ix);
                    let gw = &mut g.weight[kk..kk + cin * cout];
                    for (&v, gw_row) in xin.iter().zip(gw.chunks_exact_mut(cout)) {
                        if v != T::zero() {
                            axpy(gw_row, v, gy);
                        }
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let o = (iy * w + ix) * cin;
                        let dxp = &mut dx.data[o..o + cin];
                        let wtk = &wt[kk..kk + cin * cout];
                        for (&gv, wt_row) in gy.iter().zip(wtk.chunks_exact(cin)) {
                            if gv != T::zero() {
                                axpy(dxp, gv, wt_row);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn relu_inplace<T: Real>(a: &mut Tensor3<T>) {
    for v in a.data.iter_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Zero gradients where the unit was inactive (`relu'(0) = 0`).
fn relu_backward<T: Real>(activation: &Tensor3<T>, grad: &mut Tensor3<T>) {
    for (g, &a) in grad.data.iter_mut().zip(&activation.data) {
        if !(a > T::zero()) {
            *g = T::zero();
        }
    }
}

/// 2x2 max-pool, stride 2. Ties resolve to the first element in scan order.
fn maxpool2<T: Real>(a: &Tensor3<T>) -> (Tensor3<T>, Vec<u32>) {
    let (oh, ow, c) = (a.height / 2, a.width / 2, a.channels);
    let mut out = Tensor3::zeros(oh, ow, c);
    let mut idx = vec![0u32; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = (oy * ow + ox) * c;
            let first = a.offset(2 * oy, 2 * ox, 0);
            out.data[o..o + c].copy_from_slice(&a.data[first..first + c]);
            for (ci, slot) in idx[o..o + c].iter_mut().enumerate() {
                *slot = (first + ci) as u32;
            }
            for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                let src = a.offset(2 * oy + dy, 2 * ox + dx, 0);
                for ci in 0..c {
                    let v = a.data[src + ci];
                    if v > out.data[o + ci] {
                        out.data[o + ci] = v;
                        idx[o + ci] = (src + ci) as u32;
                    }
                }
            }
        }
    }
    (out, idx)
}

fn unpool2<T: Real>(d_pooled: &Tensor3<T>, argmax: &[u32], like: &Tensor3<T>) -> Tensor3<T> {
    let mut d = Tensor3::zeros(like.height, like.width, like.channels);
    for (&g, &src) in d_pooled.data.iter().zip(argmax) {
        d.data[src as usize] += g;
    }
    d
}
