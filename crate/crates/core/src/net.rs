//! The per-instance residual network: forward, hand-derived backward, and
//! optimizer.
//!
//! The network maps the band-replicated panchromatic difference `Δ = P^D − Ŷ`
//! to a high-frequency correction that is added back onto `Ŷ`. Its topology
//! is fixed: a 3×3 entry convolution, one residual block, and a 3×3 exit
//! convolution, all zero-padded with ReLU activations. The standard variant
//! uses full convolutions at hidden width 32; the lightweight variant swaps
//! in depthwise-separable convolutions at a band-dependent width so its
//! parameter budget stays a small fraction of the standard one.
//!
//! Everything is double precision, single threaded, and deterministic under
//! the initialization seed.

use crate::config::AdaptationConfig;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tensor::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

const PARAMS_MAGIC: &[u8; 4] = b"FMGP";
const PARAMS_VERSION: u8 = 1;

/// Which network topology an adaptation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Full 3×3 convolutions at hidden width 32.
    #[serde(rename = "default")]
    Standard,
    /// Depthwise-separable convolutions at a reduced, band-dependent width.
    #[serde(rename = "light")]
    Lightweight,
}

/// Hidden width used by each variant for a `bands`-channel instance.
///
/// The lightweight width shrinks with the band count so the parameter total
/// lands near one quarter of the standard variant's budget.
pub fn hidden_width(variant: Variant, bands: usize) -> usize {
    match variant {
        Variant::Standard => 32,
        Variant::Lightweight => 24 + (5 * bands) / 2,
    }
}

/// A full 3×3 convolution. Weights are `[out][in][3×3]` row-major.
#[derive(Debug, Clone)]
struct ConvLayer {
    in_c: usize,
    out_c: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// A depthwise 3×3 convolution followed by a pointwise 1×1 convolution,
/// each with its own bias. Depthwise weights are `[channel][3×3]`,
/// pointwise weights `[out][in]`.
#[derive(Debug, Clone)]
struct SepLayer {
    in_c: usize,
    out_c: usize,
    dw_weights: Vec<f64>,
    dw_bias: Vec<f64>,
    pw_weights: Vec<f64>,
    pw_bias: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Layer {
    Conv(ConvLayer),
    Sep(SepLayer),
}

impl Layer {
    fn conv(in_c: usize, out_c: usize) -> Layer {
        Layer::Conv(ConvLayer {
            in_c,
            out_c,
            weights: vec![0.0; out_c * in_c * 9],
            bias: vec![0.0; out_c],
        })
    }

    fn sep(in_c: usize, out_c: usize) -> Layer {
        Layer::Sep(SepLayer {
            in_c,
            out_c,
            dw_weights: vec![0.0; in_c * 9],
            dw_bias: vec![0.0; in_c],
            pw_weights: vec![0.0; out_c * in_c],
            pw_bias: vec![0.0; out_c],
        })
    }

    fn param_count(&self) -> usize {
        self.tensor_lens().iter().sum()
    }

    /// Lengths of this layer's parameter tensors in flat order.
    fn tensor_lens(&self) -> Vec<usize> {
        match self {
            Layer::Conv(l) => vec![l.weights.len(), l.bias.len()],
            Layer::Sep(l) => {
                vec![l.dw_weights.len(), l.dw_bias.len(), l.pw_weights.len(), l.pw_bias.len()]
            }
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv(l) => vec![&l.weights, &l.bias],
            Layer::Sep(l) => vec![&l.dw_weights, &l.dw_bias, &l.pw_weights, &l.pw_bias],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weights, &mut l.bias],
            Layer::Sep(l) => {
                vec![&mut l.dw_weights, &mut l.dw_bias, &mut l.pw_weights, &mut l.pw_bias]
            }
        }
    }
}

/// All trainable state of one adaptation, plus its optimizer accumulators.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub variant: Variant,
    pub bands: usize,
    pub hidden: usize,
    layers: Vec<Layer>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    step_count: u64,
    /// Bumped on every parameter mutation; forward caches record it so a
    /// stale cache can be rejected by `backward`.
    revision: u64,
}

/// Gradients of a scalar loss with respect to every parameter, in the same
/// flat order as [`NetworkParams::flatten`].
#[derive(Debug, Clone)]
pub struct Gradients {
    flat: Vec<f64>,
}

impl Gradients {
    pub fn as_slice(&self) -> &[f64] {
        &self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }
}

fn build_layers(variant: Variant, bands: usize, hidden: usize) -> Vec<Layer> {
    let mk: fn(usize, usize) -> Layer = match variant {
        Variant::Standard => Layer::conv,
        Variant::Lightweight => Layer::sep,
    };
    vec![mk(bands, hidden), mk(hidden, hidden), mk(hidden, hidden), mk(hidden, bands)]
}

impl NetworkParams {
    /// All-zero parameters of the given shape (the network is then the
    /// identity `X* = Ŷ`).
    pub fn zeroed(variant: Variant, bands: usize) -> Result<Self> {
        if bands == 0 {
            return Err(Error::Dimension("network needs at least one band".into()));
        }
        let hidden = hidden_width(variant, bands);
        let layers = build_layers(variant, bands, hidden);
        let n: usize = layers.iter().map(Layer::param_count).sum();
        Ok(NetworkParams {
            variant,
            bands,
            hidden,
            layers,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step_count: 0,
            revision: 0,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// All parameters as one vector: layers in network order, each layer's
    /// tensors in declaration order (weights before biases).
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for t in layer.tensors() {
                flat.extend_from_slice(t);
            }
        }
        flat
    }

    /// Overwrites every parameter from a flat vector and invalidates any
    /// outstanding forward caches.
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Contract(format!(
                "flat parameter vector has {} entries, network needs {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            for t in layer.tensors_mut() {
                let len = t.len();
                t.copy_from_slice(&flat[off..off + len]);
                off += len;
            }
        }
        self.revision += 1;
        Ok(())
    }

    /// Rejects parameters whose band count does not match the instance.
    pub fn check_bands(&self, bands: usize) -> Result<()> {
        if self.bands != bands {
            return Err(Error::Format(format!(
                "network parameters cover {} bands but the instance has {bands}",
                self.bands
            )));
        }
        Ok(())
    }
}

/// Draws fresh parameters: every weight and bias is uniform on
/// `(−1/√fan_in, 1/√fan_in)` for its layer, in a fixed draw order, so a seed
/// fully determines the network.
pub fn init_params(variant: Variant, bands: usize, seed: u64) -> Result<NetworkParams> {
    let mut params = NetworkParams::zeroed(variant, bands)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut params.layers {
        match layer {
            Layer::Conv(l) => {
                let bound = 1.0 / ((l.in_c * 9) as f64).sqrt();
                for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                    *w = rng.gen_range(-bound..bound);
                }
            }
            Layer::Sep(l) => {
                let dw_bound = 1.0 / 3.0;
                for w in l.dw_weights.iter_mut().chain(l.dw_bias.iter_mut()) {
                    *w = rng.gen_range(-dw_bound..dw_bound);
                }
                let pw_bound = 1.0 / (l.in_c as f64).sqrt();
                for w in l.pw_weights.iter_mut().chain(l.pw_bias.iter_mut()) {
                    *w = rng.gen_range(-pw_bound..pw_bound);
                }
            }
        }
    }
    params.revision += 1;
    Ok(params)
}

/// Replicates the panchromatic band across `yhat`'s bands and subtracts.
pub fn build_input(pan: &ImageTensor, yhat: &ImageTensor) -> Result<ImageTensor> {
    if pan.bands() != 1 {
        return Err(Error::Dimension("panchromatic image must have one band".into()));
    }
    if pan.height() != yhat.height() || pan.width() != yhat.width() {
        return Err(Error::Dimension(format!(
            "panchromatic {}x{} and upsampled {}x{} disagree",
            pan.height(),
            pan.width(),
            yhat.height(),
            yhat.width()
        )));
    }
    let p = pan.band(0);
    let mut data = Vec::with_capacity(yhat.data().len());
    for b in 0..yhat.bands() {
        for (pv, yv) in p.iter().zip(yhat.band(b)) {
            data.push(pv - yv);
        }
    }
    yhat.like_with_data(data)
}

/// Activations retained by [`forward`] for the matching [`backward`] call.
#[derive(Debug)]
pub struct ForwardCache {
    revision: u64,
    height: usize,
    width: usize,
    delta: Vec<f64>,
    a0: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    /// Depthwise pre-pointwise activations per layer (lightweight only).
    dw_out: Vec<Option<Vec<f64>>>,
}

/// Runs the network on `Δ` and adds the result onto `Ŷ`.
pub fn forward(
    params: &NetworkParams,
    delta: &ImageTensor,
    yhat: &ImageTensor,
) -> Result<(ImageTensor, ForwardCache)> {
    if delta.bands() != params.bands {
        return Err(Error::Dimension(format!(
            "input has {} bands, network expects {}",
            delta.bands(),
            params.bands
        )));
    }
    if delta.height() != yhat.height()
        || delta.width() != yhat.width()
        || delta.bands() != yhat.bands()
    {
        return Err(Error::Dimension("difference and upsampled tensors must share shape".into()));
    }
    let (h, w) = (delta.height(), delta.width());

    let (mut a0, dw0) = layer_forward(&params.layers[0], delta.data(), h, w);
    relu_inplace(&mut a0);
    let (mut a1, dw1) = layer_forward(&params.layers[1], &a0, h, w);
    relu_inplace(&mut a1);
    let (mut a2, dw2) = layer_forward(&params.layers[2], &a1, h, w);
    for (z, s) in a2.iter_mut().zip(&a0) {
        *z += s;
    }
    relu_inplace(&mut a2);
    let (mut out, dw3) = layer_forward(&params.layers[3], &a2, h, w);
    for (o, y) in out.iter_mut().zip(yhat.data()) {
        *o += y;
    }
    let x_star = yhat.like_with_data(out)?;
    let cache = ForwardCache {
        revision: params.revision,
        height: h,
        width: w,
        delta: delta.data().to_vec(),
        a0,
        a1,
        a2,
        dw_out: vec![dw0, dw1, dw2, dw3],
    };
    Ok((x_star, cache))
}

/// Exact gradients for every parameter given `∂L/∂X*`.
///
/// Since `X* = F(Δ) + Ŷ`, the gradient at the network output equals the
/// gradient at `X*`. The cache must come from a forward pass over the current
/// parameters.
pub fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    grad_x_star: &ImageTensor,
) -> Result<Gradients> {
    if cache.revision != params.revision {
        return Err(Error::Contract(
            "activation cache is stale: parameters changed since the forward pass".into(),
        ));
    }
    if grad_x_star.bands() != params.bands
        || grad_x_star.height() != cache.height
        || grad_x_star.width() != cache.width
    {
        return Err(Error::Dimension("output gradient shape does not match the forward pass".into()));
    }
    let (h, w) = (cache.height, cache.width);

    let (g_exit, g_a2) =
        layer_backward(&params.layers[3], &cache.a2, &cache.dw_out[3], grad_x_star.data(), h, w, true);
    let mut g_z2 = g_a2.expect("input gradient requested");
    relu_backward(&mut g_z2, &cache.a2);

    let (g_c2, g_a1) = layer_backward(&params.layers[2], &cache.a1, &cache.dw_out[2], &g_z2, h, w, true);
    let mut g_z1 = g_a1.expect("input gradient requested");
    relu_backward(&mut g_z1, &cache.a1);

    let (g_c1, g_a0) = layer_backward(&params.layers[1], &cache.a0, &cache.dw_out[1], &g_z1, h, w, true);
    let mut g_e = g_a0.expect("input gradient requested");
    // The residual skip routes the post-block gradient straight to a0.
    for (g, s) in g_e.iter_mut().zip(&g_z2) {
        *g += s;
    }
    relu_backward(&mut g_e, &cache.a0);

    let (g_entry, _) =
        layer_backward(&params.layers[0], &cache.delta, &cache.dw_out[0], &g_e, h, w, false);

    let mut flat = Vec::with_capacity(params.param_count());
    flat.extend_from_slice(&g_entry);
    flat.extend_from_slice(&g_c1);
    flat.extend_from_slice(&g_c2);
    flat.extend_from_slice(&g_exit);
    Ok(Gradients { flat })
}

/// One bias-corrected Adam update over every parameter.
pub fn adam_step(params: &mut NetworkParams, grads: &Gradients, cfg: &AdaptationConfig) -> Result<()> {
    let n = params.param_count();
    if grads.flat.len() != n {
        return Err(Error::Contract(format!(
            "gradient vector has {} entries, network needs {n}",
            grads.flat.len()
        )));
    }
    params.step_count += 1;
    let t = params.step_count as i32;
    let m_corr = 1.0 - ADAM_BETA1.powi(t);
    let v_corr = 1.0 - ADAM_BETA2.powi(t);
    let mut flat = params.flatten();
    for i in 0..n {
        let g = grads.flat[i];
        let m = ADAM_BETA1 * params.adam_m[i] + (1.0 - ADAM_BETA1) * g;
        let v = ADAM_BETA2 * params.adam_v[i] + (1.0 - ADAM_BETA2) * g * g;
        params.adam_m[i] = m;
        params.adam_v[i] = v;
        flat[i] -= cfg.lr * (m / m_corr) / ((v / v_corr).sqrt() + ADAM_EPS);
    }
    params.assign_from_flat(&flat)
}

/// Serializes parameters (weights and biases only; optimizer state is not
/// persisted) as single-precision little-endian payload behind a shape table.
pub fn save_params(params: &NetworkParams, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(PARAMS_MAGIC);
    bytes.push(PARAMS_VERSION);
    bytes.push(match params.variant {
        Variant::Standard => 0,
        Variant::Lightweight => 1,
    });
    bytes.extend_from_slice(&(params.bands as u32).to_le_bytes());
    bytes.extend_from_slice(&(params.hidden as u32).to_le_bytes());
    bytes.extend_from_slice(&1u32.to_le_bytes()); // residual block count
    let lens: Vec<usize> = params.layers.iter().flat_map(|l| l.tensor_lens()).collect();
    bytes.extend_from_slice(&(lens.len() as u32).to_le_bytes());
    for len in &lens {
        bytes.extend_from_slice(&(*len as u32).to_le_bytes());
    }
    for layer in &params.layers {
        for t in layer.tensors() {
            for &v in t {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    write_atomic(path, &bytes)
}

/// Loads parameters saved by [`save_params`]. Optimizer state starts zeroed,
/// so a warm start behaves like a fresh run from the stored weights.
pub fn load_params(path: &Path) -> Result<NetworkParams> {
    let bytes = std::fs::read(path)?;
    let fail = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 22 {
        return Err(fail("truncated parameter file"));
    }
    if &bytes[0..4] != PARAMS_MAGIC {
        return Err(fail("not a network parameter file (bad magic)"));
    }
    if bytes[4] != PARAMS_VERSION {
        return Err(fail(&format!("unsupported version {}", bytes[4])));
    }
    let variant = match bytes[5] {
        0 => Variant::Standard,
        1 => Variant::Lightweight,
        v => return Err(fail(&format!("unknown variant id {v}"))),
    };
    let rd_u32 = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    let bands = rd_u32(6);
    let hidden = rd_u32(10);
    let blocks = rd_u32(14);
    let n_tensors = rd_u32(18);
    if bands == 0 || hidden == 0 {
        return Err(fail("band count and hidden width must be positive"));
    }
    if blocks != 1 {
        return Err(fail(&format!("unsupported residual block count {blocks}")));
    }

    let mut params = NetworkParams::zeroed(variant, bands)?;
    if hidden != params.hidden {
        return Err(fail(&format!(
            "hidden width {hidden} does not match {} for this variant and band count",
            params.hidden
        )));
    }
    let expected_lens: Vec<usize> = params.layers.iter().flat_map(|l| l.tensor_lens()).collect();
    if n_tensors != expected_lens.len() {
        return Err(fail(&format!(
            "shape table has {n_tensors} tensors, topology needs {}",
            expected_lens.len()
        )));
    }
    let table_end = 22 + 4 * n_tensors;
    if bytes.len() < table_end {
        return Err(fail("truncated shape table"));
    }
    let mut total = 0usize;
    for (i, &want) in expected_lens.iter().enumerate() {
        let got = rd_u32(22 + 4 * i);
        if got != want {
            return Err(fail(&format!("tensor {i} has length {got}, topology needs {want}")));
        }
        total += want;
    }
    if bytes.len() != table_end + 4 * total {
        return Err(fail(&format!(
            "payload is {} bytes, shape table needs {}",
            bytes.len() - table_end,
            4 * total
        )));
    }
    let mut flat = Vec::with_capacity(total);
    for i in 0..total {
        let off = table_end + 4 * i;
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if !v.is_finite() {
            return Err(fail("non-finite parameter value"));
        }
        flat.push(v as f64);
    }
    params.assign_from_flat(&flat)?;
    Ok(params)
}

// ---------------------------------------------------------------------------
// Layer kernels.

fn layer_forward(layer: &Layer, inp: &[f64], h: usize, w: usize) -> (Vec<f64>, Option<Vec<f64>>) {
    match layer {
        Layer::Conv(l) => {
            (conv3x3_multi(inp, l.in_c, h, w, &l.weights, Some(&l.bias), l.out_c), None)
        }
        Layer::Sep(l) => {
            let d = dw3x3(inp, l.in_c, h, w, &l.dw_weights, Some(&l.dw_bias), false);
            let out = pw1x1(&d, l.in_c, l.out_c, h * w, &l.pw_weights, Some(&l.pw_bias));
            (out, Some(d))
        }
    }
}

/// Parameter gradients (layer-flat order) and optionally the input gradient.
fn layer_backward(
    layer: &Layer,
    inp: &[f64],
    dw_out: &Option<Vec<f64>>,
    g_out: &[f64],
    h: usize,
    w: usize,
    need_input_grad: bool,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let plane = h * w;
    match layer {
        Layer::Conv(l) => {
            let mut flat = Vec::with_capacity(l.weights.len() + l.bias.len());
            for oc in 0..l.out_c {
                let g = &g_out[oc * plane..][..plane];
                for ic in 0..l.in_c {
                    let x = &inp[ic * plane..][..plane];
                    flat.extend_from_slice(&grad_weights_3x3(g, x, h, w));
                }
            }
            for oc in 0..l.out_c {
                flat.push(g_out[oc * plane..][..plane].iter().sum());
            }
            let g_in = need_input_grad.then(|| {
                let wt = transpose_flip3x3(&l.weights, l.out_c, l.in_c);
                conv3x3_multi(g_out, l.out_c, h, w, &wt, None, l.in_c)
            });
            (flat, g_in)
        }
        Layer::Sep(l) => {
            let d = dw_out.as_ref().expect("separable layer cache holds depthwise output");
            // Pointwise stage.
            let mut g_pw_w = vec![0.0; l.out_c * l.in_c];
            let mut g_pw_b = vec![0.0; l.out_c];
            for oc in 0..l.out_c {
                let g = &g_out[oc * plane..][..plane];
                g_pw_b[oc] = g.iter().sum();
                for ic in 0..l.in_c {
                    let x = &d[ic * plane..][..plane];
                    g_pw_w[oc * l.in_c + ic] = g.iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
            let wt = transpose_pw(&l.pw_weights, l.out_c, l.in_c);
            let g_d = pw1x1(g_out, l.out_c, l.in_c, plane, &wt, None);
            // Depthwise stage.
            let mut g_dw_w = vec![0.0; l.in_c * 9];
            let mut g_dw_b = vec![0.0; l.in_c];
            for ch in 0..l.in_c {
                let g = &g_d[ch * plane..][..plane];
                let x = &inp[ch * plane..][..plane];
                g_dw_b[ch] = g.iter().sum();
                g_dw_w[ch * 9..(ch + 1) * 9].copy_from_slice(&grad_weights_3x3(g, x, h, w));
            }
            let g_in = need_input_grad
                .then(|| dw3x3(&g_d, l.in_c, h, w, &l.dw_weights, None, true));
            let mut flat = g_dw_w;
            flat.extend_from_slice(&g_dw_b);
            flat.extend_from_slice(&g_pw_w);
            flat.extend_from_slice(&g_pw_b);
            (flat, g_in)
        }
    }
}

fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zeroes gradient entries where the forward activation was clamped.
fn relu_backward(g: &mut [f64], activated: &[f64]) {
    for (gi, &a) in g.iter_mut().zip(activated) {
        if a <= 0.0 {
            *gi = 0.0;
        }
    }
}

/// Adds a 3-row, 9-tap stencil pass into one output row. Rows must all have
/// the output row's length; missing border rows are passed with zero weights.
#[inline]
fn accum_3rows(dst: &mut [f64], r0: &[f64], r1: &[f64], r2: &[f64], wk: &[f64; 9]) {
    let n = dst.len();
    let (w00, w01, w02) = (wk[0], wk[1], wk[2]);
    let (w10, w11, w12) = (wk[3], wk[4], wk[5]);
    let (w20, w21, w22) = (wk[6], wk[7], wk[8]);
    if n == 1 {
        dst[0] += w01 * r0[0] + w11 * r1[0] + w21 * r2[0];
        return;
    }
    dst[0] += w01 * r0[0] + w02 * r0[1] + w11 * r1[0] + w12 * r1[1] + w21 * r2[0] + w22 * r2[1];
    dst[n - 1] += w00 * r0[n - 2]
        + w01 * r0[n - 1]
        + w10 * r1[n - 2]
        + w11 * r1[n - 1]
        + w20 * r2[n - 2]
        + w21 * r2[n - 1];
    let m = n - 2;
    if m == 0 {
        return;
    }
    let d = &mut dst[1..1 + m];
    let (a0, a1, a2) = (&r0[0..m], &r0[1..1 + m], &r0[2..2 + m]);
    let (b0, b1, b2) = (&r1[0..m], &r1[1..1 + m], &r1[2..2 + m]);
    let (c0, c1, c2) = (&r2[0..m], &r2[1..1 + m], &r2[2..2 + m]);
    for i in 0..m {
        d[i] += w00 * a0[i]
            + w01 * a1[i]
            + w02 * a2[i]
            + w10 * b0[i]
            + w11 * b1[i]
            + w12 * b2[i]
            + w20 * c0[i]
            + w21 * c1[i]
            + w22 * c2[i];
    }
}

/// Multi-channel zero-padded 3×3 convolution, weights `[out][in][9]`.
fn conv3x3_multi(
    inp: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: Option<&[f64]>,
    out_c: usize,
) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; out_c * plane];
    for oc in 0..out_c {
        let ob = &mut out[oc * plane..][..plane];
        if let Some(b) = bias {
            ob.fill(b[oc]);
        }
        for ic in 0..in_c {
            let ip = &inp[ic * plane..][..plane];
            let wk: &[f64] = &weights[(oc * in_c + ic) * 9..][..9];
            accum_plane_3x3(ob, ip, h, w, wk);
        }
    }
    out
}

/// Accumulates one 3×3-filtered input plane into an output plane.
#[inline]
fn accum_plane_3x3(ob: &mut [f64], ip: &[f64], h: usize, w: usize, wk: &[f64]) {
    for y in 0..h {
        let r1 = &ip[y * w..][..w];
        let r0 = if y > 0 { &ip[(y - 1) * w..][..w] } else { r1 };
        let r2 = if y + 1 < h { &ip[(y + 1) * w..][..w] } else { r1 };
        let mut wrow = [wk[0], wk[1], wk[2], wk[3], wk[4], wk[5], wk[6], wk[7], wk[8]];
        if y == 0 {
            wrow[0] = 0.0;
            wrow[1] = 0.0;
            wrow[2] = 0.0;
        }
        if y + 1 == h {
            wrow[6] = 0.0;
            wrow[7] = 0.0;
            wrow[8] = 0.0;
        }
        accum_3rows(&mut ob[y * w..][..w], r0, r1, r2, &wrow);
    }
}

/// Per-channel zero-padded 3×3 convolution, weights `[channel][9]`.
/// With `flip` set, each kernel is rotated 180° (the adjoint pass).
fn dw3x3(
    inp: &[f64],
    c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: Option<&[f64]>,
    flip: bool,
) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; c * plane];
    for ch in 0..c {
        let ob = &mut out[ch * plane..][..plane];
        if let Some(b) = bias {
            ob.fill(b[ch]);
        }
        let wk = &weights[ch * 9..][..9];
        let wk9: Vec<f64> =
            if flip { (0..9).map(|k| wk[8 - k]).collect() } else { wk.to_vec() };
        accum_plane_3x3(ob, &inp[ch * plane..][..plane], h, w, &wk9);
    }
    out
}

/// Pointwise 1×1 convolution over planar channels, weights `[out][in]`.
fn pw1x1(
    inp: &[f64],
    in_c: usize,
    out_c: usize,
    plane: usize,
    weights: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let mut out = vec![0.0; out_c * plane];
    for oc in 0..out_c {
        let ob = &mut out[oc * plane..][..plane];
        if let Some(b) = bias {
            ob.fill(b[oc]);
        }
        for ic in 0..in_c {
            let wv = weights[oc * in_c + ic];
            if wv == 0.0 {
                continue;
            }
            let ip = &inp[ic * plane..][..plane];
            for (o, &x) in ob.iter_mut().zip(ip) {
                *o += wv * x;
            }
        }
    }
    out
}

/// All nine 3×3 weight gradients `gw[k] = Σ g[y][x] · x[y+dy][x+dx]` for a
/// zero-padded convolution, accumulated in a single pass over the planes.
fn grad_weights_3x3(g: &[f64], x: &[f64], h: usize, w: usize) -> [f64; 9] {
    let mut acc = [0.0f64; 9];
    for y in 0..h {
        let grow = &g[y * w..][..w];
        for ky in 0..3usize {
            let sy = y as i64 + ky as i64 - 1;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            let xrow = &x[(sy as usize) * w..][..w];
            let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
            if w == 1 {
                s1 = grow[0] * xrow[0];
            } else {
                s1 += grow[0] * xrow[0];
                s2 += grow[0] * xrow[1];
                s0 += grow[w - 1] * xrow[w - 2];
                s1 += grow[w - 1] * xrow[w - 1];
                let gi = &grow[1..w - 1];
                let (x0, x1, x2) = (&xrow[0..w - 2], &xrow[1..w - 1], &xrow[2..w]);
                let (mut t0, mut t1, mut t2) = (0.0, 0.0, 0.0);
                for i in 0..gi.len() {
                    let gv = gi[i];
                    t0 += gv * x0[i];
                    t1 += gv * x1[i];
                    t2 += gv * x2[i];
                }
                s0 += t0;
                s1 += t1;
                s2 += t2;
            }
            acc[ky * 3] += s0;
            acc[ky * 3 + 1] += s1;
            acc[ky * 3 + 2] += s2;
        }
    }
    acc
}

/// Reindexes `[out][in][9]` weights to `[in][out][9]` with each 3×3 kernel
/// rotated 180°, which turns the input-gradient pass into a plain forward
/// convolution.
fn transpose_flip3x3(weights: &[f64], out_c: usize, in_c: usize) -> Vec<f64> {
    let mut wt = vec![0.0; weights.len()];
    for oc in 0..out_c {
        for ic in 0..in_c {
            for k in 0..9 {
                wt[(ic * out_c + oc) * 9 + k] = weights[(oc * in_c + ic) * 9 + (8 - k)];
            }
        }
    }
    wt
}

fn transpose_pw(weights: &[f64], out_c: usize, in_c: usize) -> Vec<f64> {
    let mut wt = vec![0.0; weights.len()];
    for oc in 0..out_c {
        for ic in 0..in_c {
            wt[ic * out_c + oc] = weights[oc * in_c + ic];
        }
    }
    wt
}
