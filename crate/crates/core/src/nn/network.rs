use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Layer layout of a fully connected regression network.
///
/// `layer_widths` runs from the input dimension through the hidden widths to
/// the single output. Hidden layers use leaky-ReLU; the output is linear.
/// `dropout_site` indexes the hidden layer (0-based) whose outputs are
/// multiplied by dropout masks or other multiplicative noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub layer_widths: Vec<usize>,
    pub negative_slope: f64,
    pub dropout_site: usize,
}

pub const DEFAULT_HIDDEN: [usize; 3] = [128, 64, 32];
pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.01;

impl Architecture {
    pub fn new(layer_widths: Vec<usize>, negative_slope: f64, dropout_site: usize) -> Result<Self> {
        let arch = Self { layer_widths, negative_slope, dropout_site };
        arch.validate()?;
        Ok(arch)
    }

    /// Hidden widths 128, 64, 32 with dropout on the next-to-last hidden layer.
    pub fn standard(input_dim: usize) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(&DEFAULT_HIDDEN);
        widths.push(1);
        Self { layer_widths: widths, negative_slope: DEFAULT_NEGATIVE_SLOPE, dropout_site: DEFAULT_HIDDEN.len() - 2 }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.layer_widths;
        if w.len() < 3 {
            return Err(Error::invalid("architecture needs at least one hidden layer"));
        }
        if w.iter().any(|&n| n == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if *w.last().unwrap() != 1 {
            return Err(Error::invalid("output width must be 1"));
        }
        if !(self.negative_slope > 0.0 && self.negative_slope < 1.0) {
            return Err(Error::invalid(format!("negative slope {} outside (0, 1)", self.negative_slope)));
        }
        if self.dropout_site >= self.hidden_layers() {
            return Err(Error::invalid(format!(
                "dropout site {} but only {} hidden layers",
                self.dropout_site,
                self.hidden_layers()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn hidden_layers(&self) -> usize {
        self.layer_widths.len().saturating_sub(2)
    }

    /// Number of affine layers (hidden plus output).
    pub fn layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn site_width(&self) -> usize {
        self.layer_widths[self.dropout_site + 1]
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Network coefficients in one flat buffer.
///
/// Layer `l` occupies a `fan_in × fan_out` row-major weight block (row `k`
/// holds the weights leaving input unit `k`) followed by `fan_out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamsRecord", try_from = "ParamsRecord")]
pub struct NetworkParams {
    widths: Vec<usize>,
    values: Vec<f64>,
}

/// Wire form of [`NetworkParams`]: explicit shapes and row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsRecord {
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(arch: &Architecture) -> Self {
        Self { widths: arch.layer_widths.clone(), values: vec![0.0; arch.param_count()] }
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Index ranges of the weight block and the bias block of layer `l`.
    pub fn layer_ranges(&self, l: usize) -> (Range<usize>, Range<usize>) {
        layer_ranges(&self.widths, l)
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        &self.values[self.layer_ranges(l).0]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        &self.values[self.layer_ranges(l).1]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let r = self.layer_ranges(l).0;
        &mut self.values[r]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let r = self.layer_ranges(l).1;
        &mut self.values[r]
    }

    pub fn check_shape(&self, arch: &Architecture) -> Result<()> {
        if self.widths != arch.layer_widths {
            return Err(Error::invalid("parameter shapes do not match the architecture"));
        }
        Ok(())
    }

    /// `Σ ‖W_l‖²` over all weight blocks; biases excluded.
    pub fn weight_norm_sq(&self) -> f64 {
        (0..self.widths.len() - 1).map(|l| self.weights(l).iter().map(|w| w * w).sum::<f64>()).sum()
    }
}

pub(crate) fn layer_ranges(widths: &[usize], l: usize) -> (Range<usize>, Range<usize>) {
    let mut offset = 0;
    for w in widths.windows(2).take(l) {
        offset += w[0] * w[1] + w[1];
    }
    let (fan_in, fan_out) = (widths[l], widths[l + 1]);
    let w_end = offset + fan_in * fan_out;
    (offset..w_end, w_end..w_end + fan_out)
}

impl From<NetworkParams> for ParamsRecord {
    fn from(p: NetworkParams) -> Self {
        let layers = (0..p.widths.len() - 1)
            .map(|l| LayerRecord {
                fan_in: p.widths[l],
                fan_out: p.widths[l + 1],
                weights: p.weights(l).to_vec(),
                bias: p.bias(l).to_vec(),
            })
            .collect();
        ParamsRecord { layers }
    }
}

impl TryFrom<ParamsRecord> for NetworkParams {
    type Error = Error;

    fn try_from(r: ParamsRecord) -> Result<Self> {
        if r.layers.is_empty() {
            return Err(Error::invalid("parameter record has no layers"));
        }
        let mut widths = vec![r.layers[0].fan_in];
        let mut values = Vec::new();
        for (l, layer) in r.layers.into_iter().enumerate() {
            if layer.fan_in != *widths.last().unwrap() {
                return Err(Error::invalid(format!("layer {l} fan-in does not match the previous fan-out")));
            }
            if layer.weights.len() != layer.fan_in * layer.fan_out || layer.bias.len() != layer.fan_out {
                return Err(Error::invalid(format!("layer {l} arrays do not match its shape")));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {l} has non-finite coefficients")));
            }
            widths.push(layer.fan_out);
            values.extend(layer.weights);
            values.extend(layer.bias);
        }
        Ok(Self { widths, values })
    }
}

/// Xavier (Glorot) uniform initialization: weights from
/// `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`, biases zero.
pub fn init_xavier(arch: &Architecture, seed: u64) -> NetworkParams {
    let mut params = NetworkParams::zeros(arch);
    let mut rng = seed::rng(seed);
    for l in 0..arch.layers() {
        let (fan_in, fan_out) = (arch.layer_widths[l], arch.layer_widths[l + 1]);
        let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        for w in params.weights_mut(l) {
            *w = rng.random_range(-bound..bound);
        }
    }
    params
}

#[inline]
fn leaky(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        slope * z
    }
}

/// `c = a·b + beta·c` on strided views: `a` is `m × k`, `b` is `k × n` and
/// `c` is row-major `m × n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, cs: usize, rows: usize, cols: usize| (rows - 1) * r + (cols - 1) * cs;
    if k > 0 {
        assert!(last(rsa, csa, m, k) < a.len() && last(rsb, csb, k, n) < b.len());
    }
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out[i, :] = bias + input[i, :] · W` for a batch of rows.
fn affine(weights: &[f64], bias: &[f64], input: &[f64], fan_in: usize, out: &mut [f64]) {
    let fan_out = bias.len();
    let batch = input.len() / fan_in;
    for z in out.chunks_exact_mut(fan_out) {
        z.copy_from_slice(bias);
    }
    gemm((batch, fan_in, fan_out), input, (fan_in, 1), weights, (fan_out, 1), 1.0, out);
}

/// Activations recorded by a batched forward pass, reused by the backward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    batch: usize,
    /// `acts[0]` is the input; `acts[l + 1]` the output of layer `l`
    /// (after masking, for the dropout site).
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    site_unmasked: Vec<f64>,
    masked: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn outputs(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Site activations before the multiplicative noise was applied.
    pub fn site_activations(&self) -> &[f64] {
        &self.site_unmasked
    }
}

fn check_factors(arch: &Architecture, batch: usize, factors: Option<&[f64]>) -> Result<()> {
    if let Some(f) = factors {
        if f.len() != batch * arch.site_width() {
            return Err(Error::invalid(format!(
                "mask has {} entries, expected {} (batch {batch} × site width {})",
                f.len(),
                batch * arch.site_width(),
                arch.site_width()
            )));
        }
    }
    Ok(())
}

/// Batched forward pass over `batch` rows of `inputs` (row-major,
/// `batch × input_dim`). `factors`, if given, multiplies the dropout-site
/// activations elementwise (`batch × site_width`).
pub fn forward_batch(
    params: &NetworkParams,
    arch: &Architecture,
    inputs: &[f64],
    batch: usize,
    factors: Option<&[f64]>,
    tape: &mut Tape,
) -> Result<()> {
    params.check_shape(arch)?;
    if inputs.len() != batch * arch.input_dim() {
        return Err(Error::invalid(format!(
            "inputs have {} values, expected {batch} × {}",
            inputs.len(),
            arch.input_dim()
        )));
    }
    check_factors(arch, batch, factors)?;
    let layers = arch.layers();
    tape.batch = batch;
    tape.acts.resize_with(layers + 1, Vec::new);
    tape.pre.resize_with(layers, Vec::new);
    tape.acts[0].clear();
    tape.acts[0].extend_from_slice(inputs);
    tape.masked = factors.is_some();
    for l in 0..layers {
        let (fan_in, fan_out) = (arch.layer_widths[l], arch.layer_widths[l + 1]);
        let (done, rest) = tape.acts.split_at_mut(l + 1);
        let input = &done[l];
        let pre = &mut tape.pre[l];
        pre.resize(batch * fan_out, 0.0);
        affine(params.weights(l), params.bias(l), input, fan_in, pre);
        let out = &mut rest[0];
        out.clear();
        if l + 1 == layers {
            out.extend_from_slice(pre);
        } else {
            out.extend(pre.iter().map(|&z| leaky(z, arch.negative_slope)));
            if l == arch.dropout_site {
                tape.site_unmasked.clear();
                tape.site_unmasked.extend_from_slice(out);
                if let Some(f) = factors {
                    for (a, m) in out.iter_mut().zip(f) {
                        *a *= m;
                    }
                }
            }
        }
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow { layer: l });
        }
    }
    Ok(())
}

/// Where the backward pass writes its results. Every target is optional.
#[derive(Default)]
pub struct BackwardTargets<'a> {
    /// Accumulates `∂loss/∂θ` in the [`NetworkParams`] layout.
    pub params: Option<&'a mut [f64]>,
    /// Receives `∂loss/∂factor` for the dropout-site noise.
    pub factors: Option<&'a mut [f64]>,
    /// Receives `∂loss/∂input`.
    pub inputs: Option<&'a mut [f64]>,
}

/// Reverse-mode pass given `∂loss/∂output` per row. `factors` must be the
/// same noise the forward pass used.
pub fn backward_batch(
    params: &NetworkParams,
    arch: &Architecture,
    tape: &Tape,
    factors: Option<&[f64]>,
    d_out: &[f64],
    mut targets: BackwardTargets<'_>,
) -> Result<()> {
    let batch = tape.batch;
    if d_out.len() != batch {
        return Err(Error::invalid("output gradient does not match the batch"));
    }
    if factors.is_some() != tape.masked {
        return Err(Error::invalid("backward pass must use the mask of the forward pass"));
    }
    check_factors(arch, batch, factors)?;
    let layers = arch.layers();
    let mut delta = d_out.to_vec();
    let mut d_act = Vec::new();
    for l in (0..layers).rev() {
        let (fan_in, fan_out) = (arch.layer_widths[l], arch.layer_widths[l + 1]);
        let input = &tape.acts[l];
        if let Some(grads) = targets.params.as_deref_mut() {
            let (wr, br) = params.layer_ranges(l);
            let (gw, gb) = grads[wr.start..br.end].split_at_mut(wr.len());
            // gW += inputᵀ · delta
            gemm((fan_in, batch, fan_out), input, (1, fan_in), &delta, (fan_out, 1), 1.0, gw);
            for d in delta.chunks_exact(fan_out) {
                for (g, di) in gb.iter_mut().zip(d) {
                    *g += di;
                }
            }
        }
        if l == 0 && targets.inputs.is_none() {
            break;
        }
        // d_act = delta · Wᵀ
        d_act.clear();
        d_act.resize(batch * fan_in, 0.0);
        gemm((batch, fan_out, fan_in), &delta, (fan_out, 1), params.weights(l), (1, fan_out), 0.0, &mut d_act);
        if l == 0 {
            if let Some(gi) = targets.inputs.as_deref_mut() {
                gi.copy_from_slice(&d_act);
            }
            break;
        }
        let h = l - 1;
        if h == arch.dropout_site {
            if let Some(f) = factors {
                if let Some(gf) = targets.factors.as_deref_mut() {
                    for ((g, da), a) in gf.iter_mut().zip(&d_act).zip(&tape.site_unmasked) {
                        *g = da * a;
                    }
                }
                for (da, m) in d_act.iter_mut().zip(f) {
                    *da *= m;
                }
            }
        }
        let slope = arch.negative_slope;
        delta.clear();
        delta.extend(d_act.iter().zip(&tape.pre[h]).map(|(da, &z)| if z > 0.0 { *da } else { slope * da }));
    }
    Ok(())
}

/// Network output for a single input. `mask`, if given, multiplies the
/// dropout-site activations; for inverted dropout its entries are
/// `0` or `1/(1-r)`.
pub fn forward(params: &NetworkParams, arch: &Architecture, x: &[f64], mask: Option<&[f64]>) -> Result<f64> {
    let mut tape = Tape::new();
    forward_batch(params, arch, x, 1, mask, &mut tape)?;
    Ok(tape.outputs()[0])
}

/// Mean squared error over the rows of `tape` plus `l2 · Σ‖W‖²`.
pub fn loss(params: &NetworkParams, tape: &Tape, targets: &[f64], l2: f64) -> f64 {
    let n = targets.len() as f64;
    let mse: f64 = tape.outputs().iter().zip(targets).map(|(f, y)| (f - y) * (f - y)).sum::<f64>() / n;
    mse + l2 * params.weight_norm_sq()
}

/// `∂loss/∂output` of the mean squared error.
pub(crate) fn mse_output_grad(tape: &Tape, targets: &[f64], out: &mut Vec<f64>) {
    let n = targets.len() as f64;
    out.clear();
    out.extend(tape.outputs().iter().zip(targets).map(|(f, y)| 2.0 * (f - y) / n));
}

/// Adds the gradient of `l2 · Σ‖W‖²` to `grads`.
pub(crate) fn add_l2_grad(params: &NetworkParams, l2: f64, grads: &mut [f64]) {
    if l2 == 0.0 {
        return;
    }
    for l in 0..params.widths.len() - 1 {
        let r = params.layer_ranges(l).0;
        for (g, w) in grads[r.clone()].iter_mut().zip(&params.values[r]) {
            *g += 2.0 * l2 * w;
        }
    }
}

/// Exact gradient of `(1/B) Σ (f(x_i) - y_i)² + l2 · Σ‖W‖²` with respect to
/// all parameters, in the [`NetworkParams`] layout.
///
/// `inputs` is row-major `batch × input_dim`. `mask`, if given, is the
/// dropout-site noise for every row (`batch × site_width`).
pub fn gradient(
    params: &NetworkParams,
    arch: &Architecture,
    inputs: &[f64],
    targets: &[f64],
    l2: f64,
    mask: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Err(Error::invalid("gradient needs a non-empty batch"));
    }
    let mut tape = Tape::new();
    forward_batch(params, arch, inputs, targets.len(), mask, &mut tape)?;
    let mut d_out = Vec::new();
    mse_output_grad(&tape, targets, &mut d_out);
    let mut grads = vec![0.0; params.len()];
    backward_batch(params, arch, &tape, mask, &d_out, BackwardTargets { params: Some(&mut grads), ..Default::default() })?;
    add_l2_grad(params, l2, &mut grads);
    Ok(grads)
}

/// Runs the layers up to and including the dropout site for a batch of
/// inputs and returns the unmasked site activations (`batch × site_width`).
pub fn forward_to_site(params: &NetworkParams, arch: &Architecture, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
    params.check_shape(arch)?;
    if inputs.len() != batch * arch.input_dim() {
        return Err(Error::invalid("inputs do not match the batch"));
    }
    let mut cur = inputs.to_vec();
    for l in 0..=arch.dropout_site {
        let fan_out = arch.layer_widths[l + 1];
        let mut next = vec![0.0; batch * fan_out];
        affine(params.weights(l), params.bias(l), &cur, arch.layer_widths[l], &mut next);
        for v in next.iter_mut() {
            *v = leaky(*v, arch.negative_slope);
        }
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow { layer: l });
        }
        cur = next;
    }
    Ok(cur)
}

/// Runs the layers after the dropout site on already-masked site activations.
pub fn forward_from_site(params: &NetworkParams, arch: &Architecture, site: &[f64], batch: usize) -> Result<Vec<f64>> {
    if site.len() != batch * arch.site_width() {
        return Err(Error::invalid("site activations do not match the batch"));
    }
    let layers = arch.layers();
    let mut cur = site.to_vec();
    for l in arch.dropout_site + 1..layers {
        let fan_out = arch.layer_widths[l + 1];
        let mut next = vec![0.0; batch * fan_out];
        affine(params.weights(l), params.bias(l), &cur, arch.layer_widths[l], &mut next);
        if l + 1 < layers {
            for v in next.iter_mut() {
                *v = leaky(*v, arch.negative_slope);
            }
        }
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow { layer: l });
        }
        cur = next;
    }
    Ok(cur)
}
