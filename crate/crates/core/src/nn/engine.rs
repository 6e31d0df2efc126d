//! Forward and backward passes with strategy-aware activation retention.
//!
//! The forward pass keeps only what the requested update strategy will
//! actually read in the backward pass, mirroring a memory-constrained
//! deployment: layers whose parameters are not selected, and that have no
//! selected parameters upstream of the loss below them, retain nothing and
//! propagate no gradient. [`ActivationCache::units_per_frame`] reports the
//! retained footprint and is kept in exact agreement with the analytic cost
//! model (see `cost`).
//!
//! Retention rules, per layer:
//! - convolution: input map, iff its weight is selected (weight gradient
//!   needs it)
//! - fully connected: input vector, iff its weight is selected
//! - batch norm, batch-statistics mode: input map, iff its scale is selected
//!   or any selected parameter sits below it (the exact backward re-derives
//!   batch statistics and normalized values from the input)
//! - batch norm, frozen-statistics mode: the folded per-channel affine
//!   (scale, shift), iff any selected parameter sits below it
//! - relu / max-pool: a sign bitmask / argmax index table, iff any selected
//!   parameter sits below; these are bit-packed bookkeeping, not retained
//!   activation values, and are excluded from the unit count
//!
//! Backward never materializes gradients for unselected parameters and
//! stops walking down the network as soon as nothing below needs a signal.

use super::arch::{ArchDescriptor, LayerSpec};
use super::params::{ModelParams, ParamRole};
use super::strategy::{BnMode, UpdateStrategy};
use super::Scalar;
use crate::error::{Error, Result};
use crate::pose::Pose4;

/// Batch-norm variance guard, matching the deployment runtime.
pub const BN_EPS: f64 = 1e-5;

/// A batch of input frames in NCHW layout.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    data: Vec<T>,
    n: usize,
    channels: usize,
    height: usize,
    width: usize,
}

impl<T: Scalar> Batch<T> {
    pub fn new(data: Vec<T>, n: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        if data.len() != n * channels * height * width {
            return Err(Error::invalid(
                "batch",
                format!(
                    "data length {} does not match {}x{}x{}x{}",
                    data.len(),
                    n,
                    channels,
                    height,
                    width
                ),
            ));
        }
        Ok(Self { data, n, channels, height, width })
    }

    /// Stacks per-frame buffers (each `channels*height*width` long).
    pub fn from_frames(frames: &[Vec<T>], channels: usize, height: usize, width: usize) -> Result<Self> {
        let per = channels * height * width;
        let mut data = Vec::with_capacity(frames.len() * per);
        for f in frames {
            if f.len() != per {
                return Err(Error::invalid("batch", "frame size mismatch"));
            }
            data.extend_from_slice(f);
        }
        Batch::new(data, frames.len(), channels, height, width)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
}

/// Forward-pass mode. Training applies batch-norm according to the
/// strategy's statistics mode and retains what backward will need; eval
/// always normalizes with running statistics and retains nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Train { bn_momentum: f64 },
    Eval,
}

impl Mode {
    /// Training mode with the default running-statistics momentum.
    pub fn train() -> Self {
        Mode::Train { bn_momentum: 0.1 }
    }
}

/// Network outputs for a batch, one 4-vector per frame.
#[derive(Debug, Clone)]
pub struct Predictions<T> {
    data: Vec<T>,
    n: usize,
}

impl<T: Scalar> Predictions<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * 4..i * 4 + 4]
    }

    /// Interprets each output row as a pose, wrapping yaw.
    pub fn poses(&self) -> Vec<Pose4> {
        (0..self.n)
            .map(|i| {
                let r = self.row(i);
                Pose4::new(
                    r[0].into_f64(),
                    r[1].into_f64(),
                    r[2].into_f64(),
                    r[3].into_f64(),
                )
            })
            .collect()
    }
}

/// What each layer must do or keep, for a given update strategy. Derived
/// once per (arch, strategy) pair; the same analysis drives the engine and
/// the analytic cost model.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct LayerNeeds {
    /// Some parameter of this layer is selected for update.
    pub wants_grads: bool,
    /// Some selected parameter sits strictly below this layer, so the layer
    /// must pass a gradient to its input.
    pub below_wants: bool,
    /// Retain the layer input (per-sample activation values).
    pub retain_input: bool,
    /// Retain the folded batch-norm affine (per-channel scale and shift).
    pub retain_affine: bool,
    /// Retain a relu sign mask or pool argmax table (bookkeeping).
    pub retain_mask: bool,
}

pub(crate) fn analyze(arch: &ArchDescriptor, strategy: &UpdateStrategy) -> Vec<LayerNeeds> {
    let mut needs = vec![LayerNeeds::default(); arch.layers.len()];
    let mut below = false;
    for (i, layer) in arch.layers.iter().enumerate() {
        let wants = match layer {
            LayerSpec::Conv2d { bias, .. } => {
                strategy.selects(ParamRole::ConvWeight)
                    || (*bias && strategy.selects(ParamRole::ConvBias))
            }
            LayerSpec::BatchNorm { .. } => {
                strategy.selects(ParamRole::BnGamma) || strategy.selects(ParamRole::BnBeta)
            }
            LayerSpec::FullyConnected { .. } => {
                strategy.selects(ParamRole::FcWeight) || strategy.selects(ParamRole::FcBias)
            }
            _ => false,
        };
        needs[i].wants_grads = wants;
        needs[i].below_wants = below;
        needs[i].retain_input = match layer {
            LayerSpec::Conv2d { .. } => strategy.selects(ParamRole::ConvWeight),
            LayerSpec::FullyConnected { .. } => strategy.selects(ParamRole::FcWeight),
            LayerSpec::BatchNorm { .. } => match strategy.bn_mode() {
                BnMode::Batch => strategy.selects(ParamRole::BnGamma) || below,
                // Frozen statistics: the scale gradient only needs the
                // input, which this mode's strategies never select.
                BnMode::Frozen => strategy.selects(ParamRole::BnGamma),
            },
            _ => false,
        };
        needs[i].retain_affine = matches!(layer, LayerSpec::BatchNorm { .. })
            && strategy.bn_mode() == BnMode::Frozen
            && below;
        needs[i].retain_mask =
            matches!(layer, LayerSpec::Relu | LayerSpec::MaxPool { .. }) && below;
        below = below || wants;
    }
    needs
}

/// Per-layer retained state from a training forward pass.
#[derive(Debug, Clone)]
enum Retained<T> {
    /// Layer input, per-sample activation values (len divisible by n).
    Input(Vec<T>),
    /// Folded batch-norm affine: `scale[c]` then `shift[c]` (per batch).
    Affine(Vec<T>),
    /// Relu sign mask, bit-packed, one bit per element.
    Mask { bits: Vec<u64>, len: usize },
    /// Max-pool argmax, flat index into the layer input, one per output.
    Argmax(Vec<u32>),
    None,
}

/// Activations retained by a training forward pass for one batch.
///
/// The unit accounting matches the deployment convention: per-sample
/// activation values are amortized over the batch, per-batch values (the
/// folded batch-norm affine) count once, bit-packed masks and index tables
/// are bookkeeping and count zero units (their physical bytes do appear in
/// [`ActivationCache::heap_bytes`]).
#[derive(Debug, Clone)]
pub struct ActivationCache<T> {
    retained: Vec<Retained<T>>,
    n: usize,
    strategy_label: String,
}

impl<T: Scalar> ActivationCache<T> {
    /// Retained activation values per frame, in scalar units.
    pub fn units_per_frame(&self) -> usize {
        let mut per_sample = 0usize;
        let mut per_batch = 0usize;
        for r in &self.retained {
            match r {
                Retained::Input(v) => per_sample += v.len(),
                Retained::Affine(v) => per_batch += v.len(),
                _ => {}
            }
        }
        per_sample / self.n + per_batch
    }

    /// Physical bytes held by the cache at this scalar width, masks and
    /// index tables included.
    pub fn heap_bytes(&self) -> usize {
        let mut bytes = 0usize;
        for r in &self.retained {
            bytes += match r {
                Retained::Input(v) | Retained::Affine(v) => v.len() * std::mem::size_of::<T>(),
                Retained::Mask { bits, .. } => bits.len() * 8,
                Retained::Argmax(v) => v.len() * 4,
                Retained::None => 0,
            };
        }
        bytes
    }

    pub fn batch_size(&self) -> usize {
        self.n
    }

    fn input_of(&self, layer: usize) -> Result<&[T]> {
        match &self.retained[layer] {
            Retained::Input(v) => Ok(v),
            _ => Err(Error::run(format!(
                "cache holds no input for layer {layer}; forward/backward strategy mismatch"
            ))),
        }
    }
}

/// Gradient for one selected parameter tensor.
#[derive(Debug, Clone)]
pub struct GradTensor<T> {
    pub layer: usize,
    pub role: ParamRole,
    pub data: Vec<T>,
}

/// Gradients for exactly the parameters an update strategy selects, in
/// parameter-store order.
#[derive(Debug, Clone)]
pub struct GradStore<T> {
    grads: Vec<GradTensor<T>>,
}

impl<T: Scalar> GradStore<T> {
    /// Zero gradients shaped like the selected subset of `params`.
    pub fn zeros(params: &ModelParams<T>, strategy: &UpdateStrategy) -> Self {
        let grads = params
            .tensors()
            .iter()
            .filter(|t| strategy.selects(t.role))
            .map(|t| GradTensor {
                layer: t.layer,
                role: t.role,
                data: vec![T::zero(); t.data.len()],
            })
            .collect();
        Self { grads }
    }

    pub fn tensors(&self) -> &[GradTensor<T>] {
        &self.grads
    }

    pub fn tensors_mut(&mut self) -> &mut [GradTensor<T>] {
        &mut self.grads
    }

    pub fn get(&self, layer: usize, role: ParamRole) -> Option<&GradTensor<T>> {
        self.grads.iter().find(|g| g.layer == layer && g.role == role)
    }

    fn get_mut(&mut self, layer: usize, role: ParamRole) -> Option<&mut GradTensor<T>> {
        self.grads.iter_mut().find(|g| g.layer == layer && g.role == role)
    }

    /// Total scalar count across selected gradients.
    pub fn len(&self) -> usize {
        self.grads.iter().map(|g| g.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Accumulates `other` into `self` (same shape required).
    pub fn add_assign(&mut self, other: &GradStore<T>) {
        assert_eq!(self.grads.len(), other.grads.len(), "grad store shape mismatch");
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            assert_eq!(a.data.len(), b.data.len(), "grad tensor shape mismatch");
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
    }

    /// Scales every gradient by `s`.
    pub fn scale(&mut self, s: T) {
        for g in &mut self.grads {
            for x in &mut g.data {
                *x *= s;
            }
        }
    }
}

/// Number of scalars the strategy would update in `params`.
pub fn count_selected_params<T: Scalar>(
    params: &ModelParams<T>,
    strategy: &UpdateStrategy,
) -> usize {
    params
        .tensors()
        .iter()
        .filter(|t| strategy.selects(t.role))
        .map(|t| t.data.len())
        .sum()
}

struct RunningUpdate<T> {
    layer: usize,
    mean: Vec<T>,
    var: Vec<T>,
}

/// Training forward pass. Returns predictions and the activation cache the
/// strategy's backward pass will need. In batch-statistics mode the
/// running statistics in `params` are updated in place, which is why the
/// parameters are taken mutably; frozen mode and eval never touch them.
pub fn forward<T: Scalar>(
    params: &mut ModelParams<T>,
    arch: &ArchDescriptor,
    batch: &Batch<T>,
    mode: Mode,
    strategy: &UpdateStrategy,
) -> Result<(Predictions<T>, ActivationCache<T>)> {
    let mut updates = Vec::new();
    let out = run_forward(params, arch, batch, mode, strategy, Some(&mut updates))?;
    for u in updates {
        let momentum = match mode {
            Mode::Train { bn_momentum } => bn_momentum,
            Mode::Eval => 0.0,
        };
        let m = T::from_f64(momentum);
        let keep = T::from_f64(1.0 - momentum);
        let rm = params.expect_mut(u.layer, ParamRole::BnRunningMean);
        for (r, b) in rm.data.iter_mut().zip(&u.mean) {
            *r = keep * *r + m * *b;
        }
        let rv = params.expect_mut(u.layer, ParamRole::BnRunningVar);
        for (r, b) in rv.data.iter_mut().zip(&u.var) {
            *r = keep * *r + m * *b;
        }
    }
    Ok(out)
}

/// Inference: eval-mode forward with no retention and no mutation.
pub fn infer<T: Scalar>(
    params: &ModelParams<T>,
    arch: &ArchDescriptor,
    batch: &Batch<T>,
) -> Result<Predictions<T>> {
    let strategy = UpdateStrategy::all_wb();
    let (preds, _) = run_forward(params, arch, batch, Mode::Eval, &strategy, None)?;
    Ok(preds)
}

fn run_forward<T: Scalar>(
    params: &ModelParams<T>,
    arch: &ArchDescriptor,
    batch: &Batch<T>,
    mode: Mode,
    strategy: &UpdateStrategy,
    mut running_updates: Option<&mut Vec<RunningUpdate<T>>>,
) -> Result<(Predictions<T>, ActivationCache<T>)> {
    let shapes = arch.shapes()?;
    if batch.channels != arch.input.channels
        || batch.height != arch.input.height
        || batch.width != arch.input.width
    {
        return Err(Error::invalid("batch", "frame shape does not match descriptor input"));
    }
    let n = batch.n;
    let train = matches!(mode, Mode::Train { .. });
    let needs = if train {
        analyze(arch, strategy)
    } else {
        vec![LayerNeeds::default(); arch.layers.len()]
    };

    let mut retained: Vec<Retained<T>> = Vec::with_capacity(arch.layers.len());
    let mut cur = batch.data.clone();

    for (li, layer) in arch.layers.iter().enumerate() {
        let need = needs[li];
        let mut keep = if need.retain_input {
            Retained::Input(cur.clone())
        } else {
            Retained::None
        };
        match layer {
            LayerSpec::Conv2d { out_channels, kernel, stride, padding, bias } => {
                let (ic, ih, iw) = shapes.input[li].map_dims()?;
                let (oc, oh, ow) = shapes.output[li].map_dims()?;
                debug_assert_eq!(oc, *out_channels);
                let w = &params.expect(li, ParamRole::ConvWeight).data;
                let b = bias.then(|| params.expect(li, ParamRole::ConvBias).data.as_slice());
                let mut out = vec![T::zero(); n * oc * oh * ow];
                conv_forward(&cur, n, ic, ih, iw, w, b, oc, *kernel, *stride, *padding, oh, ow, &mut out);
                cur = out;
            }
            LayerSpec::BatchNorm { channels } => {
                let (c, h, wd) = shapes.input[li].map_dims()?;
                debug_assert_eq!(c, *channels);
                let gamma = &params.expect(li, ParamRole::BnGamma).data;
                let beta = &params.expect(li, ParamRole::BnBeta).data;
                let use_batch_stats = train && strategy.bn_mode() == BnMode::Batch;
                if use_batch_stats {
                    let (mean, var) = channel_stats(&cur, n, c, h * wd);
                    bn_apply(&mut cur, n, c, h * wd, &mean, &var, gamma, beta);
                    if let Some(updates) = running_updates.as_deref_mut() {
                        updates.push(RunningUpdate {
                            layer: li,
                            mean: mean.iter().map(|&m| T::from_f64(m)).collect(),
                            var: var.iter().map(|&v| T::from_f64(v)).collect(),
                        });
                    }
                } else {
                    let rm = &params.expect(li, ParamRole::BnRunningMean).data;
                    let rv = &params.expect(li, ParamRole::BnRunningVar).data;
                    // Fold into y = a*x + b, the form a deployed frozen
                    // layer precomputes once per batch.
                    let mut affine = vec![T::zero(); 2 * c];
                    for ch in 0..c {
                        let inv = T::from_f64(1.0 / (rv[ch].into_f64() + BN_EPS).sqrt());
                        let a = gamma[ch] * inv;
                        affine[ch] = a;
                        affine[c + ch] = beta[ch] - a * rm[ch];
                    }
                    let plane = h * wd;
                    for ni in 0..n {
                        for ch in 0..c {
                            let base = (ni * c + ch) * plane;
                            let a = affine[ch];
                            let b = affine[c + ch];
                            for x in &mut cur[base..base + plane] {
                                *x = a * *x + b;
                            }
                        }
                    }
                    if need.retain_affine {
                        keep = Retained::Affine(affine);
                    }
                }
            }
            LayerSpec::Relu => {
                if need.retain_mask {
                    let len = cur.len();
                    let mut bits = vec![0u64; (len + 63) / 64];
                    for (i, x) in cur.iter_mut().enumerate() {
                        if *x > T::zero() {
                            bits[i / 64] |= 1 << (i % 64);
                        } else {
                            *x = T::zero();
                        }
                    }
                    keep = Retained::Mask { bits, len };
                } else {
                    for x in &mut cur {
                        if *x < T::zero() {
                            *x = T::zero();
                        }
                    }
                }
            }
            LayerSpec::MaxPool { kernel, stride } => {
                let (c, ih, iw) = shapes.input[li].map_dims()?;
                let (_, oh, ow) = shapes.output[li].map_dims()?;
                let mut out = vec![T::zero(); n * c * oh * ow];
                let mut arg = need.retain_mask.then(|| vec![0u32; n * c * oh * ow]);
                pool_forward(&cur, n, c, ih, iw, *kernel, *stride, oh, ow, &mut out, arg.as_deref_mut());
                if let Some(a) = arg {
                    keep = Retained::Argmax(a);
                }
                cur = out;
            }
            LayerSpec::Flatten => {
                // NCHW is already flat per sample; nothing moves.
            }
            LayerSpec::FullyConnected { out_features } => {
                let in_features = shapes.input[li].elems();
                let w = &params.expect(li, ParamRole::FcWeight).data;
                let b = &params.expect(li, ParamRole::FcBias).data;
                let mut out = vec![T::zero(); n * out_features];
                for ni in 0..n {
                    let xin = &cur[ni * in_features..(ni + 1) * in_features];
                    for o in 0..*out_features {
                        let row = &w[o * in_features..(o + 1) * in_features];
                        let mut acc = b[o];
                        for (wv, xv) in row.iter().zip(xin) {
                            acc = acc + *wv * *xv;
                        }
                        out[ni * out_features + o] = acc;
                    }
                }
                cur = out;
            }
        }
        retained.push(keep);
    }

    let preds = Predictions { data: cur, n };
    let cache = ActivationCache { retained, n, strategy_label: strategy.label().to_string() };
    Ok((preds, cache))
}

/// Backward pass: gradients for exactly the selected parameters, walking no
/// deeper than the lowest selected layer. `upstream` is dL/d(output),
/// `n * 4` values in prediction order.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    arch: &ArchDescriptor,
    cache: &ActivationCache<T>,
    upstream: &[T],
    strategy: &UpdateStrategy,
) -> Result<GradStore<T>> {
    if cache.strategy_label != strategy.label() {
        return Err(Error::run(format!(
            "activation cache was built for strategy '{}', backward asked for '{}'",
            cache.strategy_label,
            strategy.label()
        )));
    }
    let shapes = arch.shapes()?;
    let n = cache.n;
    let out_elems = shapes.output.last().map(|s| s.elems()).unwrap_or(0);
    if upstream.len() != n * out_elems {
        return Err(Error::invalid("upstream", "gradient length does not match batch output"));
    }
    let needs = analyze(arch, strategy);
    let mut grads = GradStore::zeros(params, strategy);
    let mut delta = upstream.to_vec();

    for li in (0..arch.layers.len()).rev() {
        let need = needs[li];
        if !need.wants_grads && !need.below_wants {
            break;
        }
        match &arch.layers[li] {
            LayerSpec::Conv2d { out_channels, kernel, stride, padding, bias } => {
                let (ic, ih, iw) = shapes.input[li].map_dims()?;
                let (oc, oh, ow) = shapes.output[li].map_dims()?;
                debug_assert_eq!(oc, *out_channels);
                if strategy.selects(ParamRole::ConvWeight) {
                    let input = cache.input_of(li)?;
                    let g = grads
                        .get_mut(li, ParamRole::ConvWeight)
                        .expect("selected conv weight grad present");
                    conv_weight_grad(
                        input, &delta, n, ic, ih, iw, oc, *kernel, *stride, *padding, oh, ow,
                        &mut g.data,
                    );
                }
                if *bias && strategy.selects(ParamRole::ConvBias) {
                    let g = grads
                        .get_mut(li, ParamRole::ConvBias)
                        .expect("selected conv bias grad present");
                    for ni in 0..n {
                        for o in 0..oc {
                            let base = (ni * oc + o) * oh * ow;
                            let mut acc = 0.0f64;
                            for d in &delta[base..base + oh * ow] {
                                acc += d.into_f64();
                            }
                            g.data[o] += T::from_f64(acc);
                        }
                    }
                }
                if need.below_wants {
                    let w = &params.expect(li, ParamRole::ConvWeight).data;
                    let mut ig = vec![T::zero(); n * ic * ih * iw];
                    conv_input_grad(
                        &delta, w, n, ic, ih, iw, oc, *kernel, *stride, *padding, oh, ow, &mut ig,
                    );
                    delta = ig;
                }
            }
            LayerSpec::BatchNorm { channels } => {
                let c = *channels;
                let (_, h, wd) = shapes.input[li].map_dims()?;
                let plane = h * wd;
                match strategy.bn_mode() {
                    BnMode::Batch => {
                        let input = cache.input_of(li)?;
                        bn_batch_backward(
                            params, strategy, &mut grads, &mut delta, input, li, n, c, plane,
                            need.below_wants,
                        );
                    }
                    BnMode::Frozen => {
                        // dL/dbeta = sum of deltas per channel.
                        if strategy.selects(ParamRole::BnBeta) {
                            let g = grads
                                .get_mut(li, ParamRole::BnBeta)
                                .expect("selected bn shift grad present");
                            for ni in 0..n {
                                for ch in 0..c {
                                    let base = (ni * c + ch) * plane;
                                    let mut acc = 0.0f64;
                                    for d in &delta[base..base + plane] {
                                        acc += d.into_f64();
                                    }
                                    g.data[ch] += T::from_f64(acc);
                                }
                            }
                        }
                        if strategy.selects(ParamRole::BnGamma) {
                            let input = cache.input_of(li)?;
                            let rm = &params.expect(li, ParamRole::BnRunningMean).data;
                            let rv = &params.expect(li, ParamRole::BnRunningVar).data;
                            let g = grads
                                .get_mut(li, ParamRole::BnGamma)
                                .expect("selected bn scale grad present");
                            for ch in 0..c {
                                let inv = 1.0 / (rv[ch].into_f64() + BN_EPS).sqrt();
                                let mu = rm[ch].into_f64();
                                let mut acc = 0.0f64;
                                for ni in 0..n {
                                    let base = (ni * c + ch) * plane;
                                    for i in 0..plane {
                                        let xh = (input[base + i].into_f64() - mu) * inv;
                                        acc += delta[base + i].into_f64() * xh;
                                    }
                                }
                                g.data[ch] += T::from_f64(acc);
                            }
                        }
                        if need.below_wants {
                            let scale: Vec<T> = match &cache.retained[li] {
                                Retained::Affine(aff) => aff[..c].to_vec(),
                                _ => {
                                    return Err(Error::run(
                                        "frozen batch-norm backward needs the folded affine"
                                            .to_string(),
                                    ))
                                }
                            };
                            for ni in 0..n {
                                for ch in 0..c {
                                    let base = (ni * c + ch) * plane;
                                    let a = scale[ch];
                                    for d in &mut delta[base..base + plane] {
                                        *d *= a;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerSpec::Relu => {
                if need.below_wants {
                    match &cache.retained[li] {
                        Retained::Mask { bits, len } => {
                            debug_assert_eq!(*len, delta.len());
                            for (i, d) in delta.iter_mut().enumerate() {
                                if bits[i / 64] & (1 << (i % 64)) == 0 {
                                    *d = T::zero();
                                }
                            }
                        }
                        _ => {
                            return Err(Error::run("relu backward needs its sign mask".to_string()))
                        }
                    }
                }
            }
            LayerSpec::MaxPool { .. } => {
                if need.below_wants {
                    let (c, ih, iw) = shapes.input[li].map_dims()?;
                    match &cache.retained[li] {
                        Retained::Argmax(arg) => {
                            let mut ig = vec![T::zero(); n * c * ih * iw];
                            for (o, d) in delta.iter().enumerate() {
                                ig[arg[o] as usize] += *d;
                            }
                            delta = ig;
                        }
                        _ => {
                            return Err(Error::run(
                                "max-pool backward needs its argmax table".to_string(),
                            ))
                        }
                    }
                }
            }
            LayerSpec::Flatten => {
                // Shapes only; delta buffer is already flat.
            }
            LayerSpec::FullyConnected { out_features } => {
                let in_features = shapes.input[li].elems();
                let of = *out_features;
                if strategy.selects(ParamRole::FcWeight) {
                    let input = cache.input_of(li)?;
                    let g = grads
                        .get_mut(li, ParamRole::FcWeight)
                        .expect("selected fc weight grad present");
                    for ni in 0..n {
                        let xin = &input[ni * in_features..(ni + 1) * in_features];
                        for o in 0..of {
                            let d = delta[ni * of + o];
                            let row = &mut g.data[o * in_features..(o + 1) * in_features];
                            for (gw, xv) in row.iter_mut().zip(xin) {
                                *gw += d * *xv;
                            }
                        }
                    }
                }
                if strategy.selects(ParamRole::FcBias) {
                    let g = grads
                        .get_mut(li, ParamRole::FcBias)
                        .expect("selected fc bias grad present");
                    for ni in 0..n {
                        for o in 0..of {
                            g.data[o] += delta[ni * of + o];
                        }
                    }
                }
                if need.below_wants {
                    let w = &params.expect(li, ParamRole::FcWeight).data;
                    let mut ig = vec![T::zero(); n * in_features];
                    for ni in 0..n {
                        let dout = &delta[ni * of..(ni + 1) * of];
                        let row = &mut ig[ni * in_features..(ni + 1) * in_features];
                        for (o, d) in dout.iter().enumerate() {
                            let wrow = &w[o * in_features..(o + 1) * in_features];
                            for (r, wv) in row.iter_mut().zip(wrow) {
                                *r += *d * *wv;
                            }
                        }
                    }
                    delta = ig;
                }
            }
        }
    }

    Ok(grads)
}

/// Exact backward through batch-statistics normalization. Batch mean and
/// variance are re-derived from the retained input with the same f64
/// accumulation as the forward pass, so forward and backward see identical
/// statistics.
#[allow(clippy::too_many_arguments)]
fn bn_batch_backward<T: Scalar>(
    params: &ModelParams<T>,
    strategy: &UpdateStrategy,
    grads: &mut GradStore<T>,
    delta: &mut [T],
    input: &[T],
    li: usize,
    n: usize,
    c: usize,
    plane: usize,
    below_wants: bool,
) {
    let gamma = &params.expect(li, ParamRole::BnGamma).data;
    let (mean, var) = channel_stats(input, n, c, plane);
    let m = (n * plane) as f64;
    for ch in 0..c {
        let mu = mean[ch];
        let inv = 1.0 / (var[ch] + BN_EPS).sqrt();
        // s1 = sum(delta), s2 = sum(delta * xhat) over the channel.
        let mut s1 = 0.0f64;
        let mut s2 = 0.0f64;
        for ni in 0..n {
            let base = (ni * c + ch) * plane;
            for i in 0..plane {
                let d = delta[base + i].into_f64();
                let xh = (input[base + i].into_f64() - mu) * inv;
                s1 += d;
                s2 += d * xh;
            }
        }
        if strategy.selects(ParamRole::BnGamma) {
            if let Some(g) = grads.get_mut(li, ParamRole::BnGamma) {
                g.data[ch] += T::from_f64(s2);
            }
        }
        if strategy.selects(ParamRole::BnBeta) {
            if let Some(g) = grads.get_mut(li, ParamRole::BnBeta) {
                g.data[ch] += T::from_f64(s1);
            }
        }
        if below_wants {
            let gscale = gamma[ch].into_f64() * inv;
            let mean_d = s1 / m;
            let mean_dx = s2 / m;
            for ni in 0..n {
                let base = (ni * c + ch) * plane;
                for i in 0..plane {
                    let d = delta[base + i].into_f64();
                    let xh = (input[base + i].into_f64() - mu) * inv;
                    delta[base + i] = T::from_f64(gscale * (d - mean_d - xh * mean_dx));
                }
            }
        }
    }
}

/// Per-channel mean and biased variance over batch and spatial dims,
/// accumulated in f64 in a fixed order.
fn channel_stats<T: Scalar>(x: &[T], n: usize, c: usize, plane: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (n * plane) as f64;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let mut sum = 0.0f64;
        for ni in 0..n {
            let base = (ni * c + ch) * plane;
            for v in &x[base..base + plane] {
                sum += v.into_f64();
            }
        }
        let mu = sum / m;
        let mut acc = 0.0f64;
        for ni in 0..n {
            let base = (ni * c + ch) * plane;
            for v in &x[base..base + plane] {
                let d = v.into_f64() - mu;
                acc += d * d;
            }
        }
        mean[ch] = mu;
        var[ch] = acc / m;
    }
    (mean, var)
}

fn bn_apply<T: Scalar>(
    x: &mut [T],
    n: usize,
    c: usize,
    plane: usize,
    mean: &[f64],
    var: &[f64],
    gamma: &[T],
    beta: &[T],
) {
    for ch in 0..c {
        let inv = 1.0 / (var[ch] + BN_EPS).sqrt();
        let a = gamma[ch] * T::from_f64(inv);
        let b = beta[ch] - a * T::from_f64(mean[ch]);
        for ni in 0..n {
            let base = (ni * c + ch) * plane;
            for v in &mut x[base..base + plane] {
                *v = a * *v + b;
            }
        }
    }
}

/// Valid output range for one kernel tap: all `ox` with
/// `0 <= ox*stride - padding + kx < limit`.
fn tap_range(limit: usize, out: usize, stride: usize, padding: usize, kx: usize) -> (usize, usize) {
    let s = stride as isize;
    let off = kx as isize - padding as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let hi = ((limit as isize - off) + s - 1) / s;
    let lo = lo.max(0) as usize;
    let hi = hi.clamp(0, out as isize) as usize;
    (lo, hi.max(lo))
}

#[allow(clippy::too_many_arguments)]
fn conv_forward<T: Scalar>(
    input: &[T],
    n: usize,
    ic: usize,
    ih: usize,
    iw: usize,
    w: &[T],
    bias: Option<&[T]>,
    oc: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    out: &mut [T],
) {
    if let Some(b) = bias {
        for ni in 0..n {
            for o in 0..oc {
                let base = (ni * oc + o) * oh * ow;
                for v in &mut out[base..base + oh * ow] {
                    *v = b[o];
                }
            }
        }
    }
    for ni in 0..n {
        let in_base = ni * ic * ih * iw;
        let out_base = ni * oc * oh * ow;
        for o in 0..oc {
            for ci in 0..ic {
                let w_base = (o * ic + ci) * k * k;
                let in_ch = in_base + ci * ih * iw;
                for ky in 0..k {
                    let (oy_lo, oy_hi) = tap_range(ih, oh, stride, padding, ky);
                    for kx in 0..k {
                        let wv = w[w_base + ky * k + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (ox_lo, ox_hi) = tap_range(iw, ow, stride, padding, kx);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - padding;
                            let in_row = in_ch + iy * iw;
                            let out_row = out_base + (o * oh + oy) * ow;
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - padding;
                                out[out_row + ox] = out[out_row + ox] + wv * input[in_row + ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_weight_grad<T: Scalar>(
    input: &[T],
    delta: &[T],
    n: usize,
    ic: usize,
    ih: usize,
    iw: usize,
    oc: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    grad: &mut [T],
) {
    for ni in 0..n {
        let in_base = ni * ic * ih * iw;
        let out_base = ni * oc * oh * ow;
        for o in 0..oc {
            for ci in 0..ic {
                let w_base = (o * ic + ci) * k * k;
                let in_ch = in_base + ci * ih * iw;
                for ky in 0..k {
                    let (oy_lo, oy_hi) = tap_range(ih, oh, stride, padding, ky);
                    for kx in 0..k {
                        let (ox_lo, ox_hi) = tap_range(iw, ow, stride, padding, kx);
                        let mut acc = 0.0f64;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - padding;
                            let in_row = in_ch + iy * iw;
                            let out_row = out_base + (o * oh + oy) * ow;
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - padding;
                                acc += delta[out_row + ox].into_f64()
                                    * input[in_row + ix].into_f64();
                            }
                        }
                        grad[w_base + ky * k + kx] =
                            grad[w_base + ky * k + kx] + T::from_f64(acc);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_input_grad<T: Scalar>(
    delta: &[T],
    w: &[T],
    n: usize,
    ic: usize,
    ih: usize,
    iw: usize,
    oc: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    ig: &mut [T],
) {
    for ni in 0..n {
        let in_base = ni * ic * ih * iw;
        let out_base = ni * oc * oh * ow;
        for o in 0..oc {
            for ci in 0..ic {
                let w_base = (o * ic + ci) * k * k;
                let in_ch = in_base + ci * ih * iw;
                for ky in 0..k {
                    let (oy_lo, oy_hi) = tap_range(ih, oh, stride, padding, ky);
                    for kx in 0..k {
                        let wv = w[w_base + ky * k + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (ox_lo, ox_hi) = tap_range(iw, ow, stride, padding, kx);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - padding;
                            let in_row = in_ch + iy * iw;
                            let out_row = out_base + (o * oh + oy) * ow;
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - padding;
                                ig[in_row + ix] = ig[in_row + ix] + wv * delta[out_row + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn pool_forward<T: Scalar>(
    input: &[T],
    n: usize,
    c: usize,
    ih: usize,
    iw: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    out: &mut [T],
    mut argmax: Option<&mut [u32]>,
) {
    for ni in 0..n {
        for ch in 0..c {
            let in_ch = (ni * c + ch) * ih * iw;
            let out_ch = (ni * c + ch) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let iy0 = oy * stride;
                    let ix0 = ox * stride;
                    let mut best = input[in_ch + iy0 * iw + ix0];
                    let mut best_at = in_ch + iy0 * iw + ix0;
                    for ky in 0..k {
                        let iy = iy0 + ky;
                        if iy >= ih {
                            break;
                        }
                        for kx in 0..k {
                            let ix = ix0 + kx;
                            if ix >= iw {
                                break;
                            }
                            let at = in_ch + iy * iw + ix;
                            // Ties keep the earliest index, matching the
                            // deployment kernel's scan order.
                            if input[at] > best {
                                best = input[at];
                                best_at = at;
                            }
                        }
                    }
                    out[out_ch + oy * ow + ox] = best;
                    if let Some(a) = argmax.as_deref_mut() {
                        a[out_ch + oy * ow + ox] = best_at as u32;
                    }
                }
            }
        }
    }
}
