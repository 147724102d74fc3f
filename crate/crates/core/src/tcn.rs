//! Dilated causal temporal convolution network.
//!
//! Each residual unit is two dilated causal convolutions, each followed by a
//! rectifier, plus a skip path (identity, or a 1×1 projection when the channel
//! count changes). There is no activation after the skip sum, so the skip path
//! stays linear all the way through the stack.
//!
//! Internally activations are time-major over a suffix of the time axis: when
//! only the final time step's features are needed (the coefficient heads) each
//! layer computes just the positions that can still reach that step.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{relu_backward, relu_in_place, uniform_fan_in};
use crate::tensor::{axpy, Parameter, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcnConfig {
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
}

impl TcnConfig {
    /// 32 hidden channels, kernel 3, dilations 1, 2, 4.
    pub fn with_defaults(in_channels: usize) -> Self {
        Self {
            in_channels,
            hidden_channels: 32,
            kernel_size: 3,
            dilations: vec![1, 2, 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.hidden_channels == 0 {
            return Err(Error::Config("TCN channel counts must be at least 1".into()));
        }
        if self.kernel_size == 0 {
            return Err(Error::Config("TCN kernel_size must be at least 1".into()));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::Config(format!(
                "TCN dilations must be non-empty and each at least 1, got {:?}",
                self.dilations
            )));
        }
        Ok(())
    }

    /// `1 + Σ 2·(k−1)·dilation`: two convolutions per residual unit.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .dilations
            .iter()
            .map(|d| 2 * (self.kernel_size - 1) * d)
            .sum::<usize>()
    }
}

pub fn receptive_field(config: &TcnConfig) -> usize {
    config.receptive_field()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    /// `[out_channels, in_channels, kernel_size]`
    pub weight: Parameter,
    /// `[out_channels]`
    pub bias: Parameter,
}

impl ConvLayerParams {
    pub fn new(id: &str, in_channels: usize, out_channels: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Parameter::new(
                format!("{id}.weight"),
                uniform_fan_in(&[out_channels, in_channels, kernel], in_channels * kernel, rng),
            ),
            bias: Parameter::new(format!("{id}.bias"), Tensor::zeros([out_channels])),
        }
    }

    pub fn from_tensors(id: &str, weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 3 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::dim("ConvLayerParams", weight.shape(), bias.shape()));
        }
        Ok(Self {
            weight: Parameter::new(format!("{id}.weight"), weight),
            bias: Parameter::new(format!("{id}.bias"), bias),
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape()[2]
    }

    fn params_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }

    fn params(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }
}

/// Time-major activations covering positions `start..len` of a length-`len` axis.
#[derive(Debug, Clone)]
struct Seq {
    start: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Seq {
    fn from_channel_major(x: &[f64], channels: usize, len: usize, start: usize) -> Self {
        let n = len - start;
        let mut data = vec![0.0; n * channels];
        for c in 0..channels {
            for p in start..len {
                data[(p - start) * channels + c] = x[c * len + p];
            }
        }
        Self { start, channels, data }
    }

    fn positions(&self) -> usize {
        self.data.len() / self.channels
    }

    fn at(&self, p: usize) -> &[f64] {
        let q = p - self.start;
        &self.data[q * self.channels..(q + 1) * self.channels]
    }
}

/// Im2col buffer for one convolution: row `q` holds the `[C_in × k]` taps
/// feeding output position `start + q`.
struct Cols {
    start: usize,
    width: usize,
    data: Vec<f64>,
}

/// Fills `row` with the `[C_in × k]` taps feeding output position `p`; taps
/// before the series start are zero.
fn gather(input: &Seq, dilation: usize, k: usize, p: usize, row: &mut [f64]) {
    let c_in = input.channels;
    for tap in 0..k {
        let back = dilation * (k - 1 - tap);
        if back > p {
            for c in 0..c_in {
                row[c * k + tap] = 0.0;
            }
            continue;
        }
        let src = input.at(p - back);
        for c in 0..c_in {
            row[c * k + tap] = src[c];
        }
    }
}

/// Tap-major weights turn each output row into contiguous axpys over channels.
fn tap_major(conv: &ConvLayerParams) -> Vec<f64> {
    let (c_out, width) = (conv.out_channels(), conv.in_channels() * conv.kernel_size());
    let w = conv.weight.value.data();
    let mut wt = vec![0.0; width * c_out];
    for o in 0..c_out {
        for j in 0..width {
            wt[j * c_out + o] = w[o * width + j];
        }
    }
    wt
}

fn apply_row(col: &[f64], wt: &[f64], bias: &[f64], dst: &mut [f64]) {
    let c_out = bias.len();
    dst.copy_from_slice(bias);
    for (j, &v) in col.iter().enumerate() {
        if v != 0.0 {
            axpy(v, &wt[j * c_out..(j + 1) * c_out], dst);
        }
    }
}

fn conv_forward(conv: &ConvLayerParams, dilation: usize, input: &Seq, out_start: usize, len: usize) -> (Seq, Cols) {
    let (c_out, c_in, k) = (conv.out_channels(), conv.in_channels(), conv.kernel_size());
    debug_assert_eq!(input.channels, c_in);
    let width = c_in * k;
    let n = len - out_start;
    let mut cols = vec![0.0; n * width];
    for (q, row) in cols.chunks_exact_mut(width).enumerate() {
        gather(input, dilation, k, out_start + q, row);
    }
    let wt = tap_major(conv);
    let b = conv.bias.value.data();
    let mut out = vec![0.0; n * c_out];
    for (col, dst) in cols.chunks_exact(width).zip(out.chunks_exact_mut(c_out)) {
        apply_row(col, &wt, b, dst);
    }
    (
        Seq {
            start: out_start,
            channels: c_out,
            data: out,
        },
        Cols {
            start: out_start,
            width,
            data: cols,
        },
    )
}

/// [`conv_forward`] without the im2col buffer, for loss-only evaluation.
fn conv_apply(conv: &ConvLayerParams, dilation: usize, input: &Seq, out_start: usize, len: usize) -> Seq {
    let (c_out, k) = (conv.out_channels(), conv.kernel_size());
    let mut row = vec![0.0; conv.in_channels() * k];
    let wt = tap_major(conv);
    let b = conv.bias.value.data();
    let mut out = vec![0.0; (len - out_start) * c_out];
    for (q, dst) in out.chunks_exact_mut(c_out).enumerate() {
        gather(input, dilation, k, out_start + q, &mut row);
        apply_row(&row, &wt, b, dst);
    }
    Seq {
        start: out_start,
        channels: c_out,
        data: out,
    }
}

/// Accumulates parameter gradients and scatters `dL/dinput` into `grad_in`
/// (time-major, positions `grad_in_start..`).
fn conv_backward(
    conv: &mut ConvLayerParams,
    dilation: usize,
    cols: &Cols,
    grad_out: &[f64],
    grad_in: &mut [f64],
    grad_in_start: usize,
) {
    let (c_out, c_in, k) = (conv.out_channels(), conv.in_channels(), conv.kernel_size());
    let width = cols.width;
    let n = cols.data.len() / width;
    let mut dcol = vec![0.0; width];
    for q in 0..n {
        let g = &grad_out[q * c_out..(q + 1) * c_out];
        let col = &cols.data[q * width..(q + 1) * width];
        {
            let dw = conv.weight.grad.data_mut();
            for (o, &go) in g.iter().enumerate() {
                if go != 0.0 {
                    axpy(go, col, &mut dw[o * width..(o + 1) * width]);
                }
            }
        }
        for (db, go) in conv.bias.grad.data_mut().iter_mut().zip(g) {
            *db += go;
        }
        dcol.fill(0.0);
        let w = conv.weight.value.data();
        for (o, &go) in g.iter().enumerate() {
            if go != 0.0 {
                axpy(go, &w[o * width..(o + 1) * width], &mut dcol);
            }
        }
        let p = cols.start + q;
        for tap in 0..k {
            let back = dilation * (k - 1 - tap);
            if back > p {
                continue;
            }
            let src = p - back - grad_in_start;
            let dst = &mut grad_in[src * c_in..(src + 1) * c_in];
            for c in 0..c_in {
                dst[c] += dcol[c * k + tap];
            }
        }
    }
}

/// Causal dilated convolution of `[batch, C_in, L]` into `[batch, C_out, L]`,
/// with left zero padding.
pub fn causal_conv1d(x: &Tensor, params: &ConvLayerParams, dilation: usize) -> Result<Tensor> {
    if dilation == 0 {
        return Err(Error::Domain("dilation must be at least 1".into()));
    }
    if x.rank() != 3 || x.shape()[1] != params.in_channels() {
        return Err(Error::dim("causal_conv1d", x.shape(), params.weight.shape()));
    }
    let (batch, c_in, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let c_out = params.out_channels();
    let mut out = vec![0.0; batch * c_out * len];
    for b in 0..batch {
        let sample = &x.data()[b * c_in * len..(b + 1) * c_in * len];
        let seq = Seq::from_channel_major(sample, c_in, len, 0);
        let (y, _) = conv_forward(params, dilation, &seq, 0, len);
        write_channel_major(&y, len, &mut out[b * c_out * len..(b + 1) * c_out * len]);
    }
    Ok(Tensor::from_parts(vec![batch, c_out, len], out))
}

fn write_channel_major(seq: &Seq, len: usize, out: &mut [f64]) {
    for q in 0..seq.positions() {
        let p = seq.start + q;
        for c in 0..seq.channels {
            out[c * len + p] = seq.data[q * seq.channels + c];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualUnit {
    pub dilation: usize,
    pub conv1: ConvLayerParams,
    pub conv2: ConvLayerParams,
    /// 1×1 projection on the skip path, present when channel counts differ.
    pub projection: Option<ConvLayerParams>,
}

struct UnitCache {
    input: Seq,
    cols1: Cols,
    act1: Seq,
    cols2: Cols,
    act2: Vec<f64>,
    proj_cols: Option<Cols>,
}

impl ResidualUnit {
    fn forward(&self, input: Seq, out_start: usize, len: usize) -> (Seq, UnitCache) {
        let (c_out, k, d) = (self.conv1.out_channels(), self.conv1.kernel_size(), self.dilation);
        let mid_start = out_start.saturating_sub(d * (k - 1));
        let (mut act1, cols1) = conv_forward(&self.conv1, d, &input, mid_start, len);
        relu_in_place(&mut act1.data);
        let (mut act2, cols2) = conv_forward(&self.conv2, d, &act1, out_start, len);
        relu_in_place(&mut act2.data);
        let act2_data = act2.data.clone();
        let proj_cols = match &self.projection {
            Some(proj) => {
                let (skip, cols) = conv_forward(proj, 1, &input, out_start, len);
                for (o, s) in act2.data.iter_mut().zip(&skip.data) {
                    *o += s;
                }
                Some(cols)
            }
            None => {
                for q in 0..act2.positions() {
                    let src = input.at(out_start + q);
                    for (o, s) in act2.data[q * c_out..(q + 1) * c_out].iter_mut().zip(src) {
                        *o += s;
                    }
                }
                None
            }
        };
        (
            act2,
            UnitCache {
                input,
                cols1,
                act1,
                cols2,
                act2: act2_data,
                proj_cols,
            },
        )
    }

    /// [`ResidualUnit::forward`] without caches; identical arithmetic.
    fn apply(&self, input: &Seq, out_start: usize, len: usize) -> Seq {
        let (c_out, k, d) = (self.conv1.out_channels(), self.conv1.kernel_size(), self.dilation);
        let mid_start = out_start.saturating_sub(d * (k - 1));
        let mut act1 = conv_apply(&self.conv1, d, input, mid_start, len);
        relu_in_place(&mut act1.data);
        let mut out = conv_apply(&self.conv2, d, &act1, out_start, len);
        relu_in_place(&mut out.data);
        match &self.projection {
            Some(proj) => {
                let skip = conv_apply(proj, 1, input, out_start, len);
                for (o, s) in out.data.iter_mut().zip(&skip.data) {
                    *o += s;
                }
            }
            None => {
                for (q, dst) in out.data.chunks_exact_mut(c_out).enumerate() {
                    for (o, s) in dst.iter_mut().zip(input.at(out_start + q)) {
                        *o += s;
                    }
                }
            }
        }
        out
    }

    fn param_count(&self) -> usize {
        self.params().len()
    }

    /// Returns `dL/dinput` over the cached input's positions.
    fn backward(&mut self, cache: &UnitCache, grad_out: &[f64]) -> Vec<f64> {
        let d = self.dilation;
        let in_ch = cache.input.channels;
        let mut grad_in = vec![0.0; cache.input.data.len()];
        let in_start = cache.input.start;
        let out_start = cache.cols2.start;

        // skip path
        match (&mut self.projection, &cache.proj_cols) {
            (Some(proj), Some(cols)) => conv_backward(proj, 1, cols, grad_out, &mut grad_in, in_start),
            _ => {
                let off = (out_start - in_start) * in_ch;
                for (gi, go) in grad_in[off..].iter_mut().zip(grad_out) {
                    *gi += go;
                }
            }
        }

        let mut g2 = grad_out.to_vec();
        relu_backward(&cache.act2, &mut g2);
        let mut g1 = vec![0.0; cache.act1.data.len()];
        conv_backward(&mut self.conv2, d, &cache.cols2, &g2, &mut g1, cache.act1.start);
        relu_backward(&cache.act1.data, &mut g1);
        conv_backward(&mut self.conv1, d, &cache.cols1, &g1, &mut grad_in, in_start);
        grad_in
    }

    fn params(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = self.conv1.params().into_iter().chain(self.conv2.params()).collect();
        if let Some(p) = &self.projection {
            v.extend(p.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = self
            .conv1
            .params_mut()
            .into_iter()
            .chain(self.conv2.params_mut())
            .collect();
        if let Some(p) = &mut self.projection {
            v.extend(p.params_mut());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tcn {
    config: TcnConfig,
    pub units: Vec<ResidualUnit>,
}

/// Unit inputs from [`Tcn::trace_last`]; the last entry is the output.
#[derive(Debug, Clone)]
pub(crate) struct TcnTrace {
    len: usize,
    inputs: Vec<Seq>,
}

impl TcnTrace {
    pub(crate) fn features(&self) -> &[f64] {
        &self.inputs.last().expect("input is always traced").data
    }
}

pub(crate) struct TcnCache {
    len: usize,
    units: Vec<UnitCache>,
}

impl Tcn {
    pub fn new(id: &str, config: TcnConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut units = Vec::with_capacity(config.dilations.len());
        let mut channels = config.in_channels;
        let (h, k) = (config.hidden_channels, config.kernel_size);
        for (i, &dilation) in config.dilations.iter().enumerate() {
            let uid = format!("{id}.unit{i}");
            let conv1 = ConvLayerParams::new(&format!("{uid}.conv1"), channels, h, k, rng);
            let conv2 = ConvLayerParams::new(&format!("{uid}.conv2"), h, h, k, rng);
            let projection = (channels != h).then(|| ConvLayerParams::new(&format!("{uid}.skip"), channels, h, 1, rng));
            units.push(ResidualUnit {
                dilation,
                conv1,
                conv2,
                projection,
            });
            channels = h;
        }
        Ok(Self { config, units })
    }

    pub fn config(&self) -> &TcnConfig {
        &self.config
    }

    pub fn receptive_field(&self) -> usize {
        self.config.receptive_field()
    }

    /// Full-length forward pass: `[batch, M, L]` → `[batch, hidden, L]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 3 || x.shape()[1] != self.config.in_channels {
            return Err(Error::dim(
                "tcn_forward",
                x.shape(),
                &[0, self.config.in_channels, 0],
            ));
        }
        let (batch, c_in, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let h = self.config.hidden_channels;
        let mut out = vec![0.0; batch * h * len];
        for b in 0..batch {
            let sample = &x.data()[b * c_in * len..(b + 1) * c_in * len];
            let (y, _) = self.run(sample, len, 0);
            write_channel_major(&y, len, &mut out[b * h * len..(b + 1) * h * len]);
        }
        Ok(Tensor::from_parts(vec![batch, h, len], out))
    }

    /// Input position each unit must start from so that the final unit produces
    /// `final_start..len`.
    fn plan(&self, final_start: usize) -> Vec<usize> {
        let k = self.config.kernel_size;
        let mut starts = vec![0; self.units.len() + 1];
        starts[self.units.len()] = final_start;
        for (i, unit) in self.units.iter().enumerate().rev() {
            starts[i] = starts[i + 1].saturating_sub(2 * unit.dilation * (k - 1));
        }
        starts
    }

    fn run(&self, x: &[f64], len: usize, final_start: usize) -> (Seq, TcnCache) {
        let starts = self.plan(final_start);
        let mut h = Seq::from_channel_major(x, self.config.in_channels, len, starts[0]);
        let mut caches = Vec::with_capacity(self.units.len());
        for (i, unit) in self.units.iter().enumerate() {
            let (next, cache) = unit.forward(h, starts[i + 1], len);
            caches.push(cache);
            h = next;
        }
        (h, TcnCache { len, units: caches })
    }

    /// Loss-only forward to the final step, keeping every unit's input.
    pub(crate) fn trace_last(&self, x: &[f64], len: usize) -> TcnTrace {
        let starts = self.plan(len - 1);
        let mut inputs = Vec::with_capacity(self.units.len() + 1);
        inputs.push(Seq::from_channel_major(x, self.config.in_channels, len, starts[0]));
        for (i, unit) in self.units.iter().enumerate() {
            let next = unit.apply(&inputs[i], starts[i + 1], len);
            inputs.push(next);
        }
        TcnTrace { len, inputs }
    }

    /// Final-step features, rerunning units `unit..` from `trace`. Equals the
    /// traced features when only parameters of those units changed.
    pub(crate) fn resume_last(&self, trace: &TcnTrace, unit: usize) -> Vec<f64> {
        let starts = self.plan(trace.len - 1);
        if unit >= self.units.len() {
            return trace.features().to_vec();
        }
        let mut h = self.units[unit].apply(&trace.inputs[unit], starts[unit + 1], trace.len);
        for (i, u) in self.units.iter().enumerate().skip(unit + 1) {
            h = u.apply(&h, starts[i + 1], trace.len);
        }
        h.data
    }

    /// Index of the unit owning local parameter `index` (in [`Tcn::params`] order).
    pub(crate) fn unit_of_param(&self, index: usize) -> usize {
        let mut seen = 0;
        for (i, unit) in self.units.iter().enumerate() {
            seen += unit.param_count();
            if index < seen {
                return i;
            }
        }
        self.units.len()
    }

    /// Features at the final time step of one `[M, L]` channel-major sample.
    pub(crate) fn forward_last(&self, x: &[f64], len: usize) -> (Vec<f64>, TcnCache) {
        let (out, cache) = self.run(x, len, len - 1);
        (out.data, cache)
    }

    /// Backward pass for [`Tcn::forward_last`]; returns `dL/dx` channel-major `[M, L]`.
    pub(crate) fn backward_last(&mut self, cache: &TcnCache, grad_features: &[f64]) -> Vec<f64> {
        let mut g = grad_features.to_vec();
        for (unit, uc) in self.units.iter_mut().zip(&cache.units).rev() {
            g = unit.backward(uc, &g);
        }
        let first = &cache.units[0].input;
        let len = cache.len;
        let mut dx = vec![0.0; first.channels * len];
        let seq = Seq {
            start: first.start,
            channels: first.channels,
            data: g,
        };
        write_channel_major(&seq, len, &mut dx);
        dx
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.units.iter().flat_map(ResidualUnit::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.units.iter_mut().flat_map(ResidualUnit::params_mut).collect()
    }
}
