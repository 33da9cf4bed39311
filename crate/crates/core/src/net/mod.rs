//! Same-resolution RRDB post-processing network.
//!
//! Layout: `head conv -> LeakyReLU -> RRDB x num_rrdb -> tail conv`, added to
//! the input frame and clipped to `[0, 1]`. Each RRDB chains
//! `dense_blocks_per_rrdb` dense blocks of `dense_layers_per_block` 3x3 convs.
//! The tail conv starts at zero so a freshly built network is the identity.

mod conv;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Frame, Real, Result, Tensor};

/// Downscaling applied to the uniform fan-in bound of every initialized kernel.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct NetConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub growth: usize,
    pub num_rrdb: usize,
    pub dense_layers_per_block: usize,
    pub dense_blocks_per_rrdb: usize,
    pub residual_scale: f64,
    pub leaky_slope: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_width: 64,
            growth: 32,
            num_rrdb: 3,
            dense_layers_per_block: 5,
            dense_blocks_per_rrdb: 3,
            residual_scale: 0.2,
            leaky_slope: 0.2,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("in_channels", self.in_channels),
            ("base_width", self.base_width),
            ("growth", self.growth),
            ("dense_layers_per_block", self.dense_layers_per_block),
            ("dense_blocks_per_rrdb", self.dense_blocks_per_rrdb),
        ];
        for (field, value) in counts {
            if value == 0 {
                return Err(Error::Config {
                    field,
                    reason: String::from("must be at least 1"),
                });
            }
        }
        if !(self.residual_scale > 0.0 && self.residual_scale <= 1.0) {
            return Err(Error::Config {
                field: "residual_scale",
                reason: format!("must lie in (0, 1], got {}", self.residual_scale),
            });
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config {
                field: "leaky_slope",
                reason: format!("must lie in [0, 1), got {}", self.leaky_slope),
            });
        }
        Ok(())
    }

    /// Input channel count of dense layer `k` (zero-based).
    fn dense_cin(&self, k: usize) -> usize {
        self.base_width + k * self.growth
    }

    fn dense_cout(&self, k: usize) -> usize {
        if k + 1 == self.dense_layers_per_block {
            self.base_width
        } else {
            self.growth
        }
    }

    /// Channels held by a dense block's concatenation buffer.
    fn dense_buffer_channels(&self) -> usize {
        self.dense_cin(self.dense_layers_per_block - 1)
    }

    fn dense_block_count(&self) -> usize {
        self.num_rrdb * self.dense_blocks_per_rrdb
    }
}

/// Location of one convolution's parameters in the flat parameter vector.
/// The kernel (`[cout][cin][3][3]`) is immediately followed by the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub offset: usize,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * 9
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.cout
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn split<'a, T>(&self, params: &'a [T]) -> (&'a [T], &'a [T]) {
        params[self.offset..self.offset + self.len()].split_at(self.weight_len())
    }

    fn split_mut<'a, T>(&self, params: &'a mut [T]) -> (&'a mut [T], &'a mut [T]) {
        params[self.offset..self.offset + self.len()].split_at_mut(self.weight_len())
    }
}

/// A named parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn layout(config: &NetConfig) -> (Vec<ConvSpec>, Vec<ParamInfo>) {
    let mut convs = Vec::new();
    let mut info = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, cin: usize, cout: usize| {
        let spec = ConvSpec { cin, cout, offset };
        info.push(ParamInfo {
            name: format!("{name}.weight"),
            shape: vec![cout, cin, 3, 3],
            offset,
        });
        info.push(ParamInfo {
            name: format!("{name}.bias"),
            shape: vec![cout],
            offset: offset + spec.weight_len(),
        });
        offset += spec.len();
        convs.push(spec);
    };
    push(String::from("head"), config.in_channels, config.base_width);
    for r in 0..config.num_rrdb {
        for d in 0..config.dense_blocks_per_rrdb {
            for k in 0..config.dense_layers_per_block {
                push(
                    format!("rrdb.{r}.block.{d}.conv.{k}"),
                    config.dense_cin(k),
                    config.dense_cout(k),
                );
            }
        }
    }
    push(String::from("tail"), config.base_width, config.in_channels);
    (convs, info)
}

/// Number of scalar parameters of a network built from `config`.
pub fn parameter_count(config: &NetConfig) -> usize {
    layout(config).0.iter().map(ConvSpec::len).sum()
}

#[inline]
fn leaky<T: Real>(v: T, slope: T) -> T {
    if v > T::zero() {
        v
    } else {
        v * slope
    }
}

/// Derivative of LeakyReLU recovered from its output; valid for slope >= 0.
#[inline]
fn leaky_grad<T: Real>(out: T, slope: T) -> T {
    if out > T::zero() {
        T::one()
    } else {
        slope
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostProcNet<T> {
    config: NetConfig,
    convs: Vec<ConvSpec>,
    info: Vec<ParamInfo>,
    params: Vec<T>,
}

impl<T: Real> PostProcNet<T> {
    /// Builds a network with seeded initialization and a zero tail conv.
    pub fn build(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (convs, info) = layout(&config);
        let total = convs.iter().map(ConvSpec::len).sum();
        let mut params = vec![T::zero(); total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tail = convs.len() - 1;
        for spec in &convs[..tail] {
            let bound = INIT_SCALE * num_traits::Float::sqrt(1.0 / (spec.cin * 9) as f64);
            let (w, _) = spec.split_mut(&mut params);
            for v in w.iter_mut() {
                let u: f64 = rng.random();
                *v = T::lit((2.0 * u - 1.0) * bound);
            }
        }
        Ok(Self {
            config,
            convs,
            info,
            params,
        })
    }

    /// Wraps an existing flat parameter vector, e.g. one read from a checkpoint.
    pub fn from_parameters(config: NetConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let (convs, info) = layout(&config);
        let total: usize = convs.iter().map(ConvSpec::len).sum();
        if params.len() != total {
            return Err(Error::Shape(format!(
                "network expects {total} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            config,
            convs,
            info,
            params,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[T] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_info(&self) -> &[ParamInfo] {
        &self.info
    }

    /// Parameter slice of the tensor called `name`.
    pub fn param(&self, name: &str) -> Option<&[T]> {
        let p = self.info.iter().find(|p| p.name == name)?;
        Some(&self.params[p.offset..p.offset + p.len()])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let p = self.info.iter().find(|p| p.name == name)?;
        let (start, len) = (p.offset, p.len());
        Some(&mut self.params[start..start + len])
    }

    pub fn convs(&self) -> &[ConvSpec] {
        &self.convs
    }

    fn dense_conv(&self, block: usize, k: usize) -> &ConvSpec {
        &self.convs[1 + block * self.config.dense_layers_per_block + k]
    }

    fn tail(&self) -> &ConvSpec {
        &self.convs[self.convs.len() - 1]
    }

    fn slope(&self) -> T {
        T::lit(self.config.leaky_slope)
    }

    fn scale(&self) -> T {
        T::lit(self.config.residual_scale)
    }

    /// View of dense block `block` of RRDB `rrdb`.
    pub fn dense_block(&self, rrdb: usize, block: usize) -> Option<DenseBlock<'_, T>> {
        if rrdb >= self.config.num_rrdb || block >= self.config.dense_blocks_per_rrdb {
            return None;
        }
        Some(DenseBlock {
            net: self,
            index: rrdb * self.config.dense_blocks_per_rrdb + block,
            residual_scale: self.config.residual_scale,
        })
    }

    pub fn rrdb(&self, rrdb: usize) -> Option<Rrdb<'_, T>> {
        if rrdb >= self.config.num_rrdb {
            return None;
        }
        Some(Rrdb {
            net: self,
            index: rrdb,
            residual_scale: self.config.residual_scale,
        })
    }

    fn check_features(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.config.base_width {
            return Err(Error::Shape(format!(
                "feature tensor has {} channels, blocks expect {}",
                x.channels(),
                self.config.base_width
            )));
        }
        Ok(())
    }

    fn check_frame(&self, frame: &Tensor<T>) -> Result<()> {
        if frame.channels() != self.config.in_channels {
            return Err(Error::Shape(format!(
                "frame has {} channels, network expects {}",
                frame.channels(),
                self.config.in_channels
            )));
        }
        Ok(())
    }

    /// Runs dense block `index` on `x` (`base_width` planes). The concatenation
    /// buffer `[x, y_1 .. y_{L-1}]` is left in `buf` for the backward pass.
    fn dense_forward_into(
        &self,
        index: usize,
        scale: T,
        x: &[T],
        height: usize,
        width: usize,
        buf: &mut Vec<T>,
    ) -> Vec<T> {
        let hw = height * width;
        let cfg = &self.config;
        let slope = self.slope();
        buf.clear();
        buf.resize(cfg.dense_buffer_channels() * hw, T::zero());
        buf[..x.len()].copy_from_slice(x);
        let layers = cfg.dense_layers_per_block;
        for k in 0..layers - 1 {
            let spec = self.dense_conv(index, k);
            let (w, b) = spec.split(&self.params);
            let (inp, rest) = buf.split_at_mut(spec.cin * hw);
            let out = &mut rest[..spec.cout * hw];
            conv::forward(inp, spec.cin, height, width, w, b, spec.cout, out);
            for v in out.iter_mut() {
                *v = leaky(*v, slope);
            }
        }
        let spec = self.dense_conv(index, layers - 1);
        let (w, b) = spec.split(&self.params);
        let mut last = vec![T::zero(); spec.cout * hw];
        conv::forward(&buf[..spec.cin * hw], spec.cin, height, width, w, b, spec.cout, &mut last);
        for (l, &xv) in last.iter_mut().zip(x) {
            *l = xv + scale * *l;
        }
        last
    }

    /// Backward through dense block `index`; returns the gradient w.r.t. its input.
    #[allow(clippy::too_many_arguments)]
    fn dense_backward(
        &self,
        index: usize,
        scale: T,
        buf: &[T],
        grad_out: &[T],
        height: usize,
        width: usize,
        grads: &mut [T],
    ) -> Vec<T> {
        let hw = height * width;
        let cfg = &self.config;
        let slope = self.slope();
        let layers = cfg.dense_layers_per_block;
        let mut dbuf = vec![T::zero(); buf.len()];

        let spec = self.dense_conv(index, layers - 1);
        let g_last: Vec<T> = grad_out.iter().map(|&g| g * scale).collect();
        let (gw, gb) = spec.split_mut(grads);
        conv::backward(
            &buf[..spec.cin * hw],
            spec.cin,
            height,
            width,
            spec.split(&self.params).0,
            &g_last,
            spec.cout,
            gw,
            gb,
            Some(&mut dbuf[..spec.cin * hw]),
        );
        for k in (0..layers - 1).rev() {
            let spec = self.dense_conv(index, k);
            let (prefix, rest) = dbuf.split_at_mut(spec.cin * hw);
            let g_slot = &mut rest[..spec.cout * hw];
            let y_slot = &buf[spec.cin * hw..(spec.cin + spec.cout) * hw];
            for (g, &y) in g_slot.iter_mut().zip(y_slot) {
                *g = *g * leaky_grad(y, slope);
            }
            let (gw, gb) = spec.split_mut(grads);
            conv::backward(
                &buf[..spec.cin * hw],
                spec.cin,
                height,
                width,
                spec.split(&self.params).0,
                g_slot,
                spec.cout,
                gw,
                gb,
                Some(prefix),
            );
        }
        let base = cfg.base_width * hw;
        grad_out
            .iter()
            .zip(&dbuf[..base])
            .map(|(&a, &b)| a + b)
            .collect()
    }

    /// Full forward pass, returning the processed frame.
    pub fn forward(&self, frame: &Frame<T>) -> Result<Frame<T>> {
        Ok(self.forward_traced(frame)?.0)
    }

    /// Forward pass that also records the activations needed by [`backward`].
    ///
    /// [`backward`]: PostProcNet::backward
    pub fn forward_traced(&self, frame: &Frame<T>) -> Result<(Frame<T>, ForwardTape<T>)> {
        self.check_frame(frame)?;
        let (height, width) = (frame.height(), frame.width());
        let hw = height * width;
        let cfg = &self.config;
        let slope = self.slope();
        let scale = self.scale();

        let head = &self.convs[0];
        let (w, b) = head.split(&self.params);
        let mut head_out = vec![T::zero(); cfg.base_width * hw];
        conv::forward(frame.as_slice(), head.cin, height, width, w, b, head.cout, &mut head_out);
        for v in head_out.iter_mut() {
            *v = leaky(*v, slope);
        }

        let mut blocks = Vec::with_capacity(cfg.dense_block_count());
        let mut h = head_out.clone();
        for r in 0..cfg.num_rrdb {
            let rrdb_in = h.clone();
            for d in 0..cfg.dense_blocks_per_rrdb {
                let mut buf = Vec::new();
                h = self.dense_forward_into(
                    r * cfg.dense_blocks_per_rrdb + d,
                    scale,
                    &h,
                    height,
                    width,
                    &mut buf,
                );
                blocks.push(buf);
            }
            for (v, &x) in h.iter_mut().zip(&rrdb_in) {
                *v = x + scale * (*v - x);
            }
        }

        let tail = self.tail();
        let (w, b) = tail.split(&self.params);
        let mut residual = vec![T::zero(); cfg.in_channels * hw];
        conv::forward(&h, tail.cin, height, width, w, b, tail.cout, &mut residual);
        let skip: Vec<T> = frame
            .as_slice()
            .iter()
            .zip(&residual)
            .map(|(&a, &r)| a + r)
            .collect();
        let out = Frame::clamped(Tensor::from_vec(cfg.in_channels, height, width, skip.clone())?);
        Ok((
            out,
            ForwardTape {
                input: frame.tensor().clone(),
                head_out,
                blocks,
                trunk_out: h,
                skip,
            },
        ))
    }

    /// Gradient of a scalar loss w.r.t. every parameter, given the loss
    /// gradient w.r.t. the forward output. The clip passes gradient wherever
    /// the pre-clip sum lies in `[0, 1]`.
    pub fn backward(&self, tape: &ForwardTape<T>, grad_output: &Tensor<T>) -> Result<Vec<T>> {
        if !grad_output.same_shape(&tape.input) {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match forward shape {:?}",
                grad_output.shape(),
                tape.input.shape()
            )));
        }
        let (height, width) = (tape.input.height(), tape.input.width());
        let cfg = &self.config;
        let slope = self.slope();
        let scale = self.scale();
        let mut grads = vec![T::zero(); self.params.len()];

        let g_res: Vec<T> = grad_output
            .as_slice()
            .iter()
            .zip(&tape.skip)
            .map(|(&g, &s)| {
                if s >= T::zero() && s <= T::one() {
                    g
                } else {
                    T::zero()
                }
            })
            .collect();

        let tail = *self.tail();
        let mut d = vec![T::zero(); tape.trunk_out.len()];
        {
            let (gw, gb) = tail.split_mut(&mut grads);
            conv::backward(
                &tape.trunk_out,
                tail.cin,
                height,
                width,
                tail.split(&self.params).0,
                &g_res,
                tail.cout,
                gw,
                gb,
                Some(&mut d),
            );
        }

        let one_minus = T::one() - scale;
        for r in (0..cfg.num_rrdb).rev() {
            let mut chain: Vec<T> = d.iter().map(|&g| g * scale).collect();
            for blk in (0..cfg.dense_blocks_per_rrdb).rev() {
                let index = r * cfg.dense_blocks_per_rrdb + blk;
                chain = self.dense_backward(
                    index,
                    scale,
                    &tape.blocks[index],
                    &chain,
                    height,
                    width,
                    &mut grads,
                );
            }
            for (g, c) in d.iter_mut().zip(chain) {
                *g = one_minus * *g + c;
            }
        }

        for (g, &y) in d.iter_mut().zip(&tape.head_out) {
            *g = *g * leaky_grad(y, slope);
        }
        let head = self.convs[0];
        let (gw, gb) = head.split_mut(&mut grads);
        conv::backward(
            tape.input.as_slice(),
            head.cin,
            height,
            width,
            head.split(&self.params).0,
            &d,
            head.cout,
            gw,
            gb,
            None,
        );
        Ok(grads)
    }
}

/// Activations recorded by [`PostProcNet::forward_traced`].
#[derive(Debug, Clone)]
pub struct ForwardTape<T> {
    input: Tensor<T>,
    head_out: Vec<T>,
    blocks: Vec<Vec<T>>,
    trunk_out: Vec<T>,
    skip: Vec<T>,
}

/// Borrowed view of one dense block.
#[derive(Debug, Clone, Copy)]
pub struct DenseBlock<'a, T> {
    net: &'a PostProcNet<T>,
    index: usize,
    pub residual_scale: f64,
}

impl<T: Real> DenseBlock<'_, T> {
    /// `x + residual_scale * y_L`, where `y_k = leaky(conv_k([x, y_1 .. y_{k-1}]))`
    /// for `k < L` and the last layer has no activation.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.check_features(x)?;
        let mut buf = Vec::new();
        let out = self.net.dense_forward_into(
            self.index,
            T::lit(self.residual_scale),
            x.as_slice(),
            x.height(),
            x.width(),
            &mut buf,
        );
        Tensor::from_vec(x.channels(), x.height(), x.width(), out)
    }
}

/// Borrowed view of one residual-in-residual dense block.
#[derive(Debug, Clone, Copy)]
pub struct Rrdb<'a, T> {
    net: &'a PostProcNet<T>,
    index: usize,
    pub residual_scale: f64,
}

impl<T: Real> Rrdb<'_, T> {
    /// `x + residual_scale * (chain(x) - x)` where `chain` runs the dense blocks
    /// in order. Inner dense blocks use the network's configured scale.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.check_features(x)?;
        let cfg = &self.net.config;
        let mut h = x.as_slice().to_vec();
        let mut buf = Vec::new();
        for d in 0..cfg.dense_blocks_per_rrdb {
            h = self.net.dense_forward_into(
                self.index * cfg.dense_blocks_per_rrdb + d,
                self.net.scale(),
                &h,
                x.height(),
                x.width(),
                &mut buf,
            );
        }
        let s = T::lit(self.residual_scale);
        for (v, &xv) in h.iter_mut().zip(x.as_slice()) {
            *v = xv + s * (*v - xv);
        }
        Tensor::from_vec(x.channels(), x.height(), x.width(), h)
    }
}
