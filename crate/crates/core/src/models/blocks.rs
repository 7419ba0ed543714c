//! Building blocks shared by the four architectures.
//!
//! Each block's forward pass returns the tensors its backward pass needs;
//! parameters live in the model's [`ParamStore`] and are referenced by id.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::params::{NormId, ParamId, ParamStore};
use crate::numerics::layers::vector_shape;
use crate::numerics::{
    batchnorm, batchnorm_backward, batchnorm_infer, conv2d, conv2d_backward, dropout, dropout_backward, relu,
    relu_backward, residual_add, transposed_conv2d, transposed_conv2d_backward, LayerSpec, NormCache, NormMode,
    RunningStats, Shape, Tensor4D,
};
use crate::scalar::Scalar;

/// Per-pass execution context.
pub(crate) struct Ctx<'a, T> {
    pub params: &'a [Tensor4D<T>],
    pub norms: Norms<'a, T>,
    /// Present only when dropout should be sampled.
    pub rng: Option<&'a mut ChaCha8Rng>,
    pub dropout_rate: f64,
}

pub(crate) enum Norms<'a, T> {
    Batch {
        stats: &'a mut [RunningStats<T>],
        update_running: bool,
    },
    Running(&'a [RunningStats<T>]),
}

impl<T: Scalar> Ctx<'_, T> {
    fn param(&self, id: ParamId) -> &Tensor4D<T> {
        &self.params[id.0]
    }

    fn maybe_dropout(&mut self, x: Tensor4D<T>) -> Result<(Tensor4D<T>, Option<Vec<T>>)> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.dropout_rate > 0.0 => {
                let (y, mask) = dropout(&x, self.dropout_rate, rng)?;
                Ok((y, Some(mask)))
            }
            _ => Ok((x, None)),
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Tensor4D<T>], id: ParamId, g: &Tensor4D<T>) -> Result<()> {
    grads[id.0].add_assign(g)
}

fn accumulate_vec<T: Scalar>(grads: &mut [Tensor4D<T>], id: ParamId, g: Vec<T>) -> Result<()> {
    let shape = grads[id.0].shape();
    grads[id.0].add_assign(&Tensor4D::new(shape, g)?)
}

/// Gain for convolutions fed by a raw sum rather than a ReLU output: it
/// halves the He variance so such layers preserve scale instead of doubling it.
pub(crate) const LINEAR_GAIN: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// He-uniform bound `gain * sqrt(6 / fan_in)`.
fn he_uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: Shape, fan_in: usize, gain: f64) -> Tensor4D<T> {
    let bound = gain * (6.0 / fan_in as f64).sqrt();
    Tensor4D::from_fn(shape, |_, _, _, _| T::narrow(rng.random_range(-bound..bound)))
}

/// Same-padded convolution with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvUnit {
    pub name: String,
    pub kernels: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        gain: f64,
    ) -> Self {
        let shape = Shape::new(out_channels, in_channels, kernel, kernel);
        let kernels = store.add(
            format!("{name}.kernels"),
            he_uniform(rng, shape, in_channels * kernel * kernel, gain),
        );
        let bias = store.add(format!("{name}.bias"), Tensor4D::zeros(vector_shape(out_channels)));
        ConvUnit {
            name,
            kernels,
            bias,
            in_channels,
            out_channels,
            kernel,
            dilation,
        }
    }

    fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Tensor4D<T>) -> Result<Tensor4D<T>> {
        conv2d(x, ctx.param(self.kernels), ctx.param(self.bias).data(), 1, self.dilation)
    }

    fn backward<T: Scalar>(
        &self,
        params: &[Tensor4D<T>],
        x: &Tensor4D<T>,
        g: &Tensor4D<T>,
        grads: &mut [Tensor4D<T>],
    ) -> Result<Tensor4D<T>> {
        let cg = conv2d_backward(x, &params[self.kernels.0], g, 1, self.dilation)?;
        accumulate(grads, self.kernels, &cg.kernels)?;
        accumulate_vec(grads, self.bias, cg.bias)?;
        Ok(cg.input)
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::conv(self.kernel, self.dilation, self.out_channels)
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.kernels, self.bias]
    }
}

/// Batch normalisation with learned scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct NormUnit {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: NormId,
    pub channels: usize,
}

impl NormUnit {
    pub(crate) fn build<T: Scalar>(store: &mut ParamStore<T>, name: String, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor4D::filled(vector_shape(channels), T::one()));
        let beta = store.add(format!("{name}.beta"), Tensor4D::zeros(vector_shape(channels)));
        let stats = store.add_norm(name.clone(), channels);
        NormUnit {
            name,
            gamma,
            beta,
            stats,
            channels,
        }
    }

    fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: &Tensor4D<T>) -> Result<(Tensor4D<T>, Option<NormCache<T>>)> {
        let gamma = ctx.params[self.gamma.0].data();
        let beta = ctx.params[self.beta.0].data();
        match &mut ctx.norms {
            Norms::Batch { stats, update_running } => batchnorm(
                x,
                gamma,
                beta,
                NormMode::Train {
                    update_running: *update_running,
                },
                &mut stats[self.stats.0],
            ),
            Norms::Running(stats) => Ok((batchnorm_infer(x, gamma, beta, &stats[self.stats.0])?, None)),
        }
    }

    fn backward<T: Scalar>(
        &self,
        params: &[Tensor4D<T>],
        cache: &Option<NormCache<T>>,
        g: &Tensor4D<T>,
        grads: &mut [Tensor4D<T>],
    ) -> Result<Tensor4D<T>> {
        let cache = cache
            .as_ref()
            .ok_or_else(|| Error::State(format!("{}: backward needs a training-mode forward pass", self.name)))?;
        let (gi, gg, gb) = batchnorm_backward(g, cache, params[self.gamma.0].data())?;
        accumulate_vec(grads, self.gamma, gg)?;
        accumulate_vec(grads, self.beta, gb)?;
        Ok(gi)
    }
}

/// conv → batchnorm → ReLU → dropout.
#[derive(Clone, Debug, PartialEq)]
pub struct PlainUnit {
    pub conv: ConvUnit,
    pub norm: NormUnit,
}

pub(crate) struct PlainCache<T> {
    input: Tensor4D<T>,
    norm: Option<NormCache<T>>,
    normalized: Tensor4D<T>,
    mask: Option<Vec<T>>,
}

impl PlainUnit {
    pub(crate) fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        dilation: usize,
    ) -> Self {
        PlainUnit {
            conv: ConvUnit::build(store, rng, format!("{name}.conv"), in_channels, out_channels, 3, dilation, 1.0),
            norm: NormUnit::build(store, format!("{name}.bn"), out_channels),
        }
    }

    fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Tensor4D<T>) -> Result<(Tensor4D<T>, PlainCache<T>)> {
        let z = self.conv.forward(ctx, &x)?;
        let (normalized, norm) = self.norm.forward(ctx, &z)?;
        let (y, mask) = ctx.maybe_dropout(relu(&normalized))?;
        Ok((
            y,
            PlainCache {
                input: x,
                norm,
                normalized,
                mask,
            },
        ))
    }

    fn backward<T: Scalar>(
        &self,
        params: &[Tensor4D<T>],
        cache: &PlainCache<T>,
        g: Tensor4D<T>,
        grads: &mut [Tensor4D<T>],
    ) -> Result<Tensor4D<T>> {
        let g = match &cache.mask {
            Some(mask) => dropout_backward(&g, mask)?,
            None => g,
        };
        let g = relu_backward(&g, &cache.normalized)?;
        let g = self.norm.backward(params, &cache.norm, &g, grads)?;
        self.conv.backward(params, &cache.input, &g, grads)
    }

    fn specs(&self, dropout_rate: f64) -> Vec<(String, LayerSpec)> {
        let c = self.conv.out_channels;
        vec![
            (self.conv.name.clone(), self.conv.spec()),
            (self.norm.name.clone(), LayerSpec::batch_norm(c)),
            (format!("{}.relu", self.norm.name), LayerSpec::relu(c)),
            (format!("{}.dropout", self.norm.name), LayerSpec::dropout(c, dropout_rate)),
        ]
    }
}

/// Pre-activation sub-block: batchnorm → ReLU → conv.
#[derive(Clone, Debug, PartialEq)]
pub struct PreActUnit {
    pub norm: NormUnit,
    pub conv: ConvUnit,
}

pub(crate) struct PreActCache<T> {
    norm: Option<NormCache<T>>,
    normalized: Tensor4D<T>,
    activated: Tensor4D<T>,
}

impl PreActUnit {
    fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: &Tensor4D<T>) -> Result<(Tensor4D<T>, PreActCache<T>)> {
        let (normalized, norm) = self.norm.forward(ctx, x)?;
        let activated = relu(&normalized);
        let y = self.conv.forward(ctx, &activated)?;
        Ok((
            y,
            PreActCache {
                norm,
                normalized,
                activated,
            },
        ))
    }

    fn backward<T: Scalar>(
        &self,
        params: &[Tensor4D<T>],
        cache: &PreActCache<T>,
        g: &Tensor4D<T>,
        grads: &mut [Tensor4D<T>],
    ) -> Result<Tensor4D<T>> {
        let g = self.conv.backward(params, &cache.activated, g, grads)?;
        let g = relu_backward(&g, &cache.normalized)?;
        self.norm.backward(params, &cache.norm, &g, grads)
    }
}

/// Two pre-activation sub-blocks plus an identity (or 1×1-projected) skip,
/// followed by dropout.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualUnit {
    pub name: String,
    pub first: PreActUnit,
    pub second: PreActUnit,
    pub projection: Option<ConvUnit>,
}

pub(crate) struct ResidualCache<T> {
    input: Tensor4D<T>,
    first: PreActCache<T>,
    hidden: Tensor4D<T>,
    second: PreActCache<T>,
    mask: Option<Vec<T>>,
}

impl ResidualUnit {
    pub(crate) fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        let first = PreActUnit {
            norm: NormUnit::build(store, format!("{name}.pre1.bn"), in_channels),
            conv: ConvUnit::build(store, rng, format!("{name}.pre1.conv"), in_channels, out_channels, 3, 1, 1.0),
        };
        let second = PreActUnit {
            norm: NormUnit::build(store, format!("{name}.pre2.bn"), out_channels),
            conv: ConvUnit::build(store, rng, format!("{name}.pre2.conv"), out_channels, out_channels, 3, 1, 1.0),
        };
        let projection = (in_channels != out_channels).then(|| {
            ConvUnit::build(store, rng, format!("{name}.proj"), in_channels, out_channels, 1, 1, LINEAR_GAIN)
        });
        ResidualUnit {
            name: name.to_string(),
            first,
            second,
            projection,
        }
    }

    pub(crate) fn forward<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        x: Tensor4D<T>,
    ) -> Result<(Tensor4D<T>, ResidualCache<T>)> {
        let (hidden, first) = self.first.forward(ctx, &x)?;
        let (body, second) = self.second.forward(ctx, &hidden)?;
        let y = match &self.projection {
            Some(p) => residual_add(&body, &p.forward(ctx, &x)?)?,
            None => residual_add(&body, &x)?,
        };
        let (y, mask) = ctx.maybe_dropout(y)?;
        Ok((
            y,
            ResidualCache {
                input: x,
                first,
                hidden,
                second,
                mask,
            },
        ))
    }

    pub(crate) fn backward<T: Scalar>(
        &self,
        params: &[Tensor4D<T>],
        cache: &ResidualCache<T>,
        g: Tensor4D<T>,
        grads: &mut [Tensor4D<T>],
    ) -> Result<Tensor4D<T>> {
        let g = match &cache.mask {
            Some(mask) => dropout_backward(&g, mask)?,
            None => g,
        };
        let g_hidden = self.second.backward(params, &cache.second, &g, grads)?;
        let mut g_in = self.first.backward(params, &cache.first, &g_hidden, grads)?;
        let g_skip = match &self.projection {
            Some(p) => p.backward(params, &cache.input, &g, grads)?,
            None => g,
        };
        g_in.add_assign(&g_skip)?;
        let _ = &cache.hidden;
        Ok(g_in)
    }

    pub fn out_channels(&self) -> usize {
        self.second.conv.out_channels
    }

    fn specs(&self, dropout_rate: f64) -> Vec<(String, LayerSpec)> {
        let (cin, cout) = (self.first.norm.channels, self.out_channels());
        let mut v = vec![
            (self.first.norm.name.clone(), LayerSpec::batch_norm(cin)),
            (format!("{}.pre1.relu", self.name), LayerSpec::relu(cin)),
            (self.first.conv.name.clone(), self.first.conv.spec()),
            (self.second.norm.name.clone(), LayerSpec::batch_norm(cout)),
            (format!("{}.pre2.relu", self.name), LayerSpec::relu(cout)),
            (self.second.conv.name.clone(), self.second.conv.spec()),
        ];
        if let Some(p) = &self.projection {
            v.push((p.name.clone(), p.spec()));
        }
        v.push((format!("{}.add", self.name), LayerSpec::add(cout)));
        v.push((format!("{}.dropout", self.name), LayerSpec::dropout(cout, dropout_rate)));
        v
    }

    /// Every convolution inside the two pre-activation sub-blocks.
    pub fn body_convs(&self) -> [&ConvUnit; 2] {
        [&self.first.conv, &self.second.conv]
    }
}

/// A stage body: a stack of plain units or a single residual unit.
#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Plain(Vec<PlainUnit>),
    Residual(ResidualUnit),
}

pub(crate) enum BlockCache<T> {
    Plain(Vec<PlainCache<T>>),
    Residual(ResidualCache<T>),
}

impl Block {
    pub(crate) fn plain_stack<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        dilations: &[usize],
    ) -> Self {
        let mut units = Vec::with_capacity(dilations.len());
        let mut cin = in_channels;
        for (i, &d) in dilations.iter().enumerate() {
            units.push(PlainUnit::build(store, rng, &format!("{name}.unit{}", i + 1), cin, out_channels, d));
            cin = out_channels;
        }
        Block::Plain(units)
    }

    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Tensor4D<T>) -> Result<(Tensor4D<T>, BlockCache<T>)> {
        match self {
            Block::Plain(units) => {
                let mut caches = Vec::with_capacity(units.len());
                let mut h = x;
                for u in units {
                    let (y, c) = u.forward(ctx, h)?;
                    caches.push(c);
                    h = y;
                }
                Ok((h, BlockCache::Plain(caches)))
            }
            Block::Residual(unit) => {
                let (y, c) = unit.forward(ctx, x)?;
                Ok((y, BlockCache::Residual(c)))
            }
        }
    }

    pub(crate) fn backward<T: Scalar>(
        &self,
        params: &[Tensor4D<T>],
        cache: &BlockCache<T>,
        g: Tensor4D<T>,
        grads: &mut [Tensor4D<T>],
    ) -> Result<Tensor4D<T>> {
        match (self, cache) {
            (Block::Plain(units), BlockCache::Plain(caches)) => {
                let mut g = g;
                for (u, c) in units.iter().zip(caches).rev() {
                    g = u.backward(params, c, g, grads)?;
                }
                Ok(g)
            }
            (Block::Residual(unit), BlockCache::Residual(c)) => unit.backward(params, c, g, grads),
            _ => Err(Error::State("block cache does not match block kind".into())),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Block::Plain(units) => units.last().map_or(0, |u| u.conv.out_channels),
            Block::Residual(u) => u.out_channels(),
        }
    }

    /// Dilation of every convolution on the main path, in order.
    pub fn dilations(&self) -> Vec<usize> {
        match self {
            Block::Plain(units) => units.iter().map(|u| u.conv.dilation).collect(),
            Block::Residual(u) => u.body_convs().iter().map(|c| c.dilation).collect(),
        }
    }

    pub fn specs(&self, dropout_rate: f64) -> Vec<(String, LayerSpec)> {
        match self {
            Block::Plain(units) => units.iter().flat_map(|u| u.specs(dropout_rate)).collect(),
            Block::Residual(u) => u.specs(dropout_rate),
        }
    }
}

/// 2×2 stride-2 up-convolution with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct UpConvUnit {
    pub name: String,
    pub kernels: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl UpConvUnit {
    pub(crate) fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: String,
        in_channels: usize,
        out_channels: usize,
        gain: f64,
    ) -> Self {
        // Each output pixel sees exactly one tap per input channel.
        let kernels = store.add(
            format!("{name}.kernels"),
            he_uniform(rng, Shape::new(in_channels, out_channels, 2, 2), in_channels, gain),
        );
        let bias = store.add(format!("{name}.bias"), Tensor4D::zeros(vector_shape(out_channels)));
        UpConvUnit {
            name,
            kernels,
            bias,
            in_channels,
            out_channels,
        }
    }

    pub(crate) fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Tensor4D<T>) -> Result<Tensor4D<T>> {
        transposed_conv2d(x, ctx.param(self.kernels), ctx.param(self.bias).data(), 2)
    }

    pub(crate) fn backward<T: Scalar>(
        &self,
        params: &[Tensor4D<T>],
        x: &Tensor4D<T>,
        g: &Tensor4D<T>,
        grads: &mut [Tensor4D<T>],
    ) -> Result<Tensor4D<T>> {
        let cg = transposed_conv2d_backward(x, &params[self.kernels.0], g, 2)?;
        accumulate(grads, self.kernels, &cg.kernels)?;
        accumulate_vec(grads, self.bias, cg.bias)?;
        Ok(cg.input)
    }
}

/// Head: 1×1 convolution to a single logit channel.
pub(crate) fn build_head<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, in_channels: usize) -> ConvUnit {
    // Small gain keeps the initial probability map close to 0.5.
    ConvUnit::build(store, rng, "head.conv".into(), in_channels, 1, 1, 1, 0.05)
}

pub(crate) fn head_forward<T: Scalar>(head: &ConvUnit, ctx: &Ctx<'_, T>, x: &Tensor4D<T>) -> Result<Tensor4D<T>> {
    head.forward(ctx, x)
}

pub(crate) fn head_backward<T: Scalar>(
    head: &ConvUnit,
    params: &[Tensor4D<T>],
    x: &Tensor4D<T>,
    g: &Tensor4D<T>,
    grads: &mut [Tensor4D<T>],
) -> Result<Tensor4D<T>> {
    head.backward(params, x, g, grads)
}
