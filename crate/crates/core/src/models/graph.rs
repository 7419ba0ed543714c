use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::blocks::{build_head, ConvUnit, LINEAR_GAIN, head_backward, head_forward, Block, BlockCache, Ctx, Norms, ResidualUnit, UpConvUnit};
use crate::models::params::ParamStore;
use crate::numerics::{
    concat_channels, maxpool2d, maxpool2d_backward, sigmoid, sigmoid_backward, split_channels, Checkpoint, LayerSpec,
    Shape, Tensor4D, BRIDGE_DILATIONS,
};
use crate::scalar::Scalar;

/// Number of pooling (and up-sampling) stages.
pub const DEPTH: usize = 4;

/// Spatial sizes must be divisible by this.
pub const SIZE_MULTIPLE: usize = 1 << DEPTH;

pub const DEFAULT_DROPOUT: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    UNet,
    SdUNet,
    ResUNet,
    RdUNet,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::UNet,
        Architecture::SdUNet,
        Architecture::ResUNet,
        Architecture::RdUNet,
    ];

    /// Identifier used in checkpoints and reports.
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::UNet => "unet",
            Architecture::SdUNet => "sd_unet",
            Architecture::ResUNet => "resunet",
            Architecture::RdUNet => "rd_unet",
        }
    }

    /// Spelling accepted on the command line.
    pub fn cli_name(&self) -> &'static str {
        match self {
            Architecture::UNet => "unet",
            Architecture::SdUNet => "sd-unet",
            Architecture::ResUNet => "resunet",
            Architecture::RdUNet => "rd-unet",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            Architecture::UNet => "U-Net",
            Architecture::SdUNet => "SD U-Net",
            Architecture::ResUNet => "ResU-Net",
            Architecture::RdUNet => "RD U-Net",
        }
    }

    pub fn is_residual(&self) -> bool {
        matches!(self, Architecture::ResUNet | Architecture::RdUNet)
    }

    pub fn has_dilated_bridge(&self) -> bool {
        matches!(self, Architecture::SdUNet | Architecture::RdUNet)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Ok(match key.as_str() {
            "unet" | "u_net" => Architecture::UNet,
            "sd_unet" | "sdunet" | "sd_u_net" => Architecture::SdUNet,
            "resunet" | "res_unet" | "resu_net" => Architecture::ResUNet,
            "rd_unet" | "rdunet" | "rd_u_net" => Architecture::RdUNet,
            _ => return Err(Error::Config(format!("unknown architecture {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub base_filters: usize,
    /// Nominal (height, width) the model is built for; any size divisible by
    /// [`SIZE_MULTIPLE`] is accepted at run time.
    pub input_size: (usize, usize),
    pub dropout_rate: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, base_filters: usize, input_size: (usize, usize)) -> Self {
        ModelConfig {
            architecture,
            base_filters,
            input_size,
            dropout_rate: DEFAULT_DROPOUT,
            seed: 0,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        ModelConfig { seed, ..self }
    }

    pub fn with_dropout(self, dropout_rate: f64) -> Self {
        ModelConfig { dropout_rate, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_filters == 0 {
            return Err(Error::Config("base_filters must be at least 1".into()));
        }
        check_spatial(self.input_size.0, self.input_size.1)?;
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// Output channels of the four encoder blocks.
    pub fn encoder_widths(&self) -> [usize; DEPTH] {
        std::array::from_fn(|i| self.base_filters << i)
    }

    pub fn bridge_width(&self) -> usize {
        self.base_filters << DEPTH
    }

    /// Output channels of the four decoder blocks, deepest first.
    pub fn decoder_widths(&self) -> [usize; DEPTH] {
        std::array::from_fn(|i| self.base_filters << (DEPTH - 1 - i))
    }
}

fn check_spatial(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
        return Err(Error::Config(format!(
            "input size {h}x{w} is not a positive multiple of {SIZE_MULTIPLE}"
        )));
    }
    Ok(())
}

/// One of the four encoder–decoder networks with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    encoder: Vec<Block>,
    bridge: Block,
    ups: Vec<UpConvUnit>,
    decoder: Vec<Block>,
    head: ConvUnit,
}

/// Everything a backward pass needs from a training-mode forward pass.
pub struct Trace<T> {
    encoder: Vec<(BlockCache<T>, Shape, Vec<usize>)>,
    bridge: BlockCache<T>,
    up_inputs: Vec<Tensor4D<T>>,
    decoder: Vec<BlockCache<T>>,
    head_input: Tensor4D<T>,
    pub probabilities: Tensor4D<T>,
}

pub fn build_unet<T: Scalar>(base_filters: usize, input_size: (usize, usize)) -> Result<ModelGraph<T>> {
    ModelGraph::build(ModelConfig::new(Architecture::UNet, base_filters, input_size))
}

pub fn build_sd_unet<T: Scalar>(base_filters: usize, input_size: (usize, usize)) -> Result<ModelGraph<T>> {
    ModelGraph::build(ModelConfig::new(Architecture::SdUNet, base_filters, input_size))
}

pub fn build_resunet<T: Scalar>(base_filters: usize, input_size: (usize, usize)) -> Result<ModelGraph<T>> {
    ModelGraph::build(ModelConfig::new(Architecture::ResUNet, base_filters, input_size))
}

pub fn build_rd_unet<T: Scalar>(base_filters: usize, input_size: (usize, usize)) -> Result<ModelGraph<T>> {
    ModelGraph::build(ModelConfig::new(Architecture::RdUNet, base_filters, input_size))
}

impl<T: Scalar> ModelGraph<T> {
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let arch = config.architecture;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let stage = |store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize| {
            if arch.is_residual() {
                Block::Residual(ResidualUnit::build(store, rng, name, cin, cout))
            } else {
                Block::plain_stack(store, rng, name, cin, cout, &[1, 1])
            }
        };

        let mut encoder = Vec::with_capacity(DEPTH);
        let mut cin = 1;
        for (i, &w) in config.encoder_widths().iter().enumerate() {
            encoder.push(stage(&mut store, &mut rng, &format!("encoder{}", i + 1), cin, w));
            cin = w;
        }
        let bw = config.bridge_width();
        let bridge = if arch.has_dilated_bridge() {
            Block::plain_stack(&mut store, &mut rng, "bridge", cin, bw, &BRIDGE_DILATIONS)
        } else {
            stage(&mut store, &mut rng, "bridge", cin, bw)
        };

        // Residual stages end in a sum, not a ReLU.
        let up_gain = if arch.is_residual() { LINEAR_GAIN } else { 1.0 };
        let mut ups = Vec::with_capacity(DEPTH);
        let mut decoder = Vec::with_capacity(DEPTH);
        let mut cin = bw;
        for (i, &w) in config.decoder_widths().iter().enumerate() {
            ups.push(UpConvUnit::build(&mut store, &mut rng, format!("decoder{}.upconv", i + 1), cin, w, up_gain));
            decoder.push(stage(&mut store, &mut rng, &format!("decoder{}", i + 1), 2 * w, w));
            cin = w;
        }
        let head = build_head(&mut store, &mut rng, cin);
        Ok(ModelGraph {
            config,
            store,
            encoder,
            bridge,
            ups,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn encoder(&self) -> &[Block] {
        &self.encoder
    }

    pub fn bridge(&self) -> &Block {
        &self.bridge
    }

    pub fn decoder(&self) -> &[Block] {
        &self.decoder
    }

    pub fn is_calibrated(&self) -> bool {
        self.store.is_calibrated()
    }

    /// Changes the training-time dropout rate; inference never drops.
    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        let config = self.config.clone().with_dropout(rate);
        config.validate()?;
        self.config = config;
        Ok(())
    }

    fn run(&self, ctx: &mut Ctx<'_, T>, x: &Tensor4D<T>) -> Result<Trace<T>> {
        run_layout(&self.encoder, &self.bridge, &self.ups, &self.decoder, &self.head, ctx, x)
    }

    /// Training-mode forward pass: batch statistics, dropout drawn from `rng`
    /// when given, running statistics updated.
    pub fn forward_train(&mut self, x: &Tensor4D<T>, rng: Option<&mut ChaCha8Rng>) -> Result<Trace<T>> {
        let dropout_rate = self.config.dropout_rate;
        let (params, stats) = self.store.split_mut();
        let mut ctx = Ctx {
            params,
            norms: Norms::Batch {
                stats,
                update_running: true,
            },
            rng,
            dropout_rate,
        };
        run_layout(&self.encoder, &self.bridge, &self.ups, &self.decoder, &self.head, &mut ctx, x)
    }

    /// Forward pass with batch statistics that neither samples dropout nor
    /// touches the running statistics. Useful for gradient checks.
    pub fn forward_batch_stats(&self, x: &Tensor4D<T>) -> Result<Trace<T>> {
        let mut scratch: Vec<_> = self.store.norms().to_vec();
        let mut ctx = Ctx {
            params: self.store.tensors(),
            norms: Norms::Batch {
                stats: &mut scratch,
                update_running: false,
            },
            rng: None,
            dropout_rate: 0.0,
        };
        self.run(&mut ctx, x)
    }

    /// Gradients of the loss with respect to every parameter (in store
    /// order) and to the input, given the gradient with respect to the
    /// output probabilities.
    pub fn backward(&self, trace: &Trace<T>, grad_probabilities: &Tensor4D<T>) -> Result<(Vec<Tensor4D<T>>, Tensor4D<T>)> {
        let params = self.store.tensors();
        let mut grads = self.store.zeros_like();
        let g = sigmoid_backward(grad_probabilities, &trace.probabilities)?;
        let mut g = head_backward(&self.head, params, &trace.head_input, &g, &mut grads)?;
        let mut skip_grads: Vec<Option<Tensor4D<T>>> = vec![None; DEPTH];
        for i in (0..DEPTH).rev() {
            let g_cat = self.decoder[i].backward(params, &trace.decoder[i], g, &mut grads)?;
            let skip_c = self.encoder[DEPTH - 1 - i].out_channels();
            let (g_skip, g_up) = split_channels(&g_cat, skip_c)?;
            skip_grads[DEPTH - 1 - i] = Some(g_skip);
            g = self.ups[i].backward(params, &trace.up_inputs[i], &g_up, &mut grads)?;
        }
        g = self.bridge.backward(params, &trace.bridge, g, &mut grads)?;
        for j in (0..DEPTH).rev() {
            let (cache, shape, argmax) = &trace.encoder[j];
            let mut g_out = maxpool2d_backward(*shape, argmax, &g)?;
            let skip = skip_grads[j].take().expect("decoder visited every level");
            g_out.add_assign(&skip)?;
            g = self.encoder[j].backward(params, cache, g_out, &mut grads)?;
        }
        Ok((grads, g))
    }

    /// Inference: running statistics, no dropout. Deterministic.
    pub fn predict(&self, x: &Tensor4D<T>) -> Result<Tensor4D<T>> {
        if !self.is_calibrated() {
            return Err(Error::State(format!(
                "{} has uninitialised batch-norm statistics; calibrate or load a trained checkpoint",
                self.architecture()
            )));
        }
        let mut ctx = Ctx {
            params: self.store.tensors(),
            norms: Norms::Running(self.store.norms()),
            rng: None,
            dropout_rate: 0.0,
        };
        Ok(self.run(&mut ctx, x)?.probabilities)
    }

    /// Folds the batch statistics of `x` into the running statistics without
    /// changing any trainable parameter.
    pub fn calibrate(&mut self, x: &Tensor4D<T>) -> Result<()> {
        self.forward_train(x, None).map(|_| ())
    }

    /// Layer list in forward order.
    pub fn layers(&self) -> Vec<(String, LayerSpec)> {
        let rate = self.config.dropout_rate;
        let mut out = Vec::new();
        for (i, b) in self.encoder.iter().enumerate() {
            out.extend(b.specs(rate));
            out.push((format!("encoder{}.pool", i + 1), LayerSpec::max_pool(b.out_channels())));
        }
        out.extend(self.bridge.specs(rate));
        for (i, (u, b)) in self.ups.iter().zip(&self.decoder).enumerate() {
            out.push((u.name.clone(), LayerSpec::up_conv(u.out_channels)));
            out.push((format!("decoder{}.concat", i + 1), LayerSpec::concat(2 * u.out_channels)));
            out.extend(b.specs(rate));
        }
        out.push((self.head.name.clone(), self.head.spec()));
        out.push(("head.sigmoid".into(), LayerSpec::sigmoid(1)));
        out
    }

    /// Output shape of each stage for a single `h`×`w` input.
    pub fn feature_shapes(&self, h: usize, w: usize) -> Result<Vec<(String, Shape)>> {
        check_spatial(h, w)?;
        let mut out = Vec::new();
        for (i, b) in self.encoder.iter().enumerate() {
            out.push((format!("encoder{}", i + 1), Shape::new(1, b.out_channels(), h >> i, w >> i)));
        }
        out.push(("bridge".into(), Shape::new(1, self.bridge.out_channels(), h >> DEPTH, w >> DEPTH)));
        for (i, b) in self.decoder.iter().enumerate() {
            let k = DEPTH - 1 - i;
            out.push((format!("decoder{}", i + 1), Shape::new(1, b.out_channels(), h >> k, w >> k)));
        }
        out.push(("output".into(), Shape::new(1, 1, h, w)));
        Ok(out)
    }

    /// Human-readable description stored next to checkpoints.
    pub fn describe(&self) -> String {
        let c = &self.config;
        let mut s = format!(
            "architecture {}\nbase_filters {}\ninput {}x{}\ndropout {}\nparameters {}\n",
            c.architecture,
            c.base_filters,
            c.input_size.0,
            c.input_size.1,
            c.dropout_rate,
            self.parameter_count()
        );
        if let Ok(shapes) = self.feature_shapes(c.input_size.0, c.input_size.1) {
            for (name, shape) in shapes {
                s.push_str(&format!("shape {name} {shape}\n"));
            }
        }
        for (name, spec) in self.layers() {
            s.push_str(&format!("layer {name} {spec}\n"));
        }
        s
    }

    pub fn to_checkpoint(&self) -> Checkpoint<f32> {
        let c = &self.config;
        let mut ck = Checkpoint::new();
        ck.metadata = vec![
            ("architecture".into(), c.architecture.name().into()),
            ("base_filters".into(), c.base_filters.to_string()),
            ("input_height".into(), c.input_size.0.to_string()),
            ("input_width".into(), c.input_size.1.to_string()),
            ("dropout_rate".into(), c.dropout_rate.to_string()),
            ("seed".into(), c.seed.to_string()),
        ];
        ck.tensors = self.store.export().into_iter().map(|(n, t)| (n, t.cast())).collect();
        ck
    }

    /// Rebuilds the model recorded in `ck`.
    pub fn from_checkpoint(ck: &Checkpoint<f32>) -> Result<Self> {
        let field = |key: &str| -> Result<&str> {
            ck.meta(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing metadata {key}")))
        };
        let num = |key: &str| -> Result<usize> {
            field(key)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("metadata {key} is not a count")))
        };
        let architecture: Architecture = field("architecture")?
            .parse()
            .map_err(|e| Error::Checkpoint(format!("{e}")))?;
        let dropout_rate = field("dropout_rate")?
            .parse()
            .map_err(|_| Error::Checkpoint("metadata dropout_rate is not a number".into()))?;
        let seed = field("seed")?
            .parse()
            .map_err(|_| Error::Checkpoint("metadata seed is not an integer".into()))?;
        let config = ModelConfig {
            architecture,
            base_filters: num("base_filters")?,
            input_size: (num("input_height")?, num("input_width")?),
            dropout_rate,
            seed,
        };
        let mut model = Self::build(config)?;
        let tensors: Vec<_> = ck.tensors.iter().map(|(n, t)| (n.clone(), t.cast::<T>())).collect();
        model.store.import(&tensors)?;
        Ok(model)
    }

    /// Like [`ModelGraph::from_checkpoint`], failing when the stored
    /// architecture differs from `expected`.
    pub fn from_checkpoint_expecting(ck: &Checkpoint<f32>, expected: Architecture) -> Result<Self> {
        if let Some(found) = ck.meta("architecture") {
            if found.parse::<Architecture>().ok() != Some(expected) {
                return Err(Error::ArchitectureMismatch {
                    expected: expected.name().to_string(),
                    found: found.to_string(),
                });
            }
        }
        Self::from_checkpoint(ck)
    }

    /// Writes the checkpoint and a `.graph.txt` description next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.save_with(path, &[])
    }

    /// Like [`ModelGraph::save`] with extra metadata entries appended.
    pub fn save_with(&self, path: impl AsRef<Path>, extra: &[(String, String)]) -> Result<()> {
        let path = path.as_ref();
        let mut ck = self.to_checkpoint();
        ck.metadata.extend(extra.iter().cloned());
        ck.save(path)?;
        let mut desc = path.as_os_str().to_owned();
        desc.push(".graph.txt");
        std::fs::write(desc, self.describe())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        ModelGraph {
            config: self.config.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            bridge: self.bridge.clone(),
            ups: self.ups.clone(),
            decoder: self.decoder.clone(),
            head: self.head.clone(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_layout<T: Scalar>(
    encoder_blocks: &[Block],
    bridge_block: &Block,
    ups: &[UpConvUnit],
    decoder_blocks: &[Block],
    head: &ConvUnit,
    ctx: &mut Ctx<'_, T>,
    x: &Tensor4D<T>,
) -> Result<Trace<T>> {
    let s = x.shape();
    if s.c != 1 {
        return Err(Error::dim("channels", 1, s.c));
    }
    if s.n == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    check_spatial(s.h, s.w)?;
    let mut skips = Vec::with_capacity(DEPTH);
    let mut encoder = Vec::with_capacity(DEPTH);
    let mut h = x.clone();
    for block in encoder_blocks {
        let (y, cache) = block.forward(ctx, h)?;
        let (pooled, argmax) = maxpool2d(&y)?;
        encoder.push((cache, y.shape(), argmax));
        skips.push(y);
        h = pooled;
    }
    let (mut h, bridge) = bridge_block.forward(ctx, h)?;
    let mut up_inputs = Vec::with_capacity(DEPTH);
    let mut decoder = Vec::with_capacity(DEPTH);
    for (i, (up, block)) in ups.iter().zip(decoder_blocks).enumerate() {
        let u = up.forward(ctx, &h)?;
        up_inputs.push(h);
        let cat = concat_channels(&skips[DEPTH - 1 - i], &u)?;
        let (y, cache) = block.forward(ctx, cat)?;
        decoder.push(cache);
        h = y;
    }
    let logits = head_forward(head, ctx, &h)?;
    Ok(Trace {
        encoder,
        bridge,
        up_inputs,
        decoder,
        head_input: h,
        probabilities: sigmoid(&logits),
    })
}
