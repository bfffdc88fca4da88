//! The noise-prediction U-Net.
//!
//! The encoder sees the noisy target concatenated with the initial LR
//! feature. At every depth of the decoder the encoder skip and the upsampled
//! decoder feature are blended with the conditioning pyramid under the
//! scale-dependent weights, refined by a residual block, and decoded onto the
//! next (finer) coordinate grid by an implicit layer. All grids derive from
//! the output size by ceil-halving, so any magnification yields consistent
//! shapes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{
    build_pyramid, extract_initial_features, fuse, halving_ladder, normalize_alpha_vars, scale_to_alphas,
    AdaptiveMlp, FeatureExtractor, FeaturePyramid, PyramidNet, ScaleVectors,
};
use crate::error::{param_err, shape_err, Error, Result};
use crate::implicit::{implicit_upsample, make_grid, CoordinateGrid, ImplicitLayer};
use crate::nn::{Conv2d, Ctx, Linear, ParamStore};
use crate::tensor::{Real, Tensor, Var};

/// Image channels at the model boundary.
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    /// Number of U-Net depths `N`.
    pub depth: usize,
    pub base_channels: usize,
    /// Width multiplier of each depth `1..=N`, relative to `base_channels`.
    pub channel_multipliers: Vec<usize>,
    pub dropout: f64,
    /// Largest magnification `M` seen in training.
    pub max_scale: f64,
    /// Width of the LR feature extractor and hence of `f^(0)`.
    pub feature_channels: usize,
    pub feature_blocks: usize,
    pub implicit_hidden: usize,
    pub adaptive_hidden: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 32,
            channel_multipliers: vec![1, 2, 4],
            dropout: 0.2,
            max_scale: 4.0,
            feature_channels: 32,
            feature_blocks: 4,
            implicit_hidden: crate::implicit::IMPLICIT_HIDDEN,
            adaptive_hidden: 256,
        }
    }
}

impl DenoiserConfig {
    /// The small configuration used for gradient audits: 2 depths, 8 channels.
    pub fn audit() -> Self {
        Self {
            depth: 2,
            base_channels: 8,
            channel_multipliers: vec![1, 2],
            feature_channels: 8,
            feature_blocks: 1,
            implicit_hidden: 16,
            adaptive_hidden: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.depth == 0 {
            return bad("model.depth must be at least 1".into());
        }
        if self.channel_multipliers.len() != self.depth {
            return bad(format!(
                "model.channel_multipliers has {} entries for depth {}",
                self.channel_multipliers.len(),
                self.depth
            ));
        }
        if self.channel_multipliers.contains(&0) {
            return bad("model.channel_multipliers must all be >= 1".into());
        }
        if self.base_channels == 0 || self.feature_channels == 0 || self.implicit_hidden == 0 || self.adaptive_hidden == 0 {
            return bad("model widths must be positive".into());
        }
        if !self.base_channels.is_multiple_of(2) {
            return bad("model.base_channels must be even (sinusoidal embedding)".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("model.dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.max_scale > 1.0 && self.max_scale.is_finite()) {
            return bad(format!("model.max_scale {} must be > 1", self.max_scale));
        }
        Ok(())
    }

    /// Channel width at depth `i` (0 is the working resolution).
    pub fn width(&self, i: usize) -> usize {
        if i == 0 {
            self.base_channels
        } else {
            self.base_channels * self.channel_multipliers[i - 1]
        }
    }

    /// Fused (conditioning) width at depths `1..=N`.
    pub fn fusion_widths(&self) -> Vec<usize> {
        (1..=self.depth).map(|i| 2 * self.width(i)).collect()
    }

    pub fn embed_dim(&self) -> usize {
        4 * self.base_channels
    }
}

/// A magnification factor validated at construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleFactor(f64);

impl ScaleFactor {
    /// A scale inside the training range `(1, max]`.
    pub fn new(s: f64, max: f64) -> Result<Self> {
        if !(s > 1.0 && s <= max) {
            return Err(param_err(format!("scale {s} outside (1, {max}]")));
        }
        Ok(Self(s))
    }

    /// Any finite scale above 1, including ones beyond the training range.
    pub fn extrapolated(s: f64) -> Result<Self> {
        if !(s > 1.0 && s.is_finite()) {
            return Err(param_err(format!("scale {s} must be a finite value > 1")));
        }
        Ok(Self(s))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `(round(s h), round(s w))`, rounding halves away from zero.
    pub fn output_size(self, h: usize, w: usize) -> (usize, usize) {
        output_size(h, w, self.0)
    }
}

pub fn output_size(h: usize, w: usize, s: f64) -> (usize, usize) {
    ((s * h as f64).round() as usize, (s * w as f64).round() as usize)
}

/// Sinusoidal features of `1000 * gamma` over `dim` channels (half sines, half cosines).
pub fn sinusoidal_embedding(gamma: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let x = 1000.0 * gamma;
    let freq = |k: usize| (-(10000f64.ln()) * k as f64 / half as f64).exp();
    (0..half).map(|k| (x * freq(k)).sin()).chain((0..half).map(|k| (x * freq(k)).cos())).collect()
}

/// Maps `gamma_t` to the vector that every residual block receives.
#[derive(Clone, Debug)]
pub struct GammaEmbedding {
    fc1: Linear,
    fc2: Linear,
    dim: usize,
}

impl GammaEmbedding {
    fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, dim: usize, out: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, rng, "gamma_mlp.fc1", dim, out, true)?,
            fc2: Linear::new(store, rng, "gamma_mlp.fc2", out, out, true)?,
            dim,
        })
    }

    /// `silu(MLP(sinusoid(gamma)))` per batch item, `[B, E]`.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, gammas: &[f64]) -> Result<Var> {
        let data = gammas.iter().flat_map(|&g| sinusoidal_embedding(g, self.dim)).map(T::from_f64c).collect();
        let x = ctx.graph.constant(Tensor::new(&[gammas.len(), self.dim], data)?);
        let h = self.fc1.forward(ctx, x)?;
        let h = ctx.graph.silu(h);
        let h = self.fc2.forward(ctx, h)?;
        Ok(ctx.graph.silu(h))
    }
}

/// Pre-activation residual block with an additive `gamma` embedding.
#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv2d,
    emb: Linear,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        emb_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(store, rng, &format!("{name}.conv1"), cin, cout, 3, 1)?,
            emb: Linear::new(store, rng, &format!("{name}.emb"), emb_dim, cout, true)?,
            conv2: Conv2d::new(store, rng, &format!("{name}.conv2"), cout, cout, 3, 1)?,
            skip: if cin != cout { Some(Conv2d::new(store, rng, &format!("{name}.skip"), cin, cout, 1, 1)?) } else { None },
        })
    }

    fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var, emb: Var) -> Result<Var> {
        let h = ctx.graph.silu(x);
        let h = self.conv1.forward(ctx, h)?;
        let e = self.emb.forward(ctx, emb)?;
        let h = ctx.graph.add_channel(h, e)?;
        let h = ctx.graph.silu(h);
        let h = ctx.dropout(h)?;
        let h = self.conv2.forward(ctx, h)?;
        let skip = match &self.skip {
            Some(c) => c.forward(ctx, x)?,
            None => x,
        };
        ctx.graph.add(h, skip)
    }
}

/// Encoder outputs: the full-resolution stem, one skip per depth, and the bottom feature.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub stem: Var,
    pub skips: Vec<Var>,
    pub bottom: Var,
}

#[derive(Clone, Debug)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    extractor: FeatureExtractor,
    pyramid: PyramidNet,
    adaptive: AdaptiveMlp,
    gamma: GammaEmbedding,
    in_conv: Conv2d,
    down: Vec<Conv2d>,
    enc: Vec<ResBlock>,
    bottom: ResBlock,
    dec: Vec<ResBlock>,
    implicit: Vec<ImplicitLayer>,
    head1: Conv2d,
    head2: Conv2d,
}

/// Parameter-name prefixes of the network's functional groups.
pub const PARAM_GROUPS: [&str; 10] = [
    "extractor.",
    "pyramid.",
    "adaptive.",
    "gamma_mlp.",
    "encoder.",
    "bottom.",
    "decoder.",
    "implicit.",
    "head.",
    "encoder.in_conv.",
];

impl Denoiser {
    /// Builds the network, registering freshly initialized parameters in `store`.
    pub fn new<T: Real>(cfg: &DenoiserConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let n = cfg.depth;
        let e = cfg.embed_dim();
        let fw = cfg.fusion_widths();
        let extractor = FeatureExtractor::new(
            store,
            rng,
            "extractor",
            IMAGE_CHANNELS,
            cfg.feature_channels,
            cfg.feature_blocks,
        )?;
        let pyramid = PyramidNet::new(store, rng, "pyramid", cfg.feature_channels, &fw)?;
        let adaptive = AdaptiveMlp::new(store, rng, "adaptive", cfg.adaptive_hidden, &fw)?;
        let gamma = GammaEmbedding::new(store, rng, cfg.base_channels, e)?;
        let in_conv = Conv2d::new(
            store,
            rng,
            "encoder.in_conv",
            cfg.feature_channels + IMAGE_CHANNELS,
            cfg.width(0),
            3,
            1,
        )?;
        let mut down = Vec::with_capacity(n);
        let mut enc = Vec::with_capacity(n);
        for i in 1..=n {
            down.push(Conv2d::new(store, rng, &format!("encoder.down{i}"), cfg.width(i - 1), cfg.width(i), 3, 2)?);
            enc.push(ResBlock::new(store, rng, &format!("encoder.res{i}"), cfg.width(i), cfg.width(i), e)?);
        }
        let bottom = ResBlock::new(store, rng, "bottom", cfg.width(n), cfg.width(n), e)?;
        let mut dec = Vec::with_capacity(n);
        let mut implicit = Vec::with_capacity(n);
        for i in 1..=n {
            dec.push(ResBlock::new(store, rng, &format!("decoder.res{i}"), 2 * cfg.width(i), cfg.width(i), e)?);
            implicit.push(ImplicitLayer::with_hidden(
                store,
                rng,
                &format!("implicit.{}", i - 1),
                cfg.width(i),
                cfg.width(i - 1),
                cfg.implicit_hidden,
            )?);
        }
        let head1 = Conv2d::new(store, rng, "head.conv1", 2 * cfg.width(0), cfg.width(0), 3, 1)?;
        let head2 = Conv2d::new(store, rng, "head.conv2", cfg.width(0), IMAGE_CHANNELS, 3, 1)?;
        Ok(Self { cfg: cfg.clone(), extractor, pyramid, adaptive, gamma, in_conv, down, enc, bottom, dec, implicit, head1, head2 })
    }

    /// Builds the network and its parameter store together.
    pub fn init<T: Real>(cfg: &DenoiserConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let model = Self::new(cfg, &mut store, seed)?;
        Ok((model, store))
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn adaptive_mlp(&self) -> &AdaptiveMlp {
        &self.adaptive
    }

    /// Coordinate grids for every depth, finest first.
    pub fn grids(&self, h: usize, w: usize) -> Result<Vec<CoordinateGrid>> {
        let sizes = halving_ladder(h, w, self.cfg.depth).map_err(|e| match e {
            Error::Param(m) => Error::Config(m),
            other => other,
        })?;
        sizes.into_iter().map(|(h, w)| make_grid(h, w)).collect()
    }

    pub fn embed_gamma<T: Real>(&self, ctx: &mut Ctx<'_, T>, gammas: &[f64]) -> Result<Var> {
        self.gamma.forward(ctx, gammas)
    }

    /// Encoder pass over `concat(f^(0), y_t)`.
    pub fn encode<T: Real>(&self, ctx: &mut Ctx<'_, T>, input: Var, emb: Var) -> Result<Encoded> {
        let (_, c, h, w) = ctx.value(input).dims4()?;
        if c != self.cfg.feature_channels + IMAGE_CHANNELS {
            return Err(shape_err(format!(
                "encoder expects {} input channels, got {c}",
                self.cfg.feature_channels + IMAGE_CHANNELS
            )));
        }
        self.grids(h, w)?;
        let stem = self.in_conv.forward(ctx, input)?;
        let mut x = stem;
        let mut skips = Vec::with_capacity(self.cfg.depth);
        for (down, res) in self.down.iter().zip(&self.enc) {
            x = down.forward(ctx, x)?;
            x = res.forward(ctx, x, emb)?;
            skips.push(x);
        }
        let bottom = self.bottom.forward(ctx, x, emb)?;
        Ok(Encoded { stem, skips, bottom })
    }

    /// Decoder pass: fuse, refine and implicitly upsample at every depth, then map to image channels.
    pub fn decode<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        enc: &Encoded,
        pyramid: &FeaturePyramid,
        alphas: &ScaleVectors,
        grids: &[CoordinateGrid],
        emb: Var,
    ) -> Result<Var> {
        let n = self.cfg.depth;
        if pyramid.depth() != n || alphas.len() != n || grids.len() != n + 1 || enc.skips.len() != n {
            return Err(shape_err(format!(
                "decoder depth {n}: pyramid {}, alphas {}, grids {}, skips {}",
                pyramid.depth(),
                alphas.len(),
                grids.len() - 1,
                enc.skips.len()
            )));
        }
        let mut up = enc.bottom;
        for i in (1..=n).rev() {
            let (a1, a2) = alphas.pairs[i - 1];
            let (a1, a2) = normalize_alpha_vars(ctx, a1, a2)?;
            let h = fuse(ctx, pyramid.levels[i], up, enc.skips[i - 1], a1, a2)?;
            let h = self.dec[i - 1].forward(ctx, h, emb)?;
            up = implicit_upsample(ctx, h, &grids[i - 1], &self.implicit[i - 1])?;
        }
        let cat = ctx.graph.concat(&[up, enc.stem])?;
        let x = ctx.graph.silu(cat);
        let x = self.head1.forward(ctx, x)?;
        let x = ctx.graph.silu(x);
        self.head2.forward(ctx, x)
    }

    /// Predicts the noise in `y_t` given the LR image, the per-item `gamma_t` and the scale.
    pub fn forward<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        x_lr: Var,
        y_t: Var,
        gammas: &[f64],
        s: ScaleFactor,
    ) -> Result<Var> {
        let (b, c, h, w) = ctx.value(x_lr).dims4()?;
        let (yb, yc, yh, yw) = ctx.value(y_t).dims4()?;
        if c != IMAGE_CHANNELS || yc != IMAGE_CHANNELS || yb != b {
            return Err(shape_err(format!("x_lr {:?} with y_t {:?}", ctx.value(x_lr).shape(), ctx.value(y_t).shape())));
        }
        if gammas.len() != b {
            return Err(shape_err(format!("{} gamma values for batch of {b}", gammas.len())));
        }
        let (oh, ow) = s.output_size(h, w);
        if (yh, yw) != (oh, ow) {
            return Err(shape_err(format!(
                "y_t is {yh}x{yw}, scale {} on {h}x{w} needs {oh}x{ow}",
                s.value()
            )));
        }
        let grids = self.grids(oh, ow)?;
        let f0 = extract_initial_features(ctx, &self.extractor, x_lr, oh, ow)?;
        let input = ctx.graph.concat(&[f0, y_t])?;
        let emb = self.embed_gamma(ctx, gammas)?;
        let enc = self.encode(ctx, input, emb)?;
        let pyramid = build_pyramid(ctx, &self.pyramid, f0, self.cfg.depth)?;
        let alphas = scale_to_alphas(ctx, &self.adaptive, s.value(), &self.cfg.fusion_widths())?;
        self.decode(ctx, &enc, &pyramid, &alphas, &grids, emb)
    }

    /// Inference-mode noise prediction on plain tensors.
    pub fn predict<T: Real>(
        &self,
        params: &ParamStore<T>,
        x_lr: &Tensor<T>,
        y_t: &Tensor<T>,
        gammas: &[f64],
        s: ScaleFactor,
    ) -> Result<Tensor<T>> {
        let mut ctx = Ctx::inference(params);
        let x = ctx.graph.constant(x_lr.clone());
        let y = ctx.graph.constant(y_t.clone());
        let out = self.forward(&mut ctx, x, y, gammas, s)?;
        Ok(ctx.graph.value(out).clone())
    }
}
