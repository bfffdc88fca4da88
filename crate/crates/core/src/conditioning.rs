//! Scale-adaptive conditioning: the LR feature extractor, the multi-resolution
//! conditioning pyramid, and the scaling-factor modulation that blends
//! conditioning features with denoiser features.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::error::{param_err, shape_err, Result};
use crate::nn::{Conv2d, Ctx, Linear, ParamStore, LEAKY_SLOPE};
use crate::resample::{AxisWeights, Kernel};
use crate::tensor::{Real, Tensor, Var};

/// Guard added under the square root when normalizing a scaling pair.
pub const ALPHA_DELTA: f64 = 1e-8;

/// Spatial sizes of `levels + 1` maps, each the ceil-half of the previous one.
///
/// Every map that gets halved must be at least 2 pixels along both axes.
pub fn halving_ladder(h: usize, w: usize, levels: usize) -> Result<Vec<(usize, usize)>> {
    if h == 0 || w == 0 {
        return Err(param_err(format!("empty resolution {h}x{w}")));
    }
    let mut out = vec![(h, w)];
    for i in 1..=levels {
        let (ph, pw) = out[i - 1];
        if ph < 2 || pw < 2 {
            return Err(param_err(format!(
                "{h}x{w} cannot be halved {levels} times: level {} would drop below 1x1",
                i
            )));
        }
        out.push((ph.div_ceil(2), pw.div_ceil(2)));
    }
    Ok(out)
}

/// Bilinear resize of `[B, C, H, W]` to `(h, w)`; the identity when sizes agree.
pub(crate) fn resize_var<T: Real>(ctx: &mut Ctx<'_, T>, x: Var, h: usize, w: usize) -> Result<Var> {
    let (_, _, xh, xw) = ctx.value(x).dims4()?;
    if (xh, xw) == (h, w) {
        return Ok(x);
    }
    let ry = Rc::new(AxisWeights::new(xh, h, Kernel::Bilinear)?);
    let rx = Rc::new(AxisWeights::new(xw, w, Kernel::Bilinear)?);
    ctx.graph.resample(x, ry, rx)
}

/// A shallow residual feature extractor for the LR image: a head convolution,
/// `blocks` residual blocks (conv, leaky, conv) and a tail convolution with a
/// global skip.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    head: Conv2d,
    blocks: Vec<(Conv2d, Conv2d)>,
    tail: Conv2d,
    pub channels: usize,
}

impl FeatureExtractor {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        channels: usize,
        blocks: usize,
    ) -> Result<Self> {
        let head = Conv2d::new(store, rng, &format!("{name}.head"), in_channels, channels, 3, 1)?;
        let blocks = (0..blocks)
            .map(|i| {
                Ok((
                    Conv2d::new(store, rng, &format!("{name}.block{i}.conv1"), channels, channels, 3, 1)?,
                    Conv2d::new(store, rng, &format!("{name}.block{i}.conv2"), channels, channels, 3, 1)?,
                ))
            })
            .collect::<Result<_>>()?;
        let tail = Conv2d::new(store, rng, &format!("{name}.tail"), channels, channels, 3, 1)?;
        Ok(Self { head, blocks, tail, channels })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let slope = T::from_f64c(LEAKY_SLOPE);
        let head = self.head.forward(ctx, x)?;
        let mut h = head;
        for (c1, c2) in &self.blocks {
            let r = c1.forward(ctx, h)?;
            let r = ctx.graph.leaky_relu(r, slope);
            let r = c2.forward(ctx, r)?;
            h = ctx.graph.add(h, r)?;
        }
        let t = self.tail.forward(ctx, h)?;
        ctx.graph.add(t, head)
    }
}

/// Initial conditioning feature `f^(0)`: the extractor's response to the LR
/// image, bilinearly resized to the working resolution of the noisy target.
pub fn extract_initial_features<T: Real>(
    ctx: &mut Ctx<'_, T>,
    extractor: &FeatureExtractor,
    x_lr: Var,
    target_h: usize,
    target_w: usize,
) -> Result<Var> {
    let f = extractor.forward(ctx, x_lr)?;
    resize_var(ctx, f, target_h, target_w)
}

/// Conditioning features `f^(0) .. f^(N)`, each level half the size of the previous one.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: Vec<Var>,
}

impl FeaturePyramid {
    /// Number of downsampled levels `N`.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }
}

/// Downsampling convolution chain producing the pyramid. Level `i` goes to
/// `out_channels[i - 1]` channels.
#[derive(Clone, Debug)]
pub struct PyramidNet {
    convs: Vec<Conv2d>,
}

impl PyramidNet {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: &[usize],
    ) -> Result<Self> {
        let mut cin = in_channels;
        let mut convs = Vec::with_capacity(out_channels.len());
        for (i, &cout) in out_channels.iter().enumerate() {
            convs.push(Conv2d::new(store, rng, &format!("{name}.level{}", i + 1), cin, cout, 3, 1)?);
            cin = cout;
        }
        Ok(Self { convs })
    }

    pub fn depth(&self) -> usize {
        self.convs.len()
    }
}

/// `f^(i) = leaky(conv(bilinear_down(f^(i-1))))` for `i = 1..=N`.
pub fn build_pyramid<T: Real>(ctx: &mut Ctx<'_, T>, net: &PyramidNet, f0: Var, depth: usize) -> Result<FeaturePyramid> {
    if depth == 0 {
        return Err(param_err("pyramid depth must be at least 1"));
    }
    if depth > net.depth() {
        return Err(param_err(format!("pyramid has {} levels, {depth} requested", net.depth())));
    }
    let (_, _, h, w) = ctx.value(f0).dims4()?;
    let sizes = halving_ladder(h, w, depth)?;
    let slope = T::from_f64c(LEAKY_SLOPE);
    let mut levels = vec![f0];
    for (i, conv) in net.convs.iter().take(depth).enumerate() {
        let (lh, lw) = sizes[i + 1];
        let down = resize_var(ctx, levels[i], lh, lw)?;
        let c = conv.forward(ctx, down)?;
        levels.push(ctx.graph.leaky_relu(c, slope));
    }
    Ok(FeaturePyramid { levels })
}

/// The adaptive MLP mapping the scalar scale `s` to one raw `(α1, α2)` pair
/// of per-channel vectors for every depth.
#[derive(Clone, Debug)]
pub struct AdaptiveMlp {
    fc1: Linear,
    fc2: Linear,
    widths: Vec<usize>,
}

impl AdaptiveMlp {
    /// `widths[i - 1]` is the fused channel count at depth `i`.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        hidden: usize,
        widths: &[usize],
    ) -> Result<Self> {
        let total = widths.iter().map(|w| 2 * w).sum();
        Ok(Self {
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), 1, hidden, true)?,
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), hidden, total, true)?,
            widths: widths.to_vec(),
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Raw and normalized vectors as plain numbers, per depth.
    pub fn evaluate<T: Real>(&self, params: &ParamStore<T>, s: f64) -> Result<Vec<ScalePair>> {
        let mut ctx = Ctx::inference(params);
        let raw = scale_to_alphas(&mut ctx, self, s, &self.widths)?;
        let mut out = Vec::with_capacity(raw.len());
        for &(a1, a2) in &raw.pairs {
            let v1: Vec<f64> = ctx.value(a1).data().iter().map(|v| v.to_f64c()).collect();
            let v2: Vec<f64> = ctx.value(a2).data().iter().map(|v| v.to_f64c()).collect();
            let (n1, n2) = normalize_alphas(&v1, &v2)?;
            out.push(ScalePair { raw: (v1, v2), normalized: (n1, n2) });
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalePair {
    pub raw: (Vec<f64>, Vec<f64>),
    pub normalized: (Vec<f64>, Vec<f64>),
}

/// Per-depth `(α1, α2)` vectors, depth `i` at index `i - 1`.
#[derive(Clone, Debug)]
pub struct ScaleVectors {
    pub pairs: Vec<(Var, Var)>,
}

impl ScaleVectors {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Maps `s` through the adaptive MLP and splits the output into `2N` vectors.
pub fn scale_to_alphas<T: Real>(
    ctx: &mut Ctx<'_, T>,
    mlp: &AdaptiveMlp,
    s: f64,
    widths: &[usize],
) -> Result<ScaleVectors> {
    if widths != mlp.widths.as_slice() {
        return Err(shape_err(format!("adaptive MLP built for widths {:?}, asked for {widths:?}", mlp.widths)));
    }
    let input = ctx.graph.constant(Tensor::new(&[1, 1], vec![T::from_f64c(s)])?);
    let h = mlp.fc1.forward(ctx, input)?;
    let h = ctx.graph.leaky_relu(h, T::from_f64c(LEAKY_SLOPE));
    let out = mlp.fc2.forward(ctx, h)?;
    let mut pairs = Vec::with_capacity(widths.len());
    let mut offset = 0;
    for &w in widths {
        let a1 = ctx.graph.slice(out, offset, w)?;
        let a2 = ctx.graph.slice(out, offset + w, w)?;
        let a1 = ctx.graph.reshape(a1, &[w])?;
        let a2 = ctx.graph.reshape(a2, &[w])?;
        pairs.push((a1, a2));
        offset += 2 * w;
    }
    Ok(ScaleVectors { pairs })
}

/// `ā_j = |a_j| / sqrt(a1^2 + a2^2 + δ)`, element-wise.
pub fn normalize_alphas(a1: &[f64], a2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if a1.len() != a2.len() {
        return Err(shape_err(format!("alpha lengths {} and {}", a1.len(), a2.len())));
    }
    let (n1, n2) = a1
        .iter()
        .zip(a2)
        .map(|(&x, &y)| {
            let d = (x * x + y * y + ALPHA_DELTA).sqrt();
            (x.abs() / d, y.abs() / d)
        })
        .unzip();
    Ok((n1, n2))
}

/// Differentiable form of [`normalize_alphas`].
pub fn normalize_alpha_vars<T: Real>(ctx: &mut Ctx<'_, T>, a1: Var, a2: Var) -> Result<(Var, Var)> {
    let g = &mut ctx.graph;
    let s1 = g.sqr(a1);
    let s2 = g.sqr(a2);
    let sum = g.add(s1, s2)?;
    let sum = g.add_scalar(sum, T::from_f64c(ALPHA_DELTA));
    let norm = g.sqrt(sum);
    let m1 = g.abs(a1);
    let m2 = g.abs(a2);
    Ok((g.div(m1, norm)?, g.div(m2, norm)?))
}

/// `h = ā1 ⊙ f + ā2 ⊙ concat(u_up, u_down)`, broadcast per channel.
pub fn fuse<T: Real>(ctx: &mut Ctx<'_, T>, f: Var, u_up: Var, u_down: Var, a1: Var, a2: Var) -> Result<Var> {
    let (fs, us, ds) = (ctx.value(f).dims4()?, ctx.value(u_up).dims4()?, ctx.value(u_down).dims4()?);
    if (fs.0, fs.2, fs.3) != (us.0, us.2, us.3) || (fs.0, fs.2, fs.3) != (ds.0, ds.2, ds.3) {
        return Err(shape_err(format!("fuse spatial mismatch {fs:?}, {us:?}, {ds:?}")));
    }
    if fs.1 != us.1 + ds.1 {
        return Err(shape_err(format!(
            "conditioning has {} channels, decoder features {} + {}",
            fs.1, us.1, ds.1
        )));
    }
    let cat = ctx.graph.concat(&[u_up, u_down])?;
    let a = ctx.graph.mul_channel(f, a1)?;
    let b = ctx.graph.mul_channel(cat, a2)?;
    ctx.graph.add(a, b)
}
