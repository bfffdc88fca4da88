//! Coordinate-based implicit upsampling.
//!
//! Every feature map lives on a cell-center grid over `[-1, 1]^2`. A target
//! pixel at coordinate `c` reads the feature of the source pixel whose center
//! `ĉ` is nearest, and a two-layer MLP decodes `(feature, c - ĉ)` into the
//! target feature. Because the target grid can have any size, the decoder
//! produces feature maps at arbitrary, non-integer magnifications.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::error::{param_err, shape_err, Result};
use crate::nn::{uniform, Ctx, ParamId, ParamStore, LEAKY_SLOPE};
use crate::tensor::{Real, Tensor, Var};

/// Hidden width of every implicit decoding MLP.
pub const IMPLICIT_HIDDEN: usize = 256;

/// Cell-center coordinates of an `height x width` pixel grid over `[-1, 1]^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateGrid {
    height: usize,
    width: usize,
    rows: Vec<f64>,
    cols: Vec<f64>,
}

/// Center of cell `k` on an axis of `n` cells: `-1 + (2k + 1) / n`.
pub fn cell_center(k: usize, n: usize) -> f64 {
    -1.0 + (2 * k + 1) as f64 / n as f64
}

pub fn make_grid(height: usize, width: usize) -> Result<CoordinateGrid> {
    if height == 0 || width == 0 {
        return Err(param_err(format!("grid dims must be positive, got {height}x{width}")));
    }
    Ok(CoordinateGrid {
        height,
        width,
        rows: (0..height).map(|k| cell_center(k, height)).collect(),
        cols: (0..width).map(|k| cell_center(k, width)).collect(),
    })
}

impl CoordinateGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(row, col)` coordinate of pixel `(i, j)`.
    pub fn coord(&self, i: usize, j: usize) -> [f64; 2] {
        [self.rows[i], self.cols[j]]
    }

    pub fn row_coords(&self) -> &[f64] {
        &self.rows
    }

    pub fn col_coords(&self) -> &[f64] {
        &self.cols
    }

    /// All coordinates as an `H x W x 2` buffer.
    pub fn coords(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * 2);
        for &r in &self.rows {
            for &c in &self.cols {
                out.push(r);
                out.push(c);
            }
        }
        out
    }
}

/// Nearest source cell for target cell `k` of `n_tgt`, on an axis of `n_src` cells.
///
/// Exact integer arithmetic: the target center sits at `(2k+1) n_src / (2 n_tgt)`
/// in source-cell units; a target center on a cell boundary is a tie and goes
/// to the smaller index.
fn nearest_on_axis(k: usize, n_tgt: usize, n_src: usize) -> usize {
    let q = (2 * k + 1) * n_src;
    let den = 2 * n_tgt;
    let j = q / den;
    if q.is_multiple_of(den) && j > 0 {
        j - 1
    } else {
        j.min(n_src - 1)
    }
}

/// For each target pixel (row-major): the flat index of its nearest source
/// pixel and the offset `c - ĉ` to that pixel's center.
#[derive(Clone, Debug, PartialEq)]
pub struct NearestMap {
    pub source: (usize, usize),
    pub target: (usize, usize),
    pub index: Vec<usize>,
    pub rel: Vec<[f64; 2]>,
}

impl NearestMap {
    pub fn new(src: &CoordinateGrid, tgt: &CoordinateGrid) -> Self {
        let row_idx: Vec<usize> = (0..tgt.height).map(|k| nearest_on_axis(k, tgt.height, src.height)).collect();
        let col_idx: Vec<usize> = (0..tgt.width).map(|k| nearest_on_axis(k, tgt.width, src.width)).collect();
        let mut index = Vec::with_capacity(tgt.len());
        let mut rel = Vec::with_capacity(tgt.len());
        for (i, &si) in row_idx.iter().enumerate() {
            for (j, &sj) in col_idx.iter().enumerate() {
                index.push(si * src.width + sj);
                rel.push([tgt.rows[i] - src.rows[si], tgt.cols[j] - src.cols[sj]]);
            }
        }
        Self { source: src.dims(), target: tgt.dims(), index, rel }
    }
}

/// Nearest-neighbor feature lookup of a `[C, H, W]` or `[B, C, H, W]` map onto a target grid.
///
/// Returns the looked-up features `[B, C, Ht, Wt]` and the relative offsets `[Ht, Wt, 2]`.
pub fn nearest_lookup<T: Real>(src_features: &Tensor<T>, tgt: &CoordinateGrid) -> Result<(Tensor<T>, Tensor<T>)> {
    let src = match src_features.shape().len() {
        3 => src_features.clone().reshape(&[1, src_features.shape()[0], src_features.shape()[1], src_features.shape()[2]])?,
        _ => src_features.clone(),
    };
    let (b, c, h, w) = src.dims4()?;
    if b * c * h * w == 0 {
        return Err(param_err("empty source feature map"));
    }
    let map = NearestMap::new(&make_grid(h, w)?, tgt);
    let p = tgt.len();
    let mut out = Vec::with_capacity(b * c * p);
    for plane in src.data().chunks(h * w) {
        out.extend(map.index.iter().map(|&i| plane[i]));
    }
    let rel = map.rel.iter().flat_map(|r| r.iter().map(|&v| T::from_f64c(v))).collect();
    Ok((
        Tensor::new(&[b, c, tgt.height, tgt.width], out)?,
        Tensor::new(&[tgt.height, tgt.width, 2], rel)?,
    ))
}

/// The decoding MLP: `Linear(C + 2 -> hidden)`, leaky activation, `Linear(hidden -> out)`.
///
/// The first layer's weight is stored as one `[hidden, C + 2]` matrix whose
/// last two columns act on the relative coordinate.
#[derive(Clone, Debug)]
pub struct ImplicitLayer {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub hidden: usize,
}

impl ImplicitLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        Self::with_hidden(store, rng, name, in_channels, out_channels, IMPLICIT_HIDDEN)
    }

    pub fn with_hidden<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        hidden: usize,
    ) -> Result<Self> {
        let b = 1.0 / ((in_channels + 2) as f64).sqrt();
        let w1 = store.add(format!("{name}.fc1.weight"), uniform(rng, &[hidden, in_channels + 2], b))?;
        let b1 = store.add(format!("{name}.fc1.bias"), uniform(rng, &[hidden], b))?;
        let b = 1.0 / (hidden as f64).sqrt();
        let w2 = store.add(format!("{name}.fc2.weight"), uniform(rng, &[out_channels, hidden], b))?;
        let b2 = store.add(format!("{name}.fc2.bias"), uniform(rng, &[out_channels], b))?;
        Ok(Self { w1, b1, w2, b2, in_channels, out_channels, hidden })
    }
}

/// Decodes `h_next: [B, C, Hs, Ws]` onto `tgt`, giving `[B, out, Ht, Wt]`.
///
/// The first layer is split as `W_h · ĥ + W_r · (c - ĉ) + b`; `W_h · h` is
/// evaluated once per source pixel and then gathered, which equals applying
/// the MLP to the concatenated input at every target pixel.
pub fn implicit_upsample<T: Real>(
    ctx: &mut Ctx<'_, T>,
    h_next: Var,
    tgt: &CoordinateGrid,
    layer: &ImplicitLayer,
) -> Result<Var> {
    let (b, c, hs, ws) = ctx.value(h_next).dims4()?;
    if c != layer.in_channels {
        return Err(shape_err(format!(
            "implicit layer expects {} channels, got {c}",
            layer.in_channels
        )));
    }
    let map = NearestMap::new(&make_grid(hs, ws)?, tgt);
    let ps = hs * ws;
    let pt = tgt.len();
    let index: Vec<usize> = (0..b).flat_map(|bi| map.index.iter().map(move |&i| bi * ps + i)).collect();
    let rel = Tensor::from_fn(&[b * pt, 2], |k| T::from_f64c(map.rel[(k / 2) % pt][k % 2]));

    let w1 = ctx.p(layer.w1);
    let b1 = ctx.p(layer.b1);
    let w2 = ctx.p(layer.w2);
    let b2 = ctx.p(layer.b2);
    let g = &mut ctx.graph;
    let w_feat = g.slice(w1, 0, c)?;
    let w_rel = g.slice(w1, c, 2)?;
    let rows = g.to_rows(h_next)?;
    let proj = g.linear(rows, w_feat, None)?;
    let gathered = g.gather_rows(proj, Rc::new(index))?;
    let rel = g.constant(rel);
    let rel_proj = g.linear(rel, w_rel, Some(b1))?;
    let pre = g.add(gathered, rel_proj)?;
    let act = g.leaky_relu(pre, T::from_f64c(LEAKY_SLOPE));
    let out = g.linear(act, w2, Some(b2))?;
    g.from_rows(out, b, tgt.height(), tgt.width())
}
