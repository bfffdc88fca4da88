//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Images cross the boundary as RGBA bytes ready for `ImageData`; curves as
//! flat `Float64Array`s.

pub mod ops;

use wasm_bindgen::prelude::*;

fn js<T>(r: diffsr::Result<T>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = gammaCurve)]
pub fn gamma_curve(steps: usize, beta_start: f64, beta_end: f64) -> Result<Vec<f64>, JsError> {
    js(ops::gamma_curve(steps, beta_start, beta_end))
}

#[wasm_bindgen(js_name = noisedImage)]
pub fn noised_image(steps: usize, beta_start: f64, beta_end: f64, t: usize, size: usize, seed: u32) -> Result<Vec<u8>, JsError> {
    js(ops::noised_image(steps, beta_start, beta_end, t, size, seed.into()))
}

#[wasm_bindgen(js_name = targetSide)]
pub fn target_side(lr_size: usize, scale: f64) -> usize {
    ops::target_side(lr_size, scale)
}

#[wasm_bindgen]
pub fn magnify(lr_size: usize, scale: f64, seed: u32, bicubic: bool) -> Result<Vec<u8>, JsError> {
    js(ops::magnify(lr_size, scale, seed.into(), bicubic))
}

#[wasm_bindgen(js_name = gridOffsets)]
pub fn grid_offsets(src_h: usize, src_w: usize, tgt_h: usize, tgt_w: usize) -> Result<Vec<f64>, JsError> {
    js(ops::grid_offsets(src_h, src_w, tgt_h, tgt_w))
}

#[wasm_bindgen(js_name = normalizePair)]
pub fn normalize_pair(a1: f64, a2: f64) -> Result<Vec<f64>, JsError> {
    js(ops::normalize_pair(a1, a2))
}

#[wasm_bindgen(js_name = alphaSweep)]
pub fn alpha_sweep(seed: u32, hidden: usize, channels: usize, max_scale: f64, samples: usize) -> Result<Vec<f64>, JsError> {
    js(ops::alpha_sweep(seed.into(), hidden, channels, max_scale, samples))
}
