//! Deterministic synthetic training images: flat-colored shapes with hard edges.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::denoiser::IMAGE_CHANNELS;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disc { cx: f64, cy: f64, r: f64 },
    Stripe { nx: f64, ny: f64, c: f64, half: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) < r * r,
            Shape::Stripe { nx, ny, c, half } => (x * nx + y * ny - c).abs() < half,
        }
    }
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [0, 1, 2].map(|_| rng.random_range(-0.9..0.9))
}

/// A `[3, size, size]` image in `[-1, 1]`, fully determined by `seed`.
pub fn shapes_image<T: Real>(size: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = color(&mut rng);
    let count = rng.random_range(3..=6);
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let shape = match rng.random_range(0..3) {
            0 => {
                let (x0, y0) = (rng.random_range(0.0..0.7), rng.random_range(0.0..0.7));
                Shape::Rect { x0, y0, x1: x0 + rng.random_range(0.15..0.5), y1: y0 + rng.random_range(0.15..0.5) }
            }
            1 => Shape::Disc { cx: rng.random_range(0.15..0.85), cy: rng.random_range(0.15..0.85), r: rng.random_range(0.1..0.3) },
            _ => {
                let a: f64 = rng.random_range(0.0..std::f64::consts::PI);
                Shape::Stripe { nx: a.cos(), ny: a.sin(), c: rng.random_range(-0.2..1.2), half: rng.random_range(0.04..0.12) }
            }
        };
        layers.push((shape, color(&mut rng)));
    }
    let mut out = Tensor::zeros(&[IMAGE_CHANNELS, size, size]);
    let plane = size * size;
    let data = out.data_mut();
    for i in 0..size {
        for j in 0..size {
            let (x, y) = ((j as f64 + 0.5) / size as f64, (i as f64 + 0.5) / size as f64);
            let c = layers.iter().rev().find(|(s, _)| s.contains(x, y)).map_or(background, |(_, c)| *c);
            for (ch, v) in c.iter().enumerate() {
                data[ch * plane + i * size + j] = T::from_f64c(*v);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = shapes_image::<f32>(32, 5);
        assert_eq!(a, shapes_image::<f32>(32, 5));
        assert_ne!(a, shapes_image::<f32>(32, 6));
        assert!(a.data().iter().all(|v| v.abs() <= 0.9));
        assert_eq!(a.shape(), &[3, 32, 32]);
    }
}
