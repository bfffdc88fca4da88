//! Property tests for the invariants the library promises.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use diffsr::conditioning::{build_pyramid, fuse, halving_ladder, normalize_alphas, PyramidNet};
use diffsr::denoiser::{output_size, Denoiser, DenoiserConfig, ScaleFactor};
use diffsr::implicit::{implicit_upsample, make_grid, nearest_lookup, ImplicitLayer};
use diffsr::io::image::{from_rgb_bytes, to_rgb_bytes};
use diffsr::io::Checkpoint;
use diffsr::metrics::{psnr, ssim};
use diffsr::nn::{Ctx, ParamStore};
use diffsr::sampler::{clamp_unit, p_step, VarianceMode};
use diffsr::schedule::{q_sample, NoiseSchedule, ScheduleKind};
use diffsr::tensor::Tensor;
use diffsr::trainer::{degrade, loss, sample_scale, Phase, TrainConfig, Trainer};

fn tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn schedule() -> impl Strategy<Value = NoiseSchedule> {
    (1usize..300, 1e-6f64..0.5, 0.0f64..1.0)
        .prop_map(|(t, lo, frac)| NoiseSchedule::new(t, lo, lo + frac * (0.99 - lo), ScheduleKind::Linear).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gamma_is_running_product_and_non_increasing(s in schedule()) {
        let mut prod = 1.0f64;
        for (i, (&b, &g)) in s.betas().iter().zip(s.gammas()).enumerate() {
            prop_assert!(b > 0.0 && b < 1.0);
            prod *= 1.0 - b;
            prop_assert!((g - prod).abs() <= 1e-12 * prod);
            if i > 0 {
                prop_assert!(g <= s.gammas()[i - 1]);
            }
        }
    }

    #[test]
    fn q_sample_is_linear(s in schedule(), seed in any::<u64>(), a in -3.0f64..3.0, pick in 0.0f64..1.0) {
        let t = 1 + ((s.steps() - 1) as f64 * pick) as usize;
        let (y, e) = (tensor(&[2, 3, 3], seed), tensor(&[2, 3, 3], seed ^ 1));
        let (y2, e2) = (tensor(&[2, 3, 3], seed ^ 2), tensor(&[2, 3, 3], seed ^ 3));
        let base = q_sample(&y, t, &e, &s).unwrap();
        let other = q_sample(&y2, t, &e2, &s).unwrap();
        let ya = Tensor::from_fn(&[2, 3, 3], |i| y.data()[i] + a * y2.data()[i]);
        let ea = Tensor::from_fn(&[2, 3, 3], |i| e.data()[i] + a * e2.data()[i]);
        let comb = q_sample(&ya, t, &ea, &s).unwrap();
        for i in 0..18 {
            prop_assert!((comb.data()[i] - base.data()[i] - a * other.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn first_reverse_step_inverts_forward(s in schedule(), seed in any::<u64>()) {
        let (y0, eps) = (tensor(&[3, 4, 4], seed), tensor(&[3, 4, 4], seed ^ 7));
        let y1 = q_sample(&y0, 1, &eps, &s).unwrap();
        let back = p_step(&y1, &eps, 1, &s, &Tensor::zeros(&[3, 4, 4]), VarianceMode::Beta).unwrap();
        for (a, b) in back.data().iter().zip(y0.data()) {
            prop_assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn grid_is_cell_centred_and_increasing(h in 1usize..200, w in 1usize..200) {
        let g = make_grid(h, w).unwrap();
        for (n, c) in [(h, g.row_coords()), (w, g.col_coords())] {
            prop_assert_eq!(c.len(), n);
            for (k, &v) in c.iter().enumerate() {
                prop_assert!((v - (-1.0 + (2 * k + 1) as f64 / n as f64)).abs() < 1e-15);
                prop_assert!(k == 0 || v > c[k - 1]);
            }
        }
    }

    #[test]
    fn lookup_on_identical_grid_has_zero_offsets(h in 1usize..40, w in 1usize..40) {
        let feats = tensor(&[2, h, w], (h * 41 + w) as u64);
        let (out, rel) = nearest_lookup(&feats, &make_grid(h, w).unwrap()).unwrap();
        prop_assert_eq!(out.data(), feats.data());
        prop_assert!(rel.data().iter().all(|v| v.abs() <= 1e-6));
    }

    #[test]
    fn implicit_output_matches_any_target(sh in 1usize..9, sw in 1usize..9, th in 1usize..30, tw in 1usize..30) {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = ImplicitLayer::with_hidden(&mut store, &mut rng, "imp", 2, 3, 8).unwrap();
        let mut ctx = Ctx::inference(&store);
        let x = ctx.graph.constant(tensor(&[1, 2, sh, sw], 1));
        let tgt = make_grid(th, tw).unwrap();
        let a = implicit_upsample(&mut ctx, x, &tgt, &l).unwrap();
        let b = implicit_upsample(&mut ctx, x, &tgt, &l).unwrap();
        prop_assert_eq!(ctx.value(a).shape(), &[1, 3, th, tw]);
        prop_assert_eq!(ctx.value(a), ctx.value(b));
    }

    #[test]
    fn alpha_normalization_bounds(a in -1e3f64..1e3, b in -1e3f64..1e3) {
        let (x, y) = normalize_alphas(&[a], &[b]).unwrap();
        let n = x[0] * x[0] + y[0] * y[0];
        prop_assert!((0.0..=1.0).contains(&n));
        if (a * a + b * b).sqrt() >= 1e-2 {
            prop_assert!(n >= 1.0 - 1e-4);
        }
        for (p, q) in [(-a, b), (a, -b), (-a, -b)] {
            let (x2, y2) = normalize_alphas(&[p], &[q]).unwrap();
            prop_assert_eq!((x2[0], y2[0]), (x[0], y[0]));
        }
    }

    #[test]
    fn fuse_is_linear_in_each_feature(seed in any::<u64>(), k in -2.0f64..2.0) {
        let store = ParamStore::<f64>::new();
        let mut ctx = Ctx::inference(&store);
        let f = tensor(&[1, 4, 3, 2], seed);
        let f2 = tensor(&[1, 4, 3, 2], seed ^ 1);
        let up = tensor(&[1, 2, 3, 2], seed ^ 2);
        let down = tensor(&[1, 2, 3, 2], seed ^ 3);
        let (a1, a2) = (tensor(&[4], seed ^ 4), tensor(&[4], seed ^ 5));
        let mut run = |f: &Tensor<f64>, up: &Tensor<f64>| {
            let vars = [f.clone(), up.clone(), down.clone(), a1.clone(), a2.clone()].map(|t| ctx.graph.constant(t));
            let h = fuse(&mut ctx, vars[0], vars[1], vars[2], vars[3], vars[4]).unwrap();
            ctx.value(h).clone()
        };
        let base = run(&f, &up);
        let comb = run(&Tensor::from_fn(&[1, 4, 3, 2], |i| f.data()[i] + k * f2.data()[i]), &up);
        let only = run(&f2, &Tensor::zeros(&[1, 2, 3, 2]));
        let zero = run(&Tensor::zeros(&[1, 4, 3, 2]), &Tensor::zeros(&[1, 2, 3, 2]));
        for i in 0..base.len() {
            let expect = base.data()[i] + k * (only.data()[i] - zero.data()[i]);
            prop_assert!((comb.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn ladder_is_ceil_halving(h in 1usize..=128, w in 1usize..=128) {
        let levels = (h.min(w) as f64).log2().floor() as usize;
        let sizes = halving_ladder(h, w, levels).unwrap();
        prop_assert_eq!(sizes.len(), levels + 1);
        for i in 1..sizes.len() {
            prop_assert_eq!(sizes[i], (sizes[i - 1].0.div_ceil(2), sizes[i - 1].1.div_ceil(2)));
        }
    }

    #[test]
    fn loss_is_non_negative_and_permutation_invariant(seed in any::<u64>(), shift in 0usize..24) {
        let (a, b) = (tensor(&[24], seed), tensor(&[24], seed ^ 9));
        let l = loss(&a, &b).unwrap();
        prop_assert!(l >= 0.0);
        let rot = |t: &Tensor<f64>| Tensor::from_fn(&[24], |i| t.data()[(i + shift) % 24]);
        prop_assert!((loss(&rot(&a), &rot(&b)).unwrap() - l).abs() < 1e-12);
    }

    #[test]
    fn continuous_scales_stay_in_range(m in 1.01f64..16.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let s = sample_scale(Phase::Continuous, m, &mut rng);
            prop_assert!(s > 1.0 && s <= m);
        }
        prop_assert_eq!(sample_scale(Phase::Fixed, m, &mut rng), m);
    }

    #[test]
    fn degraded_target_follows_rounding_rule(lr in 2usize..12, m in 1.5f64..4.0, frac in 0.01f64..1.0) {
        let s = 1.0 + frac * (m - 1.0);
        let side = diffsr::trainer::hr_size(lr, m);
        let hr = tensor(&[3, side, side], 3);
        let (x, y0) = degrade(&hr, s, (lr, lr), m).unwrap();
        prop_assert_eq!(x.shape(), &[3, lr, lr]);
        let (oh, ow) = output_size(lr, lr, s);
        prop_assert_eq!(oh, (s * lr as f64).round() as usize);
        prop_assert_eq!(y0.shape(), &[3, oh, ow]);
    }

    #[test]
    fn metrics_are_symmetric(seed in any::<u64>()) {
        let (a, b) = (tensor(&[3, 12, 12], seed), tensor(&[3, 12, 12], seed ^ 5));
        prop_assert_eq!(psnr(&a, &b, 2.0).unwrap(), psnr(&b, &a, 2.0).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn clamp_bounds(seed in any::<u64>()) {
        let x = Tensor::from_fn(&[50], |i| tensor(&[50], seed).data()[i] * 5.0);
        prop_assert!(clamp_unit(&x).data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn pixel_round_trip_is_exact(bytes in proptest::collection::vec(any::<u8>(), 3 * 5 * 4)) {
        let img = from_rgb_bytes(&bytes, 5, 4).unwrap();
        prop_assert_eq!(to_rgb_bytes(&img).unwrap().0, bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn denoiser_keeps_the_target_shape(h in 8usize..14, w in 8usize..14, s in 1.05f64..6.0) {
        let cfg = DenoiserConfig {
            depth: 2, base_channels: 4, channel_multipliers: vec![1, 2], feature_channels: 4,
            feature_blocks: 1, implicit_hidden: 8, adaptive_hidden: 8, ..DenoiserConfig::default()
        };
        let (model, store) = Denoiser::init::<f64>(&cfg, 1).unwrap();
        let x = tensor(&[1, 3, h, w], 2);
        let sf = ScaleFactor::extrapolated(s).unwrap();
        let (oh, ow) = sf.output_size(h, w);
        let y = tensor(&[1, 3, oh, ow], 3);
        let a = model.predict(&store, &x, &y, &[0.3], sf).unwrap();
        prop_assert_eq!(a.shape(), y.shape());
        prop_assert_eq!(a, model.predict(&store, &x, &y, &[0.3], sf).unwrap());
    }

    #[test]
    fn pyramid_follows_ceil_halving(h in 4usize..=40, w in 4usize..=40) {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = PyramidNet::new(&mut store, &mut rng, "p", 2, &[2, 2]).unwrap();
        let mut ctx = Ctx::inference(&store);
        let f0 = ctx.graph.constant(Tensor::zeros(&[1, 2, h, w]));
        let p = build_pyramid(&mut ctx, &net, f0, 2).unwrap();
        let dims: Vec<_> = p.levels.iter().map(|&v| { let d = ctx.value(v).dims4().unwrap(); (d.2, d.3) }).collect();
        prop_assert_eq!(dims, halving_ladder(h, w, 2).unwrap());
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = DenoiserConfig::audit();
    let tc = TrainConfig { milestone_steps: 1, post_milestone_steps: 1, ..TrainConfig::default() };
    let tr = Trainer::<f32>::new(&cfg, &Default::default(), &tc, 8).unwrap();
    let ck = Checkpoint::from_trainer(&tr);
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    let (_, params) = back.load_model().unwrap();
    for (id, name, t) in tr.params.iter() {
        let got = params.get(params.id(name).unwrap());
        assert_eq!(got.shape(), t.shape(), "{name}");
        assert!(got.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()), "{name} {id:?}");
    }
}
