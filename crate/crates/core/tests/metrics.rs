//! Image-quality metrics and evaluation reports.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use diffsr::io::{report_from_toml, report_to_toml};
use diffsr::metrics::{consistency, psnr, ssim, ssim_with_peak, EvalRecord, EvalReport, PSNR_CAP};
use diffsr::resample::bicubic;
use diffsr::schedule::{q_sample, NoiseSchedule};
use diffsr::tensor::Tensor;
use diffsr::Error;

fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random::<f64>())
}

#[test]
fn psnr_examples() {
    let a = uniform(&[3, 8, 8], 1);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
    let zeros = Tensor::<f64>::zeros(&[3, 8, 8]);
    let ones = Tensor::<f64>::full(&[3, 8, 8], 1.0);
    assert!(psnr(&zeros, &ones, 1.0).unwrap().abs() < 1e-12);
    let b = a.map(|v| v + 0.1);
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    assert!(matches!(psnr(&a, &Tensor::zeros(&[3, 8, 7]), 1.0), Err(Error::Shape(_))));
}

#[test]
fn psnr_falls_as_noise_grows() {
    let clean = uniform(&[3, 32, 32], 2);
    let noise = uniform(&[3, 32, 32], 3);
    let scores: Vec<f64> = [0.01, 0.05, 0.2]
        .iter()
        .map(|&amp| psnr(&clean, &Tensor::from_fn(clean.shape(), |i| clean.data()[i] + amp * (noise.data()[i] - 0.5)), 1.0).unwrap())
        .collect();
    assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
}

#[test]
fn ssim_examples() {
    let a = uniform(&[3, 20, 20], 4);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let (m1, m2) = (0.3, 0.45);
    let c1 = 0.01f64.powi(2);
    let expect = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
    let got = ssim(&Tensor::full(&[1, 16, 16], m1), &Tensor::full(&[1, 16, 16], m2)).unwrap();
    assert!((got - expect).abs() < 1e-12);
    let n = ssim(&uniform(&[1, 64, 64], 5), &uniform(&[1, 64, 64], 6)).unwrap();
    assert!(n.abs() < 0.1, "{n}");
    assert!(matches!(ssim(&Tensor::<f64>::zeros(&[1, 10, 30]), &Tensor::zeros(&[1, 10, 30])), Err(Error::Param(_))));
    // SSIM is invariant to a common rescaling of the data and the peak
    let b = uniform(&[1, 16, 16], 7);
    let scaled = |t: &Tensor<f64>| t.map(|v| 2.0 * v);
    assert!((ssim_with_peak(&scaled(&b), &scaled(&b.map(|v| v * 0.9)), 2.0).unwrap() - ssim(&b, &b.map(|v| v * 0.9)).unwrap()).abs() < 1e-12);
}

#[test]
fn consistency_examples() {
    let x = uniform(&[3, 8, 8], 8);
    assert_eq!(consistency(&x, &x).unwrap(), 0.0);
    let flat = Tensor::<f64>::full(&[3, 8, 8], 0.4);
    let off = Tensor::<f64>::full(&[3, 24, 24], 0.41);
    assert!((consistency(&flat, &off).unwrap() - 10.0).abs() < 1e-6);
    // smooth content survives a bicubic round trip
    let smooth = Tensor::<f64>::from_fn(&[3, 16, 16], |i| {
        let (r, c) = ((i / 16) % 16, i % 16);
        0.5 + 0.2 * (r as f64 * 0.3).sin() * (c as f64 * 0.25).cos()
    });
    let up = bicubic(&smooth, 64, 64).unwrap();
    assert!(consistency(&smooth, &up).unwrap() < 1.0);
    assert!(matches!(consistency(&up, &smooth), Err(Error::Shape(_))));
}

#[test]
fn forward_variance_at_known_gamma() {
    // beta = [0.1, 0.2] gives gamma_2 = 0.72
    let sched = NoiseSchedule::from_beta_values(vec![0.1, 0.2]).unwrap();
    assert!((sched.gamma(2).unwrap() - 0.72).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let y0 = Tensor::<f64>::zeros(&[1]);
    let n = 10_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| {
            let e = Tensor::new(&[1], vec![rng.sample::<f64, _>(rand_distr::StandardNormal)]).unwrap();
            q_sample(&y0, 2, &e, &sched).unwrap().data()[0]
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // standard error of a Gaussian sample variance
    let se = 0.28 * (2.0 / (n - 1) as f64).sqrt();
    assert!((var - 0.28).abs() < 3.0 * se, "{var}");
}

#[test]
fn report_aggregates_are_means() {
    let mut records = Vec::new();
    for (i, scale) in [2.0, 4.0].iter().cycle().take(8).enumerate() {
        records.push(EvalRecord { image: format!("im{}", i / 2), scale: *scale, psnr: 20.0 + i as f64, ssim: 0.1 * i as f64, consistency: i as f64 });
    }
    let report = EvalReport::from_records(records.clone(), 5);
    assert_eq!(report.aggregates.len(), 2);
    for agg in &report.aggregates {
        let group: Vec<_> = records.iter().filter(|r| r.scale == agg.scale).collect();
        assert_eq!(agg.count, 4);
        let mean = |f: fn(&EvalRecord) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / 4.0;
        assert!((agg.psnr - mean(|r| r.psnr)).abs() < 1e-12);
        assert!((agg.ssim - mean(|r| r.ssim)).abs() < 1e-12);
        assert!((agg.consistency - mean(|r| r.consistency)).abs() < 1e-12);
    }
    let text = report_to_toml(&report);
    assert!(text.starts_with("format_version = 1"));
    assert_eq!(report_from_toml(&text).unwrap(), report);
}
