//! Noise schedule and the closed-form forward (noising) process.
//!
//! Steps are 1-based throughout: `t = 1` is the least noisy step and `t = T`
//! the most noisy one. `gamma(t)` is the signal fraction retained after `t`
//! steps, i.e. the running product of `1 - beta`.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Linear,
}

/// Parameters a schedule is built from; these are what config files and
/// checkpoints carry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: ScheduleKind,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { steps: 1000, beta_start: 1e-4, beta_end: 2e-2, kind: ScheduleKind::Linear }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.steps, self.beta_start, self.beta_end, self.kind)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    beta: Vec<f64>,
    gamma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(steps: usize, beta_start: f64, beta_end: f64, kind: ScheduleKind) -> Result<Self> {
        if steps == 0 {
            return Err(param_err("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(param_err(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let beta: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..steps)
                .map(|i| {
                    if steps == 1 {
                        beta_start
                    } else {
                        beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                    }
                })
                .collect(),
        };
        let params = ScheduleParams { steps, beta_start, beta_end, kind };
        Self::from_betas(params, beta)
    }

    /// A schedule with explicit per-step variances.
    pub fn from_beta_values(beta: Vec<f64>) -> Result<Self> {
        let params = ScheduleParams {
            steps: beta.len(),
            beta_start: beta.first().copied().unwrap_or(0.0),
            beta_end: beta.last().copied().unwrap_or(0.0),
            kind: ScheduleKind::Linear,
        };
        Self::from_betas(params, beta)
    }

    fn from_betas(params: ScheduleParams, beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(param_err("schedule needs at least one step"));
        }
        if let Some(b) = beta.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(param_err(format!("beta {b} outside (0, 1)")));
        }
        let gamma = beta
            .iter()
            .scan(1.0, |acc, &b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { params, beta, gamma })
    }

    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gamma
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(param_err(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.beta[t - 1])
    }

    pub fn gamma(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.gamma[t - 1])
    }

    /// `gamma(t - 1)` with `gamma(0) = 1`.
    pub fn gamma_prev(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(if t == 1 { 1.0 } else { self.gamma[t - 2] })
    }

    /// Variance of the true posterior `q(y_{t-1} | y_t, y_0)`.
    pub fn posterior_variance(&self, t: usize) -> Result<f64> {
        let (b, g, gp) = (self.beta(t)?, self.gamma(t)?, self.gamma_prev(t)?);
        Ok(b * (1.0 - gp) / (1.0 - g))
    }
}

/// Samples `y_t = sqrt(gamma_t) * y0 + sqrt(1 - gamma_t) * eps`.
pub fn q_sample<T: Real>(y0: &Tensor<T>, t: usize, eps: &Tensor<T>, sched: &NoiseSchedule) -> Result<Tensor<T>> {
    y0.check_same(eps)?;
    let g = sched.gamma(t)?;
    Ok(mix(y0, eps, g))
}

/// `sqrt(gamma) * y0 + sqrt(1 - gamma) * eps` for an explicit `gamma`.
pub(crate) fn mix<T: Real>(y0: &Tensor<T>, eps: &Tensor<T>, gamma: f64) -> Tensor<T> {
    let a = T::from_f64c(gamma.sqrt());
    let b = T::from_f64c((1.0 - gamma).sqrt());
    let data = y0.data().iter().zip(eps.data()).map(|(&y, &e)| a * y + b * e).collect();
    Tensor::new(y0.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_step_product() {
        let s = NoiseSchedule::new(1, 0.5, 0.5, ScheduleKind::Linear).unwrap();
        assert_eq!(s.gammas(), &[0.5]);
    }

    #[test]
    fn two_step_product() {
        let s = NoiseSchedule::new(2, 0.1, 0.2, ScheduleKind::Linear).unwrap();
        // direct product: 0.9, 0.9 * 0.8
        assert!((s.gamma(1).unwrap() - 0.9).abs() < 1e-15);
        assert!((s.gamma(2).unwrap() - 0.72).abs() < 1e-15);
    }

    #[test]
    fn vanishing_betas_keep_signal() {
        let s = NoiseSchedule::new(10, 1e-15, 1e-15, ScheduleKind::Linear).unwrap();
        assert!(s.gammas().iter().all(|&g| (1.0 - g) < 1e-13));
    }

    #[test]
    fn invalid_ranges() {
        assert!(NoiseSchedule::new(0, 0.1, 0.2, ScheduleKind::Linear).is_err());
        assert!(NoiseSchedule::new(5, 0.0, 0.2, ScheduleKind::Linear).is_err());
        assert!(NoiseSchedule::new(5, 0.3, 0.2, ScheduleKind::Linear).is_err());
        assert!(NoiseSchedule::new(5, 0.1, 1.0, ScheduleKind::Linear).is_err());
        assert!(NoiseSchedule::from_beta_values(vec![0.5, 1.0]).is_err());
        let s = NoiseSchedule::new(5, 0.1, 0.2, ScheduleKind::Linear).unwrap();
        assert!(s.gamma(0).is_err() && s.gamma(6).is_err());
    }

    #[test]
    fn q_sample_edge_cases() {
        let s = NoiseSchedule::new(4, 0.1, 0.3, ScheduleKind::Linear).unwrap();
        let y0 = Tensor::<f64>::from_fn(&[1, 3, 2, 2], |i| i as f64 * 0.1 - 0.5);
        let zero = Tensor::zeros(y0.shape());
        let out = q_sample(&y0, 3, &zero, &s).unwrap();
        let g = s.gamma(3).unwrap().sqrt();
        for (o, y) in out.data().iter().zip(y0.data()) {
            assert_eq!(*o, g * y);
        }
        assert_eq!(mix(&y0, &Tensor::full(y0.shape(), 7.0), 1.0), y0);
        assert!(q_sample(&y0, 1, &Tensor::zeros(&[1, 3, 2, 3]), &s).is_err());
        assert!(q_sample(&y0, 5, &zero, &s).is_err());
    }

    proptest! {
        #[test]
        fn gamma_is_running_product(steps in 1usize..300, lo in 1e-6f64..0.3, span in 0.0f64..0.6) {
            let hi = (lo + span).min(0.999);
            let s = NoiseSchedule::new(steps, lo, hi, ScheduleKind::Linear).unwrap();
            let mut acc = 1.0;
            for t in 1..=steps {
                acc *= 1.0 - s.beta(t).unwrap();
                let g = s.gamma(t).unwrap();
                prop_assert!(((g - acc) / acc).abs() <= 1e-12);
                prop_assert!(s.beta(t).unwrap() > 0.0 && s.beta(t).unwrap() < 1.0);
                if t > 1 {
                    prop_assert!(g <= s.gamma(t - 1).unwrap());
                }
            }
        }

        #[test]
        fn q_sample_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let s = NoiseSchedule::new(10, 1e-3, 0.05, ScheduleKind::Linear).unwrap();
            let y1 = Tensor::<f64>::from_fn(&[1, 1, 2, 3], |i| (i as f64).sin());
            let y2 = Tensor::<f64>::from_fn(&[1, 1, 2, 3], |i| (i as f64).cos());
            let e1 = Tensor::<f64>::from_fn(&[1, 1, 2, 3], |i| i as f64 * 0.2);
            let e2 = Tensor::<f64>::from_fn(&[1, 1, 2, 3], |i| 1.0 - i as f64 * 0.1);
            let comb = |x: &Tensor<f64>, y: &Tensor<f64>| Tensor::new(x.shape(), x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let lhs = q_sample(&comb(&y1, &y2), 7, &comb(&e1, &e2), &s).unwrap();
            let rhs = comb(&q_sample(&y1, 7, &e1, &s).unwrap(), &q_sample(&y2, 7, &e2, &s).unwrap());
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }
}
