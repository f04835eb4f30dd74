//! Empirical value of the GAN minimax objective.

use serde::{Deserialize, Serialize};

/// Clamp applied to discriminator outputs before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Losses and discriminator statistics for one batch pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanLossReport {
    /// `mean log D(x) + mean log(1 - D(G(z)))`.
    pub v_value: f64,
    /// Discriminator loss, `-v_value`.
    pub d_loss: f64,
    /// Non-saturating generator loss, `-mean log D(G(z))`.
    pub g_loss: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
    /// Whether any input had to be clamped into `[eps, 1 - eps]`.
    pub clamped: bool,
}

/// Evaluates the minimax value on batches of discriminator outputs for real
/// and generated samples. Inputs at (or beyond) 0 or 1 are clamped to
/// `[PROB_EPS, 1 - PROB_EPS]` and the report is flagged.
pub fn gan_value(d_real: &[f64], d_fake: &[f64]) -> GanLossReport {
    assert!(!d_real.is_empty() && !d_fake.is_empty(), "gan_value on empty batch");
    let mut clamped = false;
    let mut clamp = |p: f64| {
        let c = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        if c != p || p.is_nan() {
            clamped = true;
        }
        if p.is_nan() {
            0.5
        } else {
            c
        }
    };
    let real: Vec<f64> = d_real.iter().map(|&p| clamp(p)).collect();
    let fake: Vec<f64> = d_fake.iter().map(|&p| clamp(p)).collect();

    let mean = |xs: &[f64], f: fn(f64) -> f64| xs.iter().map(|&x| f(x)).sum::<f64>() / xs.len() as f64;
    let log_real = mean(&real, f64::ln);
    let log_not_fake = mean(&fake, |p| (-p).ln_1p());
    let log_fake = mean(&fake, f64::ln);
    let v_value = log_real + log_not_fake;
    GanLossReport {
        v_value,
        d_loss: -v_value,
        g_loss: -log_fake,
        d_real_mean: real.iter().sum::<f64>() / real.len() as f64,
        d_fake_mean: fake.iter().sum::<f64>() / fake.len() as f64,
        clamped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_value_is_minus_two_ln_two() {
        let r = gan_value(&[0.5; 16], &[0.5; 16]);
        assert!((r.v_value + 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((r.d_loss - 1.386294).abs() < 1e-6);
        assert!(!r.clamped);
    }

    #[test]
    fn perfect_discriminator_approaches_zero() {
        let r = gan_value(&[1.0 - PROB_EPS; 4], &[PROB_EPS; 4]);
        assert!(r.v_value.abs() < 1e-6);
        assert!(r.v_value <= 0.0);
    }

    #[test]
    fn saturated_inputs_are_clamped_and_flagged() {
        let r = gan_value(&[1.0, 0.9], &[0.0, 0.1]);
        assert!(r.clamped);
        assert!(r.v_value.is_finite());
        assert!(r.g_loss.is_finite());
    }
}
