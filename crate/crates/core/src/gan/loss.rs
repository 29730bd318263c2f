//! Adversarial and reconstruction objectives.
//!
//! Real pairs `(lit, albedo)` carry target 1, fake pairs `(lit, G(lit))`
//! target 0. With σ the logistic function and means over every patch logit:
//!
//! ```text
//! d_loss     = −mean(log σ(real)) − mean(log(1 − σ(fake)))
//! g_adv_loss = −mean(log σ(fake))
//! ```
//!
//! Each log term is clamped below at −30.

use super::tensor::Real;
use crate::error::{Error, Result};

pub const LOG_FLOOR: f64 = -30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairRole {
    Real,
    Fake,
}

impl PairRole {
    pub fn target(self) -> f64 {
        match self {
            PairRole::Real => 1.0,
            PairRole::Fake => 0.0,
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean of `−log p(role | logit)` and its gradient w.r.t. each logit.
pub fn bce<T: Real>(logits: &[T], role: PairRole) -> Result<(f64, Vec<T>)> {
    if logits.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for &z in logits {
        let z = z.to_f64().unwrap_or(f64::NAN);
        if z.is_nan() {
            return Err(Error::NonFinite("discriminator logit is NaN".into()));
        }
        // log σ(z) = −softplus(−z); log(1 − σ(z)) = −softplus(z).
        let (log_p, grad) = match role {
            PairRole::Real => (-softplus(-z), sigmoid(z) - 1.0),
            PairRole::Fake => (-softplus(z), sigmoid(z)),
        };
        if log_p < LOG_FLOOR {
            total -= LOG_FLOOR;
            grads.push(T::zero());
        } else {
            total -= log_p;
            grads.push(T::lit(grad / n));
        }
    }
    Ok((total / n, grads))
}

/// Returns `(d_loss, g_adv_loss)`.
pub fn adversarial_losses<T: Real>(real_logits: &[T], fake_logits: &[T]) -> Result<(f64, f64)> {
    let (real, _) = bce(real_logits, PairRole::Real)?;
    let (fake, _) = bce(fake_logits, PairRole::Fake)?;
    let (g_adv, _) = bce(fake_logits, PairRole::Real)?;
    Ok((real + fake, g_adv))
}

/// Mean absolute error and its (sub)gradient w.r.t. `prediction`.
pub fn l1<T: Real>(prediction: &[T], target: &[T], denominator: usize) -> (f64, Vec<T>) {
    let scale = T::lit(1.0 / denominator as f64);
    let mut total = 0.0;
    let grads = prediction
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = *p - *t;
            total += d.abs().to_f64().unwrap_or(f64::NAN);
            if d > T::zero() {
                scale
            } else if d < T::zero() {
                -scale
            } else {
                T::zero()
            }
        })
        .collect();
    (total / denominator as f64, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct transcription of binary cross-entropy with probabilities.
    fn reference_bce(logits: &[f64], target: f64) -> f64 {
        logits
            .iter()
            .map(|z| {
                let p = 1.0 / (1.0 + (-z).exp());
                let lp = if target == 1.0 { p.ln() } else { (1.0 - p).ln() };
                -lp.max(LOG_FLOOR)
            })
            .sum::<f64>()
            / logits.len() as f64
    }

    #[test]
    fn zero_logits() {
        let zeros = [0.0f32; 49];
        let (d, g) = adversarial_losses(&zeros, &zeros).unwrap();
        assert!((d - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn optimal_discriminator_limit() {
        let (d, _) = adversarial_losses(&[30.0f64; 9], &[-30.0f64; 9]).unwrap();
        assert!(d <= 1e-3);
    }

    #[test]
    fn matches_reference_on_fixed_logits() {
        let real: Vec<f64> = (0..25).map(|i| (i as f64 - 12.0) * 0.7).collect();
        let fake: Vec<f64> = (0..25).map(|i| (i as f64 * 1.3).sin() * 5.0).collect();
        let (d, g) = adversarial_losses(&real, &fake).unwrap();
        assert!((d - reference_bce(&real, 1.0) - reference_bce(&fake, 0.0)).abs() < 1e-6);
        assert!((g - reference_bce(&fake, 1.0)).abs() < 1e-6);
    }

    #[test]
    fn clamp_caps_each_term() {
        let (d, g) = adversarial_losses(&[-1000.0f64], &[1000.0f64]).unwrap();
        assert_eq!(d, 60.0);
        assert_eq!(g, 0.0 + softplus(-1000.0));
    }

    #[test]
    fn nan_is_rejected() {
        assert!(adversarial_losses(&[f32::NAN], &[0.0f32]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let logits = [-2.0f64, -0.3, 0.0, 0.8, 4.0];
        for role in [PairRole::Real, PairRole::Fake] {
            let (_, grads) = bce(&logits, role).unwrap();
            for i in 0..logits.len() {
                let eps = 1e-6;
                let mut p = logits;
                p[i] += eps;
                let mut m = logits;
                m[i] -= eps;
                let num = (bce(&p, role).unwrap().0 - bce(&m, role).unwrap().0) / (2.0 * eps);
                assert!((num - grads[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn l1_value_and_sign_gradient() {
        let (v, g) = l1(&[0.0f32, 0.5, 1.0, 0.25], &[0.25f32, 0.5, 0.0, 0.0], 4);
        assert!((v - 0.375).abs() < 1e-12);
        assert_eq!(g, vec![-0.25, 0.0, 0.25, 0.25]);
    }
}
