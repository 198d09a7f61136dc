use crate::nn::{sigmoid, Real};

/// Probability clamp applied before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy of probabilities against targets in {0, 1}.
pub fn bce(predictions: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(predictions.len(), targets.len());
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    total / predictions.len() as f64
}

/// Mean BCE of `sigmoid(logits)` against a constant target, with its
/// gradient per logit. Clamped predictions get zero gradient, matching the
/// clamp's derivative.
pub fn bce_from_logits<T: Real>(logits: &[T], target: f64) -> (f64, Vec<T>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grads = logits
        .iter()
        .map(|&l| {
            let raw = sigmoid(l.to_f64().expect("finite logit"));
            let p = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
            loss -= target * p.ln() + (1.0 - target) * (1.0 - p).ln();
            if p == raw {
                T::lit((raw - target) / n)
            } else {
                T::zero()
            }
        })
        .collect();
    (loss / n, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn analytic_values() {
        assert!((bce(&[0.5], &[1.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce(&[0.5], &[1.0]) - 0.693147).abs() < 1e-6);
        let near_one = bce(&[1.0 - BCE_EPS], &[1.0]);
        assert!((near_one - BCE_EPS).abs() < 1e-12);
        // clamping keeps the loss finite at the extremes
        assert!(bce(&[0.0, 1.0], &[1.0, 0.0]).is_finite());
    }

    #[test]
    fn batch_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let t: Vec<f64> = (0..64).map(|_| f64::from(rng.random::<bool>() as u8)).collect();
        let mut acc = 0.0;
        for i in 0..64 {
            let q = p[i].max(BCE_EPS).min(1.0 - BCE_EPS);
            acc += if t[i] == 1.0 { -q.ln() } else { -(1.0 - q).ln() };
        }
        assert!((bce(&p, &t) - acc / 64.0).abs() < 1e-10);
    }

    #[test]
    fn logit_gradient_is_p_minus_t() {
        let logits = [0.3f64, -1.2, 2.0];
        let (loss, g) = bce_from_logits(&logits, 1.0);
        let probs: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
        assert!((loss - bce(&probs, &[1.0; 3])).abs() < 1e-15);
        for (gi, p) in g.iter().zip(&probs) {
            assert!((gi - (p - 1.0) / 3.0).abs() < 1e-15);
        }
        let (_, g) = bce_from_logits(&[40.0f64], 0.0);
        assert_eq!(g, vec![0.0]);
    }
}
