//! Two-class cross entropy on softmax outputs.

use crate::error::{Error, Result};

/// Probabilities below this are clamped before the log.
pub const PROB_EPS: f64 = 1e-7;

fn check(probs: &[[f64; 2]], labels: &[usize]) -> Result<()> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::Shape {
            expected: format!("{} labels for a non-empty batch", probs.len()),
            actual: format!("{} labels", labels.len()),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Argument(format!("label {l} is not 0 or 1")));
    }
    Ok(())
}

/// Mean of `-ln(max(p[label], eps))` over the batch.
pub fn cross_entropy(probs: &[[f64; 2]], labels: &[usize]) -> Result<f64> {
    check(probs, labels)?;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| -p[y].max(PROB_EPS).ln())
        .sum();
    Ok(total / probs.len() as f64)
}

/// Derivative of [`cross_entropy`] with respect to the logits.
///
/// Where the clamp is active the loss is flat, so the gradient is zero.
pub fn cross_entropy_grad(probs: &[[f64; 2]], labels: &[usize]) -> Result<Vec<[f64; 2]>> {
    check(probs, labels)?;
    let scale = 1.0 / probs.len() as f64;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            if p[y] < PROB_EPS {
                return [0.0, 0.0];
            }
            let mut g = [p[0] * scale, p[1] * scale];
            g[y] -= scale;
            g
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::softmax2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_prediction_costs_ln2() {
        for y in [0, 1] {
            let l = cross_entropy(&[[0.5, 0.5]], &[y]).unwrap();
            assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_prediction_costs_nothing() {
        assert!(cross_entropy(&[[1.0, 0.0]], &[0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let l = cross_entropy(&[[1.0, 0.0]], &[1]).unwrap();
        assert!((l + PROB_EPS.ln()).abs() < 1e-9);
        assert_eq!(cross_entropy_grad(&[[1.0, 0.0]], &[1]).unwrap(), vec![[0.0, 0.0]]);
    }

    #[test]
    fn matches_elementwise_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let probs: Vec<[f64; 2]> = (0..17)
            .map(|_| {
                let a: f64 = rng.gen_range(0.01..0.99);
                [a, 1.0 - a]
            })
            .collect();
        let labels: Vec<usize> = (0..17).map(|_| rng.gen_range(0..2)).collect();
        let mut brute = 0.0;
        for i in 0..17 {
            brute += -(probs[i][labels[i]]).ln();
        }
        brute /= 17.0;
        assert!((cross_entropy(&probs, &labels).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_difference_on_logits() {
        let logits = [[0.3, -1.2], [2.0, 0.5], [-0.4, -0.1]];
        let labels = [1, 0, 1];
        let f = |z: &[[f64; 2]]| {
            let p: Vec<[f64; 2]> = z.iter().map(|&z| softmax2(z)).collect();
            cross_entropy(&p, &labels).unwrap()
        };
        let p: Vec<[f64; 2]> = logits.iter().map(|&z| softmax2(z)).collect();
        let g = cross_entropy_grad(&p, &labels).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for k in 0..2 {
                let mut up = logits;
                let mut dn = logits;
                up[i][k] += h;
                dn[i][k] -= h;
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                assert!((fd - g[i][k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(cross_entropy(&[[0.5, 0.5]], &[2]).is_err());
        assert!(cross_entropy(&[[0.5, 0.5]], &[0, 1]).is_err());
        assert!(cross_entropy(&[], &[]).is_err());
    }
}
