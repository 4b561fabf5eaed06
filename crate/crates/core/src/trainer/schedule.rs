use crate::error::{Error, Result};

/// Per-sample weights over the M filters; non-negative and summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentWeights {
    alpha: Vec<f64>,
}

impl AssignmentWeights {
    pub fn values(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Index of the largest weight; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &a) in self.alpha.iter().enumerate() {
            if a > self.alpha[best] {
                best = j;
            }
        }
        best
    }
}

/// Softmax of `-losses / t`, computed with a min-loss shift so that
/// temperatures down to 1e-8 neither overflow nor produce NaN.
pub fn alpha_weights(losses: &[f64], t: f64) -> Result<AssignmentWeights> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Parameter(format!("temperature must be positive and finite, got {t}")));
    }
    if losses.is_empty() {
        return Err(Error::Parameter("no losses to weight".into()));
    }
    if let Some(j) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::Numeric(format!("loss of filter {j} is {}", losses[j])));
    }
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let mut alpha: Vec<f64> = losses.iter().map(|l| (-(l - min) / t).exp()).collect();
    // the minimum contributes exp(0) = 1, so the sum is at least 1
    let sum: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= sum);
    Ok(AssignmentWeights { alpha })
}

/// Staircase cooling: `t0 * beta^-floor(epoch / drop_step)`.
pub fn temperature(t0: f64, beta: f64, drop_step: usize, epoch: usize) -> f64 {
    let drops = (epoch / drop_step.max(1)).min(i32::MAX as usize) as i32;
    // divide rather than multiply by beta^-n so that e.g. 1 / 10^2 is exactly 0.01
    t0 / beta.powi(drops)
}

/// Index of the smallest loss; ties go to the smallest index.
pub fn argmin(losses: &[f64]) -> usize {
    let mut best = 0;
    for (j, &l) in losses.iter().enumerate() {
        if l < losses[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_losses_give_uniform_weights() {
        for t in [1e-8, 1.0, 1e3] {
            let a = alpha_weights(&[0.3; 4], t).unwrap();
            assert!(a.values().iter().all(|&v| v == 0.25));
        }
    }

    #[test]
    fn two_filter_example() {
        let a = alpha_weights(&[1.0, 2.0], 1.0).unwrap();
        // 1 / (1 + e^-1)
        assert!((a.values()[0] - 0.7310586).abs() < 1e-7);
        assert!((a.values()[1] - 0.2689414).abs() < 1e-7);
    }

    #[test]
    fn tiny_temperature_is_one_hot() {
        let a = alpha_weights(&[0.1, 5.0], 1e-6).unwrap();
        assert!(a.values()[0] > 1.0 - 1e-12);
        assert_eq!(a.argmax(), 0);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(alpha_weights(&[1.0], 0.0), Err(Error::Parameter(_))));
        assert!(matches!(alpha_weights(&[1.0], -1.0), Err(Error::Parameter(_))));
        assert!(matches!(alpha_weights(&[1.0, f64::NAN], 1.0), Err(Error::Numeric(_))));
        assert!(matches!(alpha_weights(&[f64::INFINITY], 1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn staircase_values() {
        let t: Vec<f64> = (0..13).map(|k| temperature(1.0, 10.0, 5, k)).collect();
        assert!(t[..5].iter().all(|&v| v == 1.0));
        assert_eq!(t[5], 0.1);
        assert_eq!(t[12], 0.01);
        assert!((0..50).all(|k| temperature(1.0, 10.0, 100, k) == 1.0));
        assert!((0..50).all(|k| temperature(2.0, 1.0, 3, k) == 2.0));
    }

    proptest! {
        #[test]
        fn weights_on_simplex_and_track_argmin(
            losses in proptest::collection::vec(0.0f64..10.0, 1..9),
            log_t in -8.0f64..3.0,
            shift in 0.0f64..10.0,
        ) {
            let t = 10f64.powf(log_t);
            let a = alpha_weights(&losses, t).unwrap();
            let sum: f64 = a.values().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(a.values().iter().all(|&v| v >= 0.0));
            prop_assert_eq!(a.argmax(), argmin(&losses));
            let shifted: Vec<f64> = losses.iter().map(|l| l + shift).collect();
            let b = alpha_weights(&shifted, t).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn temperature_is_nonincreasing_staircase(
            t0 in 1e-3f64..10.0, beta in 1.0f64..20.0, k in 1usize..10, epoch in 0usize..60,
        ) {
            let a = temperature(t0, beta, k, epoch);
            let b = temperature(t0, beta, k, epoch + 1);
            prop_assert!(b <= a);
            prop_assert!(a > 0.0);
            prop_assert_eq!(temperature(t0, beta, k, (epoch / k) * k), a);
        }
    }
}
