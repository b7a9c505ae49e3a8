use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Default per-label scale base: an entry with label `y` is weighted `50^y`.
pub const DEFAULT_LOSS_BASE: f64 = 50.0;

fn check_shapes<T: Scalar>(pred: &Tensor<T>, label: &Tensor<T>) -> Result<()> {
    if pred.shape() != label.shape() {
        return Err(Error::ShapeMismatch {
            expected: label.shape().to_vec(),
            found: pred.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean over all entries of `|p - y| * base^y`.
pub fn weighted_l1_loss<T: Scalar>(pred: &Tensor<T>, label: &Tensor<T>, base: f64) -> Result<T> {
    check_shapes(pred, label)?;
    let base = T::of(base);
    let total: T = pred
        .data()
        .iter()
        .zip(label.data())
        .map(|(&p, &y)| (p - y).abs() * base.powf(y))
        .sum();
    Ok(total / T::of(pred.len() as f64))
}

/// Gradient of [`weighted_l1_loss`] with respect to `pred`; the subgradient
/// at `p == y` is 0.
pub fn weighted_l1_grad<T: Scalar>(pred: &Tensor<T>, label: &Tensor<T>, base: f64) -> Result<Tensor<T>> {
    check_shapes(pred, label)?;
    let base = T::of(base);
    let inv_n = T::one() / T::of(pred.len() as f64);
    let data = pred
        .data()
        .iter()
        .zip(label.data())
        .map(|(&p, &y)| {
            let s = if p > y {
                T::one()
            } else if p < y {
                -T::one()
            } else {
                T::zero()
            };
            s * base.powf(y) * inv_n
        })
        .collect();
    Tensor::new(pred.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn published_formula_values() {
        assert_eq!(weighted_l1_loss(&t(&[0.0]), &t(&[1.0]), 50.0).unwrap(), 50.0);
        assert_eq!(weighted_l1_loss(&t(&[1.0]), &t(&[0.0]), 50.0).unwrap(), 1.0);
        assert_eq!(weighted_l1_loss(&t(&[0.3, 0.7]), &t(&[0.3, 0.7]), 50.0).unwrap(), 0.0);
    }

    #[test]
    fn mean_over_entries() {
        // (|0-1|*50 + |1-0|*1) / 2
        let l = weighted_l1_loss(&t(&[0.0, 1.0]), &t(&[1.0, 0.0]), 50.0).unwrap();
        assert_eq!(l, 25.5);
    }

    #[test]
    fn shape_mismatch() {
        let err = weighted_l1_loss(&t(&[0.0, 1.0]), &t(&[1.0]), 50.0).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
        assert!(weighted_l1_grad(&t(&[0.0]), &t(&[1.0, 2.0]), 50.0).is_err());
    }

    #[test]
    fn zero_gradient_when_equal() {
        let g = weighted_l1_grad(&t(&[0.2, 0.9]), &t(&[0.2, 0.9]), 50.0).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn nonnegative_and_zero_iff_equal(p in proptest::collection::vec(0.0f64..=1.0, 1..40),
                                          y in proptest::collection::vec(0.0f64..=1.0, 40)) {
            let y = &y[..p.len()];
            let l = weighted_l1_loss(&t(&p), &t(y), 50.0).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, p.as_slice() == y);
            prop_assert_eq!(weighted_l1_loss(&t(&p), &t(&p), 50.0).unwrap(), 0.0);
        }

        #[test]
        fn weight_monotone_in_label(y1 in 0.0f64..=0.5, dy in 0.001f64..=0.5, gap in 0.001f64..=0.5) {
            let y2 = y1 + dy;
            let l1 = weighted_l1_loss(&t(&[y1 + gap]), &t(&[y1]), 50.0).unwrap();
            let l2 = weighted_l1_loss(&t(&[y2 + gap]), &t(&[y2]), 50.0).unwrap();
            prop_assert!(l2 > l1);
        }

        #[test]
        fn gradient_matches_difference_quotient(p in 0.0f64..=1.0, y in 0.0f64..=1.0) {
            prop_assume!((p - y).abs() > 1e-3);
            let eps = 1e-6;
            let g = weighted_l1_grad(&t(&[p]), &t(&[y]), 50.0).unwrap().data()[0];
            let up = weighted_l1_loss(&t(&[p + eps]), &t(&[y]), 50.0).unwrap();
            let dn = weighted_l1_loss(&t(&[p - eps]), &t(&[y]), 50.0).unwrap();
            prop_assert!((g - (up - dn) / (2.0 * eps)).abs() < 1e-6 * g.abs().max(1.0));
        }
    }
}
