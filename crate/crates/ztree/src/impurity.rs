//! Gini impurity and the two ways of aggregating it across a split:
//! the harmonic mean used by the zero-shot builder, which needs no
//! instance counts, and the instance-weighted average used by the CART
//! baseline.

use crate::error::ImpurityError;
use crate::schema::ProbabilityDistribution;

/// Gini impurity `1 - sum(p_i^2)`. Zero on a pure node, maximal
/// (`1 - 1/C`) on the uniform distribution.
pub fn gini(dist: &ProbabilityDistribution) -> f64 {
    1.0 - dist.probs().iter().map(|p| p * p).sum::<f64>()
}

/// Harmonic mean `2*g1*g2/(g1+g2)` of two branch impurities, with the
/// limit convention H(0, 0) = 0: a split with both branches pure is the
/// best possible and must keep the lowest score.
pub fn harmonic_combine(g1: f64, g2: f64) -> f64 {
    if g1 == 0.0 || g2 == 0.0 {
        return 0.0;
    }
    2.0 * g1 * g2 / (g1 + g2)
}

/// Score of a proposed split from its two branch distributions alone.
/// Lower is better.
pub fn split_score(left: &ProbabilityDistribution, right: &ProbabilityDistribution) -> f64 {
    harmonic_combine(gini(left), gini(right))
}

/// Instance-weighted impurity `(n1*g1 + n2*g2)/(n1+n2)`, the classical
/// CART aggregation. Only the data-driven baseline uses this.
pub fn weighted_combine(g1: f64, n1: usize, g2: f64, n2: usize) -> Result<f64, ImpurityError> {
    if n1 + n2 == 0 {
        return Err(ImpurityError::ZeroTotalCount);
    }
    Ok((n1 as f64 * g1 + n2 as f64 * g2) / (n1 + n2) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(probs: &[f64]) -> ProbabilityDistribution {
        let labels: Vec<String> = (0..probs.len()).map(|i| format!("l{i}")).collect();
        ProbabilityDistribution::from_weights(&labels, probs).unwrap()
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&dist(&[1.0, 0.0])), 0.0);
        assert_eq!(gini(&dist(&[0.5, 0.5])), 0.5);
        assert!((gini(&dist(&[0.7, 0.3])) - 0.42).abs() < 1e-12);
    }

    #[test]
    fn harmonic_examples() {
        assert_eq!(harmonic_combine(0.5, 0.5), 0.5);
        assert_eq!(harmonic_combine(0.0, 0.4), 0.0);
        assert_eq!(harmonic_combine(0.0, 0.0), 0.0);
        assert!((harmonic_combine(0.2, 0.4) - 0.2666666666666667).abs() < 1e-12);
    }

    #[test]
    fn split_score_examples() {
        assert_eq!(split_score(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])), 0.0);
        assert_eq!(split_score(&dist(&[0.5, 0.5]), &dist(&[0.5, 0.5])), 0.5);
        assert!((split_score(&dist(&[0.9, 0.1]), &dist(&[0.3, 0.7])) - 0.252).abs() < 1e-12);
    }

    #[test]
    fn weighted_examples() {
        assert_eq!(weighted_combine(0.5, 10, 0.5, 10).unwrap(), 0.5);
        assert_eq!(weighted_combine(0.0, 0, 0.5, 10).unwrap(), 0.5);
        assert!((weighted_combine(0.18, 30, 0.42, 10).unwrap() - 0.24).abs() < 1e-12);
        assert!(weighted_combine(0.1, 0, 0.2, 0).is_err());
    }

    proptest! {
        #[test]
        fn gini_label_permutation_invariant(mut ws in proptest::collection::vec(0.01f64..1.0, 2..6), shift in 0usize..5) {
            let before = gini(&dist(&ws));
            let k = shift % ws.len();
            ws.rotate_left(k);
            let after = gini(&dist(&ws));
            prop_assert!((before - after).abs() < 1e-12);
        }

        #[test]
        fn gini_bounded_and_zero_only_when_pure(ws in proptest::collection::vec(0.0f64..1.0, 2..6)) {
            if let Ok(d) = ProbabilityDistribution::from_weights(
                &(0..ws.len()).map(|i| format!("l{i}")).collect::<Vec<_>>(), &ws)
            {
                let g = gini(&d);
                let c = d.len() as f64;
                prop_assert!(g >= -1e-12 && g <= 1.0 - 1.0 / c + 1e-12);
                let one_hot = d.probs().iter().any(|&p| (p - 1.0).abs() < 1e-15);
                if g.abs() < 1e-15 {
                    prop_assert!(one_hot);
                }
                if one_hot {
                    prop_assert!(g.abs() < 1e-12);
                }
            }
        }

        #[test]
        fn harmonic_symmetric_and_below_arithmetic(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let h = harmonic_combine(a, b);
            prop_assert_eq!(h.to_bits(), harmonic_combine(b, a).to_bits());
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (a + b) / 2.0 + 1e-12);
        }

        #[test]
        fn harmonic_identity_on_equal_args(a in 0.0f64..1.0) {
            prop_assert!((harmonic_combine(a, a) - a).abs() < 1e-12);
        }

        #[test]
        fn binary_split_score_zero_iff_both_pure(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            let l = dist(&[p, 1.0 - p]);
            let r = dist(&[q, 1.0 - q]);
            let s = split_score(&l, &r);
            let both_pure = gini(&l) == 0.0 && gini(&r) == 0.0;
            prop_assert_eq!(s == 0.0, both_pure);
        }
    }
}
