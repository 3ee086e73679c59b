use super::{DenseNetwork, NnError};

/// Clamp applied to losses before inversion, so a zero loss stays finite.
pub const LOSS_EPSILON: f64 = 1e-8;

/// Inverse-loss merge weights: `w_i = (1/max(l_i, eps)) / sum_j (1/max(l_j, eps))`.
pub fn dfed_pow_weights(losses: &[f64]) -> Vec<f64> {
    let inv: Vec<f64> = losses.iter().map(|&l| 1.0 / l.max(LOSS_EPSILON)).collect();
    let total: f64 = inv.iter().sum();
    inv.into_iter().map(|w| w / total).collect()
}

/// Componentwise convex combination of models with identical layer specs.
pub fn merge_models(models: &[&DenseNetwork], weights: &[f64]) -> Result<DenseNetwork, NnError> {
    if models.len() != weights.len() || models.is_empty() {
        return Err(NnError::WeightCount { models: models.len(), weights: weights.len() });
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || weights.iter().any(|w| !w.is_finite()) {
        return Err(NnError::WeightSum(sum));
    }
    let first = models[0];
    if models.iter().any(|m| m.layers() != first.layers()) {
        return Err(NnError::SpecMismatch);
    }
    if models.len() == 1 {
        return Ok(first.clone());
    }
    let mut out = DenseNetwork::zeros(first.layers().to_vec())?;
    let acc = out.params_mut();
    for (model, &w) in models.iter().zip(weights) {
        for (a, p) in acc.iter_mut().zip(model.params()) {
            *a += w * p;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_network, Activation, LayerSpec};
    use proptest::prelude::*;

    fn spec() -> Vec<LayerSpec> {
        vec![LayerSpec::new(3, 4, Activation::Relu), LayerSpec::new(4, 2, Activation::Softmax)]
    }

    #[test]
    fn weights_examples() {
        assert_eq!(dfed_pow_weights(&[1.0, 1.0]), vec![0.5, 0.5]);
        let w = dfed_pow_weights(&[1.0, 3.0]);
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        // 1/0.44 : 1/1.42 normalized = 1.42/1.86 and 0.44/1.86
        let w = dfed_pow_weights(&[0.44, 1.42]);
        assert!((w[0] - 1.42 / 1.86).abs() < 1e-12);
        assert!((w[0] - 0.7634).abs() < 1e-4 && (w[1] - 0.2366).abs() < 1e-4);
        let z = dfed_pow_weights(&[0.0, 1.0]);
        assert!(z[0] > 0.999_999 && z[1] > 0.0);
    }

    #[test]
    fn merge_identity_and_fixed_point() {
        let a = init_network(&spec(), 1).unwrap();
        assert_eq!(merge_models(&[&a], &[1.0]).unwrap(), a);
        let m = merge_models(&[&a, &a], &[0.3, 0.7]).unwrap();
        for (x, y) in m.params().iter().zip(a.params()) {
            assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
        }
    }

    #[test]
    fn merge_matches_elementwise_combination() {
        let a = init_network(&spec(), 1).unwrap();
        let b = init_network(&spec(), 2).unwrap();
        let m = merge_models(&[&a, &b], &[0.25, 0.75]).unwrap();
        let expected: Vec<f64> = a.params().iter().zip(b.params()).map(|(x, y)| 0.25 * x + 0.75 * y).collect();
        for (x, y) in m.params().iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_rejects_bad_inputs() {
        let a = init_network(&spec(), 1).unwrap();
        let other = init_network(&[LayerSpec::new(3, 2, Activation::Softmax)], 1).unwrap();
        assert!(matches!(merge_models(&[&a, &other], &[0.5, 0.5]), Err(NnError::SpecMismatch)));
        assert!(matches!(merge_models(&[&a, &a], &[0.5, 0.6]), Err(NnError::WeightSum(_))));
        assert!(matches!(merge_models(&[&a], &[0.5, 0.5]), Err(NnError::WeightCount { .. })));
    }

    proptest! {
        #[test]
        fn weights_sum_to_one_and_are_permutation_equivariant(
            losses in prop::collection::vec(0.0f64..50.0, 1..12),
            rot in 0usize..12,
        ) {
            let w = dfed_pow_weights(&losses);
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(w.iter().all(|&x| x > 0.0 && x <= 1.0));
            let k = rot % losses.len();
            let mut rotated = losses.clone();
            rotated.rotate_left(k);
            let wr = dfed_pow_weights(&rotated);
            let mut expected = w.clone();
            expected.rotate_left(k);
            for (a, b) in wr.iter().zip(&expected) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }

        #[test]
        fn merge_stays_in_componentwise_envelope(
            seeds in prop::collection::vec(0u64..1000, 1..5),
            raw in prop::collection::vec(0.01f64..1.0, 5),
        ) {
            let models: Vec<DenseNetwork> = seeds.iter().map(|&s| init_network(&spec(), s).unwrap()).collect();
            let refs: Vec<&DenseNetwork> = models.iter().collect();
            let total: f64 = raw[..models.len()].iter().sum();
            let weights: Vec<f64> = raw[..models.len()].iter().map(|w| w / total).collect();
            let merged = merge_models(&refs, &weights).unwrap();
            for (i, &p) in merged.params().iter().enumerate() {
                let lo = models.iter().map(|m| m.params()[i]).fold(f64::INFINITY, f64::min);
                let hi = models.iter().map(|m| m.params()[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
            }
        }
    }
}
