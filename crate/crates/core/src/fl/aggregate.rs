//! Federated averaging.

use super::model::ModelParams;
use crate::error::{Error, Result};
use crate::Float;

/// Coordinate-wise arithmetic mean with equal weights (shards are equal-size
/// by construction, so sample weighting would be a no-op).
///
/// Summation is fixed left-to-right in list order, then one division per
/// coordinate — so the result is a deterministic function of the input
/// *order* as well as the values. Callers that need order-independence
/// (the orchestrator does) must pass models in client-index order.
pub fn aggregate<F: Float>(models: &[ModelParams<F>]) -> Result<ModelParams<F>> {
    let first = models.first().ok_or(Error::Empty("model list"))?;
    for (i, m) in models.iter().enumerate() {
        if m.hidden() != first.hidden() || m.len() != first.len() {
            return Err(Error::Shape(format!(
                "model {i} has hidden {} (len {}), expected hidden {} (len {})",
                m.hidden(),
                m.len(),
                first.hidden(),
                first.len()
            )));
        }
    }

    let mut acc = first.clone();
    for m in &models[1..] {
        for (a, &w) in acc.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *a += w;
        }
    }
    let n = F::from_usize(models.len()).expect("model count fits");
    for a in acc.as_mut_slice() {
        *a /= n;
    }

    if !acc.all_finite() {
        return Err(Error::NonFinite {
            what: "weight",
            context: "aggregate".into(),
        });
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::model::init_model;
    use rand::Rng;

    fn constant_model(hidden: usize, v: f64) -> ModelParams<f64> {
        let mut m = ModelParams::zeros(hidden);
        for w in m.as_mut_slice() {
            *w = v;
        }
        m
    }

    #[test]
    fn averages_coordinatewise() {
        let mut a = constant_model(2, 1.0);
        a.as_mut_slice()[5] = 2.0;
        let mut b = constant_model(2, 3.0);
        b.as_mut_slice()[5] = 4.0;
        let avg = aggregate(&[a, b]).unwrap();
        assert_eq!(avg.as_slice()[5], 3.0);
        assert!(avg.as_slice().iter().enumerate().all(|(i, &w)| i == 5 || w == 2.0));
    }

    #[test]
    fn single_model_is_identity() {
        let m = init_model::<f64>(4, 3);
        let avg = aggregate(std::slice::from_ref(&m)).unwrap();
        assert_eq!(avg, m);
    }

    #[test]
    fn identical_models_average_to_themselves() {
        // Sum of n equal values then division by n is exact when the values
        // are dyadic; use 0.25 to dodge representation error entirely.
        let m = constant_model(3, 0.25);
        let avg = aggregate(&[m.clone(), m.clone(), m.clone(), m.clone()]).unwrap();
        assert_eq!(avg, m);
    }

    #[test]
    fn permutation_invariant_on_dyadic_values() {
        // On a dyadic grid addition is exact, so reordering cannot change
        // the result; this pins the contract the orchestrator relies on
        // after it has already sorted by client index.
        let mut rng = crate::rng::stream(55, "train", 9000);
        let models: Vec<ModelParams<f64>> = (0..4)
            .map(|_| {
                let mut m = ModelParams::zeros(2);
                for w in m.as_mut_slice() {
                    *w = f64::from(rng.gen_range(-64i32..=64)) / 8.0;
                }
                m
            })
            .collect();
        let forward = aggregate(&models).unwrap();
        let reversed: Vec<_> = models.iter().rev().cloned().collect();
        assert_eq!(forward, aggregate(&reversed).unwrap());
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(matches!(
            aggregate::<f64>(&[]),
            Err(Error::Empty("model list"))
        ));
        let a = init_model::<f64>(4, 0);
        let b = init_model::<f64>(5, 0);
        assert!(matches!(aggregate(&[a, b]), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_non_finite_result() {
        let mut a = constant_model(2, 1.0);
        a.as_mut_slice()[0] = f64::MAX;
        let mut b = constant_model(2, 1.0);
        b.as_mut_slice()[0] = f64::MAX;
        assert!(matches!(
            aggregate(&[a, b]),
            Err(Error::NonFinite { .. })
        ));
    }
}
