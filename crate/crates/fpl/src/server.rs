//! Server-side coordination: cohort selection and payload aggregation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::client::UpdatePayload;
use crate::error::{FplError, Result};
use crate::model::ServerModel;

/// The set of users participating in one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cohort {
    pub members: Vec<usize>,
}

/// Uniform sample of `size` distinct users, returned ascending.
///
/// Partial Fisher-Yates; a cohort of one consumes exactly one draw, which
/// keeps sFPL on the same random sequence as centralized user-wise sampling.
pub fn select_cohort(num_users: usize, size: usize, rng: &mut ChaCha8Rng) -> Result<Cohort> {
    if size < 1 || size > num_users {
        return Err(FplError::Config(format!(
            "cohort size {size} out of range [1, {num_users}]"
        )));
    }
    let mut indices: Vec<usize> = (0..num_users).collect();
    for slot in 0..size {
        let pick = rng.random_range(slot..num_users);
        indices.swap(slot, pick);
    }
    let mut members: Vec<usize> = indices[..size].to_vec();
    members.sort_unstable();
    Ok(Cohort { members })
}

/// Global aggregation: Θ_S ← Θ_S + α Σ_u ΔΘ_{S,u}.
///
/// Payloads are applied sorted by sender, entries by item, so repeated runs
/// are bit-identical.
pub fn aggregate(
    model: &mut ServerModel,
    payloads: &[UpdatePayload],
    alpha: f64,
) -> Result<()> {
    for payload in payloads {
        for entry in &payload.entries {
            if entry.item >= model.num_items() {
                return Err(FplError::Protocol {
                    sender: payload.sender,
                    item: entry.item,
                    catalog: model.num_items(),
                });
            }
        }
    }
    let mut order: Vec<&UpdatePayload> = payloads.iter().collect();
    order.sort_by_key(|p| p.sender);
    for payload in order {
        // entries are already item-sorted within a payload
        for entry in &payload.entries {
            for (q, d) in model
                .item_factors_mut(entry.item)
                .iter_mut()
                .zip(&entry.d_factors)
            {
                *q += alpha * d;
            }
            *model.item_bias_mut(entry.item) += alpha * entry.d_bias;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::PayloadEntry;
    use crate::rng;
    use std::collections::HashMap;

    #[test]
    fn full_cohort_is_everyone_ascending() {
        let mut rng = rng::server_stream(1);
        let cohort = select_cohort(5, 5, &mut rng).unwrap();
        assert_eq!(cohort.members, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn singleton_population() {
        let mut rng = rng::server_stream(1);
        assert_eq!(select_cohort(1, 1, &mut rng).unwrap().members, vec![0]);
    }

    #[test]
    fn size_out_of_range_is_config_error() {
        let mut rng = rng::server_stream(1);
        assert!(select_cohort(4, 0, &mut rng).is_err());
        assert!(select_cohort(4, 5, &mut rng).is_err());
    }

    #[test]
    fn pairs_are_uniform() {
        let mut rng = rng::server_stream(99);
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        let n = 10_000;
        for _ in 0..n {
            let cohort = select_cohort(4, 2, &mut rng).unwrap();
            *counts.entry(cohort.members).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for (pair, count) in counts {
            let freq = count as f64 / n as f64;
            assert!(
                (freq - 1.0 / 6.0).abs() < 0.02,
                "pair {pair:?} frequency {freq}"
            );
        }
    }

    #[test]
    fn singleton_cohort_consumes_one_draw() {
        let mut a = rng::server_stream(5);
        let mut b = rng::server_stream(5);
        let cohort = select_cohort(10, 1, &mut a).unwrap();
        assert_eq!(cohort.members[0], b.random_range(0..10));
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    fn payload(sender: usize, entries: Vec<(usize, Vec<f64>, f64)>) -> UpdatePayload {
        UpdatePayload {
            sender,
            entries: entries
                .into_iter()
                .map(|(item, d_factors, d_bias)| PayloadEntry {
                    item,
                    d_factors,
                    d_bias,
                })
                .collect(),
        }
    }

    #[test]
    fn empty_payload_list_leaves_model_untouched() {
        let mut init = rng::init_stream(2);
        let mut model = crate::model::ServerModel::init(5, 3, &mut init);
        let before = model.clone();
        aggregate(&mut model, &[], 0.1).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn single_entry_applies_scaled_delta() {
        let mut model = crate::model::ServerModel::zeros(5, 2);
        let p = payload(0, vec![(3, vec![1.0, -2.0], 4.0)]);
        aggregate(&mut model, &[p], 0.1).unwrap();
        assert_eq!(model.item_factors(3), &[0.1, -0.2]);
        assert_eq!(model.item_bias(3), 0.4);
        for item in [0, 1, 2, 4] {
            assert_eq!(model.item_factors(item), &[0.0, 0.0]);
            assert_eq!(model.item_bias(item), 0.0);
        }
    }

    #[test]
    fn aggregation_is_order_insensitive() {
        let mut init = rng::init_stream(8);
        let base = crate::model::ServerModel::init(6, 3, &mut init);
        let mut deltas = rng::server_stream(8);
        let mut rand_vec = |n: usize| -> Vec<f64> {
            (0..n).map(|_| deltas.random::<f64>() - 0.5).collect()
        };
        let a = payload(0, vec![(3, rand_vec(3), 0.7), (5, rand_vec(3), -0.2)]);
        let b = payload(1, vec![(3, rand_vec(3), 0.1)]);

        let mut forward = base.clone();
        aggregate(&mut forward, &[a.clone(), b.clone()], 0.1).unwrap();
        let mut reverse = base.clone();
        aggregate(&mut reverse, &[b, a], 0.1).unwrap();

        for (x, y) in forward.factors_raw().iter().zip(reverse.factors_raw()) {
            assert!((x - y).abs() <= 1e-12);
        }
        for (x, y) in forward.bias_raw().iter().zip(reverse.bias_raw()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn disjoint_batches_compose_exactly() {
        let mut model_ab = crate::model::ServerModel::zeros(6, 2);
        let a = payload(0, vec![(1, vec![0.3, 0.4], 0.5)]);
        let b = payload(1, vec![(2, vec![-0.1, 0.2], -0.9)]);
        aggregate(&mut model_ab, &[a.clone(), b.clone()], 0.05).unwrap();

        let mut model_seq = crate::model::ServerModel::zeros(6, 2);
        aggregate(&mut model_seq, &[a], 0.05).unwrap();
        aggregate(&mut model_seq, &[b], 0.05).unwrap();
        assert_eq!(model_ab, model_seq);
    }

    #[test]
    fn out_of_catalog_entry_names_the_sender() {
        let mut model = crate::model::ServerModel::zeros(3, 1);
        let bad = payload(7, vec![(9, vec![1.0], 0.0)]);
        match aggregate(&mut model, &[bad], 0.1) {
            Err(FplError::Protocol { sender: 7, item: 9, .. }) => {}
            other => panic!("expected protocol error, got {other:?}"),
        }
    }
}
