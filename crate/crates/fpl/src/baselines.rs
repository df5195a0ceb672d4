//! Reference recommenders: centralized BPR-MF, Top-Pop, and Random.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::client::sample_triple_with;
use crate::data::Dataset;
use crate::error::Result;
use crate::model::{bpr_gradient, Hyperparams, ServerModel, UserVector};
use crate::rng;

/// Full centralized factorization model Θ = ⟨P, Q, b⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedModel {
    pub server: ServerModel,
    pub user_vectors: Vec<UserVector>,
}

/// Triple sampling strategy for centralized BPR.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Uniform over the flattened positive interactions.
    UniformOverK,
    /// Draw the user uniformly, then delegate to the per-client triple
    /// sampler (shares random streams with the federation).
    UserWise,
}

impl SamplingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingMode::UniformOverK => "uniform-over-k",
            SamplingMode::UserWise => "user-wise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uniform-over-k" => Some(SamplingMode::UniformOverK),
            "user-wise" => Some(SamplingMode::UserWise),
            _ => None,
        }
    }
}

fn sgd_step(
    user: &mut UserVector,
    model: &mut ServerModel,
    pos: usize,
    neg: usize,
    h: &Hyperparams,
) -> Result<f64> {
    let g = bpr_gradient(user, model, pos, neg, h)?;
    let score = crate::model::triple_score(user, model, pos, neg)?;
    let alpha = h.learning_rate;
    for (p, d) in user.factors.iter_mut().zip(&g.d_user) {
        *p += alpha * d;
    }
    for (q, d) in model.item_factors_mut(pos).iter_mut().zip(&g.d_pos_factors) {
        *q += alpha * d;
    }
    *model.item_bias_mut(pos) += alpha * g.d_pos_bias;
    for (q, d) in model.item_factors_mut(neg).iter_mut().zip(&g.d_neg_factors) {
        *q += alpha * d;
    }
    *model.item_bias_mut(neg) += alpha * g.d_neg_bias;
    Ok(-(-score).exp().ln_1p())
}

/// Per-epoch training statistics (mean ln sigma over the epoch's steps).
#[derive(Debug, Clone)]
pub struct BprEpochStats {
    pub epoch: usize,
    pub mean_objective: f64,
}

/// Centralized BPR-MF: epochs x X^+ SGD steps with θ ← θ + α·Δθ.
///
/// Initialization and, in user-wise mode, the random streams are shared
/// with the federation so sFPL at full disclosure walks the same
/// trajectory.
pub fn train_bpr_centralized(
    dataset: &Dataset,
    h: &Hyperparams,
    epochs: usize,
    sampling_mode: SamplingMode,
    seed: u64,
) -> Result<(CentralizedModel, Vec<BprEpochStats>)> {
    h.validate(dataset.num_users().max(1))?;
    let mut init = rng::init_stream(seed);
    let mut model = ServerModel::init(dataset.num_items(), h.latent_dim, &mut init);
    let mut users: Vec<UserVector> = (0..dataset.num_users())
        .map(|_| UserVector::init(h.latent_dim, &mut init))
        .collect();

    let mut server_rng = rng::server_stream(seed);
    let mut user_rngs: Vec<ChaCha8Rng> = (0..dataset.num_users())
        .map(|u| rng::client_sample_stream(seed, u))
        .collect();
    let flat_positives: Vec<(usize, usize)> = dataset
        .train_positives
        .iter()
        .enumerate()
        .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
        .collect();

    let catalog = dataset.num_items();
    let steps_per_epoch = dataset.x_plus as usize;
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut objective_sum = 0.0;
        let mut steps_taken = 0usize;
        for _ in 0..steps_per_epoch {
            let (u, pos, neg) = match sampling_mode {
                SamplingMode::UserWise => {
                    let u = server_rng.random_range(0..dataset.num_users());
                    match sample_triple_with(
                        u,
                        &dataset.train_positives[u],
                        catalog,
                        &mut user_rngs[u],
                    ) {
                        Ok((pos, neg)) => (u, pos, neg),
                        // untrainable user: the step is consumed, as in sFPL
                        Err(_) => continue,
                    }
                }
                SamplingMode::UniformOverK => {
                    let idx = server_rng.random_range(0..flat_positives.len());
                    let (u, pos) = flat_positives[idx];
                    let positives = &dataset.train_positives[u];
                    if positives.len() >= catalog {
                        continue;
                    }
                    let neg = loop {
                        let candidate = server_rng.random_range(0..catalog);
                        if positives.binary_search(&candidate).is_err() {
                            break candidate;
                        }
                    };
                    (u, pos, neg)
                }
            };
            objective_sum += sgd_step(&mut users[u], &mut model, pos, neg, h)?;
            steps_taken += 1;
        }
        history.push(BprEpochStats {
            epoch,
            mean_objective: if steps_taken > 0 {
                objective_sum / steps_taken as f64
            } else {
                0.0
            },
        });
    }
    Ok((
        CentralizedModel {
            server: model,
            user_vectors: users,
        },
        history,
    ))
}

/// Top-n items by descending score, excluding the (sorted) exclusion set,
/// ties broken by ascending item index.
pub fn recommend_top_n(
    user: &UserVector,
    model: &ServerModel,
    exclude: &[usize],
    n: usize,
) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = (0..model.num_items())
        .filter(|item| exclude.binary_search(item).is_err())
        .map(|item| {
            let q = model.item_factors(item);
            let dot: f64 = user.factors.iter().zip(q).map(|(p, q)| p * q).sum();
            (item, model.item_bias(item) + dot)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.into_iter().take(n).map(|(item, _)| item).collect()
}

/// Global popularity counts over the train side.
pub fn popularity_counts(dataset: &Dataset) -> Vec<u64> {
    let mut counts = vec![0u64; dataset.num_items()];
    for items in &dataset.train_positives {
        for &i in items {
            counts[i] += 1;
        }
    }
    counts
}

/// Most-popular recommendation: items ranked by train-positive count
/// (ties by ascending index), filtered per user by train positives.
pub fn top_pop(dataset: &Dataset, n: usize) -> Vec<Vec<usize>> {
    let counts = popularity_counts(dataset);
    let mut ranked: Vec<usize> = (0..dataset.num_items()).collect();
    ranked.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    dataset
        .train_positives
        .iter()
        .map(|exclude| {
            ranked
                .iter()
                .copied()
                .filter(|item| exclude.binary_search(item).is_err())
                .take(n)
                .collect()
        })
        .collect()
}

/// Uniform n-subset of the eligible items per user, deterministic per
/// (seed, user).
pub fn random_recommender(
    catalog_size: usize,
    exclusions: &[Vec<usize>],
    n: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    exclusions
        .iter()
        .enumerate()
        .map(|(user, exclude)| {
            let mut rng = rng::client_sample_stream(seed, user);
            let mut eligible: Vec<usize> = (0..catalog_size)
                .filter(|item| exclude.binary_search(item).is_err())
                .collect();
            let take = n.min(eligible.len());
            for slot in 0..take {
                let pick = rng.random_range(slot..eligible.len());
                eligible.swap(slot, pick);
            }
            eligible.truncate(take);
            eligible
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;
    use std::collections::HashSet;

    fn dataset(seed: u64) -> Dataset {
        let records = data::generate_synthetic(8, 20, 2, 0.3, 0.5, seed).unwrap();
        let records = data::filter_and_binarize(&records, 1);
        data::temporal_split(&records, 0.8).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initialized_model() {
        let ds = dataset(1);
        let h = Hyperparams::with_defaults(2, 0.05);
        let (m, history) =
            train_bpr_centralized(&ds, &h, 0, SamplingMode::UserWise, 7).unwrap();
        let mut init = rng::init_stream(7);
        let expected = ServerModel::init(ds.num_items(), 2, &mut init);
        assert_eq!(m.server, expected);
        assert!(history.is_empty());
    }

    #[test]
    fn single_step_worked_example() {
        // F = 1: p = 0.1, q_i = 0.2, q_j = -0.1, biases 0
        let mut model = ServerModel::from_parts(1, vec![0.2, -0.1], vec![0.0, 0.0]);
        let mut user = UserVector {
            factors: vec![0.1],
        };
        let mut h = Hyperparams::with_defaults(1, 0.05);
        h.reg_user = 0.0;
        h.reg_pos_item = 0.0;
        h.reg_neg_item = 0.0;
        sgd_step(&mut user, &mut model, 0, 1, &h).unwrap();
        let s = 1.0 / (1.0 + 0.03f64.exp()); // sigma(-0.03)
        assert!((s - 0.4925).abs() < 1e-4);
        assert!((user.factors[0] - (0.1 + 0.05 * s * 0.3)).abs() < 1e-15);
        assert!((model.item_bias(0) - 0.05 * s).abs() < 1e-15);
        assert!((model.item_bias(1) + 0.05 * s).abs() < 1e-15);
    }

    #[test]
    fn both_sampling_modes_train() {
        let ds = dataset(2);
        let h = Hyperparams::with_defaults(2, 0.05);
        for mode in [SamplingMode::UniformOverK, SamplingMode::UserWise] {
            let (m, history) = train_bpr_centralized(&ds, &h, 2, mode, 3).unwrap();
            assert!(m.server.all_finite());
            assert_eq!(history.len(), 2);
        }
    }

    #[test]
    fn top_n_is_the_argmax_excluding_train() {
        let model = ServerModel::from_parts(1, vec![1.0, 3.0, 2.0], vec![0.0, 0.0, 0.0]);
        let user = UserVector {
            factors: vec![1.0],
        };
        assert_eq!(recommend_top_n(&user, &model, &[], 1), vec![1]);
        assert_eq!(recommend_top_n(&user, &model, &[1], 1), vec![2]);
    }

    #[test]
    fn top_n_with_everything_excluded_is_empty() {
        let model = ServerModel::from_parts(1, vec![1.0, 2.0], vec![0.0, 0.0]);
        let user = UserVector {
            factors: vec![1.0],
        };
        assert!(recommend_top_n(&user, &model, &[0, 1], 5).is_empty());
    }

    #[test]
    fn top_n_ties_break_by_lower_index() {
        let model = ServerModel::from_parts(1, vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]);
        let user = UserVector {
            factors: vec![0.0],
        };
        assert_eq!(recommend_top_n(&user, &model, &[], 2), vec![0, 1]);
    }

    fn hand_dataset(train: Vec<Vec<usize>>, num_items: usize) -> Dataset {
        let num_users = train.len();
        let x_plus = train.iter().map(|s| s.len()).sum::<usize>() as u64;
        Dataset {
            user_keys: (0..num_users).map(|u| format!("u{u}")).collect(),
            item_keys: (0..num_items).map(|i| format!("i{i}")).collect(),
            train_records: Vec::new(),
            validation_records: None,
            test_records: Vec::new(),
            train_positives: train,
            validation_positives: None,
            test_positives: vec![Vec::new(); num_users],
            x_plus,
            dropped_users: Vec::new(),
        }
    }

    #[test]
    fn top_pop_ordering() {
        // counts (5, 2, 9) -> order [2, 0, 1]
        let mut train = vec![vec![0, 1, 2]; 2]; // items 0,1,2 twice
        train.extend(vec![vec![0, 2]; 3]); // items 0,2 three more times
        train.extend(vec![vec![2]; 4]); // item 2 four more times
        train.push(vec![]); // a user with no consumption
        let ds = hand_dataset(train, 3);
        assert_eq!(popularity_counts(&ds), vec![5, 2, 9]);

        let lists = top_pop(&ds, 3);
        // fresh user sees the global popularity order
        assert_eq!(lists[9], vec![2, 0, 1]);
        // a user who consumed the top item starts at the rank-2 item
        assert_eq!(lists[5], vec![0, 1]);
    }

    #[test]
    fn top_pop_filters_consumed_items() {
        let ds = dataset(5);
        let lists = top_pop(&ds, 5);
        for (u, list) in lists.iter().enumerate() {
            for item in list {
                assert!(ds.train_positives[u].binary_search(item).is_err());
            }
        }
    }

    #[test]
    fn random_recommender_is_deterministic_and_complete() {
        let exclusions = vec![vec![0, 1], vec![3]];
        let a = random_recommender(6, &exclusions, 10, 9);
        let b = random_recommender(6, &exclusions, 10, 9);
        assert_eq!(a, b);
        // n >= eligible: permutation of all eligible items
        let set: HashSet<usize> = a[0].iter().copied().collect();
        assert_eq!(set, HashSet::from([2, 3, 4, 5]));
        assert_eq!(a[0].len(), 4);
    }

    #[test]
    fn random_recommender_uniform_exposure() {
        let exclusions = vec![vec![]; 4000];
        let lists = random_recommender(20, &exclusions, 2, 31);
        let mut counts = vec![0f64; 20];
        for l in &lists {
            for &i in l {
                counts[i] += 1.0;
            }
        }
        let expected = 4000.0 * 2.0 / 20.0;
        // chi-square with 19 df; 0.01 critical value ~ 36.2
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        assert!(chi2 < 36.2, "chi2 {chi2}");
    }

    #[test]
    fn user_wise_bpr_matches_sfpl_full_disclosure() {
        let ds = dataset(11);
        let h = Hyperparams::with_defaults(2, 0.05);
        let seed = 17;
        let (centralized, _) =
            train_bpr_centralized(&ds, &h, 3, SamplingMode::UserWise, seed).unwrap();

        let cfg = crate::federation::FederationConfig {
            mode: crate::federation::Mode::Sequential,
            hyperparams: h.clone(),
            epochs: 3,
            seed,
            validation_cutoff: 10,
        };
        let (state, _) = crate::federation::run_training(&cfg, &ds).unwrap();

        for (a, b) in centralized
            .server
            .factors_raw()
            .iter()
            .zip(state.server_model.factors_raw())
        {
            assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in centralized
            .server
            .bias_raw()
            .iter()
            .zip(state.server_model.bias_raw())
        {
            assert!((a - b).abs() <= 1e-12);
        }
        for (cu, fu) in centralized.user_vectors.iter().zip(&state.clients) {
            for (a, b) in cu.factors.iter().zip(&fu.user_vector.factors) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
