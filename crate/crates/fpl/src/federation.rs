//! Round orchestration: Distribution -> Computation -> Transmission ->
//! Aggregation, the sFPL/pFPL presets, and epoch-equivalence accounting.

use rand_chacha::ChaCha8Rng;

use crate::client::ClientState;
use crate::data::Dataset;
use crate::error::{FplError, Result};
use crate::eval;
use crate::model::{Hyperparams, ServerModel, UserVector};
use crate::rng;
use crate::server::{aggregate, select_cohort, Cohort};

/// Federation presets. Sequential mirrors centralized stochastic learning
/// (cohort of one, one triple); parallel involves every client each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    Parallel,
    Custom,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Sequential => "sfpl",
            Mode::Parallel => "pfpl",
            Mode::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FederationConfig {
    pub mode: Mode,
    pub hyperparams: Hyperparams,
    pub epochs: usize,
    pub seed: u64,
    /// Cutoff for the per-epoch validation F1 logged in the history.
    pub validation_cutoff: usize,
}

impl FederationConfig {
    /// Applies the mode preset to the hyperparameters and validates them.
    pub fn effective_hyperparams(&self, num_users: usize) -> Result<Hyperparams> {
        let mut h = self.hyperparams.clone();
        match self.mode {
            Mode::Sequential => {
                h.cohort_size = 1;
                h.triples_per_round = 1;
            }
            Mode::Parallel => {
                h.cohort_size = num_users;
                h.triples_per_round = 1;
            }
            Mode::Custom => {}
        }
        h.validate(num_users)?;
        Ok(h)
    }
}

/// rpe: rounds of communication equivalent to one centralized BPR epoch
/// (X^+ optimization steps). Ceiling division never undershoots.
pub fn rounds_per_epoch(x_plus: u64, cohort_size: usize, triples_per_round: usize) -> u64 {
    let steps_per_round = (cohort_size * triples_per_round) as u64;
    x_plus.div_ceil(steps_per_round)
}

/// Mutable training state for a federation run.
pub struct TrainingState {
    pub server_model: ServerModel,
    pub clients: Vec<ClientState>,
    pub round_counter: u64,
    pub rpe: u64,
    pub seed: u64,
    pub server_rng: ChaCha8Rng,
    /// Totals for disclosure auditing across the whole run.
    pub buffered_positive_items: u64,
    pub disclosed_positive_items: u64,
}

impl TrainingState {
    /// Initializes server model and client states from one master seed:
    /// item factors first, then user vectors in user order.
    pub fn init(config: &FederationConfig, dataset: &Dataset) -> Result<Self> {
        let h = config.effective_hyperparams(dataset.num_users())?;
        let mut init = rng::init_stream(config.seed);
        let server_model = ServerModel::init(dataset.num_items(), h.latent_dim, &mut init);
        let clients = dataset
            .train_positives
            .iter()
            .enumerate()
            .map(|(user, positives)| {
                ClientState::new(
                    user,
                    UserVector::init(h.latent_dim, &mut init),
                    positives.clone(),
                    config.seed,
                )
            })
            .collect();
        Ok(Self {
            server_model,
            clients,
            round_counter: 0,
            rpe: rounds_per_epoch(dataset.x_plus, h.cohort_size, h.triples_per_round),
            seed: config.seed,
            server_rng: rng::server_stream(config.seed),
            buffered_positive_items: 0,
            disclosed_positive_items: 0,
        })
    }
}

/// Report of a single round, for disclosure auditing.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: u64,
    pub cohort: Cohort,
    /// Payload entry counts, aligned with the cohort members that produced
    /// a payload (skipped members excluded).
    pub payload_sizes: Vec<usize>,
    /// Cohort members skipped as untrainable.
    pub skipped: Vec<usize>,
    /// Sum of ln sigma(x̂) over the round's triples.
    pub objective_sum: f64,
    pub triples: usize,
}

/// One Distribution -> Computation -> Transmission -> Aggregation cycle.
pub fn run_round(
    state: &mut TrainingState,
    h: &Hyperparams,
) -> Result<RoundReport> {
    let cohort = select_cohort(state.clients.len(), h.cohort_size, &mut state.server_rng)?;
    let snapshot = state.server_model.clone();

    let mut payloads = Vec::with_capacity(cohort.members.len());
    let mut payload_sizes = Vec::new();
    let mut skipped = Vec::new();
    let mut objective_sum = 0.0;
    let mut triples = 0;
    for &user in &cohort.members {
        match state.clients[user].local_round_with_stats(&snapshot, h) {
            Ok((payload, stats)) => {
                payload_sizes.push(payload.entries.len());
                payloads.push(payload);
                objective_sum += stats.objective_sum;
                triples += stats.triples;
                state.buffered_positive_items += stats.buffered_positive_items as u64;
                state.disclosed_positive_items += stats.disclosed_positive_items as u64;
            }
            Err(FplError::UntrainableClient { .. }) => skipped.push(user),
            Err(e) => return Err(e),
        }
    }
    aggregate(&mut state.server_model, &payloads, h.learning_rate)?;
    let report = RoundReport {
        round: state.round_counter,
        cohort,
        payload_sizes,
        skipped,
        objective_sum,
        triples,
    };
    state.round_counter += 1;
    Ok(report)
}

/// Per-epoch history line.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub rounds: u64,
    /// Mean ln sigma(x̂) over the epoch's triples (objective proxy).
    pub mean_objective: f64,
    pub validation_f1: Option<f64>,
}

/// Runs epochs x rpe rounds, logging one history line per epoch. If the
/// dataset carries a validation side, F1 at `validation_cutoff` is
/// evaluated after each epoch.
pub fn run_training(
    config: &FederationConfig,
    dataset: &Dataset,
) -> Result<(TrainingState, Vec<EpochStats>)> {
    let h = config.effective_hyperparams(dataset.num_users())?;
    let mut state = TrainingState::init(config, dataset)?;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut objective_sum = 0.0;
        let mut triples = 0usize;
        for _ in 0..state.rpe {
            let report = run_round(&mut state, &h)?;
            objective_sum += report.objective_sum;
            triples += report.triples;
        }
        let validation_f1 = dataset
            .validation_positives
            .as_ref()
            .map(|validation| {
                let recs = recommend_all(&state, dataset, config.validation_cutoff);
                let (p, r, _, _) = eval::precision_recall_at_n(
                    &recs,
                    validation,
                    config.validation_cutoff,
                );
                eval::f1_score(p, r)
            });
        history.push(EpochStats {
            epoch,
            rounds: state.rpe,
            mean_objective: if triples > 0 {
                objective_sum / triples as f64
            } else {
                0.0
            },
            validation_f1,
        });
    }
    Ok((state, history))
}

/// Client-side top-N lists for every user, excluding train positives.
pub fn recommend_all(state: &TrainingState, dataset: &Dataset, n: usize) -> Vec<Vec<usize>> {
    state
        .clients
        .iter()
        .enumerate()
        .map(|(user, client)| {
            crate::baselines::recommend_top_n(
                &client.user_vector,
                &state.server_model,
                &dataset.train_positives[user],
                n,
            )
        })
        .collect()
}
