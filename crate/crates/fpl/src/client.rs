//! Client-side state machine: private positives, the local user vector,
//! triple sampling, the local optimization round, and disclosure masking.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FplError, Result};
use crate::model::{bpr_gradient, Hyperparams, ServerModel, UserVector};
use crate::rng;

/// One (item, delta) line of a transmitted payload. Entries carry no
/// positive/negative role tag.
#[derive(Debug, Clone, PartialEq)]
pub struct PayloadEntry {
    pub item: usize,
    pub d_factors: Vec<f64>,
    pub d_bias: f64,
}

/// Masked per-round update a client sends to the server. Entries are
/// pre-summed per item and sorted by item index.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdatePayload {
    pub sender: usize,
    pub entries: Vec<PayloadEntry>,
}

/// Per-user private state. `positive_items` never leaves this struct except
/// through masked payloads.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub user_id: usize,
    pub user_vector: UserVector,
    positive_items: Vec<usize>, // sorted ascending
    pub sample_rng: ChaCha8Rng,
    pub mask_rng: ChaCha8Rng,
}

impl ClientState {
    pub fn new(
        user_id: usize,
        user_vector: UserVector,
        mut positive_items: Vec<usize>,
        seed: u64,
    ) -> Self {
        positive_items.sort_unstable();
        positive_items.dedup();
        Self {
            user_id,
            user_vector,
            positive_items,
            sample_rng: rng::client_sample_stream(seed, user_id),
            mask_rng: rng::client_mask_stream(seed, user_id),
        }
    }

    pub fn num_positives(&self) -> usize {
        self.positive_items.len()
    }

    /// Draws one training triple: pos uniform over the private positives,
    /// neg uniform over the complement via rejection sampling.
    pub fn sample_triple(&mut self, catalog_size: usize) -> Result<(usize, usize)> {
        sample_triple_with(
            self.user_id,
            &self.positive_items,
            catalog_size,
            &mut self.sample_rng,
        )
    }

    /// One Computation-phase round: T sampled triples against a working copy
    /// of the distributed snapshot, immediate local p_u updates, and a
    /// masked payload of unscaled item-side deltas.
    pub fn local_round(
        &mut self,
        snapshot: &ServerModel,
        h: &Hyperparams,
    ) -> Result<UpdatePayload> {
        Ok(self.local_round_with_stats(snapshot, h)?.0)
    }

    /// Same as `local_round`, additionally reporting the round's BPR
    /// objective contribution and disclosure counts.
    pub fn local_round_with_stats(
        &mut self,
        snapshot: &ServerModel,
        h: &Hyperparams,
    ) -> Result<(UpdatePayload, RoundStats)> {
        let alpha = h.learning_rate;
        let mut buffer = RoundBuffer::default();
        let mut objective_sum = 0.0;
        // For T = 1 the working copy can never be observed, so we skip the
        // clone and read the snapshot directly.
        let mut working = if h.triples_per_round > 1 {
            Some(snapshot.clone())
        } else {
            None
        };

        for _ in 0..h.triples_per_round {
            let model = working.as_ref().unwrap_or(snapshot);
            let (pos, neg) = sample_triple_with(
                self.user_id,
                &self.positive_items,
                model.num_items(),
                &mut self.sample_rng,
            )?;
            let g = bpr_gradient(&self.user_vector, model, pos, neg, h)?;
            let score = crate::model::triple_score(&self.user_vector, model, pos, neg)?;
            objective_sum += -(-score).exp().ln_1p();

            for (p, d) in self.user_vector.factors.iter_mut().zip(&g.d_user) {
                *p += alpha * d;
            }
            if let Some(w) = working.as_mut() {
                for (q, d) in w.item_factors_mut(pos).iter_mut().zip(&g.d_pos_factors) {
                    *q += alpha * d;
                }
                *w.item_bias_mut(pos) += alpha * g.d_pos_bias;
                for (q, d) in w.item_factors_mut(neg).iter_mut().zip(&g.d_neg_factors) {
                    *q += alpha * d;
                }
                *w.item_bias_mut(neg) += alpha * g.d_neg_bias;
            }

            buffer.add_positive(pos, &g.d_pos_factors, g.d_pos_bias);
            buffer.add_negative(neg, &g.d_neg_factors, g.d_neg_bias);
        }

        let buffered_positive_items = buffer.positives.len();
        let payload = mask_payload(buffer, h.disclosure_prob, &mut self.mask_rng, self.user_id);
        let transmitted: std::collections::BTreeSet<usize> =
            payload.entries.iter().map(|e| e.item).collect();
        let disclosed_positive_items = self
            .positive_items
            .iter()
            .filter(|i| transmitted.contains(i))
            .count();
        let stats = RoundStats {
            triples: h.triples_per_round,
            objective_sum,
            buffered_positive_items,
            disclosed_positive_items,
        };
        Ok((payload, stats))
    }
}

/// Per-round client-side accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundStats {
    pub triples: usize,
    /// Sum of ln sigma(x̂_uij) across the round's triples.
    pub objective_sum: f64,
    /// Distinct positive-role items buffered this round.
    pub buffered_positive_items: usize,
    /// Distinct positive-role items that survived masking.
    pub disclosed_positive_items: usize,
}

pub(crate) fn sample_triple_with(
    user_id: usize,
    positives: &[usize],
    catalog_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, usize)> {
    if positives.is_empty() {
        return Err(FplError::UntrainableClient {
            user: user_id,
            reason: "no positive items".into(),
        });
    }
    if positives.len() >= catalog_size {
        return Err(FplError::UntrainableClient {
            user: user_id,
            reason: "every catalog item is positive; no negative exists".into(),
        });
    }
    let pos = positives[rng.random_range(0..positives.len())];
    let neg = loop {
        let candidate = rng.random_range(0..catalog_size);
        if positives.binary_search(&candidate).is_err() {
            break candidate;
        }
    };
    Ok((pos, neg))
}

#[derive(Debug, Clone, Default)]
struct Accum {
    d_factors: Vec<f64>,
    d_bias: f64,
}

impl Accum {
    fn add(&mut self, d_factors: &[f64], d_bias: f64) {
        if self.d_factors.is_empty() {
            self.d_factors = vec![0.0; d_factors.len()];
        }
        for (a, d) in self.d_factors.iter_mut().zip(d_factors) {
            *a += d;
        }
        self.d_bias += d_bias;
    }
}

/// Per-round delta buffers, kept separate by role until masking.
#[derive(Debug, Clone, Default)]
pub(crate) struct RoundBuffer {
    positives: BTreeMap<usize, Accum>,
    negatives: BTreeMap<usize, Accum>,
}

impl RoundBuffer {
    pub(crate) fn add_positive(&mut self, item: usize, d_factors: &[f64], d_bias: f64) {
        self.positives.entry(item).or_default().add(d_factors, d_bias);
    }

    pub(crate) fn add_negative(&mut self, item: usize, d_factors: &[f64], d_bias: f64) {
        self.negatives.entry(item).or_default().add(d_factors, d_bias);
    }
}

/// Disclosure masking: negative-role entries always transmit; each distinct
/// positive-role item transmits with probability pi (one Bernoulli draw per
/// item per round). Surviving entries are merged per item.
pub(crate) fn mask_payload(
    buffer: RoundBuffer,
    pi: f64,
    rng: &mut ChaCha8Rng,
    sender: usize,
) -> UpdatePayload {
    let mut merged: BTreeMap<usize, Accum> = buffer.negatives;
    for (item, acc) in buffer.positives {
        let disclose = rng.random::<f64>() < pi;
        if disclose {
            merged
                .entry(item)
                .or_default()
                .add(&acc.d_factors, acc.d_bias);
        }
    }
    UpdatePayload {
        sender,
        entries: merged
            .into_iter()
            .map(|(item, acc)| PayloadEntry {
                item,
                d_factors: acc.d_factors,
                d_bias: acc.d_bias,
            })
            .collect(),
    }
}
