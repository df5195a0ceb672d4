//! Factorization model core: prediction, triple scoring, and the BPR
//! stochastic gradient.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{FplError, Result};

/// Standard deviation for factor initialization; biases start at zero.
pub const INIT_STDDEV: f64 = 0.1;

/// Global item-side model: item factor matrix Q (row-major, `latent_dim`
/// columns) and item bias vector b.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerModel {
    pub latent_dim: usize,
    factors: Vec<f64>,
    bias: Vec<f64>,
}

impl ServerModel {
    pub fn zeros(num_items: usize, latent_dim: usize) -> Self {
        Self {
            latent_dim,
            factors: vec![0.0; num_items * latent_dim],
            bias: vec![0.0; num_items],
        }
    }

    /// Gaussian-initialized factors, zero biases.
    pub fn init<R: Rng>(num_items: usize, latent_dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, INIT_STDDEV).expect("valid stddev");
        let factors = (0..num_items * latent_dim)
            .map(|_| normal.sample(rng))
            .collect();
        Self {
            latent_dim,
            factors,
            bias: vec![0.0; num_items],
        }
    }

    pub fn from_parts(latent_dim: usize, factors: Vec<f64>, bias: Vec<f64>) -> Self {
        assert_eq!(factors.len(), bias.len() * latent_dim);
        Self {
            latent_dim,
            factors,
            bias,
        }
    }

    pub fn num_items(&self) -> usize {
        self.bias.len()
    }

    pub fn item_factors(&self, item: usize) -> &[f64] {
        &self.factors[item * self.latent_dim..(item + 1) * self.latent_dim]
    }

    pub fn item_factors_mut(&mut self, item: usize) -> &mut [f64] {
        &mut self.factors[item * self.latent_dim..(item + 1) * self.latent_dim]
    }

    pub fn item_bias(&self, item: usize) -> f64 {
        self.bias[item]
    }

    pub fn item_bias_mut(&mut self, item: usize) -> &mut f64 {
        &mut self.bias[item]
    }

    pub fn factors_raw(&self) -> &[f64] {
        &self.factors
    }

    pub fn bias_raw(&self) -> &[f64] {
        &self.bias
    }

    pub fn check_item(&self, item: usize) -> Result<()> {
        if item >= self.num_items() {
            return Err(FplError::CatalogBounds {
                item,
                catalog: self.num_items(),
            });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.factors.iter().all(|v| v.is_finite()) && self.bias.iter().all(|v| v.is_finite())
    }
}

/// A user's private latent vector p_u.
#[derive(Debug, Clone, PartialEq)]
pub struct UserVector {
    pub factors: Vec<f64>,
}

impl UserVector {
    pub fn init<R: Rng>(latent_dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, INIT_STDDEV).expect("valid stddev");
        Self {
            factors: (0..latent_dim).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn zeros(latent_dim: usize) -> Self {
        Self {
            factors: vec![0.0; latent_dim],
        }
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub reg_user: f64,
    pub reg_pos_item: f64,
    pub reg_neg_item: f64,
    pub disclosure_prob: f64,
    pub triples_per_round: usize,
    pub cohort_size: usize,
}

impl Hyperparams {
    /// Defaults derive the regularization terms from the learning rate:
    /// user and positive-item at 1/20 of alpha, negative-item at 1/200.
    pub fn with_defaults(latent_dim: usize, learning_rate: f64) -> Self {
        Self {
            latent_dim,
            learning_rate,
            reg_user: learning_rate / 20.0,
            reg_pos_item: learning_rate / 20.0,
            reg_neg_item: learning_rate / 200.0,
            disclosure_prob: 1.0,
            triples_per_round: 1,
            cohort_size: 1,
        }
    }

    pub fn validate(&self, num_users: usize) -> Result<()> {
        if self.latent_dim < 1 {
            return Err(FplError::Config("latent_dim must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(FplError::Config("learning_rate must be > 0".into()));
        }
        if self.reg_user < 0.0 || self.reg_pos_item < 0.0 || self.reg_neg_item < 0.0 {
            return Err(FplError::Config("regularization must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.disclosure_prob) {
            return Err(FplError::Config(
                "disclosure_prob must lie in [0, 1]".into(),
            ));
        }
        if self.triples_per_round < 1 {
            return Err(FplError::Config("triples_per_round must be >= 1".into()));
        }
        if self.cohort_size < 1 || self.cohort_size > num_users {
            return Err(FplError::Config(format!(
                "cohort_size must lie in [1, {num_users}]"
            )));
        }
        Ok(())
    }
}

/// Ascent direction for one BPR triple.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleGradient {
    pub pos_item: usize,
    pub neg_item: usize,
    pub d_user: Vec<f64>,
    pub d_pos_factors: Vec<f64>,
    pub d_pos_bias: f64,
    pub d_neg_factors: Vec<f64>,
    pub d_neg_bias: f64,
}

/// x̂_ui = b_i + p_u · q_i
pub fn predict_score(user: &UserVector, model: &ServerModel, item: usize) -> Result<f64> {
    model.check_item(item)?;
    debug_assert_eq!(user.len(), model.latent_dim);
    let q = model.item_factors(item);
    let dot: f64 = user.factors.iter().zip(q).map(|(p, q)| p * q).sum();
    Ok(model.item_bias(item) + dot)
}

/// x̂_uij = x̂_ui − x̂_uj
pub fn triple_score(
    user: &UserVector,
    model: &ServerModel,
    pos: usize,
    neg: usize,
) -> Result<f64> {
    if pos == neg {
        return Err(FplError::InvalidTriple { item: pos });
    }
    Ok(predict_score(user, model, pos)? - predict_score(user, model, neg)?)
}

/// Overflow-safe s = e^{−x} / (1 + e^{−x}) = 1 / (1 + e^{x}).
pub fn sigmoid_factor(x: f64) -> f64 {
    1.0 / (1.0 + x.exp())
}

/// BPR stochastic gradient for one (u, i, j) triple: ascent directions for
/// p_u, q_i, b_i, q_j, b_j.
pub fn bpr_gradient(
    user: &UserVector,
    model: &ServerModel,
    pos: usize,
    neg: usize,
    h: &Hyperparams,
) -> Result<TripleGradient> {
    let s = sigmoid_factor(triple_score(user, model, pos, neg)?);
    let qi = model.item_factors(pos);
    let qj = model.item_factors(neg);

    let d_user: Vec<f64> = user
        .factors
        .iter()
        .zip(qi.iter().zip(qj))
        .map(|(p, (i, j))| s * (i - j) - h.reg_user * p)
        .collect();
    let d_pos_factors: Vec<f64> = user
        .factors
        .iter()
        .zip(qi)
        .map(|(p, q)| s * p - h.reg_pos_item * q)
        .collect();
    let d_neg_factors: Vec<f64> = user
        .factors
        .iter()
        .zip(qj)
        .map(|(p, q)| -s * p - h.reg_neg_item * q)
        .collect();

    Ok(TripleGradient {
        pos_item: pos,
        neg_item: neg,
        d_user,
        d_pos_factors,
        d_pos_bias: s - h.reg_pos_item * model.item_bias(pos),
        d_neg_factors,
        d_neg_bias: -s - h.reg_neg_item * model.item_bias(neg),
    })
}
