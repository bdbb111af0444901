use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig, SparseGrad};
use crate::policy::{Policy, PreparedPrompt, ReferenceSnapshot};
use crate::text::{log_sigmoid, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpoConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig {
                lr: 0.02,
                ..AdamConfig::default()
            },
            epochs: 4,
            batch_size: 32,
        }
    }
}

/// One preference pair as pool positions, with cached reference log-probabilities.
#[derive(Debug, Clone)]
pub struct DpoExample<'a> {
    pub prompt: &'a PreparedPrompt,
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
    pub ref_chosen: f64,
    pub ref_rejected: f64,
}

impl<'a> DpoExample<'a> {
    /// Fails with a data error when either reference log-probability is not finite.
    pub fn new(
        reference: &ReferenceSnapshot,
        prompt: &'a PreparedPrompt,
        chosen: Vec<usize>,
        rejected: Vec<usize>,
    ) -> Result<Self> {
        let ref_chosen = reference.log_prob_indices(prompt, &chosen);
        let ref_rejected = reference.log_prob_indices(prompt, &rejected);
        if !ref_chosen.is_finite() || !ref_rejected.is_finite() {
            return Err(Error::Data(
                "reference log-probability is not finite".into(),
            ));
        }
        Ok(Self {
            prompt,
            chosen,
            rejected,
            ref_chosen,
            ref_rejected,
        })
    }

    fn margin(&self, policy: &Policy, beta: f64) -> f64 {
        let dw = policy.log_prob_indices(self.prompt, &self.chosen) - self.ref_chosen;
        let dl = policy.log_prob_indices(self.prompt, &self.rejected) - self.ref_rejected;
        beta * (dw - dl)
    }
}

/// `-mean log σ(β (Δ_chosen - Δ_rejected))`, `Δ = log π - log π_ref`.
pub fn dpo_loss(policy: &Policy, examples: &[DpoExample<'_>], beta: f64) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("DPO loss over no examples".into()));
    }
    let mut total = 0.0;
    for e in examples {
        let z = e.margin(policy, beta);
        if !z.is_finite() {
            return Err(Error::Data("non-finite DPO margin".into()));
        }
        total -= log_sigmoid(z);
    }
    Ok(total / examples.len() as f64)
}

/// Add `scale * ∇ dpo_loss` for `examples` into `grad`; returns the summed loss.
pub fn accumulate_dpo_grad(
    policy: &Policy,
    examples: &[&DpoExample<'_>],
    beta: f64,
    scale: f64,
    grad: &mut SparseGrad,
) -> f64 {
    let mut total = 0.0;
    for e in examples {
        let z = e.margin(policy, beta);
        total -= log_sigmoid(z);
        // d/dz [-log σ(z)] = -σ(-z)
        let g = -sigmoid(-z) * beta * scale;
        policy.accumulate_log_prob_grad(e.prompt, &e.chosen, g, grad);
        policy.accumulate_log_prob_grad(e.prompt, &e.rejected, -g, grad);
    }
    total
}

/// Minibatch Adam on the DPO loss.
pub fn dpo_train(
    policy: &Policy,
    examples: &[DpoExample<'_>],
    beta: f64,
    config: &DpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Policy> {
    if config.batch_size == 0 {
        return Err(Error::Config("DPO batch_size must be positive".into()));
    }
    let mut p = policy.clone();
    let dim = p.weights.len();
    let mut adam = Adam::new(config.adam, dim);
    let mut grad = SparseGrad::new(dim);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for batch in order.chunks(config.batch_size) {
            let refs: Vec<&DpoExample<'_>> = batch.iter().map(|&i| &examples[i]).collect();
            adam.begin_step();
            accumulate_dpo_grad(&p, &refs, beta, 1.0 / batch.len() as f64, &mut grad);
            for (i, g) in grad.drain() {
                p.weights[i as usize] += adam.delta(i as usize, g);
            }
        }
    }
    p.version += 1;
    Ok(p)
}
