use serde::{Deserialize, Serialize};

use super::{Policy, PreparedPrompt};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig, SparseGrad};
use crate::prompt::ResponseRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    pub adam: AdamConfig,
    /// Full-batch steps.
    pub epochs: usize,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            epochs: 30,
        }
    }
}

/// An annotated prompt with its gold response as pool positions.
#[derive(Debug, Clone)]
pub struct SftExample {
    pub prompt: PreparedPrompt,
    pub target: Vec<usize>,
}

impl SftExample {
    pub fn new(prompt: PreparedPrompt, response: &ResponseRecord) -> Result<Self> {
        if response.queries.len() != prompt.n() {
            return Err(Error::Data(format!(
                "annotation has {} queries, prompt expects {}",
                response.queries.len(),
                prompt.n()
            )));
        }
        let target = prompt.indices_of(response)?;
        Ok(Self { prompt, target })
    }
}

#[derive(Debug, Clone)]
pub struct SftOutcome {
    pub policy: Policy,
    /// Objective before each step, then after the last one.
    pub losses: Vec<f64>,
}

/// `-mean log π(y|x)` over the examples.
pub fn sft_loss(policy: &Policy, data: &[SftExample]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    -data
        .iter()
        .map(|e| policy.log_prob_indices(&e.prompt, &e.target))
        .sum::<f64>()
        / data.len() as f64
}

/// Response-level maximum likelihood, full-batch Adam.
pub fn sft_train(policy: &Policy, data: &[SftExample], config: &SftConfig) -> Result<SftOutcome> {
    let mut p = policy.clone();
    let mut losses = Vec::with_capacity(config.epochs + 1);
    if data.is_empty() {
        return Err(Error::Config(
            "SFT needs at least one annotated example".into(),
        ));
    }
    let dim = p.weights.len();
    let mut adam = Adam::new(config.adam, dim);
    let mut grad = SparseGrad::new(dim);
    let scale = -1.0 / data.len() as f64;
    for _ in 0..config.epochs {
        adam.begin_step();
        let mut lp = 0.0;
        for e in data {
            lp += p.accumulate_log_prob_grad(&e.prompt, &e.target, scale, &mut grad);
        }
        losses.push(-lp / data.len() as f64);
        for (i, g) in grad.drain() {
            p.weights[i as usize] += adam.delta(i as usize, g);
        }
    }
    losses.push(sft_loss(&p, data));
    if config.epochs > 0 {
        p.version += 1;
    }
    Ok(SftOutcome { policy: p, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::tests::toy;

    #[test]
    fn memorizes_a_single_pair() {
        let pp = toy(16, 3, 1 << 10);
        let ex = SftExample::new(pp.clone(), &pp.response(&[5, 2, 9])).unwrap();
        let p0 = Policy::uniform(1 << 10, 1.0).unwrap();
        let cfg = SftConfig {
            epochs: 300,
            ..SftConfig::default()
        };
        let out = sft_train(&p0, std::slice::from_ref(&ex), &cfg).unwrap();
        assert!(out.policy.log_prob_indices(&pp, &ex.target).exp() >= 0.95);
    }

    #[test]
    fn zero_steps_leave_policy_unchanged() {
        let pp = toy(6, 2, 1 << 8);
        let ex = SftExample::new(pp.clone(), &pp.response(&[1, 0])).unwrap();
        let p0 = Policy::uniform(1 << 8, 1.0).unwrap();
        let out = sft_train(
            &p0,
            &[ex],
            &SftConfig {
                epochs: 0,
                ..SftConfig::default()
            },
        )
        .unwrap();
        assert_eq!(out.policy, p0);
    }

    #[test]
    fn objective_decreases() {
        let pp = toy(12, 3, 1 << 10);
        let data: Vec<_> = [[0, 1, 2], [3, 4, 5], [0, 4, 7], [1, 2, 3]]
            .iter()
            .map(|y| SftExample::new(pp.clone(), &pp.response(y)).unwrap())
            .collect();
        let out = sft_train(
            &Policy::uniform(1 << 10, 1.0).unwrap(),
            &data,
            &SftConfig::default(),
        )
        .unwrap();
        assert!(out.losses[1] < out.losses[0]);
        assert!(out.losses.last().unwrap() < &out.losses[0]);
    }

    #[test]
    fn absent_query_is_data_error() {
        let pp = toy(6, 2, 1 << 8);
        let r = ResponseRecord::new(vec!["cand0 w0".into(), "missing".into()]);
        assert!(matches!(SftExample::new(pp, &r), Err(Error::Data(_))));
    }
}
