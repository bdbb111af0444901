use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::click::UserClickModel;
use super::universe::QueryUniverse;
use crate::error::{Error, Result};
use crate::prompt::{ComponentKind, PromptRecord, PromptWire, ResponseRecord};
use crate::text;

/// A serving stack: given the user's query and session history, build the
/// prompt and produce the displayed response.
pub trait Recommender {
    fn recommend(
        &self,
        user_query: &str,
        history: &[String],
        rng: &mut ChaCha8Rng,
    ) -> Result<(PromptRecord, ResponseRecord)>;
}

/// One displayed recommendation list and the clicks it received.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpressionRecord {
    pub prompt: PromptRecord,
    pub response: ResponseRecord,
    pub clicks: Vec<u8>,
    pub component: ComponentKind,
    pub day: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImpressionWire {
    prompt: PromptWire,
    response: ResponseRecord,
    clicks: Vec<u8>,
    component: ComponentKind,
    day: u32,
}

impl ImpressionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.clicks.len() != self.response.queries.len() {
            return Err(Error::Data(format!(
                "{} clicks for {} displayed queries",
                self.clicks.len(),
                self.response.queries.len()
            )));
        }
        if self.clicks.iter().any(|&b| b > 1) {
            return Err(Error::Data("click entries must be 0 or 1".into()));
        }
        if self.component == ComponentKind::SingleChoice
            && self.clicks.iter().filter(|&&b| b == 1).count() > 1
        {
            return Err(Error::Data(
                "single-choice record with more than one click".into(),
            ));
        }
        Ok(())
    }

    pub fn has_click(&self) -> bool {
        self.clicks.contains(&1)
    }

    pub fn to_json_line(&self) -> Result<String> {
        let wire = ImpressionWire {
            prompt: PromptWire::from_prompt(&self.prompt),
            response: self.response.clone(),
            clicks: self.clicks.clone(),
            component: self.component,
            day: self.day,
        };
        Ok(serde_json::to_string(&wire)?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let w: ImpressionWire = serde_json::from_str(line)?;
        let prompt = w
            .prompt
            .into_prompt(w.response.queries.len(), w.component)?;
        let r = Self {
            prompt,
            response: w.response,
            clicks: w.clicks,
            component: w.component,
            day: w.day,
        };
        r.validate()?;
        Ok(r)
    }
}

/// Draw the click vector for one impression given per-slot probabilities.
pub fn sample_clicks(probs: &[f64], kind: ComponentKind, rng: &mut ChaCha8Rng) -> Vec<u8> {
    match kind {
        ComponentKind::MultiChoice => probs
            .iter()
            .map(|&p| u8::from(rng.gen::<f64>() < p))
            .collect(),
        ComponentKind::SingleChoice => {
            // categorical over {slot_1..slot_N, no click}; renormalized when oversubscribed
            let total: f64 = probs.iter().sum();
            let scale = if total > 1.0 { 1.0 / total } else { 1.0 };
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut out = vec![0u8; probs.len()];
            for (k, &p) in probs.iter().enumerate() {
                acc += p * scale;
                if u < acc {
                    out[k] = 1;
                    break;
                }
            }
            out
        }
    }
}

/// Simulate one day of traffic: `n_sessions` search sessions, each query of
/// which is served by `recommender` and clicked according to `click_model`.
pub fn simulate_day(
    universe: &QueryUniverse,
    click_model: &UserClickModel,
    recommender: &dyn Recommender,
    n_sessions: usize,
    day: u32,
    seed: u64,
) -> Result<Vec<ImpressionRecord>> {
    let day_seed = text::indexed(seed, day as u64);
    let mut out = Vec::with_capacity(n_sessions * 3);
    for s in 0..n_sessions {
        let mut rng = text::rng(text::indexed(day_seed, s as u64));
        let session = universe.sample_session(&mut rng);
        for i in 0..session.len() {
            let user = &universe.queries[session[i]];
            let history: Vec<String> = session[..i]
                .iter()
                .map(|&j| universe.queries[j].text.clone())
                .collect();
            let (prompt, response) = recommender.recommend(&user.text, &history, &mut rng)?;
            let mut probs = Vec::with_capacity(response.queries.len());
            for (k, q) in response.queries.iter().enumerate() {
                let p = match universe.lookup(q) {
                    Some(c) if k < click_model.n_slots() => {
                        click_model.true_click_prob(universe, user, c, k)?
                    }
                    _ => 0.0,
                };
                probs.push(p);
            }
            let component = prompt.component;
            let clicks = sample_clicks(&probs, component, &mut rng);
            out.push(ImpressionRecord {
                prompt,
                response,
                clicks,
                component,
                day,
            });
        }
    }
    Ok(out)
}
