//! Deterministic offline judge driven by a ground-truth label.
//!
//! Each example gets a difficulty `q`, the chance that any single judge lands
//! on the wrong side, derived from `(seed, example_id)` alone so that judges
//! err together on hard items. Most items are easy with `q` uniform on
//! `[0, EASY_ERROR_CAP)`; a share of items are coin flips with `q = 0.5`,
//! sized so the average of `q` equals `noise`. For `noise <= EASY_ERROR_CAP/2`
//! there are no coin-flip items and `q` is uniform on `[0, 2 * noise)`.
//!
//! A judge then picks the wrong side with probability `q` and reports
//! confidence `c = 1 - q * u^(1/sharpness)` in the side it picked, `u`
//! uniform on `[0, 1)`. Confidence therefore tracks how likely the judge is to
//! be right: large `sharpness` gives `c ~ 1 - q` (calibrated), small
//! `sharpness` pushes `c` toward 1 (overconfident).

use std::collections::HashMap;

use crate::dataset::{Example, Label};
use crate::error::{Error, Result};
use crate::providers::{Judgment, JudgmentSource, PromptTemplate};
use crate::sampling;
use crate::seed_of;

pub const EASY_ERROR_CAP: f64 = 0.1;
pub const DEFAULT_SHARPNESS: f64 = 4.0;

pub(crate) fn check_params(noise: f64, sharpness: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&noise) {
        return Err(Error::invalid(format!("mock noise {noise} outside [0, 0.5]")));
    }
    if !(sharpness > 0.0 && sharpness.is_finite()) {
        return Err(Error::invalid(format!("mock sharpness {sharpness} must be positive")));
    }
    Ok(())
}

/// Per-example probability that a single judge picks the wrong label.
pub fn example_difficulty(noise: f64, seed: u64, example_id: &str) -> f64 {
    let mut rng = sampling::rng(seed_of!(seed, "difficulty", example_id));
    let easy_mean = EASY_ERROR_CAP / 2.0;
    if noise <= easy_mean {
        return 2.0 * noise * sampling::unit(&mut rng);
    }
    let coin_flip_share = (noise - easy_mean) / (0.5 - easy_mean);
    let hard = sampling::unit(&mut rng) < coin_flip_share;
    let u = sampling::unit(&mut rng);
    if hard {
        0.5
    } else {
        EASY_ERROR_CAP * u
    }
}

/// One mock judgment, fully determined by
/// `(seed, example_id, model_id, prompt_id)` and the parameters.
pub fn mock_judge(
    noise: f64,
    sharpness: f64,
    seed: u64,
    model_id: &str,
    prompt_id: &str,
    e: &Example,
    truth: Label,
) -> Judgment {
    let q = example_difficulty(noise, seed, &e.id);
    let mut rng = sampling::rng(seed_of!(seed, e.id.as_str(), model_id, prompt_id));
    let wrong = sampling::unit(&mut rng) < q;
    let side = if wrong { truth.flipped() } else { truth };
    let u = sampling::unit(&mut rng);
    let confidence = 1.0 - q * u.powf(1.0 / sharpness);
    let p_consistent = if side.is_consistent() {
        confidence
    } else {
        1.0 - confidence
    };
    Judgment {
        example_id: e.id.clone(),
        model_id: model_id.to_string(),
        prompt_id: prompt_id.to_string(),
        p_consistent,
        raw_token: side.as_u8().to_string(),
        source: JudgmentSource::Mock,
    }
}

/// Mock judge bound to a truth mask.
#[derive(Debug, Clone)]
pub struct MockBackend {
    pub model_id: String,
    pub noise: f64,
    pub sharpness: f64,
    pub seed: u64,
    truth: HashMap<String, Label>,
}

impl MockBackend {
    pub fn new(
        model_id: impl Into<String>,
        noise: f64,
        sharpness: f64,
        seed: u64,
        truth: HashMap<String, Label>,
    ) -> Result<Self> {
        check_params(noise, sharpness)?;
        Ok(MockBackend {
            model_id: model_id.into(),
            noise,
            sharpness,
            seed,
            truth,
        })
    }

    pub fn judge(&self, t: &PromptTemplate, e: &Example) -> Result<Judgment> {
        let truth = *self
            .truth
            .get(&e.id)
            .ok_or_else(|| Error::MissingLabel(e.id.clone()))?;
        Ok(mock_judge(
            self.noise,
            self.sharpness,
            self.seed,
            &self.model_id,
            &t.id,
            e,
            truth,
        ))
    }
}
