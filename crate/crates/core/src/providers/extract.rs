//! Turning model output into `P(consistent)`.

use crate::error::{Error, Result};

/// Scan generated tokens for the first one that is exactly `"0"` or `"1"`
/// after trimming whitespace. With `q = exp(logprob)` of that token the
/// result is `q` for `"1"` and `1 - q` for `"0"`.
///
/// On failure the returned error carries the concatenated tokens; `model_id`
/// is filled in by the caller.
pub fn probability_from_generated_tokens(tokens: &[(String, f64)]) -> Result<(f64, String)> {
    for (tok, logprob) in tokens {
        let t = tok.trim();
        if t != "0" && t != "1" {
            continue;
        }
        if !logprob.is_finite() && *logprob != f64::NEG_INFINITY {
            return Err(Error::invalid(format!("logprob {logprob} is not finite")));
        }
        if *logprob > 1e-9 {
            return Err(Error::invalid(format!("logprob {logprob} is positive")));
        }
        let q = logprob.min(0.0).exp();
        let p = if t == "1" { q } else { 1.0 - q };
        return Ok((p, t.to_string()));
    }
    Err(Error::Unparseable {
        model_id: String::new(),
        raw: tokens.iter().map(|(t, _)| t.as_str()).collect(),
    })
}

/// Softmax over the `'0'` and `'1'` logits, returning the `'1'` share.
pub fn probability_from_two_logits(logit_zero: f64, logit_one: f64) -> Result<f64> {
    if !logit_zero.is_finite() || !logit_one.is_finite() {
        return Err(Error::invalid(format!(
            "non-finite logits ({logit_zero}, {logit_one})"
        )));
    }
    let m = logit_zero.max(logit_one);
    let e0 = (logit_zero - m).exp();
    let e1 = (logit_one - m).exp();
    Ok(e1 / (e0 + e1))
}
