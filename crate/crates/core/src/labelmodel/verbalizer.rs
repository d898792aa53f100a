use std::collections::{BTreeMap, HashSet};

use crate::{Error, Result};

/// Fraction of distinct observed tokens kept by [`select_verbalizer`].
pub const VERBALIZER_KEEP_FRACTION: f64 = 0.25;

/// Choose the verbalizer token list.
///
/// `top_tokens[n][i]` is prompt `i`'s top-token distribution on example `n`.
/// Probabilities are summed per distinct token over the whole set, tokens
/// are ranked by that total (ties by token text) and the top quarter of the
/// distinct observed tokens is kept, rounded up. The result lists the label
/// tokens first, in label order, then the kept non-label tokens by
/// descending total.
pub fn select_verbalizer(
    top_tokens: &[Vec<BTreeMap<String, f64>>],
    label_tokens: &[String],
) -> Result<Vec<String>> {
    if top_tokens.is_empty() || top_tokens.iter().all(Vec::is_empty) {
        return Err(Error::invalid("top_tokens", "no top-token lists given"));
    }
    if label_tokens.is_empty() {
        return Err(Error::invalid("label_tokens", "no label tokens given"));
    }
    let labels: HashSet<&str> = label_tokens.iter().map(String::as_str).collect();
    if labels.len() != label_tokens.len() {
        return Err(Error::invalid("label_tokens", "duplicate label token"));
    }

    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    for per_prompt in top_tokens {
        for dist in per_prompt {
            for (token, &p) in dist {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::InvalidData(format!(
                        "token `{token}` has invalid probability {p}"
                    )));
                }
                *totals.entry(token.as_str()).or_insert(0.0) += p;
            }
        }
    }
    let mut ranked: Vec<(&str, f64)> = totals.into_iter().collect();
    // BTreeMap order is the tie-break; stable sort keeps it
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let keep = (VERBALIZER_KEEP_FRACTION * ranked.len() as f64).ceil() as usize;

    let mut verbalizer = label_tokens.to_vec();
    verbalizer.extend(
        ranked
            .into_iter()
            .take(keep)
            .filter(|(t, _)| !labels.contains(t))
            .map(|(t, _)| t.to_string()),
    );
    Ok(verbalizer)
}
