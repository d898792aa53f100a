use super::LabelModelParams;
use crate::{Error, Result};

/// Content-free initialization.
///
/// `content_free[i]` holds prompt `i`'s outputs on one or more content-free
/// inputs, each over the `l` label tokens (longer vectors are truncated to
/// their first `l` entries). Each vector is renormalized over the label
/// tokens, the vectors are averaged into `p`, and `W_i` gets `diag(1 / p)`
/// in its first `l` columns and zeros elsewhere. All `alpha_i` start at 1.
pub fn cbu_init(
    content_free: &[Vec<Vec<f64>>],
    num_labels: usize,
    vocab_size: usize,
) -> Result<LabelModelParams> {
    if content_free.is_empty() {
        return Err(Error::invalid(
            "content_free",
            "need outputs for at least one prompt",
        ));
    }
    if num_labels < 2 || vocab_size < num_labels {
        return Err(Error::invalid(
            "num_labels",
            format!("need 2 <= l <= |V|, got l={num_labels}, |V|={vocab_size}"),
        ));
    }
    let mut weights = Vec::with_capacity(content_free.len());
    for (i, outputs) in content_free.iter().enumerate() {
        let mean = averaged_label_distribution(i, outputs, num_labels)?;
        let mut w = vec![0.0; num_labels * vocab_size];
        for (j, p) in mean.iter().enumerate() {
            w[j * vocab_size + j] = 1.0 / p;
        }
        weights.push(w);
    }
    let k = weights.len();
    LabelModelParams::new(num_labels, vocab_size, weights, vec![1.0; k])
}

/// Mean of the label-renormalized content-free outputs of one prompt.
pub(crate) fn averaged_label_distribution(
    prompt: usize,
    outputs: &[Vec<f64>],
    num_labels: usize,
) -> Result<Vec<f64>> {
    if outputs.is_empty() {
        return Err(Error::InvalidData(format!(
            "prompt {prompt} has no content-free outputs"
        )));
    }
    let mut mean = vec![0.0; num_labels];
    for (c, out) in outputs.iter().enumerate() {
        if out.len() < num_labels {
            return Err(Error::mismatch(
                format!("prompt {prompt} content-free output {c}"),
                num_labels,
                out.len(),
            ));
        }
        let head = &out[..num_labels];
        if head.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidData(format!(
                "prompt {prompt} content-free output {c} has a negative or non-finite entry"
            )));
        }
        let sum: f64 = head.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidData(format!(
                "prompt {prompt} content-free output {c} puts no mass on label tokens"
            )));
        }
        for (m, p) in mean.iter_mut().zip(head) {
            *m += p / sum;
        }
    }
    let count = outputs.len() as f64;
    for (j, m) in mean.iter_mut().enumerate() {
        *m /= count;
        if *m <= 0.0 {
            return Err(Error::InvalidData(format!(
                "prompt {prompt}: averaged content-free probability of label {j} is zero"
            )));
        }
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_content_free_gives_scaled_identity() {
        let m = cbu_init(&[vec![vec![0.5, 0.5]]], 2, 2).unwrap();
        assert_eq!(m.weights(0), &[2.0, 0.0, 0.0, 2.0]);
        assert_eq!(m.alpha(), &[1.0]);
    }

    #[test]
    fn skewed_content_free_inverts() {
        let m = cbu_init(&[vec![vec![0.25, 0.75]]], 2, 2).unwrap();
        assert_eq!(m.weights(0)[0], 4.0);
        assert!((m.weights(0)[3] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn extra_tokens_start_at_zero() {
        let m = cbu_init(&[vec![vec![0.4, 0.6]], vec![vec![0.5, 0.5]]], 2, 4).unwrap();
        for i in 0..2 {
            let w = m.weights(i);
            for row in 0..2 {
                assert_eq!(&w[row * 4 + 2..row * 4 + 4], &[0.0, 0.0]);
            }
        }
        assert_eq!(m.alpha(), &[1.0, 1.0]);
    }

    #[test]
    fn averages_renormalized_outputs() {
        // (0.2, 0.2) renormalizes to (0.5, 0.5); (0.9, 0.1) stays
        let m = cbu_init(&[vec![vec![0.2, 0.2, 0.6], vec![0.9, 0.1]]], 2, 3).unwrap();
        assert!((m.weights(0)[0] - 1.0 / 0.7).abs() < 1e-12);
        assert!((m.weights(0)[3 + 1] - 1.0 / 0.3).abs() < 1e-12);
    }

    #[test]
    fn zero_entry_is_an_error() {
        assert!(cbu_init(&[vec![vec![1.0, 0.0]]], 2, 2).is_err());
        assert!(cbu_init(&[vec![]], 2, 2).is_err());
        assert!(cbu_init(&[], 2, 2).is_err());
    }
}
