use crate::{Error, Result};

/// Mean per-class recall over the classes present in `reference`.
pub fn balanced_accuracy(
    predicted: &[usize],
    reference: &[usize],
    num_labels: usize,
) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(Error::mismatch(
            "prediction count",
            reference.len(),
            predicted.len(),
        ));
    }
    if reference.is_empty() {
        return Err(Error::invalid(
            "reference",
            "balanced accuracy of an empty set",
        ));
    }
    let mut support = vec![0usize; num_labels];
    let mut hits = vec![0usize; num_labels];
    for (&p, &r) in predicted.iter().zip(reference) {
        if r >= num_labels || p >= num_labels {
            return Err(Error::InvalidData(format!(
                "label out of range for {num_labels} labels"
            )));
        }
        support[r] += 1;
        hits[r] += usize::from(p == r);
    }
    let (sum, classes) = support
        .iter()
        .zip(&hits)
        .filter(|(&s, _)| s > 0)
        .fold((0.0, 0usize), |(sum, c), (&s, &h)| {
            (sum + h as f64 / s as f64, c + 1)
        });
    Ok(sum / classes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_correct() {
        assert_eq!(balanced_accuracy(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
    }

    #[test]
    fn one_class_right_one_wrong() {
        assert_eq!(
            balanced_accuracy(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap(),
            0.5
        );
    }

    #[test]
    fn hand_confusion_matrix() {
        let got = balanced_accuracy(&[0, 1, 1, 1, 0], &[0, 0, 1, 1, 1], 2).unwrap();
        assert!((got - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn absent_classes_are_skipped() {
        assert_eq!(balanced_accuracy(&[1, 1], &[1, 1], 3).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        assert!(balanced_accuracy(&[], &[], 2).is_err());
        assert!(balanced_accuracy(&[0], &[0, 1], 2).is_err());
        assert!(balanced_accuracy(&[2], &[0], 2).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60),
            rot in 0usize..60,
        ) {
            let (p, r): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let mut rotated = pairs.clone();
            rotated.rotate_left(rot % pairs.len());
            rotated.reverse();
            let (p2, r2): (Vec<_>, Vec<_>) = rotated.into_iter().unzip();
            prop_assert_eq!(
                balanced_accuracy(&p, &r, 4).unwrap(),
                balanced_accuracy(&p2, &r2, 4).unwrap()
            );
        }

        #[test]
        fn constant_predictor_scores_one_over_classes(
            reference in proptest::collection::vec(0usize..5, 1..80),
            constant in 0usize..5,
        ) {
            let present = (0..5).filter(|c| reference.contains(c)).count();
            let predicted = vec![constant; reference.len()];
            let got = balanced_accuracy(&predicted, &reference, 5).unwrap();
            let expected = if reference.contains(&constant) { 1.0 / present as f64 } else { 0.0 };
            prop_assert!((got - expected).abs() < 1e-15);
        }
    }
}
