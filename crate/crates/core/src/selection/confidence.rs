use super::cut::check_coverage;
use crate::data::{argmax, ConfidentSet, ViewMatrix};
use crate::{ceil_count, floor_count, Error, Result};

/// Top `ceil(coverage * U)` examples by max probability, after first
/// reserving up to `floor(gamma * coverage * U)` slots for every class.
///
/// A class predicted fewer times than its reservation contributes all of its
/// predictions. Score ties are broken by ascending index.
pub fn select_confident_mc(
    probabilities: &ViewMatrix,
    coverage: f64,
    gamma: f64,
) -> Result<ConfidentSet> {
    check_coverage(coverage)?;
    let u = probabilities.rows();
    let l = probabilities.cols();
    // gamma = 1/l must pass even when l * (1/l) rounds above one
    if gamma.is_nan() || gamma < 0.0 || gamma * l as f64 > 1.0 + 1e-12 {
        return Err(Error::invalid(
            "gamma",
            format!("{gamma} is not in [0, 1/{l}]"),
        ));
    }
    let total = ceil_count(coverage, u).min(u);
    let per_class = floor_count(gamma * coverage, u);

    let mut predicted = Vec::with_capacity(u);
    let mut score = Vec::with_capacity(u);
    for row in probabilities.row_iter() {
        let y = argmax(row);
        predicted.push(y);
        score.push(row[y]);
    }
    let mut order: Vec<usize> = (0..u).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));

    let mut taken = vec![false; u];
    let mut entries = Vec::with_capacity(total);
    if per_class > 0 {
        let mut quota = vec![per_class; l];
        for &i in &order {
            let y = predicted[i];
            if quota[y] > 0 {
                quota[y] -= 1;
                taken[i] = true;
                entries.push((i, y));
            }
        }
    }
    for &i in &order {
        if entries.len() >= total {
            break;
        }
        if !taken[i] {
            taken[i] = true;
            entries.push((i, predicted[i]));
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyConfidentSet(format!(
            "coverage {coverage} of {u} examples selects nothing"
        )));
    }
    ConfidentSet::new(entries, u, l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(p0: &[f64]) -> ViewMatrix {
        let rows: Vec<Vec<f64>> = p0.iter().map(|&p| vec![p, 1.0 - p]).collect();
        ViewMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn no_floor_is_plain_top_confidence() {
        let probs = binary(&[0.9, 0.4, 0.55, 0.1, 0.5, 0.7]);
        // confidences: .9 .6 .55 .9 .5 .7
        let set = select_confident_mc(&probs, 0.5, 0.0).unwrap();
        assert_eq!(set.entries(), &[(0, 0), (3, 1), (5, 0)]);
    }

    #[test]
    fn default_floor_rounds_to_zero_at_hundred_examples() {
        let p: Vec<f64> = (0..100)
            .map(|i| 0.5 + 0.5 * (i as f64 + 1.0) / 101.0)
            .collect();
        let probs = binary(&p);
        let set = select_confident_mc(&probs, 0.5, 0.01).unwrap();
        assert_eq!(set.len(), 50);
        assert_eq!(set, select_confident_mc(&probs, 0.5, 0.0).unwrap());
    }

    #[test]
    fn rare_class_is_reserved_despite_low_scores() {
        // 197 confident class-0 predictions, 3 weak class-1 predictions
        let mut p = vec![0.95; 200];
        for i in [10, 50, 150] {
            p[i] = 0.45;
        }
        let set = select_confident_mc(&binary(&p), 0.5, 0.05).unwrap();
        assert_eq!(set.len(), 100);
        let ones: Vec<usize> = set
            .entries()
            .iter()
            .filter(|e| e.1 == 1)
            .map(|e| e.0)
            .collect();
        assert_eq!(ones, vec![10, 50, 150]);
        // without the floor they lose to every class-0 example
        let plain = select_confident_mc(&binary(&p), 0.5, 0.0).unwrap();
        assert!(plain.labels().all(|y| y == 0));
    }

    #[test]
    fn full_coverage_takes_everything() {
        let set = select_confident_mc(&binary(&[0.2, 0.8, 0.6]), 1.0, 0.5).unwrap();
        assert_eq!(set.len(), 3);
    }

    #[test]
    fn rejects_bad_arguments() {
        let probs = binary(&[0.2, 0.8]);
        assert!(select_confident_mc(&probs, 0.5, 0.6).is_err());
        assert!(select_confident_mc(&probs, 0.5, -0.1).is_err());
        assert!(select_confident_mc(&probs, 0.0, 0.0).is_err());
        assert!(select_confident_mc(&probs, 0.5, 0.5).is_ok());
    }
}
