mod common;

use cotrain_core::data::PromptViewTensor;
use cotrain_core::labelmodel::{cbu_init, LabelModelParams};
use proptest::prelude::*;

/// `(k, l, |V|, weights, alpha, one example's flattened prompt outputs)`.
type Instance = (usize, usize, usize, Vec<Vec<f64>>, Vec<f64>, Vec<f64>);

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..1.0f64, n).prop_map(|r| {
        let s: f64 = r.iter().sum();
        r.iter().map(|x| x / s).collect()
    })
}

fn instance() -> impl Strategy<Value = Instance> {
    (1..=4usize, 2..=4usize, 0..=3usize).prop_flat_map(|(k, l, extra)| {
        let v = l + extra;
        (
            Just(k),
            Just(l),
            Just(v),
            prop::collection::vec(prop::collection::vec(-3.0..3.0f64, l * v), k),
            prop::collection::vec(-2.0..2.0f64, k),
            prop::collection::vec(simplex(v), k).prop_map(|s| s.concat()),
        )
    })
}

fn verbalizer(v: usize) -> Vec<String> {
    (0..v).map(|t| format!("tok{t}")).collect()
}

fn top_gap(z: &[f64]) -> f64 {
    let mut s = z.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s[0] - s[1]
}

proptest! {
    #[test]
    fn forward_is_a_probability_vector((_k, l, v, w, alpha, x) in instance()) {
        let model = LabelModelParams::new(l, v, w, alpha).unwrap();
        let p = model.forward(&x).unwrap();
        prop_assert_eq!(p.len(), l);
        prop_assert!(p.iter().all(|&q| (0.0..=1.0).contains(&q)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for act in model.prompt_activations(&x).unwrap() {
            prop_assert!(act.iter().all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn argmax_survives_positive_rescaling_of_ensemble_weights(
        (_k, l, v, w, alpha, x) in instance(),
        c in 0.1..10.0f64,
    ) {
        let model = LabelModelParams::new(l, v, w.clone(), alpha.clone()).unwrap();
        let z = model.pre_activation(&x).unwrap();
        prop_assume!(top_gap(&z) > 1e-9);
        let scaled = LabelModelParams::new(l, v, w, alpha.iter().map(|a| a * c).collect()).unwrap();
        let p = model.forward(&x).unwrap();
        let q = scaled.forward(&x).unwrap();
        prop_assert_eq!(
            cotrain_core::data::argmax(&p),
            cotrain_core::data::argmax(&q)
        );
    }

    #[test]
    fn batch_prediction_matches_per_example_forward(
        (k, l, v, w, alpha, x) in instance(),
        extra_examples in 0..12usize,
    ) {
        // extra examples reuse the generated one with prompt slices rotated
        let mut values = x.clone();
        for e in 0..extra_examples {
            let mut y = x.clone();
            y.rotate_left((e + 1) % x.len());
            for chunk in y.chunks_exact_mut(v) {
                let s: f64 = chunk.iter().sum();
                chunk.iter_mut().for_each(|c| *c /= s);
            }
            values.extend(y);
        }
        let n = 1 + extra_examples;
        let tensor = PromptViewTensor::new(n, k, verbalizer(v), l, values).unwrap();
        let model = LabelModelParams::new(l, v, w, alpha).unwrap();
        let probs = model.predict_proba(&tensor).unwrap();
        for e in 0..n {
            prop_assert_eq!(probs.row(e), &model.forward(tensor.example(e)).unwrap()[..]);
        }
    }

    #[test]
    fn content_free_initialization_is_neutral_on_its_own_calibration_input(
        k in 1..=4usize,
        l in 2..=4usize,
        extra in 0..=3usize,
        seed in any::<u64>(),
    ) {
        let v = l + extra;
        let mut rng = common::rng(seed);
        // each prompt sees a full-vocabulary content-free output; the
        // calibration uses its label-token part
        let outputs: Vec<Vec<f64>> = (0..k).map(|_| common::random_simplex(&mut rng, v)).collect();
        let content_free: Vec<Vec<Vec<f64>>> = outputs.iter().map(|o| vec![o.clone()]).collect();
        let model = cbu_init(&content_free, l, v).unwrap();
        prop_assert!(model.alpha().iter().all(|&a| a == 1.0));
        let p = model.forward(&outputs.concat()).unwrap();
        for q in &p {
            prop_assert!((q - 1.0 / l as f64).abs() <= 1e-12, "{:?}", p);
        }
    }
}
