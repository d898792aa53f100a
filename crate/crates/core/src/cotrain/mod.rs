//! The co-training driver.
//!
//! Each iteration `t` works at coverage `beta + t * beta_prime`:
//!
//! 1. the current view-0 model pseudo-labels a confident subset of the pool;
//! 2. a fresh view-1 head is trained on it;
//! 3. that head pseudo-labels a new confident subset;
//! 4. the view-0 model is retrained, from its initial parameters, on that.
//!
//! Confident sets are rebuilt from scratch every iteration (relabeling), and
//! every training call starts from parameters that depend only on the
//! architecture, the run seed and the iteration. Model selection during
//! training uses a confident subset of the validation split, pseudo-labeled
//! by the other view's model at the same coverage.

mod metrics;
mod report;

pub use metrics::{
    accuracy, classification_report, iteration_metrics, ClassificationReport, ConfidentSetMetrics,
};
pub use report::{write_predictions, write_run, RunFiles};

use serde::{Deserialize, Serialize};

use crate::data::{split_train_val, ConfidentSet, Dataset, PromptViewTensor, View0, ViewMatrix};
use crate::labelmodel::LabelModelParams;
use crate::learners::{train_head, Architecture, HeadClassifier};
use crate::rng::derive_seed;
use crate::selection::{
    cut_statistic_scores, knn_graph, select_confident_cs, select_confident_mc, SelectionStrategy,
    DEFAULT_NEIGHBORS,
};
use crate::train::{fit, TrainConfig};
use crate::{Error, Result};

mod defaults {
    use super::*;

    pub fn beta() -> f64 {
        0.5
    }
    pub fn beta_prime() -> f64 {
        0.1
    }
    pub fn iterations() -> usize {
        5
    }
    pub fn gamma() -> f64 {
        0.01
    }
    pub fn neighbors() -> usize {
        DEFAULT_NEIGHBORS
    }
    pub fn selection_view0() -> SelectionStrategy {
        SelectionStrategy::ModelConfidence
    }
    pub fn selection_view1() -> SelectionStrategy {
        SelectionStrategy::CutStatistic
    }
    pub fn val_fraction() -> f64 {
        0.1
    }
    pub fn label_model_train() -> TrainConfig {
        TrainConfig::label_model()
    }
    pub fn head_train() -> TrainConfig {
        TrainConfig::head()
    }
    pub fn head_architecture() -> Architecture {
        Architecture::Linear
    }
}

/// Schedule, selection and training settings for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoTrainConfig {
    /// Initial coverage.
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    /// Coverage added per iteration.
    #[serde(default = "defaults::beta_prime")]
    pub beta_prime: f64,
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    /// Assumed lower bound on every class frequency (model-confidence floor).
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    /// Neighbors per vertex for the cut statistic.
    #[serde(default = "defaults::neighbors")]
    pub neighbors: usize,
    #[serde(default = "defaults::selection_view0")]
    pub selection_view0: SelectionStrategy,
    #[serde(default = "defaults::selection_view1")]
    pub selection_view1: SelectionStrategy,
    #[serde(default = "defaults::val_fraction")]
    pub val_fraction: f64,
    /// Training settings of the view-0 model.
    #[serde(default = "defaults::label_model_train")]
    pub label_model_train: TrainConfig,
    /// Training settings of the view-1 head.
    #[serde(default = "defaults::head_train")]
    pub head_train: TrainConfig,
    #[serde(default = "defaults::head_architecture")]
    pub head_architecture: Architecture,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CoTrainConfig {
    fn default() -> Self {
        Self {
            beta: defaults::beta(),
            beta_prime: defaults::beta_prime(),
            iterations: defaults::iterations(),
            gamma: defaults::gamma(),
            neighbors: defaults::neighbors(),
            selection_view0: defaults::selection_view0(),
            selection_view1: defaults::selection_view1(),
            val_fraction: defaults::val_fraction(),
            label_model_train: defaults::label_model_train(),
            head_train: defaults::head_train(),
            head_architecture: defaults::head_architecture(),
            seed: 0,
        }
    }
}

/// Slack for the final coverage reaching exactly one (`0.5 + 5 * 0.1`).
const SCHEDULE_SLACK: f64 = 1e-9;

impl CoTrainConfig {
    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid(
                "beta",
                format!("{} is not in (0, 1]", self.beta),
            ));
        }
        if !(self.beta_prime >= 0.0 && self.beta_prime.is_finite()) {
            return Err(Error::invalid(
                "beta_prime",
                "must be finite and non-negative",
            ));
        }
        let last = self.beta + (self.iterations - 1) as f64 * self.beta_prime;
        if last > 1.0 + SCHEDULE_SLACK {
            return Err(Error::invalid(
                "beta_prime",
                format!("final coverage beta + (iterations - 1) * beta_prime = {last} exceeds 1"),
            ));
        }
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(
                "gamma",
                format!("{} is not in [0, 1]", self.gamma),
            ));
        }
        if self.neighbors == 0 {
            return Err(Error::invalid("neighbors", "must be at least 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid(
                "val_fraction",
                format!("{} is not in (0, 1)", self.val_fraction),
            ));
        }
        self.label_model_train.validate()?;
        self.head_train.validate()?;
        if let Architecture::OneHiddenLayer { hidden_dim: 0 } = self.head_architecture {
            return Err(Error::invalid(
                "head_architecture",
                "hidden_dim must be at least 1",
            ));
        }
        Ok(())
    }

    /// Also checks the class floor against the number of labels.
    pub fn validate_for(&self, num_labels: usize) -> Result<()> {
        self.validate()?;
        if self.gamma * num_labels as f64 > 1.0 + 1e-12 {
            return Err(Error::invalid(
                "gamma",
                format!("{} exceeds 1 / {num_labels}", self.gamma),
            ));
        }
        Ok(())
    }

    /// Coverage at iteration `t`, `beta + t * beta_prime`.
    pub fn coverage_at(&self, t: usize) -> Result<f64> {
        if t >= self.iterations {
            return Err(Error::invalid(
                "iteration",
                format!("{t} is outside 0..{}", self.iterations),
            ));
        }
        Ok((self.beta + t as f64 * self.beta_prime).min(1.0))
    }
}

/// Free-function form of [`CoTrainConfig::coverage_at`].
pub fn coverage_at(config: &CoTrainConfig, t: usize) -> Result<f64> {
    config.coverage_at(t)
}

/// A model that can pseudo-label and embed one view.
pub trait ViewHypothesis {
    type Input: ?Sized;

    fn predict_proba(&self, input: &Self::Input) -> Result<ViewMatrix>;

    /// Representation on which the cut-statistic graph is built.
    fn selection_embedding(&self, input: &Self::Input) -> Result<ViewMatrix>;
}

impl ViewHypothesis for HeadClassifier {
    type Input = ViewMatrix;

    fn predict_proba(&self, input: &ViewMatrix) -> Result<ViewMatrix> {
        HeadClassifier::predict_proba(self, input)
    }

    fn selection_embedding(&self, input: &ViewMatrix) -> Result<ViewMatrix> {
        self.embed_for_selection(input)
    }
}

impl ViewHypothesis for LabelModelParams {
    type Input = PromptViewTensor;

    fn predict_proba(&self, input: &PromptViewTensor) -> Result<ViewMatrix> {
        LabelModelParams::predict_proba(self, input)
    }

    fn selection_embedding(&self, input: &PromptViewTensor) -> Result<ViewMatrix> {
        self.embed(input)
    }
}

/// The view-0 hypothesis: the prompt label model (partial access) or a
/// generic trainable head over view-0 features (full access).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViewZeroModel {
    LabelModel(LabelModelParams),
    Head(HeadClassifier),
}

fn head_features(view: &View0) -> ViewMatrix {
    match view {
        View0::Prompts(t) => t.flatten(),
        View0::Features(m) => m.clone(),
    }
}

impl ViewZeroModel {
    /// Linear head over the flattened prompt view that adds up each label
    /// token's probability across prompts, an untrained zero-shot vote.
    pub fn prompt_vote_head(view: &PromptViewTensor) -> Result<Self> {
        let (k, v, l) = (view.num_prompts(), view.vocab_size(), view.num_labels());
        let d = k * v;
        let mut params = vec![0.0; l * d + l];
        for j in 0..l {
            for i in 0..k {
                params[j * d + i * v + j] = 1.0;
            }
        }
        Ok(ViewZeroModel::Head(HeadClassifier::from_params(
            Architecture::Linear,
            d,
            l,
            params,
        )?))
    }

    pub fn num_labels(&self) -> usize {
        match self {
            ViewZeroModel::LabelModel(m) => m.num_labels(),
            ViewZeroModel::Head(h) => h.num_labels(),
        }
    }

    fn prompts(view: &View0) -> Result<&PromptViewTensor> {
        match view {
            View0::Prompts(t) => Ok(t),
            View0::Features(_) => Err(Error::InvalidData(
                "the label model needs a prompt view, but view 0 is a feature matrix".into(),
            )),
        }
    }

    /// Train from `self` as the starting point.
    pub fn train(
        &self,
        view: &View0,
        confident: &ConfidentSet,
        val_view: &View0,
        val_confident: &ConfidentSet,
        config: &TrainConfig,
    ) -> Result<Self> {
        Ok(match self {
            ViewZeroModel::LabelModel(m) => ViewZeroModel::LabelModel(fit(
                m.clone(),
                Self::prompts(view)?,
                confident,
                Self::prompts(val_view)?,
                val_confident,
                config,
            )?),
            ViewZeroModel::Head(h) => ViewZeroModel::Head(fit(
                h.clone(),
                &head_features(view),
                confident,
                &head_features(val_view),
                val_confident,
                config,
            )?),
        })
    }
}

impl ViewHypothesis for ViewZeroModel {
    type Input = View0;

    fn predict_proba(&self, input: &View0) -> Result<ViewMatrix> {
        match self {
            ViewZeroModel::LabelModel(m) => m.predict_proba(Self::prompts(input)?),
            ViewZeroModel::Head(h) => h.predict_proba(&head_features(input)),
        }
    }

    fn selection_embedding(&self, input: &View0) -> Result<ViewMatrix> {
        match self {
            ViewZeroModel::LabelModel(m) => m.embed(Self::prompts(input)?),
            ViewZeroModel::Head(h) => h.embed_for_selection(&head_features(input)),
        }
    }
}

/// How one view's model picks its confident data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionSettings {
    pub strategy: SelectionStrategy,
    pub coverage: f64,
    pub gamma: f64,
    pub neighbors: usize,
}

/// Confident pseudo-labeled subset of `input` according to `model`.
pub fn get_conf_data<M: ViewHypothesis + ?Sized>(
    model: &M,
    input: &M::Input,
    settings: &SelectionSettings,
) -> Result<ConfidentSet> {
    let probs = model.predict_proba(input)?;
    match settings.strategy {
        SelectionStrategy::ModelConfidence => {
            select_confident_mc(&probs, settings.coverage, settings.gamma)
        }
        SelectionStrategy::CutStatistic => {
            let embedding = model.selection_embedding(input)?;
            let graph = knn_graph(&embedding, settings.neighbors)?;
            let scores = cut_statistic_scores(&probs.row_argmax(), &graph, probs.cols())?;
            select_confident_cs(&scores, settings.coverage)
        }
    }
}

/// Confident subset of the validation split, pseudo-labeled by the model of
/// the other view, used as the reference for best-epoch selection.
pub fn select_confident_validation<M: ViewHypothesis + ?Sized>(
    other_view_model: &M,
    val_input: &M::Input,
    settings: &SelectionSettings,
) -> Result<ConfidentSet> {
    get_conf_data(other_view_model, val_input, settings)
}

/// Per-view record of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    /// Size of the confident set this view's model selected.
    pub confident_size: usize,
    /// Test accuracy of this view's model after this iteration's training.
    pub test_accuracy: Option<f64>,
    /// Quality of the confident set, when the pool has gold labels.
    pub confident: Option<ConfidentSetMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub coverage: f64,
    /// Confident set selected by the view-0 model on view 0.
    pub view0: ViewMetrics,
    /// Confident set selected by the view-1 head on view 1.
    pub view1: ViewMetrics,
}

/// Models and confident sets produced by one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub h0: ViewZeroModel,
    pub h1: HeadClassifier,
    /// Selected by `h0` from the previous iteration (or the initial model),
    /// indices into the training pool.
    pub confident_view0: ConfidentSet,
    /// Selected by this iteration's `h1`.
    pub confident_view1: ConfidentSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoTrainOutcome {
    pub h0: ViewZeroModel,
    pub h1: HeadClassifier,
    pub history: Vec<IterationMetrics>,
    pub iterations: Vec<IterationState>,
    /// Test accuracy of the initial view-0 model.
    pub initial_test_accuracy: Option<f64>,
    /// Dataset indices of the training pool, in pool order.
    pub pool_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

const VIEW0: u64 = 0;
const VIEW1: u64 = 1;

fn wrap(iteration: usize, view: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Iteration {
        iteration,
        view,
        source: Box::new(e),
    }
}

/// Where test accuracy is measured: a separate test set if given, otherwise
/// the gold labels of the whole dataset (if any).
struct Evaluator<'a> {
    data: Option<(&'a Dataset, &'a [usize])>,
}

impl<'a> Evaluator<'a> {
    fn new(dataset: &'a Dataset, test: Option<&'a Dataset>) -> Self {
        let source = test.unwrap_or(dataset);
        Self {
            data: source.gold().map(|g| (source, g)),
        }
    }

    fn h0(&self, model: &ViewZeroModel) -> Result<Option<f64>> {
        self.data
            .map(|(d, gold)| accuracy(&model.predict_proba(d.view0())?.row_argmax(), gold))
            .transpose()
    }

    fn h1(&self, model: &HeadClassifier) -> Result<Option<f64>> {
        self.data
            .map(|(d, gold)| accuracy(&model.predict_proba(d.view1())?.row_argmax(), gold))
            .transpose()
    }
}

fn view_metrics(
    confident: &ConfidentSet,
    gold: Option<&[usize]>,
    num_labels: usize,
    pool_size: usize,
    test_accuracy: Option<f64>,
) -> Result<ViewMetrics> {
    Ok(ViewMetrics {
        confident_size: confident.len(),
        test_accuracy,
        confident: gold
            .map(|g| iteration_metrics(confident, g, num_labels, pool_size))
            .transpose()?,
    })
}

/// Run co-training on `dataset` starting from `init_h0`.
///
/// Gold labels, where present, are only used for metrics. `test` is an
/// optional held-out set for test accuracy.
pub fn cotrain_run(
    config: &CoTrainConfig,
    dataset: &Dataset,
    init_h0: &ViewZeroModel,
    test: Option<&Dataset>,
) -> Result<CoTrainOutcome> {
    let l = dataset.num_labels();
    config.validate_for(l)?;
    if init_h0.num_labels() != l {
        return Err(Error::mismatch(
            "initial view-0 model labels",
            l,
            init_h0.num_labels(),
        ));
    }
    if let Some(t) = test {
        if t.num_labels() != l {
            return Err(Error::mismatch("test set labels", l, t.num_labels()));
        }
    }
    let split = split_train_val(dataset, config.val_fraction, config.seed)?;
    // training paths only ever see the label-free copies
    let pool_gold = split.train.gold().map(<[usize]>::to_vec);
    let pool = split.train.without_gold();
    let val = split.val.without_gold();
    let u = pool.num_examples();

    let evaluator = Evaluator::new(dataset, test);
    let initial_test_accuracy = evaluator.h0(init_h0)?;

    let mut h0 = init_h0.clone();
    let mut history = Vec::with_capacity(config.iterations);
    let mut states = Vec::with_capacity(config.iterations);
    for t in 0..config.iterations {
        let coverage = config.coverage_at(t)?;
        let settings0 = SelectionSettings {
            strategy: config.selection_view0,
            coverage,
            gamma: config.gamma,
            neighbors: config.neighbors,
        };
        let settings1 = SelectionSettings {
            strategy: config.selection_view1,
            ..settings0
        };

        // view 0 labels data for a fresh view-1 head
        let (confident0, val0) = (|| {
            Ok((
                get_conf_data(&h0, pool.view0(), &settings0)?.with_origin(t, 0),
                select_confident_validation(&h0, val.view0(), &settings0)?,
            ))
        })()
        .map_err(wrap(t, 0))?;
        let head_cfg = TrainConfig {
            seed: derive_seed(config.seed, &[t as u64, VIEW1, config.head_train.seed]),
            ..config.head_train
        };
        let h1 = (|| {
            let h1 = train_head(
                config.head_architecture,
                pool.view1(),
                &confident0,
                val.view1(),
                &val0,
                l,
                &head_cfg,
            )?;
            Ok(h1)
        })()
        .map_err(wrap(t, 1))?;

        // view 1 labels data for the view-0 model, restarted from its init
        let (confident1, val1) = (|| {
            Ok((
                get_conf_data(&h1, pool.view1(), &settings1)?.with_origin(t, 1),
                select_confident_validation(&h1, val.view1(), &settings1)?,
            ))
        })()
        .map_err(wrap(t, 1))?;
        let lm_cfg = TrainConfig {
            seed: derive_seed(
                config.seed,
                &[t as u64, VIEW0, config.label_model_train.seed],
            ),
            ..config.label_model_train
        };
        h0 = init_h0
            .train(pool.view0(), &confident1, val.view0(), &val1, &lm_cfg)
            .map_err(wrap(t, 0))?;

        let gold = pool_gold.as_deref();
        history.push(IterationMetrics {
            iteration: t,
            coverage,
            view0: view_metrics(&confident0, gold, l, u, evaluator.h0(&h0)?)?,
            view1: view_metrics(&confident1, gold, l, u, evaluator.h1(&h1)?)?,
        });
        states.push(IterationState {
            h0: h0.clone(),
            h1,
            confident_view0: confident0,
            confident_view1: confident1,
        });
    }
    let last = states.last().expect("at least one iteration");
    Ok(CoTrainOutcome {
        h0: last.h0.clone(),
        h1: last.h1.clone(),
        history,
        iterations: states,
        initial_test_accuracy,
        pool_indices: split.train_indices,
        val_indices: split.val_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let c = CoTrainConfig::default();
        let got: Vec<f64> = (0..5).map(|t| c.coverage_at(t).unwrap()).collect();
        let expect = [0.5, 0.6, 0.7, 0.8, 0.9];
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-12, "{got:?}");
        }
        assert!(c.coverage_at(5).is_err());
    }

    #[test]
    fn flat_schedule() {
        let c = CoTrainConfig {
            beta_prime: 0.0,
            beta: 0.3,
            ..Default::default()
        };
        assert!((0..5).all(|t| c.coverage_at(t).unwrap() == 0.3));
    }

    #[test]
    fn schedule_past_full_coverage_is_rejected() {
        let c = CoTrainConfig {
            beta_prime: 0.2,
            ..Default::default()
        };
        assert!(matches!(
            c.validate(),
            Err(Error::InvalidArgument {
                name: "beta_prime",
                ..
            })
        ));
        let exact = CoTrainConfig {
            iterations: 6,
            ..Default::default()
        };
        assert!(exact.validate().is_ok());
    }

    #[test]
    fn gamma_bound_depends_on_labels() {
        let c = CoTrainConfig {
            gamma: 0.4,
            ..Default::default()
        };
        assert!(c.validate_for(2).is_ok());
        assert!(c.validate_for(3).is_err());
    }

    #[test]
    fn json_defaults_fill_in() {
        let c: CoTrainConfig = serde_json::from_str(r#"{"seed": 4}"#).unwrap();
        assert_eq!(
            c,
            CoTrainConfig {
                seed: 4,
                ..Default::default()
            }
        );
        assert!(serde_json::from_str::<CoTrainConfig>(r#"{"betta": 0.5}"#).is_err());
    }

    #[test]
    fn prompt_vote_head_sums_label_probabilities() {
        let t = PromptViewTensor::new(
            1,
            2,
            vec!["a".into(), "b".into(), "c".into()],
            2,
            vec![0.5, 0.2, 0.3, 0.1, 0.6, 0.3],
        )
        .unwrap();
        let h = ViewZeroModel::prompt_vote_head(&t).unwrap();
        let ViewZeroModel::Head(head) = &h else {
            panic!("expected a head")
        };
        let logits = head.logits(t.flatten().row(0)).unwrap();
        assert!((logits[0] - 0.6).abs() < 1e-15 && (logits[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn view_zero_checkpoint_round_trip() {
        let lm = LabelModelParams::new(2, 2, vec![vec![1.0, 0.0, 0.0, 1.0]], vec![1.0]).unwrap();
        let m = ViewZeroModel::LabelModel(lm);
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"kind\":\"label_model\""));
        assert_eq!(serde_json::from_str::<ViewZeroModel>(&text).unwrap(), m);
    }
}
