//! Learning formulas from labeled observations.
//!
//! Each observation is abstracted into a [`Qts`]; its features are the region
//! means read along every quad-tree address up to a maximum depth. A
//! sequential-covering learner ([`learn_ruleset`]) induces an ordered list of
//! threshold rules on those features, and [`ruleset_to_tssl`] turns the rule
//! list into a single formula that holds exactly on the observations the
//! rules classify as positive.

mod features;
mod ripper;
mod rules;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::Label;
use crate::quadtree::{Qts, QuadError};
use crate::rdsim::Observation;
use crate::tssl::{CompiledFormula, EvalError, Formula};

pub use features::{
    address_count, address_index, all_addresses, extract_features, feature_index, feature_keys, qts_features,
    FeatureKey, FeatureVector,
};
pub use ripper::{learn_ruleset, LearnerConfig};
pub use rules::{ruleset_to_tssl, Literal, Rule, RuleParseError, RuleSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("invalid learner input: {0}")]
    Usage(String),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// One labeled example with its abstraction and features.
#[derive(Debug, Clone)]
pub struct Example {
    pub qts: Qts,
    pub features: FeatureVector,
    pub label: Label,
}

/// Labeled examples sharing a feature depth and channel count.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    pub examples: Vec<Example>,
}

impl LabeledSet {
    /// Abstracts every observation (in parallel) and reads its features from
    /// the resulting transition system.
    pub fn from_observations(
        data: &[(Observation, Label)],
        quant_levels: usize,
        d_max: usize,
    ) -> Result<Self, LearnError> {
        if let Some((obs, _)) = data.iter().find(|(o, _)| o.depth() < d_max) {
            return Err(LearnError::Usage(format!(
                "feature depth {d_max} exceeds the quad-tree depth of a {}x{} image",
                obs.side(),
                obs.side()
            )));
        }
        if let Some(first) = data.first() {
            if data.iter().any(|(o, _)| o.channels() != first.0.channels()) {
                return Err(LearnError::Usage("observations have differing channel counts".into()));
            }
        }
        let examples = data
            .par_iter()
            .map(|(obs, label)| {
                let qts = Qts::from_observation(obs, quant_levels)?;
                let features = qts_features(&qts, d_max);
                Ok(Example {
                    qts,
                    features,
                    label: *label,
                })
            })
            .collect::<Result<Vec<_>, LearnError>>()?;
        Ok(LabeledSet { examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.examples.iter().filter(|e| e.label == label).count()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            examples: indices.iter().map(|i| self.examples[*i].clone()).collect(),
        }
    }
}

/// Splits indices `0..labels.len()` into two disjoint parts, putting
/// `round(fraction * n_label)` examples of each label into the first part.
/// Each label's examples are shuffled with a seeded generator first.
pub fn stratified_split(labels: &[Label], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for target in [Label::Positive, Label::Negative] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] == target).collect();
        idx.shuffle(&mut rng);
        let cut = ((idx.len() as f64) * fraction).round() as usize;
        first.extend_from_slice(&idx[..cut]);
        second.extend_from_slice(&idx[cut..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

/// Confusion counts of a classifier with "+" as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_rules: usize,
    pub formula_depth: usize,
}

impl Metrics {
    fn tally(predictions: impl Iterator<Item = (bool, Label)>) -> Self {
        let mut m = Metrics::default();
        for (predicted, label) in predictions {
            match (predicted, label.is_positive()) {
                (true, true) => m.tp += 1,
                (true, false) => m.fp += 1,
                (false, false) => m.tn += 1,
                (false, true) => m.fn_ += 1,
            }
        }
        let total = m.tp + m.fp + m.tn + m.fn_;
        m.accuracy = if total == 0 {
            0.0
        } else {
            (m.tp + m.tn) as f64 / total as f64
        };
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    #[serde(flatten)]
    pub metrics: Metrics,
    /// Indices of misclassified test examples.
    pub misclassified: Vec<usize>,
    /// Model-checking verdict per test example.
    pub predictions: Vec<bool>,
}

/// Model-checks every test example against `phi`; an example is predicted
/// positive exactly when it satisfies the formula.
pub fn evaluate_classifier(phi: &Formula, test: &LabeledSet) -> Result<Evaluation, LearnError> {
    if test.is_empty() {
        return Err(LearnError::Usage("test set is empty".into()));
    }
    let compiled = CompiledFormula::new(phi);
    let predictions = test
        .examples
        .par_iter()
        .map(|e| compiled.check(&e.qts))
        .collect::<Result<Vec<bool>, EvalError>>()?;
    let mut metrics = Metrics::tally(predictions.iter().copied().zip(test.examples.iter().map(|e| e.label)));
    metrics.formula_depth = phi.modal_depth();
    let misclassified = predictions
        .iter()
        .zip(&test.examples)
        .enumerate()
        .filter(|(_, (p, e))| **p != e.label.is_positive())
        .map(|(i, _)| i)
        .collect();
    Ok(Evaluation {
        metrics,
        misclassified,
        predictions,
    })
}

/// A learned classifier in both forms.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub ruleset: RuleSet,
    pub formula: Formula,
}

/// Learns a rule list and its formula from `train`.
pub fn learn(train: &LabeledSet, cfg: &LearnerConfig) -> Result<Classifier, LearnError> {
    let data: Vec<(&FeatureVector, Label)> = train.examples.iter().map(|e| (&e.features, e.label)).collect();
    let ruleset = learn_ruleset(&data, cfg)?;
    let formula = ruleset_to_tssl(&ruleset);
    Ok(Classifier { ruleset, formula })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Vec<Label> = (0..30)
            .map(|i| if i % 3 == 0 { Label::Positive } else { Label::Negative })
            .collect();
        let (a, b) = stratified_split(&labels, 0.5, 4);
        assert_eq!(a.len() + b.len(), 30);
        assert!(a.iter().all(|i| !b.contains(i)));
        assert_eq!(a.iter().filter(|i| labels[**i] == Label::Positive).count(), 5);
        assert_eq!(stratified_split(&labels, 0.5, 4), (a, b));
    }

    #[test]
    fn top_classifies_half_of_balanced_set() {
        let data: Vec<(Observation, Label)> = (0..4)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Positive } else { Label::Negative };
                (Observation::from_fn(4, move |_, _| i as f64 / 4.0), label)
            })
            .collect();
        let set = LabeledSet::from_observations(&data, 16, 2).unwrap();
        let eval = evaluate_classifier(&Formula::True, &set).unwrap();
        assert_eq!(eval.metrics.accuracy, 0.5);
        assert_eq!((eval.metrics.tp, eval.metrics.fp), (2, 2));
        assert_eq!(eval.misclassified, vec![1, 3]);
        assert!(evaluate_classifier(&Formula::True, &LabeledSet::default()).is_err());
        assert!(LabeledSet::from_observations(&data, 16, 3).is_err());
    }

    #[test]
    fn metrics_json_field_names() {
        let m = Metrics::tally([(true, Label::Negative)].into_iter());
        let json = serde_json::to_value(m).unwrap();
        assert_eq!(json["fp"], 1);
        assert!(json.get("fn").is_some());
    }
}
