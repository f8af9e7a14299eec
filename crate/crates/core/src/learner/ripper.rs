//! Sequential-covering rule induction in the style of RIPPER.
//!
//! Rules for the positive class are grown one literal at a time on two
//! thirds of the remaining examples, maximizing FOIL information gain, and
//! then pruned back on the remaining third. Covering stops when a pruned
//! rule is wrong on half its pruning examples or when the description length
//! of the rule list grows 64 bits beyond the best seen. An optional
//! optimization pass reconsiders each rule against a freshly grown
//! replacement and an extended revision.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use super::features::{feature_keys, FeatureVector};
use super::rules::{Literal, Rule, RuleSet};
use super::LearnError;
use crate::derive_seed;
use crate::io::Label;
use crate::tssl::Relation;

const MAX_DL_SURPLUS: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    /// Longest feature address.
    pub d_max: usize,
    /// Bins used when abstracting observations into transition systems.
    pub quant_levels: usize,
    pub seed: u64,
    /// Number of optimization passes over the finished rule list.
    pub optimization_rounds: usize,
    /// Fewest training examples a literal may leave covered.
    pub min_coverage: usize,
    pub max_rules: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            d_max: 4,
            quant_levels: 16,
            seed: 0,
            optimization_rounds: 1,
            min_coverage: 2,
            max_rules: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Lit {
    feature: usize,
    rel: Relation,
    threshold: f64,
}

type Body = Vec<Lit>;

struct Learner<'a> {
    x: Vec<&'a [f64]>,
    y: Vec<bool>,
    features: usize,
    cfg: &'a LearnerConfig,
    rng: ChaCha8Rng,
}

impl<'a> Learner<'a> {
    fn lit_holds(&self, lit: &Lit, i: usize) -> bool {
        lit.rel.holds(self.x[i][lit.feature], lit.threshold)
    }

    fn covers(&self, body: &[Lit], i: usize) -> bool {
        body.iter().all(|l| self.lit_holds(l, i))
    }

    fn count(&self, body: &[Lit], idx: &[usize]) -> (usize, usize) {
        idx.iter()
            .filter(|i| self.covers(body, **i))
            .fold((0, 0), |(p, n), i| if self.y[*i] { (p + 1, n) } else { (p, n + 1) })
    }

    /// Splits positives and negatives each into a 2/3 growing part and a
    /// 1/3 pruning part.
    fn split(&mut self, idx: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let (mut grow, mut prune) = (Vec::new(), Vec::new());
        for target in [true, false] {
            let mut part: Vec<usize> = idx.iter().copied().filter(|i| self.y[*i] == target).collect();
            part.shuffle(&mut self.rng);
            let cut = (part.len() * 2).div_ceil(3);
            grow.extend_from_slice(&part[..cut]);
            prune.extend_from_slice(&part[cut..]);
        }
        (grow, prune)
    }

    /// Adds literals to `body` until it covers no negatives of `grow` or no
    /// literal has positive FOIL gain.
    fn grow(&self, mut body: Body, grow: &[usize]) -> Body {
        let mut covered: Vec<usize> = grow.iter().copied().filter(|i| self.covers(&body, *i)).collect();
        let min_cov = self.cfg.min_coverage.max(1);
        let mut sorted: Vec<(f64, bool)> = Vec::with_capacity(covered.len());
        loop {
            let p0 = covered.iter().filter(|i| self.y[**i]).count();
            let n0 = covered.len() - p0;
            if n0 == 0 || p0 == 0 {
                break;
            }
            let base = (p0 as f64 / covered.len() as f64).log2();
            let mut best: Option<(f64, Lit)> = None;
            for f in 0..self.features {
                sorted.clear();
                sorted.extend(covered.iter().map(|i| (self.x[*i][f], self.y[*i])));
                sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
                let (mut p_le, mut n_le) = (0usize, 0usize);
                for w in 0..sorted.len() - 1 {
                    if sorted[w].1 {
                        p_le += 1;
                    } else {
                        n_le += 1;
                    }
                    let (lo, hi) = (sorted[w].0, sorted[w + 1].0);
                    if lo == hi {
                        continue;
                    }
                    let mid = 0.5 * (lo + hi);
                    let options = [
                        (Relation::Le, if mid < hi { mid } else { lo }, p_le, n_le),
                        (Relation::Ge, if mid > lo { mid } else { hi }, p0 - p_le, n0 - n_le),
                    ];
                    for (rel, threshold, p1, n1) in options {
                        if p1 == 0 || p1 + n1 < min_cov {
                            continue;
                        }
                        let gain = p1 as f64 * ((p1 as f64 / (p1 + n1) as f64).log2() - base);
                        if gain > 1e-12 && best.is_none_or(|(g, _)| gain > g) {
                            best = Some((
                                gain,
                                Lit {
                                    feature: f,
                                    rel,
                                    threshold,
                                },
                            ));
                        }
                    }
                }
            }
            let Some((_, lit)) = best else { break };
            body.push(lit);
            covered.retain(|i| self.lit_holds(&lit, *i));
        }
        body
    }

    /// Keeps the prefix of `body` scoring best on `prune`; ties keep the
    /// longer prefix. Prefixes covering no pruning example are skipped.
    fn prune_by(
        &self,
        body: Body,
        prune: &[usize],
        min_len: usize,
        score: impl Fn(usize, usize) -> Option<f64>,
    ) -> Body {
        let mut best: Option<(f64, usize)> = None;
        for len in min_len.max(1)..=body.len() {
            let (p, n) = self.count(&body[..len], prune);
            if let Some(v) = score(p, n) {
                if best.is_none_or(|(b, _)| v >= b) {
                    best = Some((v, len));
                }
            }
        }
        match best {
            Some((_, len)) => body[..len].to_vec(),
            None => body,
        }
    }

    fn prune_irep(&self, body: Body, prune: &[usize]) -> Body {
        self.prune_by(body, prune, 1, |p, n| {
            (p + n > 0).then(|| (p as f64 - n as f64) / (p + n) as f64)
        })
    }

    /// Bits to encode the rule list plus its errors on `all`.
    fn description_length(&self, rules: &[Body], all: &[usize]) -> f64 {
        let conditions = (2 * self.features) as f64;
        let theory: f64 = rules
            .iter()
            .map(|r| {
                let k = r.len() as f64;
                let p = k / conditions;
                let subset = -k * p.log2() - (conditions - k) * (1.0 - p).log2();
                0.5 * (k.log2().max(0.0) + subset)
            })
            .sum();
        let (mut cov, mut fp, mut uncov, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for &i in all {
            if rules.iter().any(|r| self.covers(r, i)) {
                cov += 1;
                fp += u64::from(!self.y[i]);
            } else {
                uncov += 1;
                fn_ += u64::from(self.y[i]);
            }
        }
        let bits = std::f64::consts::LOG2_E;
        theory + bits * (ln_binomial(cov, fp) + ln_binomial(uncov, fn_))
    }

    /// Adds rules until the positives in `idx` are covered or a stopping
    /// criterion fires. Rules already in `rules` are kept.
    fn cover(&mut self, rules: &mut Vec<Body>, idx: Vec<usize>, all: &[usize]) {
        let mut remaining = idx;
        let start = rules.len();
        let mut min_dl = self.description_length(rules, all);
        let mut best_len = start;
        while remaining.iter().any(|i| self.y[*i]) && rules.len() < self.cfg.max_rules {
            let (grow, prune) = self.split(&remaining);
            let body = self.grow(Vec::new(), &grow);
            if body.is_empty() {
                break;
            }
            let body = self.prune_irep(body, &prune);
            let (p, n) = self.count(&body, &prune);
            if p + n > 0 && n as f64 / (p + n) as f64 >= 0.5 {
                break;
            }
            remaining.retain(|i| !self.covers(&body, *i));
            rules.push(body);
            let dl = self.description_length(rules, all);
            if dl < min_dl {
                min_dl = dl;
                best_len = rules.len();
            } else if dl > min_dl + MAX_DL_SURPLUS {
                break;
            }
        }
        rules.truncate(best_len.max(start));
    }

    fn optimize(&mut self, rules: &mut [Body], all: &[usize]) {
        for r in 0..rules.len() {
            let reach: Vec<usize> = all
                .iter()
                .copied()
                .filter(|i| !rules.iter().enumerate().any(|(j, b)| j != r && self.covers(b, *i)))
                .collect();
            if !reach.iter().any(|i| self.y[*i]) {
                continue;
            }
            let (grow, prune) = self.split(&reach);
            let errors = |p: usize, n: usize| Some(p as f64 - n as f64);
            let replacement = self.grow(Vec::new(), &grow);
            let replacement = self.prune_by(replacement, &prune, 1, errors);
            let original = rules[r].clone();
            let revision = self.grow(original.clone(), &grow);
            let revision = self.prune_by(revision, &prune, original.len(), errors);

            let mut best = (self.description_length(rules, all), original);
            for candidate in [replacement, revision] {
                if candidate.is_empty() || candidate == best.1 {
                    continue;
                }
                rules[r] = candidate.clone();
                let dl = self.description_length(rules, all);
                if dl < best.0 {
                    best = (dl, candidate);
                }
            }
            rules[r] = best.1;
        }
    }

    /// Drops rules, last first, whenever that shortens the description.
    fn simplify(&self, rules: &mut Vec<Body>, all: &[usize]) {
        let mut r = rules.len();
        while r > 0 {
            r -= 1;
            let dl = self.description_length(rules, all);
            let removed = rules.remove(r);
            if self.description_length(rules, all) >= dl {
                rules.insert(r, removed);
            }
        }
    }
}

/// Learns an ordered rule list predicting `+`, with `-` as the default.
///
/// With only one label present the result is a default-only rule list for
/// that label and a warning is logged. Deterministic for a given seed and
/// example order.
pub fn learn_ruleset(data: &[(&FeatureVector, Label)], cfg: &LearnerConfig) -> Result<RuleSet, LearnError> {
    let first = data
        .first()
        .ok_or_else(|| LearnError::Usage("training set is empty".into()))?
        .0;
    if data
        .iter()
        .any(|(f, _)| f.d_max != first.d_max || f.channels != first.channels)
    {
        return Err(LearnError::Usage("feature vectors have differing shapes".into()));
    }
    let positives = data.iter().filter(|(_, l)| l.is_positive()).count();
    if positives == 0 || positives == data.len() {
        let label = if positives == 0 {
            Label::Negative
        } else {
            Label::Positive
        };
        log::warn!("training set has only '{label}' examples; learning a default-only rule list");
        return Ok(RuleSet::default_only(label));
    }

    let mut learner = Learner {
        x: data.iter().map(|(f, _)| f.values.as_slice()).collect(),
        y: data.iter().map(|(_, l)| l.is_positive()).collect(),
        features: first.values.len(),
        cfg,
        rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0)),
    };
    let all: Vec<usize> = (0..data.len()).collect();
    let mut rules = Vec::new();
    learner.cover(&mut rules, all.clone(), &all);
    for _ in 0..cfg.optimization_rounds {
        learner.optimize(&mut rules, &all);
        let uncovered: Vec<usize> = all
            .iter()
            .copied()
            .filter(|i| !rules.iter().any(|b| learner.covers(b, *i)))
            .collect();
        learner.cover(&mut rules, uncovered, &all);
    }
    learner.simplify(&mut rules, &all);

    let keys = feature_keys(first.d_max, first.channels);
    let rules = rules
        .into_iter()
        .map(|body| Rule {
            literals: body
                .into_iter()
                .map(|l| Literal {
                    key: keys[l.feature].clone(),
                    rel: l.rel,
                    threshold: l.threshold,
                })
                .collect(),
            label: Label::Positive,
        })
        .collect();
    Ok(RuleSet {
        rules,
        default: Label::Negative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{extract_features, ruleset_to_tssl};
    use crate::rdsim::Observation;

    fn toy(n: usize, seed: u64) -> Vec<(FeatureVector, Label)> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let positive = i % 2 == 0;
                let level: f64 = if positive {
                    rng.gen_range(0.8..1.0)
                } else {
                    rng.gen_range(0.0..0.2)
                };
                let noise: Vec<f64> = (0..64).map(|_| rng.gen_range(-0.05..0.05)).collect();
                let obs = Observation::from_fn(8, |r, c| level + noise[r * 8 + c]);
                let label = if positive { Label::Positive } else { Label::Negative };
                (extract_features(&obs, 2).unwrap(), label)
            })
            .collect()
    }

    fn refs(data: &[(FeatureVector, Label)]) -> Vec<(&FeatureVector, Label)> {
        data.iter().map(|(f, l)| (f, *l)).collect()
    }

    #[test]
    fn separable_toy_set_needs_one_root_rule() {
        let train = toy(40, 1);
        let rs = learn_ruleset(&refs(&train), &LearnerConfig::default()).unwrap();
        assert_eq!(rs.rules.len(), 1, "{rs}");
        let lit = &rs.rules[0].literals[0];
        assert_eq!(rs.rules[0].literals.len(), 1);
        assert!(lit.threshold > 0.2 && lit.threshold < 0.8, "{rs}");
        assert!(train.iter().all(|(f, l)| rs.classify(f) == *l));
        let test = toy(40, 2);
        assert!(test.iter().all(|(f, l)| rs.classify(f) == *l));
        assert_eq!(ruleset_to_tssl(&rs), rs.rules[0].body_formula());
    }

    #[test]
    fn deterministic_for_a_seed() {
        let train = toy(30, 3);
        let cfg = LearnerConfig {
            seed: 9,
            ..Default::default()
        };
        assert_eq!(
            learn_ruleset(&refs(&train), &cfg).unwrap(),
            learn_ruleset(&refs(&train), &cfg).unwrap()
        );
    }

    #[test]
    fn single_class_input_gives_default_rule() {
        let train: Vec<_> = toy(10, 4).into_iter().filter(|(_, l)| l.is_positive()).collect();
        let rs = learn_ruleset(&refs(&train), &LearnerConfig::default()).unwrap();
        assert_eq!(rs, RuleSet::default_only(Label::Positive));
        assert!(learn_ruleset(&[], &LearnerConfig::default()).is_err());
    }

    #[test]
    fn rules_cover_training_examples() {
        // Positives need two conditions: bright NW quadrant and dark SE one.
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<(FeatureVector, Label)> = (0..80)
            .map(|i| {
                let nw: f64 = rng.gen();
                let se: f64 = rng.gen();
                let obs = Observation::from_fn(4, |r, c| match (r < 2, c < 2) {
                    (true, true) => nw,
                    (false, false) => se,
                    _ => 0.5,
                });
                let label = if nw > 0.5 && se < 0.5 {
                    Label::Positive
                } else {
                    Label::Negative
                };
                let _ = i;
                (extract_features(&obs, 1).unwrap(), label)
            })
            .collect();
        let rs = learn_ruleset(&refs(&data), &LearnerConfig::default()).unwrap();
        for r in &rs.rules {
            assert!(data.iter().any(|(f, _)| r.covers(f)));
        }
        let correct = data.iter().filter(|(f, l)| rs.classify(f) == *l).count();
        assert!(correct >= 76, "{correct}/80\n{rs}");
    }
}
