//! Ordered rule lists and their translation into a formula.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::features::{FeatureKey, FeatureVector};
use crate::io::Label;
use crate::quadtree::DirSet;
use crate::tssl::{Formula, Quantifier, Relation};

/// `feature ~ threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Literal {
    pub key: FeatureKey,
    pub rel: Relation,
    pub threshold: f64,
}

impl Literal {
    pub fn holds(&self, features: &FeatureVector) -> bool {
        self.rel.holds(features.get(&self.key), self.threshold)
    }

    /// `E {a1} X ... E {ad} X (m ~ t)` for address `a1 ... ad`.
    pub fn to_formula(&self) -> Formula {
        self.key
            .address
            .iter()
            .rev()
            .fold(Formula::atom(self.key.channel, self.rel, self.threshold), |body, d| {
                Formula::next(Quantifier::Exists, DirSet::single(*d), body)
            })
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} {} {})", self.key, self.rel.symbol(), self.threshold)
    }
}

/// A conjunction of literals implying a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub literals: Vec<Literal>,
    pub label: Label,
}

impl Rule {
    pub fn covers(&self, features: &FeatureVector) -> bool {
        self.literals.iter().all(|l| l.holds(features))
    }

    /// Conjunction of the literal formulas; `true` for an empty body.
    pub fn body_formula(&self) -> Formula {
        Formula::all(self.literals.iter().map(Literal::to_formula))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, lit) in self.literals.iter().enumerate() {
            if n > 0 {
                f.write_str(" & ")?;
            }
            write!(f, "{lit}")?;
        }
        if !self.literals.is_empty() {
            f.write_str(" ")?;
        }
        write!(f, "=> {}", self.label)
    }
}

/// Rules tried in order; the first covering rule decides, and `default`
/// applies when none does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
    pub default: Label,
}

impl RuleSet {
    pub fn default_only(label: Label) -> Self {
        RuleSet {
            rules: Vec::new(),
            default: label,
        }
    }

    pub fn classify(&self, features: &FeatureVector) -> Label {
        self.rules
            .iter()
            .find(|r| r.covers(features))
            .map_or(self.default, |r| r.label)
    }

    /// Number of rules including the default.
    pub fn len(&self) -> usize {
        self.rules.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// One rule per line, the default last as a bare `=> label`.
impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        writeln!(f, "=> {}", self.default)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("rule line {line}: {msg}")]
pub struct RuleParseError {
    pub line: usize,
    pub msg: String,
}

impl FromStr for RuleSet {
    type Err = RuleParseError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut rules = Vec::new();
        let mut default = None;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let err = |msg: String| RuleParseError { line, msg };
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if default.is_some() {
                return Err(err("rules after the default rule".into()));
            }
            let (lhs, label) = body.rsplit_once("=>").ok_or_else(|| err("missing '=>'".into()))?;
            let label: Label = label.trim().parse().map_err(err)?;
            let lhs = lhs.trim();
            if lhs.is_empty() {
                default = Some(label);
                continue;
            }
            let literals = lhs
                .split('&')
                .map(|lit| parse_literal(lit.trim()).map_err(err))
                .collect::<Result<Vec<_>, _>>()?;
            rules.push(Rule { literals, label });
        }
        let default = default.ok_or(RuleParseError {
            line: text.lines().count(),
            msg: "missing default rule".into(),
        })?;
        Ok(RuleSet { rules, default })
    }
}

fn parse_literal(text: &str) -> Result<Literal, String> {
    let inner = text
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| format!("literal '{text}' must be parenthesized"))?;
    let (key, rel, value) = if let Some((k, v)) = inner.split_once("<=") {
        (k, Relation::Le, v)
    } else if let Some((k, v)) = inner.split_once(">=") {
        (k, Relation::Ge, v)
    } else {
        return Err(format!("literal '{text}' needs '<=' or '>='"));
    };
    let threshold: f64 = value
        .trim()
        .parse()
        .map_err(|_| format!("bad threshold '{}'", value.trim()))?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(format!("threshold {threshold} outside [0, 1]"));
    }
    Ok(Literal {
        key: key.trim().parse()?,
        rel,
        threshold,
    })
}

/// Translates an ordered rule list into one formula:
/// the disjunction, over positive rules `j` (the default counting as a rule
/// with an empty body), of `body_j & !body_i` for every earlier rule `i`.
/// Conjunctions with `true` are dropped.
pub fn ruleset_to_tssl(rs: &RuleSet) -> Formula {
    let mut bodies: Vec<Formula> = rs.rules.iter().map(Rule::body_formula).collect();
    bodies.push(Formula::True);
    let labels = rs.rules.iter().map(|r| r.label).chain(std::iter::once(rs.default));
    let disjuncts = labels
        .enumerate()
        .filter(|(_, label)| label.is_positive())
        .map(|(j, _)| {
            let guards = bodies[..j].iter().map(|b| Formula::not(b.clone()));
            std::iter::once(bodies[j].clone())
                .chain(guards)
                .filter(|f| *f != Formula::True)
                .reduce(Formula::and)
                .unwrap_or(Formula::True)
        });
    Formula::any(disjuncts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadtree::Direction::*;
    use crate::tssl::parse;

    fn lit(key: &str, rel: Relation, t: f64) -> Literal {
        Literal {
            key: key.parse().unwrap(),
            rel,
            threshold: t,
        }
    }

    fn r1() -> Rule {
        Rule {
            literals: vec![
                lit("R", Relation::Ge, 0.59),
                lit("R", Relation::Le, 0.70),
                lit("R.NW.NW.NW.SE", Relation::Le, 0.75),
                lit("R.NW.NW.NW.NW", Relation::Ge, 0.45),
            ],
            label: Label::Positive,
        }
    }

    #[test]
    fn rule_text_round_trip() {
        let rs = RuleSet {
            rules: vec![r1()],
            default: Label::Negative,
        };
        let text = rs.to_string();
        assert_eq!(
            text,
            "(R >= 0.59) & (R <= 0.7) & (R.NW.NW.NW.SE <= 0.75) & (R.NW.NW.NW.NW >= 0.45) => +\n=> -\n"
        );
        assert_eq!(text.parse::<RuleSet>().unwrap(), rs);
        assert!("(R >= 0.5) => +\n".parse::<RuleSet>().is_err());
        assert!("(R >= 1.5) => +\n=> -".parse::<RuleSet>().is_err());
        assert!("R >= 0.5 => +\n=> -".parse::<RuleSet>().is_err());
    }

    #[test]
    fn literal_translation_nests_existential_next() {
        let l = lit("R.NW.SE", Relation::Le, 0.75);
        assert_eq!(l.to_formula(), parse("E {NW} X E {SE} X m <= 0.75").unwrap());
        let root = lit("R/m2", Relation::Ge, 0.5);
        assert_eq!(root.to_formula(), parse("m2 >= 0.5").unwrap());
        assert_eq!(root.key.address, vec![]);
        assert_eq!(l.key.address, vec![NW, SE]);
    }

    #[test]
    fn example_rule_translates_from_the_rule() {
        let rs = RuleSet {
            rules: vec![r1()],
            default: Label::Negative,
        };
        let expected = parse(
            "m >= 0.59 & m <= 0.70 & E {NW} X E {NW} X E {NW} X E {SE} X m <= 0.75 \
             & E {NW} X E {NW} X E {NW} X E {NW} X m >= 0.45",
        )
        .unwrap();
        assert_eq!(ruleset_to_tssl(&rs), expected);
    }

    #[test]
    fn degenerate_and_ordered_sets() {
        assert_eq!(ruleset_to_tssl(&RuleSet::default_only(Label::Positive)), Formula::True);
        assert_eq!(ruleset_to_tssl(&RuleSet::default_only(Label::Negative)), Formula::False);
        let a = Rule {
            literals: vec![lit("R", Relation::Ge, 0.5)],
            label: Label::Positive,
        };
        let b = Rule {
            literals: vec![lit("R.NE", Relation::Le, 0.2)],
            label: Label::Negative,
        };
        let rs = RuleSet {
            rules: vec![a.clone(), b.clone()],
            default: Label::Negative,
        };
        assert_eq!(ruleset_to_tssl(&rs), a.body_formula());
        let with_default = RuleSet {
            rules: vec![a.clone(), b.clone()],
            default: Label::Positive,
        };
        let expected = Formula::or(
            a.body_formula(),
            Formula::and(Formula::not(a.body_formula()), Formula::not(b.body_formula())),
        );
        assert_eq!(ruleset_to_tssl(&with_default), expected);
    }
}
