//! Boolean and robustness semantics.
//!
//! A formula is compiled into a hash-consed DAG so shared subformulas are
//! evaluated once, then every node is evaluated bottom-up for all states of
//! the system at once. Bounded until is unrolled backwards over its step
//! counter, which realizes the sup/inf over paths exactly.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Formula, Quantifier, Relation};
use crate::quadtree::{DirSet, Qts};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("formula uses variable m{} but the system has {available} variable(s)", var + 1)]
    UnknownVariable { var: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Node {
    True,
    False,
    Atom {
        var: usize,
        rel: Relation,
        bits: u64,
    },
    Not(usize),
    And(usize, usize),
    Next {
        quant: Quantifier,
        dirs: DirSet,
        body: usize,
    },
    Until {
        quant: Quantifier,
        dirs: DirSet,
        k: u32,
        lhs: usize,
        rhs: usize,
    },
}

/// A formula prepared for repeated evaluation against many systems.
#[derive(Debug, Clone)]
pub struct CompiledFormula {
    nodes: Vec<Node>,
    root: usize,
    max_var: Option<usize>,
}

impl CompiledFormula {
    pub fn new(phi: &Formula) -> Self {
        let mut ids = HashMap::new();
        let mut nodes = Vec::new();
        let root = intern(phi, &mut nodes, &mut ids);
        CompiledFormula {
            nodes,
            root,
            max_var: phi.max_var(),
        }
    }

    /// Number of distinct subformulas.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn validate(&self, qts: &Qts) -> Result<(), EvalError> {
        match self.max_var {
            Some(var) if var >= qts.variables() => Err(EvalError::UnknownVariable {
                var,
                available: qts.variables(),
            }),
            _ => Ok(()),
        }
    }

    /// Whether the initial state satisfies the formula.
    pub fn check(&self, qts: &Qts) -> Result<bool, EvalError> {
        Ok(self.check_all(qts)?[qts.initial()])
    }

    /// Satisfaction at every state.
    pub fn check_all(&self, qts: &Qts) -> Result<Vec<bool>, EvalError> {
        self.validate(qts)?;
        let n = qts.len();
        let mut table: Vec<Vec<bool>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let row = match *node {
                Node::True => vec![true; n],
                Node::False => vec![false; n],
                Node::Atom { var, rel, bits } => {
                    let d = f64::from_bits(bits);
                    (0..n).map(|s| rel.holds(qts.valuation(s, var), d)).collect()
                }
                Node::Not(a) => table[a].iter().map(|v| !v).collect(),
                Node::And(a, b) => table[a].iter().zip(&table[b]).map(|(x, y)| *x && *y).collect(),
                Node::Next { quant, dirs, body } => {
                    let b = &table[body];
                    (0..n)
                        .map(|s| {
                            let mut succ = qts.successors(s, dirs);
                            match quant {
                                Quantifier::Exists => succ.any(|t| b[t]),
                                Quantifier::Forall => succ.all(|t| b[t]),
                            }
                        })
                        .collect()
                }
                Node::Until {
                    quant,
                    dirs,
                    k,
                    lhs,
                    rhs,
                } => {
                    let (l, r) = (&table[lhs], &table[rhs]);
                    // later[s]: some/every path from s meets the obligation
                    // within the remaining steps.
                    let mut later = vec![false; n];
                    for _ in 0..k {
                        later = (0..n)
                            .map(|s| {
                                let mut succ = qts.successors(s, dirs);
                                l[s] && match quant {
                                    Quantifier::Exists => succ.any(|t| r[t] || later[t]),
                                    Quantifier::Forall => succ.all(|t| r[t] || later[t]),
                                }
                            })
                            .collect();
                    }
                    later
                }
            };
            table.push(row);
        }
        Ok(table.swap_remove(self.root))
    }

    /// Robustness of the initial state.
    pub fn value(&self, qts: &Qts) -> Result<f64, EvalError> {
        Ok(self.value_all(qts)?[qts.initial()])
    }

    /// Robustness at every state.
    pub fn value_all(&self, qts: &Qts) -> Result<Vec<f64>, EvalError> {
        self.validate(qts)?;
        let n = qts.len();
        let b = qts.bound();
        let mut table: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let row = match *node {
                Node::True => vec![b; n],
                Node::False => vec![-b; n],
                Node::Atom { var, rel, bits } => {
                    let d = f64::from_bits(bits);
                    (0..n)
                        .map(|s| match rel {
                            Relation::Ge => qts.valuation(s, var) - d,
                            Relation::Le => d - qts.valuation(s, var),
                        })
                        .collect()
                }
                Node::Not(a) => table[a].iter().map(|v| -v).collect(),
                Node::And(a, c) => table[a].iter().zip(&table[c]).map(|(x, y)| x.min(*y)).collect(),
                Node::Next { quant, dirs, body } => {
                    let v = &table[body];
                    (0..n)
                        .map(|s| 0.25 * extremum(quant, qts.successors(s, dirs).map(|t| v[t])))
                        .collect()
                }
                Node::Until {
                    quant,
                    dirs,
                    k,
                    lhs,
                    rhs,
                } => {
                    let (l, r) = (&table[lhs], &table[rhs]);
                    // later[s] at step d is V(s, d): the best discounted
                    // outcome of paths anchored d steps from the start.
                    let mut later = vec![f64::NEG_INFINITY; n];
                    for d in (0..k as i32).rev() {
                        let here = 0.25f64.powi(d);
                        let next = 0.25f64.powi(d + 1);
                        later = (0..n)
                            .map(|s| {
                                let best =
                                    extremum(quant, qts.successors(s, dirs).map(|t| (next * r[t]).max(later[t])));
                                (here * l[s]).min(best)
                            })
                            .collect();
                    }
                    later
                }
            };
            table.push(row);
        }
        Ok(table.swap_remove(self.root))
    }
}

fn extremum(quant: Quantifier, values: impl Iterator<Item = f64>) -> f64 {
    match quant {
        Quantifier::Exists => values.fold(f64::NEG_INFINITY, f64::max),
        Quantifier::Forall => values.fold(f64::INFINITY, f64::min),
    }
}

fn intern(phi: &Formula, nodes: &mut Vec<Node>, ids: &mut HashMap<Node, usize>) -> usize {
    let node = match phi {
        Formula::True => Node::True,
        Formula::False => Node::False,
        Formula::Atom { var, rel, threshold } => Node::Atom {
            var: *var,
            rel: *rel,
            // Fold -0.0 into 0.0 so equal thresholds share a node.
            bits: (threshold + 0.0).to_bits(),
        },
        Formula::Not(a) => Node::Not(intern(a, nodes, ids)),
        Formula::And(a, b) => Node::And(intern(a, nodes, ids), intern(b, nodes, ids)),
        Formula::Next { quant, dirs, body } => Node::Next {
            quant: *quant,
            dirs: *dirs,
            body: intern(body, nodes, ids),
        },
        Formula::Until {
            quant,
            dirs,
            k,
            lhs,
            rhs,
        } => Node::Until {
            quant: *quant,
            dirs: *dirs,
            k: *k,
            lhs: intern(lhs, nodes, ids),
            rhs: intern(rhs, nodes, ids),
        },
    };
    *ids.entry(node).or_insert_with(|| {
        nodes.push(node);
        nodes.len() - 1
    })
}

/// Whether the initial state of `qts` satisfies `phi`.
pub fn check(qts: &Qts, phi: &Formula) -> Result<bool, EvalError> {
    CompiledFormula::new(phi).check(qts)
}

/// Robustness of `phi` at the initial state of `qts`, in `[-b, b]`.
pub fn value(qts: &Qts, phi: &Formula) -> Result<f64, EvalError> {
    CompiledFormula::new(phi).value(qts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// The value is non-zero and its sign matches the boolean answer.
    Consistent,
    /// The value is exactly zero; the boolean answer is authoritative.
    Indeterminate,
    /// The value's sign contradicts the boolean answer.
    Violation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub satisfied: bool,
    pub value: f64,
    pub verdict: Verdict,
}

/// Evaluates both semantics and reports whether the robustness value's sign
/// agrees with the boolean answer.
pub fn soundness_audit(qts: &Qts, phi: &Formula) -> Result<AuditReport, EvalError> {
    let compiled = CompiledFormula::new(phi);
    let satisfied = compiled.check(qts)?;
    let value = compiled.value(qts)?;
    let verdict = if value == 0.0 {
        Verdict::Indeterminate
    } else if (value > 0.0) == satisfied {
        Verdict::Consistent
    } else {
        Verdict::Violation
    };
    Ok(AuditReport {
        satisfied,
        value,
        verdict,
    })
}
