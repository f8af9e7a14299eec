//! Tree spatial superposition logic.
//!
//! Formulas are interpreted over a [`Qts`](crate::quadtree::Qts): atoms
//! compare a state's region mean against a threshold, and the temporal
//! operators move between resolutions. `E B X phi` holds when some quadrant
//! in direction set `B` satisfies `phi`; `A B X phi` when all of them do.
//! Until is bounded: `E B [phi U k psi]` asks for a path of at most `k`
//! zooms along `B` reaching `psi` with `phi` holding before it.
//!
//! Besides the boolean semantics ([`check`]) every formula has a robustness
//! value ([`value`]) in `[-b, b]`, discounted by `1/4` per zoom level, whose
//! sign agrees with the boolean answer whenever it is non-zero.

mod eval;
mod parser;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::quadtree::DirSet;

pub use eval::{check, soundness_audit, value, AuditReport, CompiledFormula, EvalError, Verdict};
pub use parser::{parse, parse_with_bound, ParseError, ParseErrorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quantifier {
    Exists,
    Forall,
}

impl Quantifier {
    pub fn symbol(self) -> &'static str {
        match self {
            Quantifier::Exists => "E",
            Quantifier::Forall => "A",
        }
    }

    pub fn dual(self) -> Quantifier {
        match self {
            Quantifier::Exists => Quantifier::Forall,
            Quantifier::Forall => Quantifier::Exists,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Relation::Le => lhs <= rhs,
            Relation::Ge => lhs >= rhs,
        }
    }
}

/// Abstract syntax. Disjunction, eventually and globally are not part of
/// the core syntax; the constructors [`Formula::or`], [`Formula::eventually`]
/// and [`Formula::globally`] expand them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Formula {
    True,
    False,
    /// `m_var ~ threshold`, with variables numbered from 0.
    Atom {
        var: usize,
        rel: Relation,
        threshold: f64,
    },
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Next {
        quant: Quantifier,
        dirs: DirSet,
        body: Box<Formula>,
    },
    Until {
        quant: Quantifier,
        dirs: DirSet,
        k: u32,
        lhs: Box<Formula>,
        rhs: Box<Formula>,
    },
}

impl Formula {
    pub fn atom(var: usize, rel: Relation, threshold: f64) -> Formula {
        Formula::Atom { var, rel, threshold }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(phi: Formula) -> Formula {
        Formula::Not(Box::new(phi))
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    /// `a | b := !(!a & !b)`.
    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::not(Formula::and(Formula::not(a), Formula::not(b)))
    }

    pub fn next(quant: Quantifier, dirs: DirSet, body: Formula) -> Formula {
        Formula::Next {
            quant,
            dirs,
            body: Box::new(body),
        }
    }

    pub fn until(quant: Quantifier, dirs: DirSet, k: u32, lhs: Formula, rhs: Formula) -> Formula {
        Formula::Until {
            quant,
            dirs,
            k,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    /// `Q B F k phi := Q B [true U k phi]`.
    pub fn eventually(quant: Quantifier, dirs: DirSet, k: u32, phi: Formula) -> Formula {
        Formula::until(quant, dirs, k, Formula::True, phi)
    }

    /// `E B G k phi := !A B F k !phi` and `A B G k phi := !E B F k !phi`.
    pub fn globally(quant: Quantifier, dirs: DirSet, k: u32, phi: Formula) -> Formula {
        Formula::not(Formula::eventually(quant.dual(), dirs, k, Formula::not(phi)))
    }

    /// Conjunction of all items; `true` when empty.
    pub fn all(items: impl IntoIterator<Item = Formula>) -> Formula {
        items.into_iter().reduce(Formula::and).unwrap_or(Formula::True)
    }

    /// Disjunction of all items; `false` when empty.
    pub fn any(items: impl IntoIterator<Item = Formula>) -> Formula {
        items.into_iter().reduce(Formula::or).unwrap_or(Formula::False)
    }

    /// Height of the syntax tree; constants and atoms have height 0.
    pub fn height(&self) -> usize {
        match self {
            Formula::True | Formula::False | Formula::Atom { .. } => 0,
            Formula::Not(a) | Formula::Next { body: a, .. } => 1 + a.height(),
            Formula::And(a, b) | Formula::Until { lhs: a, rhs: b, .. } => 1 + a.height().max(b.height()),
        }
    }

    /// Deepest quad-tree level the formula can look at: nested next
    /// operators count 1, an until counts its bound `k`.
    pub fn modal_depth(&self) -> usize {
        match self {
            Formula::True | Formula::False | Formula::Atom { .. } => 0,
            Formula::Not(a) => a.modal_depth(),
            Formula::And(a, b) => a.modal_depth().max(b.modal_depth()),
            Formula::Next { body, .. } => 1 + body.modal_depth(),
            Formula::Until { k, lhs, rhs, .. } => {
                (*k as usize - 1 + lhs.modal_depth()).max(*k as usize + rhs.modal_depth())
            }
        }
    }

    /// Largest variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Formula::True | Formula::False => None,
            Formula::Atom { var, .. } => Some(*var),
            Formula::Not(a) | Formula::Next { body: a, .. } => a.max_var(),
            Formula::And(a, b) | Formula::Until { lhs: a, rhs: b, .. } => a.max_var().max(b.max_var()),
        }
    }

    /// Number of syntax-tree nodes.
    pub fn size(&self) -> usize {
        match self {
            Formula::True | Formula::False | Formula::Atom { .. } => 1,
            Formula::Not(a) | Formula::Next { body: a, .. } => 1 + a.size(),
            Formula::And(a, b) | Formula::Until { lhs: a, rhs: b, .. } => 1 + a.size() + b.size(),
        }
    }

    fn as_or(&self) -> Option<(&Formula, &Formula)> {
        if let Formula::Not(inner) = self {
            if let Formula::And(a, b) = inner.as_ref() {
                if let (Formula::Not(x), Formula::Not(y)) = (a.as_ref(), b.as_ref()) {
                    return Some((x, y));
                }
            }
        }
        None
    }

    fn as_globally(&self) -> Option<(Quantifier, DirSet, u32, &Formula)> {
        if let Formula::Not(inner) = self {
            if let Formula::Until {
                quant,
                dirs,
                k,
                lhs,
                rhs,
            } = inner.as_ref()
            {
                if let (Formula::True, Formula::Not(phi)) = (lhs.as_ref(), rhs.as_ref()) {
                    return Some((quant.dual(), *dirs, *k, phi));
                }
            }
        }
        None
    }
}

/// Variable name in concrete syntax: `m` for the first channel, `m2`, `m3`,
/// ... for the others.
pub fn var_name(var: usize) -> String {
    if var == 0 {
        "m".to_string()
    } else {
        format!("m{}", var + 1)
    }
}

fn fmt_dirs(dirs: DirSet) -> String {
    if dirs == DirSet::ALL {
        "*".to_string()
    } else {
        dirs.to_string()
    }
}

/// Prints in the concrete syntax accepted by [`parse`], folding the
/// expansions of `|`, `F` and `G` back into their sugar. Binary operators are
/// always parenthesized, so the output reparses to an identical tree.
impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some((a, b)) = self.as_or() {
            return write!(f, "({a} | {b})");
        }
        if let Some((q, dirs, k, phi)) = self.as_globally() {
            return write!(f, "{} {} G {k} {phi}", q.symbol(), fmt_dirs(dirs));
        }
        match self {
            Formula::True => f.write_str("true"),
            Formula::False => f.write_str("false"),
            Formula::Atom { var, rel, threshold } => {
                write!(f, "({} {} {})", var_name(*var), rel.symbol(), threshold)
            }
            Formula::Not(a) => write!(f, "!{a}"),
            Formula::And(a, b) => write!(f, "({a} & {b})"),
            Formula::Next { quant, dirs, body } => {
                write!(f, "{} {} X {body}", quant.symbol(), fmt_dirs(*dirs))
            }
            Formula::Until {
                quant,
                dirs,
                k,
                lhs,
                rhs,
            } => {
                if **lhs == Formula::True {
                    write!(f, "{} {} F {k} {rhs}", quant.symbol(), fmt_dirs(*dirs))
                } else {
                    write!(f, "{} {} [{lhs} U {k} {rhs}]", quant.symbol(), fmt_dirs(*dirs))
                }
            }
        }
    }
}
