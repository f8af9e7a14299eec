//! Generators and reference implementations shared by the integration tests.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use superpose::quadtree::{DirSet, Direction, Qts};
use superpose::rdsim::Observation;
use superpose::tssl::{Formula, Quantifier, Relation};

/// Thresholds and valuations are drawn from this grid half of the time so
/// that ties and zero robustness values come up.
const GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn unit_value(rng: &mut impl Rng) -> f64 {
    if rng.gen_bool(0.5) {
        *GRID.choose(rng).unwrap()
    } else {
        rng.gen_range(0.0..=1.0)
    }
}

/// Random partition of the four directions into non-empty labels.
fn random_labels(rng: &mut impl Rng) -> Vec<DirSet> {
    let groups = rng.gen_range(1..=4);
    let mut labels = vec![DirSet::EMPTY; groups];
    let mut dirs = Direction::ALL;
    dirs.shuffle(rng);
    for (n, d) in dirs.iter().enumerate() {
        let g = if n < groups { n } else { rng.gen_range(0..groups) };
        labels[g].insert(*d);
    }
    labels
}

/// A valid transition system with `n` states and `vars` variables in [0, 1].
pub fn random_qts(rng: &mut impl Rng, n: usize, vars: usize) -> Qts {
    let valuations = (0..n).map(|_| (0..vars).map(|_| unit_value(rng)).collect()).collect();
    let transitions = (0..n)
        .map(|_| {
            random_labels(rng)
                .into_iter()
                .map(|label| (rng.gen_range(0..n), label))
                .collect()
        })
        .collect();
    Qts::new(valuations, transitions).expect("generated system is valid")
}

fn random_dirs(rng: &mut impl Rng) -> DirSet {
    DirSet::from_bits(rng.gen_range(1..16)).unwrap()
}

fn random_quant(rng: &mut impl Rng) -> Quantifier {
    if rng.gen_bool(0.5) {
        Quantifier::Exists
    } else {
        Quantifier::Forall
    }
}

/// Random formula of syntax-tree height at most `height`, over `vars`
/// variables, with until bounds up to `max_k`. Derived operators appear as
/// their expansions.
pub fn random_formula<R: Rng>(rng: &mut R, height: usize, vars: usize, max_k: u32) -> Formula {
    if height == 0 || rng.gen_bool(0.2) {
        return match rng.gen_range(0..10) {
            0 => Formula::True,
            1 => Formula::False,
            _ => {
                let rel = if rng.gen_bool(0.5) { Relation::Ge } else { Relation::Le };
                Formula::atom(rng.gen_range(0..vars), rel, unit_value(rng))
            }
        };
    }
    let sub = |rng: &mut R| random_formula(rng, height - 1, vars, max_k);
    match rng.gen_range(0..8) {
        0 => Formula::not(sub(rng)),
        1 => Formula::and(sub(rng), sub(rng)),
        2 if height >= 3 => Formula::or(
            random_formula(rng, height - 3, vars, max_k),
            random_formula(rng, height - 3, vars, max_k),
        ),
        3 | 4 => Formula::next(random_quant(rng), random_dirs(rng), sub(rng)),
        5 | 6 => {
            let k = rng.gen_range(1..=max_k);
            Formula::until(random_quant(rng), random_dirs(rng), k, sub(rng), sub(rng))
        }
        7 if height >= 3 => {
            let k = rng.gen_range(1..=max_k);
            Formula::globally(
                random_quant(rng),
                random_dirs(rng),
                k,
                random_formula(rng, height - 3, vars, max_k),
            )
        }
        _ => Formula::and(sub(rng), sub(rng)),
    }
}

/// Every sequence of `len` directions drawn from `dirs`.
fn direction_sequences(dirs: DirSet, len: usize) -> Vec<Vec<Direction>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                dirs.iter().map(move |d| {
                    let mut q = p.clone();
                    q.push(d);
                    q
                })
            })
            .collect();
    }
    out
}

/// States visited by following `path` from `s`, starting with `s`.
fn walk(qts: &Qts, s: usize, path: &[Direction]) -> Vec<usize> {
    let mut states = vec![s];
    for d in path {
        states.push(qts.step(*states.last().unwrap(), *d));
    }
    states
}

/// Boolean semantics by explicit enumeration of direction paths, with no
/// sharing between subformulas or states.
pub fn naive_check(qts: &Qts, s: usize, phi: &Formula) -> bool {
    match phi {
        Formula::True => true,
        Formula::False => false,
        Formula::Atom { var, rel, threshold } => match rel {
            Relation::Ge => qts.valuation(s, *var) >= *threshold,
            Relation::Le => qts.valuation(s, *var) <= *threshold,
        },
        Formula::Not(a) => !naive_check(qts, s, a),
        Formula::And(a, b) => naive_check(qts, s, a) && naive_check(qts, s, b),
        Formula::Next { quant, dirs, body } => {
            let mut each = dirs.iter().map(|d| naive_check(qts, qts.step(s, d), body));
            match quant {
                Quantifier::Exists => each.any(|b| b),
                Quantifier::Forall => each.all(|b| b),
            }
        }
        Formula::Until {
            quant,
            dirs,
            k,
            lhs,
            rhs,
        } => {
            let mut each = direction_sequences(*dirs, *k as usize).into_iter().map(|path| {
                let states = walk(qts, s, &path);
                (1..=*k as usize)
                    .any(|i| naive_check(qts, states[i], rhs) && (0..i).all(|j| naive_check(qts, states[j], lhs)))
            });
            match quant {
                Quantifier::Exists => each.any(|b| b),
                Quantifier::Forall => each.all(|b| b),
            }
        }
    }
}

/// Robustness semantics by explicit path enumeration.
pub fn naive_value(qts: &Qts, s: usize, phi: &Formula) -> f64 {
    let b = qts.bound();
    match phi {
        Formula::True => b,
        Formula::False => -b,
        Formula::Atom { var, rel, threshold } => match rel {
            Relation::Ge => qts.valuation(s, *var) - threshold,
            Relation::Le => threshold - qts.valuation(s, *var),
        },
        Formula::Not(a) => -naive_value(qts, s, a),
        Formula::And(a, c) => naive_value(qts, s, a).min(naive_value(qts, s, c)),
        Formula::Next { quant, dirs, body } => {
            let each = dirs.iter().map(|d| naive_value(qts, qts.step(s, d), body) / 4.0);
            extremum(*quant, each)
        }
        Formula::Until {
            quant,
            dirs,
            k,
            lhs,
            rhs,
        } => {
            let per_path = direction_sequences(*dirs, *k as usize).into_iter().map(|path| {
                let states = walk(qts, s, &path);
                (1..=*k as usize)
                    .map(|i| {
                        let reach = 0.25f64.powi(i as i32) * naive_value(qts, states[i], rhs);
                        (0..i)
                            .map(|j| 0.25f64.powi(j as i32) * naive_value(qts, states[j], lhs))
                            .fold(reach, f64::min)
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            });
            extremum(*quant, per_path)
        }
    }
}

fn extremum(quant: Quantifier, values: impl Iterator<Item = f64>) -> f64 {
    match quant {
        Quantifier::Exists => values.fold(f64::NEG_INFINITY, f64::max),
        Quantifier::Forall => values.fold(f64::INFINITY, f64::min),
    }
}

/// Mean of the square `[row, row + size) x [col, col + size)` of channel `c`.
pub fn block_mean(obs: &Observation, c: usize, row: usize, col: usize, size: usize) -> f64 {
    let mut sum = 0.0;
    for i in row..row + size {
        for j in col..col + size {
            sum += obs.get(c, i, j);
        }
    }
    sum / (size * size) as f64
}

/// Random observation with side `2^k`: noise, blocky piecewise-constant
/// patterns, or a mix, so quad-trees range from full to heavily merged.
pub fn random_observation(rng: &mut impl Rng, side: usize, channels: usize) -> Observation {
    let levels = [2usize, 4, 16][rng.gen_range(0..3)];
    let block = 1usize << rng.gen_range(0..=side.trailing_zeros());
    let mut values = Vec::with_capacity(side * side * channels);
    for _ in 0..channels {
        let style = rng.gen_range(0..3);
        let blocks = side / block;
        let palette: Vec<f64> = (0..blocks * blocks)
            .map(|_| rng.gen_range(0..levels) as f64 / (levels - 1) as f64)
            .collect();
        for i in 0..side {
            for j in 0..side {
                let v = match style {
                    0 => rng.gen_range(0.0..=1.0),
                    1 => palette[(i / block) * blocks + j / block],
                    _ if rng.gen_bool(0.1) => rng.gen_range(0.0..=1.0),
                    _ => palette[(i / block) * blocks + j / block],
                };
                values.push(v);
            }
        }
    }
    Observation::new(side, channels, values).expect("valid observation")
}
