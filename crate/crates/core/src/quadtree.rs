//! Quad-tree abstraction of observations and quad transition systems.
//!
//! A quad-tree splits a `2^k x 2^k` matrix into its four quadrants
//! recursively, stopping where a block is uniform. Folding equivalent
//! vertices of the tree together gives a [`Qts`]: a small transition system
//! whose edges zoom into quadrants and whose states carry region means.
//!
//! Quadrants are named by compass direction with rows growing downwards:
//! `NW` is the top-left quadrant, `SE` the bottom-right.

use std::collections::{HashMap, VecDeque};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rdsim::Observation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("invalid quad-tree input: {0}")]
    Usage(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("malformed transition system: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    NW,
    NE,
    SE,
    SW,
}

impl Direction {
    /// All directions in canonical order.
    pub const ALL: [Direction; 4] = [Direction::NW, Direction::NE, Direction::SE, Direction::SW];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Direction> {
        Direction::ALL.get(i).copied()
    }

    /// `(row, col)` offset of the quadrant, in units of half the block side.
    pub fn offset(self) -> (usize, usize) {
        match self {
            Direction::NW => (0, 0),
            Direction::NE => (0, 1),
            Direction::SE => (1, 1),
            Direction::SW => (1, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::NW => "NW",
            Direction::NE => "NE",
            Direction::SE => "SE",
            Direction::SW => "SW",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Direction::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown direction '{s}'"))
    }
}

/// A set of directions, stored as a 4-bit mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct DirSet(u8);

impl DirSet {
    pub const EMPTY: DirSet = DirSet(0);
    pub const ALL: DirSet = DirSet(0b1111);

    pub fn single(d: Direction) -> Self {
        DirSet(1 << d.index())
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits <= 0b1111).then_some(DirSet(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, d: Direction) -> bool {
        self.0 & (1 << d.index()) != 0
    }

    pub fn intersects(self, other: DirSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn union(self, other: DirSet) -> DirSet {
        DirSet(self.0 | other.0)
    }

    pub fn insert(&mut self, d: Direction) {
        self.0 |= 1 << d.index();
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Direction> {
        Direction::ALL.into_iter().filter(move |d| self.contains(*d))
    }
}

impl FromIterator<Direction> for DirSet {
    fn from_iter<I: IntoIterator<Item = Direction>>(iter: I) -> Self {
        let mut s = DirSet::EMPTY;
        for d in iter {
            s.insert(d);
        }
        s
    }
}

impl fmt::Display for DirSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_char('{')?;
        for (n, d) in self.iter().enumerate() {
            if n > 0 {
                f.write_char(',')?;
            }
            f.write_str(d.name())?;
        }
        f.write_char('}')
    }
}

impl fmt::Debug for DirSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for DirSet {
    type Err = String;

    /// Accepts `{NW,SE}` or `*`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "*" {
            return Ok(DirSet::ALL);
        }
        let inner = s
            .strip_prefix('{')
            .and_then(|r| r.strip_suffix('}'))
            .ok_or_else(|| format!("direction set '{s}' must be '*' or '{{...}}'"))?;
        let set: DirSet = inner
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(Direction::from_str)
            .collect::<Result<_, _>>()?;
        if set.is_empty() {
            return Err("empty direction set".into());
        }
        Ok(set)
    }
}

/// Bin index of `v` among `levels` uniform bins over `[0, 1]`.
pub fn quantize(v: f64, levels: usize) -> u32 {
    ((v * levels as f64).floor() as i64).clamp(0, levels as i64 - 1) as u32
}

/// Block means of an observation at every resolution.
///
/// Level `l` holds a `2^l x 2^l` grid per channel; level `k` is the
/// observation itself.
#[derive(Debug, Clone)]
pub struct MeanPyramid {
    channels: usize,
    levels: Vec<Vec<f64>>,
}

impl MeanPyramid {
    pub fn new(obs: &Observation) -> Self {
        let k = obs.depth();
        let channels = obs.channels();
        let mut levels = vec![Vec::new(); k + 1];
        levels[k] = obs.values().to_vec();
        for l in (0..k).rev() {
            let n = 1usize << l;
            let fine = &levels[l + 1];
            let mut coarse = Vec::with_capacity(n * n * channels);
            for c in 0..channels {
                let base = c * 4 * n * n;
                for i in 0..n {
                    for j in 0..n {
                        let at = |a: usize, b: usize| fine[base + a * 2 * n + b];
                        let (a, b) = (2 * i, 2 * j);
                        coarse.push((at(a, b) + at(a, b + 1) + at(a + 1, b + 1) + at(a + 1, b)) / 4.0);
                    }
                }
            }
            levels[l] = coarse;
        }
        MeanPyramid { channels, levels }
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Mean of channel `c` over block `(i, j)` of level `l`.
    pub fn get(&self, l: usize, c: usize, i: usize, j: usize) -> f64 {
        let n = 1usize << l;
        self.levels[l][(c * n + i) * n + j]
    }

    /// Mean of channel `c` over the block reached by following `address`
    /// from the whole matrix.
    pub fn at_address(&self, address: &[Direction], c: usize) -> f64 {
        let (mut i, mut j) = (0, 0);
        for d in address {
            let (di, dj) = d.offset();
            i = 2 * i + di;
            j = 2 * j + dj;
        }
        self.get(address.len(), c, i, j)
    }
}

pub type VertexId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    /// Top-left cell of the covered block.
    pub row: usize,
    pub col: usize,
    pub size: usize,
    pub depth: usize,
    pub means: Vec<f64>,
    /// Children indexed by [`Direction::index`]; `None` for leaves.
    pub children: Option<[VertexId; 4]>,
}

impl Vertex {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    /// Inclusive row and column ranges `[i_s, i_e; j_s, j_e]`.
    pub fn bounds(&self) -> ((usize, usize), (usize, usize)) {
        (
            (self.row, self.row + self.size - 1),
            (self.col, self.col + self.size - 1),
        )
    }
}

/// Vertices are numbered breadth-first with children in direction order;
/// the root is vertex 0.
#[derive(Debug, Clone)]
pub struct QuadTree {
    vertices: Vec<Vertex>,
    channels: usize,
    quant_levels: usize,
}

impl QuadTree {
    pub fn root(&self) -> VertexId {
        0
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex(&self, v: VertexId) -> &Vertex {
        &self.vertices[v]
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn quant_levels(&self) -> usize {
        self.quant_levels
    }

    /// Mean of channel `c` over the block covered by `v`.
    pub fn mean(&self, v: VertexId, c: usize) -> f64 {
        self.vertices[v].means[c]
    }

    pub fn leaves(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.len()).filter(|v| self.vertices[*v].is_leaf())
    }
}

/// Upper bound on the vertex count of a quad-tree over a `2^k x 2^k` matrix.
pub fn max_vertices(k: usize) -> usize {
    (0..=k).map(|i| 1usize << (2 * i)).sum()
}

/// Builds the quad-tree of `obs`. A block becomes a leaf when, in every
/// channel, all its cells fall in the same of `quant_levels` uniform bins;
/// means are always computed on the unquantized values.
pub fn build_quadtree(obs: &Observation, quant_levels: usize) -> Result<QuadTree, QuadError> {
    if quant_levels < 2 {
        return Err(QuadError::Usage(format!(
            "quant_levels must be at least 2, got {quant_levels}"
        )));
    }
    if !obs.side().is_power_of_two() {
        return Err(QuadError::Usage(format!("side {} is not a power of two", obs.side())));
    }
    let k = obs.depth();
    let channels = obs.channels();
    let means = MeanPyramid::new(obs);

    // Per-level min and max bin of every block, per channel.
    let mut lo: Vec<Vec<u32>> = vec![Vec::new(); k + 1];
    let mut hi: Vec<Vec<u32>> = vec![Vec::new(); k + 1];
    lo[k] = obs.values().iter().map(|v| quantize(*v, quant_levels)).collect();
    hi[k] = lo[k].clone();
    for l in (0..k).rev() {
        let n = 1usize << l;
        let mut lo_l = Vec::with_capacity(n * n * channels);
        let mut hi_l = Vec::with_capacity(n * n * channels);
        for c in 0..channels {
            let base = c * 4 * n * n;
            for i in 0..n {
                for j in 0..n {
                    let idx = [
                        base + 2 * i * 2 * n + 2 * j,
                        base + 2 * i * 2 * n + 2 * j + 1,
                        base + (2 * i + 1) * 2 * n + 2 * j,
                        base + (2 * i + 1) * 2 * n + 2 * j + 1,
                    ];
                    lo_l.push(idx.iter().map(|x| lo[l + 1][*x]).min().unwrap());
                    hi_l.push(idx.iter().map(|x| hi[l + 1][*x]).max().unwrap());
                }
            }
        }
        lo[l] = lo_l;
        hi[l] = hi_l;
    }
    let uniform = |l: usize, i: usize, j: usize| {
        let n = 1usize << l;
        (0..channels).all(|c| {
            let x = (c * n + i) * n + j;
            lo[l][x] == hi[l][x]
        })
    };

    let mut vertices = Vec::new();
    let mut queue = VecDeque::new();
    vertices.push(Vertex {
        row: 0,
        col: 0,
        size: obs.side(),
        depth: 0,
        means: (0..channels).map(|c| means.get(0, c, 0, 0)).collect(),
        children: None,
    });
    queue.push_back((0usize, 0usize, 0usize));
    while let Some((v, bi, bj)) = queue.pop_front() {
        let l = vertices[v].depth;
        if uniform(l, bi, bj) {
            continue;
        }
        let mut children = [0; 4];
        for d in Direction::ALL {
            let (di, dj) = d.offset();
            let (ci, cj) = (2 * bi + di, 2 * bj + dj);
            let size = vertices[v].size / 2;
            children[d.index()] = vertices.len();
            vertices.push(Vertex {
                row: ci * size,
                col: cj * size,
                size,
                depth: l + 1,
                means: (0..channels).map(|c| means.get(l + 1, c, ci, cj)).collect(),
                children: None,
            });
            queue.push_back((children[d.index()], ci, cj));
        }
        vertices[v].children = Some(children);
    }
    Ok(QuadTree {
        vertices,
        channels,
        quant_levels,
    })
}

pub type StateId = usize;

/// Quad transition system.
///
/// State 0 is the initial state. Each state's outgoing labels are pairwise
/// disjoint and cover all four directions, so every direction leads to
/// exactly one successor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Qts {
    valuations: Vec<Vec<f64>>,
    transitions: Vec<Vec<(StateId, DirSet)>>,
    variables: usize,
    bound: f64,
}

impl Qts {
    /// Builds and validates a transition system with valuation bound 1.
    pub fn new(valuations: Vec<Vec<f64>>, transitions: Vec<Vec<(StateId, DirSet)>>) -> Result<Self, QuadError> {
        Self::with_bound(valuations, transitions, 1.0)
    }

    pub fn with_bound(
        valuations: Vec<Vec<f64>>,
        transitions: Vec<Vec<(StateId, DirSet)>>,
        bound: f64,
    ) -> Result<Self, QuadError> {
        let bad = |m: String| Err(QuadError::Malformed(m));
        if valuations.is_empty() {
            return bad("no states".into());
        }
        if !(bound > 0.0 && bound.is_finite()) {
            return bad(format!("bound {bound} must be positive"));
        }
        if transitions.len() != valuations.len() {
            return bad(format!(
                "{} states but {} transition lists",
                valuations.len(),
                transitions.len()
            ));
        }
        let variables = valuations[0].len();
        if variables == 0 {
            return bad("no variables".into());
        }
        for (s, val) in valuations.iter().enumerate() {
            if val.len() != variables {
                return bad(format!("state {s} has {} values, expected {variables}", val.len()));
            }
            if let Some(v) = val.iter().find(|v| !(0.0..=bound).contains(*v)) {
                return bad(format!("state {s} value {v} outside [0, {bound}]"));
            }
        }
        for (s, out) in transitions.iter().enumerate() {
            let mut seen = DirSet::EMPTY;
            for &(t, label) in out {
                if t >= valuations.len() {
                    return bad(format!("transition {s} -> {t} leaves the state set"));
                }
                if label.is_empty() || seen.intersects(label) {
                    return bad(format!("labels of state {s} are empty or overlap"));
                }
                seen = seen.union(label);
            }
            if seen != DirSet::ALL {
                return bad(format!("labels of state {s} do not cover all directions"));
            }
        }
        Ok(Qts {
            valuations,
            transitions,
            variables,
            bound,
        })
    }

    /// Quad-tree followed by [`build_qts`].
    pub fn from_observation(obs: &Observation, quant_levels: usize) -> Result<Self, QuadError> {
        Ok(build_qts(&build_quadtree(obs, quant_levels)?))
    }

    pub fn initial(&self) -> StateId {
        0
    }

    pub fn len(&self) -> usize {
        self.valuations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valuations.is_empty()
    }

    pub fn variables(&self) -> usize {
        self.variables
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// `[s](m_c)`, with channels numbered from 0.
    pub fn valuation(&self, s: StateId, c: usize) -> f64 {
        self.valuations[s][c]
    }

    pub fn transitions(&self, s: StateId) -> &[(StateId, DirSet)] {
        &self.transitions[s]
    }

    /// States reachable in one step from `s` over a transition whose label
    /// meets `dirs`, in transition order.
    pub fn successors(&self, s: StateId, dirs: DirSet) -> impl Iterator<Item = StateId> + '_ {
        self.transitions[s]
            .iter()
            .filter(move |(_, l)| l.intersects(dirs))
            .map(|(t, _)| *t)
    }

    /// The unique successor of `s` in direction `d`.
    pub fn step(&self, s: StateId, d: Direction) -> StateId {
        self.transitions[s]
            .iter()
            .find(|(_, l)| l.contains(d))
            .map(|(t, _)| *t)
            .expect("labels cover every direction")
    }

    /// The state reached from the initial state along `address`.
    pub fn follow(&self, address: &[Direction]) -> StateId {
        address.iter().fold(self.initial(), |s, d| self.step(s, *d))
    }

    pub fn has_self_loop(&self) -> bool {
        (0..self.len()).any(|s| self.transitions[s].iter().any(|(t, _)| *t == s))
    }

    /// Text form: a header, one `state` line per state with 6-decimal
    /// valuations, then one `s --{..}--> t` line per transition.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "qts states={} vars={} bound={}",
            self.len(),
            self.variables,
            self.bound
        );
        for (s, val) in self.valuations.iter().enumerate() {
            let vals: Vec<String> = val.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(out, "state {s} {}", vals.join(" "));
        }
        for (s, out_edges) in self.transitions.iter().enumerate() {
            for (t, label) in out_edges {
                let _ = writeln!(out, "{s} --{label}--> {t}");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, QuadError> {
        let mut valuations: Vec<Vec<f64>> = Vec::new();
        let mut transitions: Vec<Vec<(StateId, DirSet)>> = Vec::new();
        let mut bound = 1.0;
        let mut declared = None;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let err = |msg: String| QuadError::Parse { line: line_no, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("qts") {
                for field in rest.split_whitespace() {
                    let (key, value) = field
                        .split_once('=')
                        .ok_or_else(|| err(format!("bad header field '{field}'")))?;
                    match key {
                        "states" => {
                            declared = Some(
                                value
                                    .parse::<usize>()
                                    .map_err(|_| err(format!("bad state count '{value}'")))?,
                            )
                        }
                        "bound" => bound = value.parse().map_err(|_| err(format!("bad bound '{value}'")))?,
                        "vars" => {}
                        _ => return Err(err(format!("unknown header field '{key}'"))),
                    }
                }
            } else if let Some(rest) = line.strip_prefix("state") {
                let mut parts = rest.split_whitespace();
                let id: usize = parts
                    .next()
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| err("expected a state number".into()))?;
                if id != valuations.len() {
                    return Err(err(format!("state {id} out of order")));
                }
                let vals = parts
                    .map(|p| p.parse::<f64>().map_err(|_| err(format!("bad value '{p}'"))))
                    .collect::<Result<Vec<_>, _>>()?;
                valuations.push(vals);
                transitions.push(Vec::new());
            } else {
                let (lhs, rest) = line
                    .split_once("--")
                    .ok_or_else(|| err(format!("unrecognized line '{line}'")))?;
                let (label, rhs) = rest.split_once("-->").ok_or_else(|| err("expected '-->'".into()))?;
                let s: usize = lhs
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("bad source '{}'", lhs.trim())))?;
                let t: usize = rhs
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("bad target '{}'", rhs.trim())))?;
                let label: DirSet = label.parse().map_err(err)?;
                let list = transitions
                    .get_mut(s)
                    .ok_or_else(|| err(format!("transition from undeclared state {s}")))?;
                list.push((t, label));
            }
        }
        if let Some(d) = declared {
            if d != valuations.len() {
                return Err(QuadError::Malformed(format!(
                    "header declares {d} states, found {}",
                    valuations.len()
                )));
            }
        }
        Self::with_bound(valuations, transitions, bound)
    }

    /// Graphviz rendering; node labels show valuations.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph qts {\n  node [shape=circle];\n  init [shape=point];\n  init -> s0;\n");
        for (s, val) in self.valuations.iter().enumerate() {
            let vals: Vec<String> = val.iter().map(|v| format!("{v:.3}")).collect();
            let _ = writeln!(out, "  s{s} [label=\"s{s}\\n{}\"];", vals.join(","));
        }
        for (s, edges) in self.transitions.iter().enumerate() {
            for (t, label) in edges {
                let _ = writeln!(out, "  s{s} -> s{t} [label=\"{label}\"];");
            }
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Hash, PartialEq, Eq)]
enum Class {
    Leaf(Vec<u32>),
    Interior(Vec<u32>, [StateId; 4]),
}

/// Folds a quad-tree into a transition system.
///
/// Leaves with equal quantized means share a state with a self-loop on all
/// directions. Interior vertices share a state when their quantized means
/// and the states of their four children all agree, which keeps every
/// state's labels a partition of the directions. States are numbered
/// breadth-first from the root, and each takes the exact means of the first
/// vertex (in vertex order) it represents.
pub fn build_qts(qt: &QuadTree) -> Qts {
    let levels = qt.quant_levels;
    let key = |v: &Vertex| -> Vec<u32> { v.means.iter().map(|m| quantize(*m, levels)).collect() };

    let mut classes: HashMap<Class, StateId> = HashMap::new();
    let mut state_of = vec![0; qt.len()];
    let mut representative: Vec<VertexId> = Vec::new();
    let mut children_of: Vec<Option<[StateId; 4]>> = Vec::new();
    // Children always have larger ids than their parent.
    for v in (0..qt.len()).rev() {
        let vertex = &qt.vertices[v];
        let class = match vertex.children {
            None => Class::Leaf(key(vertex)),
            Some(ch) => Class::Interior(key(vertex), ch.map(|c| state_of[c])),
        };
        let children = match &class {
            Class::Leaf(_) => None,
            Class::Interior(_, ch) => Some(*ch),
        };
        let next = representative.len();
        let s = *classes.entry(class).or_insert(next);
        if s == next {
            representative.push(v);
            children_of.push(children);
        } else {
            representative[s] = v;
        }
        state_of[v] = s;
    }

    // Renumber breadth-first from the root's state.
    let mut order = vec![usize::MAX; representative.len()];
    let mut queue = VecDeque::from([state_of[qt.root()]]);
    let mut bfs = Vec::with_capacity(representative.len());
    order[state_of[qt.root()]] = 0;
    while let Some(s) = queue.pop_front() {
        bfs.push(s);
        if let Some(ch) = children_of[s] {
            for c in ch {
                if order[c] == usize::MAX {
                    order[c] = bfs.len() + queue.len();
                    queue.push_back(c);
                }
            }
        }
    }

    let mut valuations = Vec::with_capacity(bfs.len());
    let mut transitions = Vec::with_capacity(bfs.len());
    for &s in &bfs {
        valuations.push(qt.vertices[representative[s]].means.clone());
        let mut edges: Vec<(StateId, DirSet)> = Vec::new();
        match children_of[s] {
            None => edges.push((order[s], DirSet::ALL)),
            Some(ch) => {
                for d in Direction::ALL {
                    let t = order[ch[d.index()]];
                    match edges.iter_mut().find(|(x, _)| *x == t) {
                        Some((_, label)) => label.insert(d),
                        None => edges.push((t, DirSet::single(d))),
                    }
                }
            }
        }
        transitions.push(edges);
    }
    Qts::new(valuations, transitions).expect("quad-tree folding yields a well-formed system")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(side: usize) -> Observation {
        Observation::from_fn(side, |i, j| ((i + j) % 2) as f64)
    }

    #[test]
    fn dirset_text_round_trip() {
        let s: DirSet = "{SE,NW}".parse().unwrap();
        assert_eq!(s.to_string(), "{NW,SE}");
        assert_eq!("*".parse::<DirSet>().unwrap(), DirSet::ALL);
        assert!("{}".parse::<DirSet>().is_err());
        assert!("{NW,XX}".parse::<DirSet>().is_err());
    }

    #[test]
    fn two_by_two_identity() {
        let obs = Observation::new(2, 1, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let qt = build_quadtree(&obs, 16).unwrap();
        assert_eq!(qt.len(), 5);
        assert_eq!(qt.mean(qt.root(), 0), 0.5);
        let ch = qt.vertex(0).children.unwrap();
        assert!(ch.iter().all(|c| qt.vertex(*c).is_leaf()));
        assert_eq!(qt.mean(ch[Direction::NE.index()], 0), 0.0);
        assert_eq!(qt.mean(ch[Direction::SE.index()], 0), 1.0);
        assert_eq!(qt.vertex(ch[Direction::SW.index()]).bounds(), ((1, 1), (0, 0)));
    }

    #[test]
    fn uniform_matrix_is_single_leaf() {
        let obs = Observation::from_fn(8, |_, _| 0.42);
        let qt = build_quadtree(&obs, 16).unwrap();
        assert_eq!(qt.len(), 1);
        let qts = build_qts(&qt);
        assert_eq!(qts.len(), 1);
        assert_eq!(qts.transitions(0), &[(0, DirSet::ALL)]);
    }

    #[test]
    fn quantization_merges_close_values() {
        let obs = Observation::from_fn(4, |i, j| 0.50 + 0.001 * (i * 4 + j) as f64);
        assert_eq!(build_quadtree(&obs, 16).unwrap().len(), 1);
        assert!(build_quadtree(&obs, 1).is_err());
    }

    #[test]
    fn checkerboard_has_five_states() {
        let qts = Qts::from_observation(&checkerboard(8), 16).unwrap();
        assert_eq!(qts.len(), 5);
        assert_eq!(qts.valuation(0, 0), 0.5);
        let depth2 = qts.follow(&[Direction::NW, Direction::NW]);
        let white: Vec<_> = qts.successors(depth2, "{SW,NE}".parse().unwrap()).collect();
        assert_eq!(white.len(), 1);
        assert_eq!(qts.valuation(white[0], 0), 1.0);
        let black: Vec<_> = qts.successors(depth2, "{NW,SE}".parse().unwrap()).collect();
        assert_eq!(qts.valuation(black[0], 0), 0.0);
        assert_eq!(
            qts.successors(white[0], DirSet::single(Direction::NW))
                .collect::<Vec<_>>(),
            white
        );
        assert_eq!(qts.successors(depth2, DirSet::ALL).count(), 2);
        assert!(qts.has_self_loop());
    }

    #[test]
    fn text_round_trip() {
        let qts = Qts::from_observation(&checkerboard(8), 16).unwrap();
        let text = qts.to_text();
        assert!(text.contains("2 --{NE,SW}--> "), "{text}");
        let back = Qts::from_text(&text).unwrap();
        assert_eq!(back, qts);
        assert!(qts.to_dot().starts_with("digraph"));
    }

    #[test]
    fn text_parse_errors() {
        assert!(matches!(
            Qts::from_text("state 0 0.5\n0 --{NW}--> 0\n"),
            Err(QuadError::Malformed(_))
        ));
        assert!(matches!(
            Qts::from_text("state 0 0.5\n0 -> 0\n"),
            Err(QuadError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            Qts::from_text("state 0 1.5\n0 --*--> 0\n"),
            Err(QuadError::Malformed(_))
        ));
    }

    #[test]
    fn pyramid_address_lookup() {
        let obs = Observation::from_fn(4, |i, j| (i * 4 + j) as f64 / 16.0);
        let p = MeanPyramid::new(&obs);
        assert_eq!(p.at_address(&[], 0), obs.mean());
        // SE quadrant: rows 2..4, cols 2..4.
        let se = (10.0 + 11.0 + 14.0 + 15.0) / 64.0;
        assert!((p.at_address(&[Direction::SE], 0) - se).abs() < 1e-15);
        assert_eq!(p.at_address(&[Direction::SW, Direction::NE], 0), 9.0 / 16.0);
    }
}
