//! Resumable human-in-the-loop design sessions.
//!
//! A session alternates between learning a formula from positive and
//! negative examples, synthesizing parameters for it, and asking a person to
//! review steady states produced with those parameters. Rejected candidates
//! join the negative examples and the loop starts over:
//!
//! ```text
//! Learning -> Optimizing -> AwaitingReview -> Done
//!     ^            |              |
//!     |            v              | reject
//!     |          Failed           |
//!     +---------------------------+
//! ```
//!
//! Everything lives in one directory per session: `session.json` holds the
//! state machine, `negatives.json` the growing negative manifest, and each
//! iteration gets an `iter-NNN` directory with its training manifest,
//! formula, rules, optimizer result and candidate observations. Every file is
//! written atomically, so a session reloaded after a crash is in the last
//! state it recorded.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::io::{self, IoError, Label, ManifestEntry};
use crate::learner::{self, LabeledSet, LearnerConfig, Metrics};
use crate::optimizer::{self, FitnessSpec, FreeParam, InitialState, SearchBox, SwarmConfig, SynthesisResult};
use crate::quadtree::Qts;
use crate::rdsim::{InitialCondition, Observation, SteadyStateConfig, SystemParams, LARGE_SPOTS};
use crate::tssl::{self, CompiledFormula, Formula};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("cannot start session: {0}")]
    Start(String),
    #[error("session '{0}' not found")]
    NotFound(String),
    #[error("candidate '{0}' not found")]
    CandidateNotFound(String),
    #[error("cannot {op} while the session is {state}")]
    WrongState { op: &'static str, state: SessionState },
    #[error("iteration cap of {0} reached; approve the current candidates or raise the cap")]
    IterationCap(usize),
    #[error("invalid session input: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Learning,
    Optimizing,
    AwaitingReview,
    Done,
    Failed,
}

impl SessionState {
    /// Whether [`Session::advance`] has work to do.
    pub fn is_busy(self) -> bool {
        matches!(self, SessionState::Learning | SessionState::Optimizing)
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub learner: LearnerConfig,
    pub swarm: SwarmConfig,
    pub search_box: SearchBox,
    pub free: Vec<FreeParam>,
    pub template: SystemParams,
    pub steady: SteadyStateConfig,
    pub initial: InitialCondition,
    /// Size of the initial-condition set used during optimization.
    pub x0_seeds: usize,
    /// Additional runs at the optimized parameters shown for review when
    /// they settle and satisfy the formula.
    pub extra_review_seeds: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Optimize against this formula instead of learning one.
    pub fixed_formula: Option<String>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            learner: LearnerConfig::default(),
            swarm: SwarmConfig::default(),
            search_box: SearchBox::new(vec![(0.0, 30.0), (0.0, 30.0)]).expect("valid box"),
            free: vec![FreeParam::Diffusion(0), FreeParam::Diffusion(1)],
            template: SystemParams::pigment(32, LARGE_SPOTS),
            steady: SteadyStateConfig::default(),
            initial: InitialCondition::default(),
            x0_seeds: 4,
            extra_review_seeds: 8,
            max_iterations: 10,
            seed: 0,
            fixed_formula: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// `<session>_<iteration>_<n>`, unique across sessions.
    pub id: String,
    /// CSV of the observation, relative to the session directory.
    pub path: PathBuf,
    pub seed: u64,
    /// Robustness of the iteration's formula on this observation.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub number: usize,
    pub formula: String,
    pub n_rules: usize,
    pub positives: usize,
    pub negatives: usize,
    pub train_metrics: Option<Metrics>,
    pub result: Option<SynthesisResult>,
    pub candidates: Vec<Candidate>,
    pub decision: Option<Decision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub state: SessionState,
    /// 1-based number of the current iteration.
    pub iteration: usize,
    /// Positive manifest; read, never written.
    pub positives: PathBuf,
    pub config: SessionConfig,
    pub iterations: Vec<IterationRecord>,
    /// Why the session failed, if it did.
    pub diagnostic: Option<String>,
    #[serde(skip)]
    dir: PathBuf,
}

const SESSION_FILE: &str = "session.json";
const NEGATIVES_FILE: &str = "negatives.json";

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, IoError> {
    let mut entries = io::read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    io::resolve_entries(&mut entries, base);
    Ok(entries)
}

impl Session {
    /// Creates a session under `root` from two dataset manifests.
    ///
    /// Both manifests must list at least one readable observation. The
    /// negative manifest is copied into the session, which owns it from then
    /// on; the positive manifest is referenced in place.
    pub fn start(
        root: &Path,
        id: &str,
        positives: &Path,
        negatives: &Path,
        config: SessionConfig,
    ) -> Result<Session, SessionError> {
        if !valid_id(id) {
            return Err(SessionError::Usage(format!(
                "session id '{id}' must be 1-64 letters, digits or '-'"
            )));
        }
        let dir = root.join(id);
        if dir.join(SESSION_FILE).exists() {
            return Err(SessionError::Start(format!("session '{id}' already exists")));
        }
        let positives =
            fs::canonicalize(positives).map_err(|e| SessionError::Start(format!("{}: {e}", positives.display())))?;
        for (name, path) in [("positive", positives.as_path()), ("negative", negatives)] {
            let entries = load_manifest(path).map_err(|e| SessionError::Start(e.to_string()))?;
            if entries.is_empty() {
                return Err(SessionError::Start(format!(
                    "{name} dataset {} is empty",
                    path.display()
                )));
            }
            for e in &entries {
                io::load_entry(e).map_err(|e| SessionError::Start(e.to_string()))?;
            }
        }
        if let Some(text) = &config.fixed_formula {
            tssl::parse(text).map_err(|e| SessionError::Start(format!("fixed formula: {e}")))?;
        }
        let negative_entries = load_manifest(negatives).map_err(|e| SessionError::Start(e.to_string()))?;
        fs::create_dir_all(&dir).map_err(|e| IoError::File {
            path: dir.clone(),
            source: e,
        })?;
        io::write_json(&dir.join(NEGATIVES_FILE), &negative_entries)?;
        let session = Session {
            id: id.to_string(),
            state: SessionState::Learning,
            iteration: 1,
            positives,
            config,
            iterations: Vec::new(),
            diagnostic: None,
            dir,
        };
        session.save()?;
        Ok(session)
    }

    pub fn load(root: &Path, id: &str) -> Result<Session, SessionError> {
        if !valid_id(id) {
            return Err(SessionError::NotFound(id.to_string()));
        }
        let dir = root.join(id);
        let file = dir.join(SESSION_FILE);
        if !file.exists() {
            return Err(SessionError::NotFound(id.to_string()));
        }
        let mut session: Session = io::read_json(&file)?;
        session.dir = dir;
        Ok(session)
    }

    /// Ids of all sessions under `root`, sorted.
    pub fn list(root: &Path) -> Result<Vec<String>, SessionError> {
        let mut ids = Vec::new();
        let entries = match fs::read_dir(root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ids),
            Err(e) => {
                return Err(IoError::File {
                    path: root.to_path_buf(),
                    source: e,
                }
                .into())
            }
        };
        for entry in entries.flatten() {
            if entry.path().join(SESSION_FILE).exists() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn negatives_path(&self) -> PathBuf {
        self.dir.join(NEGATIVES_FILE)
    }

    pub fn negatives(&self) -> Result<Vec<ManifestEntry>, SessionError> {
        Ok(io::read_manifest(&self.negatives_path())?)
    }

    pub fn current(&self) -> Option<&IterationRecord> {
        self.iterations.get(self.iteration - 1)
    }

    fn iteration_dir(&self, number: usize) -> PathBuf {
        self.dir.join(format!("iter-{number:03}"))
    }

    fn save(&self) -> Result<(), SessionError> {
        io::write_json(&self.dir.join(SESSION_FILE), self)?;
        Ok(())
    }

    fn fail(&mut self, diagnostic: String) -> Result<(), SessionError> {
        log::warn!("session {} failed: {diagnostic}", self.id);
        self.state = SessionState::Failed;
        self.diagnostic = Some(diagnostic);
        self.save()
    }

    /// Performs the pending step of a busy session: learning moves to
    /// optimizing, optimizing to review (or to failure when no parameter
    /// reaches a non-negative valuation). Learner and optimizer errors fail
    /// the session with a diagnostic.
    pub fn advance(&mut self) -> Result<(), SessionError> {
        match self.state {
            SessionState::Learning => self.learn_step(),
            SessionState::Optimizing => self.optimize_step(),
            state => Err(SessionError::WrongState { op: "advance", state }),
        }
    }

    /// Advances until the session waits for a person or terminates.
    pub fn run_until_blocked(&mut self) -> Result<(), SessionError> {
        while self.state.is_busy() {
            self.advance()?;
        }
        Ok(())
    }

    fn learn_step(&mut self) -> Result<(), SessionError> {
        let number = self.iteration;
        let dir = self.iteration_dir(number);
        let positives = load_manifest(&self.positives)?;
        let negatives = self.negatives()?;
        io::write_json(
            &dir.join("manifest.json"),
            &serde_json::json!({ "positives": self.positives, "negatives": negatives }),
        )?;

        let (formula, ruleset, metrics) = match &self.config.fixed_formula {
            Some(text) => match tssl::parse(text) {
                Ok(f) => (f, None, None),
                Err(e) => return self.fail(format!("fixed formula: {e}")),
            },
            None => {
                let mut data: Vec<(Observation, Label)> = Vec::with_capacity(positives.len() + negatives.len());
                for e in positives.iter().chain(&negatives) {
                    data.push((io::load_entry(e)?, e.label));
                }
                let cfg = &self.config.learner;
                let set = match LabeledSet::from_observations(&data, cfg.quant_levels, cfg.d_max) {
                    Ok(s) => s,
                    Err(e) => return self.fail(format!("learning: {e}")),
                };
                let classifier = match learner::learn(&set, cfg) {
                    Ok(c) => c,
                    Err(e) => return self.fail(format!("learning: {e}")),
                };
                let mut metrics = learner::evaluate_classifier(&classifier.formula, &set)
                    .map(|e| e.metrics)
                    .ok();
                if let Some(m) = metrics.as_mut() {
                    m.n_rules = classifier.ruleset.len();
                }
                (classifier.formula, Some(classifier.ruleset), metrics)
            }
        };
        io::write_atomic(&dir.join("formula.tssl"), format!("{formula}\n").as_bytes())?;
        if let Some(rs) = &ruleset {
            io::write_atomic(&dir.join("rules.txt"), rs.to_string().as_bytes())?;
        }
        if let Some(m) = &metrics {
            io::write_json(&dir.join("metrics.json"), m)?;
        }
        let record = IterationRecord {
            number,
            formula: formula.to_string(),
            n_rules: ruleset.as_ref().map_or(0, |r| r.len()),
            positives: positives.len(),
            negatives: negatives.len(),
            train_metrics: metrics,
            result: None,
            candidates: Vec::new(),
            decision: None,
        };
        self.iterations.truncate(number - 1);
        self.iterations.push(record);
        self.state = SessionState::Optimizing;
        self.save()
    }

    fn fitness_spec(&self, formula: Formula) -> FitnessSpec {
        let c = &self.config;
        FitnessSpec {
            template: c.template.clone(),
            free: c.free.clone(),
            x0: (0..c.x0_seeds as u64)
                .map(|i| InitialState::Seed(derive_seed(c.seed, i)))
                .collect(),
            initial: c.initial,
            steady: c.steady,
            quant_levels: c.learner.quant_levels,
            formula,
        }
    }

    fn optimize_step(&mut self) -> Result<(), SessionError> {
        let number = self.iteration;
        let record = self
            .current()
            .ok_or_else(|| SessionError::Usage(format!("iteration {number} has no learned formula")))?;
        let formula = match tssl::parse(&record.formula) {
            Ok(f) => f,
            Err(e) => return self.fail(format!("stored formula: {e}")),
        };
        let spec = self.fitness_spec(formula.clone());
        let swarm = SwarmConfig {
            seed: derive_seed(self.config.swarm.seed, number as u64),
            ..self.config.swarm
        };
        let result = match optimizer::synthesize(&spec, &self.config.search_box, &swarm) {
            Ok(r) => r,
            Err(e) => return self.fail(format!("optimization: {e}")),
        };
        let dir = self.iteration_dir(number);
        io::write_json(&dir.join("result.json"), &result)?;
        self.iterations[number - 1].result = Some(result.clone());
        if result.gamma < 0.0 {
            let msg = format!("no solution: best valuation {} at {:?}", result.gamma, result.p_star);
            return self.fail(msg);
        }

        // Review set: the optimization runs, then extra seeds.
        let mut review = spec.clone();
        review.x0.extend(
            (0..self.config.extra_review_seeds as u64)
                .map(|i| InitialState::Seed(derive_seed(self.config.seed, (number as u64) << 32 | (1000 + i)))),
        );
        let observations = match review.steady_states(&result.p_star) {
            Ok(o) => o,
            Err(e) => return self.fail(format!("candidate simulation: {e}")),
        };
        let compiled = CompiledFormula::new(&formula);
        let params = spec.params_at(&result.p_star).ok();
        let mut candidates = Vec::new();
        let mut entries = Vec::new();
        for (x0, obs) in review.x0.iter().zip(observations) {
            let Some(obs) = obs else { continue };
            let qts = match Qts::from_observation(&obs, spec.quant_levels) {
                Ok(q) => q,
                Err(e) => return self.fail(format!("candidate abstraction: {e}")),
            };
            // Only observations that satisfy the formula are shown.
            if !compiled.check(&qts).unwrap_or(false) {
                continue;
            }
            let value = compiled.value(&qts).unwrap_or(f64::NAN);
            let n = candidates.len();
            let rel = PathBuf::from(format!("iter-{number:03}"))
                .join("candidates")
                .join(format!("c{n:03}.csv"));
            io::write_csv(&self.dir.join(&rel), obs.side(), obs.channel(0))?;
            let mut paths = vec![rel.clone()];
            for c in 1..obs.channels() {
                let extra = rel.with_extension(format!("c{c}.csv"));
                io::write_csv(&self.dir.join(&extra), obs.side(), obs.channel(c))?;
                paths.push(extra);
            }
            let seed = match x0 {
                InitialState::Seed(s) => *s,
                InitialState::State(_) => n as u64,
            };
            entries.push(ManifestEntry {
                path: self.dir.join(&paths[0]),
                label: Label::Negative,
                params: params.clone(),
                seed: Some(seed),
                channels: paths[1..].iter().map(|p| self.dir.join(p)).collect(),
                provenance: Some(format!("session {} iteration {number} candidate {n}", self.id)),
            });
            candidates.push(Candidate {
                id: format!("{}_{number}_{n}", self.id),
                path: rel,
                seed,
                value,
            });
        }
        io::write_json(&dir.join("candidates.json"), &entries)?;
        if candidates.is_empty() {
            return self.fail("no steady state at the optimized parameters satisfies the formula".into());
        }
        self.iterations[number - 1].candidates = candidates;
        self.state = SessionState::AwaitingReview;
        self.save()
    }

    /// Applies a reviewer's decision. Approving finishes the session;
    /// rejecting adds every candidate to the negatives and starts the next
    /// iteration.
    pub fn decide(&mut self, decision: Decision) -> Result<(), SessionError> {
        if self.state != SessionState::AwaitingReview {
            return Err(SessionError::WrongState {
                op: "decide",
                state: self.state,
            });
        }
        if decision == Decision::Reject && self.iteration >= self.config.max_iterations {
            return Err(SessionError::IterationCap(self.config.max_iterations));
        }
        let number = self.iteration;
        match decision {
            Decision::Approve => self.state = SessionState::Done,
            Decision::Reject => {
                let mut negatives = self.negatives()?;
                let added: Vec<ManifestEntry> = io::read_manifest(&self.iteration_dir(number).join("candidates.json"))?;
                negatives.extend(added);
                io::write_json(&self.negatives_path(), &negatives)?;
                self.iteration += 1;
                self.state = SessionState::Learning;
            }
        }
        self.iterations[number - 1].decision = Some(decision);
        self.save()
    }

    /// Finds a candidate by id among this session's iterations.
    pub fn candidate(&self, candidate_id: &str) -> Option<&Candidate> {
        self.iterations
            .iter()
            .flat_map(|r| &r.candidates)
            .find(|c| c.id == candidate_id)
    }

    pub fn load_candidate(&self, candidate_id: &str) -> Result<Observation, SessionError> {
        let c = self
            .candidate(candidate_id)
            .ok_or_else(|| SessionError::CandidateNotFound(candidate_id.to_string()))?;
        Ok(io::read_observation(&[self.dir.join(&c.path)])?)
    }

    /// Session id encoded in a candidate id.
    pub fn session_of_candidate(candidate_id: &str) -> Option<&str> {
        candidate_id.split('_').next().filter(|s| valid_id(s))
    }

    /// The final parameters and valuation of a finished session.
    pub fn solution(&self) -> Option<(&[f64], f64)> {
        if self.state != SessionState::Done {
            return None;
        }
        self.current()
            .and_then(|r| r.result.as_ref())
            .map(|r| (r.p_star.as_slice(), r.gamma))
    }
}
