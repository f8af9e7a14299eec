//! Parameter synthesis by particle swarm optimization.
//!
//! The fitness of a parameter point is its induced valuation: the worst
//! robustness value of a formula over the steady states reached from a fixed
//! set of initial conditions. A positive best fitness certifies that every one
//! of those steady states satisfies the formula.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadtree::{Qts, QuadError};
use crate::rdsim::{
    simulate_to_steady, GridState, InitialCondition, Observation, SimError, SteadyOutcome, SteadyStateConfig,
    SystemParams,
};
use crate::tssl::{CompiledFormula, Formula};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptError {
    #[error("invalid optimizer input: {0}")]
    Usage(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

/// Axis-aligned box of closed intervals; serialized as a list of
/// `[lo, hi]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct SearchBox {
    bounds: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for SearchBox {
    type Error = OptError;

    fn try_from(bounds: Vec<(f64, f64)>) -> Result<Self, OptError> {
        SearchBox::new(bounds)
    }
}

impl From<SearchBox> for Vec<(f64, f64)> {
    fn from(b: SearchBox) -> Self {
        b.bounds
    }
}

impl SearchBox {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self, OptError> {
        if bounds.is_empty() {
            return Err(OptError::Usage("search box has no dimensions".into()));
        }
        if let Some((lo, hi)) = bounds
            .iter()
            .find(|(lo, hi)| !(lo <= hi && lo.is_finite() && hi.is_finite()))
        {
            return Err(OptError::Usage(format!("interval [{lo}, {hi}] is empty or unbounded")));
        }
        Ok(SearchBox { bounds })
    }

    pub fn dims(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims() && x.iter().zip(&self.bounds).all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn center(&self) -> Vec<f64> {
        self.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }
}

/// `lo,hi;lo,hi;...`
impl FromStr for SearchBox {
    type Err = OptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bounds = s
            .split(';')
            .map(|dim| {
                let (lo, hi) = dim
                    .split_once(',')
                    .ok_or_else(|| OptError::Usage(format!("interval '{dim}' must be 'lo,hi'")))?;
                let num = |t: &str| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| OptError::Usage(format!("bad bound '{}'", t.trim())))
                };
                Ok((num(lo)?, num(hi)?))
            })
            .collect::<Result<Vec<_>, OptError>>()?;
        SearchBox::new(bounds)
    }
}

impl fmt::Display for SearchBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.bounds.iter().map(|(lo, hi)| format!("{lo},{hi}")).collect();
        f.write_str(&parts.join(";"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwarmConfig {
    pub swarm_size: usize,
    /// Velocity updates after the initial evaluation.
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Maximum speed per dimension as a fraction of the box width.
    pub velocity_clamp: f64,
    pub seed: u64,
    /// Stop as soon as the best value is positive.
    pub stop_when_positive: bool,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        SwarmConfig {
            swarm_size: 20,
            iterations: 50,
            inertia: 0.7,
            cognitive: 1.49,
            social: 1.49,
            velocity_clamp: 0.2,
            seed: 0,
            stop_when_positive: false,
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<(), OptError> {
        let positive = [self.inertia, self.cognitive, self.social, self.velocity_clamp]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if self.swarm_size < 2 || !positive {
            return Err(OptError::Usage(format!(
                "swarm needs at least 2 particles and positive coefficients, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoResult {
    pub best: Vec<f64>,
    pub value: f64,
    /// Best value after the initial evaluation and after every iteration.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

/// Global-best particle swarm maximizing `fitness` over `bx`.
///
/// Each iteration evaluates all particles (concurrently) and then updates
/// them in particle order, so results depend only on the seed. NaN fitness
/// counts as negative infinity.
pub fn pso_maximize<F>(fitness: F, bx: &SearchBox, cfg: &SwarmConfig) -> Result<PsoResult, OptError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let dims = bx.dims();
    let vmax: Vec<f64> = bx
        .bounds
        .iter()
        .map(|(lo, hi)| cfg.velocity_clamp * (hi - lo))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut x: Vec<Vec<f64>> = (0..cfg.swarm_size)
        .map(|_| bx.bounds.iter().map(|(lo, hi)| sample(&mut rng, *lo, *hi)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..cfg.swarm_size)
        .map(|_| vmax.iter().map(|m| sample(&mut rng, -m, *m)).collect())
        .collect();

    let evaluate = |points: &[Vec<f64>]| -> Vec<f64> {
        points
            .par_iter()
            .map(|p| {
                let f = fitness(p);
                if f.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    f
                }
            })
            .collect()
    };

    let mut fx = evaluate(&x);
    let mut evaluations = cfg.swarm_size;
    let mut pbest = x.clone();
    let mut pbest_f = fx.clone();
    let mut g = argmax(&fx);
    let mut gbest = x[g].clone();
    let mut gbest_f = fx[g];
    let mut history = vec![gbest_f];

    for _ in 0..cfg.iterations {
        if cfg.stop_when_positive && gbest_f > 0.0 {
            break;
        }
        for i in 0..cfg.swarm_size {
            for d in 0..dims {
                let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
                let vel = cfg.inertia * v[i][d]
                    + cfg.cognitive * r1 * (pbest[i][d] - x[i][d])
                    + cfg.social * r2 * (gbest[d] - x[i][d]);
                v[i][d] = vel.clamp(-vmax[d], vmax[d]);
                let (lo, hi) = bx.bounds[d];
                x[i][d] = (x[i][d] + v[i][d]).clamp(lo, hi);
            }
        }
        fx = evaluate(&x);
        evaluations += cfg.swarm_size;
        for i in 0..cfg.swarm_size {
            if fx[i] > pbest_f[i] {
                pbest_f[i] = fx[i];
                pbest[i].clone_from(&x[i]);
            }
        }
        g = argmax(&pbest_f);
        if pbest_f[g] > gbest_f {
            gbest_f = pbest_f[g];
            gbest.clone_from(&pbest[g]);
        }
        history.push(gbest_f);
    }
    Ok(PsoResult {
        best: gbest,
        value: gbest_f,
        history,
        evaluations,
    })
}

fn sample(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Index of the first maximum.
fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > values[best] { i } else { best })
}

/// A system parameter exposed to the optimizer; indices count from 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreeParam {
    Diffusion(usize),
    Reaction(usize),
}

/// `D1`, `D2`, ... and `R1`, `R2`, ..., numbered from 1.
impl FromStr for FreeParam {
    type Err = OptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || OptError::Usage(format!("free parameter '{s}' must look like D1 or R3"));
        let (kind, n) = s.split_at(s.len().min(1));
        let n: usize = n.parse().ok().filter(|n| *n >= 1).ok_or_else(bad)?;
        match kind {
            "D" => Ok(FreeParam::Diffusion(n - 1)),
            "R" => Ok(FreeParam::Reaction(n - 1)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for FreeParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FreeParam::Diffusion(i) => write!(f, "D{}", i + 1),
            FreeParam::Reaction(i) => write!(f, "R{}", i + 1),
        }
    }
}

/// One element of the initial-condition set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Random state drawn with [`GridState::random`].
    Seed(u64),
    State(GridState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessSpec {
    pub template: SystemParams,
    pub free: Vec<FreeParam>,
    pub x0: Vec<InitialState>,
    pub initial: InitialCondition,
    pub steady: SteadyStateConfig,
    pub quant_levels: usize,
    pub formula: Formula,
}

impl FitnessSpec {
    /// Spec with `n_seeds` seeded random initial conditions.
    pub fn with_seeds(
        template: SystemParams,
        free: Vec<FreeParam>,
        formula: Formula,
        n_seeds: usize,
        seed: u64,
    ) -> Self {
        FitnessSpec {
            template,
            free,
            x0: (0..n_seeds as u64)
                .map(|i| InitialState::Seed(crate::derive_seed(seed, i)))
                .collect(),
            initial: InitialCondition::default(),
            steady: SteadyStateConfig::default(),
            quant_levels: 16,
            formula,
        }
    }

    pub fn validate(&self) -> Result<(), OptError> {
        self.template.validate()?;
        self.steady.validate()?;
        if self.x0.is_empty() {
            return Err(OptError::Usage("initial-condition set is empty".into()));
        }
        if self.free.is_empty() {
            return Err(OptError::Usage("no free parameters".into()));
        }
        for p in &self.free {
            let ok = match p {
                FreeParam::Diffusion(i) => *i < self.template.diffusion.len(),
                FreeParam::Reaction(i) => *i < self.template.reaction.len(),
            };
            if !ok {
                return Err(OptError::Usage(format!("free parameter {p} does not exist")));
            }
        }
        if let Some(var) = self.formula.max_var() {
            if var >= self.template.observable.len() {
                return Err(OptError::Usage(format!(
                    "formula uses m{} but only {} species are observed",
                    var + 1,
                    self.template.observable.len()
                )));
            }
        }
        Ok(())
    }

    /// The template with the free parameters set to `p`.
    pub fn params_at(&self, p: &[f64]) -> Result<SystemParams, OptError> {
        if p.len() != self.free.len() {
            return Err(OptError::Usage(format!(
                "point has {} coordinates, spec has {} free parameters",
                p.len(),
                self.free.len()
            )));
        }
        let mut params = self.template.clone();
        for (fp, v) in self.free.iter().zip(p) {
            match fp {
                FreeParam::Diffusion(i) => params.diffusion[*i] = *v,
                FreeParam::Reaction(i) => params.reaction[*i] = *v,
            }
        }
        params.validate()?;
        Ok(params)
    }

    fn start_state(&self, params: &SystemParams, x0: &InitialState) -> GridState {
        match x0 {
            InitialState::Seed(seed) => GridState::random(params, self.initial, *seed),
            InitialState::State(state) => state.clone(),
        }
    }

    /// Steady-state observation from every initial condition; `None` where
    /// the run did not settle or diverged.
    pub fn steady_states(&self, p: &[f64]) -> Result<Vec<Option<Observation>>, OptError> {
        let params = self.params_at(p)?;
        self.x0
            .iter()
            .enumerate()
            .map(|(n, x0)| {
                let state = self.start_state(&params, x0);
                let seed = match x0 {
                    InitialState::Seed(s) => *s,
                    InitialState::State(_) => n as u64,
                };
                match simulate_to_steady(&params, &state, &self.steady, seed) {
                    Ok(SteadyOutcome::Steady { observation, .. }) => Ok(Some(observation)),
                    Ok(SteadyOutcome::NotConverged { .. }) | Err(SimError::Diverged { .. }) => Ok(None),
                    Err(e) => Err(e.into()),
                }
            })
            .collect()
    }
}

/// Minimum robustness of the spec's formula over the steady states reached
/// from every initial condition. A run that does not settle, or diverges,
/// scores `-b`.
pub fn induced_valuation(p: &[f64], spec: &FitnessSpec) -> Result<f64, OptError> {
    spec.validate()?;
    induced_with(p, spec, &CompiledFormula::new(&spec.formula))
}

fn induced_with(p: &[f64], spec: &FitnessSpec, compiled: &CompiledFormula) -> Result<f64, OptError> {
    let mut worst = f64::INFINITY;
    let bound = 1.0;
    for obs in spec.steady_states(p)? {
        let v = match obs {
            None => -bound,
            Some(obs) => {
                let qts = Qts::from_observation(&obs, spec.quant_levels)?;
                compiled.value(&qts).map_err(|e| OptError::Usage(e.to_string()))?
            }
        };
        worst = worst.min(v);
    }
    Ok(worst)
}

/// Optimization outcome; `gamma > 0` certifies the formula on every tested
/// steady state at `p_star`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub p_star: Vec<f64>,
    pub gamma: f64,
    pub history: Vec<f64>,
    pub evaluations: usize,
}

pub fn synthesize(spec: &FitnessSpec, bx: &SearchBox, cfg: &SwarmConfig) -> Result<SynthesisResult, OptError> {
    spec.validate()?;
    if bx.dims() != spec.free.len() {
        return Err(OptError::Usage(format!(
            "box has {} dimensions for {} free parameters",
            bx.dims(),
            spec.free.len()
        )));
    }
    // Reject points the template cannot take (e.g. negative diffusion) up front.
    for corner in [
        bx.bounds.iter().map(|b| b.0).collect::<Vec<_>>(),
        bx.bounds.iter().map(|b| b.1).collect(),
    ] {
        spec.params_at(&corner)?;
    }
    let compiled = CompiledFormula::new(&spec.formula);
    let result = pso_maximize(|p| induced_with(p, spec, &compiled).unwrap_or(-1.0), bx, cfg)?;
    Ok(SynthesisResult {
        p_star: result.best,
        gamma: result.value,
        history: result.history,
        evaluations: result.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rdsim::SMALL_SPOTS;
    use crate::tssl::parse;

    fn sphere(c: [f64; 2]) -> impl Fn(&[f64]) -> f64 + Sync {
        move |x| -((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2))
    }

    #[test]
    fn finds_quadratic_optimum() {
        let bx: SearchBox = "0,30;0,30".parse().unwrap();
        let cfg = SwarmConfig {
            iterations: 100,
            seed: 3,
            ..Default::default()
        };
        let r = pso_maximize(sphere([7.0, 21.5]), &bx, &cfg).unwrap();
        assert!((r.best[0] - 7.0).hypot(r.best[1] - 21.5) < 1e-3, "{:?}", r.best);
        assert!(r.history.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(r.history.len(), 101);
        assert_eq!(r.evaluations, 20 * 101);
        assert_eq!(pso_maximize(sphere([7.0, 21.5]), &bx, &cfg).unwrap(), r);
    }

    #[test]
    fn constant_fitness_and_feasibility() {
        let bx: SearchBox = "-1,1;2,2".parse().unwrap();
        let cfg = SwarmConfig {
            iterations: 10,
            ..Default::default()
        };
        let seen = std::sync::Mutex::new(Vec::new());
        let r = pso_maximize(
            |x| {
                seen.lock().unwrap().push(x.to_vec());
                1.5
            },
            &bx,
            &cfg,
        )
        .unwrap();
        assert!(r.history.iter().all(|h| *h == 1.5));
        assert!(bx.contains(&r.best));
        assert!(seen.into_inner().unwrap().iter().all(|p| bx.contains(p)));
    }

    #[test]
    fn early_stop_and_bad_configs() {
        let bx: SearchBox = "0,1".parse().unwrap();
        let cfg = SwarmConfig {
            stop_when_positive: true,
            ..Default::default()
        };
        let r = pso_maximize(|_| 1.0, &bx, &cfg).unwrap();
        assert_eq!(r.history.len(), 1);
        assert!(pso_maximize(|_| 0.0, &bx, &SwarmConfig { swarm_size: 1, ..cfg }).is_err());
        assert!("3,1".parse::<SearchBox>().is_err());
        assert!("0;1".parse::<SearchBox>().is_err());
    }

    #[test]
    fn free_param_names() {
        assert_eq!("D2".parse::<FreeParam>().unwrap(), FreeParam::Diffusion(1));
        assert_eq!("R1".parse::<FreeParam>().unwrap(), FreeParam::Reaction(0));
        assert!("D0".parse::<FreeParam>().is_err());
        assert!("X1".parse::<FreeParam>().is_err());
        assert_eq!(FreeParam::Reaction(3).to_string(), "R4");
    }

    fn small_spec(formula: &str) -> FitnessSpec {
        let mut spec = FitnessSpec::with_seeds(
            SystemParams::pigment(8, SMALL_SPOTS),
            vec![FreeParam::Diffusion(0), FreeParam::Diffusion(1)],
            parse(formula).unwrap(),
            2,
            5,
        );
        spec.steady.t_max = 60.0;
        spec
    }

    #[test]
    fn valuation_of_true_and_contradiction() {
        let p = SMALL_SPOTS;
        assert_eq!(induced_valuation(&p, &small_spec("true")).unwrap(), 1.0);
        let v = induced_valuation(&p, &small_spec("m >= 1 & m <= 0")).unwrap();
        assert!(v < 0.0);
    }

    #[test]
    fn singleton_initial_set_equals_that_run() {
        let mut spec = small_spec("m >= 0.3");
        spec.x0.truncate(1);
        let obs = spec.steady_states(&SMALL_SPOTS).unwrap().remove(0).unwrap();
        let qts = Qts::from_observation(&obs, 16).unwrap();
        assert_eq!(
            qts.valuation(0, 0) - 0.3,
            induced_valuation(&SMALL_SPOTS, &spec).unwrap()
        );
    }

    #[test]
    fn non_converging_runs_score_minus_bound() {
        let mut spec = small_spec("true");
        spec.steady.t_max = spec.steady.window;
        spec.steady.epsilon = Some(1e-12);
        assert_eq!(induced_valuation(&SMALL_SPOTS, &spec).unwrap(), -1.0);
    }

    #[test]
    fn spec_validation() {
        let mut spec = small_spec("m2 >= 0.5");
        assert!(spec.validate().is_err());
        spec.formula = Formula::True;
        spec.free.push(FreeParam::Diffusion(5));
        assert!(spec.validate().is_err());
        spec.free.pop();
        assert!(synthesize(&spec, &"0,30".parse().unwrap(), &SwarmConfig::default()).is_err());
        assert!(synthesize(&spec, &"-1,30;0,30".parse().unwrap(), &SwarmConfig::default()).is_err());
    }
}
