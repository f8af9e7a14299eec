//! Spatial pattern detection and synthesis on reaction-diffusion grids.
//!
//! The pipeline has four stages, each in its own module:
//!
//! * [`rdsim`] integrates a grid of locally coupled reaction-diffusion cells
//!   to steady state and normalizes the observable species into an
//!   [`Observation`](rdsim::Observation).
//! * [`quadtree`] abstracts an observation into a quad-tree of region means and
//!   folds equivalent regions into a quad transition system ([`Qts`](quadtree::Qts)).
//! * [`tssl`] is the tree spatial superposition logic: formulas whose "next"
//!   operator zooms one level into the quad-tree. Formulas can be model-checked
//!   ([`tssl::check`]) or given a discounted robustness value ([`tssl::value`]).
//! * [`learner`] induces an ordered rule list from labeled observations and
//!   turns it into a single formula; [`optimizer`] searches system parameters
//!   whose steady states maximize that formula's value; [`session`] ties both
//!   into a resumable human-in-the-loop design loop.
//!
//! ```
//! use superpose::quadtree::Qts;
//! use superpose::rdsim::Observation;
//! use superpose::tssl::{check, parse, value};
//!
//! // 8x8 checkerboard: cell (i, j) is white when i + j is odd.
//! let obs = Observation::from_fn(8, |i, j| ((i + j) % 2) as f64);
//! let qts = Qts::from_observation(&obs, 16).unwrap();
//! assert_eq!(qts.len(), 5);
//!
//! let phi = parse("A * X A * X ( A {SW,NE} X (m >= 0.9) & A {NW,SE} X (m <= 0.1) )").unwrap();
//! assert!(check(&qts, &phi).unwrap());
//! assert!((value(&qts, &phi).unwrap() - 0.1 / 64.0).abs() < 1e-12);
//! ```

pub mod io;
pub mod learner;
pub mod optimizer;
pub mod quadtree;
pub mod rdsim;
pub mod session;
pub mod tssl;

mod seed;

pub use seed::derive_seed;
