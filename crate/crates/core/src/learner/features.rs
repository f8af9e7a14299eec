//! Region-mean features indexed by quad-tree address.
//!
//! An address is a sequence of directions read from the root: the empty
//! address is the whole image, `[NW, SE]` the bottom-right quarter of the
//! top-left quarter. Features cover every address up to a maximum depth,
//! for every channel.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::quadtree::{Direction, MeanPyramid, Qts, StateId};
use crate::rdsim::Observation;

/// A feature: the mean of one channel over the region at `address`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureKey {
    pub address: Vec<Direction>,
    pub channel: usize,
}

/// `R.NW.SE` for channel 0; other channels append `/m2`, `/m3`, ...
impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("R")?;
        for d in &self.address {
            write!(f, ".{d}")?;
        }
        if self.channel > 0 {
            write!(f, "/m{}", self.channel + 1)?;
        }
        Ok(())
    }
}

impl FromStr for FeatureKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (path, channel) = match s.split_once('/') {
            None => (s, 0),
            Some((p, var)) => {
                let n: usize = var
                    .strip_prefix('m')
                    .and_then(|n| n.parse().ok())
                    .filter(|n| *n >= 1)
                    .ok_or_else(|| format!("bad channel '{var}'"))?;
                (p, n - 1)
            }
        };
        let mut parts = path.split('.');
        if parts.next() != Some("R") {
            return Err(format!("address '{s}' must start with 'R'"));
        }
        let address = parts.map(Direction::from_str).collect::<Result<_, _>>()?;
        Ok(FeatureKey { address, channel })
    }
}

/// Number of addresses of length at most `d_max`.
pub fn address_count(d_max: usize) -> usize {
    ((1usize << (2 * (d_max + 1))) - 1) / 3
}

/// Position of `address` in breadth-first address order.
pub fn address_index(address: &[Direction]) -> usize {
    let level_offset = address_count(address.len()) - (1usize << (2 * address.len()));
    level_offset + address.iter().fold(0, |acc, d| acc * 4 + d.index())
}

/// All addresses up to `d_max`, shortest first, each level in direction
/// order.
pub fn all_addresses(d_max: usize) -> Vec<Vec<Direction>> {
    let mut out = vec![Vec::new()];
    let mut start = 0;
    for _ in 0..d_max {
        let end = out.len();
        for a in start..end {
            for d in Direction::ALL {
                let mut next = out[a].clone();
                next.push(d);
                out.push(next);
            }
        }
        start = end;
    }
    out
}

/// Feature values of one example, laid out by address index then channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub d_max: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, key: &FeatureKey) -> f64 {
        self.values[feature_index(key, self.channels)]
    }

    pub fn keys(&self) -> Vec<FeatureKey> {
        feature_keys(self.d_max, self.channels)
    }
}

pub fn feature_index(key: &FeatureKey, channels: usize) -> usize {
    address_index(&key.address) * channels + key.channel
}

/// Keys in the same order as [`FeatureVector::values`].
pub fn feature_keys(d_max: usize, channels: usize) -> Vec<FeatureKey> {
    all_addresses(d_max)
        .into_iter()
        .flat_map(|address| {
            (0..channels).map(move |channel| FeatureKey {
                address: address.clone(),
                channel,
            })
        })
        .collect()
}

/// Exact region means of `obs` at every address up to `d_max`.
pub fn extract_features(obs: &Observation, d_max: usize) -> Result<FeatureVector, LearnError> {
    if d_max > obs.depth() {
        return Err(LearnError::Usage(format!(
            "feature depth {d_max} exceeds the quad-tree depth {} of a {}x{} image",
            obs.depth(),
            obs.side(),
            obs.side()
        )));
    }
    let pyramid = MeanPyramid::new(obs);
    let channels = obs.channels();
    let mut values = Vec::with_capacity(address_count(d_max) * channels);
    for address in all_addresses(d_max) {
        for c in 0..channels {
            values.push(pyramid.at_address(&address, c));
        }
    }
    Ok(FeatureVector {
        d_max,
        channels,
        values,
    })
}

/// Features read off a transition system: the valuation of the state reached
/// by following each address from the initial state.
///
/// These agree with [`extract_features`] except where quantization merged
/// regions into one state, in which case they carry that state's means.
/// Rules learned on them translate into formulas that decide every example
/// exactly as the rules do.
pub fn qts_features(qts: &Qts, d_max: usize) -> FeatureVector {
    let channels = qts.variables();
    let mut states: Vec<StateId> = vec![qts.initial()];
    let mut values = Vec::with_capacity(address_count(d_max) * channels);
    for level in 0..=d_max {
        for &s in &states {
            values.extend((0..channels).map(|c| qts.valuation(s, c)));
        }
        if level < d_max {
            states = states
                .iter()
                .flat_map(|&s| Direction::ALL.map(|d| qts.step(s, d)))
                .collect();
        }
    }
    FeatureVector {
        d_max,
        channels,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Direction::*;

    #[test]
    fn address_indexing_is_breadth_first() {
        let all = all_addresses(3);
        assert_eq!(all.len(), address_count(3));
        assert_eq!(address_count(4), 341);
        for (n, a) in all.iter().enumerate() {
            assert_eq!(address_index(a), n, "{a:?}");
        }
        assert_eq!(address_index(&[NE, SW]), 5 + 4 + 3);
    }

    #[test]
    fn key_text_round_trip() {
        let k = FeatureKey {
            address: vec![NW, NW, SE],
            channel: 0,
        };
        assert_eq!(k.to_string(), "R.NW.NW.SE");
        assert_eq!("R.NW.NW.SE".parse::<FeatureKey>().unwrap(), k);
        let root2 = FeatureKey {
            address: vec![],
            channel: 1,
        };
        assert_eq!(root2.to_string(), "R/m2");
        assert_eq!("R/m2".parse::<FeatureKey>().unwrap(), root2);
        assert!("Q.NW".parse::<FeatureKey>().is_err());
        assert!("R.NX".parse::<FeatureKey>().is_err());
    }

    #[test]
    fn uniform_and_checkerboard_features() {
        let f = extract_features(&Observation::from_fn(8, |_, _| 0.7), 3).unwrap();
        assert!(f.values.iter().all(|v| (v - 0.7).abs() < 1e-12));
        let cb = extract_features(&Observation::from_fn(8, |i, j| ((i + j) % 2) as f64), 2).unwrap();
        assert!(cb.values.iter().all(|v| *v == 0.5));
        assert!(extract_features(&Observation::from_fn(8, |_, _| 0.0), 4).is_err());
    }

    #[test]
    fn qts_reading_matches_when_nothing_merges() {
        // Distinct values in distinct bins at every level of a 4x4 image.
        let obs = Observation::from_fn(4, |i, j| (i * 4 + j) as f64 / 16.0);
        let qts = Qts::from_observation(&obs, 16).unwrap();
        let exact = extract_features(&obs, 2).unwrap();
        let read = qts_features(&qts, 2);
        assert_eq!(exact, read);
    }
}
