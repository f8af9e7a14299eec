mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use superpose::io::{self, Format};
use superpose::optimizer::{pso_maximize, SearchBox, SwarmConfig};
use superpose::rdsim::{observe, step, GridState, InitialCondition, SystemParams};

use common::random_observation;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steps_keep_concentrations_non_negative(seed in any::<u64>(), d1 in 0.0f64..30.0, d2 in 0.0f64..30.0) {
        let params = SystemParams::pigment(8, [d1, d2]);
        let mut state = GridState::random(&params, InitialCondition::default(), seed);
        for _ in 0..50 {
            state = match step(&state, &params, 0.02) {
                Ok(s) => s,
                Err(_) => break,
            };
            prop_assert!(state.values().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn uniform_inert_states_are_fixed_points(v in 0.0f64..10.0, d in 0.0f64..5.0) {
        let params = SystemParams::inert(8, vec![d]);
        let state = GridState::uniform(8, 1, v);
        let next = step(&state, &params, 0.1).unwrap();
        prop_assert!(next.values().iter().all(|x| (x - v).abs() < 1e-12));
    }

    #[test]
    fn observations_are_normalized(seed in any::<u64>()) {
        let params = SystemParams::pigment(8, [5.6, 24.5]);
        let state = GridState::random(&params, InitialCondition::default(), seed);
        let obs = observe(&state, &params);
        let values = obs.values();
        prop_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(values.iter().cloned().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn csv_round_trip_is_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = rng.gen_range(1..=2);
        let obs = random_observation(&mut rng, 8, channels);
        let dir = tempfile::tempdir().unwrap();
        let paths = io::write_observation(&dir.path().join("x"), &obs, Format::Csv).unwrap();
        let back = io::read_observation(&paths).unwrap();
        prop_assert_eq!(back.values(), obs.values());
    }

    #[test]
    fn swarm_stays_in_the_box_and_never_regresses(seed in any::<u64>(), cx in -5.0f64..5.0, cy in 0.0f64..1.0) {
        let bx = SearchBox::new(vec![(-2.0, 2.0), (0.0, 1.0)]).unwrap();
        let cfg = SwarmConfig { swarm_size: 6, iterations: 12, seed, ..SwarmConfig::default() };
        let res = pso_maximize(|x: &[f64]| -((x[0] - cx).abs() + (x[1] - cy).powi(2)), &bx, &cfg).unwrap();
        prop_assert!(bx.contains(&res.best));
        prop_assert_eq!(res.history.len(), 13);
        prop_assert_eq!(res.evaluations, 6 * 13);
        prop_assert!(res.history.windows(2).all(|w| w[1] >= w[0]));
        prop_assert_eq!(*res.history.last().unwrap(), res.value);
    }
}
