//! Naive reference implementation of the network dynamics, kept deliberately
//! separate from the production simulator so the two can be compared step for
//! step. It repeats the documented draw order with its own raw RNG calls —
//! one uniform per Bernoulli trial until a success, then one rate draw per
//! attempt (constant rates draw nothing) — and writes the age recursion in
//! the literal indicator form.

use aoi_sched::env::{build_observation, Env, EnvConfig, EnvState, Observation, RateModel, SensorSpec};
use aoi_sched::net::NetArch;
use aoi_sched::Rng;
use rand::{Rng as _, SeedableRng};

/// Everything the simulator reports for one task, recomputed independently.
pub struct NaiveStep {
    pub ages: Vec<f64>,
    pub observation: Vec<f64>,
    pub reward: f64,
    pub duration: f64,
    pub attempts: u32,
    pub done: bool,
}

/// Plays `actions` from a fresh reset under `seed` and returns the per-task
/// records. The RNG stream is consumed exactly as the simulator consumes it,
/// so trajectories must agree bit for bit.
pub fn naive_trajectory(config: &EnvConfig, seed: u64, actions: &[usize]) -> Vec<NaiveStep> {
    let n = config.sensors.len();
    let mut rng: Rng = SeedableRng::seed_from_u64(seed);
    let mut ages = vec![0.0f64; n];
    let mut tput = vec![0.0f64; config.history_len];

    let rate_scale = match config.rate_model {
        RateModel::Constant { rate } => rate,
        RateModel::UniformRange { lo, hi } => 0.5 * (lo + hi),
    };
    let max_threshold = config
        .sensors
        .iter()
        .map(|s| s.aoi_threshold)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut steps = Vec::with_capacity(actions.len());
    for (t, &m) in actions.iter().enumerate() {
        let mut attempts = 1u32;
        while rng.gen::<f64>() >= config.success_prob {
            attempts += 1;
        }
        let mut duration = 0.0;
        for _ in 0..attempts {
            let rate = match config.rate_model {
                RateModel::Constant { rate } => rate,
                RateModel::UniformRange { lo, hi } => rng.gen_range(lo..hi),
            };
            duration += config.sensors[m].packet_len / rate;
        }

        for (k, age) in ages.iter_mut().enumerate() {
            let selected = f64::from(k == m);
            *age = selected * duration + (1.0 - selected) * (*age + duration);
        }

        let mut reward = 0.0;
        for age in &ages {
            reward -= *age;
        }
        for (age, sensor) in ages.iter().zip(&config.sensors) {
            let violated = f64::from(*age > sensor.aoi_threshold);
            reward -= violated * sensor.penalty_weight;
        }

        tput.remove(0);
        tput.push(config.sensors[m].packet_len * f64::from(attempts) / duration);

        let mut observation = Vec::with_capacity(n + 1 + config.history_len);
        observation.extend(ages.iter().map(|a| a / max_threshold));
        observation.push(duration / max_threshold);
        observation.extend(tput.iter().map(|v| v / rate_scale));

        steps.push(NaiveStep {
            ages: ages.clone(),
            observation,
            reward,
            duration,
            attempts,
            done: t + 1 >= config.horizon,
        });
    }
    steps
}

/// Asserts two float slices agree bit for bit.
pub fn assert_bits_eq(a: &[f64], b: &[f64], what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length mismatch");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert_eq!(
            x.to_bits(),
            y.to_bits(),
            "{what}[{i}]: {x} vs {y} differ in bits"
        );
    }
}

/// Draws a small random scenario: sensor count, packet lengths, thresholds,
/// penalties, channel quality and rate process all vary.
pub fn random_config(rng: &mut Rng, horizon: usize) -> EnvConfig {
    let n_sensors = rng.gen_range(1..=10);
    let sensors = (0..n_sensors)
        .map(|_| SensorSpec {
            packet_len: rng.gen_range(1.0..200.0),
            aoi_threshold: rng.gen_range(5.0..500.0),
            penalty_weight: rng.gen_range(0.0..2000.0),
        })
        .collect();
    let rate_model = if rng.gen_bool(0.5) {
        RateModel::Constant {
            rate: rng.gen_range(0.5..50.0),
        }
    } else {
        let lo = rng.gen_range(0.5..20.0);
        RateModel::UniformRange {
            lo,
            hi: lo + rng.gen_range(0.1..30.0),
        }
    };
    EnvConfig {
        sensors,
        success_prob: rng.gen_range(0.3..=1.0),
        rate_model,
        horizon,
        rng_seed: 0,
        history_len: rng.gen_range(1..=10),
    }
}

/// A random but plausible observation for a network of the given shape.
#[allow(dead_code)] // each test binary compiles its own copy of this module
pub fn random_observation(arch: &NetArch, rng: &mut Rng) -> Observation {
    let state = EnvState {
        ages: (0..arch.n_sensors).map(|_| rng.gen_range(0.0..200.0)).collect(),
        last_tx_time: rng.gen_range(0.0..20.0),
        tput_history: (0..arch.history_len).map(|_| rng.gen_range(2.0..20.0)).collect(),
        task_index: 0,
    };
    build_observation(&state, 200.0, 10.0)
}

/// Steps the simulator and the naive reference in lockstep, asserting every
/// reported quantity agrees bit for bit.
pub fn check_trajectory(config: &EnvConfig, seed: u64, actions: &[usize]) {
    let mut env = Env::new(config.clone()).unwrap();
    env.reset(seed);
    let naive = naive_trajectory(config, seed, actions);

    for (t, (action, expect)) in actions.iter().zip(&naive).enumerate() {
        let out = env.step(*action).unwrap();
        assert_bits_eq(&env.state().ages, &expect.ages, "ages");
        assert_bits_eq(out.observation.as_slice(), &expect.observation, "observation");
        assert_eq!(
            out.reward.to_bits(),
            expect.reward.to_bits(),
            "reward at task {t}"
        );
        assert_eq!(
            out.tx_duration.to_bits(),
            expect.duration.to_bits(),
            "duration at task {t}"
        );
        assert_eq!(out.attempts, expect.attempts, "attempts at task {t}");
        assert_eq!(out.done, expect.done, "done flag at task {t}");
    }
}
