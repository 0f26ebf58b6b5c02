//! Advantage actor-critic training with asynchronous workers.
//!
//! Each worker owns an environment instance and a private action RNG. It
//! repeatedly snapshots the shared parameters, collects a rollout chunk
//! under that frozen snapshot, sums per-step actor/critic gradients with
//! one-step TD advantages, and applies the sums to the shared parameters
//! under a lock. The entropy bonus decays linearly with the global step
//! count so exploration fades as the critic settles.
//!
//! With `n_workers = 1` the whole procedure is deterministic: the same seed
//! yields a bit-identical final parameter vector. Episode seeds derive from
//! the run seed and the episode index, so the environment stream does not
//! depend on which worker picks an episode up.

use crate::env::{Env, EnvConfig};
use crate::net::{self, ForwardOut, Gradients, NetArch, NetParams};
use crate::policy::sample_categorical;
use crate::{mix_seed, seed_tag, Error, Result, Rng};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

fn default_episodes() -> usize {
    500
}
fn default_workers() -> usize {
    4
}
fn default_lr() -> f64 {
    0.01
}
fn default_gamma() -> f64 {
    0.99
}
fn default_entropy_weight() -> f64 {
    5.0
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Total episodes across all workers.
    pub episodes: usize,
    pub n_workers: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Discount factor, in `[0, 1)`.
    pub gamma: f64,
    /// Initial entropy-bonus weight, relative to unscaled rewards; decays
    /// linearly to zero over `entropy_decay_steps`.
    pub entropy_weight: f64,
    /// Factor applied to the maximized objective (rewards and entropy
    /// bonus alike) when forming updates. Positive scaling leaves the
    /// optimal policy unchanged but keeps value targets at unit scale,
    /// which plain SGD needs; pick roughly `1 / |typical reward|`. Logged
    /// episode rewards stay unscaled.
    pub reward_scale: f64,
    /// Steps until the entropy bonus reaches zero. Defaults to the full
    /// run (`episodes * horizon`).
    pub entropy_decay_steps: Option<u64>,
    /// Steps per gradient update. Defaults to one update per episode.
    pub update_period: Option<usize>,
    /// L2 max-norm clip for the summed actor gradient.
    pub actor_clip: Option<f64>,
    /// L2 max-norm clip for the summed critic gradient.
    pub critic_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: default_episodes(),
            n_workers: default_workers(),
            actor_lr: default_lr(),
            critic_lr: default_lr(),
            gamma: default_gamma(),
            entropy_weight: default_entropy_weight(),
            reward_scale: 1.0,
            entropy_decay_steps: None,
            update_period: None,
            actor_clip: None,
            critic_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes < 1 {
            return Err(Error::Config("train.episodes must be >= 1".into()));
        }
        if self.n_workers < 1 {
            return Err(Error::Config("train.n_workers must be >= 1".into()));
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!(
                    "train.{name} must be finite and >= 0, got {lr}"
                )));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "train.gamma must be in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.entropy_weight.is_finite() && self.entropy_weight >= 0.0) {
            return Err(Error::Config(format!(
                "train.entropy_weight must be finite and >= 0, got {}",
                self.entropy_weight
            )));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return Err(Error::Config(format!(
                "train.reward_scale must be finite and > 0, got {}",
                self.reward_scale
            )));
        }
        if self.update_period == Some(0) {
            return Err(Error::Config("train.update_period must be >= 1".into()));
        }
        for (name, clip) in [("actor_clip", self.actor_clip), ("critic_clip", self.critic_clip)] {
            if let Some(c) = clip {
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::Config(format!(
                        "train.{name} must be finite and > 0, got {c}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One-step TD advantage: `r + gamma * V(s') - V(s)`, with the bootstrap
/// term dropped on terminal transitions. Doubles as the critic's TD error.
pub fn advantage(reward: f64, gamma: f64, value: f64, next_value: f64, done: bool) -> f64 {
    let bootstrap = if done { 0.0 } else { gamma * next_value };
    reward + bootstrap - value
}

/// Entropy-bonus weight after `step` global steps: linear decay from
/// `initial` to zero at `decay_steps`, then zero.
pub fn entropy_weight(initial: f64, step: u64, decay_steps: u64) -> f64 {
    if decay_steps == 0 {
        return 0.0;
    }
    initial * (1.0 - step as f64 / decay_steps as f64).max(0.0)
}

/// One environment step as seen by the learner. `ages` are the raw
/// post-step ages, kept for episode statistics.
#[derive(Debug, Clone)]
pub struct Transition {
    pub fwd: ForwardOut,
    pub action: usize,
    pub reward: f64,
    pub next_value: f64,
    pub done: bool,
    pub ages: Vec<f64>,
}

/// Runs up to `max_steps` tasks from the environment's current position
/// under a frozen parameter snapshot, sampling actions from the policy.
/// Returns an empty vector if the episode is already finished.
///
/// Consecutive steps share forward passes: each step's next-state forward
/// is reused as the following step's current-state forward.
pub fn collect_rollout(
    env: &mut Env,
    params: &NetParams,
    max_steps: usize,
    policy_rng: &mut Rng,
) -> Result<Vec<Transition>> {
    let mut transitions = Vec::new();
    if env.done() {
        return Ok(transitions);
    }
    let mut fwd = net::forward(params, &env.observation())?;
    for _ in 0..max_steps {
        if env.done() {
            break;
        }
        let action = sample_categorical(&fwd.probs, policy_rng);
        let out = env.step(action)?;
        let next_fwd = net::forward(params, &out.observation)?;
        transitions.push(Transition {
            fwd,
            action,
            reward: out.reward,
            next_value: next_fwd.value,
            done: out.done,
            ages: env.state().ages.clone(),
        });
        fwd = next_fwd;
    }
    Ok(transitions)
}

/// Sums per-step actor and critic gradients over a rollout chunk. Every
/// step uses its one-step TD advantage (on `reward_scale`-scaled rewards)
/// for the policy term and the same quantity as the critic's TD error.
/// `entropy_weight` is the effective weight after any objective scaling.
pub fn compute_update(
    params: &NetParams,
    transitions: &[Transition],
    config: &TrainConfig,
    entropy_weight: f64,
) -> Result<Gradients> {
    if transitions.is_empty() {
        return Err(Error::Usage(
            "compute_update needs at least one transition".into(),
        ));
    }
    let mut grads = Gradients::zeros(params.as_slice().len());
    for t in transitions {
        let adv = advantage(
            t.reward * config.reward_scale,
            config.gamma,
            t.fwd.value,
            t.next_value,
            t.done,
        );
        net::accumulate_backward(params, &t.fwd, t.action, adv, adv, entropy_weight, &mut grads)?;
    }
    Ok(grads)
}

/// Scale factor that caps a vector's L2 norm at `max_norm`.
fn clip_scale(v: &[f64], max_norm: Option<f64>) -> f64 {
    match max_norm {
        None => 1.0,
        Some(m) => {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > m {
                m / norm
            } else {
                1.0
            }
        }
    }
}

/// Applies one gradient pair in place:
/// `w += actor_lr * g_actor + critic_lr * g_critic`, after per-vector
/// max-norm clipping. Rejects non-finite gradients without touching the
/// parameters.
pub fn apply_update(params: &mut NetParams, grads: &Gradients, config: &TrainConfig) -> Result<()> {
    let n = params.as_slice().len();
    if grads.actor.len() != n || grads.critic.len() != n {
        return Err(Error::Usage(format!(
            "gradient length {}/{} does not match {} parameters",
            grads.actor.len(),
            grads.critic.len(),
            n
        )));
    }
    if !grads.is_finite() {
        return Err(Error::UpdateRejected(
            "non-finite gradient; parameters left unchanged".into(),
        ));
    }
    let a_scale = config.actor_lr * clip_scale(&grads.actor, config.actor_clip);
    let c_scale = config.critic_lr * clip_scale(&grads.critic, config.critic_clip);
    for ((w, ga), gc) in params
        .as_mut_slice()
        .iter_mut()
        .zip(&grads.actor)
        .zip(&grads.critic)
    {
        *w += a_scale * ga + c_scale * gc;
    }
    Ok(())
}

/// Shared parameter store. Workers snapshot it before each rollout and
/// apply gradient sums under the lock; the version counter increments per
/// applied update.
pub struct GlobalParams {
    inner: Mutex<(NetParams, u64)>,
}

impl GlobalParams {
    pub fn new(params: NetParams) -> Self {
        GlobalParams {
            inner: Mutex::new((params, 0)),
        }
    }

    pub fn snapshot(&self) -> (NetParams, u64) {
        let guard = self.inner.lock().expect("parameter lock poisoned");
        guard.clone()
    }

    pub fn version(&self) -> u64 {
        self.inner.lock().expect("parameter lock poisoned").1
    }

    /// Applies a gradient pair and returns the new version.
    pub fn apply(&self, grads: &Gradients, config: &TrainConfig) -> Result<u64> {
        let mut guard = self.inner.lock().expect("parameter lock poisoned");
        apply_update(&mut guard.0, grads, config)?;
        guard.1 += 1;
        Ok(guard.1)
    }

    pub fn into_params(self) -> NetParams {
        self.inner.into_inner().expect("parameter lock poisoned").0
    }
}

/// Per-episode training summary, emitted through [`EpisodeObserver`].
#[derive(Debug, Clone, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub worker: usize,
    pub steps: usize,
    pub mean_reward: f64,
    /// Mean age over all steps and sensors, in ms.
    pub mean_age: f64,
    /// Mean age plus the weighted violation rate; lower is better.
    pub objective: f64,
    /// Entropy-bonus weight at the start of the episode.
    pub entropy_weight: f64,
    /// Mean critic estimate over the episode, in scaled-reward units.
    pub mean_value: f64,
    /// Mean absolute one-step TD error, in scaled-reward units. Falling
    /// values mean the critic is tracking its targets.
    pub mean_abs_td: f64,
}

/// Callback invoked after every finished episode, from worker threads.
/// Implementations log, checkpoint or otherwise observe progress.
pub trait EpisodeObserver: Sync {
    fn on_episode(&self, record: &EpisodeRecord);
}

/// Observer that discards all records.
pub struct NullObserver;

impl EpisodeObserver for NullObserver {
    fn on_episode(&self, _record: &EpisodeRecord) {}
}

/// Aggregate training result.
#[derive(Debug, Clone)]
pub struct TrainingStats {
    /// Episodes actually completed (equals the configured count unless
    /// stopped early).
    pub episodes: usize,
    pub total_steps: u64,
    pub updates: u64,
    /// Mean reward per episode, indexed by episode number.
    pub episode_rewards: Vec<f64>,
    /// Objective per episode, indexed by episode number.
    pub episode_objectives: Vec<f64>,
}

/// Trained parameters plus run statistics.
#[derive(Debug)]
pub struct TrainOutput {
    pub params: NetParams,
    pub stats: TrainingStats,
}

struct StatsAcc {
    rewards: Vec<f64>,
    objectives: Vec<f64>,
    completed: usize,
}

struct WorkerCtx<'a> {
    env_config: &'a EnvConfig,
    config: &'a TrainConfig,
    seed: u64,
    decay_steps: u64,
    chunk: usize,
    global: &'a GlobalParams,
    episode_counter: &'a AtomicUsize,
    step_counter: &'a AtomicU64,
    update_counter: &'a AtomicU64,
    stop: &'a AtomicBool,
    observer: &'a dyn EpisodeObserver,
    stats: &'a Mutex<StatsAcc>,
}

fn worker_loop(ctx: &WorkerCtx<'_>, worker: usize) -> Result<()> {
    let mut env = Env::new(ctx.env_config.clone())?;
    let mut policy_rng =
        Rng::seed_from_u64(mix_seed(ctx.seed, seed_tag::TRAIN_POLICY, worker as u64));
    loop {
        let episode = ctx.episode_counter.fetch_add(1, Ordering::Relaxed);
        if episode >= ctx.config.episodes || ctx.stop.load(Ordering::Relaxed) {
            return Ok(());
        }
        env.reset(mix_seed(ctx.seed, seed_tag::TRAIN_ENV, episode as u64));
        let rho_start = entropy_weight(
            ctx.config.entropy_weight,
            ctx.step_counter.load(Ordering::Relaxed),
            ctx.decay_steps,
        );

        let mut reward_sum = 0.0;
        let mut age_sum = 0.0;
        let mut penalty_sum = 0.0;
        let mut value_sum = 0.0;
        let mut abs_td_sum = 0.0;
        let mut steps = 0usize;
        let (mut params, mut _version) = ctx.global.snapshot();
        while !env.done() {
            let rho = entropy_weight(
                ctx.config.entropy_weight,
                ctx.step_counter.load(Ordering::Relaxed),
                ctx.decay_steps,
            );
            let transitions = collect_rollout(&mut env, &params, ctx.chunk, &mut policy_rng)?;
            if transitions.is_empty() {
                break;
            }
            ctx.step_counter
                .fetch_add(transitions.len() as u64, Ordering::Relaxed);
            steps += transitions.len();
            for t in &transitions {
                reward_sum += t.reward;
                value_sum += t.fwd.value;
                abs_td_sum += advantage(
                    t.reward * ctx.config.reward_scale,
                    ctx.config.gamma,
                    t.fwd.value,
                    t.next_value,
                    t.done,
                )
                .abs();
                for (age, sensor) in t.ages.iter().zip(&ctx.env_config.sensors) {
                    age_sum += age;
                    if *age > sensor.aoi_threshold {
                        penalty_sum += sensor.penalty_weight;
                    }
                }
            }
            let grads =
                compute_update(&params, &transitions, ctx.config, rho * ctx.config.reward_scale)?;
            ctx.global.apply(&grads, ctx.config)?;
            ctx.update_counter.fetch_add(1, Ordering::Relaxed);
            (params, _version) = ctx.global.snapshot();
        }

        let n = ctx.env_config.n_sensors() as f64;
        let t = steps as f64;
        let record = EpisodeRecord {
            episode,
            worker,
            steps,
            mean_reward: reward_sum / t,
            mean_age: age_sum / (t * n),
            objective: age_sum / (t * n) + penalty_sum / t,
            entropy_weight: rho_start,
            mean_value: value_sum / t,
            mean_abs_td: abs_td_sum / t,
        };
        ctx.observer.on_episode(&record);
        let mut acc = ctx.stats.lock().expect("stats lock poisoned");
        acc.rewards[episode] = record.mean_reward;
        acc.objectives[episode] = record.objective;
        acc.completed += 1;
    }
}

/// Runs the full training loop and returns the final parameters. See the
/// module docs for the worker procedure.
pub fn train(
    env_config: &EnvConfig,
    arch: &NetArch,
    config: &TrainConfig,
    seed: u64,
    observer: &dyn EpisodeObserver,
) -> Result<TrainOutput> {
    let stop = AtomicBool::new(false);
    train_with_stop(env_config, arch, config, seed, observer, &stop)
}

/// [`train`] with a cooperative stop flag, checked at episode boundaries.
/// On stop, returns the parameters as of the last completed update.
pub fn train_with_stop(
    env_config: &EnvConfig,
    arch: &NetArch,
    config: &TrainConfig,
    seed: u64,
    observer: &dyn EpisodeObserver,
    stop: &AtomicBool,
) -> Result<TrainOutput> {
    env_config.validate()?;
    config.validate()?;
    arch.validate()?;
    if arch.n_sensors != env_config.n_sensors() || arch.history_len != env_config.history_len {
        return Err(Error::Config(format!(
            "arch ({} sensors, history {}) does not match env ({} sensors, history {})",
            arch.n_sensors,
            arch.history_len,
            env_config.n_sensors(),
            env_config.history_len
        )));
    }

    let global = GlobalParams::new(net::init_params(
        arch,
        mix_seed(seed, seed_tag::INIT, 0),
    )?);
    let decay_steps = config
        .entropy_decay_steps
        .unwrap_or((config.episodes * env_config.horizon) as u64);
    let chunk = config.update_period.unwrap_or(env_config.horizon);
    let episode_counter = AtomicUsize::new(0);
    let step_counter = AtomicU64::new(0);
    let update_counter = AtomicU64::new(0);
    let stats = Mutex::new(StatsAcc {
        rewards: vec![f64::NAN; config.episodes],
        objectives: vec![f64::NAN; config.episodes],
        completed: 0,
    });
    let ctx = WorkerCtx {
        env_config,
        config,
        seed,
        decay_steps,
        chunk,
        global: &global,
        episode_counter: &episode_counter,
        step_counter: &step_counter,
        update_counter: &update_counter,
        stop,
        observer,
        stats: &stats,
    };

    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for worker in 0..config.n_workers {
            let ctx = &ctx;
            handles.push((
                worker,
                scope.spawn(move || {
                    let res = worker_loop(ctx, worker);
                    if res.is_err() {
                        ctx.stop.store(true, Ordering::Relaxed);
                    }
                    res
                }),
            ));
        }
        for (worker, handle) in handles {
            match handle.join() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => {
                    return Err(Error::Worker {
                        worker,
                        source: Box::new(e),
                    })
                }
                Err(_) => {
                    return Err(Error::Worker {
                        worker,
                        source: Box::new(Error::Domain("worker thread panicked".into())),
                    })
                }
            }
        }
        Ok(())
    })?;

    let acc = stats.into_inner().expect("stats lock poisoned");
    Ok(TrainOutput {
        params: global.into_params(),
        stats: TrainingStats {
            episodes: acc.completed,
            total_steps: step_counter.into_inner(),
            updates: update_counter.into_inner(),
            episode_rewards: acc.rewards,
            episode_objectives: acc.objectives,
        },
    })
}
