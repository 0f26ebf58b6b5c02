//! Evaluation traces, age metrics and policy comparison.
//!
//! A trace is the per-task record of one episode: selected sensor,
//! post-update ages, reward and transmission duration. The metric
//! functions are straight-line computations over traces so independent
//! recomputations can cross-check any report entry.
//!
//! Evaluation is paired across policies: the environment draws one attempt
//! count and its per-attempt rates per task regardless of which sensor was
//! selected, so two policies evaluated with the same seed face the same
//! channel realizations task for task.

use crate::env::{Env, EnvConfig, SensorSpec};
use crate::policy::Scheduler;
use crate::{fnv1a64, mix_seed, seed_tag, Error, Result, Rng};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

fn default_eval_episodes() -> usize {
    10
}
fn default_eval_horizon() -> usize {
    10_000
}
fn default_eval_seed() -> u64 {
    1
}

/// Evaluation run parameters. `horizon` overrides the environment's
/// training horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: default_eval_episodes(),
            horizon: default_eval_horizon(),
            seed: default_eval_seed(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes < 1 {
            return Err(Error::Config("eval.episodes must be >= 1".into()));
        }
        if self.horizon < 1 {
            return Err(Error::Config("eval.horizon must be >= 1".into()));
        }
        Ok(())
    }
}

/// One task as recorded during evaluation. `ages` are the post-update ages,
/// the same quantities the reward is computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    /// Task index within its episode.
    pub task: usize,
    pub action: usize,
    pub ages: Vec<f64>,
    pub reward: f64,
    pub tx_duration: f64,
}

/// Per-task records of one episode.
pub type Trace = Vec<TaskRecord>;

/// Runs the environment's current episode to completion under a scheduler
/// and records every task.
pub fn episode_trace(env: &mut Env, scheduler: &Scheduler, policy_rng: &mut Rng) -> Result<Trace> {
    let mut trace = Vec::new();
    while !env.done() {
        let obs = env.observation();
        let action = scheduler.decide(env.state(), &obs, policy_rng)?;
        let out = env.step(action)?;
        trace.push(TaskRecord {
            task: trace.len(),
            action,
            ages: env.state().ages.clone(),
            reward: out.reward,
            tx_duration: out.tx_duration,
        });
    }
    Ok(trace)
}

/// Per-node mean age over all recorded tasks.
pub fn average_aoi(tasks: &[TaskRecord], n_sensors: usize) -> Vec<f64> {
    let mut sums = vec![0.0; n_sensors];
    for record in tasks {
        for (sum, age) in sums.iter_mut().zip(&record.ages) {
            *sum += age;
        }
    }
    let count = tasks.len().max(1) as f64;
    sums.iter_mut().for_each(|s| *s /= count);
    sums
}

/// Per-node fraction of tasks whose post-update age strictly exceeds the
/// node's threshold.
pub fn violation_prob(tasks: &[TaskRecord], sensors: &[SensorSpec]) -> Vec<f64> {
    let mut counts = vec![0usize; sensors.len()];
    for record in tasks {
        for ((count, age), sensor) in counts.iter_mut().zip(&record.ages).zip(sensors) {
            if *age > sensor.aoi_threshold {
                *count += 1;
            }
        }
    }
    let total = tasks.len().max(1) as f64;
    counts.iter().map(|c| *c as f64 / total).collect()
}

/// Scheduling objective over a set of recorded tasks: the mean age across
/// tasks and nodes plus the penalty-weighted violation probabilities.
/// Lower is better.
pub fn objective(tasks: &[TaskRecord], sensors: &[SensorSpec]) -> f64 {
    let per_node = average_aoi(tasks, sensors.len());
    let mean_age = per_node.iter().sum::<f64>() / sensors.len() as f64;
    let violations = violation_prob(tasks, sensors);
    let weighted: f64 = violations
        .iter()
        .zip(sensors)
        .map(|(p, s)| p * s.penalty_weight)
        .sum();
    mean_age + weighted
}

/// Empirical CDF of `samples` evaluated at each of `points`:
/// `F(a) = |{x : x <= a}| / |samples|`.
pub fn empirical_cdf(samples: &[f64], points: &[f64]) -> Vec<f64> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len().max(1) as f64;
    points
        .iter()
        .map(|a| sorted.partition_point(|x| x <= a) as f64 / n)
        .collect()
}

/// Full evaluation result for one policy on one scenario. Self-contained:
/// thresholds and penalty weights are echoed so comparisons and plots need
/// no side channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub policy: String,
    /// Fingerprint of the evaluated scenario (sensor set, channel, rate
    /// model, history length, horizon). Reports are only comparable when
    /// these match.
    pub scenario_hash: String,
    pub seed: u64,
    pub episodes: usize,
    pub horizon: usize,
    pub total_tasks: usize,
    pub mean_reward: f64,
    /// Mean age over all tasks and nodes, in ms.
    pub mean_age: f64,
    /// Penalty-weighted sum of per-node violation probabilities.
    pub weighted_violation: f64,
    /// `mean_age + weighted_violation`; lower is better.
    pub objective: f64,
    pub avg_aoi: Vec<f64>,
    pub violation_prob: Vec<f64>,
    pub selection_freq: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub penalty_weights: Vec<f64>,
    /// Shared age grid for the per-node CDFs; includes every threshold.
    pub cdf_points: Vec<f64>,
    /// Per-node CDF values on `cdf_points`.
    pub cdf: Vec<Vec<f64>>,
}

/// Fingerprint of the scenario a report was produced on. The environment's
/// own `rng_seed` is excluded: evaluation reseeds per episode.
fn scenario_hash(env_config: &EnvConfig) -> String {
    let mut canonical = env_config.clone();
    canonical.rng_seed = 0;
    let json = serde_json::to_string(&canonical).expect("env config serializes to JSON");
    format!("{:016x}", fnv1a64(json.as_bytes()))
}

/// Evaluates one policy: `eval.episodes` fresh episodes of `eval.horizon`
/// tasks each, with per-episode seeds derived from `eval.seed`. The label
/// names the policy in the report.
pub fn evaluate_policy(
    env_config: &EnvConfig,
    scheduler: &Scheduler,
    eval: &EvalConfig,
    label: &str,
) -> Result<Report> {
    eval.validate()?;
    let mut cfg = env_config.clone();
    cfg.horizon = eval.horizon;
    cfg.validate()?;
    let hash = scenario_hash(&cfg);
    let sensors = cfg.sensors.clone();
    let n_sensors = sensors.len();

    let mut env = Env::new(cfg)?;
    let mut tasks: Vec<TaskRecord> = Vec::with_capacity(eval.episodes * eval.horizon);
    for ep in 0..eval.episodes {
        env.reset(mix_seed(eval.seed, seed_tag::EVAL_ENV, ep as u64));
        let mut policy_rng =
            Rng::seed_from_u64(mix_seed(eval.seed, seed_tag::EVAL_POLICY, ep as u64));
        tasks.extend(episode_trace(&mut env, scheduler, &mut policy_rng)?);
    }

    let avg_aoi = average_aoi(&tasks, n_sensors);
    let violations = violation_prob(&tasks, &sensors);
    let mean_age = avg_aoi.iter().sum::<f64>() / n_sensors as f64;
    let weighted_violation: f64 = violations
        .iter()
        .zip(&sensors)
        .map(|(p, s)| p * s.penalty_weight)
        .sum();
    let total = tasks.len() as f64;
    let mean_reward = tasks.iter().map(|t| t.reward).sum::<f64>() / total;
    let mut selection_counts = vec![0usize; n_sensors];
    for t in &tasks {
        selection_counts[t.action] += 1;
    }
    let selection_freq = selection_counts
        .iter()
        .map(|c| *c as f64 / total)
        .collect();

    // Age samples per node, for the CDFs.
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(tasks.len()); n_sensors];
    for t in &tasks {
        for (node, age) in t.ages.iter().enumerate() {
            samples[node].push(*age);
        }
    }
    let max_age = samples
        .iter()
        .flatten()
        .cloned()
        .fold(0.0_f64, f64::max);
    let mut cdf_points: Vec<f64> = (0..256).map(|i| max_age * i as f64 / 255.0).collect();
    cdf_points.extend(sensors.iter().map(|s| s.aoi_threshold));
    cdf_points.sort_by(f64::total_cmp);
    cdf_points.dedup();
    let cdf = samples
        .iter()
        .map(|s| empirical_cdf(s, &cdf_points))
        .collect();

    Ok(Report {
        policy: label.to_string(),
        scenario_hash: hash,
        seed: eval.seed,
        episodes: eval.episodes,
        horizon: eval.horizon,
        total_tasks: tasks.len(),
        mean_reward,
        mean_age,
        weighted_violation,
        objective: mean_age + weighted_violation,
        avg_aoi,
        violation_prob: violations,
        selection_freq,
        thresholds: sensors.iter().map(|s| s.aoi_threshold).collect(),
        penalty_weights: sensors.iter().map(|s| s.penalty_weight).collect(),
        cdf_points,
        cdf,
    })
}

/// Side-by-side summary of reports evaluated on the same scenario and
/// seeds. `best` indexes the lowest objective.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub policies: Vec<String>,
    pub objectives: Vec<f64>,
    pub ratio_to_best: Vec<f64>,
    pub mean_ages: Vec<f64>,
    pub weighted_violations: Vec<f64>,
    pub best: usize,
    /// `[policy][node]` mean ages.
    pub avg_aoi: Vec<Vec<f64>>,
    /// `[policy][node]` violation probabilities.
    pub violation_prob: Vec<Vec<f64>>,
}

/// Validates that reports are comparable (same scenario, seed and length)
/// and summarizes them. Requires at least two reports.
pub fn compare(reports: &[Report]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::Usage(format!(
            "compare needs at least 2 reports, got {}",
            reports.len()
        )));
    }
    let first = &reports[0];
    for r in &reports[1..] {
        for (field, ok) in [
            ("scenario", r.scenario_hash == first.scenario_hash),
            ("seed", r.seed == first.seed),
            ("episodes", r.episodes == first.episodes),
            ("horizon", r.horizon == first.horizon),
            ("node count", r.avg_aoi.len() == first.avg_aoi.len()),
        ] {
            if !ok {
                return Err(Error::Usage(format!(
                    "reports '{}' and '{}' differ in {field}; re-evaluate on identical settings",
                    first.policy, r.policy
                )));
            }
        }
    }
    let objectives: Vec<f64> = reports.iter().map(|r| r.objective).collect();
    let best = objectives
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let best_objective = objectives[best];
    Ok(Comparison {
        policies: reports.iter().map(|r| r.policy.clone()).collect(),
        ratio_to_best: objectives.iter().map(|o| o / best_objective).collect(),
        objectives,
        mean_ages: reports.iter().map(|r| r.mean_age).collect(),
        weighted_violations: reports.iter().map(|r| r.weighted_violation).collect(),
        best,
        avg_aoi: reports.iter().map(|r| r.avg_aoi.clone()).collect(),
        violation_prob: reports.iter().map(|r| r.violation_prob.clone()).collect(),
    })
}

impl Comparison {
    /// Wide CSV: one row per policy, per-node columns appended.
    pub fn to_csv(&self) -> String {
        let nodes = self.avg_aoi.first().map_or(0, Vec::len);
        let mut out = String::from("policy,objective,ratio_to_best,mean_age,weighted_violation");
        for n in 0..nodes {
            out.push_str(&format!(",avg_aoi_{n}"));
        }
        for n in 0..nodes {
            out.push_str(&format!(",violation_prob_{n}"));
        }
        out.push('\n');
        for (i, policy) in self.policies.iter().enumerate() {
            out.push_str(&format!(
                "{policy},{},{},{},{}",
                self.objectives[i],
                self.ratio_to_best[i],
                self.mean_ages[i],
                self.weighted_violations[i]
            ));
            for v in &self.avg_aoi[i] {
                out.push_str(&format!(",{v}"));
            }
            for v in &self.violation_prob[i] {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Fixed-width summary table for terminal output.
    pub fn render_table(&self) -> String {
        let name_width = self
            .policies
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(6)
            .max(6);
        let mut out = format!(
            "{:<name_width$}  {:>12}  {:>8}  {:>10}  {:>14}\n",
            "policy", "objective", "ratio", "mean_age", "weighted_viol"
        );
        for (i, policy) in self.policies.iter().enumerate() {
            let marker = if i == self.best { " *" } else { "" };
            out.push_str(&format!(
                "{:<name_width$}  {:>12.4}  {:>8.4}  {:>10.4}  {:>14.4}{marker}\n",
                policy,
                self.objectives[i],
                self.ratio_to_best[i],
                self.mean_ages[i],
                self.weighted_violations[i]
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::RateModel;
    use crate::policy::{benchmark_probs, ProbVector};

    fn sensor(aoi_threshold: f64, penalty_weight: f64) -> SensorSpec {
        SensorSpec {
            packet_len: 10.0,
            aoi_threshold,
            penalty_weight,
        }
    }

    fn record(ages: Vec<f64>) -> TaskRecord {
        TaskRecord {
            task: 0,
            action: 0,
            reward: 0.0,
            tx_duration: 1.0,
            ages,
        }
    }

    #[test]
    fn average_aoi_of_constant_trace() {
        let tasks: Vec<_> = (0..50).map(|_| record(vec![3.0, 7.0])).collect();
        assert_eq!(average_aoi(&tasks, 2), vec![3.0, 7.0]);
    }

    #[test]
    fn metrics_match_straight_line_recomputation() {
        let tasks = vec![
            record(vec![1.0, 2.0]),
            record(vec![5.0, 1.0]),
            record(vec![25.0, 3.0]),
            record(vec![2.0, 31.0]),
            record(vec![4.0, 2.0]),
        ];
        let sensors = vec![sensor(20.0, 100.0), sensor(30.0, 10.0)];
        // Node 0: (1+5+25+2+4)/5 = 7.4; node 1: (2+1+3+31+2)/5 = 7.8.
        assert_eq!(average_aoi(&tasks, 2), vec![7.4, 7.8]);
        // One violation each: 25 > 20 and 31 > 30.
        assert_eq!(violation_prob(&tasks, &sensors), vec![0.2, 0.2]);
        // (7.4 + 7.8)/2 + 0.2*100 + 0.2*10 = 7.6 + 22 = 29.6.
        assert!((objective(&tasks, &sensors) - 29.6).abs() < 1e-12);
    }

    #[test]
    fn violation_prob_edge_rates() {
        let sensors = vec![sensor(10.0, 1.0)];
        let none: Vec<_> = (0..4).map(|_| record(vec![10.0])).collect();
        assert_eq!(violation_prob(&none, &sensors), vec![0.0]);
        let all: Vec<_> = (0..4).map(|_| record(vec![10.1])).collect();
        assert_eq!(violation_prob(&all, &sensors), vec![1.0]);
        let half = vec![record(vec![5.0]), record(vec![15.0])];
        assert_eq!(violation_prob(&half, &sensors), vec![0.5]);
    }

    #[test]
    fn objective_hand_case_and_zero_penalty_reduction() {
        // Two tasks, one node: ages 10 and 30 against threshold 20 with
        // weight 100 give 20 + 0.5*100 = 70.
        let tasks = vec![record(vec![10.0]), record(vec![30.0])];
        let sensors = vec![sensor(20.0, 100.0)];
        assert!((objective(&tasks, &sensors) - 70.0).abs() < 1e-12);

        // Zero penalty weights reduce the objective to the mean age.
        let free = vec![sensor(20.0, 0.0)];
        assert!((objective(&tasks, &free) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_cdf_reference_points() {
        let samples = [1.0, 2.0, 3.0, 4.0];
        let f = empirical_cdf(&samples, &[0.5, 1.0, 2.5, 4.0, 5.0]);
        assert_eq!(f, vec![0.0, 0.25, 0.5, 1.0, 1.0]);
    }

    fn eval_env() -> EnvConfig {
        EnvConfig {
            sensors: vec![
                SensorSpec {
                    packet_len: 10.0,
                    aoi_threshold: 20.0,
                    penalty_weight: 1000.0,
                },
                SensorSpec {
                    packet_len: 10.0,
                    aoi_threshold: 20.0,
                    penalty_weight: 500.0,
                },
            ],
            success_prob: 1.0,
            rate_model: RateModel::Constant { rate: 10.0 },
            horizon: 100,
            rng_seed: 0,
            history_len: 4,
        }
    }

    #[test]
    fn max_age_on_identical_sensors_balances_ages() {
        let eval = EvalConfig {
            episodes: 2,
            horizon: 2000,
            seed: 3,
        };
        let report = evaluate_policy(&eval_env(), &Scheduler::MaxAge, &eval, "max_age").unwrap();
        // Deterministic 1 ms transmissions, alternating service: both nodes
        // settle at a 1.5 ms mean with a startup transient.
        assert!((report.avg_aoi[0] - report.avg_aoi[1]).abs() < 0.01);
        assert!((report.avg_aoi[0] - 1.5).abs() < 0.01);
        assert_eq!(report.violation_prob, vec![0.0, 0.0]);
        assert!((report.objective - report.mean_age).abs() < 1e-12);
        assert_eq!(report.total_tasks, 4000);
    }

    #[test]
    fn evaluation_is_reproducible() {
        let mut cfg = eval_env();
        cfg.success_prob = 0.7;
        cfg.rate_model = RateModel::UniformRange { lo: 5.0, hi: 15.0 };
        let eval = EvalConfig {
            episodes: 3,
            horizon: 200,
            seed: 11,
        };
        let scheduler = Scheduler::benchmark_for(&cfg).unwrap();
        let a = evaluate_policy(&cfg, &scheduler, &eval, "benchmark").unwrap();
        let b = evaluate_policy(&cfg, &scheduler, &eval, "benchmark").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn report_internal_identities_hold() {
        let mut cfg = eval_env();
        cfg.success_prob = 0.8;
        let eval = EvalConfig {
            episodes: 2,
            horizon: 500,
            seed: 5,
        };
        let scheduler = Scheduler::benchmark_for(&cfg).unwrap();
        let r = evaluate_policy(&cfg, &scheduler, &eval, "benchmark").unwrap();
        // Objective decomposes into its two published parts.
        assert!((r.objective - (r.mean_age + r.weighted_violation)).abs() < 1e-12);
        // Selection frequencies form a distribution.
        assert!((r.selection_freq.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // CDF at each threshold complements the violation probability.
        for node in 0..2 {
            let idx = r
                .cdf_points
                .iter()
                .position(|p| *p == r.thresholds[node])
                .unwrap();
            assert!((r.cdf[node][idx] - (1.0 - r.violation_prob[node])).abs() < 1e-12);
        }
        // CDFs are monotone and end at 1.
        for node in 0..2 {
            let cdf = &r.cdf[node];
            assert!(cdf.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(cdf.last(), Some(&1.0));
        }
    }

    #[test]
    fn benchmark_selection_matches_probabilities() {
        let cfg = EnvConfig {
            sensors: vec![
                SensorSpec {
                    packet_len: 10.0,
                    aoi_threshold: 20.0,
                    penalty_weight: 0.0,
                },
                SensorSpec {
                    packet_len: 10.0,
                    aoi_threshold: 40.0,
                    penalty_weight: 0.0,
                },
            ],
            success_prob: 1.0,
            rate_model: RateModel::Constant { rate: 10.0 },
            horizon: 100,
            rng_seed: 0,
            history_len: 4,
        };
        let eval = EvalConfig {
            episodes: 2,
            horizon: 10_000,
            seed: 9,
        };
        let scheduler = Scheduler::benchmark_for(&cfg).unwrap();
        let report = evaluate_policy(&cfg, &scheduler, &eval, "benchmark").unwrap();
        let probs = benchmark_probs(&[20.0, 40.0]).unwrap();
        for (freq, p) in report.selection_freq.iter().zip(probs.probs()) {
            assert!((freq - p).abs() < 0.01, "freq {freq} vs prob {p}");
        }
    }

    #[test]
    fn compare_requires_matching_runs() {
        let cfg = eval_env();
        let eval = EvalConfig {
            episodes: 1,
            horizon: 200,
            seed: 2,
        };
        let bench = Scheduler::benchmark_for(&cfg).unwrap();
        let a = evaluate_policy(&cfg, &bench, &eval, "benchmark").unwrap();
        let b = evaluate_policy(&cfg, &Scheduler::MaxAge, &eval, "max_age").unwrap();

        assert!(matches!(compare(&[a.clone()]).unwrap_err(), Error::Usage(_)));

        let other_seed = EvalConfig { seed: 3, ..eval };
        let c = evaluate_policy(&cfg, &Scheduler::MaxAge, &other_seed, "max_age").unwrap();
        assert!(matches!(compare(&[a.clone(), c]).unwrap_err(), Error::Usage(_)));

        let cmp = compare(&[a.clone(), b]).unwrap();
        assert_eq!(cmp.policies, vec!["benchmark", "max_age"]);
        assert_eq!(cmp.ratio_to_best[cmp.best], 1.0);
        assert!(cmp.ratio_to_best.iter().all(|r| *r >= 1.0));

        // Comparing a report against itself pins every ratio at 1.
        let self_cmp = compare(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(self_cmp.ratio_to_best, vec![1.0, 1.0]);

        let csv = cmp.to_csv();
        assert!(csv.starts_with("policy,objective,ratio_to_best"));
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("avg_aoi_1"));
        let table = cmp.render_table();
        assert!(table.contains("benchmark"));
        assert!(table.contains('*'));
    }

    #[test]
    fn round_robin_cycles_over_sensors() {
        let cfg = eval_env();
        let eval = EvalConfig {
            episodes: 1,
            horizon: 100,
            seed: 4,
        };
        let report = evaluate_policy(&cfg, &Scheduler::RoundRobin, &eval, "round_robin").unwrap();
        assert_eq!(report.selection_freq, vec![0.5, 0.5]);
    }

    #[test]
    fn uniform_probs_on_uniform_sensors() {
        let p = ProbVector::uniform(4);
        assert_eq!(p.probs(), &[0.25; 4]);
    }
}
