//! End-to-end experiments on the point-mass grid: expert generation,
//! demonstration collection, the training loop, evaluation and metrics.

mod verify;

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::idm::InverseDynamicsModel;
use crate::lsiq::{Algorithm, LsIqAgent, LsIqConfig};
use crate::mdp::{rollout_with_rng, GridSpec, ObservedTransition, TabularMdp, Transition, TransitionSet};
use crate::soft_rl::{maxent_policy, soft_value_iteration, CriticState, Policy};

pub use verify::{verify, CheckResult, VerifyReport};

const EXPERT_HAZARD_TOLERANCE: f64 = 1e-6;

/// Sub-stream ids derived from the experiment seed.
mod stream {
    pub const DEMOS: u64 = 1;
    pub const ENV: u64 = 2;
    pub const POLICY: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const EVAL: u64 = 5;
}

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub environment: GridSpec,
    pub agent: LsIqConfig,
    pub n_expert_trajectories: usize,
    pub lfo: bool,
    pub total_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    /// Episode length cap for demonstrations, exploration and evaluation; `4 * size` when absent.
    pub horizon: Option<usize>,
    /// Temperature of the soft-optimal expert.
    pub expert_beta: f64,
    /// Replay buffer size; unbounded when absent.
    pub replay_capacity: Option<usize>,
}

impl Default for ExperimentConfig {
    /// The point-mass toy: a single demonstration, goal cells that do not end
    /// the episode, and an LS-IQ learner with bootstrapped expert targets.
    fn default() -> Self {
        let gamma = 0.99;
        Self {
            environment: GridSpec {
                goal_absorbing: false,
                ..GridSpec::pointmass(7, gamma)
            },
            agent: LsIqConfig {
                c: 0.5,
                alpha: 0.5,
                beta: 0.1,
                gamma,
                fixed_expert_target: false,
                clip_targets: true,
                lr_q: 1.0,
                ..LsIqConfig::default()
            },
            n_expert_trajectories: 1,
            lfo: false,
            total_steps: 20_000,
            eval_every: 1_000,
            eval_episodes: 100,
            seed: 0,
            horizon: None,
            expert_beta: 0.01,
            replay_capacity: None,
        }
    }
}

impl ExperimentConfig {
    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(4 * self.environment.size)
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if self.lfo && self.agent.algorithm != Algorithm::Lsiq {
            return Err(Error::Configuration("learning from observations requires the LSIQ algorithm".into()));
        }
        if self.agent.gamma != self.environment.gamma {
            return Err(Error::Configuration(format!(
                "agent gamma {} differs from environment gamma {}",
                self.agent.gamma, self.environment.gamma
            )));
        }
        if self.n_expert_trajectories == 0 || self.eval_every == 0 || self.eval_episodes == 0 || self.horizon() == 0 {
            return Err(Error::Configuration(
                "n_expert_trajectories, eval_every, eval_episodes and horizon must be positive".into(),
            ));
        }
        if self.replay_capacity == Some(0) {
            return Err(Error::Configuration("replay_capacity must be positive".into()));
        }
        if !(self.expert_beta > 0.0) {
            return Err(Error::Configuration("expert_beta must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Soft-optimal policy for the true reward.
///
/// On tasks with goal states the expert must reach a failure state with
/// probability at most `1e-6`.
pub fn train_expert(mdp: &TabularMdp, beta: f64, tol: f64) -> Result<Policy> {
    let reward = mdp
        .true_reward()
        .ok_or_else(|| Error::InvalidEnvironment("expert training needs a true reward".into()))?;
    let q = soft_value_iteration(mdp, reward, beta, tol)?;
    let policy = maxent_policy(&q, beta)?;
    if mdp.absorbing().iter().enumerate().any(|(s, _)| mdp.is_goal(s)) {
        let p = failure_probability(mdp, &policy);
        if p > EXPERT_HAZARD_TOLERANCE {
            return Err(Error::ExpertQuality(format!("expert reaches a failure state with probability {p:.3e}")));
        }
    }
    Ok(policy)
}

/// Probability of ever entering a failure state from the initial distribution.
pub fn failure_probability(mdp: &TabularMdp, policy: &Policy) -> f64 {
    let n = mdp.n_states();
    let mut p: Vec<f64> = (0..n).map(|s| if mdp.is_failure(s) { 1.0 } else { 0.0 }).collect();
    for _ in 0..100_000 {
        let mut delta: f64 = 0.0;
        for s in (0..n).filter(|&s| !mdp.is_absorbing(s)) {
            let v: f64 = (0..mdp.n_actions())
                .map(|a| policy.prob(s, a) * mdp.expect_next(s, a, |sn| p[sn]))
                .sum();
            delta = delta.max((v - p[s]).abs());
            p[s] = v;
        }
        if delta < 1e-14 {
            break;
        }
    }
    mdp.initial_dist().iter().zip(&p).map(|(mu, x)| mu * x).sum()
}

/// Expert transitions with the learner-visible view they are exposed through.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstrations {
    /// Full records; in observation mode the actions are kept only for scoring.
    pub records: TransitionSet,
    pub lfo: bool,
}

impl Demonstrations {
    pub fn observations(&self) -> Vec<ObservedTransition> {
        self.records.iter().map(ObservedTransition::from).collect()
    }

    /// JSONL in the learner-visible format.
    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<()> {
        if self.lfo {
            self.records.write_observations_jsonl(w)
        } else {
            self.records.write_jsonl(w)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.records.save(path, self.lfo)
    }
}

pub fn collect_demonstrations(
    mdp: &TabularMdp,
    expert: &Policy,
    n_traj: usize,
    horizon: usize,
    lfo: bool,
    seed: u64,
) -> Result<Demonstrations> {
    if n_traj == 0 {
        return Err(Error::Configuration("need at least one trajectory".into()));
    }
    let mut rng = substream(seed, stream::DEMOS);
    let mut records = TransitionSet::new();
    for _ in 0..n_traj {
        records.extend(rollout_with_rng(mdp, expert, horizon, &mut rng));
    }
    Ok(Demonstrations { records, lfo })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub discounted_return: f64,
    pub success_rate: f64,
}

/// Greedy rollouts under the true reward; entering an absorbing state adds its
/// analytic tail value. An episode succeeds once it visits a goal state.
pub fn evaluate(mdp: &TabularMdp, policy: &Policy, episodes: usize, horizon: usize, seed: u64) -> Result<Evaluation> {
    if episodes == 0 {
        return Err(Error::Configuration("need at least one evaluation episode".into()));
    }
    mdp.check_policy(policy)?;
    let reward = mdp
        .true_reward()
        .ok_or_else(|| Error::InvalidEnvironment("evaluation needs a true reward".into()))?;
    let greedy = policy.greedy();
    let mut rng = substream(seed, stream::EVAL);
    let gamma = mdp.gamma();
    let (mut total_return, mut successes) = (0.0, 0usize);
    for _ in 0..episodes {
        let mut s = mdp.sample_initial(&mut rng);
        let mut discount = 1.0;
        let mut ret = 0.0;
        let mut reached = false;
        for _ in 0..horizon {
            let a = greedy.mode(s);
            ret += discount * reward[(s, a)];
            s = mdp.step(s, a, &mut rng);
            discount *= gamma;
            reached |= mdp.is_goal(s);
            if mdp.is_absorbing(s) {
                ret += discount * mdp.absorbing_value(reward, s);
                break;
            }
        }
        successes += usize::from(reached);
        total_return += ret;
    }
    Ok(Evaluation {
        discounted_return: total_return / episodes as f64,
        success_rate: successes as f64 / episodes as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub discounted_return: f64,
    pub success_rate: f64,
    pub q_mean_absorbing: Option<f64>,
    pub q_mean_nonabsorbing: Option<f64>,
    pub loss: Option<f64>,
    pub idm_accuracy: Option<f64>,
}

pub const METRICS_HEADER: &str =
    "step,discounted_return,success_rate,q_mean_absorbing,q_mean_nonabsorbing,loss,idm_accuracy";

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], w: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    writer.write_record(METRICS_HEADER.split(','))?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Saved learner state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub critic: CriticState,
    pub policy: Policy,
    #[serde(default)]
    pub idm: Option<InverseDynamicsModel>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub agent: LsIqAgent,
    pub replay: TransitionSet,
    pub idm: Option<InverseDynamicsModel>,
    pub demonstrations: Demonstrations,
}

impl TrainOutcome {
    pub fn checkpoint(&self, config: &ExperimentConfig) -> Checkpoint {
        Checkpoint {
            config: config.clone(),
            critic: self.agent.critic.clone(),
            policy: self.agent.policy.clone(),
            idm: self.idm.clone(),
        }
    }

    pub fn final_success_rate(&self) -> Option<f64> {
        self.metrics.last().map(|m| m.success_rate)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean online Q over replay records entering a failure state and over records
/// staying in non-absorbing states.
pub fn replay_q_means(mdp: &TabularMdp, q: &crate::table::Table, replay: &TransitionSet) -> (Option<f64>, Option<f64>) {
    let failing = mean(replay.iter().filter(|t| mdp.is_failure(t.s_next)).map(|t| q[(t.s, t.a)]));
    let ongoing = mean(replay.iter().filter(|t| !t.absorbing_next).map(|t| q[(t.s, t.a)]));
    (failing, ongoing)
}

/// Run the full imitation loop. Deterministic given the config (including its seed).
pub fn train(config: &ExperimentConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mdp = config.environment.build()?;
    let horizon = config.horizon();
    let expert = train_expert(&mdp, config.expert_beta, 1e-10)?;
    let demonstrations =
        collect_demonstrations(&mdp, &expert, config.n_expert_trajectories, horizon, config.lfo, config.seed)?;
    let expert_observations = demonstrations.observations();

    let mut agent = LsIqAgent::new(config.agent.clone(), mdp.n_states(), mdp.n_actions())?;
    let mut replay = match config.replay_capacity {
        Some(cap) => TransitionSet::with_capacity(cap),
        None => TransitionSet::new(),
    };
    let mut idm = config.lfo.then(|| InverseDynamicsModel::new(mdp.n_actions()));
    let mut env_rng = substream(config.seed, stream::ENV);
    let mut policy_rng = substream(config.seed, stream::POLICY);
    let mut batch_rng = substream(config.seed, stream::BATCH);
    let batch_size = config.agent.batch_size;

    let mut metrics = Vec::new();
    let mut state = mdp.sample_initial(&mut env_rng);
    let mut episode_len = 0;
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);

    for step in 1..=config.total_steps {
        let a = agent.policy.sample(state, &mut policy_rng);
        let s_next = mdp.step(state, a, &mut env_rng);
        let t = Transition {
            s: state,
            a,
            s_next,
            absorbing_next: mdp.is_absorbing(s_next),
        };
        replay.push(t);
        if let Some(model) = idm.as_mut() {
            model.update(&[t]);
        }
        episode_len += 1;
        if t.absorbing_next || episode_len >= horizon {
            state = mdp.sample_initial(&mut env_rng);
            episode_len = 0;
        } else {
            state = s_next;
        }

        if replay.len() >= batch_size {
            let expert_batch = match &idm {
                // pairs the learner has never produced carry no action evidence and are skipped
                Some(model) => {
                    let obs: Vec<ObservedTransition> = (0..batch_size)
                        .map(|_| expert_observations[batch_rng.gen_range(0..expert_observations.len())])
                        .collect();
                    model.label_confident(&obs)?
                }
                None => demonstrations.records.sample(batch_size, &mut batch_rng),
            };
            let policy_batch = replay.sample(batch_size, &mut batch_rng);
            if !expert_batch.is_empty() {
                loss_sum += agent.update(&expert_batch, &policy_batch, mdp.initial_dist())?;
                loss_count += 1;
            }
        }

        if step % config.eval_every == 0 {
            let eval = evaluate(&mdp, &agent.policy, config.eval_episodes, horizon, config.seed ^ step as u64)?;
            let (q_mean_absorbing, q_mean_nonabsorbing) = replay_q_means(&mdp, &agent.critic.q, &replay);
            metrics.push(MetricsRow {
                step,
                discounted_return: eval.discounted_return,
                success_rate: eval.success_rate,
                q_mean_absorbing,
                q_mean_nonabsorbing,
                loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
                idm_accuracy: idm.as_ref().and_then(|m| m.accuracy(demonstrations.records.records())),
            });
            loss_sum = 0.0;
            loss_count = 0;
        }
    }

    Ok(TrainOutcome {
        metrics,
        agent,
        replay,
        idm,
        demonstrations,
    })
}

/// Final success rate of `config` for each seed, computed on parallel threads.
pub fn final_success_rates(config: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<f64>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let cfg = ExperimentConfig { seed, ..config.clone() };
                scope.spawn(move || train(&cfg).map(|out| out.final_success_rate().unwrap_or(0.0)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{occupancy_measure, occupancy_to_distribution};
    use crate::soft_rl::{hard_value_iteration, policy_evaluation_hard};
    use crate::table::Table;

    fn grid() -> TabularMdp {
        GridSpec::pointmass(7, 0.99).build().unwrap()
    }

    #[test]
    fn expert_always_succeeds() {
        let mdp = grid();
        let expert = train_expert(&mdp, 0.01, 1e-10).unwrap();
        assert!(failure_probability(&mdp, &expert) <= 1e-6);
        let eval = evaluate(&mdp, &expert, 1000, 28, 3).unwrap();
        assert_eq!(eval.success_rate, 1.0);
    }

    #[test]
    fn expert_on_single_state_is_uniform() {
        let mdp = TabularMdp::new(1, 3, vec![vec![(0, 1.0)]; 3], vec![false], vec![1.0], 0.9)
            .unwrap()
            .with_true_reward(Table::zeros(1, 3))
            .unwrap();
        let expert = train_expert(&mdp, 1.0, 1e-12).unwrap();
        for a in 0..3 {
            assert!((expert.prob(0, a) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn low_temperature_expert_matches_greedy_return() {
        let mdp = grid();
        let reward = mdp.true_reward().unwrap().clone();
        let expert = train_expert(&mdp, 0.01, 1e-10).unwrap();
        let greedy_q = hard_value_iteration(&mdp, &reward, 1e-10).unwrap();
        let actions: Vec<usize> = greedy_q.rows().map(crate::soft_rl::argmax).collect();
        let greedy = Policy::deterministic(&actions, 4);
        let value = |p: &Policy| {
            let q = policy_evaluation_hard(&mdp, &reward, p).unwrap();
            (0..mdp.n_states())
                .map(|s| mdp.initial_dist()[s] * p.expect(&q, s))
                .sum::<f64>()
        };
        let (v_soft, v_greedy) = (value(&expert), value(&greedy));
        assert!((v_soft - v_greedy).abs() <= 0.01 * v_greedy.abs());
    }

    #[test]
    fn hazard_ring_stops_random_walk() {
        let mdp = grid();
        let eval = evaluate(&mdp, &Policy::uniform(49, 4), 1, 28, 0).unwrap();
        assert!(eval.success_rate < 1.0);
        // greedy evaluation of uniform picks action 0 (up) everywhere and never succeeds
        let random = Policy::random(49, 4, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(failure_probability(&mdp, &random) > 0.0);
    }

    #[test]
    fn evaluation_matches_exact_value() {
        let mdp = grid();
        let reward = mdp.true_reward().unwrap().clone();
        let expert = train_expert(&mdp, 0.01, 1e-10).unwrap();
        let greedy = expert.greedy();
        let q = policy_evaluation_hard(&mdp, &reward, &greedy).unwrap();
        let exact: f64 = (0..49).map(|s| mdp.initial_dist()[s] * greedy.expect(&q, s)).sum();
        let eval = evaluate(&mdp, &greedy, 4000, 1000, 7).unwrap();
        // spawns are sampled uniformly; per-spawn values are close, so the MC error is small
        assert!((eval.discounted_return - exact).abs() < 0.02 * exact.abs());
    }

    #[test]
    fn single_trajectory_respects_horizon() {
        let mdp = grid();
        let expert = train_expert(&mdp, 0.01, 1e-10).unwrap();
        let demos = collect_demonstrations(&mdp, &expert, 1, 5, false, 0).unwrap();
        assert!(demos.records.len() <= 5);
    }

    #[test]
    fn observation_view_has_no_actions() {
        let mdp = grid();
        let expert = train_expert(&mdp, 0.01, 1e-10).unwrap();
        let demos = collect_demonstrations(&mdp, &expert, 2, 28, true, 0).unwrap();
        let mut buf = Vec::new();
        demos.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
            assert_eq!(keys.len(), 3);
            assert!(v.get("a").is_none());
        }
    }

    #[test]
    fn demonstrations_match_expert_distribution() {
        // undiscounted-by-time visitation would differ; compare with the discounted
        // distribution by weighting each step with gamma^t (1 - gamma) and the absorbing tail
        let mdp = grid();
        let expert = train_expert(&mdp, 0.01, 1e-10).unwrap();
        let d = occupancy_to_distribution(&occupancy_measure(&mdp, &expert).unwrap()).unwrap();
        let gamma = mdp.gamma();
        let mut empirical = Table::zeros(49, 4);
        let mut rng = substream(5, 1);
        let n = 1000;
        for _ in 0..n {
            let traj = rollout_with_rng(&mdp, &expert, 10_000, &mut rng);
            let mut w = 1.0 - gamma;
            for t in &traj {
                empirical[(t.s, t.a)] += w / n as f64;
                w *= gamma;
            }
            let last = traj.last().unwrap().s_next;
            // the absorbing tail spreads mass w / (1 - gamma) uniformly over actions under the expert
            let tail = w / (1.0 - gamma);
            for a in 0..4 {
                empirical[(last, a)] += tail * expert.prob(last, a) / n as f64;
            }
        }
        let tv = 0.5 * d.values.as_slice().iter().zip(empirical.as_slice()).map(|(p, q)| (p - q).abs()).sum::<f64>();
        assert!(tv < 0.05, "tv = {tv}");
    }

    #[test]
    fn zero_steps_produce_no_metrics() {
        let cfg = ExperimentConfig { total_steps: 0, ..Default::default() };
        let out = train(&cfg).unwrap();
        assert!(out.metrics.is_empty());
        assert!(out.replay.is_empty());
        assert_eq!(out.agent.critic, CriticState::zeros(49, 4));
    }

    #[test]
    fn lfo_requires_lsiq() {
        let mut cfg = ExperimentConfig { lfo: true, ..Default::default() };
        cfg.agent.algorithm = Algorithm::Iq;
        assert!(matches!(train(&cfg), Err(Error::Configuration(_))));
    }

    #[test]
    fn metrics_csv_is_deterministic() {
        let cfg = ExperimentConfig { total_steps: 600, eval_every: 200, eval_episodes: 8, ..Default::default() };
        let csv = |c: &ExperimentConfig| {
            let mut buf = Vec::new();
            write_metrics_csv(&train(c).unwrap().metrics, &mut buf).unwrap();
            buf
        };
        let a = csv(&cfg);
        assert_eq!(a, csv(&cfg));
        let text = String::from_utf8(a).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), METRICS_HEADER);
        assert_eq!(lines.count(), 3);
        assert!(text.lines().nth(1).unwrap().ends_with(','), "idm_accuracy empty without lfo");
    }

    #[test]
    fn replay_never_holds_expert_records() {
        let cfg = ExperimentConfig { total_steps: 300, eval_every: 300, eval_episodes: 4, lfo: true, ..Default::default() };
        let out = train(&cfg).unwrap();
        assert_eq!(out.replay.len(), 300);
        assert_eq!(out.idm.as_ref().unwrap().total_observed(), 300);
    }
}
