//! Tabular dynamics model learned from offline transitions: smoothed
//! maximum-likelihood kernel, learned reward table, bootstrap ensembles with
//! elite selection, and synthetic branch rollouts.

use ndarray::{Array1, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DataSource, Transition, TransitionDataset};
use crate::error::{Error, Result};
use crate::mdp::{cumsum_rows, sample_from_cumrow, StochasticPolicy, TabularMDP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnseenPolicy {
    /// Unvisited (s,a) rows predict uniformly over states.
    Uniform,
    /// Unvisited (s,a) rows predict staying in s.
    SelfLoop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    pub n_states: usize,
    pub n_actions: usize,
    pub counts: Array3<u64>,
    /// Smoothed kernel: (count + eps) / (row_count + |S| eps) on visited
    /// rows, `unseen_policy` elsewhere. Rows sum to 1.
    pub probs: Array3<f64>,
    /// Per-cell mean observed reward, 0 where the cell was never observed.
    pub reward_hat: Array3<f64>,
    pub smoothing: f64,
    pub unseen_policy: UnseenPolicy,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    n_states: usize,
    n_actions: usize,
    counts: Vec<u64>,
    reward_hat: Vec<f64>,
    smoothing: f64,
    unseen_policy: UnseenPolicy,
}

impl TabularModel {
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(&ModelJson {
            n_states: self.n_states,
            n_actions: self.n_actions,
            counts: self.counts.iter().copied().collect(),
            reward_hat: self.reward_hat.iter().copied().collect(),
            smoothing: self.smoothing,
            unseen_policy: self.unseen_policy,
        })
        .expect("model serialization cannot fail")
    }

    pub fn model_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_canonical_json().as_bytes());
        hex::encode(h.finalize())
    }

    pub fn row_count(&self, s: usize, a: usize) -> u64 {
        (0..self.n_states).map(|sp| self.counts[[s, a, sp]]).sum()
    }
}

pub fn fit_model(
    ds: &TransitionDataset,
    n_states: usize,
    n_actions: usize,
    smoothing: f64,
    unseen_policy: UnseenPolicy,
) -> Result<TabularModel> {
    if smoothing < 0.0 {
        return Err(Error::InvalidInput("smoothing must be >= 0".into()));
    }
    let mut counts = Array3::<u64>::zeros((n_states, n_actions, n_states));
    let mut reward_sum = Array3::<f64>::zeros((n_states, n_actions, n_states));
    for t in &ds.transitions {
        if t.s >= n_states || t.a >= n_actions || t.sp >= n_states {
            return Err(Error::InvalidInput(format!(
                "transition ({},{},{}) outside {}x{} table",
                t.s, t.a, t.sp, n_states, n_actions
            )));
        }
        counts[[t.s, t.a, t.sp]] += 1;
        reward_sum[[t.s, t.a, t.sp]] += t.r;
    }
    let mut probs = Array3::zeros((n_states, n_actions, n_states));
    let mut reward_hat = Array3::zeros((n_states, n_actions, n_states));
    for s in 0..n_states {
        for a in 0..n_actions {
            let row: u64 = (0..n_states).map(|sp| counts[[s, a, sp]]).sum();
            if row == 0 {
                match unseen_policy {
                    UnseenPolicy::Uniform => {
                        for sp in 0..n_states {
                            probs[[s, a, sp]] = 1.0 / n_states as f64;
                        }
                    }
                    UnseenPolicy::SelfLoop => probs[[s, a, s]] = 1.0,
                }
            } else {
                let denom = row as f64 + n_states as f64 * smoothing;
                for sp in 0..n_states {
                    probs[[s, a, sp]] = (counts[[s, a, sp]] as f64 + smoothing) / denom;
                }
            }
            for sp in 0..n_states {
                let c = counts[[s, a, sp]];
                if c > 0 {
                    reward_hat[[s, a, sp]] = reward_sum[[s, a, sp]] / c as f64;
                }
            }
        }
    }
    Ok(TabularModel {
        n_states,
        n_actions,
        counts,
        probs,
        reward_hat,
        smoothing,
        unseen_policy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardSource {
    /// Score the model against the environment's true reward table.
    TrueReward,
    /// Use the model's own learned reward table.
    LearnedReward,
}

/// Wrap the learned kernel as a full MDP so occupancies and returns under
/// the model are computable exactly.
pub fn model_as_mdp(
    model: &TabularModel,
    mu0: &Array1<f64>,
    gamma: f64,
    reward_source: RewardSource,
    true_reward: Option<&Array3<f64>>,
) -> Result<TabularMDP> {
    let reward = match reward_source {
        RewardSource::TrueReward => true_reward
            .ok_or_else(|| {
                Error::InvalidInput("reward_source=true-reward needs the true table".into())
            })?
            .clone(),
        RewardSource::LearnedReward => model.reward_hat.clone(),
    };
    let mdp = TabularMDP {
        n_states: model.n_states,
        n_actions: model.n_actions,
        transition: model.probs.clone(),
        reward,
        initial_dist: mu0.clone(),
        discount: gamma,
    };
    let report = mdp.validate();
    if !report.violations.is_empty() {
        return Err(Error::InvalidInput(format!(
            "model kernel invalid: {}",
            report.violations.join("; ")
        )));
    }
    Ok(mdp)
}

/// Branch rollouts: from each start state, walk `k` steps through the model
/// under `policy`. Rewards carried are the model's learned rewards.
pub fn rollout_synthetic(
    model: &TabularModel,
    policy: &StochasticPolicy,
    start_states: &[usize],
    k: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    if k == 0 {
        return Err(Error::InvalidInput("rollout length k must be >= 1".into()));
    }
    for &s in start_states {
        if s >= model.n_states {
            return Err(Error::InvalidInput(format!("start state {s} out of range")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_cum = cumsum_rows(&model.probs);
    let pi_cum = policy.cumsum();
    let mut transitions = Vec::with_capacity(start_states.len() * k);
    for &start in start_states {
        let mut s = start;
        for _ in 0..k {
            let a = sample_from_cumrow(pi_cum.row(s).as_slice().unwrap(), rng.random());
            let sp = sample_from_cumrow(
                t_cum
                    .index_axis(ndarray::Axis(0), s)
                    .index_axis(ndarray::Axis(0), a)
                    .as_slice()
                    .unwrap(),
                rng.random(),
            );
            transitions.push(Transition {
                s,
                a,
                r: model.reward_hat[[s, a, sp]],
                sp,
            });
            s = sp;
        }
    }
    Ok(TransitionDataset {
        transitions,
        source: DataSource::Synthetic,
        env_hash: model.model_hash(),
        horizon: Some(k),
    })
}

#[derive(Debug, Clone)]
pub struct ModelEnsemble {
    pub members: Vec<TabularModel>,
    pub n: usize,
    pub n_elite: usize,
    /// Member indices ranked by held-out log-likelihood, best first.
    pub elite_ids: Vec<usize>,
}

impl ModelEnsemble {
    /// Average of the elite members' kernels and reward tables.
    pub fn mean_elite_model(&self) -> TabularModel {
        let proto = &self.members[self.elite_ids[0]];
        let mut probs = Array3::zeros(proto.probs.raw_dim());
        let mut reward_hat = Array3::zeros(proto.reward_hat.raw_dim());
        let mut counts = Array3::<u64>::zeros(proto.counts.raw_dim());
        let w = 1.0 / self.elite_ids.len() as f64;
        for &id in &self.elite_ids {
            let m = &self.members[id];
            probs = probs + &m.probs * w;
            reward_hat = reward_hat + &m.reward_hat * w;
            counts = counts + &m.counts;
        }
        TabularModel {
            n_states: proto.n_states,
            n_actions: proto.n_actions,
            counts,
            probs,
            reward_hat,
            smoothing: proto.smoothing,
            unseen_policy: proto.unseen_policy,
        }
    }
}

/// Fit `n` bootstrap members on the training split and rank them by
/// log-likelihood on the held-out split.
#[allow(clippy::too_many_arguments)]
pub fn ensemble_fit(
    ds: &TransitionDataset,
    n_states: usize,
    n_actions: usize,
    smoothing: f64,
    unseen_policy: UnseenPolicy,
    n: usize,
    n_elite: usize,
    holdout_fraction: f64,
    seed: u64,
) -> Result<ModelEnsemble> {
    if n_elite == 0 || n_elite > n {
        return Err(Error::InvalidInput(format!(
            "need 1 <= n_elite <= n, got n_elite={n_elite}, n={n}"
        )));
    }
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::InvalidInput("holdout_fraction must be in [0,1)".into()));
    }
    if ds.is_empty() {
        return Err(Error::EmptySource("ensemble training data"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    // Fisher-Yates so the holdout split is seed-deterministic.
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let n_holdout = (ds.len() as f64 * holdout_fraction).round() as usize;
    let (holdout_idx, train_idx) = order.split_at(n_holdout);
    let train: Vec<Transition> = train_idx.iter().map(|&i| ds.transitions[i]).collect();
    let holdout: Vec<Transition> = holdout_idx.iter().map(|&i| ds.transitions[i]).collect();
    if train.is_empty() {
        return Err(Error::EmptySource("ensemble training split"));
    }

    let mut members = Vec::with_capacity(n);
    for _ in 0..n {
        let resample: Vec<Transition> = (0..train.len())
            .map(|_| train[rng.random_range(0..train.len())])
            .collect();
        let boot = TransitionDataset {
            transitions: resample,
            source: ds.source,
            env_hash: ds.env_hash.clone(),
            horizon: None,
        };
        members.push(fit_model(&boot, n_states, n_actions, smoothing, unseen_policy)?);
    }

    let mut scored: Vec<(usize, f64)> = members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let ll: f64 = holdout
                .iter()
                .map(|t| m.probs[[t.s, t.a, t.sp]].max(1e-300).ln())
                .sum();
            (i, ll)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let elite_ids: Vec<usize> = scored.iter().take(n_elite).map(|&(i, _)| i).collect();
    Ok(ModelEnsemble {
        members,
        n,
        n_elite,
        elite_ids,
    })
}

/// Max pairwise total variation between elite members' predicted rows at
/// (s,a); 0 when all elites agree, at most 1.
pub fn disagreement(ens: &ModelEnsemble, s: usize, a: usize) -> f64 {
    let mut worst = 0.0_f64;
    for (i, &m1) in ens.elite_ids.iter().enumerate() {
        for &m2 in ens.elite_ids.iter().skip(i + 1) {
            let (p, q) = (&ens.members[m1].probs, &ens.members[m2].probs);
            let mut tv = 0.0;
            for sp in 0..ens.members[m1].n_states {
                tv += (p[[s, a, sp]] - q[[s, a, sp]]).abs();
            }
            worst = worst.max(0.5 * tv);
        }
    }
    worst
}
