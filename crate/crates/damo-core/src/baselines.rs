//! Comparison policies: behavior cloning, unpenalized model planning, and
//! uncertainty-penalized planning on a learned ensemble.

use ndarray::{Array1, Array2};

use crate::data::TransitionDataset;
use crate::error::Result;
use crate::mdp::{expected_reward, QFunction, StochasticPolicy, TabularMDP};
use crate::model::{disagreement, ModelEnsemble};

/// Empirical conditional pi(a|s) with additive smoothing; states never
/// visited fall back to uniform.
pub fn behavior_cloning(
    d_r: &TransitionDataset,
    n_states: usize,
    n_actions: usize,
    smoothing: f64,
) -> StochasticPolicy {
    let mut counts = Array2::<f64>::zeros((n_states, n_actions));
    for t in &d_r.transitions {
        counts[[t.s, t.a]] += 1.0;
    }
    let mut probs = Array2::zeros((n_states, n_actions));
    for s in 0..n_states {
        let row_total: f64 = (0..n_actions).map(|a| counts[[s, a]]).sum();
        let denom = row_total + smoothing * n_actions as f64;
        for a in 0..n_actions {
            probs[[s, a]] = if denom > 0.0 {
                (counts[[s, a]] + smoothing) / denom
            } else {
                1.0 / n_actions as f64
            };
        }
    }
    StochasticPolicy::from_probs(probs).expect("rows sum to 1 by construction")
}

/// Value iteration to max-norm Bellman residual <= tol. Returns the optimal
/// Q and the greedy policy with ties split evenly among argmax actions.
pub fn value_iteration(mdp: &TabularMDP, tol: f64) -> Result<(QFunction, StochasticPolicy)> {
    let (n_s, n_a) = (mdp.n_states, mdp.n_actions);
    let rbar = expected_reward(mdp, &mdp.reward);
    let gamma = mdp.discount;
    let mut q = Array2::<f64>::zeros((n_s, n_a));
    let backup = |q: &Array2<f64>| {
        let v: Array1<f64> = (0..n_s)
            .map(|s| (0..n_a).map(|a| q[[s, a]]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut out = Array2::zeros((n_s, n_a));
        for s in 0..n_s {
            for a in 0..n_a {
                let mut acc = rbar[[s, a]];
                for sp in 0..n_s {
                    acc += gamma * mdp.transition[[s, a, sp]] * v[sp];
                }
                out[[s, a]] = acc;
            }
        }
        out
    };
    for _ in 0..2_000_000 {
        let next = backup(&q);
        let step = next
            .iter()
            .zip(q.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        q = next;
        if step * gamma / (1.0 - gamma) <= tol {
            break;
        }
    }
    let q = QFunction { q };
    Ok((q.clone(), greedy_policy(&q, 1e-9)))
}

/// Near-deterministic greedy policy: mass 1-eps split over argmax actions
/// (tie tolerance 1e-12), eps spread over the rest.
pub fn greedy_policy(q: &QFunction, eps: f64) -> StochasticPolicy {
    let (n_s, n_a) = q.q.dim();
    let mut probs = Array2::zeros((n_s, n_a));
    for s in 0..n_s {
        let best = (0..n_a)
            .map(|a| q.q[[s, a]])
            .fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<usize> = (0..n_a)
            .filter(|&a| q.q[[s, a]] >= best - 1e-12)
            .collect();
        let losers = n_a - winners.len();
        for a in 0..n_a {
            probs[[s, a]] = if winners.contains(&a) {
                if losers == 0 {
                    1.0 / winners.len() as f64
                } else {
                    (1.0 - eps) / winners.len() as f64
                }
            } else {
                eps / losers as f64
            };
        }
    }
    StochasticPolicy::from_probs(probs).expect("rows sum to 1 by construction")
}

/// Plan greedily on the model with an optional per-(s,a) reward penalty.
/// Zero penalty is the naive model-based baseline; an uncertainty table
/// scaled by lambda gives the MOPO-style one.
pub fn plan_on_model(
    model_mdp: &TabularMDP,
    penalty: Option<&Array2<f64>>,
) -> Result<StochasticPolicy> {
    let mut m = model_mdp.clone();
    if let Some(pen) = penalty {
        let (n_s, n_a, n_sp) = m.reward.dim();
        for s in 0..n_s {
            for a in 0..n_a {
                for sp in 0..n_sp {
                    m.reward[[s, a, sp]] -= pen[[s, a]];
                }
            }
        }
    }
    let (_, policy) = value_iteration(&m, 1e-10)?;
    Ok(policy)
}

/// Max pairwise total variation between elite member rows, per (s,a).
pub fn disagreement_table(ens: &ModelEnsemble) -> Array2<f64> {
    let (n_s, n_a, _) = ens.members[0].probs.dim();
    let mut u = Array2::zeros((n_s, n_a));
    for s in 0..n_s {
        for a in 0..n_a {
            u[[s, a]] = disagreement(ens, s, a);
        }
    }
    u
}

/// Uncertainty-penalized planner: reward - lambda * u(s,a) on the mean
/// elite model. lambda = 0 coincides with the naive planner exactly.
pub fn mopo_style(
    model_mdp: &TabularMDP,
    ens: &ModelEnsemble,
    lambda_u: f64,
) -> Result<StochasticPolicy> {
    let u = disagreement_table(ens);
    let pen = u.mapv(|x| lambda_u * x);
    plan_on_model(model_mdp, Some(&pen))
}
