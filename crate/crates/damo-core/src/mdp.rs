//! Finite MDPs, stochastic policies, and the policy Bellman operator.
//!
//! An environment is the six-element tuple (S, A, T, r, mu0, gamma) with
//! T(s'|s,a) and r(s,a,s') stored as dense `[s, a, s']` tables. Everything
//! downstream (occupancy measures, divergences, the maximin solver) treats
//! these values as immutable ground truth.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Row sums and distributions must match 1 this tightly to count as stochastic.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct TabularMDP {
    pub n_states: usize,
    pub n_actions: usize,
    /// T(s'|s,a), indexed `[s, a, s']`; each (s,a) row sums to 1.
    pub transition: Array3<f64>,
    /// r(s,a,s'), indexed `[s, a, s']`.
    pub reward: Array3<f64>,
    /// mu0, the initial state distribution.
    pub initial_dist: Array1<f64>,
    /// gamma, strictly inside (0,1).
    pub discount: f64,
}

/// Validation outcome: hard violations plus soft warnings.
///
/// Negative or zero rewards are only warned about: the analysis assumes
/// r > 0 but every numerical check here holds for any bounded reward, and
/// the built-in shaped-reward environments use zeros off the reward path.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// JSON mirror of [`TabularMDP`]. Field order is fixed so the serialized
/// document, and therefore [`TabularMDP::env_hash`], is deterministic.
#[derive(Serialize, Deserialize)]
struct MdpJson {
    n_states: usize,
    n_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<Vec<f64>>>,
    initial_dist: Vec<f64>,
    discount: f64,
}

fn table_to_nested(t: &Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    let (d0, d1, d2) = t.dim();
    (0..d0)
        .map(|i| {
            (0..d1)
                .map(|j| (0..d2).map(|k| t[[i, j, k]]).collect())
                .collect()
        })
        .collect()
}

fn nested_to_table(v: &[Vec<Vec<f64>>], d0: usize, d1: usize, d2: usize) -> Result<Array3<f64>> {
    let mut out = Array3::zeros((d0, d1, d2));
    if v.len() != d0 {
        return Err(Error::InvalidInput(format!(
            "table has {} outer rows, expected {d0}",
            v.len()
        )));
    }
    for (i, plane) in v.iter().enumerate() {
        if plane.len() != d1 {
            return Err(Error::InvalidInput(format!(
                "table[{i}] has {} rows, expected {d1}",
                plane.len()
            )));
        }
        for (j, row) in plane.iter().enumerate() {
            if row.len() != d2 {
                return Err(Error::InvalidInput(format!(
                    "table[{i}][{j}] has {} entries, expected {d2}",
                    row.len()
                )));
            }
            for (k, &x) in row.iter().enumerate() {
                out[[i, j, k]] = x;
            }
        }
    }
    Ok(out)
}

impl TabularMDP {
    /// Checks every structural invariant; never panics or errors.
    pub fn validate(&self) -> ValidationReport {
        let mut rep = ValidationReport::default();
        let (s_dim, a_dim, sp_dim) = self.transition.dim();
        if (s_dim, a_dim, sp_dim) != (self.n_states, self.n_actions, self.n_states) {
            rep.violations.push(format!(
                "transition shape {:?} does not match (n_states, n_actions, n_states)",
                self.transition.dim()
            ));
            return rep;
        }
        if self.reward.dim() != self.transition.dim() {
            rep.violations.push(format!(
                "reward shape {:?} does not match transition shape",
                self.reward.dim()
            ));
            return rep;
        }
        if self.initial_dist.len() != self.n_states {
            rep.violations.push(format!(
                "initial_dist has {} entries, expected {}",
                self.initial_dist.len(),
                self.n_states
            ));
            return rep;
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let mut sum = 0.0;
                for sp in 0..self.n_states {
                    let p = self.transition[[s, a, sp]];
                    if p < 0.0 {
                        rep.violations
                            .push(format!("T({sp}|{s},{a}) = {p} is negative"));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    rep.violations
                        .push(format!("transition row (s={s},a={a}) sums to {sum}"));
                }
            }
        }
        let mu_sum: f64 = self.initial_dist.sum();
        if (mu_sum - 1.0).abs() > STOCHASTIC_TOL {
            rep.violations
                .push(format!("initial_dist sums to {mu_sum}"));
        }
        for (s, &p) in self.initial_dist.iter().enumerate() {
            if p < 0.0 {
                rep.violations.push(format!("initial_dist[{s}] = {p} is negative"));
            }
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            rep.violations
                .push(format!("discount {} outside (0,1)", self.discount));
        }
        let mut nonpositive = 0usize;
        for &r in self.reward.iter() {
            if !r.is_finite() {
                rep.violations.push("reward table contains a non-finite entry".into());
                break;
            }
            if r <= 0.0 {
                nonpositive += 1;
            }
        }
        if nonpositive > 0 {
            rep.warnings.push(format!(
                "{nonpositive} reward entries are <= 0; the r > 0 assumption behind the lower-bound analysis does not hold verbatim"
            ));
        }
        rep
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0_f64, |m, &r| m.max(r.abs()))
    }

    /// Canonical JSON document with fixed field order.
    pub fn to_canonical_json(&self) -> String {
        let doc = MdpJson {
            n_states: self.n_states,
            n_actions: self.n_actions,
            transition: table_to_nested(&self.transition),
            reward: table_to_nested(&self.reward),
            initial_dist: self.initial_dist.to_vec(),
            discount: self.discount,
        };
        serde_json::to_string(&doc).expect("MDP serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpJson = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("bad MDP JSON: {e}")))?;
        let mdp = TabularMDP {
            n_states: doc.n_states,
            n_actions: doc.n_actions,
            transition: nested_to_table(&doc.transition, doc.n_states, doc.n_actions, doc.n_states)?,
            reward: nested_to_table(&doc.reward, doc.n_states, doc.n_actions, doc.n_states)?,
            initial_dist: Array1::from_vec(doc.initial_dist),
            discount: doc.discount,
        };
        if mdp.initial_dist.len() != mdp.n_states {
            return Err(Error::InvalidInput(format!(
                "initial_dist has {} entries, expected {}",
                mdp.initial_dist.len(),
                mdp.n_states
            )));
        }
        Ok(mdp)
    }

    /// Hex SHA-256 of the canonical JSON; identifies the environment in
    /// dataset headers and reports.
    pub fn env_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_canonical_json().as_bytes());
        hex::encode(h.finalize())
    }

    /// Per-(s,a) cumulative rows for fast categorical sampling of s'.
    pub fn transition_cumsum(&self) -> Array3<f64> {
        cumsum_rows(&self.transition)
    }
}

/// Cumulative sums along the last axis; shared by every categorical sampler.
pub(crate) fn cumsum_rows(t: &Array3<f64>) -> Array3<f64> {
    let (d0, d1, d2) = t.dim();
    let mut out = Array3::zeros((d0, d1, d2));
    for i in 0..d0 {
        for j in 0..d1 {
            let mut acc = 0.0;
            for k in 0..d2 {
                acc += t[[i, j, k]];
                out[[i, j, k]] = acc;
            }
        }
    }
    out
}

/// Inverse-CDF draw from one cumulative row. The final entry is treated as
/// +inf so roundoff in the row sum cannot push the draw out of range.
pub(crate) fn sample_from_cumrow(cum: &[f64], u: f64) -> usize {
    for (i, &c) in cum.iter().enumerate() {
        if u < c {
            return i;
        }
    }
    cum.len() - 1
}

#[derive(Debug, Clone)]
pub struct StochasticPolicy {
    /// pi(a|s), indexed `[s, a]`; rows sum to 1.
    pub probs: Array2<f64>,
    /// Optional softmax parameterization; when present, probs is its row softmax.
    pub logits: Option<Array2<f64>>,
}

impl StochasticPolicy {
    pub fn from_probs(probs: Array2<f64>) -> Result<Self> {
        for (s, row) in probs.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidInput(format!(
                    "policy row {s} sums to {sum}"
                )));
            }
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::InvalidInput(format!("policy row {s} has a negative entry")));
            }
        }
        Ok(StochasticPolicy { probs, logits: None })
    }

    pub fn from_logits(logits: Array2<f64>) -> Self {
        let probs = softmax_rows(&logits);
        StochasticPolicy {
            probs,
            logits: Some(logits),
        }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        StochasticPolicy {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
            logits: Some(Array2::zeros((n_states, n_actions))),
        }
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// Greedy action at `s`; lowest index wins ties (reporting only).
    pub fn argmax_action(&self, s: usize) -> usize {
        let row = self.probs.row(s);
        let mut best = 0;
        for a in 1..row.len() {
            if row[a] > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn cumsum(&self) -> Array2<f64> {
        let (d0, d1) = self.probs.dim();
        let mut out = Array2::zeros((d0, d1));
        for s in 0..d0 {
            let mut acc = 0.0;
            for a in 0..d1 {
                acc += self.probs[[s, a]];
                out[[s, a]] = acc;
            }
        }
        out
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let (d0, d1) = logits.dim();
    let mut out = Array2::zeros((d0, d1));
    for s in 0..d0 {
        let row = logits.row(s);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for a in 0..d1 {
            let e = (row[a] - m).exp();
            out[[s, a]] = e;
            z += e;
        }
        for a in 0..d1 {
            out[[s, a]] /= z;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct QFunction {
    /// Q(s,a), indexed `[s, a]`.
    pub q: Array2<f64>,
}

impl QFunction {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QFunction {
            q: Array2::zeros((n_states, n_actions)),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.q.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
    }
}

/// State value V(s) = sum_a pi(a|s) Q(s,a).
pub fn state_values(policy: &StochasticPolicy, q: &QFunction) -> Array1<f64> {
    let (n_s, n_a) = q.q.dim();
    let mut v = Array1::zeros(n_s);
    for s in 0..n_s {
        let mut acc = 0.0;
        for a in 0..n_a {
            acc += policy.probs[[s, a]] * q.q[[s, a]];
        }
        v[s] = acc;
    }
    v
}

/// Policy Bellman backup (T^pi Q)(s,a) = gamma * sum_{s'} T(s'|s,a) V(s'),
/// with V the policy-averaged value of `q`. Linear and gamma-contractive.
pub fn bellman_backup(dynamics: &TabularMDP, policy: &StochasticPolicy, q: &QFunction) -> QFunction {
    let v = state_values(policy, q);
    let (n_s, n_a) = q.q.dim();
    let mut out = Array2::zeros((n_s, n_a));
    for s in 0..n_s {
        for a in 0..n_a {
            let mut acc = 0.0;
            for sp in 0..n_s {
                acc += dynamics.transition[[s, a, sp]] * v[sp];
            }
            out[[s, a]] = dynamics.discount * acc;
        }
    }
    QFunction { q: out }
}

/// Expected immediate reward rbar(s,a) = sum_{s'} T(s'|s,a) r(s,a,s') for an
/// arbitrary transition-indexed reward table.
pub fn expected_reward(dynamics: &TabularMDP, reward: &Array3<f64>) -> Array2<f64> {
    let (n_s, n_a, n_sp) = dynamics.transition.dim();
    let mut out = Array2::zeros((n_s, n_a));
    for s in 0..n_s {
        for a in 0..n_a {
            let mut acc = 0.0;
            for sp in 0..n_sp {
                acc += dynamics.transition[[s, a, sp]] * reward[[s, a, sp]];
            }
            out[[s, a]] = acc;
        }
    }
    out
}

/// Exact policy evaluation of `reward` under `dynamics`: the unique fixed
/// point Q = rbar + T^pi Q, found by contraction iteration to `tol` in max
/// norm of the Bellman residual.
pub fn policy_evaluation_q(
    dynamics: &TabularMDP,
    policy: &StochasticPolicy,
    reward: &Array3<f64>,
    tol: f64,
) -> Result<QFunction> {
    let rbar = expected_reward(dynamics, reward);
    let mut q = QFunction::zeros(dynamics.n_states, dynamics.n_actions);
    let max_iter = 2_000_000usize;
    for _ in 0..max_iter {
        let backed = bellman_backup(dynamics, policy, &q);
        let mut next = backed.q;
        next += &rbar;
        let step = max_abs_diff(&next, &q.q);
        q.q = next;
        // Contraction bound: |Q_{k+1} - Q*| <= gamma * step / (1 - gamma).
        if step * dynamics.discount / (1.0 - dynamics.discount) <= tol {
            return Ok(q);
        }
    }
    Err(Error::Numerical(format!(
        "policy evaluation did not reach tol {tol}"
    )))
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |m, (&x, &y)| m.max((x - y).abs()))
}
