//! Exact transition-occupancy measures and distances between them.
//!
//! The occupancy of policy pi under dynamics T with initial distribution mu0
//! is rho(s,a,s') = (1-gamma) sum_t gamma^t P[s_t=s, a_t=a, s_{t+1}=s'].
//! Its state-action marginal d solves the flow equation
//!
//!   d(s,a) = (1-gamma) mu0(s) pi(a|s) + gamma sum_{s~,a~} d(s~,a~) T(s|s~,a~) pi(a|s),
//!
//! a nonsingular linear system for gamma < 1, solved here by dense LU. The
//! Monte Carlo estimator samples the same construction directly (geometric
//! depth, one transition per draw) and serves as the independent oracle.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{cumsum_rows, sample_from_cumrow, StochasticPolicy, TabularMDP};

/// How tight the exact linear solve must be, checked on the residual.
const SOLVE_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ExactLinearSolve,
    MonteCarlo,
    /// Normalized counts from a finite dataset.
    Empirical,
}

#[derive(Debug, Clone)]
pub struct OccupancyMeasure {
    /// rho(s,a,s'), indexed `[s, a, s']`; sums to 1.
    pub rho: Array3<f64>,
    pub provenance: Provenance,
}

impl OccupancyMeasure {
    pub fn mass(&self) -> f64 {
        self.rho.sum()
    }

    pub fn state_action_marginal(&self) -> Array2<f64> {
        let (n_s, n_a, n_sp) = self.rho.dim();
        let mut d = Array2::zeros((n_s, n_a));
        for s in 0..n_s {
            for a in 0..n_a {
                let mut acc = 0.0;
                for sp in 0..n_sp {
                    acc += self.rho[[s, a, sp]];
                }
                d[[s, a]] = acc;
            }
        }
        d
    }

    pub fn state_marginal(&self) -> Array1<f64> {
        let d = self.state_action_marginal();
        let mut out = Array1::zeros(d.nrows());
        for s in 0..d.nrows() {
            out[s] = d.row(s).sum();
        }
        out
    }

    /// Expectation of a transition-indexed table under rho.
    pub fn expect(&self, table: &Array3<f64>) -> f64 {
        self.rho
            .iter()
            .zip(table.iter())
            .map(|(&w, &x)| w * x)
            .sum()
    }
}

/// Exact occupancy by dense LU solve of the flow equation.
pub fn transition_occupancy(mdp: &TabularMDP, policy: &StochasticPolicy) -> Result<OccupancyMeasure> {
    let n_s = mdp.n_states;
    let n_a = mdp.n_actions;
    let n = n_s * n_a;
    let gamma = mdp.discount;
    let idx = |s: usize, a: usize| s * n_a + a;

    // System (I - gamma * M) d = (1-gamma) b with
    // M[(s',a'), (s,a)] = T(s'|s,a) pi(a'|s').
    let mut m = DMatrix::<f64>::zeros(n, n);
    for s in 0..n_s {
        for a in 0..n_a {
            for sp in 0..n_s {
                let t = mdp.transition[[s, a, sp]];
                if t == 0.0 {
                    continue;
                }
                for ap in 0..n_a {
                    m[(idx(sp, ap), idx(s, a))] += t * policy.probs[[sp, ap]];
                }
            }
        }
    }
    let mut lhs = DMatrix::<f64>::identity(n, n);
    lhs -= m.scale(gamma);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n_s {
        for a in 0..n_a {
            b[idx(s, a)] = (1.0 - gamma) * mdp.initial_dist[s] * policy.probs[[s, a]];
        }
    }
    let d = lhs
        .clone()
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("occupancy LU solve failed".into()))?;
    let residual = (&lhs * &d - &b).amax();
    if residual > SOLVE_RESIDUAL_TOL {
        return Err(Error::Numerical(format!(
            "occupancy solve residual {residual:.3e} exceeds {SOLVE_RESIDUAL_TOL:.1e}"
        )));
    }

    let mut rho = Array3::zeros((n_s, n_a, n_s));
    for s in 0..n_s {
        for a in 0..n_a {
            // LU roundoff can leave tiny negative mass; clamp it, but refuse
            // anything beyond noise scale.
            let mut w = d[idx(s, a)];
            if w < 0.0 {
                if w < -1e-9 {
                    return Err(Error::Numerical(format!(
                        "occupancy weight d({s},{a}) = {w:.3e} is negative"
                    )));
                }
                w = 0.0;
            }
            for sp in 0..n_s {
                rho[[s, a, sp]] = w * mdp.transition[[s, a, sp]];
            }
        }
    }
    Ok(OccupancyMeasure {
        rho,
        provenance: Provenance::ExactLinearSolve,
    })
}

/// Max-norm residual of the flow equation for the state-action marginal of
/// `occ` under (mdp, policy). Zero (to roundoff) for exact occupancies.
pub fn flow_residual(mdp: &TabularMDP, policy: &StochasticPolicy, occ: &OccupancyMeasure) -> f64 {
    let d = occ.state_action_marginal();
    let gamma = mdp.discount;
    let n_s = mdp.n_states;
    let n_a = mdp.n_actions;
    // Inflow to each state: sum_{s~,a~} d(s~,a~) T(s|s~,a~).
    let mut inflow: Array1<f64> = Array1::zeros(n_s);
    for s in 0..n_s {
        for a in 0..n_a {
            let w = d[[s, a]];
            if w == 0.0 {
                continue;
            }
            for sp in 0..n_s {
                inflow[sp] += w * mdp.transition[[s, a, sp]];
            }
        }
    }
    let mut worst = 0.0_f64;
    for s in 0..n_s {
        for a in 0..n_a {
            let rhs = (1.0 - gamma) * mdp.initial_dist[s] * policy.probs[[s, a]]
                + gamma * inflow[s] * policy.probs[[s, a]];
            worst = worst.max((d[[s, a]] - rhs).abs());
        }
    }
    worst
}

/// Monte Carlo occupancy: each sample draws a depth t ~ Geometric(1-gamma)
/// (clamped at `horizon`, which must satisfy gamma^horizon < 1e-6), rolls the
/// chain t steps, and deposits mass 1/n on the transition at depth t.
pub fn monte_carlo_occupancy(
    mdp: &TabularMDP,
    policy: &StochasticPolicy,
    n_samples: usize,
    horizon: usize,
    seed: u64,
) -> Result<OccupancyMeasure> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be >= 1".into()));
    }
    if mdp.discount.powi(horizon as i32) >= 1e-6 {
        return Err(Error::InvalidInput(format!(
            "horizon {horizon} too short: gamma^horizon = {:.3e} >= 1e-6",
            mdp.discount.powi(horizon as i32)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_cum = cumsum_rows(&mdp.transition);
    let pi_cum = policy.cumsum();
    let mut mu_cum = vec![0.0; mdp.n_states];
    let mut acc = 0.0;
    for s in 0..mdp.n_states {
        acc += mdp.initial_dist[s];
        mu_cum[s] = acc;
    }
    let ln_gamma = mdp.discount.ln();

    let n_s = mdp.n_states;
    let n_a = mdp.n_actions;
    let mut rho = Array3::zeros((n_s, n_a, n_s));
    let w = 1.0 / n_samples as f64;
    for _ in 0..n_samples {
        let u: f64 = rng.random();
        let depth = ((1.0 - u).ln() / ln_gamma).floor() as usize;
        let depth = depth.min(horizon);
        let mut s = sample_from_cumrow(&mu_cum, rng.random());
        for _ in 0..depth {
            let a = sample_from_cumrow(pi_cum.row(s).as_slice().unwrap(), rng.random());
            s = sample_from_cumrow(
                t_cum
                    .index_axis(ndarray::Axis(0), s)
                    .index_axis(ndarray::Axis(0), a)
                    .as_slice()
                    .unwrap(),
                rng.random(),
            );
        }
        let a = sample_from_cumrow(pi_cum.row(s).as_slice().unwrap(), rng.random());
        let sp = sample_from_cumrow(
            t_cum
                .index_axis(ndarray::Axis(0), s)
                .index_axis(ndarray::Axis(0), a)
                .as_slice()
                .unwrap(),
            rng.random(),
        );
        rho[[s, a, sp]] += w;
    }
    Ok(OccupancyMeasure {
        rho,
        provenance: Provenance::MonteCarlo,
    })
}

/// J(pi) = E_rho[r] under the exact occupancy. Note the (1-gamma)
/// normalization carried by rho: this equals (1-gamma) times the discounted
/// return; see [`discounted_return`].
pub fn policy_return(mdp: &TabularMDP, policy: &StochasticPolicy) -> Result<f64> {
    let occ = transition_occupancy(mdp, policy)?;
    Ok(occ.expect(&mdp.reward))
}

/// The un-normalized discounted return E[sum_t gamma^t r], i.e.
/// policy_return / (1-gamma).
pub fn discounted_return(mdp: &TabularMDP, policy: &StochasticPolicy) -> Result<f64> {
    Ok(policy_return(mdp, policy)? / (1.0 - mdp.discount))
}

/// KL divergence sum p log(p/q) in nats, with 0 log(0/q) = 0.
pub fn kl_divergence(p: &OccupancyMeasure, q: &OccupancyMeasure) -> Result<f64> {
    if p.rho.dim() != q.rho.dim() {
        return Err(Error::InvalidInput("KL shapes differ".into()));
    }
    let mut acc = 0.0;
    let (n_s, n_a, n_sp) = p.rho.dim();
    for s in 0..n_s {
        for a in 0..n_a {
            for sp in 0..n_sp {
                let pv = p.rho[[s, a, sp]];
                if pv == 0.0 {
                    continue;
                }
                let qv = q.rho[[s, a, sp]];
                if qv == 0.0 {
                    return Err(Error::SupportViolation {
                        index: (s, a, sp),
                        p: pv,
                    });
                }
                acc += pv * (pv / qv).ln();
            }
        }
    }
    Ok(acc)
}

/// Total variation distance: half the L1 distance, in [0,1].
pub fn total_variation(p: &OccupancyMeasure, q: &OccupancyMeasure) -> f64 {
    0.5 * p
        .rho
        .iter()
        .zip(q.rho.iter())
        .map(|(&a, &b)| (a - b).abs())
        .sum::<f64>()
}
