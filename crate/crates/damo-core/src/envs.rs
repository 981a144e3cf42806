//! Built-in environment catalog. Each builder returns a validated MDP plus
//! the behavior policy that generates offline data for it.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{StochasticPolicy, TabularMDP};

#[derive(Debug, Clone)]
pub struct BuiltEnv {
    pub name: String,
    pub description: String,
    pub mdp: TabularMDP,
    pub behavior: StochasticPolicy,
    /// Episode settings that give the intended data coverage.
    pub default_episodes: usize,
    pub default_horizon: usize,
}

pub const ENV_NAMES: [&str; 3] = ["three-road", "shift-gridworld", "random-mdp"];

pub fn build_env(name: &str, seed: u64) -> Result<BuiltEnv> {
    match name {
        "three-road" => Ok(three_road(5.0)),
        "shift-gridworld" => Ok(shift_gridworld(0.15)),
        "random-mdp" => Ok(random_mdp_env(8, 3, 0.9, seed)),
        other => Err(Error::UnknownEnv(other.to_string())),
    }
}

/// Fork with three two-cell roads. The top road pays 1 per step and the
/// bottom 0.2; the middle road pays a one-time bait reward on entry and
/// nothing after. The behavior policy favors the top road (0.9), never
/// takes the middle, and lightly covers the bottom (0.1), so the middle
/// road is absent from offline data: a planner on the fitted model sees the
/// bait plus a uniform unseen-row continuation and overvalues it.
///
/// States: 0 start; 1,2 top road; 3,4 middle; 5,6 bottom. Road tails are
/// absorbing. Actions at the start pick a road; on roads all actions move
/// forward.
pub fn three_road(bait_reward: f64) -> BuiltEnv {
    let n_s = 7;
    let n_a = 3;
    let mut transition = Array3::zeros((n_s, n_a, n_s));
    let mut reward = Array3::zeros((n_s, n_a, n_s));
    let roads = [(1usize, 2usize, 1.0), (3, 4, 0.0), (5, 6, 0.2)];
    for (a, &(head, tail, pay)) in roads.iter().enumerate() {
        transition[[0, a, head]] = 1.0;
        for s_prime in 0..n_s {
            reward[[0, a, s_prime]] = if a == 1 { bait_reward } else { pay };
        }
        for b in 0..n_a {
            transition[[head, b, tail]] = 1.0;
            transition[[tail, b, tail]] = 1.0;
            for s_prime in 0..n_s {
                reward[[head, b, s_prime]] = pay;
                reward[[tail, b, s_prime]] = pay;
            }
        }
    }
    let mut mu0 = Array1::zeros(n_s);
    mu0[0] = 1.0;
    let mdp = TabularMDP {
        n_states: n_s,
        n_actions: n_a,
        transition,
        reward,
        initial_dist: mu0,
        discount: 0.9,
    };
    let mut probs = Array2::from_elem((n_s, n_a), 1.0 / n_a as f64);
    probs[[0, 0]] = 0.9;
    probs[[0, 1]] = 0.0;
    probs[[0, 2]] = 0.1;
    BuiltEnv {
        name: "three-road".into(),
        description: "start state with three two-cell roads; behavior 0.9/0.0/0.1, \
                      middle road pays an uncovered one-time bait"
            .into(),
        mdp,
        behavior: StochasticPolicy::from_probs(probs).expect("rows sum to 1 by construction"),
        default_episodes: 200,
        default_horizon: 25,
    }
}

const GRID: usize = 5;

fn cell(row: usize, col: usize) -> usize {
    row * GRID + col
}

fn step_cell(row: usize, col: usize, action: usize) -> (usize, usize) {
    // 0 up, 1 down, 2 left, 3 right; walls bump back.
    match action {
        0 => (row.saturating_sub(1), col),
        1 => ((row + 1).min(GRID - 1), col),
        2 => (row, col.saturating_sub(1)),
        _ => (row, (col + 1).min(GRID - 1)),
    }
}

/// 5x5 grid, start top-left, absorbing goal bottom-right paying 1 per step.
/// Moves slip to a stay with the given probability. The behavior policy
/// walks the top row then the right column, so the grid interior is sparse
/// in offline data and the fitted model is unconstrained there.
pub fn shift_gridworld(slip: f64) -> BuiltEnv {
    let n_s = GRID * GRID;
    let n_a = 4;
    let goal = cell(GRID - 1, GRID - 1);
    let mut transition = Array3::zeros((n_s, n_a, n_s));
    let mut reward = Array3::zeros((n_s, n_a, n_s));
    for row in 0..GRID {
        for col in 0..GRID {
            let s = cell(row, col);
            for a in 0..n_a {
                if s == goal {
                    transition[[s, a, s]] = 1.0;
                    reward[[s, a, s]] = 1.0;
                    continue;
                }
                let (r2, c2) = step_cell(row, col, a);
                let target = cell(r2, c2);
                transition[[s, a, s]] += slip;
                transition[[s, a, target]] += 1.0 - slip;
                for sp in 0..n_s {
                    if sp == goal {
                        reward[[s, a, sp]] = 1.0;
                    }
                }
            }
        }
    }
    let mut mu0 = Array1::zeros(n_s);
    mu0[cell(0, 0)] = 1.0;
    let mdp = TabularMDP {
        n_states: n_s,
        n_actions: n_a,
        transition,
        reward,
        initial_dist: mu0,
        discount: 0.9,
    };
    // Corridor behavior: right along the top row, down the right column.
    // Off-corridor cells climb straight back to the top row, so leak
    // excursions stay one cell deep and the lower interior is never
    // visited. A planner on the fitted model sees uniform unseen rows
    // there, values the imagined teleports above the slow corridor, and
    // walks its real trajectory into uncovered states.
    let leak = 0.01;
    let mut probs = Array2::from_elem((n_s, n_a), leak);
    for col in 0..GRID {
        let main = if col == GRID - 1 { 1 } else { 3 };
        probs[[cell(0, col), main]] = 1.0 - 3.0 * leak;
    }
    for row in 1..GRID {
        for col in 0..GRID {
            let s = cell(row, col);
            let main = if col == GRID - 1 { 1 } else { 0 };
            probs[[s, main]] = 1.0 - 3.0 * leak;
        }
    }
    BuiltEnv {
        name: "shift-gridworld".into(),
        description: "5x5 slippery grid, goal bottom-right; behavior hugs the \
                      top-right corridor leaving the lower interior uncovered"
            .into(),
        mdp,
        behavior: StochasticPolicy::from_probs(probs).expect("rows sum to 1 by construction"),
        default_episodes: 120,
        default_horizon: 30,
    }
}

/// Dense random MDP with a random softmax behavior policy, fully seeded.
pub fn random_mdp_env(n_states: usize, n_actions: usize, discount: f64, seed: u64) -> BuiltEnv {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Array3::zeros((n_states, n_actions, n_states));
    let mut reward = Array3::zeros((n_states, n_actions, n_states));
    // Each row reaches at most three successors. Sparse rows keep the
    // occupancy concentrated enough for Monte-Carlo cross-checks to resolve
    // it at desk-scale sample counts, and look more like real dynamics than
    // a dense random kernel.
    let branch = n_states.min(3);
    for s in 0..n_states {
        for a in 0..n_actions {
            let mut targets: Vec<usize> = Vec::with_capacity(branch);
            while targets.len() < branch {
                let t = rng.random_range(0..n_states);
                if !targets.contains(&t) {
                    targets.push(t);
                }
            }
            let weights: Vec<f64> = (0..branch).map(|_| rng.random::<f64>() + 0.1).collect();
            let z: f64 = weights.iter().sum();
            for (i, &sp) in targets.iter().enumerate() {
                transition[[s, a, sp]] = weights[i] / z;
            }
            for sp in 0..n_states {
                reward[[s, a, sp]] = rng.random::<f64>();
            }
        }
    }
    let mu_raw: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 0.02).collect();
    let z: f64 = mu_raw.iter().sum();
    let mu0 = Array1::from_vec(mu_raw.iter().map(|x| x / z).collect());
    let mut logits = Array2::zeros((n_states, n_actions));
    for v in logits.iter_mut() {
        *v = rng.random::<f64>() * 2.0 - 1.0;
    }
    BuiltEnv {
        name: "random-mdp".into(),
        description: "seeded sparse random MDP with a random softmax behavior policy".into(),
        mdp: TabularMDP {
            n_states,
            n_actions,
            transition,
            reward,
            initial_dist: mu0,
            discount,
        },
        behavior: StochasticPolicy::from_logits(logits),
        default_episodes: 300,
        default_horizon: 20,
    }
}
