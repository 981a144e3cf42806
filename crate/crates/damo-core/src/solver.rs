//! Maximin training: a convex inner minimization over Q whose value is the
//! conjugate-form objective
//!
//!   L(Q) = (1-gamma) E_{mu0,pi}[Q] + alpha E_w[f*(Phi/alpha)],
//!   Phi(s,a,s') = r - alpha l + gamma sum_{a'} pi(a'|s') Q(s',a') - Q(s,a),
//!
//! with l the data-alignment log-ratio and w the occupancy weights (exact
//! model occupancy or an empirical mixed batch; both flow through the same
//! code path), and an outer ascent over softmax policy logits against the
//! same objective. The inner optimum admits an equivalent fixed-point
//! characterization Q = rt + T^pi Q with the refined reward
//! rt = r - alpha l - alpha f'(rho_T^pi / rho_M^pi), solved here by
//! contraction when the ratio is computable and checked by residual.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{dataset_stats, empirical_occupancy, mixed_batch, TransitionDataset};
use crate::error::{Error, Result};
use crate::fdiv::{f_divergence, generator_by_name, FGenerator};
use crate::mdp::{
    bellman_backup, expected_reward, max_abs_diff, policy_evaluation_q,
    state_values, QFunction, StochasticPolicy, TabularMDP,
};
use crate::model::{fit_model, model_as_mdp, rollout_synthetic, RewardSource, UnseenPolicy};
use crate::occupancy::{policy_return, transition_occupancy, OccupancyMeasure};
use crate::ratio::{
    classifier_log_ratio, exact_log_ratio, train_classifier, ClassifierConfig, LogRatioTable,
    RatioMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectationMode {
    /// All expectations in closed form from occupancy measures.
    Exact,
    /// Expectations from seeded mixed batches of the two buffers.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerMode {
    /// Contraction iteration on the refined-reward Bellman equation.
    FixedPoint,
    /// Damped residual descent toward the same fixed point.
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Full,
    /// Data-alignment term removed: log-ratio forced to zero.
    WithoutEr,
    /// Behavior-alignment term removed: the conjugate reweighting is dropped
    /// and the critic reverts to plain evaluation of r - alpha l.
    WithoutIr,
    /// Actor ignores the conjugate term and greedily maximizes E_D[Q].
    Inconsistent,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub alpha: f64,
    pub fgen_name: String,
    pub inner_steps: usize,
    pub outer_steps: usize,
    pub epochs: usize,
    pub q_step_size: f64,
    pub policy_step_size: f64,
    /// Evaluate the actor objective at alpha = 1 regardless of the critic's
    /// alpha.
    pub fixed_alpha_actor: bool,
    pub offline_ratio: f64,
    pub rollout_k: usize,
    pub ratio_mode: RatioMode,
    pub seed: u64,
    pub double_q: bool,
    pub entropy_coef: f64,
    pub expectation: ExpectationMode,
    pub batch: usize,
    pub clip: f64,
    pub smoothing: f64,
    pub unseen_policy: UnseenPolicy,
    pub classifier: ClassifierConfig,
    pub n_rollout_starts: usize,
    pub reward_source: RewardSource,
    pub ablation: Ablation,
    /// Real-environment metrics in the trace; never feeds training.
    pub eval_hooks: bool,
    pub strip_initial_labels: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha: 1.0,
            fgen_name: "cubic".into(),
            inner_steps: 10,
            outer_steps: 5,
            epochs: 100,
            q_step_size: 0.5,
            policy_step_size: 10.0,
            fixed_alpha_actor: true,
            offline_ratio: 0.05,
            rollout_k: 5,
            ratio_mode: RatioMode::Exact,
            seed: 0,
            double_q: false,
            entropy_coef: 0.01,
            expectation: ExpectationMode::Sampled,
            batch: 256,
            clip: 10.0,
            smoothing: 0.0,
            unseen_policy: UnseenPolicy::Uniform,
            classifier: ClassifierConfig::default(),
            n_rollout_starts: 64,
            reward_source: RewardSource::TrueReward,
            ablation: Ablation::Full,
            eval_hooks: true,
            strip_initial_labels: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::InvalidInput("alpha must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.offline_ratio) {
            return Err(Error::InvalidInput("offline_ratio must be in [0,1]".into()));
        }
        if self.q_step_size <= 0.0 || self.policy_step_size <= 0.0 {
            return Err(Error::InvalidInput("step sizes must be > 0".into()));
        }
        if self.rollout_k == 0 || self.batch == 0 || self.n_rollout_starts == 0 {
            return Err(Error::InvalidInput(
                "rollout_k, batch, n_rollout_starts must be >= 1".into(),
            ));
        }
        if self.entropy_coef < 0.0 {
            return Err(Error::InvalidInput("entropy_coef must be >= 0".into()));
        }
        generator_by_name(&self.fgen_name).map(|_| ())
    }
}

/// Deterministic sub-stream derivation (splitmix64 finalizer).
pub fn sub_seed(base: u64, epoch: u64, salt: u64) -> u64 {
    let mut z = base
        .wrapping_add(epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(salt.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Phi(s,a,s') = r - alpha*l + gamma * V(s') - Q(s,a), V policy-averaged.
pub fn phi(
    q: &QFunction,
    policy: &StochasticPolicy,
    reward: &Array3<f64>,
    log_ratio: &LogRatioTable,
    alpha: f64,
    gamma: f64,
) -> Array3<f64> {
    let v = state_values(policy, q);
    let (n_s, n_a, n_sp) = reward.dim();
    let mut out = Array3::zeros((n_s, n_a, n_sp));
    for s in 0..n_s {
        for a in 0..n_a {
            for sp in 0..n_sp {
                out[[s, a, sp]] =
                    reward[[s, a, sp]] - alpha * log_ratio.values[[s, a, sp]] + gamma * v[sp]
                        - q.q[[s, a]];
            }
        }
    }
    out
}

/// The shared objective path: exact mode passes the exact model occupancy as
/// `w`, sampled mode passes empirical mixed-batch weights. `linear_fstar`
/// substitutes f*(y) = y (the behavior-alignment ablation).
#[allow(clippy::too_many_arguments)]
pub fn inner_objective_weighted(
    q: &QFunction,
    policy: &StochasticPolicy,
    w: &Array3<f64>,
    mu0: &Array1<f64>,
    reward: &Array3<f64>,
    log_ratio: &LogRatioTable,
    alpha: f64,
    gen: &FGenerator,
    gamma: f64,
    linear_fstar: bool,
) -> f64 {
    let mut term1 = 0.0;
    for s in 0..mu0.len() {
        for a in 0..policy.n_actions() {
            term1 += mu0[s] * policy.probs[[s, a]] * q.q[[s, a]];
        }
    }
    term1 *= 1.0 - gamma;
    let phi_t = phi(q, policy, reward, log_ratio, alpha, gamma);
    let mut term2 = 0.0;
    for (&wv, &p) in w.iter().zip(phi_t.iter()) {
        if wv == 0.0 {
            continue;
        }
        term2 += wv * if linear_fstar { p } else { alpha * (gen.f_star)(p / alpha) };
    }
    term1 + term2
}

/// Exact-mode objective: weights are the exact occupancy of `policy` in the
/// model kernel started from `mu0`.
pub fn inner_objective(
    q: &QFunction,
    policy: &StochasticPolicy,
    model_mdp: &TabularMDP,
    mu0: &Array1<f64>,
    log_ratio: &LogRatioTable,
    alpha: f64,
    gen: &FGenerator,
) -> Result<f64> {
    let mut m = model_mdp.clone();
    m.initial_dist = mu0.clone();
    let occ = transition_occupancy(&m, policy)?;
    Ok(inner_objective_weighted(
        q,
        policy,
        &occ.rho,
        mu0,
        &model_mdp.reward,
        log_ratio,
        alpha,
        gen,
        model_mdp.discount,
        false,
    ))
}

/// Gradient of the weighted objective in Q. With `frozen_v` the bootstrap
/// value inside Phi is treated as a constant (double-Q style semi-gradient);
/// otherwise the full gradient including the inflow term.
#[allow(clippy::too_many_arguments)]
pub fn inner_gradient_weighted(
    q: &QFunction,
    policy: &StochasticPolicy,
    w: &Array3<f64>,
    mu0: &Array1<f64>,
    reward: &Array3<f64>,
    log_ratio: &LogRatioTable,
    alpha: f64,
    gen: &FGenerator,
    gamma: f64,
    linear_fstar: bool,
    frozen_v: Option<&Array1<f64>>,
) -> Array2<f64> {
    let (n_s, n_a, _) = reward.dim();
    let v_own = state_values(policy, q);
    let v = frozen_v.unwrap_or(&v_own);
    // c(s,a,s') = w * f*'(Phi/alpha)
    let mut c = Array3::zeros((n_s, n_a, n_s));
    for s in 0..n_s {
        for a in 0..n_a {
            for sp in 0..n_s {
                let wv = w[[s, a, sp]];
                if wv == 0.0 {
                    continue;
                }
                let p = reward[[s, a, sp]] - alpha * log_ratio.values[[s, a, sp]]
                    + gamma * v[sp]
                    - q.q[[s, a]];
                let slope = if linear_fstar {
                    1.0
                } else {
                    (gen.f_star_prime)(p / alpha)
                };
                c[[s, a, sp]] = wv * slope;
            }
        }
    }
    let mut grad = Array2::zeros((n_s, n_a));
    let mut inflow: Array1<f64> = Array1::zeros(n_s);
    if frozen_v.is_none() {
        for s in 0..n_s {
            for a in 0..n_a {
                for sp in 0..n_s {
                    inflow[sp] += c[[s, a, sp]];
                }
            }
        }
    }
    for s in 0..n_s {
        for a in 0..n_a {
            let out: f64 = (0..n_s).map(|sp| c[[s, a, sp]]).sum();
            let mut g = (1.0 - gamma) * mu0[s] * policy.probs[[s, a]] - out;
            if frozen_v.is_none() {
                g += gamma * policy.probs[[s, a]] * inflow[s];
            }
            grad[[s, a]] = g;
        }
    }
    grad
}

#[derive(Debug, Clone)]
pub struct RefinedReward {
    /// r - explicit_penalty - implicit_penalty.
    pub total: Array3<f64>,
    /// alpha * log-ratio (the data-alignment penalty).
    pub explicit_penalty: Array3<f64>,
    /// alpha * f'(rho_T^pi / rho_M^pi) (the behavior-alignment penalty).
    pub implicit_penalty: Array3<f64>,
}

/// The refined reward of the inner fixed point. Cells the model never
/// reaches (rho_M = 0) take ratio 1 so the implicit term vanishes there; the
/// fixed point never weights them.
pub fn refined_reward(
    reward: &Array3<f64>,
    log_ratio: &LogRatioTable,
    rho_t_pi: &OccupancyMeasure,
    rho_m_pi: &OccupancyMeasure,
    alpha: f64,
    gen: &FGenerator,
) -> RefinedReward {
    let explicit = log_ratio.values.mapv(|l| alpha * l);
    let mut implicit = Array3::zeros(reward.raw_dim());
    for (i, (&t, &m)) in rho_t_pi
        .rho
        .iter()
        .zip(rho_m_pi.rho.iter())
        .enumerate()
    {
        let ratio = if m > 0.0 { t / m } else { 1.0 };
        implicit.as_slice_mut().unwrap()[i] = alpha * (gen.f_prime)(ratio);
    }
    let total = reward - &explicit - &implicit;
    RefinedReward {
        total,
        explicit_penalty: explicit,
        implicit_penalty: implicit,
    }
}

/// Max-norm Bellman residual ||Q - (rbar + T^pi Q)||_inf for the given
/// transition-indexed reward table.
pub fn fixed_point_residual(
    q: &QFunction,
    model_mdp: &TabularMDP,
    policy: &StochasticPolicy,
    reward: &Array3<f64>,
) -> f64 {
    let rbar = expected_reward(model_mdp, reward);
    let backed = bellman_backup(model_mdp, policy, q);
    let mut target = backed.q;
    target += &rbar;
    max_abs_diff(&q.q, &target)
}

pub fn divergence_bound(r_max: f64, gamma: f64, alpha: f64, clip: f64) -> f64 {
    r_max / (1.0 - gamma) + alpha * clip * 10.0
}

const PRECOND_FLOOR: f64 = 1e-2;

/// Total weight mass touching each cell: the diagonal preconditioner for
/// critic descent. Floored so rarely sampled cells are not amplified.
fn weight_scale(
    policy: &StochasticPolicy,
    w: &Array3<f64>,
    mu0: &Array1<f64>,
    gamma: f64,
) -> Array2<f64> {
    let (n_s, n_a, n_sp) = w.dim();
    let mut inflow: Array1<f64> = Array1::zeros(n_sp);
    let mut out: Array2<f64> = Array2::zeros((n_s, n_a));
    for s in 0..n_s {
        for a in 0..n_a {
            for sp in 0..n_sp {
                inflow[sp] += w[[s, a, sp]];
                out[[s, a]] += w[[s, a, sp]];
            }
        }
    }
    let mut scale = Array2::zeros((n_s, n_a));
    for s in 0..n_s {
        for a in 0..n_a {
            let m = (1.0 - gamma) * mu0[s] * policy.probs[[s, a]]
                + out[[s, a]]
                + gamma * policy.probs[[s, a]] * inflow[s];
            scale[[s, a]] = m.max(PRECOND_FLOOR);
        }
    }
    scale
}

/// Offline critic update: preconditioned descent on the weighted objective,
/// mutating `q` in place. `frozen_v` freezes the bootstrap value (double-Q
/// semi-gradient); `bound` is the divergence guard.
#[allow(clippy::too_many_arguments)]
pub fn critic_descend(
    q: &mut QFunction,
    policy: &StochasticPolicy,
    w: &Array3<f64>,
    mu0: &Array1<f64>,
    reward: &Array3<f64>,
    log_ratio: &LogRatioTable,
    alpha: f64,
    gen: &FGenerator,
    gamma: f64,
    steps: usize,
    step_size: f64,
    linear_fstar: bool,
    bound: f64,
) -> Result<()> {
    let scale = weight_scale(policy, w, mu0, gamma);
    for step in 0..steps {
        let grad = inner_gradient_weighted(
            q, policy, w, mu0, reward, log_ratio, alpha, gen, gamma, linear_fstar, None,
        );
        for (qv, (g, s)) in q.q.iter_mut().zip(grad.iter().zip(scale.iter())) {
            *qv -= step_size * g / s;
        }
        if step % 64 == 0 && q.max_abs() > bound {
            return Err(Error::DivergenceGuard {
                q_norm: q.max_abs(),
                bound,
            });
        }
    }
    if q.max_abs() > bound {
        return Err(Error::DivergenceGuard {
            q_norm: q.max_abs(),
            bound,
        });
    }
    Ok(())
}

/// Inner conservative Q. `rho_ratio` is the per-cell rho_T^pi / rho_M^pi
/// feeding the implicit penalty; None means the ratio is unavailable
/// (offline) and is imputed as 1, dropping that term.
pub fn solve_inner(
    policy: &StochasticPolicy,
    model_mdp: &TabularMDP,
    log_ratio: &LogRatioTable,
    rho_ratio: Option<&Array3<f64>>,
    cfg: &SolverConfig,
    mode: InnerMode,
) -> Result<QFunction> {
    let gen = generator_by_name(&cfg.fgen_name)?;
    let mut rt = model_mdp.reward.clone();
    for (i, l) in log_ratio.values.iter().enumerate() {
        rt.as_slice_mut().unwrap()[i] -= cfg.alpha * l;
    }
    if let Some(ratio) = rho_ratio {
        for (i, r) in ratio.iter().enumerate() {
            rt.as_slice_mut().unwrap()[i] -= cfg.alpha * (gen.f_prime)(*r);
        }
    }
    let bound = divergence_bound(
        model_mdp.max_abs_reward(),
        model_mdp.discount,
        cfg.alpha,
        log_ratio.clip,
    );
    let q = match mode {
        InnerMode::FixedPoint => {
            // Residual <= (1+gamma) * error, so tol 1e-7 lands under 1e-6.
            policy_evaluation_q(model_mdp, policy, &rt, 1e-7)?
        }
        InnerMode::Gradient => {
            let rbar = expected_reward(model_mdp, &rt);
            let eta = cfg.q_step_size;
            let mut q = QFunction::zeros(model_mdp.n_states, model_mdp.n_actions);
            for step in 0..cfg.inner_steps {
                let backed = bellman_backup(model_mdp, policy, &q);
                let mut target = backed.q;
                target += &rbar;
                q.q = &q.q + (target - &q.q) * eta;
                if step % 64 == 0 && q.max_abs() > bound {
                    return Err(Error::DivergenceGuard {
                        q_norm: q.max_abs(),
                        bound,
                    });
                }
            }
            q
        }
    };
    if q.max_abs() > bound {
        return Err(Error::DivergenceGuard {
            q_norm: q.max_abs(),
            bound,
        });
    }
    Ok(q)
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub logits: Array2<f64>,
    pub policy: StochasticPolicy,
    /// Table used for evaluation and the actor; elementwise min of the pair
    /// when double-Q is active.
    pub q: QFunction,
    pub q_b: Option<QFunction>,
    pub log_ratio: LogRatioTable,
    pub epoch: usize,
}

impl SolverState {
    pub fn init(n_states: usize, n_actions: usize, cfg: &SolverConfig) -> Self {
        let logits = Array2::zeros((n_states, n_actions));
        let policy = StochasticPolicy::from_logits(logits.clone());
        let q_b = if cfg.double_q {
            // Deterministic small offset so the pair starts distinct.
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 0, 0xD0))
;
            let mut t = Array2::zeros((n_states, n_actions));
            for v in t.iter_mut() {
                *v = 0.01 * (rng.random::<f64>() - 0.5);
            }
            Some(QFunction { q: t })
        } else {
            None
        };
        SolverState {
            logits,
            policy,
            q: QFunction::zeros(n_states, n_actions),
            q_b,
            log_ratio: LogRatioTable::zeros(n_states, n_actions, cfg.ratio_mode, cfg.clip),
            epoch: 0,
        }
    }

    /// Table the actor and evaluation see.
    pub fn q_eval(&self) -> QFunction {
        match &self.q_b {
            None => self.q.clone(),
            Some(qb) => {
                let mut q = self.q.q.clone();
                for (x, &y) in q.iter_mut().zip(qb.q.iter()) {
                    *x = x.min(y);
                }
                QFunction { q }
            }
        }
    }
}

/// Everything a single actor/critic step reads but does not own.
pub struct StepContext<'a> {
    pub w: &'a Array3<f64>,
    pub mu0: &'a Array1<f64>,
    pub reward: &'a Array3<f64>,
    pub gen: &'a FGenerator,
    pub gamma: f64,
    pub linear_fstar: bool,
}

/// Actor objective with the occupancy weights frozen: the direct mu0 value
/// term, the conjugate term (through Phi's bootstrap), and an entropy bonus
/// weighted by the data state-marginal.
#[allow(clippy::too_many_arguments)]
pub fn actor_objective(
    logits: &Array2<f64>,
    q: &QFunction,
    ctx: &StepContext,
    log_ratio: &LogRatioTable,
    alpha_actor: f64,
    entropy_coef: f64,
) -> f64 {
    let policy = StochasticPolicy::from_logits(logits.clone());
    let base = inner_objective_weighted(
        q,
        &policy,
        ctx.w,
        ctx.mu0,
        ctx.reward,
        log_ratio,
        alpha_actor,
        ctx.gen,
        ctx.gamma,
        ctx.linear_fstar,
    );
    if entropy_coef == 0.0 {
        return base;
    }
    let (n_s, n_a) = logits.dim();
    let d_w = state_mass(ctx.w);
    let mut ent = 0.0;
    for s in 0..n_s {
        let mut h = 0.0;
        for a in 0..n_a {
            let p = policy.probs[[s, a]];
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        ent += d_w[s] * h;
    }
    base + entropy_coef * ent
}

fn state_mass(w: &Array3<f64>) -> Array1<f64> {
    let (n_s, n_a, n_sp) = w.dim();
    let mut d = Array1::zeros(n_s);
    for s in 0..n_s {
        for a in 0..n_a {
            for sp in 0..n_sp {
                d[s] += w[[s, a, sp]];
            }
        }
    }
    d
}

/// Analytic gradient of `actor_objective` in the logits.
pub fn actor_gradient(
    logits: &Array2<f64>,
    q: &QFunction,
    ctx: &StepContext,
    log_ratio: &LogRatioTable,
    alpha_actor: f64,
    entropy_coef: f64,
) -> Array2<f64> {
    let policy = StochasticPolicy::from_logits(logits.clone());
    let (n_s, n_a) = logits.dim();
    let phi_t = phi(q, &policy, ctx.reward, log_ratio, alpha_actor, ctx.gamma);
    // g(s) = gamma * sum_{s~,a~} w(s~,a~,s) f*'(Phi(s~,a~,s)/alpha): the
    // sensitivity of the conjugate term to V(s).
    let mut g: Array1<f64> = Array1::zeros(n_s);
    for s in 0..n_s {
        for a in 0..n_a {
            for sp in 0..n_s {
                let wv = ctx.w[[s, a, sp]];
                if wv == 0.0 {
                    continue;
                }
                let slope = if ctx.linear_fstar {
                    1.0
                } else {
                    (ctx.gen.f_star_prime)(phi_t[[s, a, sp]] / alpha_actor)
                };
                g[sp] += ctx.gamma * wv * slope;
            }
        }
    }
    let v = state_values(&policy, q);
    let d_w = state_mass(ctx.w);
    let mut grad = Array2::zeros((n_s, n_a));
    for s in 0..n_s {
        let weight = (1.0 - ctx.gamma) * ctx.mu0[s] + g[s];
        let mut h = 0.0;
        if entropy_coef > 0.0 {
            for a in 0..n_a {
                let p = policy.probs[[s, a]];
                if p > 0.0 {
                    h -= p * p.ln();
                }
            }
        }
        for a in 0..n_a {
            let p = policy.probs[[s, a]];
            let mut gr = weight * p * (q.q[[s, a]] - v[s]);
            if entropy_coef > 0.0 && p > 0.0 {
                gr -= entropy_coef * d_w[s] * p * (p.ln() + h);
            }
            grad[[s, a]] = gr;
        }
    }
    grad
}

/// One ascent step on the consistent objective (alpha pinned to 1 when the
/// config says so).
pub fn outer_policy_step(
    state: &SolverState,
    ctx: &StepContext,
    cfg: &SolverConfig,
) -> SolverState {
    let alpha_actor = if cfg.fixed_alpha_actor { 1.0 } else { cfg.alpha };
    let q = state.q_eval();
    let grad = actor_gradient(
        &state.logits,
        &q,
        ctx,
        &state.log_ratio,
        alpha_actor,
        cfg.entropy_coef,
    );
    let logits = &state.logits + &(grad * cfg.policy_step_size);
    SolverState {
        policy: StochasticPolicy::from_logits(logits.clone()),
        logits,
        ..state.clone()
    }
}

/// One ascent step on the greedy objective E_{s~D,a~pi}[Q] + entropy,
/// dropping the conjugate coupling entirely.
pub fn inconsistent_policy_step(
    state: &SolverState,
    ctx: &StepContext,
    cfg: &SolverConfig,
) -> SolverState {
    let q = state.q_eval();
    let (n_s, n_a) = state.logits.dim();
    let d_w = state_mass(ctx.w);
    let v = state_values(&state.policy, &q);
    let mut grad = Array2::zeros((n_s, n_a));
    for s in 0..n_s {
        let mut h = 0.0;
        if cfg.entropy_coef > 0.0 {
            for a in 0..n_a {
                let p = state.policy.probs[[s, a]];
                if p > 0.0 {
                    h -= p * p.ln();
                }
            }
        }
        for a in 0..n_a {
            let p = state.policy.probs[[s, a]];
            let mut gr = d_w[s] * p * (q.q[[s, a]] - v[s]);
            if cfg.entropy_coef > 0.0 && p > 0.0 {
                gr -= cfg.entropy_coef * d_w[s] * p * (p.ln() + h);
            }
            grad[[s, a]] = gr;
        }
    }
    let logits = &state.logits + &(grad * cfg.policy_step_size);
    SolverState {
        policy: StochasticPolicy::from_logits(logits.clone()),
        logits,
        ..state.clone()
    }
}

/// E_{rho_T^pi}[log(rho_M^pi / rho_T^beta)], the alignment term of the
/// surrogate. Unclipped; errors on support gaps.
pub fn alignment_term(
    rho_t_pi: &OccupancyMeasure,
    rho_m_pi: &OccupancyMeasure,
    rho_t_beta: &OccupancyMeasure,
) -> Result<f64> {
    let mut acc = 0.0;
    let (n_s, n_a, n_sp) = rho_t_pi.rho.dim();
    for s in 0..n_s {
        for a in 0..n_a {
            for sp in 0..n_sp {
                let t = rho_t_pi.rho[[s, a, sp]];
                if t == 0.0 {
                    continue;
                }
                let m = rho_m_pi.rho[[s, a, sp]];
                let b = rho_t_beta.rho[[s, a, sp]];
                if m == 0.0 || b == 0.0 {
                    return Err(Error::SupportViolation {
                        index: (s, a, sp),
                        p: t,
                    });
                }
                acc += t * (m / b).ln();
            }
        }
    }
    Ok(acc)
}

/// The surrogate lower bound
/// E_{rho_T^pi}[r - alpha log(rho_M^pi/rho_T^beta)] - alpha D_f(rho_T^pi ||
/// rho_M^pi), evaluated with exact occupancies and the unclipped log-ratio.
pub fn surrogate_value(
    policy: &StochasticPolicy,
    mdp_real: &TabularMDP,
    mdp_model: &TabularMDP,
    rho_t_beta: &OccupancyMeasure,
    alpha: f64,
    gen: &FGenerator,
) -> Result<f64> {
    let occ_t = transition_occupancy(mdp_real, policy)?;
    let j = occ_t.expect(&mdp_real.reward);
    if alpha == 0.0 {
        return Ok(j);
    }
    let occ_m = transition_occupancy(mdp_model, policy)?;
    let align = alignment_term(&occ_t, &occ_m, rho_t_beta)?;
    let df = f_divergence(&occ_t, &occ_m, gen)?;
    Ok(j - alpha * align - alpha * df)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub inner_obj: f64,
    pub surrogate: f64,
    pub j_real: f64,
    pub j_model: f64,
    pub mean_q_eval: f64,
    pub fp_residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    pub records: Vec<EpochRecord>,
}

/// Full training loop on the offline buffer: fit model, then per epoch
/// rollout synthetic data under the current policy, refresh the log-ratio,
/// take critic descent steps and actor ascent steps. The real environment
/// is touched only by trace metrics, and only when eval_hooks is on.
pub fn solve_maximin(
    mdp_real: &TabularMDP,
    d_r: &TransitionDataset,
    cfg: &SolverConfig,
) -> Result<(SolverState, TrainingTrace)> {
    cfg.validate()?;
    if d_r.is_empty() {
        return Err(Error::EmptySource("offline dataset"));
    }
    let gen = generator_by_name(&cfg.fgen_name)?;
    let (n_s, n_a) = (mdp_real.n_states, mdp_real.n_actions);
    let gamma = mdp_real.discount;

    let model = fit_model(d_r, n_s, n_a, cfg.smoothing, cfg.unseen_policy)?;
    let mut labeled = d_r.clone();
    if cfg.strip_initial_labels {
        labeled.strip_initial_labels();
    }
    let mu0 = dataset_stats(&labeled, n_s).empirical_initial;
    let model_mdp = model_as_mdp(
        &model,
        &mu0,
        gamma,
        cfg.reward_source,
        Some(&mdp_real.reward),
    )?;
    let reward = model_mdp.reward.clone();
    let rho_t_beta = empirical_occupancy(d_r, n_s, n_a)?;
    let d_r_state = rho_t_beta.state_marginal();
    let bound = divergence_bound(model_mdp.max_abs_reward(), gamma, cfg.alpha, cfg.clip);

    let mut state = SolverState::init(n_s, n_a, cfg);
    let mut trace = TrainingTrace::default();
    let start_pool: Vec<usize> = d_r.transitions.iter().map(|t| t.s).collect();

    for epoch in 0..cfg.epochs {
        let e = epoch as u64;
        // Synthetic rollouts under the current policy.
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, e, 1));
        let starts: Vec<usize> = (0..cfg.n_rollout_starts)
            .map(|_| start_pool[rng.random_range(0..start_pool.len())])
            .collect();
        let d_m = rollout_synthetic(
            &model,
            &state.policy,
            &starts,
            cfg.rollout_k,
            sub_seed(cfg.seed, e, 2),
        )?;

        // Data-alignment term.
        state.log_ratio = match cfg.ablation {
            Ablation::WithoutEr => LogRatioTable::zeros(n_s, n_a, cfg.ratio_mode, cfg.clip),
            _ => match cfg.ratio_mode {
                RatioMode::Exact => {
                    let occ_m = transition_occupancy(&model_mdp, &state.policy)?;
                    exact_log_ratio(&occ_m, &rho_t_beta, cfg.clip)?
                }
                RatioMode::Classifier => {
                    let ccfg = ClassifierConfig {
                        seed: sub_seed(cfg.seed, e, 3),
                        ..cfg.classifier
                    };
                    let params = train_classifier(d_r, &d_m, &ccfg, n_s, n_a)?;
                    classifier_log_ratio(&params, cfg.clip)
                }
            },
        };

        // Expectation weights for this epoch.
        let w = match cfg.expectation {
            ExpectationMode::Exact => transition_occupancy(&model_mdp, &state.policy)?.rho,
            ExpectationMode::Sampled => {
                let batch = mixed_batch(d_r, &d_m, cfg.offline_ratio, cfg.batch, sub_seed(cfg.seed, e, 4))?;
                empirical_occupancy(&batch, n_s, n_a)?.rho
            }
        };

        // Critic.
        match cfg.ablation {
            Ablation::WithoutIr => {
                // Plain damped evaluation of r - alpha*l on the model.
                let mut rt = reward.clone();
                for (i, l) in state.log_ratio.values.iter().enumerate() {
                    rt.as_slice_mut().unwrap()[i] -= cfg.alpha * l;
                }
                let rbar = expected_reward(&model_mdp, &rt);
                for _ in 0..cfg.inner_steps {
                    let backed = bellman_backup(&model_mdp, &state.policy, &state.q);
                    let mut target = backed.q;
                    target += &rbar;
                    state.q.q = &state.q.q + (target - &state.q.q) * cfg.q_step_size.min(1.0);
                }
            }
            _ => {
                let use_double = cfg.double_q && cfg.expectation == ExpectationMode::Sampled;
                if use_double {
                    let scale = weight_scale(&state.policy, &w, &mu0, gamma);
                    for _ in 0..cfg.inner_steps {
                        let v_min = state_values(&state.policy, &state.q_eval());
                        let grads: Vec<Array2<f64>> = [&state.q, state.q_b.as_ref().unwrap()]
                            .iter()
                            .map(|qt| {
                                inner_gradient_weighted(
                                    qt,
                                    &state.policy,
                                    &w,
                                    &mu0,
                                    &reward,
                                    &state.log_ratio,
                                    cfg.alpha,
                                    &gen,
                                    gamma,
                                    false,
                                    Some(&v_min),
                                )
                            })
                            .collect();
                        for (i, qt) in [&mut state.q, state.q_b.as_mut().unwrap()]
                            .into_iter()
                            .enumerate()
                        {
                            for (qv, (g, sc)) in
                                qt.q.iter_mut().zip(grads[i].iter().zip(scale.iter()))
                            {
                                *qv -= cfg.q_step_size * g / sc;
                            }
                        }
                    }
                } else {
                    critic_descend(
                        &mut state.q,
                        &state.policy,
                        &w,
                        &mu0,
                        &reward,
                        &state.log_ratio,
                        cfg.alpha,
                        &gen,
                        gamma,
                        cfg.inner_steps,
                        cfg.q_step_size,
                        false,
                        bound,
                    )?;
                }
            }
        }
        if state.q_eval().max_abs() > bound {
            return Err(Error::DivergenceGuard {
                q_norm: state.q_eval().max_abs(),
                bound,
            });
        }

        // Actor.
        let ctx = StepContext {
            w: &w,
            mu0: &mu0,
            reward: &reward,
            gen: &gen,
            gamma,
            linear_fstar: cfg.ablation == Ablation::WithoutIr,
        };
        for _ in 0..cfg.outer_steps {
            state = match cfg.ablation {
                Ablation::Inconsistent => inconsistent_policy_step(&state, &ctx, cfg),
                _ => outer_policy_step(&state, &ctx, cfg),
            };
        }

        // Trace.
        let q_eval = state.q_eval();
        let mut mean_q = 0.0;
        for s in 0..n_s {
            for a in 0..n_a {
                mean_q += d_r_state[s] * state.policy.probs[[s, a]] * q_eval.q[[s, a]];
            }
        }
        let inner_obj = inner_objective_weighted(
            &q_eval,
            &state.policy,
            &w,
            &mu0,
            &reward,
            &state.log_ratio,
            cfg.alpha,
            &gen,
            gamma,
            cfg.ablation == Ablation::WithoutIr,
        );
        let mut rt_off = reward.clone();
        for (i, l) in state.log_ratio.values.iter().enumerate() {
            rt_off.as_slice_mut().unwrap()[i] -= cfg.alpha * l;
        }
        let fp_residual = fixed_point_residual(&q_eval, &model_mdp, &state.policy, &rt_off);
        let j_model = policy_return(&model_mdp, &state.policy)?;
        let (j_real, surrogate) = if cfg.eval_hooks {
            let j = policy_return(mdp_real, &state.policy)?;
            let sur = surrogate_value(
                &state.policy,
                mdp_real,
                &model_mdp,
                &rho_t_beta,
                cfg.alpha,
                &gen,
            )
            .unwrap_or(f64::NAN);
            (j, sur)
        } else {
            (f64::NAN, f64::NAN)
        };
        state.epoch = epoch + 1;
        trace.records.push(EpochRecord {
            epoch: epoch + 1,
            inner_obj,
            surrogate,
            j_real,
            j_model,
            mean_q_eval: mean_q,
            fp_residual,
        });
    }
    Ok((state, trace))
}
