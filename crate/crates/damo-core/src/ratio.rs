//! The data-alignment log-ratio log(rho_M^pi / rho_T^beta), in two modes:
//! the exact occupancy quotient, and a discriminator trained on the two
//! replay buffers whose logit recovers the same quantity at the Bayes
//! optimum h* = rho_M / (rho_M + rho_T^beta), i.e. log(h*/(1-h*)).

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::data::TransitionDataset;
use crate::error::{Error, Result};
use crate::occupancy::OccupancyMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    Exact,
    Classifier,
}

#[derive(Debug, Clone)]
pub struct LogRatioTable {
    /// Clipped log-ratio per (s,a,s'); finite everywhere, |values| <= clip.
    pub values: Array3<f64>,
    pub clip: f64,
    pub mode: RatioMode,
}

impl LogRatioTable {
    pub fn zeros(n_states: usize, n_actions: usize, mode: RatioMode, clip: f64) -> Self {
        LogRatioTable {
            values: Array3::zeros((n_states, n_actions, n_states)),
            clip,
            mode,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
    }
}

pub fn clip_symmetric(x: f64, c: f64) -> f64 {
    x.clamp(-c, c)
}

/// log(rho_M / rho_T^beta) with the conventions: +clip where the model walks
/// off the offline support (rho_T^beta = 0 but rho_M > 0), 0 where the model
/// never goes (rho_M = 0), symmetric clip everywhere else.
pub fn exact_log_ratio(
    rho_m_pi: &OccupancyMeasure,
    rho_t_beta: &OccupancyMeasure,
    clip: f64,
) -> Result<LogRatioTable> {
    if rho_m_pi.rho.dim() != rho_t_beta.rho.dim() {
        return Err(Error::InvalidInput("log-ratio shapes differ".into()));
    }
    if clip < 0.0 {
        return Err(Error::InvalidInput("clip must be >= 0".into()));
    }
    let mut values = Array3::zeros(rho_m_pi.rho.raw_dim());
    for (i, (&m, &t)) in rho_m_pi
        .rho
        .iter()
        .zip(rho_t_beta.rho.iter())
        .enumerate()
    {
        let v = if m == 0.0 {
            0.0
        } else if t == 0.0 {
            clip
        } else {
            clip_symmetric((m / t).ln(), clip)
        };
        values.as_slice_mut().unwrap()[i] = v;
    }
    Ok(LogRatioTable {
        values,
        clip,
        mode: RatioMode::Exact,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Full-batch gradient steps.
    pub steps: usize,
    pub step_size: f64,
    /// Mixing weight d on the synthetic buffer in the balanced loss.
    pub balance: f64,
    /// Recorded for provenance; the full-batch path is deterministic.
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            steps: 2000,
            step_size: 4.0,
            balance: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierParams {
    /// One-hot logistic weights: logit(s,a,s') = weights[s,a,s'].
    pub weights: Array3<f64>,
    pub config: ClassifierConfig,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Balanced binary cross-entropy on the one-hot logistic model, label 1 on
/// synthetic samples and 0 on offline samples. The loss separates per cell,
/// so each covered cell descends toward sigma(w) = d p_M / (d p_M + (1-d)
/// p_R); the gradient is preconditioned by the cell's total sample mass so
/// rare and common cells converge at the same rate. Cells absent from both
/// buffers keep logit 0.
pub fn train_classifier(
    d_r: &TransitionDataset,
    d_m: &TransitionDataset,
    cfg: &ClassifierConfig,
    n_states: usize,
    n_actions: usize,
) -> Result<ClassifierParams> {
    if d_r.is_empty() {
        return Err(Error::EmptySource("offline buffer for classifier"));
    }
    if d_m.is_empty() {
        return Err(Error::EmptySource("synthetic buffer for classifier"));
    }
    if !(0.0..=1.0).contains(&cfg.balance) {
        return Err(Error::InvalidInput("balance must be in [0,1]".into()));
    }
    let mut p_r = Array3::<f64>::zeros((n_states, n_actions, n_states));
    let mut p_m = Array3::<f64>::zeros((n_states, n_actions, n_states));
    let wr = 1.0 / d_r.len() as f64;
    for t in &d_r.transitions {
        p_r[[t.s, t.a, t.sp]] += wr;
    }
    let wm = 1.0 / d_m.len() as f64;
    for t in &d_m.transitions {
        p_m[[t.s, t.a, t.sp]] += wm;
    }

    let mut weights = Array3::<f64>::zeros((n_states, n_actions, n_states));
    let d = cfg.balance;
    for ((w, &m), &r) in weights.iter_mut().zip(p_m.iter()).zip(p_r.iter()) {
        let mass = d * m + (1.0 - d) * r;
        if mass == 0.0 {
            continue;
        }
        let target = d * m / mass;
        for _ in 0..cfg.steps {
            *w -= cfg.step_size * (sigmoid(*w) - target);
        }
    }
    Ok(ClassifierParams {
        weights,
        config: *cfg,
    })
}

/// Clipped logit table: log(h/(1-h)) = weights, clipped to +-clip.
pub fn classifier_log_ratio(params: &ClassifierParams, clip: f64) -> LogRatioTable {
    let values = params.weights.mapv(|w| clip_symmetric(w, clip));
    LogRatioTable {
        values,
        clip,
        mode: RatioMode::Classifier,
    }
}
