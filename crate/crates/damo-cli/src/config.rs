//! `key = value` experiment configs with per-line diagnostics.
//!
//! One assignment per line, `#` starts a comment, blank lines are skipped.
//! Unknown keys, duplicate keys, and unparsable values are reported with
//! their line number so a typo in a 30-line config is a one-glance fix.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use damo_core::model::{RewardSource, UnseenPolicy};
use damo_core::ratio::RatioMode;
use damo_core::solver::{Ablation, ExpectationMode, SolverConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Damo,
    DamoWoEr,
    DamoWoIr,
    DamoInconsistent,
    NaiveMb,
    MopoStyle,
    Bc,
}

pub const METHOD_NAMES: [&str; 7] = [
    "damo",
    "damo-wo-er",
    "damo-wo-ir",
    "damo-inconsistent",
    "naive-mb",
    "mopo-style",
    "bc",
];

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Damo => "damo",
            Method::DamoWoEr => "damo-wo-er",
            Method::DamoWoIr => "damo-wo-ir",
            Method::DamoInconsistent => "damo-inconsistent",
            Method::NaiveMb => "naive-mb",
            Method::MopoStyle => "mopo-style",
            Method::Bc => "bc",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "damo" => Some(Method::Damo),
            "damo-wo-er" => Some(Method::DamoWoEr),
            "damo-wo-ir" => Some(Method::DamoWoIr),
            "damo-inconsistent" => Some(Method::DamoInconsistent),
            "naive-mb" => Some(Method::NaiveMb),
            "mopo-style" => Some(Method::MopoStyle),
            "bc" => Some(Method::Bc),
            _ => None,
        }
    }

    pub fn ablation(self) -> Ablation {
        match self {
            Method::DamoWoEr => Ablation::WithoutEr,
            Method::DamoWoIr => Ablation::WithoutIr,
            Method::DamoInconsistent => Ablation::Inconsistent,
            _ => Ablation::Full,
        }
    }
}

/// Fully resolved run configuration: env and data settings plus the solver
/// knobs shared by every damo-family method in the run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub env: String,
    pub env_seed: u64,
    pub episodes: Option<usize>,
    pub horizon: Option<usize>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub lambda_u: f64,
    pub ensemble_size: usize,
    pub ensemble_elites: usize,
    pub solver: SolverConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: String::new(),
            env_seed: 0,
            episodes: None,
            horizon: None,
            methods: vec![Method::Damo],
            seeds: vec![0],
            lambda_u: 1.0,
            ensemble_size: 7,
            ensemble_elites: 5,
            solver: SolverConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn solver_for(&self, method: Method, seed: u64) -> SolverConfig {
        let mut cfg = self.solver.clone();
        cfg.seed = seed;
        cfg.ablation = method.ablation();
        cfg
    }

    /// Canonical key/value echo embedded in reports. Every key is present
    /// whether or not the config file set it, so reports are self-contained.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let s = &self.solver;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("env", self.env.clone());
        put("env_seed", self.env_seed.to_string());
        put(
            "episodes",
            self.episodes.map_or("default".into(), |v| v.to_string()),
        );
        put(
            "horizon",
            self.horizon.map_or("default".into(), |v| v.to_string()),
        );
        put(
            "methods",
            self.methods
                .iter()
                .map(|m| m.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        put(
            "seeds",
            self.seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put("lambda_u", fmt_f64(self.lambda_u));
        put("ensemble_size", self.ensemble_size.to_string());
        put("ensemble_elites", self.ensemble_elites.to_string());
        put("alpha", fmt_f64(s.alpha));
        put("fgen", s.fgen_name.clone());
        put("epochs", s.epochs.to_string());
        put("inner_steps", s.inner_steps.to_string());
        put("outer_steps", s.outer_steps.to_string());
        put("q_step_size", fmt_f64(s.q_step_size));
        put("policy_step_size", fmt_f64(s.policy_step_size));
        put("entropy_coef", fmt_f64(s.entropy_coef));
        put("fixed_alpha_actor", s.fixed_alpha_actor.to_string());
        put("offline_ratio", fmt_f64(s.offline_ratio));
        put("rollout_k", s.rollout_k.to_string());
        put("n_rollout_starts", s.n_rollout_starts.to_string());
        put("batch", s.batch.to_string());
        put("clip", fmt_f64(s.clip));
        put("smoothing", fmt_f64(s.smoothing));
        put(
            "expectation",
            match s.expectation {
                ExpectationMode::Exact => "exact".into(),
                ExpectationMode::Sampled => "sampled".into(),
            },
        );
        put(
            "ratio_mode",
            match s.ratio_mode {
                RatioMode::Exact => "exact".into(),
                RatioMode::Classifier => "classifier".into(),
            },
        );
        put(
            "unseen",
            match s.unseen_policy {
                UnseenPolicy::Uniform => "uniform".into(),
                UnseenPolicy::SelfLoop => "self-loop".into(),
            },
        );
        put(
            "reward_source",
            match s.reward_source {
                RewardSource::TrueReward => "true".into(),
                RewardSource::LearnedReward => "learned".into(),
            },
        );
        put("double_q", s.double_q.to_string());
        put("eval_hooks", s.eval_hooks.to_string());
        put("strip_initial_labels", s.strip_initial_labels.to_string());
        put("classifier_steps", s.classifier.steps.to_string());
        put("classifier_step_size", fmt_f64(s.classifier.step_size));
        m
    }
}

fn fmt_f64(v: f64) -> String {
    let mut s = String::new();
    write!(s, "{v}").expect("formatting f64 cannot fail");
    s
}

fn usage(line: usize, msg: String) -> CliError {
    CliError::Usage(format!("config line {line}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<T, CliError> {
    raw.parse::<T>().map_err(|_| {
        usage(
            line,
            format!(
                "key '{key}': cannot parse '{raw}' as {}",
                std::any::type_name::<T>()
            ),
        )
    })
}

fn parse_bool(line: usize, key: &str, raw: &str) -> Result<bool, CliError> {
    match raw {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(usage(
            line,
            format!("key '{key}': expected a boolean, got '{raw}'"),
        )),
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut env_set = false;
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(usage(
                line,
                format!("expected 'key = value', got '{content}'"),
            ));
        };
        let key = key.trim();
        let value = value.trim();
        if let Some(prev) = seen.insert(key.to_string(), line) {
            return Err(usage(
                line,
                format!("duplicate key '{key}' (first set on line {prev})"),
            ));
        }
        if value.is_empty() {
            return Err(usage(line, format!("key '{key}': empty value")));
        }
        match key {
            "env" => {
                cfg.env = value.to_string();
                env_set = true;
            }
            "env_seed" => cfg.env_seed = parse_num(line, key, value)?,
            "episodes" => cfg.episodes = Some(parse_num(line, key, value)?),
            "horizon" => cfg.horizon = Some(parse_num(line, key, value)?),
            "methods" => {
                let mut methods = Vec::new();
                for part in value.split(',') {
                    let name = part.trim();
                    let m = Method::parse(name).ok_or_else(|| {
                        usage(
                            line,
                            format!(
                                "key 'methods': unknown method '{name}' (expected one of {})",
                                METHOD_NAMES.join(", ")
                            ),
                        )
                    })?;
                    methods.push(m);
                }
                if methods.is_empty() {
                    return Err(usage(line, "key 'methods': empty list".into()));
                }
                cfg.methods = methods;
            }
            "seeds" => {
                let mut seeds = Vec::new();
                for part in value.split(',') {
                    seeds.push(parse_num(line, key, part.trim())?);
                }
                cfg.seeds = seeds;
            }
            "lambda_u" => cfg.lambda_u = parse_num(line, key, value)?,
            "ensemble_size" => cfg.ensemble_size = parse_num(line, key, value)?,
            "ensemble_elites" => cfg.ensemble_elites = parse_num(line, key, value)?,
            "alpha" => cfg.solver.alpha = parse_num(line, key, value)?,
            "fgen" => cfg.solver.fgen_name = value.to_string(),
            "epochs" => cfg.solver.epochs = parse_num(line, key, value)?,
            "inner_steps" => cfg.solver.inner_steps = parse_num(line, key, value)?,
            "outer_steps" => cfg.solver.outer_steps = parse_num(line, key, value)?,
            "q_step_size" => cfg.solver.q_step_size = parse_num(line, key, value)?,
            "policy_step_size" => cfg.solver.policy_step_size = parse_num(line, key, value)?,
            "entropy_coef" => cfg.solver.entropy_coef = parse_num(line, key, value)?,
            "fixed_alpha_actor" => cfg.solver.fixed_alpha_actor = parse_bool(line, key, value)?,
            "offline_ratio" => cfg.solver.offline_ratio = parse_num(line, key, value)?,
            "rollout_k" => cfg.solver.rollout_k = parse_num(line, key, value)?,
            "n_rollout_starts" => cfg.solver.n_rollout_starts = parse_num(line, key, value)?,
            "batch" => cfg.solver.batch = parse_num(line, key, value)?,
            "clip" => cfg.solver.clip = parse_num(line, key, value)?,
            "smoothing" => cfg.solver.smoothing = parse_num(line, key, value)?,
            "expectation" => {
                cfg.solver.expectation = match value {
                    "exact" => ExpectationMode::Exact,
                    "sampled" => ExpectationMode::Sampled,
                    _ => {
                        return Err(usage(
                            line,
                            format!("key 'expectation': expected exact|sampled, got '{value}'"),
                        ))
                    }
                }
            }
            "ratio_mode" => {
                cfg.solver.ratio_mode = match value {
                    "exact" => RatioMode::Exact,
                    "classifier" => RatioMode::Classifier,
                    _ => {
                        return Err(usage(
                            line,
                            format!("key 'ratio_mode': expected exact|classifier, got '{value}'"),
                        ))
                    }
                }
            }
            "unseen" => {
                cfg.solver.unseen_policy = match value {
                    "uniform" => UnseenPolicy::Uniform,
                    "self-loop" => UnseenPolicy::SelfLoop,
                    _ => {
                        return Err(usage(
                            line,
                            format!("key 'unseen': expected uniform|self-loop, got '{value}'"),
                        ))
                    }
                }
            }
            "reward_source" => {
                cfg.solver.reward_source = match value {
                    "true" => RewardSource::TrueReward,
                    "learned" => RewardSource::LearnedReward,
                    _ => {
                        return Err(usage(
                            line,
                            format!("key 'reward_source': expected true|learned, got '{value}'"),
                        ))
                    }
                }
            }
            "double_q" => cfg.solver.double_q = parse_bool(line, key, value)?,
            "eval_hooks" => cfg.solver.eval_hooks = parse_bool(line, key, value)?,
            "strip_initial_labels" => {
                cfg.solver.strip_initial_labels = parse_bool(line, key, value)?
            }
            "classifier_steps" => cfg.solver.classifier.steps = parse_num(line, key, value)?,
            "classifier_step_size" => {
                cfg.solver.classifier.step_size = parse_num(line, key, value)?
            }
            _ => {
                return Err(usage(line, format!("unknown key '{key}'")));
            }
        }
    }
    if !env_set {
        return Err(CliError::Usage(
            "config error: required key 'env' is missing".into(),
        ));
    }
    cfg.solver
        .validate()
        .map_err(|e| CliError::Usage(format!("config error: {e}")))?;
    Ok(cfg)
}
