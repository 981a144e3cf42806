//! Transition datasets: behavior-policy collection, stats, JSONL
//! serialization, and the two-buffer mixing used during training.

use std::collections::BTreeSet;

use ndarray::{Array1, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{cumsum_rows, sample_from_cumrow, StochasticPolicy, TabularMDP};
use crate::occupancy::{OccupancyMeasure, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub sp: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Offline,
    Synthetic,
    /// Resampled blend of an offline and a synthetic buffer.
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub transitions: Vec<Transition>,
    pub source: DataSource,
    /// Hex digest of the canonical JSON of the generating MDP or model.
    pub env_hash: String,
    /// Episode length when the dataset has episode structure: transition i
    /// starts an episode iff i % horizon == 0. None means start labels were
    /// stripped (or never existed, as for mixed batches).
    pub horizon: Option<usize>,
}

impl TransitionDataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Drops episode-start labels. Initial-state estimates then fall back to
    /// the frequency of every visited state, mirroring datasets that do not
    /// record where episodes began.
    pub fn strip_initial_labels(&mut self) {
        self.horizon = None;
    }

    pub fn concat(&self, other: &TransitionDataset) -> TransitionDataset {
        let mut transitions = self.transitions.clone();
        transitions.extend_from_slice(&other.transitions);
        let horizon = if self.horizon == other.horizon {
            self.horizon
        } else {
            None
        };
        TransitionDataset {
            transitions,
            source: if self.source == other.source {
                self.source
            } else {
                DataSource::Mixed
            },
            env_hash: self.env_hash.clone(),
            horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub n: usize,
    pub covered_sa: BTreeSet<(usize, usize)>,
    pub covered_sas: BTreeSet<(usize, usize, usize)>,
    /// Frequency of episode-start states; falls back to the frequency of all
    /// visited states when the dataset carries no start labels.
    pub empirical_initial: Array1<f64>,
}

/// Roll `n_episodes` fixed-horizon episodes of `behavior` in `mdp`.
pub fn collect_dataset(
    mdp: &TabularMDP,
    behavior: &StochasticPolicy,
    n_episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_cum = cumsum_rows(&mdp.transition);
    let pi_cum = behavior.cumsum();
    let mut mu_cum = vec![0.0; mdp.n_states];
    let mut acc = 0.0;
    for s in 0..mdp.n_states {
        acc += mdp.initial_dist[s];
        mu_cum[s] = acc;
    }
    let mut transitions = Vec::with_capacity(n_episodes * horizon);
    for _ in 0..n_episodes {
        let mut s = sample_from_cumrow(&mu_cum, rng.random());
        for _ in 0..horizon {
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
                r: mdp.reward[[s, a, sp]],
                sp,
            });
            s = sp;
        }
    }
    Ok(TransitionDataset {
        transitions,
        source: DataSource::Offline,
        env_hash: mdp.env_hash(),
        horizon: Some(horizon),
    })
}

pub fn dataset_stats(ds: &TransitionDataset, n_states: usize) -> DatasetStats {
    let mut covered_sa = BTreeSet::new();
    let mut covered_sas = BTreeSet::new();
    let mut starts: Array1<f64> = Array1::zeros(n_states);
    let mut n_start = 0usize;
    for (i, t) in ds.transitions.iter().enumerate() {
        covered_sa.insert((t.s, t.a));
        covered_sas.insert((t.s, t.a, t.sp));
        let is_start = match ds.horizon {
            Some(h) => i % h == 0,
            None => true,
        };
        if is_start {
            starts[t.s] += 1.0;
            n_start += 1;
        }
    }
    if n_start > 0 {
        starts /= n_start as f64;
    }
    DatasetStats {
        n: ds.transitions.len(),
        covered_sa,
        covered_sas,
        empirical_initial: starts,
    }
}

/// Normalized (s,a,s') visit counts as an occupancy-measure value.
pub fn empirical_occupancy(
    ds: &TransitionDataset,
    n_states: usize,
    n_actions: usize,
) -> Result<OccupancyMeasure> {
    if ds.is_empty() {
        return Err(Error::EmptySource("empirical_occupancy"));
    }
    let mut rho = Array3::zeros((n_states, n_actions, n_states));
    let w = 1.0 / ds.transitions.len() as f64;
    for t in &ds.transitions {
        rho[[t.s, t.a, t.sp]] += w;
    }
    Ok(OccupancyMeasure {
        rho,
        provenance: Provenance::Empirical,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonlHeader {
    source: DataSource,
    env_hash: String,
    horizon: Option<usize>,
}

/// One header line, then one `{"s":..,"a":..,"r":..,"sp":..}` per transition.
pub fn write_jsonl(ds: &TransitionDataset) -> Vec<u8> {
    let mut out = Vec::new();
    let header = JsonlHeader {
        source: ds.source,
        env_hash: ds.env_hash.clone(),
        horizon: ds.horizon,
    };
    out.extend_from_slice(serde_json::to_string(&header).unwrap().as_bytes());
    out.push(b'\n');
    for t in &ds.transitions {
        out.extend_from_slice(serde_json::to_string(t).unwrap().as_bytes());
        out.push(b'\n');
    }
    out
}

pub fn read_jsonl(bytes: &[u8]) -> Result<TransitionDataset> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::MalformedLine {
        line: 0,
        reason: format!("not UTF-8: {e}"),
    })?;
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines.next().ok_or(Error::MalformedLine {
        line: 1,
        reason: "missing header".into(),
    })?;
    let header: JsonlHeader =
        serde_json::from_str(header_line).map_err(|e| Error::MalformedLine {
            line: 1,
            reason: format!("bad header: {e}"),
        })?;
    let mut transitions = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let t: Transition = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            reason: e.to_string(),
        })?;
        transitions.push(t);
    }
    Ok(TransitionDataset {
        transitions,
        source: header.source,
        env_hash: header.env_hash,
        horizon: header.horizon,
    })
}

/// round(batch * offline_ratio) draws from d_r plus the remainder from d_m,
/// each uniform with replacement.
pub fn mixed_batch(
    d_r: &TransitionDataset,
    d_m: &TransitionDataset,
    offline_ratio: f64,
    batch: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    if !(0.0..=1.0).contains(&offline_ratio) {
        return Err(Error::InvalidInput(format!(
            "offline_ratio {offline_ratio} outside [0,1]"
        )));
    }
    let n_offline = (batch as f64 * offline_ratio).round() as usize;
    let n_synth = batch - n_offline;
    if n_offline > 0 && d_r.is_empty() {
        return Err(Error::EmptySource("offline buffer"));
    }
    if n_synth > 0 && d_m.is_empty() {
        return Err(Error::EmptySource("synthetic buffer"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(batch);
    for _ in 0..n_offline {
        transitions.push(d_r.transitions[rng.random_range(0..d_r.len())]);
    }
    for _ in 0..n_synth {
        transitions.push(d_m.transitions[rng.random_range(0..d_m.len())]);
    }
    Ok(TransitionDataset {
        transitions,
        source: DataSource::Mixed,
        env_hash: d_r.env_hash.clone(),
        horizon: None,
    })
}
