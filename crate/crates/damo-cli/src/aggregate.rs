//! Cross-seed aggregation of report files into a mean ± std table.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::experiment::ExperimentReport;
use crate::CliError;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AggregateRow {
    pub env: String,
    pub method: String,
    pub n: usize,
    pub j_real_mean: f64,
    pub j_real_std: f64,
    pub j_model_mean: f64,
    pub j_model_std: f64,
    pub ood_state_rate_mean: f64,
    pub ood_state_rate_std: f64,
    pub tv_model_vs_real_mean: f64,
    pub tv_model_vs_real_std: f64,
    pub tv_synth_vs_offline_mean: f64,
    pub tv_synth_vs_offline_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Group every result row by (env, method) and reduce each metric to mean
/// and sample standard deviation across all matched reports and seeds.
pub fn aggregate(reports: &[ExperimentReport]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, String), Vec<[f64; 5]>> = BTreeMap::new();
    for report in reports {
        for m in &report.results {
            groups
                .entry((report.env.clone(), m.method.clone()))
                .or_default()
                .push([
                    m.j_real,
                    m.j_model,
                    m.ood_state_rate,
                    m.tv_model_vs_real,
                    m.tv_synth_vs_offline,
                ]);
        }
    }
    groups
        .into_iter()
        .map(|((env, method), rows)| {
            let col = |i: usize| rows.iter().map(|r| r[i]).collect::<Vec<_>>();
            let (j_real_mean, j_real_std) = mean_std(&col(0));
            let (j_model_mean, j_model_std) = mean_std(&col(1));
            let (ood_mean, ood_std) = mean_std(&col(2));
            let (tvm_mean, tvm_std) = mean_std(&col(3));
            let (tvs_mean, tvs_std) = mean_std(&col(4));
            AggregateRow {
                env,
                method,
                n: rows.len(),
                j_real_mean,
                j_real_std,
                j_model_mean,
                j_model_std,
                ood_state_rate_mean: ood_mean,
                ood_state_rate_std: ood_std,
                tv_model_vs_real_mean: tvm_mean,
                tv_model_vs_real_std: tvm_std,
                tv_synth_vs_offline_mean: tvs_mean,
                tv_synth_vs_offline_std: tvs_std,
            }
        })
        .collect()
}

pub fn aggregate_csv_bytes(rows: &[AggregateRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "env",
        "method",
        "n",
        "j_real_mean",
        "j_real_std",
        "j_model_mean",
        "j_model_std",
        "ood_state_rate_mean",
        "ood_state_rate_std",
        "tv_model_vs_real_mean",
        "tv_model_vs_real_std",
        "tv_synth_vs_offline_mean",
        "tv_synth_vs_offline_std",
    ])?;
    for r in rows {
        w.write_record([
            r.env.clone(),
            r.method.clone(),
            r.n.to_string(),
            r.j_real_mean.to_string(),
            r.j_real_std.to_string(),
            r.j_model_mean.to_string(),
            r.j_model_std.to_string(),
            r.ood_state_rate_mean.to_string(),
            r.ood_state_rate_std.to_string(),
            r.tv_model_vs_real_mean.to_string(),
            r.tv_model_vs_real_std.to_string(),
            r.tv_synth_vs_offline_mean.to_string(),
            r.tv_synth_vs_offline_std.to_string(),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| CliError::Other(e.to_string()))?)
}
