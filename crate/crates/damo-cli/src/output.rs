//! File emission. Every artifact is staged to a sibling temp file and
//! renamed into place so readers never observe a half-written report.

use std::fs;
use std::path::Path;

use damo_core::solver::TrainingTrace;

use crate::experiment::ExperimentReport;
use crate::CliError;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn trace_csv_bytes(trace: &TrainingTrace) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "epoch",
        "inner_obj",
        "surrogate",
        "j_real",
        "j_model",
        "mean_q_eval",
        "fp_residual",
    ])?;
    for r in &trace.records {
        w.write_record([
            r.epoch.to_string(),
            r.inner_obj.to_string(),
            r.surrogate.to_string(),
            r.j_real.to_string(),
            r.j_model.to_string(),
            r.mean_q_eval.to_string(),
            r.fp_residual.to_string(),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| CliError::Other(e.to_string()))?)
}

pub fn report_json_bytes(report: &ExperimentReport) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Flat per-(method, seed) rows; the config echo lives in the JSON form.
pub fn report_csv_bytes(report: &ExperimentReport) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "env",
        "method",
        "seed",
        "j_real",
        "j_model",
        "ood_state_rate",
        "tv_model_vs_real",
        "tv_synth_vs_offline",
    ])?;
    for m in &report.results {
        w.write_record([
            report.env.clone(),
            m.method.clone(),
            m.seed.to_string(),
            m.j_real.to_string(),
            m.j_model.to_string(),
            m.ood_state_rate.to_string(),
            m.tv_model_vs_real.to_string(),
            m.tv_synth_vs_offline.to_string(),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| CliError::Other(e.to_string()))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use damo_core::solver::EpochRecord;
    use std::collections::BTreeMap;

    #[test]
    fn atomic_write_replaces_content_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/report.json");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        let entries: Vec<_> = fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(entries.len(), 1);
    }

    #[test]
    fn trace_csv_has_header_and_nan_passthrough() {
        let trace = TrainingTrace {
            records: vec![EpochRecord {
                epoch: 0,
                inner_obj: 1.5,
                surrogate: f64::NAN,
                j_real: f64::NAN,
                j_model: 0.25,
                mean_q_eval: -2.0,
                fp_residual: 1e-7,
            }],
        };
        let text = String::from_utf8(trace_csv_bytes(&trace).unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,inner_obj,surrogate,j_real,j_model,mean_q_eval,fp_residual"
        );
        assert_eq!(lines.next().unwrap(), "0,1.5,NaN,NaN,0.25,-2,0.0000001");
    }

    #[test]
    fn report_csv_is_one_row_per_result() {
        let report = ExperimentReport {
            env: "three-road".into(),
            config: BTreeMap::new(),
            seeds: vec![0],
            results: vec![crate::experiment::MethodMetrics {
                method: "bc".into(),
                seed: 0,
                j_real: 0.5,
                j_model: 0.5,
                ood_state_rate: 0.0,
                tv_model_vs_real: 0.1,
                tv_synth_vs_offline: 0.2,
            }],
        };
        let text = String::from_utf8(report_csv_bytes(&report).unwrap()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("three-road,bc,0,"));
    }
}
