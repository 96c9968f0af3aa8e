//! Evaluation suites as run from the command line, with their per-run
//! records and summary tables.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::autonomy::MethodSummary;
use super::baseline::VanillaLstm;
use super::intent::IntentReport;
use super::metrics::{ade_fde, Metrics};
use crate::data::sim::stream_rng;
use crate::data::{featurize, Trajectory};
use crate::error::{contract, Result};
use crate::model::RtModel;
use crate::predict::{predict_most_likely_batch, sample_trajectories};
use crate::train::{eval_points, future_positions};

/// Errors of one evaluation window, millimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub traj_id: u64,
    pub t_obs: usize,
    pub ade_ml: f64,
    pub fde_ml: f64,
    pub ade_bo20: f64,
    pub fde_bo20: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ade_baseline: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fde_baseline: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdeFdeReport {
    pub windows: usize,
    pub rt: Metrics,
    /// Most-likely `(ade, fde)` of the vanilla baseline.
    pub baseline: Option<(f64, f64)>,
    pub records: Vec<WindowRecord>,
}

/// Displacement errors on fixed windows of `trajs`. Best-of-`k` takes the
/// minimum over the most-likely path and `k - 1` sampled paths, separately
/// for ADE and FDE, so it never exceeds the most-likely error.
pub fn adefde_suite(
    model: &RtModel,
    baseline: Option<&VanillaLstm>,
    trajs: &[Trajectory],
    k: usize,
    seed: u64,
) -> Result<AdeFdeReport> {
    if k == 0 {
        return Err(contract("best-of-k needs k >= 1"));
    }
    let horizon = model.config.horizon;
    let dt = model.config.dt;
    let mut windows = Vec::new();
    for t in trajs {
        for t_obs in eval_points(t, horizon) {
            windows.push((t.id, t_obs, featurize(t, t_obs, horizon)?));
        }
    }
    if windows.is_empty() {
        return Err(contract("no trajectory is long enough to evaluate"));
    }
    let mut records = Vec::with_capacity(windows.len());
    for (ci, chunk) in windows.chunks(256).enumerate() {
        let xs: Vec<&[[f64; 9]]> = chunk.iter().map(|w| w.2.x.as_slice()).collect();
        let origins: Vec<_> = chunk.iter().map(|w| w.2.origin).collect();
        let ml = predict_most_likely_batch(model, &xs, &origins)?;
        let base = match baseline {
            Some(b) => Some(b.predict_batch(&xs, &origins)?),
            None => None,
        };
        for (i, ((id, t_obs, s), pred)) in chunk.iter().zip(&ml).enumerate() {
            let truth = future_positions(s, dt);
            let (ade_ml, fde_ml) = ade_fde(&pred.positions, &truth)?;
            let (mut ade_b, mut fde_b) = (ade_ml, fde_ml);
            if k > 1 {
                let mut rng = stream_rng(seed, (ci * 256 + i) as u64);
                for r in sample_trajectories(model, &s.x, s.origin, k - 1, &mut rng)? {
                    let (a, f) = ade_fde(&r.positions, &truth)?;
                    ade_b = ade_b.min(a);
                    fde_b = fde_b.min(f);
                }
            }
            let (ade_baseline, fde_baseline) = match &base {
                Some(b) => {
                    let (a, f) = ade_fde(&b[i], &truth)?;
                    (Some(1000.0 * a), Some(1000.0 * f))
                }
                None => (None, None),
            };
            records.push(WindowRecord {
                traj_id: *id,
                t_obs: *t_obs,
                ade_ml: 1000.0 * ade_ml,
                fde_ml: 1000.0 * fde_ml,
                ade_bo20: 1000.0 * ade_b,
                fde_bo20: 1000.0 * fde_b,
                ade_baseline,
                fde_baseline,
            });
        }
    }
    let n = records.len() as f64;
    let mean = |f: &dyn Fn(&WindowRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let rt = Metrics {
        ade_ml: mean(&|r| r.ade_ml),
        fde_ml: mean(&|r| r.fde_ml),
        ade_bo20: mean(&|r| r.ade_bo20),
        fde_bo20: mean(&|r| r.fde_bo20),
    };
    let baseline = baseline.map(|_| {
        (
            mean(&|r| r.ade_baseline.unwrap_or(f64::NAN)),
            mean(&|r| r.fde_baseline.unwrap_or(f64::NAN)),
        )
    });
    Ok(AdeFdeReport {
        windows: records.len(),
        rt,
        baseline,
        records,
    })
}

pub fn adefde_table(r: &AdeFdeReport) -> String {
    let mut s = format!(
        "windows {}\n{:<14}{:>10}{:>10}{:>10}{:>10}\n",
        r.windows, "method", "ade_bo20", "fde_bo20", "ade_ml", "fde_ml"
    );
    s += &format!(
        "{:<14}{:>10.2}{:>10.2}{:>10.2}{:>10.2}\n",
        "rt", r.rt.ade_bo20, r.rt.fde_bo20, r.rt.ade_ml, r.rt.fde_ml
    );
    if let Some((a, f)) = r.baseline {
        s += &format!("{:<14}{:>10}{:>10}{:>10.2}{:>10.2}\n", "vanilla-lstm", "-", "-", a, f);
    }
    s
}

pub fn autonomy_table(rows: &[MethodSummary]) -> String {
    let mut s = format!(
        "{:<14}{:>6}{:>6}{:>16}{:>16}{:>16}\n",
        "mode", "done", "disc", "time s", "inputs", "path m"
    );
    for m in rows {
        s += &format!(
            "{:<14}{:>6}{:>6}{:>9.2} ± {:<4.2}{:>9.1} ± {:<4.1}{:>9.3} ± {:<4.3}\n",
            m.mode.to_string(),
            m.completed,
            m.discarded,
            m.time_mean,
            m.time_std,
            m.inputs_mean,
            m.inputs_std,
            m.path_mean,
            m.path_std
        );
    }
    s
}

pub fn intent_table(rows: &[IntentReport]) -> String {
    let mut s = format!("{:<10}{:>10}", "method", "accuracy");
    if let Some(r) = rows.first() {
        for (eps, _) in &r.robustness {
            s += &format!("{:>12}", format!("acc({eps})"));
        }
    }
    s += &format!("{:>10}\n", "adapt");
    for r in rows {
        let name = match r.method {
            super::intent::Estimator::Rt => "rt",
            super::intent::Estimator::Maxent => "maxent",
        };
        s += &format!("{:<10}{:>10.3}", name, r.accuracy);
        for (_, a) in &r.robustness {
            s += &format!("{:>12.3}", a);
        }
        s += &format!("{:>10.3}\n", r.adaptability);
    }
    s
}

/// Writes one JSON record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        writeln!(out, "{}", serde_json::to_string(&r).expect("record serialises"))?;
    }
    out.flush()?;
    Ok(())
}
