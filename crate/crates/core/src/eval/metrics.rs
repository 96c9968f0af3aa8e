use serde::{Deserialize, Serialize};

use crate::data::sim::{norm, sub};
use crate::data::Vec3;
use crate::error::{contract, Result};

/// Displacement errors in millimetres.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ade_ml: f64,
    pub fde_ml: f64,
    pub ade_bo20: f64,
    pub fde_bo20: f64,
}

/// Mean and final Euclidean error between equal-length paths, in input units.
pub fn ade_fde(pred: &[Vec3], truth: &[Vec3]) -> Result<(f64, f64)> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(contract(format!(
            "ade_fde needs equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let errs: Vec<f64> = pred.iter().zip(truth).map(|(a, b)| norm(sub(*a, *b))).collect();
    Ok((errs.iter().sum::<f64>() / errs.len() as f64, errs[errs.len() - 1]))
}
