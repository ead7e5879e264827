use serde::{Deserialize, Serialize};

use super::roc::{roc_points, RocPoint};
use crate::error::{Error, Result};

/// Fleet fault rate and the per-vehicle costs (CNY) of a missed fault and of
/// an inspection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostParams {
    pub p: f64,
    pub c_f: f64,
    pub c_r: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            p: 0.00038,
            c_f: 5_000_000.0,
            c_r: 8_000.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidConfig(format!("fault rate p must be in [0,1], got {}", self.p)));
        }
        if !(self.c_f >= 0.0 && self.c_r >= 0.0 && self.c_f.is_finite() && self.c_r.is_finite()) {
            return Err(Error::InvalidConfig("costs must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Expected direct cost per vehicle at an operating point: missed faults
/// cost `c_f`, every flagged vehicle (true or false alarm) costs `c_r`.
pub fn expected_cost(params: &CostParams, q_tp: f64, q_fp: f64) -> f64 {
    let CostParams { p, c_f, c_r } = *params;
    p * (1.0 - q_tp) * c_f + (p * q_tp + (1.0 - p) * q_fp) * c_r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostOptimum {
    pub cost: f64,
    pub point: RocPoint,
}

/// Cheapest operating point of the ROC sweep; ties go to the lowest `q_fp`.
pub fn min_expected_cost(scores: &[f64], labels: &[u8], params: &CostParams) -> Result<CostOptimum> {
    let pts = roc_points(scores, labels)?;
    Ok(cheapest(&pts, params))
}

pub(crate) fn cheapest(points: &[RocPoint], params: &CostParams) -> CostOptimum {
    let mut best = CostOptimum {
        cost: f64::INFINITY,
        point: points[0],
    };
    for &pt in points {
        let c = expected_cost(params, pt.q_tp, pt.q_fp);
        if c < best.cost || (c == best.cost && pt.q_fp < best.point.q_fp) {
            best = CostOptimum { cost: c, point: pt };
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_checks() {
        let d = CostParams::default();
        assert!((expected_cost(&d, 0.0, 0.0) - 1900.0).abs() < 1e-9);
        assert!((expected_cost(&d, 1.0, 1.0) - 8000.0).abs() < 1e-9);
        assert!((expected_cost(&d, 1.0, 0.0) - 3.04).abs() < 1e-9);
    }

    #[test]
    fn optimum_examples() {
        let d = CostParams::default();
        let perfect = min_expected_cost(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], &d).unwrap();
        assert!((perfect.cost - 3.04).abs() < 1e-9);
        assert_eq!(perfect.point.threshold, 0.8);
        let useless = min_expected_cost(&[0.5; 4], &[0, 1, 0, 1], &d).unwrap();
        assert!((useless.cost - 1900.0).abs() < 1e-9);
        assert_eq!((useless.point.q_tp, useless.point.q_fp), (0.0, 0.0));
    }

    #[test]
    fn ties_prefer_fewer_false_alarms() {
        let free = CostParams { p: 0.5, c_f: 0.0, c_r: 0.0 };
        let o = min_expected_cost(&[0.1, 0.9, 0.4], &[0, 1, 1], &free).unwrap();
        assert_eq!(o.point.q_fp, 0.0);
        assert_eq!(o.point.threshold, f64::INFINITY);
    }
}
