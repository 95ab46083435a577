//! Per-subject weight vectors with provenance.

use serde::{Deserialize, Serialize};

/// What produced a weight vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    /// Uniform 1/n weights (unadjusted analysis).
    Uniform,
    /// Entropy-balancing calibration weights.
    Calibration,
    /// Inverse-probability-of-sampling weights from a known score.
    IpswKnown,
    /// Inverse-probability-of-sampling weights from an estimated
    /// region-membership model.
    IpswEstimated,
}

/// Weighting family tag used in output tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Weighting {
    None,
    Cw,
    Ipsw,
}

impl std::fmt::Display for Weighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Weighting::None => write!(f, "none"),
            Weighting::Cw => write!(f, "CW"),
            Weighting::Ipsw => write!(f, "IPSW"),
        }
    }
}

/// A normalized per-subject weight vector for one region.
///
/// All sampling-type weights in this crate are normalized to sum to one
/// within their region, so calibration and IPSW weights are
/// interchangeable in every estimator signature.
#[derive(Clone, Debug)]
pub struct WeightSet {
    pub region_id: u32,
    pub kind: WeightKind,
    weights: Vec<f64>,
}

impl WeightSet {
    /// Normalizes `raw` to sum to one. Entries must be positive and finite.
    pub fn normalized(region_id: u32, kind: WeightKind, raw: Vec<f64>) -> Self {
        let total: f64 = raw.iter().sum();
        assert!(
            total.is_finite() && total > 0.0,
            "weight mass must be positive and finite"
        );
        let weights = raw.iter().map(|w| w / total).collect();
        WeightSet {
            region_id,
            kind,
            weights,
        }
    }

    pub fn uniform(region_id: u32, n: usize) -> Self {
        WeightSet {
            region_id,
            kind: WeightKind::Uniform,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weighting(&self) -> Weighting {
        match self.kind {
            WeightKind::Uniform => Weighting::None,
            WeightKind::Calibration => Weighting::Cw,
            WeightKind::IpswKnown | WeightKind::IpswEstimated => Weighting::Ipsw,
        }
    }
}
