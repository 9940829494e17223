//! Every numerical tolerance used by the verification suites, in one record.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TolerancePolicy {
    /// Inequality checks on sampled fields allow a slack of
    /// `slack_factor · h · max(1, L)` with `L` the Lipschitz budget.
    pub slack_factor: f64,
    /// Cell-wise agreement after regularization, and `s`-value preservation.
    pub regularization: f64,
    /// Regularizing a regular sum again.
    pub idempotence: f64,
    /// BiLipschitz bounds of the embedding on sampled pairs.
    pub embedding: f64,
    /// `max |det| <= Π Lip` on every cell.
    pub det_bound: f64,
    /// Relative excess allowed after Lipschitz projection.
    pub projection: f64,
    /// Volume and boundary integrals of affine maps.
    pub affine: f64,
    /// Smooth fields: `|volume − boundary| <= stokes_constant · h`.
    pub stokes_constant: f64,
    /// Algebraic identities evaluated on samples.
    pub identity: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self {
            slack_factor: 10.0,
            regularization: 1e-8,
            idempotence: 1e-12,
            embedding: 1e-9,
            det_bound: 1e-9,
            projection: 1e-6,
            affine: 1e-8,
            stokes_constant: 1.0,
            identity: 1e-12,
        }
    }
}

impl TolerancePolicy {
    /// Allowed negative slack for an inequality checked on a grid of step `h`
    /// with fields of Lipschitz budget `lip`.
    pub fn inequality(&self, h: f64, lip: f64) -> f64 {
        self.slack_factor * h * lip.max(1.0)
    }

    /// Exact rational checks allow nothing.
    pub fn exact(&self) -> f64 {
        0.0
    }
}
