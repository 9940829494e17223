//! Serializable configuration of a complete run. Every section has defaults,
//! so a config file only needs the keys it changes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::density::BaseField;
use crate::dichotomy::{DichotomyParams, EmbeddingSpec};
use crate::error::{Error, Result};
use crate::hierarchy::HierarchyParams;
use crate::rational::{self, Rational};
use crate::solver::SolverConfig;
use crate::suites::SuiteContext;
use crate::tolerance::TolerancePolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub base: BaseField,
    /// Refine orders `0..=depth`.
    pub depth: u32,
    /// `ε` of the discrepancy constraints, as `num/den`.
    pub eps: String,
    /// Cells along the long axis of the root rectangle for the sample CSV.
    pub sample_cells: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            base: BaseField::default(),
            depth: 1,
            eps: "0".into(),
            sample_cells: 576,
        }
    }
}

impl DensityConfig {
    pub fn eps(&self) -> Result<Rational> {
        rational::parse(&self.eps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    /// Cells per axis of the unit-cube grids in the verification suites.
    pub grid_cells: usize,
    pub trials: usize,
    pub policy: TolerancePolicy,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            grid_cells: 128,
            trials: 100,
            policy: TolerancePolicy::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DichotomyConfig {
    /// Registered embedding name: `identity`, `affine` or `random-sum`.
    pub embedding: String,
    pub eps: f64,
    pub phi: f64,
    /// Classification depth; must satisfy `(1+φ)^k0 >= l_bound²`.
    pub k0: u32,
    pub l_bound: f64,
    pub samples_per_side: usize,
    /// Affine embedding, `num/den` strings; empty for the built-in shear.
    pub matrix: Vec<String>,
    pub offset: Vec<String>,
    /// Random-sum embedding.
    pub terms: usize,
    pub budget: f64,
    pub grid_cells: usize,
}

impl Default for DichotomyConfig {
    fn default() -> Self {
        Self {
            embedding: "identity".into(),
            eps: 0.1,
            phi: 0.5,
            k0: 1,
            l_bound: 1.0,
            samples_per_side: 4,
            matrix: Vec::new(),
            offset: Vec::new(),
            terms: 2,
            budget: 1.0,
            grid_cells: 64,
        }
    }
}

impl DichotomyConfig {
    pub fn params(&self) -> Result<DichotomyParams> {
        DichotomyParams::with_depth(self.eps, self.phi, self.k0, self.l_bound, self.samples_per_side)
    }

    pub fn spec(&self, d: usize, seed: u64) -> EmbeddingSpec {
        EmbeddingSpec {
            d,
            matrix: self.matrix.clone(),
            offset: self.offset.clone(),
            terms: self.terms,
            budget: self.budget,
            grid_cells: self.grid_cells,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub hierarchy: HierarchyParams,
    pub budgets: Vec<f64>,
    pub depths: Vec<u32>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            hierarchy: HierarchyParams::new(2, 6, 2, 2).expect("valid defaults"),
            budgets: vec![1.0, 2.0, 4.0, 8.0],
            depths: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; the command line may override it.
    pub output: Option<PathBuf>,
    pub hierarchy: HierarchyParams,
    pub density: DensityConfig,
    pub fields: FieldConfig,
    pub dichotomy: DichotomyConfig,
    pub solver: SolverConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: None,
            hierarchy: HierarchyParams::new(2, 6, 4, 2).expect("valid defaults"),
            density: DensityConfig::default(),
            fields: FieldConfig::default(),
            dichotomy: DichotomyConfig::default(),
            solver: SolverConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.density.depth > self.hierarchy.max_order() {
            return bad(format!(
                "density.depth = {} exceeds hierarchy.k_max = {}",
                self.density.depth,
                self.hierarchy.max_order()
            ));
        }
        let eps = self.density.eps()?;
        if eps < rational::int(0) || eps >= rational::int(1) {
            return bad(format!("density.eps = {} must lie in [0, 1)", self.density.eps));
        }
        if self.density.sample_cells == 0 || self.fields.grid_cells == 0 {
            return bad("density.sample_cells and fields.grid_cells must be positive".into());
        }
        self.solver.validate()?;
        if let Some(&k) = self.sweep.depths.iter().find(|&&k| k > self.sweep.hierarchy.max_order()) {
            return bad(format!(
                "sweep depth {k} exceeds sweep.hierarchy.k_max = {}",
                self.sweep.hierarchy.max_order()
            ));
        }
        if let Some(s) = self.sweep.budgets.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return bad(format!("sweep budget {s} must be finite and non-negative"));
        }
        self.dichotomy.params()?;
        Ok(())
    }

    pub fn suite_context(&self) -> SuiteContext {
        SuiteContext {
            params: self.hierarchy.clone(),
            k0: self.density.depth,
            seed: self.seed,
            trials: self.fields.trials,
            grid_cells: self.fields.grid_cells,
            policy: self.fields.policy.clone(),
        }
    }
}
