//! The continual-learning strategy pool: anchored quadratic penalties with
//! pluggable importance (L2, EWC, online EWC, SI, MAS) and replay through
//! a bounded memory, either as extra training data (naive rehearsal) or as
//! gradient constraints (GEM).

mod gem;
mod importance;
mod memory;

pub use gem::{
    constraints_satisfied, gem_project, solve_dual_qp, GemOutcome, QpSolution, CONSTRAINT_TOL,
    QP_MAX_ITER, QP_TOL,
};
pub use importance::{
    fisher_importance, l2_importance, mas_importance, penalty_gradient, penalty_term,
    ImportanceMap, PathIntegral,
};
pub use memory::{MemoryBuffer, TaskSlice};

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientMap, ParameterSet};
use crate::error::{Error, Result};

/// Strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    None,
    L2,
    Ewc,
    Ewcol,
    Si,
    Mas,
    Nr,
    Gem,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::None,
        StrategyKind::L2,
        StrategyKind::Ewc,
        StrategyKind::Ewcol,
        StrategyKind::Si,
        StrategyKind::Mas,
        StrategyKind::Nr,
        StrategyKind::Gem,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            StrategyKind::None => "none",
            StrategyKind::L2 => "l2",
            StrategyKind::Ewc => "ewc",
            StrategyKind::Ewcol => "ewcol",
            StrategyKind::Si => "si",
            StrategyKind::Mas => "mas",
            StrategyKind::Nr => "nr",
            StrategyKind::Gem => "gem",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "none" => Ok(StrategyKind::None),
            "l2" => Ok(StrategyKind::L2),
            "ewc" => Ok(StrategyKind::Ewc),
            "ewcol" => Ok(StrategyKind::Ewcol),
            "si" => Ok(StrategyKind::Si),
            "mas" => Ok(StrategyKind::Mas),
            "nr" => Ok(StrategyKind::Nr),
            "gem" => Ok(StrategyKind::Gem),
            other => Err(Error::Config(format!("unknown strategy tag {other:?}"))),
        }
    }

    pub fn is_regularization(&self) -> bool {
        matches!(
            self,
            StrategyKind::L2
                | StrategyKind::Ewc
                | StrategyKind::Ewcol
                | StrategyKind::Si
                | StrategyKind::Mas
        )
    }

    pub fn is_replay(&self) -> bool {
        matches!(self, StrategyKind::Nr | StrategyKind::Gem)
    }

    /// Per-strategy default for the penalty coefficient.
    pub fn default_lambda(&self) -> f64 {
        match self {
            StrategyKind::L2 => 0.01,
            StrategyKind::Ewc | StrategyKind::Ewcol => 100.0,
            StrategyKind::Si | StrategyKind::Mas => 1.0,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Penalty coefficient for the regularization strategies.
    pub lambda: f64,
    /// Cap on the number of Fisher samples (EWC variants).
    pub fisher_samples: usize,
    /// SI damping term in the consolidation denominator.
    pub si_damping: f64,
    /// Replay memory capacity in rows (NR, GEM).
    pub memory_capacity: usize,
    /// Ridge added to the GEM dual, stabilizing near-collinear memory
    /// gradients.
    pub gem_ridge: f64,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        StrategyConfig {
            kind,
            lambda: kind.default_lambda(),
            fisher_samples: 1024,
            si_damping: 1e-3,
            memory_capacity: 512,
            gem_ridge: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if self.si_damping <= 0.0 {
            return Err(Error::Config("si_damping must be > 0".into()));
        }
        if self.gem_ridge < 0.0 {
            return Err(Error::Config("gem_ridge must be >= 0".into()));
        }
        if matches!(self.kind, StrategyKind::Ewc | StrategyKind::Ewcol) && self.fisher_samples == 0
        {
            return Err(Error::Config("fisher_samples must be >= 1".into()));
        }
        if self.kind == StrategyKind::Gem && self.memory_capacity == 0 {
            return Err(Error::Config(
                "gem needs a positive memory capacity".into(),
            ));
        }
        Ok(())
    }
}

/// Per-strategy persistent state carried across tasks.
#[derive(Debug, Clone)]
pub struct StrategyState {
    pub config: StrategyConfig,
    pub importance: ImportanceMap,
    /// Frozen parameters at the end of the previous task; the penalty
    /// anchor. `None` before any task completes.
    pub anchor: Option<ParameterSet>,
    pub path: PathIntegral,
    pub memory: MemoryBuffer,
}

impl StrategyState {
    pub fn new(config: StrategyConfig) -> Result<Self> {
        config.validate()?;
        let memory = MemoryBuffer::new(config.memory_capacity);
        Ok(StrategyState {
            config,
            importance: ImportanceMap::empty(),
            anchor: None,
            path: PathIntegral::default(),
            memory,
        })
    }
}

/// One flattened unregularized-loss gradient per past-task memory slice,
/// evaluated at the current parameters. `grad_of_slice` computes the
/// gradient of the whole slice as one batch.
pub fn gem_reference_gradients<F>(
    memory: &MemoryBuffer,
    grad_of_slice: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&TaskSlice) -> Result<GradientMap>,
{
    if memory.slices().is_empty() {
        return Err(Error::Train("gem reference gradients need past tasks".into()));
    }
    memory
        .slices()
        .iter()
        .map(|slice| {
            if slice.samples.is_empty() {
                return Err(Error::Train(format!(
                    "memory slice for task {} is empty",
                    slice.task_id
                )));
            }
            Ok(grad_of_slice(slice)?.flatten())
        })
        .collect()
}
