//! Selective state-space primitives and the M-Mamba block.

mod block;
mod conv;
pub mod discretize;
mod lti;
mod scan;

pub use block::{DParam, MambaBlock, SsmParams};
pub use conv::causal_depthwise_conv;
pub use discretize::{discretize, zoh_factor, SERIES_THRESHOLD};
pub use lti::lti_convolution_reference;
pub use scan::{selective_scan_kernel, selective_scan_values};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the state matrix `A` is parameterized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AMode {
    /// One `(E, S)` matrix, a separate diagonal per inner feature.
    FeatureSpecific,
    /// A single length-`S` diagonal shared by every feature.
    FeatureIndependent,
}

/// How the skip term `D` is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DMode {
    /// A learned vector, constant over tokens.
    Free,
    /// A per-token linear map of the scan input.
    DataDependent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MambaBlockConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub expand: usize,
    pub use_conv: bool,
    pub conv_kernel: usize,
    pub use_z_branch: bool,
    pub a_mode: AMode,
    pub d_mode: DMode,
    /// Rank of the Δ projection; `ceil(E/16)` when unset.
    pub dt_rank: Option<usize>,
}

impl Default for MambaBlockConfig {
    fn default() -> Self {
        MambaBlockConfig {
            d_model: 128,
            d_state: 16,
            expand: 1,
            use_conv: false,
            conv_kernel: 4,
            use_z_branch: true,
            a_mode: AMode::FeatureIndependent,
            d_mode: DMode::DataDependent,
            dt_rank: None,
        }
    }
}

impl MambaBlockConfig {
    pub fn inner_dim(&self) -> usize {
        self.d_model * self.expand
    }

    pub fn resolved_dt_rank(&self) -> usize {
        self.dt_rank.unwrap_or_else(|| self.d_model.div_ceil(16))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.d_model == 0 {
            return bad("d_model must be positive");
        }
        if self.expand == 0 {
            return bad("expand must be positive");
        }
        if self.d_state == 0 {
            return bad("d_state must be positive");
        }
        if self.conv_kernel == 0 {
            return bad("conv_kernel must be at least 1");
        }
        if self.dt_rank == Some(0) {
            return bad("dt_rank must be positive");
        }
        Ok(())
    }

    /// Same sizes with the structural flags of `case`.
    pub fn with_case(&self, case: AblationCase) -> Self {
        let (use_conv, use_z_branch, a_mode, d_mode) = case.flags();
        MambaBlockConfig {
            use_conv,
            use_z_branch,
            a_mode,
            d_mode,
            ..self.clone()
        }
    }
}

/// The block variants compared in the M-Mamba ablation, from the vanilla
/// Mamba block to the final design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationCase {
    Vanilla,
    Case1,
    Case2,
    Case3,
    Case4,
    Case5,
    CMamba,
}

impl AblationCase {
    pub const ALL: [AblationCase; 7] = [
        AblationCase::Vanilla,
        AblationCase::Case1,
        AblationCase::Case2,
        AblationCase::Case3,
        AblationCase::Case4,
        AblationCase::Case5,
        AblationCase::CMamba,
    ];

    /// `(use_conv, use_z_branch, a_mode, d_mode)`.
    pub fn flags(self) -> (bool, bool, AMode, DMode) {
        use AMode::*;
        use DMode::*;
        match self {
            AblationCase::Vanilla => (true, true, FeatureSpecific, Free),
            AblationCase::Case1 => (false, true, FeatureSpecific, Free),
            AblationCase::Case2 => (true, false, FeatureSpecific, Free),
            AblationCase::Case3 => (false, false, FeatureSpecific, Free),
            AblationCase::Case4 => (true, true, FeatureIndependent, Free),
            AblationCase::Case5 => (true, true, FeatureIndependent, DataDependent),
            AblationCase::CMamba => (false, true, FeatureIndependent, DataDependent),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AblationCase::Vanilla => "vanilla",
            AblationCase::Case1 => "case1",
            AblationCase::Case2 => "case2",
            AblationCase::Case3 => "case3",
            AblationCase::Case4 => "case4",
            AblationCase::Case5 => "case5",
            AblationCase::CMamba => "cmamba",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.label() == s)
    }
}
