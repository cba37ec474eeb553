//! Run configuration: the TOML schema accepted by every subcommand and its
//! resolution into validated code parameters per sweep point.
//!
//! Minimal example:
//!
//! ```toml
//! [code]
//! sections = 960
//! section_size = 128
//! psk_order = 1
//! code_length = 2109        # or rate_bits_per_dim = 1.593
//!
//! [base]
//! kind = "spatially-coupled"
//! omega = 6
//! lambda = 32
//! rho = 0.0
//!
//! [channel]
//! ebn0_db = [5.0, 5.5, 6.0]
//!
//! [run]
//! trials = 200
//! master_seed = 1
//! operator = "dft"
//! ```

use serde::{Deserialize, Serialize};
use sparc_core::base_matrix::{BaseMatrix, BaseMatrixKind};
use sparc_core::design::OperatorKind;
use sparc_core::metrics::ValueErrorRule;
use sparc_core::params::{
    bits_per_dim_to_nats_per_use, derive_code_length_blocks, ebn0_to_sigma2, SparcParams,
};
use sparc_core::{DecoderConfig, McConfig};

use crate::HarnessError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub code: CodeConfig,
    pub base: BaseConfig,
    pub channel: ChannelConfig,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default)]
    pub decoder: DecoderSettings,
    #[serde(default)]
    pub se: SeSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeConfig {
    pub sections: usize,
    pub section_size: usize,
    #[serde(default = "default_psk_order")]
    pub psk_order: usize,
    /// Exactly one of `code_length` and `rate_bits_per_dim` must be given;
    /// with a target rate the length is rounded to keep the block maps valid.
    #[serde(default)]
    pub code_length: Option<usize>,
    #[serde(default)]
    pub rate_bits_per_dim: Option<f64>,
    #[serde(default = "default_power")]
    pub power: f64,
}

fn default_psk_order() -> usize {
    1
}

fn default_power() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaseConfig {
    Flat,
    SpatiallyCoupled {
        omega: usize,
        lambda: usize,
        #[serde(default)]
        rho: f64,
    },
    /// Exponentially decaying power allocation; the profile depends on the
    /// channel capacity, so it is rebuilt per sweep point.
    PowerAllocated,
    /// Base matrix given verbatim, row-major.
    Explicit { entries: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Sweep points in Eb/N0 dB.
    pub ebn0_db: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub trials: usize,
    pub master_seed: u64,
    pub operator: OperatorKind,
    /// Worker threads; zero means one per logical CPU.
    pub workers: usize,
    /// Draw a fresh design operator per trial (random-coding style) or
    /// reuse one per point (deployed-code style).
    pub fresh_operator: bool,
    pub value_error_rule: ValueErrorRule,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            trials: 200,
            master_seed: 1,
            operator: OperatorKind::DftImplicit,
            workers: 0,
            fresh_operator: true,
            value_error_rule: ValueErrorRule::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderSettings {
    pub max_iterations: usize,
    pub stop_tolerance: f64,
    pub sigma2_known: bool,
}

impl Default for DecoderSettings {
    fn default() -> Self {
        let d = DecoderConfig::default();
        DecoderSettings {
            max_iterations: d.max_iterations,
            stop_tolerance: d.stop_tolerance,
            sigma2_known: d.sigma2_known,
        }
    }
}

impl DecoderSettings {
    pub fn to_decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            max_iterations: self.max_iterations,
            stop_tolerance: self.stop_tolerance,
            sigma2_known: self.sigma2_known,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeSettings {
    /// Monte Carlo samples per scalar-functional evaluation.
    pub samples: usize,
    pub max_iterations: usize,
}

impl Default for SeSettings {
    fn default() -> Self {
        SeSettings {
            samples: McConfig::default().samples,
            max_iterations: 100,
        }
    }
}

/// A fully validated operating point: parameters, base matrix, and noise
/// variance for one Eb/N0 value.
#[derive(Debug, Clone)]
pub struct ResolvedPoint {
    pub ebn0_db: f64,
    pub params: SparcParams,
    pub base: BaseMatrix,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.channel.ebn0_db.is_empty() {
            return Err(HarnessError::Config("channel.ebn0_db must be non-empty".into()));
        }
        if self.run.trials == 0 {
            return Err(HarnessError::Config("run.trials must be at least 1".into()));
        }
        match (self.code.code_length, self.code.rate_bits_per_dim) {
            (Some(_), Some(_)) => Err(HarnessError::Config(
                "give either code.code_length or code.rate_bits_per_dim, not both".into(),
            )),
            (None, None) => Err(HarnessError::Config(
                "one of code.code_length or code.rate_bits_per_dim is required".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Row/column block counts implied by the base-matrix choice.
    fn block_shape(&self) -> Result<(usize, usize), HarnessError> {
        Ok(match &self.base {
            BaseConfig::Flat => (1, 1),
            BaseConfig::SpatiallyCoupled { omega, lambda, .. } => {
                (lambda + omega - 1, *lambda)
            }
            BaseConfig::PowerAllocated => (1, self.code.sections),
            BaseConfig::Explicit { entries } => {
                if entries.is_empty() || entries[0].is_empty() {
                    return Err(HarnessError::Config("explicit base matrix is empty".into()));
                }
                (entries.len(), entries[0].len())
            }
        })
    }

    /// Code length: explicit, or derived from the target rate rounded to a
    /// multiple of the row block count.
    pub fn resolve_code_length(&self) -> Result<usize, HarnessError> {
        let (row_blocks, _) = self.block_shape()?;
        match (self.code.code_length, self.code.rate_bits_per_dim) {
            (Some(n), None) => Ok(n),
            (None, Some(bits_per_dim)) => {
                let rate = bits_per_dim_to_nats_per_use(bits_per_dim);
                let (n, _) = derive_code_length_blocks(
                    self.code.sections,
                    self.code.section_size,
                    self.code.psk_order,
                    rate,
                    row_blocks,
                )?;
                Ok(n)
            }
            _ => unreachable!("validated on load"),
        }
    }

    /// Resolve one sweep point into parameters and a base matrix.
    pub fn resolve_point(&self, ebn0_db: f64) -> Result<ResolvedPoint, HarnessError> {
        let (row_blocks, col_blocks) = self.block_shape()?;
        let n = self.resolve_code_length()?;
        let nats = self.code.sections as f64
            * ((self.code.psk_order * self.code.section_size) as f64).ln();
        let rate_nats = nats / n as f64;
        let sigma2 = ebn0_to_sigma2(ebn0_db, self.code.power, rate_nats)?;
        let params = SparcParams::new(
            self.code.sections,
            self.code.section_size,
            self.code.psk_order,
            n,
            self.code.power,
            sigma2,
            row_blocks,
            col_blocks,
        )?;
        let base = match &self.base {
            BaseConfig::Flat => BaseMatrix::flat(self.code.power)?,
            BaseConfig::SpatiallyCoupled { omega, lambda, rho } => {
                BaseMatrix::spatially_coupled(*omega, *lambda, *rho, self.code.power)?
            }
            BaseConfig::PowerAllocated => BaseMatrix::exponential_pa(
                self.code.sections,
                self.code.power,
                params.snr().ln_1p(),
            )?,
            BaseConfig::Explicit { entries } => BaseMatrix::from_rows(entries.clone())?,
        };
        base.check_compatible(&params)?;
        Ok(ResolvedPoint {
            ebn0_db,
            params,
            base,
        })
    }

    /// Summary of the base matrix for result rows: (omega, lambda, rho).
    /// The flat profile is the trivial single-block coupling.
    pub fn coupling_summary(&self) -> (usize, usize, f64) {
        match &self.base {
            BaseConfig::Flat => (1, 1, 0.0),
            BaseConfig::SpatiallyCoupled { omega, lambda, rho } => (*omega, *lambda, *rho),
            BaseConfig::PowerAllocated | BaseConfig::Explicit { .. } => (0, 0, 0.0),
        }
    }

    pub fn base_kind_label(&self) -> &'static str {
        match &self.base {
            BaseConfig::Flat => "flat",
            BaseConfig::SpatiallyCoupled { .. } => "spatially-coupled",
            BaseConfig::PowerAllocated => "power-allocated",
            BaseConfig::Explicit { .. } => "explicit",
        }
    }
}

/// Kind tag stored in manifests next to the resolved matrix.
pub fn base_kind_of(matrix: &BaseMatrix) -> &BaseMatrixKind {
    matrix.kind()
}
