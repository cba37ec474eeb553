//! Base matrices: the nonnegative variance profiles that define flat,
//! spatially coupled, and power-allocated design matrices.
//!
//! Entries are stored in power units. The average of all entries equals the
//! power constraint `P`; the `1/L` scaling happens when the design operator
//! is sampled.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SparcError};
use crate::params::SparcParams;

/// Which construction produced a [`BaseMatrix`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseMatrixKind {
    /// 1x1 matrix `[P]`; an i.i.d. design.
    Flat,
    /// Band-diagonal coupling profile with width `omega`, length `lambda`,
    /// and off-band power fraction `rho`.
    SpatiallyCoupled { omega: usize, lambda: usize, rho: f64 },
    /// 1xL exponentially decaying power allocation.
    PowerAllocated,
    /// Loaded verbatim from a configuration file.
    Explicit,
}

/// Row-block by column-block variance profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMatrix {
    row_blocks: usize,
    col_blocks: usize,
    /// Row-major entries, length `row_blocks * col_blocks`.
    entries: Vec<f64>,
    kind: BaseMatrixKind,
    /// Average power the profile was built for.
    power: f64,
}

/// Per-row and per-column averages of a base matrix, with their extremes.
///
/// The extremes bound the effective signal-to-noise measure of every column
/// block, which is what makes the analytical error bounds computable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowColAverages {
    pub row_avgs: Vec<f64>,
    pub col_avgs: Vec<f64>,
    /// Minimum over all row and column averages.
    pub xi1: f64,
    /// Maximum over all row and column averages.
    pub xi2: f64,
}

impl BaseMatrix {
    /// Trivial 1x1 profile `[P]`.
    pub fn flat(power: f64) -> Result<Self> {
        if power <= 0.0 || !power.is_finite() {
            return Err(SparcError::invalid("power must be positive and finite"));
        }
        Ok(BaseMatrix {
            row_blocks: 1,
            col_blocks: 1,
            entries: vec![power],
            kind: BaseMatrixKind::Flat,
            power,
        })
    }

    /// Band-diagonal coupling profile.
    ///
    /// The matrix has `lambda + omega - 1` row blocks and `lambda` column
    /// blocks. Band entries (rows `c..c+omega-1` of column `c`) carry
    /// `(1-rho) P (lambda+omega-1)/omega`; all other entries carry
    /// `rho P (lambda+omega-1)/(lambda-1)`.
    pub fn spatially_coupled(omega: usize, lambda: usize, rho: f64, power: f64) -> Result<Self> {
        if omega < 1 {
            return Err(SparcError::invalid("coupling width must be at least 1"));
        }
        if lambda + 1 < 2 * omega {
            return Err(SparcError::invalid(format!(
                "coupling length {lambda} must be at least 2*omega-1 = {}",
                2 * omega - 1
            )));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(SparcError::invalid("rho must lie in [0, 1)"));
        }
        if rho > 0.0 && lambda < 2 {
            return Err(SparcError::invalid(
                "rho > 0 needs at least two column blocks to place off-band power",
            ));
        }
        if power <= 0.0 || !power.is_finite() {
            return Err(SparcError::invalid("power must be positive and finite"));
        }
        let row_blocks = lambda + omega - 1;
        let col_blocks = lambda;
        let band = (1.0 - rho) * power * row_blocks as f64 / omega as f64;
        let off = if rho > 0.0 {
            rho * power * row_blocks as f64 / (lambda - 1) as f64
        } else {
            0.0
        };
        let mut entries = vec![off; row_blocks * col_blocks];
        for c in 0..col_blocks {
            for r in c..c + omega {
                entries[r * col_blocks + c] = band;
            }
        }
        Ok(BaseMatrix {
            row_blocks,
            col_blocks,
            entries,
            kind: BaseMatrixKind::SpatiallyCoupled { omega, lambda, rho },
            power,
        })
    }

    /// 1xL exponentially decaying power allocation:
    /// `W_l = L P (e^{C/L} - 1)/(1 - e^{-C}) e^{-C l / L}` for `l = 1..=L`,
    /// where `C` is the channel capacity in nats. The row average is `P`.
    pub fn exponential_pa(sections: usize, power: f64, capacity_nats: f64) -> Result<Self> {
        if sections == 0 {
            return Err(SparcError::invalid("section count must be positive"));
        }
        if power <= 0.0 || !power.is_finite() {
            return Err(SparcError::invalid("power must be positive and finite"));
        }
        if capacity_nats <= 0.0 || !capacity_nats.is_finite() {
            return Err(SparcError::invalid("capacity must be positive and finite"));
        }
        let l = sections as f64;
        let scale = l * power * ((capacity_nats / l).exp() - 1.0) / (1.0 - (-capacity_nats).exp());
        let entries: Vec<f64> = (1..=sections)
            .map(|i| scale * (-capacity_nats * i as f64 / l).exp())
            .collect();
        Ok(BaseMatrix {
            row_blocks: 1,
            col_blocks: sections,
            entries,
            kind: BaseMatrixKind::PowerAllocated,
            power,
        })
    }

    /// Build from raw row-major entries, as loaded from a config file.
    /// The power is taken to be the mean entry.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(SparcError::invalid("base matrix must be non-empty"));
        }
        let col_blocks = rows[0].len();
        if rows.iter().any(|r| r.len() != col_blocks) {
            return Err(SparcError::invalid("base matrix rows have unequal lengths"));
        }
        let row_blocks = rows.len();
        let entries: Vec<f64> = rows.into_iter().flatten().collect();
        if entries.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(SparcError::invalid("base matrix entries must be nonnegative"));
        }
        let power = entries.iter().sum::<f64>() / entries.len() as f64;
        if power <= 0.0 || power.is_nan() {
            return Err(SparcError::invalid("base matrix must carry positive power"));
        }
        Ok(BaseMatrix {
            row_blocks,
            col_blocks,
            entries,
            kind: BaseMatrixKind::Explicit,
            power,
        })
    }

    pub fn row_blocks(&self) -> usize {
        self.row_blocks
    }

    pub fn col_blocks(&self) -> usize {
        self.col_blocks
    }

    pub fn kind(&self) -> &BaseMatrixKind {
        &self.kind
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.col_blocks + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.entries[row * self.col_blocks..(row + 1) * self.col_blocks]
    }

    /// Mean of all entries; equals the power constraint by construction.
    pub fn mean(&self) -> f64 {
        self.entries.iter().sum::<f64>() / self.entries.len() as f64
    }

    /// Row-major copy for serialization into configs and manifests.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.row_blocks).map(|r| self.row(r).to_vec()).collect()
    }

    /// Verify the average-power constraint to 1e-12 relative error.
    pub fn check_power(&self) -> Result<()> {
        let mean = self.mean();
        if (mean - self.power).abs() > 1e-12 * self.power.abs().max(1.0) {
            return Err(SparcError::invalid(format!(
                "base matrix mean {mean} violates power constraint {}",
                self.power
            )));
        }
        Ok(())
    }

    /// Check that the block structure matches a parameter set.
    pub fn check_compatible(&self, params: &SparcParams) -> Result<()> {
        if self.row_blocks != params.row_blocks || self.col_blocks != params.col_blocks {
            return Err(SparcError::invalid(format!(
                "base matrix is {}x{} blocks but params declare {}x{}",
                self.row_blocks, self.col_blocks, params.row_blocks, params.col_blocks
            )));
        }
        Ok(())
    }

    /// Per-row and per-column averages plus their extremes.
    pub fn row_col_averages(&self) -> RowColAverages {
        let row_avgs: Vec<f64> = (0..self.row_blocks)
            .map(|r| self.row(r).iter().sum::<f64>() / self.col_blocks as f64)
            .collect();
        let col_avgs: Vec<f64> = (0..self.col_blocks)
            .map(|c| {
                (0..self.row_blocks).map(|r| self.entry(r, c)).sum::<f64>()
                    / self.row_blocks as f64
            })
            .collect();
        let all = row_avgs.iter().chain(col_avgs.iter());
        let xi1 = all.clone().cloned().fold(f64::INFINITY, f64::min);
        let xi2 = row_avgs
            .iter()
            .chain(col_avgs.iter())
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        RowColAverages {
            row_avgs,
            col_avgs,
            xi1,
            xi2,
        }
    }
}

/// Inner rate of each nonzero block of a coupled design and the rate loss
/// `R_inner - R = R (omega - 1) / lambda` paid for coupling.
pub fn rate_loss(omega: usize, lambda: usize, rate_nats: f64) -> Result<(f64, f64)> {
    if omega < 1 || lambda + 1 < 2 * omega {
        return Err(SparcError::invalid("need omega >= 1 and lambda >= 2*omega - 1"));
    }
    let inner = rate_nats * (lambda + omega - 1) as f64 / lambda as f64;
    Ok((inner, inner - rate_nats))
}
