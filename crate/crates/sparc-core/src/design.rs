//! Block-structured design operators.
//!
//! The design matrix is divided into row-block by column-block tiles whose
//! entry variances come from the base matrix. Two realizations are provided:
//!
//! * an explicit complex Gaussian matrix, kept for oracle testing and small
//!   instances, and
//! * an implicit randomized-DFT operator whose tiles are row subsets of a
//!   unitary DFT preceded by a random phase diagonal and column selection,
//!   scaled so each tile's column norms equal the Gaussian tile's expected
//!   column norms. Zero-variance tiles are skipped entirely.
//!
//! Both support plain application, the adjoint, and the block-weighted
//! adjoint used by the AMP residual step. Operators are immutable after
//! construction and safe to use from concurrent trials; transform scratch
//! space is allocated per call.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::base_matrix::BaseMatrix;
use crate::error::{Result, SparcError};
use crate::params::SparcParams;

/// Default cap on `n * L * M` for the explicit Gaussian realization.
pub const DEFAULT_EXPLICIT_ENTRY_CAP: u128 = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    #[serde(rename = "gaussian")]
    GaussianExplicit,
    #[serde(rename = "dft")]
    DftImplicit,
}

impl std::fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OperatorKind::GaussianExplicit => write!(f, "gaussian"),
            OperatorKind::DftImplicit => write!(f, "dft"),
        }
    }
}

/// Per-block scalars entering the AMP recursion.
///
/// The weighted adjoint applies `row_factors[r]` to each residual row block
/// before the adjoint and `col_factors[c]` to each output column block after
/// it. `onsager` holds the per-row-block multiplier on the previous residual.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrixBlocks {
    pub row_factors: Vec<f64>,
    pub col_factors: Vec<f64>,
    pub onsager: Vec<f64>,
}

impl WeightMatrixBlocks {
    fn check(&self, row_blocks: usize, col_blocks: usize) -> Result<()> {
        if self.row_factors.len() != row_blocks {
            return Err(SparcError::DimensionMismatch {
                expected: row_blocks,
                actual: self.row_factors.len(),
            });
        }
        if self.col_factors.len() != col_blocks {
            return Err(SparcError::DimensionMismatch {
                expected: col_blocks,
                actual: self.col_factors.len(),
            });
        }
        for &w in self.row_factors.iter().chain(&self.col_factors) {
            if !w.is_finite() || w < 0.0 {
                return Err(SparcError::InvalidWeight(format!("{w}")));
            }
        }
        Ok(())
    }
}

/// A sampled design operator of either kind.
#[derive(Clone)]
pub enum DesignOperator {
    Gaussian(GaussianOperator),
    Dft(DftOperator),
}

impl DesignOperator {
    /// Explicit complex Gaussian matrix with entry variance
    /// `W[r(i), c(j)] / L`, deterministic given the seed.
    pub fn sample_gaussian(base: &BaseMatrix, params: &SparcParams, seed: u64) -> Result<Self> {
        Self::sample_gaussian_capped(base, params, seed, DEFAULT_EXPLICIT_ENTRY_CAP)
    }

    pub fn sample_gaussian_capped(
        base: &BaseMatrix,
        params: &SparcParams,
        seed: u64,
        entry_cap: u128,
    ) -> Result<Self> {
        base.check_compatible(params)?;
        base.check_power()?;
        let entries = params.code_length as u128 * params.total_columns() as u128;
        if entries > entry_cap {
            return Err(SparcError::SizeCapExceeded {
                entries,
                cap: entry_cap,
            });
        }
        Ok(DesignOperator::Gaussian(GaussianOperator::sample(
            base, params, seed,
        )))
    }

    /// Implicit randomized-DFT operator.
    ///
    /// Each nonzero tile is a random `n/R`-row subset of a size-`N` unitary
    /// DFT (the all-constant row excluded), preceded by a uniform random
    /// phase diagonal and a random column selection, and scaled by
    /// `sqrt(W[r,c] N / L)` relative to the unitary transform so column
    /// norms match the Gaussian variance profile. `N` is the tile width
    /// `L M / C` when that is a power of two; otherwise the next power of
    /// two large enough to host both tile dimensions.
    pub fn build_dft(base: &BaseMatrix, params: &SparcParams, seed: u64) -> Result<Self> {
        base.check_compatible(params)?;
        base.check_power()?;
        Ok(DesignOperator::Dft(DftOperator::build(base, params, seed)))
    }

    pub fn kind(&self) -> OperatorKind {
        match self {
            DesignOperator::Gaussian(_) => OperatorKind::GaussianExplicit,
            DesignOperator::Dft(_) => OperatorKind::DftImplicit,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            DesignOperator::Gaussian(g) => g.seed,
            DesignOperator::Dft(d) => d.seed,
        }
    }

    /// Output dimension `n`.
    pub fn rows(&self) -> usize {
        match self {
            DesignOperator::Gaussian(g) => g.rows,
            DesignOperator::Dft(d) => d.rows,
        }
    }

    /// Input dimension `L M`.
    pub fn cols(&self) -> usize {
        match self {
            DesignOperator::Gaussian(g) => g.cols,
            DesignOperator::Dft(d) => d.cols,
        }
    }

    /// `x = A beta`.
    pub fn apply(&self, beta: &[Complex64]) -> Result<Vec<Complex64>> {
        if beta.len() != self.cols() {
            return Err(SparcError::DimensionMismatch {
                expected: self.cols(),
                actual: beta.len(),
            });
        }
        Ok(match self {
            DesignOperator::Gaussian(g) => g.apply(beta),
            DesignOperator::Dft(d) => d.apply(beta),
        })
    }

    /// `A* z`.
    pub fn adjoint(&self, z: &[Complex64]) -> Result<Vec<Complex64>> {
        if z.len() != self.rows() {
            return Err(SparcError::DimensionMismatch {
                expected: self.rows(),
                actual: z.len(),
            });
        }
        Ok(match self {
            DesignOperator::Gaussian(g) => g.weighted_adjoint(z, None, None),
            DesignOperator::Dft(d) => d.weighted_adjoint(z, None, None),
        })
    }

    /// Adjoint with block-constant weights: column block `c` of the output
    /// is `col_factors[c] * sum_r A[r,c]* (row_factors[r] * z_r)`.
    ///
    /// Block-constant weights commute with each tile, so no entrywise
    /// weight matrix is ever materialized.
    pub fn weighted_adjoint(
        &self,
        z: &[Complex64],
        weights: &WeightMatrixBlocks,
    ) -> Result<Vec<Complex64>> {
        if z.len() != self.rows() {
            return Err(SparcError::DimensionMismatch {
                expected: self.rows(),
                actual: z.len(),
            });
        }
        match self {
            DesignOperator::Gaussian(g) => {
                weights.check(g.row_blocks, g.col_blocks)?;
                Ok(g.weighted_adjoint(z, Some(&weights.row_factors), Some(&weights.col_factors)))
            }
            DesignOperator::Dft(d) => {
                weights.check(d.row_blocks, d.col_blocks)?;
                Ok(d.weighted_adjoint(z, Some(&weights.row_factors), Some(&weights.col_factors)))
            }
        }
    }

    /// Dense copy of the operator; intended for oracle tests at small sizes.
    pub fn materialize(&self) -> Result<Vec<Vec<Complex64>>> {
        let entries = self.rows() as u128 * self.cols() as u128;
        if entries > DEFAULT_EXPLICIT_ENTRY_CAP {
            return Err(SparcError::SizeCapExceeded {
                entries,
                cap: DEFAULT_EXPLICIT_ENTRY_CAP,
            });
        }
        Ok(match self {
            DesignOperator::Gaussian(g) => (0..g.rows)
                .map(|i| g.entries[i * g.cols..(i + 1) * g.cols].to_vec())
                .collect(),
            DesignOperator::Dft(d) => d.materialize(),
        })
    }
}

impl std::fmt::Debug for DesignOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "DesignOperator({}, {}x{}, seed={})",
            self.kind(),
            self.rows(),
            self.cols(),
            self.seed()
        )
    }
}

/// Explicit Gaussian realization.
#[derive(Clone)]
pub struct GaussianOperator {
    rows: usize,
    cols: usize,
    row_blocks: usize,
    col_blocks: usize,
    rows_per_block: usize,
    cols_per_block: usize,
    /// Row-major `rows x cols` entries.
    entries: Vec<Complex64>,
    seed: u64,
}

impl GaussianOperator {
    fn sample(base: &BaseMatrix, params: &SparcParams, seed: u64) -> Self {
        let rows = params.code_length;
        let cols = params.total_columns();
        let rows_per_block = params.rows_per_block();
        let cols_per_block = params.cols_per_block();
        let inv_l = 1.0 / params.sections as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let rb = i / rows_per_block;
            // Per-entry standard deviation of each real part within this row.
            let stds: Vec<f64> = (0..base.col_blocks())
                .map(|cb| (base.entry(rb, cb) * inv_l / 2.0).sqrt())
                .collect();
            for j in 0..cols {
                let std = stds[j / cols_per_block];
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                entries.push(Complex64::new(std * re, std * im));
            }
        }
        GaussianOperator {
            rows,
            cols,
            row_blocks: base.row_blocks(),
            col_blocks: base.col_blocks(),
            rows_per_block,
            cols_per_block,
            entries,
            seed,
        }
    }

    fn apply(&self, beta: &[Complex64]) -> Vec<Complex64> {
        (0..self.rows)
            .map(|i| {
                self.entries[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(beta)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    fn weighted_adjoint(
        &self,
        z: &[Complex64],
        row_factors: Option<&[f64]>,
        col_factors: Option<&[f64]>,
    ) -> Vec<Complex64> {
        let mut out = vec![Complex64::ZERO; self.cols];
        for i in 0..self.rows {
            let zi = match row_factors {
                Some(rf) => z[i] * rf[i / self.rows_per_block],
                None => z[i],
            };
            if zi == Complex64::ZERO {
                continue;
            }
            let row = &self.entries[i * self.cols..(i + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * zi;
            }
        }
        if let Some(cf) = col_factors {
            for (j, o) in out.iter_mut().enumerate() {
                *o *= cf[j / self.cols_per_block];
            }
        }
        out
    }
}

/// One nonzero tile of the implicit DFT realization.
#[derive(Clone)]
struct DftBlock {
    /// Applied to the raw (unnormalized) transform output; equals
    /// `sqrt(W[r,c] / L)`.
    scale: f64,
    /// Selected transform rows, all nonzero (the constant row is excluded
    /// because its structure would bias the first section).
    row_sel: Vec<u32>,
    /// Selected transform columns, one per tile column.
    col_sel: Vec<u32>,
    /// Unit phasor multiplying each selected column.
    phases: Vec<Complex64>,
}

/// Implicit randomized-DFT realization.
#[derive(Clone)]
pub struct DftOperator {
    rows: usize,
    cols: usize,
    row_blocks: usize,
    col_blocks: usize,
    rows_per_block: usize,
    cols_per_block: usize,
    transform_size: usize,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
    /// Row-major `row_blocks x col_blocks`; `None` marks zero tiles.
    blocks: Vec<Option<DftBlock>>,
    seed: u64,
}

impl DftOperator {
    fn build(base: &BaseMatrix, params: &SparcParams, seed: u64) -> Self {
        let rows = params.code_length;
        let cols = params.total_columns();
        let rows_per_block = params.rows_per_block();
        let cols_per_block = params.cols_per_block();
        // The transform must host every tile column and leave room to skip
        // the constant row.
        let transform_size = cols_per_block
            .max(rows_per_block + 1)
            .next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft_fwd = planner.plan_fft_forward(transform_size);
        let fft_inv = planner.plan_fft_inverse(transform_size);
        let inv_l = 1.0 / params.sections as f64;

        let row_blocks = base.row_blocks();
        let col_blocks = base.col_blocks();
        let mut blocks = Vec::with_capacity(row_blocks * col_blocks);
        for rb in 0..row_blocks {
            for cb in 0..col_blocks {
                let variance = base.entry(rb, cb) * inv_l;
                if variance == 0.0 {
                    blocks.push(None);
                    continue;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((rb * col_blocks + cb) as u64);
                let row_sel: Vec<u32> =
                    rand::seq::index::sample(&mut rng, transform_size - 1, rows_per_block)
                        .into_iter()
                        .map(|i| (i + 1) as u32)
                        .collect();
                let col_sel: Vec<u32> =
                    rand::seq::index::sample(&mut rng, transform_size, cols_per_block)
                        .into_iter()
                        .map(|i| i as u32)
                        .collect();
                let phases: Vec<Complex64> = (0..cols_per_block)
                    .map(|_| {
                        Complex64::from_polar(
                            1.0,
                            rng.random::<f64>() * 2.0 * std::f64::consts::PI,
                        )
                    })
                    .collect();
                blocks.push(Some(DftBlock {
                    scale: variance.sqrt(),
                    row_sel,
                    col_sel,
                    phases,
                }));
            }
        }
        DftOperator {
            rows,
            cols,
            row_blocks,
            col_blocks,
            rows_per_block,
            cols_per_block,
            transform_size,
            fft_fwd,
            fft_inv,
            blocks,
            seed,
        }
    }

    fn apply(&self, beta: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::ZERO; self.rows];
        let mut buf = vec![Complex64::ZERO; self.transform_size];
        let mut scratch = vec![Complex64::ZERO; self.fft_fwd.get_inplace_scratch_len()];
        for rb in 0..self.row_blocks {
            for cb in 0..self.col_blocks {
                let Some(block) = &self.blocks[rb * self.col_blocks + cb] else {
                    continue;
                };
                buf.fill(Complex64::ZERO);
                let beta_block = &beta[cb * self.cols_per_block..(cb + 1) * self.cols_per_block];
                for ((&col, &ph), &b) in
                    block.col_sel.iter().zip(&block.phases).zip(beta_block)
                {
                    buf[col as usize] = ph * b;
                }
                self.fft_fwd.process_with_scratch(&mut buf, &mut scratch);
                let out_block =
                    &mut out[rb * self.rows_per_block..(rb + 1) * self.rows_per_block];
                for (o, &row) in out_block.iter_mut().zip(&block.row_sel) {
                    *o += block.scale * buf[row as usize];
                }
            }
        }
        out
    }

    fn weighted_adjoint(
        &self,
        z: &[Complex64],
        row_factors: Option<&[f64]>,
        col_factors: Option<&[f64]>,
    ) -> Vec<Complex64> {
        let mut out = vec![Complex64::ZERO; self.cols];
        let mut buf = vec![Complex64::ZERO; self.transform_size];
        let mut scratch = vec![Complex64::ZERO; self.fft_inv.get_inplace_scratch_len()];
        for cb in 0..self.col_blocks {
            let cf = col_factors.map_or(1.0, |c| c[cb]);
            let out_block =
                &mut out[cb * self.cols_per_block..(cb + 1) * self.cols_per_block];
            for rb in 0..self.row_blocks {
                let Some(block) = &self.blocks[rb * self.col_blocks + cb] else {
                    continue;
                };
                let rf = row_factors.map_or(1.0, |r| r[rb]);
                buf.fill(Complex64::ZERO);
                let z_block = &z[rb * self.rows_per_block..(rb + 1) * self.rows_per_block];
                for (&row, &zi) in block.row_sel.iter().zip(z_block) {
                    buf[row as usize] = zi * rf;
                }
                self.fft_inv.process_with_scratch(&mut buf, &mut scratch);
                let s = block.scale * cf;
                for ((o, &col), &ph) in
                    out_block.iter_mut().zip(&block.col_sel).zip(&block.phases)
                {
                    *o += s * ph.conj() * buf[col as usize];
                }
            }
        }
        out
    }

    fn materialize(&self) -> Vec<Vec<Complex64>> {
        let n = self.transform_size as f64;
        let mut dense = vec![vec![Complex64::ZERO; self.cols]; self.rows];
        for rb in 0..self.row_blocks {
            for cb in 0..self.col_blocks {
                let Some(block) = &self.blocks[rb * self.col_blocks + cb] else {
                    continue;
                };
                for (i, &row) in block.row_sel.iter().enumerate() {
                    for (j, (&col, &ph)) in
                        block.col_sel.iter().zip(&block.phases).enumerate()
                    {
                        let prod = (row as u64 * col as u64) % self.transform_size as u64;
                        let angle = -2.0 * std::f64::consts::PI * prod as f64 / n;
                        dense[rb * self.rows_per_block + i][cb * self.cols_per_block + j] =
                            block.scale * ph * Complex64::from_polar(1.0, angle);
                    }
                }
            }
        }
        dense
    }

    /// Exact squared column norm of column `j`, fixed by construction.
    pub fn column_squared_norm(&self, j: usize) -> f64 {
        let cb = j / self.cols_per_block;
        (0..self.row_blocks)
            .filter_map(|rb| self.blocks[rb * self.col_blocks + cb].as_ref())
            .map(|b| b.scale * b.scale * b.row_sel.len() as f64)
            .sum()
    }

    pub fn transform_size(&self) -> usize {
        self.transform_size
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_matrix::BaseMatrix;
    use crate::params::SparcParams;

    fn dense_matvec(a: &[Vec<Complex64>], x: &[Complex64]) -> Vec<Complex64> {
        a.iter()
            .map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum())
            .collect()
    }

    fn dense_adjoint(a: &[Vec<Complex64>], z: &[Complex64]) -> Vec<Complex64> {
        let cols = a[0].len();
        let mut out = vec![Complex64::ZERO; cols];
        for (row, &zi) in a.iter().zip(z) {
            for (o, r) in out.iter_mut().zip(row) {
                *o += r.conj() * zi;
            }
        }
        out
    }

    fn random_complex(rng: &mut ChaCha8Rng, len: usize) -> Vec<Complex64> {
        (0..len)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    fn small_params() -> (BaseMatrix, SparcParams) {
        // 4x3-block coupled structure with zero tiles off the band.
        let base = BaseMatrix::spatially_coupled(2, 3, 0.0, 1.5).unwrap();
        let params = SparcParams::new(6, 4, 2, 8, 1.5, 0.5, 4, 3).unwrap();
        (base, params)
    }

    #[test]
    fn gaussian_empirical_variance() {
        // Flat P, L=2, M=2, n=4: each complex entry has variance P/L = P/2.
        let p = 1.3;
        let base = BaseMatrix::flat(p).unwrap();
        let params = SparcParams::new(2, 2, 1, 4, p, 1.0, 1, 1).unwrap();
        let resamples = 20_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for seed in 0..resamples {
            let op = DesignOperator::sample_gaussian(&base, &params, seed).unwrap();
            let DesignOperator::Gaussian(g) = &op else { unreachable!() };
            for e in &g.entries {
                let v = e.norm_sqr();
                sum += v;
                sum_sq += v * v;
            }
        }
        let count = (resamples as usize * 16) as f64;
        let mean = sum / count;
        let stderr = ((sum_sq / count - mean * mean) / count).sqrt();
        let expect = p / 2.0;
        assert!(
            (mean - expect).abs() < 3.0 * stderr,
            "per-entry variance {mean} vs {expect} (stderr {stderr})"
        );
    }

    #[test]
    fn zero_tiles_are_exactly_zero() {
        let (base, params) = small_params();
        let op = DesignOperator::sample_gaussian(&base, &params, 3).unwrap();
        let dense = op.materialize().unwrap();
        // Tile (row block 0, col block 1) is off band: rows 0..2, cols 8..16.
        for row in dense.iter().take(2) {
            for &e in &row[8..16] {
                assert_eq!(e, Complex64::ZERO);
            }
        }
    }

    #[test]
    fn expected_codeword_power_is_p() {
        let (base, params) = small_params();
        // One valid message: unit symbols at fixed positions.
        let msg = crate::encoder::MessageVector::from_structure(
            vec![0, 3, 1, 2, 2, 0],
            vec![1, 2, 1, 2, 2, 1],
            &params,
        )
        .unwrap();
        let resamples = 4000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for seed in 0..resamples {
            let op = DesignOperator::sample_gaussian(&base, &params, seed).unwrap();
            let x = op.apply(msg.values()).unwrap();
            let v = x.iter().map(|c| c.norm_sqr()).sum::<f64>() / params.code_length as f64;
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / resamples as f64;
        let stderr = ((sum_sq / resamples as f64 - mean * mean) / resamples as f64).sqrt();
        assert!(
            (mean - params.power).abs() < 3.0 * stderr,
            "codeword power {mean} vs {} (stderr {stderr})",
            params.power
        );
    }

    #[test]
    fn apply_matches_dense_and_is_linear() {
        let (base, params) = small_params();
        for seed in [1u64, 9] {
            for op in [
                DesignOperator::sample_gaussian(&base, &params, seed).unwrap(),
                DesignOperator::build_dft(&base, &params, seed).unwrap(),
            ] {
                let dense = op.materialize().unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(77);
                let x = random_complex(&mut rng, op.cols());
                let y = random_complex(&mut rng, op.cols());

                // Zero maps to zero.
                let zeros = vec![Complex64::ZERO; op.cols()];
                let z = op.apply(&zeros).unwrap();
                assert!(z.iter().all(|&v| v == Complex64::ZERO));

                // Dense oracle.
                let got = op.apply(&x).unwrap();
                let want = dense_matvec(&dense, &x);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).norm() < 1e-10);
                }

                // Linearity.
                let a = Complex64::new(0.7, -0.2);
                let b = Complex64::new(-1.1, 0.4);
                let combo: Vec<Complex64> = x
                    .iter()
                    .zip(&y)
                    .map(|(&xi, &yi)| a * xi + b * yi)
                    .collect();
                let lhs = op.apply(&combo).unwrap();
                let fx = op.apply(&x).unwrap();
                let fy = op.apply(&y).unwrap();
                for i in 0..lhs.len() {
                    assert!((lhs[i] - (a * fx[i] + b * fy[i])).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn adjoint_identity_both_kinds() {
        let (base, params) = small_params();
        for op in [
            DesignOperator::sample_gaussian(&base, &params, 11).unwrap(),
            DesignOperator::build_dft(&base, &params, 11).unwrap(),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let x = random_complex(&mut rng, op.cols());
            let y = random_complex(&mut rng, op.rows());
            let ax = op.apply(&x).unwrap();
            let aty = op.adjoint(&y).unwrap();
            let lhs: Complex64 = ax.iter().zip(&y).map(|(a, b)| a * b.conj()).sum();
            let rhs: Complex64 = x.iter().zip(&aty).map(|(a, b)| a * b.conj()).sum();
            assert!(
                (lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0),
                "<Ax,y> = {lhs} vs <x,A*y> = {rhs}"
            );
        }
    }

    #[test]
    fn weighted_adjoint_matches_dense_hadamard() {
        let (base, params) = small_params();
        let weights = WeightMatrixBlocks {
            row_factors: vec![0.5, 2.0, 1.25, 0.8],
            col_factors: vec![3.0, 0.25, 1.5],
            onsager: vec![0.0; 4],
        };
        for op in [
            DesignOperator::sample_gaussian(&base, &params, 21).unwrap(),
            DesignOperator::build_dft(&base, &params, 21).unwrap(),
        ] {
            let dense = op.materialize().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let z = random_complex(&mut rng, op.rows());

            // Oracle: materialize Q (block weights) entrywise, then (Q o A)* z.
            let mut weighted = dense.clone();
            for (i, row) in weighted.iter_mut().enumerate() {
                for (j, e) in row.iter_mut().enumerate() {
                    let q = weights.row_factors[params.row_block_of(i)]
                        * weights.col_factors[params.col_block_of(j)];
                    *e *= q;
                }
            }
            let want = dense_adjoint(&weighted, &z);
            let got = op.weighted_adjoint(&z, &weights).unwrap();
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).norm() < 1e-10);
            }

            // All-ones weights reduce to the plain adjoint.
            let ones = WeightMatrixBlocks {
                row_factors: vec![1.0; 4],
                col_factors: vec![1.0; 3],
                onsager: vec![0.0; 4],
            };
            let plain = op.adjoint(&z).unwrap();
            let via_weights = op.weighted_adjoint(&z, &ones).unwrap();
            for (a, b) in plain.iter().zip(&via_weights) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn weighted_adjoint_single_block() {
        // With only one nonzero tile, the weighted adjoint is a scaled
        // adjoint of that tile alone.
        let base = BaseMatrix::from_rows(vec![vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let params = SparcParams::new(2, 4, 1, 4, 0.5, 1.0, 2, 2).unwrap();
        let op = DesignOperator::build_dft(&base, &params, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = random_complex(&mut rng, 4);
        let weights = WeightMatrixBlocks {
            row_factors: vec![2.0, 5.0],
            col_factors: vec![3.0, 7.0],
            onsager: vec![0.0; 2],
        };
        let got = op.weighted_adjoint(&z, &weights).unwrap();
        // Scaling the live tile's row block by 2 and column block by 3 is a
        // global factor of 6 on the live output; the dead column block is 0.
        let plain = op.adjoint(&z).unwrap();
        for (g, p) in got.iter().take(4).zip(&plain) {
            assert!((g - p * 6.0).norm() < 1e-12);
        }
        for &g in &got[4..8] {
            assert_eq!(g, Complex64::ZERO);
        }
    }

    #[test]
    fn weighted_adjoint_rejects_bad_weights() {
        let (base, params) = small_params();
        let op = DesignOperator::build_dft(&base, &params, 1).unwrap();
        let z = vec![Complex64::ZERO; op.rows()];
        let bad = WeightMatrixBlocks {
            row_factors: vec![1.0, f64::NAN, 1.0, 1.0],
            col_factors: vec![1.0; 3],
            onsager: vec![0.0; 4],
        };
        assert!(op.weighted_adjoint(&z, &bad).is_err());
        let negative = WeightMatrixBlocks {
            row_factors: vec![1.0, -1.0, 1.0, 1.0],
            col_factors: vec![1.0; 3],
            onsager: vec![0.0; 4],
        };
        assert!(op.weighted_adjoint(&z, &negative).is_err());
    }

    #[test]
    fn dft_column_norms_are_deterministic() {
        let (base, params) = small_params();
        let op = DesignOperator::build_dft(&base, &params, 15).unwrap();
        let DesignOperator::Dft(d) = &op else { unreachable!() };
        for j in 0..op.cols() {
            let mut e = vec![Complex64::ZERO; op.cols()];
            e[j] = Complex64::new(1.0, 0.0);
            let col = op.apply(&e).unwrap();
            let norm: f64 = col.iter().map(|c| c.norm_sqr()).sum();
            // Expected: sum over nonzero tiles of (n/R) * W[r,c] / L.
            let cb = params.col_block_of(j);
            let expect: f64 = (0..base.row_blocks())
                .map(|rb| {
                    base.entry(rb, cb) / params.sections as f64
                        * params.rows_per_block() as f64
                })
                .sum();
            assert!(
                (norm - expect).abs() < 1e-10 * expect.max(1.0),
                "column {j}: {norm} vs {expect}"
            );
            assert!((d.column_squared_norm(j) - expect).abs() < 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let (base, params) = small_params();
        let a = DesignOperator::sample_gaussian(&base, &params, 42).unwrap();
        let b = DesignOperator::sample_gaussian(&base, &params, 42).unwrap();
        let (DesignOperator::Gaussian(ga), DesignOperator::Gaussian(gb)) = (&a, &b) else {
            unreachable!()
        };
        assert_eq!(ga.entries, gb.entries);

        let da = DesignOperator::build_dft(&base, &params, 42).unwrap();
        let db = DesignOperator::build_dft(&base, &params, 42).unwrap();
        let x: Vec<Complex64> = (0..da.cols())
            .map(|i| Complex64::new(i as f64, -1.0))
            .collect();
        assert_eq!(da.apply(&x).unwrap(), db.apply(&x).unwrap());

        let dc = DesignOperator::build_dft(&base, &params, 43).unwrap();
        assert_ne!(da.apply(&x).unwrap(), dc.apply(&x).unwrap());
    }

    #[test]
    fn non_power_of_two_tile_width_is_hosted_by_larger_transform() {
        // 3 sections of width 4 in a single column block: tile width 12.
        let base = BaseMatrix::flat(1.0).unwrap();
        let params = SparcParams::new(3, 4, 1, 5, 1.0, 1.0, 1, 1).unwrap();
        let op = DesignOperator::build_dft(&base, &params, 2).unwrap();
        let DesignOperator::Dft(d) = &op else { unreachable!() };
        assert_eq!(d.transform_size(), 16);
        // Adjoint identity still holds.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_complex(&mut rng, 12);
        let y = random_complex(&mut rng, 5);
        let lhs: Complex64 = op
            .apply(&x)
            .unwrap()
            .iter()
            .zip(&y)
            .map(|(a, b)| a * b.conj())
            .sum();
        let rhs: Complex64 = x
            .iter()
            .zip(&op.adjoint(&y).unwrap())
            .map(|(a, b)| a * b.conj())
            .sum();
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn explicit_size_cap_enforced() {
        let base = BaseMatrix::flat(1.0).unwrap();
        let params = SparcParams::new(1 << 12, 1 << 12, 1, 1 << 12, 1.0, 1.0, 1, 1).unwrap();
        let err = DesignOperator::sample_gaussian(&base, &params, 0);
        assert!(matches!(err, Err(SparcError::SizeCapExceeded { .. })));
    }

    #[test]
    fn dimension_mismatches_rejected() {
        let (base, params) = small_params();
        let op = DesignOperator::build_dft(&base, &params, 0).unwrap();
        assert!(op.apply(&[Complex64::ZERO; 3]).is_err());
        assert!(op.adjoint(&[Complex64::ZERO; 2]).is_err());
    }
}
