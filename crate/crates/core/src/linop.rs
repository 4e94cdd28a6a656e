//! Block-structured forward operator `A = (A_1, ..., A_N)`.
//!
//! The operator is stored as one dense row-major matrix together with a
//! partition of its rows into `N` contiguous blocks; block `i` is the
//! sub-operator `A_i`. Fredholm discretizations are fully dense, so no sparse
//! path is provided. Operators are immutable after construction and cache
//! their norm estimates, which makes them safe to share across threads.

use std::ops::Range;
use std::sync::{Arc, OnceLock};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Default relative tolerance for power-iteration norm estimates.
pub const DEFAULT_NORM_TOL: f64 = 1e-10;
/// Default iteration cap for power-iteration norm estimates.
pub const DEFAULT_NORM_MAX_ITER: usize = 5000;

/// Partition of `[0, total_rows)` into contiguous, nonempty, ordered blocks.
///
/// Shared (via `Arc`) between an operator and the observations that conform
/// to it, so conformity checks are cheap and cloning an observation does not
/// copy the partition.
#[derive(Clone, Debug)]
pub struct BlockStructure {
    ranges: Arc<Vec<Range<usize>>>,
    total_rows: usize,
}

impl PartialEq for BlockStructure {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.ranges, &other.ranges) || *self.ranges == *other.ranges
    }
}

impl BlockStructure {
    /// Validates that `ranges` partition `[0, M)` exactly, in order, each
    /// nonempty.
    pub fn new(ranges: Vec<Range<usize>>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::BlockStructure("no blocks (N must be >= 1)".into()));
        }
        let mut expected_start = 0usize;
        for (i, r) in ranges.iter().enumerate() {
            if r.start != expected_start {
                return Err(Error::BlockStructure(format!(
                    "block {} starts at row {}, expected {}",
                    i, r.start, expected_start
                )));
            }
            if r.end <= r.start {
                return Err(Error::BlockStructure(format!("block {} is empty", i)));
            }
            expected_start = r.end;
        }
        Ok(BlockStructure {
            total_rows: expected_start,
            ranges: Arc::new(ranges),
        })
    }

    /// One row per block: the default structure for sampled Fredholm data.
    pub fn one_row_per_block(n_rows: usize) -> Self {
        BlockStructure {
            ranges: Arc::new((0..n_rows).map(|r| r..r + 1).collect()),
            total_rows: n_rows,
        }
    }

    /// A single block covering all rows.
    pub fn single_block(n_rows: usize) -> Self {
        #[allow(clippy::single_range_in_vec_init)]
        BlockStructure {
            ranges: Arc::new(vec![0..n_rows]),
            total_rows: n_rows,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.ranges.len()
    }

    pub fn total_rows(&self) -> usize {
        self.total_rows
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.ranges[i].clone()
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }
}

/// Stacked data vector `y = (y_1, ..., y_N)` conforming to a block structure.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    structure: BlockStructure,
    stacked: Array1<f64>,
}

impl Observation {
    pub fn from_stacked(structure: BlockStructure, stacked: Array1<f64>) -> Result<Self> {
        if stacked.len() != structure.total_rows() {
            return Err(Error::DimensionMismatch {
                context: "Observation::from_stacked",
                expected: structure.total_rows(),
                actual: stacked.len(),
            });
        }
        Ok(Observation { structure, stacked })
    }

    pub fn zeros(structure: BlockStructure) -> Self {
        let n = structure.total_rows();
        Observation {
            structure,
            stacked: Array1::zeros(n),
        }
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn stacked(&self) -> &Array1<f64> {
        &self.stacked
    }

    pub fn into_stacked(self) -> Array1<f64> {
        self.stacked
    }

    pub fn n_blocks(&self) -> usize {
        self.structure.n_blocks()
    }

    pub fn len(&self) -> usize {
        self.stacked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stacked.is_empty()
    }

    /// View of block `i`.
    pub fn block(&self, i: usize) -> Result<ArrayView1<'_, f64>> {
        if i >= self.structure.n_blocks() {
            return Err(Error::BlockIndexOutOfRange {
                index: i,
                n_blocks: self.structure.n_blocks(),
            });
        }
        let r = self.structure.range(i);
        Ok(self.stacked.slice(ndarray::s![r]))
    }

    /// Euclidean norm of the stacked vector.
    pub fn norm(&self) -> f64 {
        self.stacked.dot(&self.stacked).sqrt()
    }
}

/// Result of a power-iteration norm estimate.
#[derive(Clone, Copy, Debug)]
pub struct NormEstimate {
    pub value: f64,
    /// False when the iteration cap was reached before the relative change
    /// between consecutive estimates dropped below the tolerance.
    pub converged: bool,
    pub iterations: usize,
}

/// The forward map `A` assembled from `N` row blocks `A_i`.
#[derive(Clone, Debug)]
pub struct BlockOperator {
    entries: Array2<f64>,
    structure: BlockStructure,
    op_norm: OnceLock<NormEstimate>,
    block_norm_max: OnceLock<NormEstimate>,
}

impl BlockOperator {
    pub fn new(entries: Array2<f64>, structure: BlockStructure) -> Result<Self> {
        if entries.nrows() != structure.total_rows() {
            return Err(Error::DimensionMismatch {
                context: "BlockOperator::new (rows vs block structure)",
                expected: structure.total_rows(),
                actual: entries.nrows(),
            });
        }
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::BlockStructure(
                "operator must have at least one row and one column".into(),
            ));
        }
        Ok(BlockOperator {
            entries,
            structure,
            op_norm: OnceLock::new(),
            block_norm_max: OnceLock::new(),
        })
    }

    /// One row per block, matching pointwise-sampled Fredholm data.
    pub fn from_rows(entries: Array2<f64>) -> Result<Self> {
        let s = BlockStructure::one_row_per_block(entries.nrows());
        BlockOperator::new(entries, s)
    }

    /// A single block holding the whole matrix (N = 1).
    pub fn single_block(entries: Array2<f64>) -> Result<Self> {
        let s = BlockStructure::single_block(entries.nrows());
        BlockOperator::new(entries, s)
    }

    pub fn n_blocks(&self) -> usize {
        self.structure.n_blocks()
    }

    /// Domain dimension `d`.
    pub fn dim(&self) -> usize {
        self.entries.ncols()
    }

    pub fn total_rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.entries.view()
    }

    pub fn block_entries(&self, i: usize) -> Result<ArrayView2<'_, f64>> {
        if i >= self.n_blocks() {
            return Err(Error::BlockIndexOutOfRange {
                index: i,
                n_blocks: self.n_blocks(),
            });
        }
        let r = self.structure.range(i);
        Ok(self.entries.slice(ndarray::s![r, ..]))
    }

    fn check_domain(&self, len: usize, context: &'static str) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim(),
                actual: len,
            });
        }
        Ok(())
    }

    /// `A x = (A_1 x, ..., A_N x)`.
    pub fn apply(&self, x: &Array1<f64>) -> Result<Observation> {
        self.check_domain(x.len(), "apply")?;
        Ok(Observation {
            structure: self.structure.clone(),
            stacked: self.forward(&x.view()),
        })
    }

    /// `A* z = sum_i A_i* z_i` for a conforming observation.
    pub fn apply_adjoint(&self, z: &Observation) -> Result<Array1<f64>> {
        if z.structure() != &self.structure {
            return Err(Error::DimensionMismatch {
                context: "apply_adjoint (observation does not conform)",
                expected: self.total_rows(),
                actual: z.len(),
            });
        }
        Ok(self.adjoint(&z.stacked.view()))
    }

    /// Restriction of `apply` to block `i`: `A_i x`.
    pub fn apply_block(&self, i: usize, x: &Array1<f64>) -> Result<Array1<f64>> {
        self.check_domain(x.len(), "apply_block")?;
        if i >= self.n_blocks() {
            return Err(Error::BlockIndexOutOfRange {
                index: i,
                n_blocks: self.n_blocks(),
            });
        }
        let r = self.structure.range(i);
        let mut out = Array1::zeros(r.len());
        for (k, ri) in r.enumerate() {
            out[k] = self.entries.row(ri).dot(&x.view());
        }
        Ok(out)
    }

    /// `A_i* z_i` for a vector shaped like block `i`.
    pub fn apply_block_adjoint(&self, i: usize, z_i: &Array1<f64>) -> Result<Array1<f64>> {
        if i >= self.n_blocks() {
            return Err(Error::BlockIndexOutOfRange {
                index: i,
                n_blocks: self.n_blocks(),
            });
        }
        let r = self.structure.range(i);
        if z_i.len() != r.len() {
            return Err(Error::DimensionMismatch {
                context: "apply_block_adjoint",
                expected: r.len(),
                actual: z_i.len(),
            });
        }
        let mut out = Array1::zeros(self.dim());
        for (k, ri) in r.enumerate() {
            out.scaled_add(z_i[k], &self.entries.row(ri));
        }
        Ok(out)
    }

    /// Forward product on a stacked vector, row by row.
    ///
    /// Each output component is the dot product of one matrix row with `x`,
    /// which is exactly the computation `apply_block` performs on its rows;
    /// stacking the per-block products therefore reproduces `apply`
    /// bit-for-bit.
    pub(crate) fn forward(&self, x: &ArrayView1<'_, f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.total_rows());
        for (o, row) in out.iter_mut().zip(self.entries.rows()) {
            *o = row.dot(x);
        }
        out
    }

    /// Adjoint product on a stacked vector: accumulates `z[r] * row_r` over
    /// all rows in order.
    pub(crate) fn adjoint(&self, z: &ArrayView1<'_, f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.dim());
        for (zr, row) in z.iter().zip(self.entries.rows()) {
            if *zr != 0.0 {
                out.scaled_add(*zr, &row);
            }
        }
        out
    }

    /// Estimate of `||A||` (largest singular value) by power iteration on
    /// `A* A` from the deterministic all-ones start vector.
    ///
    /// The result is cached on first call; later calls return the cached
    /// estimate regardless of the requested tolerance.
    pub fn operator_norm(&self, tol: f64, max_iter: usize) -> Result<NormEstimate> {
        validate_norm_args(tol, max_iter)?;
        if let Some(est) = self.op_norm.get() {
            return Ok(*est);
        }
        let est = power_iteration_norm(&self.entries.view(), tol, max_iter);
        Ok(*self.op_norm.get_or_init(|| est))
    }

    /// The constant `L = max_i ||A_i||`, estimated per block and cached.
    ///
    /// Single-row blocks are handled directly: the operator norm of a row is
    /// its Euclidean norm.
    pub fn max_block_norm(&self, tol: f64, max_iter: usize) -> Result<NormEstimate> {
        validate_norm_args(tol, max_iter)?;
        if let Some(est) = self.block_norm_max.get() {
            return Ok(*est);
        }
        let mut best = 0.0f64;
        let mut converged = true;
        let mut iterations = 0usize;
        for r in self.structure.ranges() {
            let est = if r.len() == 1 {
                let row = self.entries.row(r.start);
                NormEstimate {
                    value: row.dot(&row).sqrt(),
                    converged: true,
                    iterations: 0,
                }
            } else {
                let block = self.entries.slice(ndarray::s![r.clone(), ..]);
                power_iteration_norm(&block, tol, max_iter)
            };
            best = best.max(est.value);
            converged &= est.converged;
            iterations = iterations.max(est.iterations);
        }
        let est = NormEstimate {
            value: best,
            converged,
            iterations,
        };
        Ok(*self.block_norm_max.get_or_init(|| est))
    }

    /// `||A||` with default tolerance settings.
    pub fn op_norm(&self) -> f64 {
        self.operator_norm(DEFAULT_NORM_TOL, DEFAULT_NORM_MAX_ITER)
            .expect("default norm settings are valid")
            .value
    }

    /// `L = max_i ||A_i||` with default tolerance settings.
    pub fn block_norm_max(&self) -> f64 {
        self.max_block_norm(DEFAULT_NORM_TOL, DEFAULT_NORM_MAX_ITER)
            .expect("default norm settings are valid")
            .value
    }

    /// Lipschitz constant of the block gradients, `max_i ||A_i||^2`; this is
    /// the `L` entering step-size plans and their derived constants.
    pub fn block_lipschitz(&self) -> f64 {
        let l = self.block_norm_max();
        l * l
    }

    /// The cached `||A||` estimate, if one has been computed.
    pub fn cached_op_norm(&self) -> Option<f64> {
        self.op_norm.get().map(|e| e.value)
    }
}

fn validate_norm_args(tol: f64, max_iter: usize) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", format!("must be > 0, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter", "must be >= 1"));
    }
    Ok(())
}

/// Power iteration on `B = A* A` estimating `sqrt(lambda_max(B)) = ||A||`.
///
/// Starts from the normalized all-ones vector and stops when the relative
/// change between consecutive singular-value estimates is at most `tol`.
/// A zero matrix returns 0 without iterating.
fn power_iteration_norm(rows: &ArrayView2<'_, f64>, tol: f64, max_iter: usize) -> NormEstimate {
    let d = rows.ncols();
    if rows.iter().all(|&v| v == 0.0) {
        return NormEstimate {
            value: 0.0,
            converged: true,
            iterations: 0,
        };
    }
    let mut v = Array1::from_elem(d, 1.0 / (d as f64).sqrt());
    let mut sigma_prev = 0.0f64;
    let mut sigma = 0.0f64;
    for it in 1..=max_iter {
        // w = A*(A v)
        let mut av = Array1::zeros(rows.nrows());
        for (o, row) in av.iter_mut().zip(rows.rows()) {
            *o = row.dot(&v);
        }
        let mut w: Array1<f64> = Array1::zeros(d);
        for (avr, row) in av.iter().zip(rows.rows()) {
            w.scaled_add(*avr, &row);
        }
        let lambda = w.dot(&v).max(0.0);
        sigma = lambda.sqrt();
        let wnorm = w.dot(&w).sqrt();
        if wnorm == 0.0 {
            // start vector lies in the null space of A; the estimate is
            // meaningless, so flag non-convergence
            return NormEstimate {
                value: 0.0,
                converged: false,
                iterations: it,
            };
        }
        w /= wnorm;
        v = w;
        if (sigma - sigma_prev).abs() <= tol * sigma.max(f64::MIN_POSITIVE) {
            return NormEstimate {
                value: sigma,
                converged: true,
                iterations: it,
            };
        }
        sigma_prev = sigma;
    }
    NormEstimate {
        value: sigma,
        converged: false,
        iterations: max_iter,
    }
}
