//! Dense row-major matrices, block extraction and concatenation, and the
//! reference triple-loop multiplier used as the correctness oracle.

use std::io::{Read, Write};
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Magic bytes at the start of the binary matrix format.
pub const MAGIC: &[u8; 8] = b"HCMMMAT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Half-open row and column ranges into a parent matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockIndex {
    pub row_range: Range<usize>,
    pub col_range: Range<usize>,
}

impl BlockIndex {
    pub fn new(row_range: Range<usize>, col_range: Range<usize>) -> Self {
        Self {
            row_range,
            col_range,
        }
    }
}

impl Matrix {
    /// Builds a matrix from user data, rejecting bad lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return invalid(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            ));
        }
        if data.len() != rows * cols {
            return invalid(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite entry at flat index {pos}"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for data produced by the library itself.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return invalid("ragged rows");
        }
        Self::new(r, c, rows.iter().flatten().copied().collect())
    }

    /// Entries drawn uniformly from [-1, 1).
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Self::from_raw(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * s).collect(),
        )
    }

    pub fn add(&self, other: &Matrix) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self::from_raw(self.rows, self.cols, data))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self::from_raw(self.rows, self.cols, data))
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Matrix) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `||self - reference||_F / ||reference||_F`, or the absolute error when the
    /// reference is zero.
    pub fn rel_error(&self, reference: &Matrix) -> Result<f64> {
        let diff = self.sub(reference)?.frobenius_norm();
        let norm = reference.frobenius_norm();
        Ok(if norm == 0.0 { diff } else { diff / norm })
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Adds `block` into the sub-matrix starting at (`row0`, `col0`), cropping
    /// whatever falls outside `self`.
    pub fn add_block_at(&mut self, row0: usize, col0: usize, block: &Matrix) {
        let rows = block.rows.min(self.rows.saturating_sub(row0));
        let cols = block.cols.min(self.cols.saturating_sub(col0));
        for r in 0..rows {
            let dst = &mut self.data[(row0 + r) * self.cols + col0..][..cols];
            let src = &block.data[r * block.cols..][..cols];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    /// Copies `idx` out of `self` into a zero matrix of shape `rows x cols`
    /// (which must be at least the block size); used for zero padding.
    pub(crate) fn extract_padded(&self, idx: &BlockIndex, rows: usize, cols: usize) -> Self {
        let h = idx.row_range.len();
        let w = idx.col_range.len();
        debug_assert!(h <= rows && w <= cols);
        let mut out = Self::zeros(rows, cols);
        for r in 0..h {
            let src =
                &self.data[(idx.row_range.start + r) * self.cols + idx.col_range.start..][..w];
            out.data[r * cols..r * cols + w].copy_from_slice(src);
        }
        out
    }

    fn check_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            ));
        }
        Ok(())
    }
}

/// Exact triple-loop product, the oracle for every decode result.
pub fn matmul_reference(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return invalid(format!(
            "dimension mismatch: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// Blocked product used by workers; same contract as [`matmul_reference`].
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return invalid(format!(
            "dimension mismatch: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(m, n);
    // SAFETY: all three buffers are valid row-major storage of the stated shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            n as isize,
            1,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(out)
}

pub fn extract_block(m: &Matrix, idx: &BlockIndex) -> Result<Matrix> {
    let BlockIndex {
        row_range,
        col_range,
    } = idx;
    if row_range.start >= row_range.end
        || col_range.start >= col_range.end
        || row_range.end > m.rows
        || col_range.end > m.cols
    {
        return invalid(format!(
            "block {row_range:?}x{col_range:?} out of range for {}x{}",
            m.rows, m.cols
        ));
    }
    Ok(m.extract_padded(idx, row_range.len(), col_range.len()))
}

/// Assembles a grid of blocks; every grid row must share a height and every
/// grid column a width.
pub fn concat_blocks(grid: &[Vec<Matrix>]) -> Result<Matrix> {
    let Some(first_row) = grid.first() else {
        return invalid("empty block grid");
    };
    let gc = first_row.len();
    if gc == 0 || grid.iter().any(|row| row.len() != gc) {
        return invalid("ragged block grid");
    }
    let heights: Vec<usize> = grid.iter().map(|row| row[0].rows).collect();
    let widths: Vec<usize> = first_row.iter().map(|b| b.cols).collect();
    for (gi, row) in grid.iter().enumerate() {
        for (gj, block) in row.iter().enumerate() {
            if block.rows != heights[gi] || block.cols != widths[gj] {
                return invalid(format!("block ({gi},{gj}) has inconsistent shape"));
            }
        }
    }
    let rows: usize = heights.iter().sum();
    let cols: usize = widths.iter().sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r0 = 0;
    for (gi, row) in grid.iter().enumerate() {
        let mut c0 = 0;
        for (gj, block) in row.iter().enumerate() {
            out.add_block_at(r0, c0, block);
            c0 += widths[gj];
        }
        r0 += heights[gi];
    }
    Ok(out)
}

/// Splits `0..n` into `parts` consecutive ranges whose lengths differ by at
/// most one; the leading ranges take the remainder.
pub fn split_ranges(n: usize, parts: usize) -> Vec<Range<usize>> {
    split_range(0..n, parts)
}

pub fn split_range(r: Range<usize>, parts: usize) -> Vec<Range<usize>> {
    assert!(parts >= 1, "parts must be positive");
    let n = r.len();
    let base = n / parts;
    let extra = n % parts;
    let mut start = r.start;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let out = start..start + len;
            start += len;
            out
        })
        .collect()
}

/// Partitions `m` into a `row_parts x col_parts` grid of blocks.
pub fn split_grid(m: &Matrix, row_parts: usize, col_parts: usize) -> Result<Vec<Vec<Matrix>>> {
    if row_parts == 0 || col_parts == 0 || row_parts > m.rows || col_parts > m.cols {
        return invalid(format!(
            "grid {row_parts}x{col_parts} does not fit a {}x{} matrix",
            m.rows, m.cols
        ));
    }
    let rr = split_ranges(m.rows, row_parts);
    let cr = split_ranges(m.cols, col_parts);
    rr.iter()
        .map(|r| {
            cr.iter()
                .map(|c| extract_block(m, &BlockIndex::new(r.clone(), c.clone())))
                .collect()
        })
        .collect()
}

pub fn write_binary<W: Write>(m: &Matrix, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(m.rows as u64).to_le_bytes())?;
    w.write_all(&(m.cols as u64).to_le_bytes())?;
    for v in &m.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Matrix> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return invalid("bad matrix magic");
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::InvalidInput("matrix header overflows".into()))?;
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Matrix::new(rows, cols, data)
}

/// Reads a headerless CSV of reals, one matrix row per line.
pub fn read_csv<R: Read>(r: R) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("bad number {f:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}
