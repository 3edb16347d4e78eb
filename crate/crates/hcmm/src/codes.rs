//! Erasure-coded matrix multiplication: recovery thresholds for all families,
//! per-worker loads, and executable polynomial / MatDot codes over the reals.
//!
//! A coded task is a pair `(Â(x), B̂(x))` of matrix polynomials evaluated at a
//! point `x`. The worker returns `Â(x)·B̂(x)`; any `R` such products determine
//! the product polynomial, whose coefficients hold the blocks of `A·B`.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cuboid::{Dims, GridSpec};
use crate::error::{invalid, Error, Result};
use crate::matrix::{split_ranges, BlockIndex, Matrix};

/// Default cap on the Vandermonde condition estimate before a warning is attached.
pub const DEFAULT_CONDITION_CAP: f64 = 1e10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeFamily {
    Polynomial,
    MatDot,
    PolyDot,
    EntangledPoly,
    Product,
    Uncoded,
}

impl CodeFamily {
    /// Whether this crate can encode and decode the family (the rest are analytics only).
    pub fn is_executable(&self) -> bool {
        matches!(self, Self::Polynomial | Self::MatDot | Self::Uncoded)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    /// Chebyshev nodes on [-1, 1].
    #[default]
    Chebyshev,
    /// The worker index `1, 2, ..., n`.
    Integer,
}

impl std::str::FromStr for PointKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chebyshev" => Ok(Self::Chebyshev),
            "integer" => Ok(Self::Integer),
            _ => invalid(format!("unknown point kind {s:?}")),
        }
    }
}

/// Exponent layout of a polynomial code.
///
/// `AMinor`: `Â = Σ Ãᵢ x^i`, `B̂ = Σ B̃ⱼ x^{mx·j}`; `B̂` depends on `mx`.
/// `BMinor`: `Â = Σ Ãᵢ x^{my·i}`, `B̂ = Σ B̃ⱼ x^j`; `Â` depends on `my`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExponentPattern {
    #[default]
    AMinor,
    BMinor,
}

/// Basis the code polynomials are written in. Chebyshev points pair with the
/// Chebyshev basis `T_k`, which keeps the interpolation system well conditioned
/// at large thresholds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    #[default]
    Monomial,
    Chebyshev,
}

/// Evaluation points. Chebyshev nodes are listed in a strided order, so any run
/// of consecutive indices (one worker's slots) is spread across `[-1, 1]`.
pub fn eval_points(kind: PointKind, count: usize) -> Vec<f64> {
    match kind {
        PointKind::Chebyshev => {
            let step = spread_step(count);
            (0..count)
                .map(|t| {
                    let k = t * step % count;
                    (std::f64::consts::PI * (2 * k + 1) as f64 / (2 * count) as f64).cos()
                })
                .collect()
        }
        PointKind::Integer => (1..=count).map(|k| k as f64).collect(),
    }
}

/// Stride coprime to `n` closest to `n·(1 - 1/φ)`.
fn spread_step(n: usize) -> usize {
    if n < 3 {
        return 1;
    }
    let target = n as f64 * (1.0 - 1.0 / 1.618_033_988_749_895);
    (1..n)
        .filter(|&s| gcd(s, n) == 1)
        .min_by(|&a, &b| {
            (a as f64 - target)
                .abs()
                .total_cmp(&(b as f64 - target).abs())
        })
        .unwrap_or(1)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `T_0(x), …, T_{n-1}(x)`.
pub fn chebyshev_t(x: f64, n: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(n);
    for k in 0..n {
        t.push(match k {
            0 => 1.0,
            1 => x,
            _ => 2.0 * x * t[k - 1] - t[k - 2],
        });
    }
    t
}

fn check_family(family: CodeFamily, g: &GridSpec, n: usize) -> Result<()> {
    if g.mx == 0 || g.mz == 0 || g.my == 0 {
        return invalid(format!("grid counts must be positive, got {g:?}"));
    }
    match family {
        CodeFamily::Polynomial if g.mz != 1 => invalid("polynomial codes require mz = 1"),
        CodeFamily::MatDot if g.mx != 1 || g.my != 1 => invalid("MatDot codes require mx = my = 1"),
        CodeFamily::Product if g.mz != 1 => invalid("product codes require mz = 1"),
        CodeFamily::Product if !is_square(n) => {
            invalid(format!("product codes need a square worker grid, n = {n}"))
        }
        CodeFamily::Uncoded if g.info_dim() != n => invalid(format!(
            "uncoded grid must have D = n, got D = {} and n = {n}",
            g.info_dim()
        )),
        _ => Ok(()),
    }
}

fn is_square(n: usize) -> bool {
    let r = (n as f64).sqrt().round() as usize;
    r * r == n
}

/// Minimum number of completed tasks needed to decode.
pub fn recovery_threshold(family: CodeFamily, g: &GridSpec, n: usize) -> Result<usize> {
    check_family(family, g, n)?;
    let (mx, mz, my) = (g.mx, g.mz, g.my);
    Ok(match family {
        CodeFamily::Polynomial => mx * my,
        CodeFamily::MatDot => 2 * mz - 1,
        CodeFamily::PolyDot => 2 * mx * mz * my - mx * my,
        CodeFamily::EntangledPoly => mx * mz * my + mz - 1,
        CodeFamily::Product => {
            let s = (n as f64).sqrt().round() as usize;
            (mx + my - 2) * s + 1 - (mx - 1) * (my - 1)
        }
        CodeFamily::Uncoded => n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeSpec {
    pub family: CodeFamily,
    pub grid: GridSpec,
    /// Number of encoded tasks `N`.
    pub block_length: usize,
    /// `D = mx·mz·my`.
    pub info_dim: usize,
    pub recovery_threshold: usize,
    pub eval_points: Vec<f64>,
    pub pattern: ExponentPattern,
    #[serde(default)]
    pub basis: Basis,
    /// Shape of the product this code covers.
    pub dims: Dims,
}

impl CodeSpec {
    pub fn new(
        family: CodeFamily,
        grid: GridSpec,
        block_length: usize,
        dims: Dims,
        points: PointKind,
    ) -> Result<Self> {
        let pts = if family == CodeFamily::Uncoded {
            (0..block_length).map(|i| i as f64).collect()
        } else {
            eval_points(points, block_length)
        };
        let spec = Self::with_points(family, grid, dims, pts)?;
        Ok(match (family, points) {
            (CodeFamily::Polynomial, PointKind::Chebyshev) => Self {
                basis: Basis::Chebyshev,
                ..spec
            },
            _ => spec,
        })
    }

    pub fn with_points(
        family: CodeFamily,
        grid: GridSpec,
        dims: Dims,
        eval_points: Vec<f64>,
    ) -> Result<Self> {
        let n = eval_points.len();
        dims.validate()?;
        grid.validate_for(&dims)?;
        let r = recovery_threshold(family, &grid, n)?;
        if r > n {
            return Err(Error::Unrecoverable(format!(
                "recovery threshold {r} exceeds block length {n}"
            )));
        }
        check_distinct(&eval_points)?;
        Ok(Self {
            family,
            grid,
            block_length: n,
            info_dim: grid.info_dim(),
            recovery_threshold: r,
            eval_points,
            pattern: ExponentPattern::AMinor,
            basis: Basis::Monomial,
            dims,
        })
    }

    pub fn with_pattern(mut self, pattern: ExponentPattern) -> Self {
        self.pattern = pattern;
        self
    }

    /// The Chebyshev basis is available for polynomial codes only.
    pub fn with_basis(mut self, basis: Basis) -> Result<Self> {
        if basis == Basis::Chebyshev && self.family != CodeFamily::Polynomial {
            return invalid(format!("{:?} codes use the monomial basis", self.family));
        }
        self.basis = basis;
        Ok(self)
    }

    /// Exponents of the `Â` blocks (x-major, then z) and `B̂` blocks (z-major, then y).
    pub(crate) fn exponents(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let GridSpec { mx, mz, my } = self.grid;
        match self.family {
            CodeFamily::Polynomial => Ok(match self.pattern {
                ExponentPattern::AMinor => ((0..mx).collect(), (0..my).map(|j| mx * j).collect()),
                ExponentPattern::BMinor => ((0..mx).map(|i| my * i).collect(), (0..my).collect()),
            }),
            CodeFamily::MatDot => Ok(((0..mz).collect(), (0..mz).map(|i| mz - 1 - i).collect())),
            other => invalid(format!("{other:?} has no executable encoder")),
        }
    }
}

fn check_distinct(points: &[f64]) -> Result<()> {
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return invalid("duplicate evaluation points");
    }
    if points.iter().any(|p| !p.is_finite()) {
        return invalid("non-finite evaluation point");
    }
    Ok(())
}

/// Per-worker loads: reals received, multiply-accumulates, reals sent back.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub comm_in: f64,
    pub comp: f64,
    pub comm_out: f64,
}

pub fn load_profile(spec: &CodeSpec, d: &Dims) -> LoadProfile {
    grid_loads(&spec.grid, d)
}

/// Closed-form loads of a single task on grid `g`.
pub fn grid_loads(g: &GridSpec, d: &Dims) -> LoadProfile {
    let (nx, nz, ny) = (d.nx as f64, d.nz as f64, d.ny as f64);
    let (mx, mz, my) = (g.mx as f64, g.mz as f64, g.my as f64);
    LoadProfile {
        comm_in: nx * nz / (mx * mz) + nz * ny / (mz * my),
        comp: nx * nz * ny / (mx * mz * my),
        comm_out: nx * ny / (mx * my),
    }
}

#[derive(Clone, Debug)]
pub struct EncodedTask {
    pub a_hat: Arc<Matrix>,
    pub b_hat: Arc<Matrix>,
    pub point: f64,
    pub task_id: usize,
    pub level: usize,
}

/// Manifest record written next to an encoded task set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    #[serde(rename = "taskId")]
    pub task_id: usize,
    pub point: f64,
    pub level: usize,
}

/// Pre-sliced, zero-padded operand blocks of one code, ready to be evaluated.
#[derive(Clone, Debug)]
pub struct Encoder {
    a_blocks: Vec<Matrix>,
    a_exps: Vec<usize>,
    b_blocks: Vec<Matrix>,
    b_exps: Vec<usize>,
    uncoded: Option<Vec<(usize, usize)>>,
    basis: Basis,
}

impl Encoder {
    /// Slices `a` (`nx x nz`) and `b` (`nz x ny`) per `spec`.
    pub fn new(spec: &CodeSpec, a: &Matrix, b: &Matrix) -> Result<Self> {
        let d = spec.dims;
        if a.shape() != (d.nx, d.nz) || b.shape() != (d.nz, d.ny) {
            return invalid(format!(
                "operands {:?} x {:?} do not match dims {d:?}",
                a.shape(),
                b.shape()
            ));
        }
        let GridSpec { mx, mz, my } = spec.grid;
        let xs = split_ranges(d.nx, mx);
        let zs = split_ranges(d.nz, mz);
        let ys = split_ranges(d.ny, my);
        if spec.family == CodeFamily::Uncoded {
            let mut a_blocks = Vec::new();
            let mut b_blocks = Vec::new();
            let mut pairs = Vec::new();
            for x in &xs {
                for z in &zs {
                    for y in &ys {
                        pairs.push((a_blocks.len(), b_blocks.len()));
                        a_blocks.push(a.extract_padded(
                            &BlockIndex::new(x.clone(), z.clone()),
                            x.len(),
                            z.len(),
                        ));
                        b_blocks.push(b.extract_padded(
                            &BlockIndex::new(z.clone(), y.clone()),
                            z.len(),
                            y.len(),
                        ));
                    }
                }
            }
            return Ok(Self {
                a_blocks,
                a_exps: Vec::new(),
                b_blocks,
                b_exps: Vec::new(),
                uncoded: Some(pairs),
                basis: Basis::Monomial,
            });
        }
        let (a_exps, b_exps) = spec.exponents()?;
        let (bx, bz, by) = (xs[0].len(), zs[0].len(), ys[0].len());
        let mut a_blocks = Vec::with_capacity(mx * mz);
        for x in &xs {
            for z in &zs {
                a_blocks.push(a.extract_padded(&BlockIndex::new(x.clone(), z.clone()), bx, bz));
            }
        }
        let mut b_blocks = Vec::with_capacity(mz * my);
        for z in &zs {
            for y in &ys {
                b_blocks.push(b.extract_padded(&BlockIndex::new(z.clone(), y.clone()), bz, by));
            }
        }
        Ok(Self {
            a_blocks,
            a_exps,
            b_blocks,
            b_exps,
            uncoded: None,
            basis: spec.basis,
        })
    }

    /// Whether `Â` is the same for every evaluation point.
    pub fn a_is_constant(&self) -> bool {
        self.uncoded.is_none() && self.a_blocks.len() == 1 && self.a_exps == [0]
    }

    /// Whether `B̂` is the same for every evaluation point.
    pub fn b_is_constant(&self) -> bool {
        self.uncoded.is_none() && self.b_blocks.len() == 1 && self.b_exps == [0]
    }

    pub fn a_hat(&self, spec: &CodeSpec, index: usize) -> Matrix {
        match &self.uncoded {
            Some(pairs) => self.a_blocks[pairs[index].0].clone(),
            None => evaluate(
                &self.a_blocks,
                &self.a_exps,
                spec.eval_points[index],
                self.basis,
            ),
        }
    }

    pub fn b_hat(&self, spec: &CodeSpec, index: usize) -> Matrix {
        match &self.uncoded {
            Some(pairs) => self.b_blocks[pairs[index].1].clone(),
            None => evaluate(
                &self.b_blocks,
                &self.b_exps,
                spec.eval_points[index],
                self.basis,
            ),
        }
    }

    pub fn task(&self, spec: &CodeSpec, index: usize, level: usize) -> EncodedTask {
        EncodedTask {
            a_hat: Arc::new(self.a_hat(spec, index)),
            b_hat: Arc::new(self.b_hat(spec, index)),
            point: spec.eval_points[index],
            task_id: index,
            level,
        }
    }
}

fn evaluate(blocks: &[Matrix], exps: &[usize], x: f64, basis: Basis) -> Matrix {
    let mut out = Matrix::zeros(blocks[0].rows(), blocks[0].cols());
    let t = match basis {
        Basis::Chebyshev => chebyshev_t(x, exps.iter().max().map_or(0, |m| m + 1)),
        Basis::Monomial => Vec::new(),
    };
    for (blk, &e) in blocks.iter().zip(exps) {
        let c = match basis {
            Basis::Chebyshev => t[e],
            Basis::Monomial => x.powi(e as i32),
        };
        if c != 0.0 {
            out.axpy(c, blk).expect("blocks share a shape");
        }
    }
    out
}

/// Encodes every task of `spec`.
pub fn encode(spec: &CodeSpec, a: &Matrix, b: &Matrix) -> Result<Vec<EncodedTask>> {
    let enc = Encoder::new(spec, a, b)?;
    Ok((0..spec.block_length)
        .map(|i| enc.task(spec, i, 0))
        .collect())
}

/// Polynomial code with `Â(x) = Σ Ãᵢ x^i`, `B̂(x) = Σ B̃ⱼ x^{mx·j}`.
pub fn encode_polynomial(
    a: &Matrix,
    b: &Matrix,
    g: &GridSpec,
    points: &[f64],
) -> Result<Vec<EncodedTask>> {
    let dims = Dims::new(a.rows(), a.cols(), b.cols());
    let spec = CodeSpec::with_points(CodeFamily::Polynomial, *g, dims, points.to_vec())?;
    encode(&spec, a, b)
}

/// MatDot code with `Â(x) = Σ Ãᵢ x^i`, `B̂(x) = Σ B̃ᵢ x^{mz-1-i}`.
pub fn encode_matdot(
    a: &Matrix,
    b: &Matrix,
    mz: usize,
    points: &[f64],
) -> Result<Vec<EncodedTask>> {
    let dims = Dims::new(a.rows(), a.cols(), b.cols());
    let spec = CodeSpec::with_points(
        CodeFamily::MatDot,
        GridSpec::new(1, mz, 1),
        dims,
        points.to_vec(),
    )?;
    encode(&spec, a, b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DecodeWarning {
    IllConditioned { estimate: f64, cap: f64 },
}

#[derive(Clone, Debug)]
pub struct Decoded {
    pub product: Matrix,
    pub warning: Option<DecodeWarning>,
}

#[derive(Clone, Copy, Debug)]
pub struct DecodeOptions {
    pub condition_cap: f64,
    /// Split entries across the rayon pool; output is identical either way.
    pub parallel: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            condition_cap: DEFAULT_CONDITION_CAP,
            parallel: false,
        }
    }
}

/// Upper estimate of the infinity-norm condition number of the Vandermonde
/// matrix on `xs`, using the product bound for the inverse.
pub fn condition_estimate(xs: &[f64]) -> f64 {
    let n = xs.len();
    let norm_v = xs
        .iter()
        .map(|x| (0..n).map(|k| x.abs().powi(k as i32)).sum::<f64>())
        .fold(0.0, f64::max);
    let log_inv = (0..n)
        .map(|j| {
            (0..n)
                .filter(|&i| i != j)
                .map(|i| (1.0 + xs[i].abs()).ln() - (xs[j] - xs[i]).abs().ln())
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    norm_v * log_inv.exp()
}

/// Decodes `A·B` from completed `(point, product)` pairs.
pub fn decode(spec: &CodeSpec, completed: &[(f64, Matrix)]) -> Result<Decoded> {
    decode_with(spec, completed, DecodeOptions::default())
}

pub fn decode_with(
    spec: &CodeSpec,
    completed: &[(f64, Matrix)],
    opts: DecodeOptions,
) -> Result<Decoded> {
    let r = spec.recovery_threshold;
    let pts: Vec<f64> = completed.iter().map(|(p, _)| *p).collect();
    check_distinct(&pts)?;
    if completed.len() < r {
        return Err(Error::NotYetRecoverable {
            have: completed.len(),
            need: r,
        });
    }
    let shape = completed[0].1.shape();
    if completed.iter().any(|(_, m)| m.shape() != shape) {
        return invalid("completed products differ in shape");
    }
    let d = spec.dims;
    if spec.family == CodeFamily::Uncoded {
        return decode_uncoded(spec, completed);
    }
    let used = &completed[..r];
    let xs: Vec<f64> = used.iter().map(|(p, _)| *p).collect();
    if let Some(x) = xs.iter().find(|x| !spec.eval_points.contains(x)) {
        return invalid(format!("point {x} is not an evaluation point of this code"));
    }
    let ys: Vec<&[f64]> = used.iter().map(|(_, m)| m.data()).collect();
    let wanted: Vec<usize> = match spec.family {
        CodeFamily::Polynomial => (0..r).collect(),
        CodeFamily::MatDot => vec![spec.grid.mz - 1],
        other => return invalid(format!("{other:?} has no executable decoder")),
    };
    let chebyshev = spec.family == CodeFamily::Polynomial && spec.basis == Basis::Chebyshev;
    let (coeffs, estimate) = if chebyshev {
        let GridSpec { mx, my, .. } = spec.grid;
        let (fine, coarse) = match spec.pattern {
            ExponentPattern::AMinor => (mx, my),
            ExponentPattern::BMinor => (my, mx),
        };
        let (mut c, cond) = chebyshev_solve(&xs, &ys, opts.parallel)?;
        unmix(&mut c, fine, coarse);
        (c, cond)
    } else {
        (
            interpolate(&xs, &ys, &wanted, opts.parallel),
            condition_estimate(&xs),
        )
    };
    let (bh, bw) = shape;
    let product = match spec.family {
        CodeFamily::MatDot => crop(
            &Matrix::from_raw(bh, bw, coeffs.into_iter().next().expect("one")),
            d.nx,
            d.ny,
        ),
        _ => {
            let GridSpec { mx, my, .. } = spec.grid;
            let xs_r = split_ranges(d.nx, mx);
            let ys_r = split_ranges(d.ny, my);
            let mut out = Matrix::zeros(d.nx, d.ny);
            for (i, xr) in xs_r.iter().enumerate() {
                for (j, yr) in ys_r.iter().enumerate() {
                    let idx = match spec.pattern {
                        ExponentPattern::AMinor => i + mx * j,
                        ExponentPattern::BMinor => my * i + j,
                    };
                    let blk = Matrix::from_raw(bh, bw, coeffs[idx].clone());
                    let blk = crop(&blk, xr.len(), yr.len());
                    out.add_block_at(xr.start, yr.start, &blk);
                }
            }
            out
        }
    };
    let warning = (estimate > opts.condition_cap).then_some(DecodeWarning::IllConditioned {
        estimate,
        cap: opts.condition_cap,
    });
    Ok(Decoded { product, warning })
}

fn crop(m: &Matrix, rows: usize, cols: usize) -> Matrix {
    if m.shape() == (rows, cols) {
        return m.clone();
    }
    m.extract_padded(&BlockIndex::new(0..rows, 0..cols), rows, cols)
}

fn decode_uncoded(spec: &CodeSpec, completed: &[(f64, Matrix)]) -> Result<Decoded> {
    let d = spec.dims;
    let GridSpec { mx, mz, my } = spec.grid;
    let xs = split_ranges(d.nx, mx);
    let ys = split_ranges(d.ny, my);
    let mut out = Matrix::zeros(d.nx, d.ny);
    for (p, m) in completed {
        let t = *p as usize;
        if *p != t as f64 || t >= spec.block_length {
            return invalid(format!("uncoded task index {p} out of range"));
        }
        let (i, j) = (t / (mz * my), t % my);
        if m.shape() != (xs[i].len(), ys[j].len()) {
            return invalid(format!("uncoded block {t} has the wrong shape"));
        }
        out.add_block_at(xs[i].start, ys[j].start, m);
    }
    Ok(Decoded {
        product: out,
        warning: None,
    })
}

const CHUNK: usize = 2048;

/// Chebyshev coefficients of the degree-`(R-1)` interpolant through `(xs[k], ys[k])`,
/// entrywise, with the infinity-norm condition number of the system.
fn chebyshev_solve(xs: &[f64], ys: &[&[f64]], parallel: bool) -> Result<(Vec<Vec<f64>>, f64)> {
    let r = xs.len();
    let v: Vec<Vec<f64>> = xs.iter().map(|&x| chebyshev_t(x, r)).collect();
    let inv =
        invert(&v).ok_or_else(|| Error::Unrecoverable("singular interpolation system".into()))?;
    let norm = |m: &[Vec<f64>]| {
        m.iter()
            .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let cond = norm(&v) * norm(&inv);
    let e = ys[0].len();
    let starts: Vec<usize> = (0..e).step_by(CHUNK).collect();
    let run = |start: usize| -> (usize, Vec<Vec<f64>>) {
        let len = CHUNK.min(e - start);
        let piece = inv
            .iter()
            .map(|row| {
                let mut acc = vec![0.0; len];
                for (w, y) in row.iter().zip(ys) {
                    for (a, v) in acc.iter_mut().zip(&y[start..start + len]) {
                        *a += w * v;
                    }
                }
                acc
            })
            .collect();
        (start, piece)
    };
    let pieces: Vec<(usize, Vec<Vec<f64>>)> = if parallel {
        starts.par_iter().map(|&s| run(s)).collect()
    } else {
        starts.iter().map(|&s| run(s)).collect()
    };
    let mut out = vec![vec![0.0; e]; r];
    for (start, piece) in pieces {
        for (dst, src) in out.iter_mut().zip(piece) {
            dst[start..start + src.len()].copy_from_slice(&src);
        }
    }
    Ok((out, cond))
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col] == 0.0 {
            return None;
        }
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = 1.0 / a[col][col];
        a[col].iter_mut().for_each(|x| *x *= d);
        inv[col].iter_mut().for_each(|x| *x *= d);
        for row in 0..n {
            if row == col || a[row][col] == 0.0 {
                continue;
            }
            let f = a[row][col];
            for k in 0..n {
                a[row][k] -= f * a[col][k];
                inv[row][k] -= f * inv[col][k];
            }
        }
    }
    Some(inv)
}

/// Turns the Chebyshev coefficients of `Σ Pᵤᵥ T_u T_{fine·v}` into the products
/// `Pᵤᵥ`, stored at `v·fine + u`, using `T_a T_b = (T_{a+b} + T_{|a-b|}) / 2`.
fn unmix(c: &mut [Vec<f64>], fine: usize, coarse: usize) {
    for v in (0..coarse).rev() {
        for u in 1..fine {
            let k = v * fine + u;
            let partner = (v + 1 < coarse).then(|| (v + 1) * fine + fine - u);
            let (lo, hi) = c.split_at_mut(k + 1);
            let cur = &mut lo[k];
            let scale = if v == 0 { 1.0 } else { 2.0 };
            let half = if v == 0 { 0.5 } else { 1.0 };
            match partner {
                Some(p) => {
                    for (x, q) in cur.iter_mut().zip(&hi[p - k - 1]) {
                        *x = scale * *x - half * q;
                    }
                }
                None => cur.iter_mut().for_each(|x| *x *= scale),
            }
        }
    }
}

/// Monomial coefficients `wanted` of the degree-`(R-1)` matrix polynomial through
/// `(xs[k], ys[k])`, entrywise, via Newton divided differences.
fn interpolate(xs: &[f64], ys: &[&[f64]], wanted: &[usize], parallel: bool) -> Vec<Vec<f64>> {
    let e = ys[0].len();
    let mut out: Vec<Vec<f64>> = wanted.iter().map(|_| vec![0.0; e]).collect();
    let starts: Vec<usize> = (0..e).step_by(CHUNK).collect();
    let run = |start: usize| -> (usize, Vec<Vec<f64>>) {
        let len = CHUNK.min(e - start);
        (start, interpolate_chunk(xs, ys, start, len, wanted))
    };
    let pieces: Vec<(usize, Vec<Vec<f64>>)> = if parallel {
        starts.par_iter().map(|&s| run(s)).collect()
    } else {
        starts.iter().map(|&s| run(s)).collect()
    };
    for (start, piece) in pieces {
        for (dst, src) in out.iter_mut().zip(piece) {
            dst[start..start + src.len()].copy_from_slice(&src);
        }
    }
    out
}

fn interpolate_chunk(
    xs: &[f64],
    ys: &[&[f64]],
    start: usize,
    len: usize,
    wanted: &[usize],
) -> Vec<Vec<f64>> {
    let r = xs.len();
    let mut dd: Vec<Vec<f64>> = ys.iter().map(|y| y[start..start + len].to_vec()).collect();
    for j in 1..r {
        for i in (j..r).rev() {
            let inv = 1.0 / (xs[i] - xs[i - j]);
            let (lo, hi) = dd.split_at_mut(i);
            for (h, l) in hi[0].iter_mut().zip(&lo[i - 1]) {
                *h = (*h - *l) * inv;
            }
        }
    }
    // Horner expansion of the Newton form into monomial coefficients.
    let mut poly: Vec<Vec<f64>> = vec![vec![0.0; len]; r];
    poly[0].copy_from_slice(&dd[r - 1]);
    for k in (0..r - 1).rev() {
        let deg = r - 1 - k;
        for i in (1..=deg).rev() {
            let (lo, hi) = poly.split_at_mut(i);
            for (h, l) in hi[0].iter_mut().zip(&lo[i - 1]) {
                *h = *l - xs[k] * *h;
            }
        }
        for (p, c) in poly[0].iter_mut().zip(&dd[k]) {
            *p = -xs[k] * *p + c;
        }
    }
    wanted
        .iter()
        .map(|&w| std::mem::take(&mut poly[w]))
        .collect()
}

/// Writes `a_<id>.bin`, `b_<id>.bin` and `manifest.json` into `dir`.
pub fn write_task_set(dir: &Path, tasks: &[EncodedTask]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Vec::with_capacity(tasks.len());
    for t in tasks {
        let fa = std::fs::File::create(dir.join(format!("a_{}.bin", t.task_id)))?;
        crate::matrix::write_binary(&t.a_hat, std::io::BufWriter::new(fa))?;
        let fb = std::fs::File::create(dir.join(format!("b_{}.bin", t.task_id)))?;
        crate::matrix::write_binary(&t.b_hat, std::io::BufWriter::new(fb))?;
        manifest.push(TaskManifest {
            task_id: t.task_id,
            point: t.point,
            level: t.level,
        });
    }
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn read_task_set(dir: &Path) -> Result<Vec<EncodedTask>> {
    let manifest: Vec<TaskManifest> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    manifest
        .into_iter()
        .map(|m| {
            let fa = std::fs::File::open(dir.join(format!("a_{}.bin", m.task_id)))?;
            let fb = std::fs::File::open(dir.join(format!("b_{}.bin", m.task_id)))?;
            Ok(EncodedTask {
                a_hat: Arc::new(crate::matrix::read_binary(std::io::BufReader::new(fa))?),
                b_hat: Arc::new(crate::matrix::read_binary(std::io::BufReader::new(fb))?),
                point: m.point,
                task_id: m.task_id,
                level: m.level,
            })
        })
        .collect()
}
