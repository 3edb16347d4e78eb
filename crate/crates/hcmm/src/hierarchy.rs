//! Worker schedules and recovery rules for the non-hierarchical scheme and
//! the hierarchical schemes BICC, MLCC, RMLCC and HHCC.
//!
//! Every scheme is described the same way: a list of levels, each an
//! independent code over one task block of the cuboid, and for every worker an
//! ordered list of slots naming a level and an evaluation index. BICC is one
//! level with `P` slots per worker, MLCC is `L` levels with one slot each, and
//! HHCC sits in between.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codes::{
    decode_with, recovery_threshold, CodeFamily, CodeSpec, DecodeOptions, Decoded, EncodedTask,
    Encoder, ExponentPattern, PointKind,
};
use crate::cuboid::{strip_layout, Axis, Dims, GridSpec, Region, TaskBlock};
use crate::error::{invalid, Error, Result};
use crate::matrix::{matmul, split_ranges, BlockIndex, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HierarchyMode {
    NonH,
    Bicc,
    Mlcc,
    Rmlcc,
    Hhcc,
}

/// Per-level recovery thresholds, nonincreasing in the level index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryProfile {
    pub thresholds: Vec<usize>,
}

impl RecoveryProfile {
    pub fn new(thresholds: Vec<usize>) -> Self {
        Self { thresholds }
    }

    pub fn uniform(r: usize, levels: usize) -> Self {
        Self::new(vec![r; levels])
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn sum(&self) -> usize {
        self.thresholds.iter().sum()
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.thresholds.windows(2).all(|w| w[1] <= w[0])
    }

    /// Checks monotonicity and that level `l` needs at most `block_lengths[l]` results.
    pub fn validate(&self, block_lengths: &[usize]) -> Result<()> {
        if self.thresholds.len() != block_lengths.len() {
            return invalid(format!(
                "profile has {} levels, expected {}",
                self.thresholds.len(),
                block_lengths.len()
            ));
        }
        if !self.is_nonincreasing() {
            return invalid(format!(
                "profile {:?} is not nonincreasing",
                self.thresholds
            ));
        }
        for (l, (&r, &n)) in self.thresholds.iter().zip(block_lengths).enumerate() {
            if r > n {
                return invalid(format!("level {l}: threshold {r} exceeds block length {n}"));
            }
        }
        Ok(())
    }
}

/// The code the hierarchy is built on, before any block length is fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseCode {
    pub family: CodeFamily,
    pub grid: GridSpec,
    pub dims: Dims,
    #[serde(default)]
    pub points: PointKind,
}

impl BaseCode {
    pub fn new(family: CodeFamily, grid: GridSpec, dims: Dims) -> Self {
        Self {
            family,
            grid,
            dims,
            points: PointKind::Chebyshev,
        }
    }

    pub fn with_points(mut self, points: PointKind) -> Self {
        self.points = points;
        self
    }

    pub fn threshold(&self, n: usize) -> Result<usize> {
        recovery_threshold(self.family, &self.grid, n)
    }

    /// Information dimension a level needs so that its threshold is `r`.
    pub fn level_dim(&self, r: usize) -> usize {
        match self.family {
            CodeFamily::MatDot => (r + 2) / 2,
            _ => r,
        }
    }
}

/// How multilevel task blocks are laid out in the cuboid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Stack along the base grid's dominant axis.
    #[default]
    Auto,
    /// Stack along the given axis.
    Dominance(Axis),
    /// Explicit cell grid and stacking axis.
    Cells { cells: GridSpec, stack: Axis },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCode {
    pub level: usize,
    /// Slots each worker spends on this level.
    pub p: usize,
    pub threshold: usize,
    /// `None` for a level with threshold 0, which nobody computes.
    pub code: Option<CodeSpec>,
    pub block: Option<TaskBlock>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRef {
    pub level: usize,
    /// Position of this task among the worker's tasks of the same level.
    pub slot: usize,
    pub point_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchySpec {
    pub mode: HierarchyMode,
    /// Subtasks per worker.
    pub p: usize,
    pub levels: usize,
    pub per_level_subtasks: Vec<usize>,
    pub profile: RecoveryProfile,
    pub base: BaseCode,
    pub base_code: CodeSpec,
    pub workers: usize,
    pub level_codes: Vec<LevelCode>,
    /// Ordered slots for each worker.
    pub worker_slots: Vec<Vec<SlotRef>>,
    /// Regions the master multiplies directly.
    pub residual: Vec<Region>,
    /// Sum of the thresholds actually achieved by the level codes.
    pub achieved_budget: usize,
    /// Stacking axis of the multilevel layout, if any.
    pub stack_axis: Option<Axis>,
}

impl HierarchySpec {
    pub fn dims(&self) -> Dims {
        self.base.dims
    }

    pub fn thresholds(&self) -> Vec<usize> {
        self.level_codes.iter().map(|l| l.threshold).collect()
    }

    /// Level order of worker `w` (first occurrence of each level).
    pub fn level_order(&self, w: usize) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for s in &self.worker_slots[w] {
            if !out.contains(&s.level) {
                out.push(s.level);
            }
        }
        out
    }

    /// Multiply-accumulates of one worker if it finishes every slot.
    pub fn worker_comp(&self, w: usize) -> usize {
        self.worker_slots[w]
            .iter()
            .map(|s| {
                let lc = &self.level_codes[s.level];
                let code = lc.code.as_ref().expect("scheduled level has a code");
                padded_block(code).iter().product::<usize>()
            })
            .sum()
    }

    /// Reals the master sends to worker `w`, counting a shared encoded
    /// operand once.
    pub fn worker_comm_in(&self, w: usize) -> usize {
        let mut seen_a = std::collections::HashSet::new();
        let mut seen_b = std::collections::HashSet::new();
        let mut total = 0;
        for s in &self.worker_slots[w] {
            let lc = &self.level_codes[s.level];
            let code = lc.code.as_ref().expect("scheduled level has a code");
            let block = lc.block.as_ref().expect("scheduled level has a block");
            let (ka, kb) = side_keys(code, block, s.point_index);
            let [bx, bz, by] = padded_block(code);
            if seen_a.insert(ka) {
                total += bx * bz;
            }
            if seen_b.insert(kb) {
                total += bz * by;
            }
        }
        total
    }

    /// JSON export of every worker's slots.
    pub fn schedule_records(&self) -> Vec<ScheduleRecord> {
        let mut out = Vec::new();
        for (w, slots) in self.worker_slots.iter().enumerate() {
            for (k, s) in slots.iter().enumerate() {
                let code = self.level_codes[s.level]
                    .code
                    .as_ref()
                    .expect("scheduled level has a code");
                let [bx, bz, by] = padded_block(code);
                out.push(ScheduleRecord {
                    worker: w,
                    slot: k,
                    level: s.level,
                    point: code.eval_points[s.point_index],
                    a_dims: [bx, bz],
                    b_dims: [bz, by],
                });
            }
        }
        out
    }
}

/// One row of the schedule JSON export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRecord {
    pub worker: usize,
    pub slot: usize,
    pub level: usize,
    pub point: f64,
    #[serde(rename = "aDims")]
    pub a_dims: [usize; 2],
    #[serde(rename = "bDims")]
    pub b_dims: [usize; 2],
}

/// Padded `[bx, bz, by]` block shape of one task of `code` (the largest block for uncoded).
pub(crate) fn padded_block(code: &CodeSpec) -> [usize; 3] {
    let d = code.dims;
    let g = code.grid;
    [
        d.nx.div_ceil(g.mx),
        d.nz.div_ceil(g.mz),
        d.ny.div_ceil(g.my),
    ]
}

/// Identity of an encoded operand: two tasks with equal keys send the same matrix.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct SideKey {
    rows: Range<usize>,
    cols: Range<usize>,
    parts: (usize, usize),
    exps: Vec<usize>,
    /// Bits of the evaluation point, or `None` if the side is point independent.
    point: Option<u64>,
    uncoded_index: Option<usize>,
}

fn side_keys(code: &CodeSpec, block: &TaskBlock, point_index: usize) -> (SideKey, SideKey) {
    let g = code.grid;
    let x = code.eval_points[point_index];
    if code.family == CodeFamily::Uncoded {
        let t = point_index;
        let (i, k, j) = (t / (g.mz * g.my), (t / g.my) % g.mz, t % g.my);
        let a = SideKey {
            rows: block.x_range.clone(),
            cols: block.z_range.clone(),
            parts: (g.mx, g.mz),
            exps: vec![],
            point: None,
            uncoded_index: Some(i * g.mz + k),
        };
        let b = SideKey {
            rows: block.z_range.clone(),
            cols: block.y_range.clone(),
            parts: (g.mz, g.my),
            exps: vec![],
            point: None,
            uncoded_index: Some(k * g.my + j),
        };
        return (a, b);
    }
    let (ea, eb) = code.exponents().expect("executable family");
    let const_a = ea == [0];
    let const_b = eb == [0];
    let a = SideKey {
        rows: block.x_range.clone(),
        cols: block.z_range.clone(),
        parts: (g.mx, g.mz),
        point: (!const_a).then_some(x.to_bits()),
        exps: ea,
        uncoded_index: None,
    };
    let b = SideKey {
        rows: block.z_range.clone(),
        cols: block.y_range.clone(),
        parts: (g.mz, g.my),
        point: (!const_b).then_some(x.to_bits()),
        exps: eb,
        uncoded_index: None,
    };
    (a, b)
}

fn expanded_bicc_grid(base: &BaseCode, p: usize) -> Result<(GridSpec, Axis)> {
    let g = base.grid;
    match base.family {
        CodeFamily::MatDot => Ok((g.with(Axis::Z, g.mz * p), Axis::Z)),
        CodeFamily::Polynomial => {
            let axis = if g.mx > g.my { Axis::X } else { Axis::Y };
            Ok((g.with(axis, g.get(axis) * p), axis))
        }
        CodeFamily::Uncoded if p == 1 => Ok((g, Axis::Y)),
        other => invalid(format!(
            "{other:?} cannot be used as a hierarchical base code"
        )),
    }
}

fn pattern_for(stack: Axis) -> ExponentPattern {
    match stack {
        Axis::X => ExponentPattern::BMinor,
        _ => ExponentPattern::AMinor,
    }
}

fn single_level(
    base: &BaseCode,
    grid: GridSpec,
    p: usize,
    n: usize,
    mode: HierarchyMode,
    pattern: ExponentPattern,
) -> Result<HierarchySpec> {
    if n == 0 {
        return invalid("need at least one worker");
    }
    let base_code = base_code_for(base, n)?;
    let block_len = n * p;
    let code = CodeSpec::new(base.family, grid, block_len, base.dims, base.points)
        .map_err(|e| match e {
            Error::Unrecoverable(m) => {
                Error::Unrecoverable(format!("{m} ({n} workers x {p} subtasks)"))
            }
            other => other,
        })?
        .with_pattern(pattern);
    let r = code.recovery_threshold;
    let block = TaskBlock {
        level: 0,
        x_range: 0..base.dims.nx,
        z_range: 0..base.dims.nz,
        y_range: 0..base.dims.ny,
        grid,
    };
    let worker_slots = (0..n)
        .map(|w| {
            (0..p)
                .map(|s| SlotRef {
                    level: 0,
                    slot: s,
                    point_index: w * p + s,
                })
                .collect()
        })
        .collect();
    Ok(HierarchySpec {
        mode,
        p,
        levels: 1,
        per_level_subtasks: vec![p],
        profile: RecoveryProfile::new(vec![r]),
        base: *base,
        base_code,
        workers: n,
        level_codes: vec![LevelCode {
            level: 0,
            p,
            threshold: r,
            code: Some(code),
            block: Some(block),
        }],
        worker_slots,
        residual: vec![],
        achieved_budget: r,
        stack_axis: None,
    })
}

fn base_code_for(base: &BaseCode, n: usize) -> Result<CodeSpec> {
    let r = base.threshold(n)?;
    if n < r {
        return Err(Error::Unrecoverable(format!(
            "{n} workers cannot meet recovery threshold {r}"
        )));
    }
    CodeSpec::new(base.family, base.grid, n, base.dims, base.points)
}

/// One encoded task per worker; profile `[R]`.
pub fn build_nonh(base: &BaseCode, n: usize) -> Result<HierarchySpec> {
    single_level(
        base,
        base.grid,
        1,
        n,
        HierarchyMode::NonH,
        ExponentPattern::AMinor,
    )
}

/// One code of information dimension `P·D` spread over `P` slots per worker.
pub fn build_bicc(base: &BaseCode, p: usize, n: usize) -> Result<HierarchySpec> {
    if p == 0 {
        return invalid("P must be positive");
    }
    if p == 1 {
        return build_nonh(base, n);
    }
    let (grid, axis) = expanded_bicc_grid(base, p)?;
    let mut spec = single_level(base, grid, p, n, HierarchyMode::Bicc, pattern_for(axis))?;
    spec.stack_axis = Some(axis);
    Ok(spec)
}

fn resolve_layout(
    base: &BaseCode,
    layout: Layout,
    level_dims: &[usize],
) -> Result<(Vec<TaskBlock>, Axis)> {
    let d = base.dims;
    let g = base.grid;
    let s: usize = level_dims.iter().sum();
    if s == 0 {
        return invalid("all level thresholds are zero");
    }
    match layout {
        Layout::Cells { cells, stack } => Ok((strip_layout(&d, &cells, stack, level_dims)?, stack)),
        Layout::Auto => resolve_layout(base, Layout::Dominance(g.dominant_axis()), level_dims),
        Layout::Dominance(axis) => {
            let family = base.family;
            let (preferred, thin) = match (family, axis) {
                (CodeFamily::MatDot, _) => {
                    let c = GridSpec::new(1, s, 1);
                    (Some(c), c)
                }
                (CodeFamily::Polynomial, Axis::Y) => (
                    s.is_multiple_of(g.mx)
                        .then(|| GridSpec::new(g.mx, 1, s / g.mx)),
                    GridSpec::new(1, 1, s),
                ),
                (CodeFamily::Polynomial, Axis::X) => (
                    s.is_multiple_of(g.my)
                        .then(|| GridSpec::new(s / g.my, 1, g.my)),
                    GridSpec::new(s, 1, 1),
                ),
                (f, a) => return invalid(format!("{f:?} codes cannot be stacked along {a:?}")),
            };
            let axis = if family == CodeFamily::MatDot {
                Axis::Z
            } else {
                axis
            };
            if let Some(c) = preferred {
                if let Ok(blocks) = strip_layout(&d, &c, axis, level_dims) {
                    return Ok((blocks, axis));
                }
            }
            Ok((strip_layout(&d, &thin, axis, level_dims)?, axis))
        }
    }
}

fn multilevel(
    base: &BaseCode,
    per_level: &[usize],
    profile: &RecoveryProfile,
    layout: Layout,
    n: usize,
    mode: HierarchyMode,
) -> Result<HierarchySpec> {
    if !base.family.is_executable() || base.family == CodeFamily::Uncoded {
        return invalid(format!(
            "{:?} cannot be used as a multilevel base code",
            base.family
        ));
    }
    let base_code = base_code_for(base, n)?;
    let r_base = base_code.recovery_threshold;
    let levels = per_level.len();
    if levels == 0 || per_level.contains(&0) {
        return invalid("every level needs at least one subtask per worker");
    }
    let p: usize = per_level.iter().sum();
    let block_lengths: Vec<usize> = per_level.iter().map(|pl| pl * n).collect();
    profile.validate(&block_lengths)?;
    if base.family == CodeFamily::Polynomial && profile.sum() != p * r_base {
        return invalid(format!(
            "profile sums to {}, budget is P*R = {}",
            profile.sum(),
            p * r_base
        ));
    }
    let level_dims: Vec<usize> = profile
        .thresholds
        .iter()
        .map(|&r| if r == 0 { 0 } else { base.level_dim(r) })
        .collect();
    let (blocks, stack) = resolve_layout(base, layout, &level_dims)?;
    let pattern = pattern_for(stack);
    let mut blocks = blocks.into_iter();
    let mut level_codes = Vec::with_capacity(levels);
    for (l, (&r, &pl)) in profile.thresholds.iter().zip(per_level).enumerate() {
        if r == 0 {
            level_codes.push(LevelCode {
                level: l,
                p: pl,
                threshold: 0,
                code: None,
                block: None,
            });
            continue;
        }
        let block = blocks.next().expect("one block per nonempty level");
        let code = CodeSpec::new(base.family, block.grid, pl * n, block.dims(), base.points)?
            .with_pattern(pattern);
        if code.recovery_threshold > pl * n {
            return Err(Error::Unrecoverable(format!(
                "level {l}: threshold {} exceeds block length {}",
                code.recovery_threshold,
                pl * n
            )));
        }
        level_codes.push(LevelCode {
            level: l,
            p: pl,
            threshold: code.recovery_threshold,
            code: Some(code),
            block: Some(block),
        });
    }
    let worker_slots = (0..n)
        .map(|w| {
            let mut slots = Vec::with_capacity(p);
            for lc in &level_codes {
                if lc.code.is_none() {
                    continue;
                }
                for s in 0..lc.p {
                    slots.push(SlotRef {
                        level: lc.level,
                        slot: s,
                        point_index: w * lc.p + s,
                    });
                }
            }
            slots
        })
        .collect();
    let achieved_budget = level_codes.iter().map(|l| l.threshold).sum();
    Ok(HierarchySpec {
        mode,
        p,
        levels,
        per_level_subtasks: per_level.to_vec(),
        profile: RecoveryProfile::new(level_codes.iter().map(|l| l.threshold).collect()),
        base: *base,
        base_code,
        workers: n,
        level_codes,
        worker_slots,
        residual: vec![],
        achieved_budget,
        stack_axis: Some(stack),
    })
}

/// `L` independent codes, one subtask per worker per level, level `l` needing `r_l` results.
pub fn build_mlcc(
    base: &BaseCode,
    levels: usize,
    profile: &RecoveryProfile,
    layout: Layout,
    n: usize,
) -> Result<HierarchySpec> {
    if profile.len() != levels {
        return invalid(format!(
            "profile has {} entries for L = {levels}",
            profile.len()
        ));
    }
    if levels == 1 {
        let r = base.threshold(n)?;
        if profile.thresholds[0] != r {
            return invalid(format!("single-level profile must be [{r}]"));
        }
        return build_nonh(base, n);
    }
    multilevel(
        base,
        &vec![1; levels],
        profile,
        layout,
        n,
        HierarchyMode::Mlcc,
    )
}

/// MLCC with a uniform profile whose workers visit the levels in
/// independently shuffled orders.
pub fn build_rmlcc(spec: &HierarchySpec, seed: u64) -> Result<HierarchySpec> {
    if !matches!(spec.mode, HierarchyMode::Mlcc | HierarchyMode::NonH) {
        return invalid("RMLCC is built from an MLCC spec");
    }
    let r0 = spec.base_code.recovery_threshold;
    if spec.profile.thresholds.iter().any(|&r| r != r0) {
        return invalid(format!("RMLCC needs the uniform profile r_l = {r0}"));
    }
    let mut out = spec.clone();
    if spec.levels > 1 {
        out.mode = HierarchyMode::Rmlcc;
    }
    for (w, slots) in out.worker_slots.iter_mut().enumerate() {
        let mut rng = worker_rng(seed, w as u64);
        slots.shuffle(&mut rng);
    }
    Ok(out)
}

pub(crate) fn worker_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `L_H` levels, level `l` a BICC sub-code with `P_l` subtasks per worker.
pub fn build_hhcc(
    base: &BaseCode,
    per_level: &[usize],
    profile: &RecoveryProfile,
    layout: Layout,
    n: usize,
) -> Result<HierarchySpec> {
    if profile.len() != per_level.len() {
        return invalid("profile and per-level subtask counts differ in length");
    }
    multilevel(base, per_level, profile, layout, n, HierarchyMode::Hhcc)
}

/// What happened to one observed result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation {
    Accepted {
        level_complete: bool,
        complete: bool,
    },
    /// Already had this point at this level; ignored.
    Duplicate,
    /// The level needs no results.
    Unneeded,
}

/// Results received so far, per level.
#[derive(Clone, Debug)]
pub struct AggregationState {
    thresholds: Vec<usize>,
    received: Vec<Vec<(usize, Matrix)>>,
    complete: bool,
}

impl AggregationState {
    pub fn new(spec: &HierarchySpec) -> Self {
        Self::with_thresholds(spec.thresholds())
    }

    pub fn with_thresholds(thresholds: Vec<usize>) -> Self {
        let complete = thresholds.iter().all(|&r| r == 0);
        let received = thresholds.iter().map(|_| Vec::new()).collect();
        Self {
            thresholds,
            received,
            complete,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn level_complete(&self, level: usize) -> bool {
        self.received[level].len() >= self.thresholds[level]
    }

    pub fn received(&self, level: usize) -> &[(usize, Matrix)] {
        &self.received[level]
    }

    pub fn count(&self, level: usize) -> usize {
        self.received[level].len()
    }

    pub fn levels(&self) -> usize {
        self.thresholds.len()
    }

    /// Records `product` for evaluation index `point_index` of `level`.
    /// Completed levels keep accepting results, so completeness never flips back.
    pub fn observe(&mut self, level: usize, point_index: usize, product: Matrix) -> Observation {
        if self.thresholds[level] == 0 {
            return Observation::Unneeded;
        }
        if self.received[level].iter().any(|(p, _)| *p == point_index) {
            return Observation::Duplicate;
        }
        self.received[level].push((point_index, product));
        let level_complete = self.level_complete(level);
        if level_complete && !self.complete {
            self.complete = (0..self.levels()).all(|l| self.level_complete(l));
        }
        Observation::Accepted {
            level_complete,
            complete: self.complete,
        }
    }
}

/// Encoded work of one worker, in execution order.
#[derive(Clone, Debug)]
pub struct WorkerSchedule {
    pub worker: usize,
    pub subtasks: Vec<(SlotRef, EncodedTask)>,
}

fn sub_operands(a: &Matrix, b: &Matrix, block: &TaskBlock) -> Result<(Matrix, Matrix)> {
    let sa = crate::matrix::extract_block(
        a,
        &BlockIndex::new(block.x_range.clone(), block.z_range.clone()),
    )?;
    let sb = crate::matrix::extract_block(
        b,
        &BlockIndex::new(block.z_range.clone(), block.y_range.clone()),
    )?;
    Ok((sa, sb))
}

/// Encodes every worker's subtasks, sharing identical operands between slots.
pub fn encode_schedules(
    spec: &HierarchySpec,
    a: &Matrix,
    b: &Matrix,
) -> Result<Vec<WorkerSchedule>> {
    let d = spec.dims();
    if a.shape() != (d.nx, d.nz) || b.shape() != (d.nz, d.ny) {
        return invalid(format!(
            "operands {:?} x {:?} do not match dims {d:?}",
            a.shape(),
            b.shape()
        ));
    }
    let mut encoders = Vec::with_capacity(spec.level_codes.len());
    for lc in &spec.level_codes {
        encoders.push(match (&lc.code, &lc.block) {
            (Some(code), Some(block)) => {
                let (sa, sb) = sub_operands(a, b, block)?;
                Some(Encoder::new(code, &sa, &sb)?)
            }
            _ => None,
        });
    }
    let mut cache_a: HashMap<SideKey, Arc<Matrix>> = HashMap::new();
    let mut cache_b: HashMap<SideKey, Arc<Matrix>> = HashMap::new();
    let mut out = Vec::with_capacity(spec.workers);
    for (w, slots) in spec.worker_slots.iter().enumerate() {
        let mut subtasks = Vec::with_capacity(slots.len());
        for s in slots {
            let lc = &spec.level_codes[s.level];
            let code = lc.code.as_ref().expect("scheduled level has a code");
            let block = lc.block.as_ref().expect("scheduled level has a block");
            let enc = encoders[s.level]
                .as_ref()
                .expect("scheduled level has an encoder");
            let (ka, kb) = side_keys(code, block, s.point_index);
            let a_hat = cache_a
                .entry(ka)
                .or_insert_with(|| Arc::new(enc.a_hat(code, s.point_index)))
                .clone();
            let b_hat = cache_b
                .entry(kb)
                .or_insert_with(|| Arc::new(enc.b_hat(code, s.point_index)))
                .clone();
            subtasks.push((
                *s,
                EncodedTask {
                    a_hat,
                    b_hat,
                    point: code.eval_points[s.point_index],
                    task_id: s.point_index,
                    level: s.level,
                },
            ));
        }
        out.push(WorkerSchedule {
            worker: w,
            subtasks,
        });
    }
    Ok(out)
}

/// Decodes one level's block product from the results received for it.
pub fn decode_level(
    spec: &HierarchySpec,
    state: &AggregationState,
    level: usize,
    opts: DecodeOptions,
) -> Result<Option<Decoded>> {
    let lc = &spec.level_codes[level];
    let Some(code) = &lc.code else {
        return Ok(None);
    };
    let completed: Vec<(f64, Matrix)> = state
        .received(level)
        .iter()
        .map(|(i, m)| (code.eval_points[*i], m.clone()))
        .collect();
    decode_with(code, &completed, opts).map(Some)
}

/// Adds decoded level products into an `nx x ny` result.
pub fn assemble(spec: &HierarchySpec, decoded: &[(usize, Matrix)]) -> Matrix {
    let d = spec.dims();
    let mut c = Matrix::zeros(d.nx, d.ny);
    for (level, m) in decoded {
        let block = spec.level_codes[*level]
            .block
            .as_ref()
            .expect("decoded level has a block");
        c.add_block_at(block.x_range.start, block.y_range.start, m);
    }
    c
}

/// Products of the regions the master computes itself.
pub fn residual_products(
    spec: &HierarchySpec,
    a: &Matrix,
    b: &Matrix,
) -> Result<Vec<(Region, Matrix)>> {
    spec.residual
        .iter()
        .map(|r| {
            let blk = TaskBlock {
                level: 0,
                x_range: r.x_range.clone(),
                z_range: r.z_range.clone(),
                y_range: r.y_range.clone(),
                grid: GridSpec::unit(),
            };
            let (sa, sb) = sub_operands(a, b, &blk)?;
            Ok((r.clone(), matmul(&sa, &sb)?))
        })
        .collect()
}

/// Decodes every level of a complete state and assembles `A·B`, including residual regions.
pub fn reconstruct(
    spec: &HierarchySpec,
    state: &AggregationState,
    a: &Matrix,
    b: &Matrix,
    opts: DecodeOptions,
) -> Result<Matrix> {
    if !state.is_complete() {
        let (have, need) = (0..state.levels())
            .find(|&l| !state.level_complete(l))
            .map(|l| (state.count(l), spec.level_codes[l].threshold))
            .unwrap_or((0, 0));
        return Err(Error::NotYetRecoverable { have, need });
    }
    let mut decoded = Vec::new();
    for l in 0..spec.level_codes.len() {
        if let Some(dec) = decode_level(spec, state, l, opts)? {
            decoded.push((l, dec.product));
        }
    }
    let mut c = assemble(spec, &decoded);
    for (r, m) in residual_products(spec, a, b)? {
        c.add_block_at(r.x_range.start, r.y_range.start, &m);
    }
    Ok(c)
}

/// Covered volume of a spec's task blocks plus residual, for the disjointness check.
pub fn covered_volume(spec: &HierarchySpec) -> usize {
    spec.level_codes
        .iter()
        .filter_map(|l| l.block.as_ref())
        .map(TaskBlock::volume)
        .sum::<usize>()
        + spec.residual.iter().map(Region::volume).sum::<usize>()
}

type Ranges = Vec<Range<usize>>;

/// Information-block ranges of a level along x and y, used to check layouts.
pub fn level_output_ranges(spec: &HierarchySpec, level: usize) -> Option<(Ranges, Ranges)> {
    let lc = &spec.level_codes[level];
    let (code, block) = (lc.code.as_ref()?, lc.block.as_ref()?);
    let xs = split_ranges(block.x_range.len(), code.grid.mx)
        .into_iter()
        .map(|r| r.start + block.x_range.start..r.end + block.x_range.start)
        .collect();
    let ys = split_ranges(block.y_range.len(), code.grid.my)
        .into_iter()
        .map(|r| r.start + block.y_range.start..r.end + block.y_range.start)
        .collect();
    Some((xs, ys))
}
