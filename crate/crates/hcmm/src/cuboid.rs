//! The 3-D cuboid view of `A·B`: grid partitionings, partition classes, the
//! y-slab layered partitioner and a cell strip-packing layout for multilevel
//! schemes.
//!
//! Unit cube `(i, k, j)` stands for the multiply-accumulate `C[i][j] += A[i][k]·B[k][j]`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matrix::split_range;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub nz: usize,
    pub ny: usize,
}

impl Dims {
    pub fn new(nx: usize, nz: usize, ny: usize) -> Self {
        Self { nx, nz, ny }
    }

    pub fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub fn volume(&self) -> usize {
        self.nx * self.nz * self.ny
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.nz == 0 || self.ny == 0 {
            return invalid(format!("dims must be positive, got {self:?}"));
        }
        Ok(())
    }

    pub fn get(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.nx,
            Axis::Z => self.nz,
            Axis::Y => self.ny,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub mx: usize,
    pub mz: usize,
    pub my: usize,
}

impl GridSpec {
    pub fn new(mx: usize, mz: usize, my: usize) -> Self {
        Self { mx, mz, my }
    }

    pub fn unit() -> Self {
        Self::new(1, 1, 1)
    }

    /// Information dimension `D = mx·mz·my`.
    pub fn info_dim(&self) -> usize {
        self.mx * self.mz * self.my
    }

    pub fn get(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.mx,
            Axis::Z => self.mz,
            Axis::Y => self.my,
        }
    }

    pub fn with(mut self, axis: Axis, v: usize) -> Self {
        match axis {
            Axis::X => self.mx = v,
            Axis::Z => self.mz = v,
            Axis::Y => self.my = v,
        }
        self
    }

    pub fn validate_for(&self, d: &Dims) -> Result<()> {
        if self.mx == 0 || self.mz == 0 || self.my == 0 {
            return invalid(format!("grid counts must be positive, got {self:?}"));
        }
        if self.mx > d.nx || self.mz > d.nz || self.my > d.ny {
            return invalid(format!("grid {self:?} exceeds dims {d:?}"));
        }
        Ok(())
    }

    /// Dominant axis: the largest slice count, ties broken y, then x, then z.
    pub fn dominant_axis(&self) -> Axis {
        let mut best = Axis::Y;
        for axis in [Axis::X, Axis::Z] {
            if self.get(axis) > self.get(best) {
                best = axis;
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Z,
    Y,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Z, Axis::Y];
}

/// Decision-tree class keyed on which slice counts exceed 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionClass {
    Repetition,
    MatDot,
    VecMtx,
    MtxVec,
    PolyProduct,
    XZ,
    ZY,
    PolyDot,
}

pub fn classify_partition(g: &GridSpec) -> PartitionClass {
    match (g.mx > 1, g.mz > 1, g.my > 1) {
        (false, false, false) => PartitionClass::Repetition,
        (false, true, false) => PartitionClass::MatDot,
        (true, false, false) => PartitionClass::VecMtx,
        (false, false, true) => PartitionClass::MtxVec,
        (true, false, true) => PartitionClass::PolyProduct,
        (true, true, false) => PartitionClass::XZ,
        (false, true, true) => PartitionClass::ZY,
        (true, true, true) => PartitionClass::PolyDot,
    }
}

/// An axis-aligned box of unit cubes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub x_range: Range<usize>,
    pub z_range: Range<usize>,
    pub y_range: Range<usize>,
}

impl Region {
    pub fn full(d: &Dims) -> Self {
        Self {
            x_range: 0..d.nx,
            z_range: 0..d.nz,
            y_range: 0..d.ny,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.x_range.len(), self.z_range.len(), self.y_range.len())
    }

    pub fn volume(&self) -> usize {
        self.dims().volume()
    }

    pub fn range(&self, axis: Axis) -> &Range<usize> {
        match axis {
            Axis::X => &self.x_range,
            Axis::Z => &self.z_range,
            Axis::Y => &self.y_range,
        }
    }

    fn with_range(mut self, axis: Axis, r: Range<usize>) -> Self {
        match axis {
            Axis::X => self.x_range = r,
            Axis::Z => self.z_range = r,
            Axis::Y => self.y_range = r,
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformationBlock {
    pub x_range: Range<usize>,
    pub z_range: Range<usize>,
    pub y_range: Range<usize>,
    /// Level index, 0 for single-level schemes.
    pub level: usize,
    /// `(x, z, y)` position within its task block.
    pub local_coord: (usize, usize, usize),
}

impl InformationBlock {
    pub fn volume(&self) -> usize {
        self.x_range.len() * self.z_range.len() * self.y_range.len()
    }
}

/// One level's sub-cuboid and the grid that subdivides it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskBlock {
    pub level: usize,
    pub x_range: Range<usize>,
    pub z_range: Range<usize>,
    pub y_range: Range<usize>,
    pub grid: GridSpec,
}

impl TaskBlock {
    pub fn region(&self) -> Region {
        Region {
            x_range: self.x_range.clone(),
            z_range: self.z_range.clone(),
            y_range: self.y_range.clone(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.region().dims()
    }

    pub fn volume(&self) -> usize {
        self.region().volume()
    }
}

fn partition_region(r: &Region, g: &GridSpec, level: usize) -> Vec<InformationBlock> {
    let xs = split_range(r.x_range.clone(), g.mx);
    let zs = split_range(r.z_range.clone(), g.mz);
    let ys = split_range(r.y_range.clone(), g.my);
    let mut out = Vec::with_capacity(g.info_dim());
    for (i, x) in xs.iter().enumerate() {
        for (k, z) in zs.iter().enumerate() {
            for (j, y) in ys.iter().enumerate() {
                out.push(InformationBlock {
                    x_range: x.clone(),
                    z_range: z.clone(),
                    y_range: y.clone(),
                    level,
                    local_coord: (i, k, j),
                });
            }
        }
    }
    out
}

/// Slices the cuboid into `mx·mz·my` disjoint blocks, ordered x-major then z then y.
pub fn partition_grid(d: &Dims, g: &GridSpec) -> Result<Vec<InformationBlock>> {
    d.validate()?;
    g.validate_for(d)?;
    Ok(partition_region(&Region::full(d), g, 0))
}

/// One level's parameters for [`layered_partition`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub d: usize,
    pub r: usize,
    pub grid: GridSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayeredPartition {
    pub task_blocks: Vec<TaskBlock>,
    pub info_blocks: Vec<InformationBlock>,
    /// Unit cubes left for the master to compute directly.
    pub residual: usize,
    pub residual_regions: Vec<Region>,
}

/// Layer-by-layer slab placement along y: level `l` spans
/// `[w·Σ_{i<l} d_i, w·Σ_{i≤l} d_i)` with `w = ⌊ny/dSum⌋`, over full x and z,
/// then is subdivided by its own grid.
pub fn layered_partition(d: &Dims, levels: &[LevelSpec], d_sum: usize) -> Result<LayeredPartition> {
    layered_partition_along(d, levels, d_sum, Axis::Y)
}

/// [`layered_partition`] with the slab axis relabeled to `axis`.
pub fn layered_partition_along(
    d: &Dims,
    levels: &[LevelSpec],
    d_sum: usize,
    axis: Axis,
) -> Result<LayeredPartition> {
    d.validate()?;
    if levels.is_empty() {
        return invalid("no levels");
    }
    let total: usize = levels.iter().map(|l| l.d).sum();
    if total != d_sum {
        return invalid(format!("sum of level dimensions {total} != dSum {d_sum}"));
    }
    let n_axis = d.get(axis);
    if d_sum > n_axis {
        return invalid(format!("dSum {d_sum} exceeds slab-axis length {n_axis}"));
    }
    let width = n_axis / d_sum;
    let full = Region::full(d);
    let mut task_blocks = Vec::with_capacity(levels.len());
    let mut info_blocks = Vec::new();
    let mut offset = 0;
    for (level, spec) in levels.iter().enumerate() {
        if spec.d == 0 || spec.grid.info_dim() != spec.d {
            return invalid(format!(
                "level {level}: d = {} must equal positive grid product {}",
                spec.d,
                spec.grid.info_dim()
            ));
        }
        let range = offset * width..(offset + spec.d) * width;
        offset += spec.d;
        let region = full.clone().with_range(axis, range);
        spec.grid.validate_for(&region.dims())?;
        info_blocks.extend(partition_region(&region, &spec.grid, level));
        task_blocks.push(TaskBlock {
            level,
            x_range: region.x_range,
            z_range: region.z_range,
            y_range: region.y_range,
            grid: spec.grid,
        });
    }
    let covered = d_sum * width;
    let mut residual_regions = Vec::new();
    if covered < n_axis {
        residual_regions.push(full.with_range(axis, covered..n_axis));
    }
    let residual = residual_regions.iter().map(Region::volume).sum();
    Ok(LayeredPartition {
        task_blocks,
        info_blocks,
        residual,
        residual_regions,
    })
}

/// Cell strip-packing: the cuboid is cut into a `cells` grid; cells are
/// enumerated with `stack` as the slow axis and the other axis with more than
/// one cell (if any) as the fast axis, so a run of cells along the fast axis
/// forms a strip. Level `l` takes the next `level_cells[l]` cells, and must
/// either be a whole number of strips starting at a strip boundary, or fit
/// inside the current strip. Zero-cell levels produce no block.
///
/// Returns one `TaskBlock` per nonempty level, in level order.
pub fn strip_layout(
    d: &Dims,
    cells: &GridSpec,
    stack: Axis,
    level_cells: &[usize],
) -> Result<Vec<TaskBlock>> {
    d.validate()?;
    cells.validate_for(d)?;
    let others: Vec<Axis> = Axis::ALL.into_iter().filter(|a| *a != stack).collect();
    let wide: Vec<Axis> = others
        .iter()
        .copied()
        .filter(|a| cells.get(*a) > 1)
        .collect();
    if wide.len() > 1 {
        return invalid(format!(
            "cell grid {cells:?} has more than one non-stacking axis with multiple cells"
        ));
    }
    let fast = wide.first().copied().unwrap_or(others[0]);
    let strip = cells.get(fast);
    let n_strips = cells.get(stack);
    let total: usize = level_cells.iter().sum();
    if total != strip * n_strips {
        return invalid(format!(
            "levels use {total} cells but the grid has {}",
            strip * n_strips
        ));
    }
    let stack_ranges = split_range(0..d.get(stack), n_strips);
    let fast_ranges = split_range(0..d.get(fast), strip);
    let full = Region::full(d);
    let mut pos = 0usize;
    let mut out = Vec::new();
    for (level, &c) in level_cells.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let s = pos / strip;
        let f = pos % strip;
        let (region, grid) = if f == 0 && c % strip == 0 {
            let k = c / strip;
            let r = stack_ranges[s].start..stack_ranges[s + k - 1].end;
            (
                full.clone().with_range(stack, r),
                GridSpec::unit().with(fast, strip).with(stack, k),
            )
        } else if f + c <= strip {
            let fr = fast_ranges[f].start..fast_ranges[f + c - 1].end;
            (
                full.clone()
                    .with_range(stack, stack_ranges[s].clone())
                    .with_range(fast, fr),
                GridSpec::unit().with(fast, c),
            )
        } else {
            return invalid(format!(
                "level {level} with {c} cells at offset {f} straddles a strip of {strip}"
            ));
        };
        pos += c;
        out.push(TaskBlock {
            level,
            x_range: region.x_range,
            z_range: region.z_range,
            y_range: region.y_range,
            grid,
        });
    }
    Ok(out)
}

/// Information blocks of a set of task blocks.
pub fn info_blocks_of(blocks: &[TaskBlock]) -> Vec<InformationBlock> {
    blocks
        .iter()
        .flat_map(|b| partition_region(&b.region(), &b.grid, b.level))
        .collect()
}

/// JSON-friendly record of a task block for plots and debugging.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutRecord {
    pub level: usize,
    #[serde(rename = "xRange")]
    pub x_range: [usize; 2],
    #[serde(rename = "zRange")]
    pub z_range: [usize; 2],
    #[serde(rename = "yRange")]
    pub y_range: [usize; 2],
    pub grid: [usize; 3],
}

impl From<&TaskBlock> for LayoutRecord {
    fn from(b: &TaskBlock) -> Self {
        Self {
            level: b.level,
            x_range: [b.x_range.start, b.x_range.end],
            z_range: [b.z_range.start, b.z_range.end],
            y_range: [b.y_range.start, b.y_range.end],
            grid: [b.grid.mx, b.grid.mz, b.grid.my],
        }
    }
}

pub fn layout_json(blocks: &[TaskBlock]) -> Result<String> {
    let recs: Vec<LayoutRecord> = blocks.iter().map(LayoutRecord::from).collect();
    Ok(serde_json::to_string_pretty(&recs)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes() {
        assert_eq!(
            classify_partition(&GridSpec::new(1, 1, 1)),
            PartitionClass::Repetition
        );
        assert_eq!(
            classify_partition(&GridSpec::new(2, 1, 2)),
            PartitionClass::PolyProduct
        );
        assert_eq!(
            classify_partition(&GridSpec::new(1, 4, 1)),
            PartitionClass::MatDot
        );
        assert_eq!(
            classify_partition(&GridSpec::new(3, 1, 1)),
            PartitionClass::VecMtx
        );
        assert_eq!(
            classify_partition(&GridSpec::new(1, 1, 3)),
            PartitionClass::MtxVec
        );
        assert_eq!(
            classify_partition(&GridSpec::new(2, 2, 2)),
            PartitionClass::PolyDot
        );
    }

    #[test]
    fn dominance_ties_prefer_y() {
        assert_eq!(GridSpec::new(2, 1, 2).dominant_axis(), Axis::Y);
        assert_eq!(GridSpec::new(3, 1, 2).dominant_axis(), Axis::X);
        assert_eq!(GridSpec::new(1, 4, 1).dominant_axis(), Axis::Z);
    }

    #[test]
    fn strip_layout_rejects_straddling_level() {
        let d = Dims::cube(16);
        let err = strip_layout(&d, &GridSpec::new(2, 1, 8), Axis::Y, &[8, 4, 3, 1]);
        assert!(err.is_err());
    }
}
