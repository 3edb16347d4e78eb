//! Partitions of the multiply-accumulate cuboid: the eight slicing classes,
//! a one-step grid partition, and a layered multilevel layout.

use hcmm::cuboid::{
    classify_partition, layered_partition, layout_json, partition_grid, Dims, GridSpec, LevelSpec,
};

fn main() -> hcmm::Result<()> {
    for g in [
        GridSpec::new(1, 1, 1),
        GridSpec::new(1, 4, 1),
        GridSpec::new(2, 1, 2),
        GridSpec::new(2, 3, 2),
    ] {
        println!("{g:?} -> {:?}", classify_partition(&g));
    }

    let d = Dims::cube(120);
    let blocks = partition_grid(&d, &GridSpec::new(2, 1, 3))?;
    for b in &blocks {
        println!(
            "info block {:?} x {:?} x {:?}",
            b.x_range, b.z_range, b.y_range
        );
    }

    // Four levels with information dimensions 8, 4, 3, 1 stacked along y.
    let levels: Vec<LevelSpec> = [8, 4, 3, 1]
        .iter()
        .map(|&dl| LevelSpec {
            d: dl,
            r: dl,
            grid: GridSpec::new(1, 1, dl),
        })
        .collect();
    let layered = layered_partition(&Dims::new(64, 64, 64), &levels, 16)?;
    println!("{}", layout_json(&layered.task_blocks)?);
    Ok(())
}
