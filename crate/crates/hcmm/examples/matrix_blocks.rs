//! Dense matrices: block splitting, reassembly, the two multipliers and the
//! binary file format.

use hcmm::matrix::{
    concat_blocks, matmul, matmul_reference, read_binary, split_grid, write_binary, Matrix,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hcmm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Matrix::random(96, 80, &mut rng);
    let b = Matrix::random(80, 64, &mut rng);

    let fast = matmul(&a, &b)?;
    let slow = matmul_reference(&a, &b)?;
    println!(
        "fast vs reference rel error: {:.2e}",
        fast.rel_error(&slow)?
    );

    // Uneven splits: 96 rows into 5 parts, 64 columns into 3.
    let grid = split_grid(&fast, 5, 3)?;
    let shapes: Vec<Vec<(usize, usize)>> = grid
        .iter()
        .map(|r| r.iter().map(|m| m.shape()).collect())
        .collect();
    println!("block shapes: {shapes:?}");
    assert_eq!(concat_blocks(&grid)?, fast);

    let mut buf = Vec::new();
    write_binary(&fast, &mut buf)?;
    let back = read_binary(buf.as_slice())?;
    println!(
        "binary round trip: {} bytes, equal = {}",
        buf.len(),
        back == fast
    );
    Ok(())
}
