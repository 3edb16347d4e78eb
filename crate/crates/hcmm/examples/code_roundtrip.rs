//! Recovery thresholds of every code family, then an encode / erase / decode
//! round trip for polynomial and MatDot codes.

use hcmm::codes::{decode, encode, recovery_threshold, CodeFamily, CodeSpec, PointKind};
use hcmm::cuboid::{Dims, GridSpec};
use hcmm::matrix::{matmul_reference, Matrix};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hcmm::Result<()> {
    let g = GridSpec::new(6, 6, 6);
    for family in [CodeFamily::PolyDot, CodeFamily::EntangledPoly] {
        println!(
            "{family:?} (6,6,6): R = {}",
            recovery_threshold(family, &g, 500)?
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = Dims::new(48, 40, 36);
    let a = Matrix::random(d.nx, d.nz, &mut rng);
    let b = Matrix::random(d.nz, d.ny, &mut rng);
    let want = matmul_reference(&a, &b)?;

    for (family, grid, n) in [
        (CodeFamily::Polynomial, GridSpec::new(2, 1, 3), 9),
        (CodeFamily::MatDot, GridSpec::new(1, 4, 1), 10),
    ] {
        let spec = CodeSpec::new(family, grid, n, d, PointKind::Chebyshev)?;
        let tasks = encode(&spec, &a, &b)?;
        let mut done: Vec<(f64, Matrix)> = tasks
            .iter()
            .map(|t| {
                (
                    t.point,
                    hcmm::matrix::matmul(&t.a_hat, &t.b_hat).expect("shapes"),
                )
            })
            .collect();
        // Lose all but R results, in random order.
        done.shuffle(&mut rng);
        done.truncate(spec.recovery_threshold);
        let out = decode(&spec, &done)?;
        println!(
            "{family:?} N={n} R={}: rel error {:.2e}, warning {:?}",
            spec.recovery_threshold,
            out.product.rel_error(&want)?,
            out.warning
        );
    }
    Ok(())
}
