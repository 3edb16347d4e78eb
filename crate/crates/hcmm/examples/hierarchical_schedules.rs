//! Builds each hierarchical scheme over the same base code, prints per-worker
//! loads, and reconstructs `A·B` from a random arrival order.

use hcmm::codes::{CodeFamily, DecodeOptions};
use hcmm::cuboid::{Dims, GridSpec};
use hcmm::hierarchy::{
    build_bicc, build_hhcc, build_mlcc, build_nonh, build_rmlcc, encode_schedules, reconstruct,
    AggregationState, BaseCode, HierarchySpec, Layout, RecoveryProfile,
};
use hcmm::matrix::{matmul, matmul_reference};
use hcmm::runtime::random_operands;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hcmm::Result<()> {
    let d = Dims::cube(64);
    let base = BaseCode::new(CodeFamily::Polynomial, GridSpec::new(2, 1, 2), d);
    let n = 12;
    let mlcc = build_mlcc(
        &base,
        4,
        &RecoveryProfile::new(vec![8, 4, 3, 1]),
        Layout::Auto,
        n,
    )?;
    let schemes: Vec<(&str, HierarchySpec)> = vec![
        ("nonh", build_nonh(&base, n)?),
        ("bicc P=4", build_bicc(&base, 4, n)?),
        ("mlcc {8,4,3,1}", mlcc),
        (
            "rmlcc L=4",
            build_rmlcc(
                &build_mlcc(&base, 4, &RecoveryProfile::uniform(4, 4), Layout::Auto, n)?,
                5,
            )?,
        ),
        (
            "hhcc {2,2}",
            build_hhcc(
                &base,
                &[2, 2],
                &RecoveryProfile::new(vec![8, 8]),
                Layout::Auto,
                n,
            )?,
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (name, spec) in &schemes {
        let (a, b) = random_operands(spec, 1);
        let mut arrivals: Vec<_> = encode_schedules(spec, &a, &b)?
            .into_iter()
            .flat_map(|ws| ws.subtasks)
            .collect();
        arrivals.shuffle(&mut rng);
        let mut state = AggregationState::new(spec);
        let mut used = 0;
        for (slot, task) in arrivals {
            if state.is_complete() {
                break;
            }
            state.observe(
                slot.level,
                slot.point_index,
                matmul(&task.a_hat, &task.b_hat)?,
            );
            used += 1;
        }
        let c = reconstruct(spec, &state, &a, &b, DecodeOptions::default())?;
        println!(
            "{name:16} thresholds {:?} worker comp {} commIn {} used {used} results, rel error {:.1e}",
            spec.thresholds(),
            spec.worker_comp(0),
            spec.worker_comm_in(0),
            c.rel_error(&matmul_reference(&a, &b)?)?
        );
    }
    Ok(())
}
