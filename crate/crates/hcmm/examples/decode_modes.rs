//! Serial, parallel and streaming decoding of the same complete MLCC state
//! give identical products.

use hcmm::codes::{CodeFamily, DecodeOptions};
use hcmm::cuboid::{Dims, GridSpec};
use hcmm::hierarchy::{
    build_mlcc, encode_schedules, AggregationState, BaseCode, Layout, RecoveryProfile,
};
use hcmm::matrix::matmul;
use hcmm::runtime::{decode_parallel, decode_serial, decode_streaming, random_operands};

fn main() -> hcmm::Result<()> {
    let base = BaseCode::new(
        CodeFamily::Polynomial,
        GridSpec::new(1, 1, 4),
        Dims::cube(384),
    );
    let spec = build_mlcc(
        &base,
        4,
        &RecoveryProfile::new(vec![8, 4, 3, 1]),
        Layout::Auto,
        10,
    )?;
    let (a, b) = random_operands(&spec, 8);
    let mut state = AggregationState::new(&spec);
    for ws in encode_schedules(&spec, &a, &b)? {
        for (slot, task) in ws.subtasks {
            state.observe(
                slot.level,
                slot.point_index,
                matmul(&task.a_hat, &task.b_hat)?,
            );
        }
    }
    let opts = DecodeOptions::default();
    let serial = decode_serial(&spec, &state, opts)?;
    let parallel = decode_parallel(&spec, &state, opts)?;
    let streaming = decode_streaming(&spec, &state, opts)?;
    for (name, out) in [
        ("serial", &serial),
        ("parallel", &parallel),
        ("streaming", &streaming),
    ] {
        println!(
            "{name:9} wall {:.4}s work {:.4}s",
            out.timing.wall, out.timing.work
        );
    }
    println!(
        "bitwise identical: {}",
        serial.product == parallel.product && serial.product == streaming.product
    );
    Ok(())
}
