//! One in-process master/worker run of MLCC with artificial stragglers,
//! printing phase times and the order in which levels completed.

use hcmm::codes::CodeFamily;
use hcmm::cuboid::{Dims, GridSpec};
use hcmm::hierarchy::{build_mlcc, BaseCode, Layout, RecoveryProfile};
use hcmm::runtime::{random_operands, run_job, DecodeMode, RunConfig};

fn main() -> hcmm::Result<()> {
    let base = BaseCode::new(
        CodeFamily::Polynomial,
        GridSpec::new(2, 1, 2),
        Dims::cube(256),
    );
    let spec = build_mlcc(
        &base,
        4,
        &RecoveryProfile::new(vec![8, 4, 3, 1]),
        Layout::Auto,
        12,
    )?;
    let (a, b) = random_operands(&spec, 21);

    let mut cfg = RunConfig::new(spec, 0.33, 21);
    cfg.decode_mode = DecodeMode::Streaming;
    let report = run_job(&cfg, &a, &b)?;

    let t = &report.phase_times;
    println!("stragglers {:?}", report.stragglers);
    println!(
        "encode {:.4}s distribute {:.4}s compute {:.4}s decode {:.4}s",
        t.encode, t.distribute, t.compute, t.decode
    );
    println!(
        "level completion (worker clock, s): {:?}",
        report.level_completion
    );
    println!(
        "received {} results, rel error {:.1e}",
        report.received,
        report.rel_error.unwrap_or(f64::NAN)
    );

    let mut csv = Vec::new();
    report.write_completion_csv(&mut csv)?;
    let text = String::from_utf8_lossy(&csv);
    for line in text.lines().take(4) {
        println!("{line}");
    }
    Ok(())
}
