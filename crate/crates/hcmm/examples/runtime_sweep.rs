//! Repeated runs of uncoded, polynomial, BICC and MLCC jobs at equal per-worker
//! load, summarized as one row per scheme.

use hcmm::codes::CodeFamily;
use hcmm::cuboid::{Dims, GridSpec};
use hcmm::hierarchy::{build_bicc, build_mlcc, build_nonh, BaseCode, Layout, RecoveryProfile};
use hcmm::runtime::{sweep, RunConfig, Verify};

fn main() -> hcmm::Result<()> {
    let d = Dims::cube(512);
    let g = GridSpec::new(1, 1, 8);
    let poly = BaseCode::new(CodeFamily::Polynomial, g, d);
    let specs = [
        (
            "uncoded",
            build_nonh(&BaseCode::new(CodeFamily::Uncoded, g, d), 8)?,
        ),
        ("poly", build_nonh(&poly, 12)?),
        ("bicc", build_bicc(&poly, 4, 12)?),
        (
            "mlcc",
            build_mlcc(
                &poly,
                4,
                &RecoveryProfile::new(vec![12, 11, 7, 2]),
                Layout::Auto,
                12,
            )?,
        ),
    ];
    let configs: Vec<RunConfig> = specs
        .into_iter()
        .map(|(label, spec)| {
            let mut c = RunConfig::new(spec, 0.33, 100);
            c.label = label.into();
            c.verify = Verify::Fast;
            c
        })
        .collect();
    println!(
        "{:8} {:>9} {:>9} {:>9}",
        "scheme", "compute", "decode", "relErr"
    );
    for (row, _) in sweep(&configs, 4)? {
        println!(
            "{:8} {:9.5} {:9.5} {:9.1e}",
            row.label,
            row.compute,
            row.decode,
            row.max_rel_error.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
