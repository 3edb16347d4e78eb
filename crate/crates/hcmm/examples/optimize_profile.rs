//! Optimal recovery profiles in the two timing regimes, the real relaxation,
//! and the finishing-time bounds they imply.

use hcmm::cuboid::{Dims, GridSpec};
use hcmm::profile_opt::{mlcc_bounds, optimize_fast_network, optimize_fast_worker, RegimeParams};

fn main() -> hcmm::Result<()> {
    let params = RegimeParams {
        n: 20,
        r: 4,
        l: 8,
        mu_comp: 1e-6,
        alpha_comp: 1e-7,
        mu_comm: 1e-8,
        alpha_comm: 1e-9,
    };
    let fast_net = optimize_fast_network(&params)?;
    println!("fast network: {:?}", fast_net.profile.thresholds);
    println!(
        "  integer objective {:.4e}, relaxed {:.4e}",
        fast_net.objective, fast_net.relaxed_objective
    );
    let relaxed: Vec<String> = fast_net
        .relaxed_profile
        .iter()
        .map(|r| format!("{r:.2}"))
        .collect();
    println!("  relaxed profile [{}]", relaxed.join(", "));

    let fast_worker = optimize_fast_worker(&params)?;
    println!("fast worker:  {:?}", fast_worker.profile.thresholds);

    let (lo, hi) = mlcc_bounds(
        &params,
        &fast_net.profile,
        &Dims::cube(1000),
        &GridSpec::new(4, 1, 1),
    );
    println!("expected MLCC finishing time within [{lo:.3}, {hi:.3}]");
    Ok(())
}
