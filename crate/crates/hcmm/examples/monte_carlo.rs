//! Monte Carlo finishing times of every scheme under the shifted-exponential
//! model, at a small cluster size.

use hcmm::cuboid::{Axis, Dims, GridSpec};
use hcmm::hierarchy::RecoveryProfile;
use hcmm::profile_opt::{expected_finishing_nonh, optimize_fast_network, Regime, RegimeParams};
use hcmm::stoch_sim::{monte_carlo, Scheme, TimingModel};

fn main() -> hcmm::Result<()> {
    let (n, r, l) = (20, 4, 16);
    let d = Dims::cube(1000);
    let g = GridSpec::new(r, 1, 1);
    let model = TimingModel::new(1e-6, 1e-7, 1e-8, 1e-9);
    let params = RegimeParams {
        n,
        r,
        l,
        mu_comp: model.mu_comp,
        alpha_comp: model.alpha_comp,
        mu_comm: model.mu_comm,
        alpha_comm: model.alpha_comm,
    };
    println!(
        "closed-form non-h: {:.3}",
        expected_finishing_nonh(&params, &d, &g, Regime::FastNetwork)
    );

    let profile = optimize_fast_network(&params)?.profile;
    let schemes = [
        Scheme::Nonh { r },
        Scheme::Bicc {
            p: l,
            r: l * r,
            axis: Axis::Z,
        },
        Scheme::Mlcc {
            profile,
            axis: None,
        },
        Scheme::Rmlcc {
            r,
            levels: l,
            axis: None,
        },
        Scheme::Hhcc {
            per_level: vec![8, 8],
            profile: RecoveryProfile::new(vec![32, 32]),
            axis: None,
        },
    ];
    for s in &schemes {
        let m = monte_carlo(s, &d, &g, n, &model, 20_000, 9)?;
        println!(
            "{:6} mean {:8.3} +/- {:.3}  p95 {:8.3}",
            s.name(),
            m.mean,
            m.std_error(),
            m.p95
        );
    }
    Ok(())
}
