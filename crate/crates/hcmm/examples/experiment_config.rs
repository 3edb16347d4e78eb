//! Drives the CLI commands from an in-memory configuration instead of a file.

use hcmm::cli::{cmd_optimize_profile, cmd_simulate, ExperimentConfig};

fn main() -> hcmm::Result<()> {
    let mut cfg = ExperimentConfig::from_json(
        r#"{
            "workers": 20,
            "base": { "family": "polynomial", "grid": { "mx": 4, "mz": 1, "my": 1 } },
            "trials": 5000,
            "seed": 3,
            "sweep": { "levels": [2, 8] },
            "schemes": ["nonh", "mlcc"]
        }"#,
    )?;
    print!("{}", cmd_simulate(&cfg)?);
    cfg.levels = Some(8);
    println!("{}", cmd_optimize_profile(&cfg)?);
    println!(
        "round trip equal: {}",
        ExperimentConfig::from_json(&cfg.to_json()?)? == cfg
    );
    Ok(())
}
