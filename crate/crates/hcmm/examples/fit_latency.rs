//! Fits a shifted exponential to latency samples, here drawn synthetically.

use hcmm::stoch_sim::{fit_shifted_exponential, sample_shifted_exponential};

fn main() -> hcmm::Result<()> {
    for (mu, alpha) in [(0.22, 0.99), (0.021, 3.803)] {
        let xs = sample_shifted_exponential(mu, alpha, 50_000, 4);
        let fit = fit_shifted_exponential(&xs)?;
        println!(
            "true ({mu}, {alpha}) -> fitted ({:.4}, {:.4})",
            fit.mu, fit.alpha
        );
    }
    Ok(())
}
