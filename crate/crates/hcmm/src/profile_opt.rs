//! Recovery-profile design for MLCC and related closed forms: expected order
//! statistics of shifted exponentials, the expected non-hierarchical finishing
//! time in the two extreme regimes, the fast-network min-max program, the
//! fast-worker solution and the MLCC finishing-time bounds.

use serde::{Deserialize, Serialize};

use crate::codes::grid_loads;
use crate::cuboid::{Dims, GridSpec};
use crate::error::{invalid, Result};
use crate::hierarchy::RecoveryProfile;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub n: usize,
    pub r: usize,
    pub l: usize,
    pub mu_comp: f64,
    pub alpha_comp: f64,
    pub mu_comm: f64,
    pub alpha_comm: f64,
}

impl RegimeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_comp > 0.0 && self.mu_comm > 0.0) {
            return invalid("mu must be positive");
        }
        if !(self.alpha_comp >= 0.0 && self.alpha_comm >= 0.0) {
            return invalid("alpha must be nonnegative");
        }
        if self.r < 1 || self.r >= self.n {
            return invalid(format!(
                "need 1 <= R < N, got R = {}, N = {}",
                self.r, self.n
            ));
        }
        if self.l < 1 {
            return invalid("need at least one level");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    FastNetwork,
    FastWorker,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderStatForm {
    /// `α + μ Σ_{i=N-R+1}^{N} 1/i`.
    #[default]
    Exact,
    /// `α + μ log(N/(N-R))`.
    Log,
}

/// Expected `r`-th smallest of `n` i.i.d. shifted exponentials (exact harmonic form).
pub fn expected_order_statistic(n: usize, r: usize, mu: f64, alpha: f64) -> Result<f64> {
    expected_order_statistic_with(n, r, mu, alpha, OrderStatForm::Exact)
}

pub fn expected_order_statistic_with(
    n: usize,
    r: usize,
    mu: f64,
    alpha: f64,
    form: OrderStatForm,
) -> Result<f64> {
    if r < 1 || r >= n {
        return invalid(format!("need 1 <= r < n, got r = {r}, n = {n}"));
    }
    Ok(match form {
        OrderStatForm::Exact => alpha + mu * harmonic_tail(n, r),
        OrderStatForm::Log => alpha + mu * (n as f64 / (n - r) as f64).ln(),
    })
}

/// `Σ_{i=n-r+1}^{n} 1/i`.
pub fn harmonic_tail(n: usize, r: usize) -> f64 {
    (n - r + 1..=n).rev().map(|i| 1.0 / i as f64).sum()
}

fn log_term(n: usize, r: usize) -> f64 {
    (n as f64 / (n - r) as f64).ln()
}

/// Expected non-hierarchical finishing time in one of the two extreme regimes.
pub fn expected_finishing_nonh(
    params: &RegimeParams,
    d: &Dims,
    g: &GridSpec,
    regime: Regime,
) -> f64 {
    let lt = log_term(params.n, params.r);
    let loads = grid_loads(g, d);
    match regime {
        Regime::FastNetwork => (params.alpha_comp + params.mu_comp * lt) * loads.comp,
        Regime::FastWorker => {
            (params.alpha_comm + params.mu_comm * lt) * (loads.comm_in + loads.comm_out)
        }
    }
}

/// Level-`l` term of the fast-network program, `l` 1-based.
pub fn fast_network_term(params: &RegimeParams, level: usize, r: usize) -> f64 {
    (params.alpha_comp + params.mu_comp * log_term(params.n, r)) * level as f64
}

/// `max_l (α + μ log(N/(N-r_l)))·l`.
pub fn fast_network_objective(params: &RegimeParams, profile: &[usize]) -> f64 {
    profile
        .iter()
        .enumerate()
        .map(|(i, &r)| fast_network_term(params, i + 1, r))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `max_l (α_comm + μ_comm log(N/(N-r_l)))`.
pub fn fast_worker_objective(params: &RegimeParams, profile: &[usize]) -> f64 {
    profile
        .iter()
        .map(|&r| params.alpha_comm + params.mu_comm * log_term(params.n, r))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSolution {
    pub profile: RecoveryProfile,
    /// Objective of the integer profile.
    pub objective: f64,
    /// Optimum of the real relaxation.
    pub relaxed_objective: f64,
    /// Real-valued profile at the relaxed optimum.
    pub relaxed_profile: Vec<f64>,
}

fn check_budget(params: &RegimeParams) -> Result<()> {
    params.validate()?;
    if params.r > params.n - 1 {
        return invalid("budget L*R exceeds what thresholds below N can provide");
    }
    Ok(())
}

/// Largest real `r_l(z)` in `[0, N)` meeting the level-`l` constraint.
fn relaxed_r(params: &RegimeParams, level: usize, z: f64) -> f64 {
    let n = params.n as f64;
    let x = (z / level as f64 - params.alpha_comp) / params.mu_comp;
    if x <= 0.0 {
        0.0
    } else {
        n * (1.0 - (-x).exp())
    }
}

/// Bisection on `z` for the real relaxation of the fast-network program.
pub fn relaxed_fast_network(params: &RegimeParams) -> Result<(f64, Vec<f64>)> {
    check_budget(params)?;
    let l = params.l;
    let budget = (l * params.r) as f64;
    let sum_at = |z: f64| (1..=l).map(|i| relaxed_r(params, i, z)).sum::<f64>();
    // Every level pays at least α·l, so z ≥ α·L.
    let mut lo = params.alpha_comp * l as f64;
    if sum_at(lo) >= budget {
        let prof = (1..=l).map(|i| relaxed_r(params, i, lo)).collect();
        return Ok((lo, prof));
    }
    let mut hi = fast_network_term(params, l, params.r).max(lo) * 2.0 + 1e-300;
    while sum_at(hi) < budget {
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-12 * hi.abs().max(f64::MIN_POSITIVE) * 1e-3 {
            break;
        }
        if sum_at(mid) >= budget {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let prof = (1..=l).map(|i| relaxed_r(params, i, hi)).collect();
    Ok((hi, prof))
}

/// Largest integer threshold in `[0, N-1]` for each level with term ≤ `z`, or
/// `None` if some level cannot meet `z` even with `r = 0`.
fn max_integer_profile(params: &RegimeParams, z: f64) -> Option<Vec<usize>> {
    let n = params.n;
    let mut out = Vec::with_capacity(params.l);
    let mut cap = n - 1;
    for level in 1..=params.l {
        if fast_network_term(params, level, 0) > z {
            return None;
        }
        // Terms grow with r, so the feasible r form a prefix; search it.
        let (mut lo, mut hi) = (0usize, cap);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if fast_network_term(params, level, mid) <= z {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        cap = lo;
        out.push(lo);
    }
    Some(out)
}

/// Solves the fast-network program over integer profiles exactly.
///
/// The optimum is one of the finitely many values `f_l(r)`; bisection over
/// their sorted list finds the smallest `z` whose largest feasible profile
/// covers the budget, and the excess is then trimmed without breaking
/// monotonicity. The real relaxation is reported alongside.
pub fn optimize_fast_network(params: &RegimeParams) -> Result<ProfileSolution> {
    check_budget(params)?;
    let (relaxed_objective, relaxed_profile) = relaxed_fast_network(params)?;
    let l = params.l;
    let budget = l * params.r;
    if l == 1 {
        let profile = vec![params.r];
        return Ok(ProfileSolution {
            objective: fast_network_objective(params, &profile),
            profile: RecoveryProfile::new(profile),
            relaxed_objective,
            relaxed_profile,
        });
    }
    let mut cands: Vec<f64> = (1..=l)
        .flat_map(|level| (0..params.n).map(move |r| (level, r)))
        .map(|(level, r)| fast_network_term(params, level, r))
        .collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let feasible =
        |z: f64| max_integer_profile(params, z).filter(|p| p.iter().sum::<usize>() >= budget);
    let (mut lo, mut hi) = (0usize, cands.len() - 1);
    if feasible(cands[hi]).is_none() {
        return invalid("no integer profile meets the budget");
    }
    while lo < hi {
        let mid = (lo + hi) / 2;
        if feasible(cands[mid]).is_some() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mut profile = feasible(cands[lo]).expect("checked feasible");
    let mut excess = profile.iter().sum::<usize>() - budget;
    while excess > 0 {
        let top = profile[0];
        let i = profile.iter().rposition(|&r| r == top).expect("nonempty");
        profile[i] -= 1;
        excess -= 1;
    }
    Ok(ProfileSolution {
        objective: fast_network_objective(params, &profile),
        profile: RecoveryProfile::new(profile),
        relaxed_objective,
        relaxed_profile,
    })
}

/// The fast-worker program: the constant profile `[R, ..., R]`.
pub fn optimize_fast_worker(params: &RegimeParams) -> Result<ProfileSolution> {
    params.validate()?;
    let profile = vec![params.r; params.l];
    let objective = fast_worker_objective(params, &profile);
    Ok(ProfileSolution {
        profile: RecoveryProfile::new(profile),
        objective,
        relaxed_objective: objective,
        relaxed_profile: vec![params.r as f64; params.l],
    })
}

/// Lower and upper bounds on the expected MLCC finishing time in the fast-network regime.
///
/// The per-level computation coefficient is `NxNzNy/(L·D)` with `D` the base
/// grid's information dimension. The spread term uses the variance of a
/// shifted-exponential order statistic, `μ² l² Σ 1/i²`.
pub fn mlcc_bounds(
    params: &RegimeParams,
    profile: &RecoveryProfile,
    d: &Dims,
    g: &GridSpec,
) -> (f64, f64) {
    let l = profile.len();
    let coef = d.volume() as f64 / (l as f64 * g.info_dim() as f64);
    let max_term = profile
        .thresholds
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > 0)
        .map(|(i, &r)| fast_network_term(params, i + 1, r))
        .fold(0.0, f64::max);
    let lower = max_term * coef;
    let sum_j2: f64 = (1..=l).map(|j| (j * j) as f64).sum();
    let sum_i2: f64 = (1..=params.n).map(|i| 1.0 / (i * i) as f64).sum();
    let spread = params.mu_comp * ((l as f64 - 1.0) / l as f64 * sum_j2 * sum_i2).sqrt();
    (lower, lower + spread * coef)
}

/// Exhaustive search over nonincreasing integer profiles summing to `L·R`
/// with entries in `[0, N-1]`, minimizing `objective`.
pub fn brute_force_profile<F>(
    n: usize,
    r: usize,
    l: usize,
    objective: F,
) -> Option<(Vec<usize>, f64)>
where
    F: Fn(&[usize]) -> f64,
{
    fn rec<F: Fn(&[usize]) -> f64>(
        cur: &mut Vec<usize>,
        remaining: usize,
        levels_left: usize,
        cap: usize,
        objective: &F,
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        if levels_left == 0 {
            if remaining == 0 {
                let v = objective(cur);
                if best.as_ref().is_none_or(|(_, b)| v < *b) {
                    *best = Some((cur.clone(), v));
                }
            }
            return;
        }
        if remaining > cap * levels_left {
            return;
        }
        let lo = remaining.div_ceil(levels_left);
        for x in lo..=cap.min(remaining) {
            cur.push(x);
            rec(cur, remaining - x, levels_left - 1, x, objective, best);
            cur.pop();
        }
    }
    let mut best = None;
    rec(
        &mut Vec::with_capacity(l),
        l * r,
        l,
        n - 1,
        &objective,
        &mut best,
    );
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, r: usize, l: usize) -> RegimeParams {
        RegimeParams {
            n,
            r,
            l,
            mu_comp: 1e-6,
            alpha_comp: 1e-7,
            mu_comm: 1e-8,
            alpha_comm: 1e-9,
        }
    }

    #[test]
    fn single_level_profile_is_r() {
        let s = optimize_fast_network(&params(20, 4, 1)).unwrap();
        assert_eq!(s.profile.thresholds, vec![4]);
    }

    #[test]
    fn relaxation_never_exceeds_integer_optimum() {
        let p = params(20, 4, 8);
        let s = optimize_fast_network(&p).unwrap();
        assert!(s.relaxed_objective <= s.objective * (1.0 + 1e-12));
        let sum: f64 = s.relaxed_profile.iter().sum();
        assert!(sum >= 32.0 - 1e-6);
    }
}
