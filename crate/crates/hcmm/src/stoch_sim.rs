//! Shifted-exponential timing model and finishing-time evaluation.
//!
//! Every worker draws one time per basic operation for computation and one per
//! real for communication, then progresses linearly. A scheme is reduced to a
//! [`SlotPlan`]: per worker an input load paid once and an ordered list of
//! slots with their own computation and output loads. Slot `k` of a worker is
//! done at
//!
//! ```text
//! commIn·t_comm + max_{i ≤ k} (commOut_i·t_comm + (comp_1 + … + comp_i)·t_comp)
//! ```
//!
//! which is the per-slot linear form when loads are constant. A level is done
//! at the `r_l`-th smallest of its slot times and the job at the latest level.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codes::grid_loads;
use crate::cuboid::{Axis, Dims, GridSpec};
use crate::error::{invalid, Result};
use crate::hierarchy::{padded_block, worker_rng, HierarchySpec, RecoveryProfile};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TimingModel {
    pub mu_comp: f64,
    pub alpha_comp: f64,
    pub mu_comm: f64,
    pub alpha_comm: f64,
}

impl TimingModel {
    pub fn new(mu_comp: f64, alpha_comp: f64, mu_comm: f64, alpha_comm: f64) -> Self {
        Self {
            mu_comp,
            alpha_comp,
            mu_comm,
            alpha_comm,
        }
    }

    /// `μ = 0` is accepted as the deterministic limit.
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.mu_comp) && ok(self.alpha_comp) && ok(self.mu_comm) && ok(self.alpha_comm)) {
            return invalid("timing parameters must be finite and nonnegative");
        }
        Ok(())
    }

    /// Computation-only model (communication free).
    pub fn without_comm(mut self) -> Self {
        self.mu_comm = 0.0;
        self.alpha_comm = 0.0;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorkerDraw {
    pub t_comp: f64,
    pub t_comm: f64,
}

fn shifted_exp(rng: &mut ChaCha8Rng, mu: f64, alpha: f64) -> f64 {
    if mu == 0.0 {
        return alpha;
    }
    let e: f64 = Exp::new(1.0).expect("unit rate").sample(rng);
    alpha + mu * e
}

/// Draws for `n` workers from `rng`, computation first within each worker.
pub fn draws_from(model: &TimingModel, n: usize, rng: &mut ChaCha8Rng) -> Vec<WorkerDraw> {
    (0..n)
        .map(|_| {
            let t_comp = shifted_exp(rng, model.mu_comp, model.alpha_comp);
            let t_comm = shifted_exp(rng, model.mu_comm, model.alpha_comm);
            WorkerDraw { t_comp, t_comm }
        })
        .collect()
}

/// I.i.d. draws for `n` workers, a pure function of `seed`.
pub fn sample_draws(model: &TimingModel, n: usize, seed: u64) -> Vec<WorkerDraw> {
    draws_from(model, n, &mut worker_rng(seed, 0))
}

/// `n` i.i.d. shifted exponentials.
pub fn sample_shifted_exponential(mu: f64, alpha: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = worker_rng(seed, 0);
    (0..n).map(|_| shifted_exp(&mut rng, mu, alpha)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialResult {
    pub finishing_time: f64,
    pub per_level_completion: Vec<f64>,
    /// Workers with at least one slot done by its level's completion time.
    pub completing_workers: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlanSlot {
    pub level: usize,
    pub comp: f64,
    pub comm_out: f64,
}

/// Loads of one scheme as seen by the timing model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SlotPlan {
    pub thresholds: Vec<usize>,
    pub comm_in: Vec<f64>,
    pub slots: Vec<Vec<PlanSlot>>,
}

impl SlotPlan {
    pub fn workers(&self) -> usize {
        self.slots.len()
    }

    pub fn levels(&self) -> usize {
        self.thresholds.len()
    }

    fn uniform(n: usize, comm_in: f64, slots: Vec<PlanSlot>, thresholds: Vec<usize>) -> Self {
        Self {
            thresholds,
            comm_in: vec![comm_in; n],
            slots: vec![slots; n],
        }
    }

    fn check(&self) -> Result<()> {
        for (l, &r) in self.thresholds.iter().enumerate() {
            let have: usize = self
                .slots
                .iter()
                .map(|s| s.iter().filter(|p| p.level == l).count())
                .sum();
            if r > have {
                return invalid(format!("level {l} needs {r} results but has {have} slots"));
            }
        }
        Ok(())
    }

    /// One slot per worker with the full grid loads; threshold `r`.
    pub fn nonh(d: &Dims, g: &GridSpec, n: usize, r: usize) -> Result<Self> {
        let l = grid_loads(g, d);
        let plan = Self::uniform(
            n,
            l.comm_in,
            vec![PlanSlot {
                level: 0,
                comp: l.comp,
                comm_out: l.comm_out,
            }],
            vec![r],
        );
        plan.check()?;
        Ok(plan)
    }

    /// `P` slots per worker splitting the grid's work along `axis`.
    ///
    /// Splitting along z keeps each slot's output at the full block size;
    /// splitting along x or y divides it by `P`.
    fn split(
        d: &Dims,
        g: &GridSpec,
        n: usize,
        levels_of_slot: &[usize],
        thresholds: Vec<usize>,
        axis: Axis,
    ) -> Result<Self> {
        let p = levels_of_slot.len();
        if p == 0 {
            return invalid("need at least one slot");
        }
        let l = grid_loads(g, d);
        let comm_out = match axis {
            Axis::Z => l.comm_out,
            Axis::X | Axis::Y => l.comm_out / p as f64,
        };
        let comp = l.comp / p as f64;
        let slots = levels_of_slot
            .iter()
            .map(|&level| PlanSlot {
                level,
                comp,
                comm_out,
            })
            .collect();
        let plan = Self::uniform(n, l.comm_in, slots, thresholds);
        plan.check()?;
        Ok(plan)
    }

    /// BICC: `P` slots of one level with threshold `r_bicc`.
    pub fn bicc(
        d: &Dims,
        g: &GridSpec,
        n: usize,
        p: usize,
        r_bicc: usize,
        axis: Axis,
    ) -> Result<Self> {
        Self::split(d, g, n, &vec![0; p], vec![r_bicc], axis)
    }

    /// MLCC: one slot per level, levels in order.
    pub fn mlcc(
        d: &Dims,
        g: &GridSpec,
        n: usize,
        profile: &RecoveryProfile,
        axis: Axis,
    ) -> Result<Self> {
        let levels: Vec<usize> = (0..profile.len()).collect();
        Self::split(d, g, n, &levels, profile.thresholds.clone(), axis)
    }

    /// HHCC: level `l` owns `per_level[l]` consecutive slots.
    pub fn hhcc(
        d: &Dims,
        g: &GridSpec,
        n: usize,
        per_level: &[usize],
        profile: &RecoveryProfile,
        axis: Axis,
    ) -> Result<Self> {
        if per_level.len() != profile.len() {
            return invalid("profile and per-level subtask counts differ in length");
        }
        let levels: Vec<usize> = per_level
            .iter()
            .enumerate()
            .flat_map(|(l, &pl)| std::iter::repeat_n(l, pl))
            .collect();
        Self::split(d, g, n, &levels, profile.thresholds.clone(), axis)
    }

    /// Loads of a concrete spec: padded block volumes and distinct operands.
    pub fn from_spec(spec: &HierarchySpec) -> Self {
        let slots = spec
            .worker_slots
            .iter()
            .map(|ws| {
                ws.iter()
                    .map(|s| {
                        let code = spec.level_codes[s.level]
                            .code
                            .as_ref()
                            .expect("scheduled level has a code");
                        let [bx, bz, by] = padded_block(code);
                        PlanSlot {
                            level: s.level,
                            comp: (bx * bz * by) as f64,
                            comm_out: (bx * by) as f64,
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            thresholds: spec.thresholds(),
            comm_in: (0..spec.workers)
                .map(|w| spec.worker_comm_in(w) as f64)
                .collect(),
            slots,
        }
    }
}

/// Reusable buffers for [`evaluate_into`].
#[derive(Default)]
pub struct Scratch {
    per_level: Vec<Vec<f64>>,
}

/// Evaluates one trial. `order[n]`, if given, is the sequence of slot indices worker `n` visits.
pub fn evaluate(
    plan: &SlotPlan,
    draws: &[WorkerDraw],
    order: Option<&[Vec<usize>]>,
) -> TrialResult {
    let mut scratch = Scratch::default();
    let (finishing_time, per_level_completion) = evaluate_into(plan, draws, order, &mut scratch);
    let mut completing = Vec::new();
    for (n, d) in draws.iter().enumerate() {
        let times = slot_times(plan, n, d, order.map(|o| o[n].as_slice()));
        if times
            .iter()
            .any(|&(l, t)| plan.thresholds[l] > 0 && t <= per_level_completion[l])
        {
            completing.push(n);
        }
    }
    TrialResult {
        finishing_time,
        per_level_completion,
        completing_workers: completing,
    }
}

fn slot_times(
    plan: &SlotPlan,
    n: usize,
    d: &WorkerDraw,
    order: Option<&[usize]>,
) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for_each_slot(plan, n, d, order, |l, t| out.push((l, t)));
    out
}

#[inline]
fn for_each_slot<F: FnMut(usize, f64)>(
    plan: &SlotPlan,
    n: usize,
    d: &WorkerDraw,
    order: Option<&[usize]>,
    mut f: F,
) {
    let slots = &plan.slots[n];
    let base = plan.comm_in[n] * d.t_comm;
    let mut cum = 0.0;
    let mut run = f64::NEG_INFINITY;
    let len = order.map_or(slots.len(), <[usize]>::len);
    for k in 0..len {
        let s = &slots[order.map_or(k, |o| o[k])];
        cum += s.comp;
        run = run.max(s.comm_out * d.t_comm + cum * d.t_comp);
        f(s.level, base + run);
    }
}

/// Fast path of [`evaluate`] returning the finishing time and per-level completions.
pub fn evaluate_into(
    plan: &SlotPlan,
    draws: &[WorkerDraw],
    order: Option<&[Vec<usize>]>,
    scratch: &mut Scratch,
) -> (f64, Vec<f64>) {
    assert_eq!(draws.len(), plan.workers(), "one draw per worker");
    let levels = plan.levels();
    scratch.per_level.resize_with(levels, Vec::new);
    for v in &mut scratch.per_level {
        v.clear();
    }
    for (n, d) in draws.iter().enumerate() {
        let per_level = &mut scratch.per_level;
        for_each_slot(plan, n, d, order.map(|o| o[n].as_slice()), |l, t| {
            per_level[l].push(t)
        });
    }
    let mut completion = vec![0.0; levels];
    for (l, &r) in plan.thresholds.iter().enumerate() {
        if r == 0 {
            continue;
        }
        let v = &mut scratch.per_level[l];
        let (_, nth, _) = v.select_nth_unstable_by(r - 1, f64::total_cmp);
        completion[l] = *nth;
    }
    let finish = completion.iter().copied().fold(0.0, f64::max);
    (finish, completion)
}

/// `R`-th smallest of the per-worker totals `commIn·t_comm + comp·t_comp + commOut·t_comm`.
pub fn finishing_nonh(draws: &[WorkerDraw], d: &Dims, g: &GridSpec, r: usize) -> TrialResult {
    let plan = SlotPlan::nonh(d, g, draws.len(), r).expect("r <= N");
    evaluate(&plan, draws, None)
}

/// BICC with the work split along z, threshold `r_bicc` over `N·P` slots.
pub fn finishing_bicc(
    draws: &[WorkerDraw],
    d: &Dims,
    g: &GridSpec,
    p: usize,
    r_bicc: usize,
) -> TrialResult {
    finishing_bicc_along(draws, d, g, p, r_bicc, Axis::Z)
}

pub fn finishing_bicc_along(
    draws: &[WorkerDraw],
    d: &Dims,
    g: &GridSpec,
    p: usize,
    r_bicc: usize,
    axis: Axis,
) -> TrialResult {
    let plan = SlotPlan::bicc(d, g, draws.len(), p, r_bicc, axis).expect("r_bicc <= N*P");
    evaluate(&plan, draws, None)
}

/// MLCC stacked along the grid's dominant axis.
pub fn finishing_mlcc(
    draws: &[WorkerDraw],
    d: &Dims,
    g: &GridSpec,
    profile: &RecoveryProfile,
) -> TrialResult {
    finishing_mlcc_along(draws, d, g, profile, g.dominant_axis())
}

pub fn finishing_mlcc_along(
    draws: &[WorkerDraw],
    d: &Dims,
    g: &GridSpec,
    profile: &RecoveryProfile,
    axis: Axis,
) -> TrialResult {
    let plan = SlotPlan::mlcc(d, g, draws.len(), profile, axis).expect("valid profile");
    evaluate(&plan, draws, None)
}

/// RMLCC: worker `n` visits the levels in order `permutations[n]`.
pub fn finishing_rmlcc(
    draws: &[WorkerDraw],
    d: &Dims,
    g: &GridSpec,
    r: usize,
    permutations: &[Vec<usize>],
) -> TrialResult {
    let levels = permutations.first().map_or(1, Vec::len);
    let plan = SlotPlan::mlcc(
        d,
        g,
        draws.len(),
        &RecoveryProfile::uniform(r, levels),
        g.dominant_axis(),
    )
    .expect("valid profile");
    evaluate(&plan, draws, Some(permutations))
}

/// HHCC: slots of all levels concatenated in level order.
pub fn finishing_hhcc(
    draws: &[WorkerDraw],
    d: &Dims,
    g: &GridSpec,
    per_level: &[usize],
    profile: &RecoveryProfile,
    axis: Axis,
) -> TrialResult {
    let plan = SlotPlan::hhcc(d, g, draws.len(), per_level, profile, axis).expect("valid profile");
    evaluate(&plan, draws, None)
}

/// Evaluates a concrete spec, honoring per-worker slot orders.
pub fn finishing_spec(draws: &[WorkerDraw], spec: &HierarchySpec) -> TrialResult {
    evaluate(&SlotPlan::from_spec(spec), draws, None)
}

/// A scheme for Monte Carlo estimation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum Scheme {
    Nonh {
        r: usize,
    },
    Bicc {
        p: usize,
        r: usize,
        #[serde(default = "axis_z")]
        axis: Axis,
    },
    Mlcc {
        profile: RecoveryProfile,
        axis: Option<Axis>,
    },
    /// Uniform profile `[r; levels]`; level orders are redrawn every trial.
    Rmlcc {
        r: usize,
        levels: usize,
        axis: Option<Axis>,
    },
    Hhcc {
        per_level: Vec<usize>,
        profile: RecoveryProfile,
        axis: Option<Axis>,
    },
}

fn axis_z() -> Axis {
    Axis::Z
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Nonh { .. } => "nonh",
            Scheme::Bicc { .. } => "bicc",
            Scheme::Mlcc { .. } => "mlcc",
            Scheme::Rmlcc { .. } => "rmlcc",
            Scheme::Hhcc { .. } => "hhcc",
        }
    }

    /// `(L, P)` of the scheme.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Scheme::Nonh { .. } => (1, 1),
            Scheme::Bicc { p, .. } => (1, *p),
            Scheme::Mlcc { profile, .. } => (profile.len(), profile.len()),
            Scheme::Rmlcc { levels, .. } => (*levels, *levels),
            Scheme::Hhcc { per_level, .. } => (per_level.len(), per_level.iter().sum()),
        }
    }

    pub fn profile(&self) -> Vec<usize> {
        match self {
            Scheme::Nonh { r } => vec![*r],
            Scheme::Bicc { r, .. } => vec![*r],
            Scheme::Mlcc { profile, .. } | Scheme::Hhcc { profile, .. } => {
                profile.thresholds.clone()
            }
            Scheme::Rmlcc { r, levels, .. } => vec![*r; *levels],
        }
    }

    pub fn plan(&self, d: &Dims, g: &GridSpec, n: usize) -> Result<SlotPlan> {
        let dom = g.dominant_axis();
        match self {
            Scheme::Nonh { r } => SlotPlan::nonh(d, g, n, *r),
            Scheme::Bicc { p, r, axis } => SlotPlan::bicc(d, g, n, *p, *r, *axis),
            Scheme::Mlcc { profile, axis } => SlotPlan::mlcc(d, g, n, profile, axis.unwrap_or(dom)),
            Scheme::Rmlcc { r, levels, axis } => SlotPlan::mlcc(
                d,
                g,
                n,
                &RecoveryProfile::uniform(*r, *levels),
                axis.unwrap_or(dom),
            ),
            Scheme::Hhcc {
                per_level,
                profile,
                axis,
            } => SlotPlan::hhcc(d, g, n, per_level, profile, axis.unwrap_or(dom)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub mean: f64,
    pub stddev: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub trials: usize,
    pub seed: u64,
}

impl McSummary {
    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        self.stddev / (self.trials as f64).sqrt()
    }

    pub fn from_samples(samples: &[f64], seed: u64) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
            sorted[idx]
        };
        Self {
            mean,
            stddev: var.sqrt(),
            p50: q(0.50),
            p95: q(0.95),
            p99: q(0.99),
            trials: n,
            seed,
        }
    }
}

/// Draws of trial `trial`, depending only on `(seed, trial)`.
pub fn trial_draws(model: &TimingModel, n: usize, seed: u64, trial: u64) -> Vec<WorkerDraw> {
    draws_from(model, n, &mut worker_rng(seed, trial))
}

fn random_orders(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| {
            let mut v: Vec<usize> = (0..len).collect();
            for i in (1..len).rev() {
                let j = rng.random_range(0..=i);
                v.swap(i, j);
            }
            v
        })
        .collect()
}

/// Per-trial finishing times of `scheme`; trial `i` uses the stream `(seed, i)`.
pub fn monte_carlo_samples(
    scheme: &Scheme,
    d: &Dims,
    g: &GridSpec,
    n: usize,
    model: &TimingModel,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if trials == 0 {
        return invalid("trials must be at least 1");
    }
    model.validate()?;
    let plan = scheme.plan(d, g, n)?;
    let shuffle = matches!(scheme, Scheme::Rmlcc { .. });
    Ok((0..trials as u64)
        .into_par_iter()
        .map_init(Scratch::default, |scratch, t| {
            let mut rng = worker_rng(seed, t);
            let draws = draws_from(model, n, &mut rng);
            if shuffle {
                let orders = random_orders(&mut rng, n, plan.slots[0].len());
                evaluate_into(&plan, &draws, Some(&orders), scratch).0
            } else {
                evaluate_into(&plan, &draws, None, scratch).0
            }
        })
        .collect())
}

/// Mean, sample standard deviation and quantiles of the finishing time.
pub fn monte_carlo(
    scheme: &Scheme,
    d: &Dims,
    g: &GridSpec,
    n: usize,
    model: &TimingModel,
    trials: usize,
    seed: u64,
) -> Result<McSummary> {
    let samples = monte_carlo_samples(scheme, d, g, n, model, trials, seed)?;
    Ok(McSummary::from_samples(&samples, seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub mu: f64,
    pub alpha: f64,
    /// Set when all samples are equal.
    pub degenerate: bool,
}

/// Maximum-likelihood fit of a shifted exponential: `α = min`, `μ = mean − min`.
pub fn fit_shifted_exponential(samples: &[f64]) -> Result<ExpFit> {
    if samples.len() < 2 {
        return invalid("need at least two samples");
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return invalid("samples must be finite");
    }
    let alpha = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let degenerate = samples.iter().all(|&x| x == alpha);
    let mu = if degenerate {
        0.0
    } else {
        (mean - alpha).max(0.0)
    };
    Ok(ExpFit {
        mu,
        alpha,
        degenerate,
    })
}

/// One CSV row of simulation output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimRow {
    pub scheme: String,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "R")]
    pub r: usize,
    pub profile: String,
    pub mean: f64,
    pub stddev: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub trials: usize,
    pub seed: u64,
}

impl SimRow {
    pub fn new(scheme: &Scheme, n: usize, r: usize, s: &McSummary) -> Self {
        let (l, p) = scheme.shape();
        let profile = scheme
            .profile()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(" ");
        Self {
            scheme: scheme.name().to_string(),
            l,
            p,
            n,
            r,
            profile,
            mean: s.mean,
            stddev: s.stddev,
            p50: s.p50,
            p95: s.p95,
            p99: s.p99,
            trials: s.trials,
            seed: s.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_worker_is_its_own_total() {
        let d = Dims::cube(10);
        let g = GridSpec::unit();
        let draws = [WorkerDraw {
            t_comp: 2.0,
            t_comm: 3.0,
        }];
        let t = finishing_nonh(&draws, &d, &g, 1);
        assert_eq!(t.finishing_time, 200.0 * 3.0 + 1000.0 * 2.0 + 100.0 * 3.0);
        assert_eq!(t.completing_workers, vec![0]);
    }

    #[test]
    fn zero_threshold_level_completes_at_zero() {
        let d = Dims::cube(8);
        let g = GridSpec::new(2, 1, 1);
        let draws = vec![
            WorkerDraw {
                t_comp: 1.0,
                t_comm: 0.0
            };
            3
        ];
        let t = finishing_mlcc(&draws, &d, &g, &RecoveryProfile::new(vec![3, 1, 0]));
        assert_eq!(t.per_level_completion[2], 0.0);
    }
}
