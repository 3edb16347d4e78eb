//! In-process master/worker execution on real matrices.
//!
//! The master encodes, hands every worker its schedule, and collects results
//! in arrival order. Workers run on their own threads and send each product
//! as soon as it is done. Stragglers compute every multiply twice.
//!
//! Worker progress is measured on each worker's own thread CPU clock, so a
//! worker's timeline does not depend on how many cores the host has. The
//! reported compute time is the earliest worker-clock instant at which the
//! received results satisfy every level's threshold. At most one multiply per
//! core runs at a time, so workers do not evict each other's caches mid-product.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::sync::{mpsc, Condvar, Mutex};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codes::{CodeFamily, DecodeOptions, DecodeWarning, EncodedTask};
use crate::error::{invalid, Error, Result};
use crate::hierarchy::{
    assemble, decode_level, encode_schedules, residual_products, worker_rng, AggregationState,
    HierarchySpec, Observation, SlotRef, WorkerSchedule,
};
use crate::matrix::{matmul, matmul_reference, Matrix};

const STRAGGLER_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Serial,
    Parallel,
    Streaming,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "serial" => Ok(Self::Serial),
            "parallel" => Ok(Self::Parallel),
            "streaming" => Ok(Self::Streaming),
            other => invalid(format!("unknown decode mode {other:?}")),
        }
    }
}

/// How the decoded product is checked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verify {
    /// Against the triple-loop reference product.
    #[default]
    Reference,
    /// Against the blocked kernel product.
    Fast,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunConfig {
    pub scheme: HierarchySpec,
    pub straggler_prob: f64,
    pub seed: u64,
    #[serde(default)]
    pub decode_mode: DecodeMode,
    #[serde(default)]
    pub cancel_on_complete: bool,
    #[serde(default)]
    pub verify: Verify,
    #[serde(default)]
    pub label: String,
    /// Worker whose first subtask panics; for exercising failure handling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inject_panic: Option<usize>,
}

impl RunConfig {
    pub fn new(scheme: HierarchySpec, straggler_prob: f64, seed: u64) -> Self {
        Self {
            scheme,
            straggler_prob,
            seed,
            decode_mode: DecodeMode::Serial,
            cancel_on_complete: false,
            verify: Verify::Reference,
            label: String::new(),
            inject_panic: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.straggler_prob) {
            return invalid(format!(
                "stragglerProb {} is not a probability",
                self.straggler_prob
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PhaseTimes {
    pub encode: f64,
    pub distribute: f64,
    /// Worker-clock time at which the profile was first satisfied.
    pub compute: f64,
    /// CPU time each worker spent multiplying.
    pub compute_per_worker: Vec<f64>,
    /// Master time spent recording results.
    pub aggregate: f64,
    /// Decode work, summed over levels.
    pub decode: f64,
    /// Wall time from completion to the final product.
    pub decode_after_complete: f64,
    pub total_wall: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompletionRecord {
    /// Wall time since compute start at which the master received the result.
    pub time_s: f64,
    pub worker: usize,
    pub level: usize,
    pub slot: usize,
    /// The worker's CPU clock when it finished the result.
    pub worker_clock_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub label: String,
    pub phase_times: PhaseTimes,
    pub completion_log: Vec<CompletionRecord>,
    #[serde(skip)]
    pub product: Option<Matrix>,
    pub rel_error: Option<f64>,
    pub stragglers: Vec<usize>,
    /// Worker-clock completion of each level.
    pub level_completion: Vec<f64>,
    pub received: usize,
    pub warnings: Vec<DecodeWarning>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Completion log as CSV with columns `time_s, worker, level, slot`.
    pub fn write_completion_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["time_s", "worker", "level", "slot"])?;
        for r in &self.completion_log {
            wtr.write_record([
                r.time_s.to_string(),
                r.worker.to_string(),
                r.level.to_string(),
                r.slot.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Workers flagged as stragglers, a pure function of `(seed, p, n)`.
pub fn straggler_set(seed: u64, p: f64, n: usize) -> Vec<usize> {
    let mut rng = worker_rng(seed, STRAGGLER_STREAM);
    (0..n).filter(|_| rng.random::<f64>() < p).collect()
}

/// CPU time consumed by the calling thread, in seconds.
pub fn thread_cpu_time() -> f64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // SAFETY: `ts` is a valid, writable timespec for the duration of the call.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeTiming {
    /// Wall time of the whole call.
    pub wall: f64,
    /// Sum of per-level decode times.
    pub work: f64,
}

#[derive(Clone, Debug)]
pub struct DecodeOutput {
    pub product: Matrix,
    pub timing: DecodeTiming,
    pub warnings: Vec<DecodeWarning>,
}

fn require_complete(spec: &HierarchySpec, state: &AggregationState) -> Result<()> {
    if let Some(l) = (0..state.levels()).find(|&l| !state.level_complete(l)) {
        return Err(Error::NotYetRecoverable {
            have: state.count(l),
            need: spec.level_codes[l].threshold,
        });
    }
    Ok(())
}

fn timed_level(
    spec: &HierarchySpec,
    state: &AggregationState,
    level: usize,
    opts: DecodeOptions,
) -> Result<Option<LevelDecode>> {
    let t = Instant::now();
    let dec = decode_level(spec, state, level, opts)?;
    // Uncoded results are only placed, so they cost no decode time.
    let uncoded = spec.level_codes[level]
        .code
        .as_ref()
        .is_some_and(|c| c.family == CodeFamily::Uncoded);
    let dt = if uncoded {
        0.0
    } else {
        t.elapsed().as_secs_f64()
    };
    Ok(dec.map(|d| (d.product, d.warning, dt)))
}

/// Decoded block, its warning and the decode time.
type LevelDecode = (Matrix, Option<DecodeWarning>, f64);

fn finish(
    spec: &HierarchySpec,
    parts: Vec<(usize, Option<LevelDecode>)>,
    started: Instant,
) -> DecodeOutput {
    let mut decoded = Vec::new();
    let mut warnings = Vec::new();
    let mut work = 0.0;
    for (l, p) in parts {
        if let Some((m, w, t)) = p {
            work += t;
            warnings.extend(w);
            decoded.push((l, m));
        }
    }
    let product = assemble(spec, &decoded);
    DecodeOutput {
        product,
        timing: DecodeTiming {
            wall: started.elapsed().as_secs_f64(),
            work,
        },
        warnings,
    }
}

/// Decodes the levels one after another. Residual regions are not included.
pub fn decode_serial(
    spec: &HierarchySpec,
    state: &AggregationState,
    opts: DecodeOptions,
) -> Result<DecodeOutput> {
    require_complete(spec, state)?;
    let t = Instant::now();
    let parts = (0..state.levels())
        .map(|l| Ok((l, timed_level(spec, state, l, opts)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(spec, parts, t))
}

/// Decodes the levels concurrently on the rayon pool.
pub fn decode_parallel(
    spec: &HierarchySpec,
    state: &AggregationState,
    opts: DecodeOptions,
) -> Result<DecodeOutput> {
    require_complete(spec, state)?;
    let t = Instant::now();
    let parts = (0..state.levels())
        .into_par_iter()
        .map(|l| Ok((l, timed_level(spec, state, l, opts)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(spec, parts, t))
}

/// Decodes each level as soon as it completes.
#[derive(Debug)]
pub struct StreamingDecoder {
    opts: DecodeOptions,
    done: Vec<Option<Option<LevelDecode>>>,
}

impl StreamingDecoder {
    pub fn new(spec: &HierarchySpec, opts: DecodeOptions) -> Self {
        Self {
            opts,
            done: vec![None; spec.level_codes.len()],
        }
    }

    /// Decodes every level that is complete and not yet decoded.
    pub fn advance(&mut self, spec: &HierarchySpec, state: &AggregationState) -> Result<()> {
        for l in 0..state.levels() {
            if self.done[l].is_none() && state.level_complete(l) {
                self.done[l] = Some(timed_level(spec, state, l, self.opts)?);
            }
        }
        Ok(())
    }

    /// Decode time spent so far.
    pub fn work(&self) -> f64 {
        self.done.iter().flatten().flatten().map(|p| p.2).sum()
    }

    pub fn finish(self, spec: &HierarchySpec, state: &AggregationState) -> Result<DecodeOutput> {
        require_complete(spec, state)?;
        let t = Instant::now();
        let mut parts = Vec::with_capacity(self.done.len());
        for (l, d) in self.done.into_iter().enumerate() {
            parts.push((l, d.expect("complete levels were decoded by advance")));
        }
        Ok(finish(spec, parts, t))
    }
}

/// Streaming decode of a state: levels are decoded in the order supplied by
/// `advance`; on a complete state this decodes all levels at once.
pub fn decode_streaming(
    spec: &HierarchySpec,
    state: &AggregationState,
    opts: DecodeOptions,
) -> Result<DecodeOutput> {
    require_complete(spec, state)?;
    let t = Instant::now();
    let mut dec = StreamingDecoder::new(spec, opts);
    dec.advance(spec, state)?;
    let mut out = dec.finish(spec, state)?;
    out.timing.wall = t.elapsed().as_secs_f64();
    Ok(out)
}

struct Msg {
    slot: SlotRef,
    worker: usize,
    product: Matrix,
    clock: f64,
}

/// Worker-clock time at which the received results first satisfy every threshold.
fn completion_clock(thresholds: &[usize], log: &[CompletionRecord]) -> (f64, Vec<f64>) {
    let mut per_level = vec![0.0; thresholds.len()];
    for (l, &r) in thresholds.iter().enumerate() {
        if r == 0 {
            continue;
        }
        let mut clocks: Vec<f64> = log
            .iter()
            .filter(|c| c.level == l)
            .map(|c| c.worker_clock_s)
            .collect();
        clocks.sort_by(f64::total_cmp);
        per_level[l] = clocks.get(r - 1).copied().unwrap_or(f64::INFINITY);
    }
    let overall = per_level.iter().copied().fold(0.0, f64::max);
    (overall, per_level)
}

fn distribute(schedules: Vec<WorkerSchedule>) -> Vec<WorkerSchedule> {
    // Each worker gets its own copy of every distinct operand it needs.
    schedules
        .into_iter()
        .map(|ws| {
            let mut copies: Vec<(*const Matrix, Arc<Matrix>)> = Vec::new();
            let mut own = |m: &Arc<Matrix>| {
                let key = Arc::as_ptr(m);
                if let Some((_, c)) = copies.iter().find(|(k, _)| *k == key) {
                    return c.clone();
                }
                let c = Arc::new((**m).clone());
                copies.push((key, c.clone()));
                c
            };
            let subtasks = ws
                .subtasks
                .iter()
                .map(|(s, t)| {
                    (
                        *s,
                        EncodedTask {
                            a_hat: own(&t.a_hat),
                            b_hat: own(&t.b_hat),
                            point: t.point,
                            task_id: t.task_id,
                            level: t.level,
                        },
                    )
                })
                .collect();
            WorkerSchedule {
                worker: ws.worker,
                subtasks,
            }
        })
        .collect()
}

/// Counting semaphore bounding concurrent multiplies.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(permits: usize) -> Self {
        Self {
            free: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn with<T>(&self, f: impl FnOnce() -> T) -> T {
        let mut free = self
            .cv
            .wait_while(self.free.lock().unwrap_or_else(|e| e.into_inner()), |n| {
                *n == 0
            })
            .unwrap_or_else(|e| e.into_inner());
        *free -= 1;
        drop(free);
        struct Release<'a>(&'a Gate);
        impl Drop for Release<'_> {
            fn drop(&mut self) {
                *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
                self.0.cv.notify_one();
            }
        }
        let _release = Release(self);
        f()
    }
}

fn panic_message(e: &(dyn std::any::Any + Send)) -> String {
    e.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| e.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

/// Runs one job end to end.
pub fn run_job(config: &RunConfig, a: &Matrix, b: &Matrix) -> Result<RunReport> {
    run_job_with_reference(config, a, b, None)
}

/// As [`run_job`], checking against `reference` when given instead of recomputing it.
pub fn run_job_with_reference(
    config: &RunConfig,
    a: &Matrix,
    b: &Matrix,
    reference: Option<&Matrix>,
) -> Result<RunReport> {
    config.validate()?;
    let spec = &config.scheme;
    let wall = Instant::now();

    let t = Instant::now();
    let schedules = encode_schedules(spec, a, b)?;
    let encode = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let schedules = distribute(schedules);
    let distribute_t = t.elapsed().as_secs_f64();

    let stragglers = straggler_set(config.seed, config.straggler_prob, spec.workers);
    let cancel = AtomicBool::new(false);
    let gate = Gate::new(std::thread::available_parallelism().map_or(1, |n| n.get()));
    let opts = DecodeOptions::default();
    let mut state = AggregationState::new(spec);
    let mut log = Vec::new();
    let mut aggregate = 0.0;
    let mut streaming =
        (config.decode_mode == DecodeMode::Streaming).then(|| StreamingDecoder::new(spec, opts));
    let mut complete_at: Option<Instant> = None;
    let mut per_worker = vec![0.0; spec.workers];
    let start = Instant::now();

    let outcome: Result<()> = std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<Msg>();
        let mut handles = Vec::with_capacity(schedules.len());
        for ws in &schedules {
            let tx = tx.clone();
            let cancel = &cancel;
            let gate = &gate;
            let straggler = stragglers.contains(&ws.worker);
            let inject = config.inject_panic == Some(ws.worker);
            handles.push(scope.spawn(move || -> f64 {
                let t0 = thread_cpu_time();
                for (slot, task) in &ws.subtasks {
                    if cancel.load(Ordering::Relaxed) {
                        break;
                    }
                    if inject {
                        panic!("injected failure");
                    }
                    let product = gate.with(|| {
                        let mut product =
                            matmul(&task.a_hat, &task.b_hat).expect("conforming encoded operands");
                        if straggler {
                            product = matmul(&task.a_hat, &task.b_hat)
                                .expect("conforming encoded operands");
                        }
                        product
                    });
                    let clock = thread_cpu_time() - t0;
                    if tx
                        .send(Msg {
                            slot: *slot,
                            worker: ws.worker,
                            product,
                            clock,
                        })
                        .is_err()
                    {
                        break;
                    }
                }
                thread_cpu_time() - t0
            }));
        }
        drop(tx);

        for msg in rx {
            let t = Instant::now();
            log.push(CompletionRecord {
                time_s: start.elapsed().as_secs_f64(),
                worker: msg.worker,
                level: msg.slot.level,
                slot: msg.slot.slot,
                worker_clock_s: msg.clock,
            });
            let obs = state.observe(msg.slot.level, msg.slot.point_index, msg.product);
            aggregate += t.elapsed().as_secs_f64();
            if let Observation::Accepted {
                level_complete,
                complete,
            } = obs
            {
                if level_complete {
                    if let Some(dec) = streaming.as_mut() {
                        dec.advance(spec, &state)?;
                    }
                }
                if complete && complete_at.is_none() {
                    complete_at = Some(Instant::now());
                    if config.cancel_on_complete {
                        cancel.store(true, Ordering::Relaxed);
                    }
                }
            }
        }

        let mut panicked = None;
        for (w, h) in handles.into_iter().enumerate() {
            match h.join() {
                Ok(cpu) => per_worker[w] = cpu,
                Err(e) => {
                    panicked.get_or_insert(Error::WorkerPanic {
                        worker: w,
                        message: panic_message(e.as_ref()),
                    });
                }
            }
        }
        match panicked {
            Some(e) if !state.is_complete() => Err(e),
            _ => Ok(()),
        }
    });
    outcome?;
    if !state.is_complete() {
        return Err(Error::Unrecoverable(
            "workers finished before the profile was met".into(),
        ));
    }

    let t_dec = Instant::now();
    let out = match streaming {
        Some(dec) => dec.finish(spec, &state)?,
        None if config.decode_mode == DecodeMode::Parallel => decode_parallel(spec, &state, opts)?,
        None => decode_serial(spec, &state, opts)?,
    };
    let mut product = out.product;
    for (r, m) in residual_products(spec, a, b)? {
        product.add_block_at(r.x_range.start, r.y_range.start, &m);
    }
    let end = Instant::now();
    let decode_after_complete = end
        .duration_since(complete_at.unwrap_or(t_dec))
        .as_secs_f64();

    let rel_error = match (reference, config.verify) {
        (Some(c), Verify::Reference | Verify::Fast) => Some(product.rel_error(c)?),
        (None, Verify::Reference) => Some(product.rel_error(&matmul_reference(a, b)?)?),
        (None, Verify::Fast) => Some(product.rel_error(&matmul(a, b)?)?),
        (_, Verify::Skip) => None,
    };

    let (compute, level_completion) = completion_clock(&spec.thresholds(), &log);
    Ok(RunReport {
        label: config.label.clone(),
        phase_times: PhaseTimes {
            encode,
            distribute: distribute_t,
            compute,
            compute_per_worker: per_worker,
            aggregate,
            decode: out.timing.work,
            decode_after_complete,
            total_wall: wall.elapsed().as_secs_f64(),
        },
        received: log.len(),
        completion_log: log,
        product: Some(product),
        rel_error,
        stragglers,
        level_completion,
        warnings: out.warnings,
    })
}

/// Mean phase times of one configuration over its repeats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepRow {
    pub label: String,
    pub repeats: usize,
    pub encode: f64,
    pub distribute: f64,
    pub compute: f64,
    pub compute_stddev: f64,
    pub aggregate: f64,
    pub decode: f64,
    pub max_rel_error: Option<f64>,
}

impl SweepRow {
    pub fn from_reports(label: &str, reports: &[RunReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let mean = |f: &dyn Fn(&RunReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let compute = mean(&|r| r.phase_times.compute);
        let var = if reports.len() > 1 {
            reports
                .iter()
                .map(|r| (r.phase_times.compute - compute).powi(2))
                .sum::<f64>()
                / (n - 1.0)
        } else {
            0.0
        };
        Self {
            label: label.to_string(),
            repeats: reports.len(),
            encode: mean(&|r| r.phase_times.encode),
            distribute: mean(&|r| r.phase_times.distribute),
            compute,
            compute_stddev: var.sqrt(),
            aggregate: mean(&|r| r.phase_times.aggregate),
            decode: mean(&|r| r.phase_times.decode),
            max_rel_error: reports
                .iter()
                .filter_map(|r| r.rel_error)
                .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e)))),
        }
    }
}

/// Random operands for `spec`, drawn from `seed`.
pub fn random_operands(spec: &HierarchySpec, seed: u64) -> (Matrix, Matrix) {
    let d = spec.dims();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (
        Matrix::random(d.nx, d.nz, &mut rng),
        Matrix::random(d.nz, d.ny, &mut rng),
    )
}

/// Runs every configuration `repeats` times with seeds `seed, seed+1, …`.
/// Operands are drawn once per configuration from its seed; repeats differ in
/// their straggler sets. The reference product is computed once per configuration.
pub fn sweep(configs: &[RunConfig], repeats: usize) -> Result<Vec<(SweepRow, Vec<RunReport>)>> {
    if repeats == 0 {
        return invalid("repeats must be at least 1");
    }
    let mut out = Vec::with_capacity(configs.len());
    for cfg in configs {
        let (a, b) = random_operands(&cfg.scheme, cfg.seed);
        let reference = match cfg.verify {
            Verify::Reference => Some(matmul_reference(&a, &b)?),
            Verify::Fast => Some(matmul(&a, &b)?),
            Verify::Skip => None,
        };
        let mut reports = Vec::with_capacity(repeats);
        for i in 0..repeats {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(i as u64);
            let mut r = run_job_with_reference(&c, &a, &b, reference.as_ref())?;
            r.product = None;
            reports.push(r);
        }
        out.push((SweepRow::from_reports(&cfg.label, &reports), reports));
    }
    Ok(out)
}
