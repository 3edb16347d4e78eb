use hcmm::cuboid::{Axis, Dims, GridSpec};
use hcmm::hierarchy::RecoveryProfile;
use hcmm::stoch_sim::{
    evaluate, finishing_bicc, finishing_bicc_along, finishing_hhcc, finishing_mlcc,
    finishing_mlcc_along, finishing_nonh, finishing_rmlcc, fit_shifted_exponential, monte_carlo,
    monte_carlo_samples, sample_draws, sample_shifted_exponential, trial_draws, McSummary, Scheme,
    SimRow, SlotPlan, TimingModel, WorkerDraw,
};
use proptest::prelude::*;

fn model() -> TimingModel {
    TimingModel::new(1e-6, 1e-7, 1e-8, 1e-9)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1e-300)
}

#[test]
fn zero_mu_draws_are_the_shift() {
    let draws = sample_draws(&TimingModel::new(0.0, 2.0, 0.0, 3.0), 50, 7);
    assert!(draws.iter().all(|d| d.t_comp == 2.0 && d.t_comm == 3.0));
}

#[test]
fn sample_mean_and_minimum() {
    let x = sample_shifted_exponential(2.0, 1.0, 200_000, 3);
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    assert!((mean - 3.0).abs() < 0.02, "{mean}");
    assert!(x.iter().all(|&v| v >= 1.0));
}

#[test]
fn ks_statistic_against_the_cdf() {
    let n = 20_000;
    let mut x = sample_shifted_exponential(0.5, 0.25, n, 11);
    x.sort_by(f64::total_cmp);
    let cdf = |v: f64| 1.0 - (-(v - 0.25) / 0.5).exp();
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n as f64)
                .abs()
                .max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value.
    assert!(d < 1.63 / (n as f64).sqrt(), "D = {d}");
}

#[test]
fn single_worker_total() {
    let d = Dims::new(6, 5, 4);
    let w = WorkerDraw {
        t_comp: 2.0,
        t_comm: 0.5,
    };
    let t = finishing_nonh(&[w], &d, &GridSpec::unit(), 1).finishing_time;
    assert_eq!(t, (30.0 + 20.0) * 0.5 + 120.0 * 2.0 + 24.0 * 0.5);
}

#[test]
fn identical_workers_finish_together() {
    let d = Dims::cube(64);
    let g = GridSpec::new(2, 1, 2);
    let w = WorkerDraw {
        t_comp: 1.5,
        t_comm: 0.25,
    };
    let draws = vec![w; 10];
    let one = finishing_nonh(&draws, &d, &g, 1).finishing_time;
    for r in 2..=10 {
        assert_eq!(finishing_nonh(&draws, &d, &g, r).finishing_time, one);
    }
}

#[test]
fn bicc_with_one_slot_is_nonh() {
    let d = Dims::cube(100);
    let g = GridSpec::new(4, 1, 1);
    for seed in 0..20 {
        let draws = sample_draws(&model(), 12, seed);
        let a = finishing_bicc(&draws, &d, &g, 1, 4).finishing_time;
        assert_eq!(a, finishing_nonh(&draws, &d, &g, 4).finishing_time);
    }
}

#[test]
fn bicc_never_loses_to_nonh() {
    let d = Dims::cube(100);
    let g = GridSpec::new(4, 1, 1);
    for seed in 0..200 {
        let draws = sample_draws(&model(), 12, seed);
        let nonh = finishing_nonh(&draws, &d, &g, 4).finishing_time;
        for p in [2, 4, 8] {
            let b = finishing_bicc(&draws, &d, &g, p, p * 4).finishing_time;
            assert!(b <= nonh * (1.0 + 1e-12), "seed {seed} P {p}: {b} > {nonh}");
        }
    }
}

#[test]
fn single_level_mlcc_and_rmlcc_are_nonh() {
    let d = Dims::cube(100);
    let g = GridSpec::new(4, 1, 1);
    for seed in 0..20 {
        let draws = sample_draws(&model(), 12, seed);
        let nonh = finishing_nonh(&draws, &d, &g, 4).finishing_time;
        let m = finishing_mlcc(&draws, &d, &g, &RecoveryProfile::new(vec![4])).finishing_time;
        assert!(close(m, nonh));
        let r = finishing_rmlcc(&draws, &d, &g, 4, &vec![vec![0]; 12]).finishing_time;
        assert!(close(r, nonh));
    }
}

#[test]
fn uniform_profile_without_comm_is_nonh() {
    let d = Dims::cube(120);
    let g = GridSpec::new(6, 1, 1);
    for seed in 0..20 {
        let draws = sample_draws(&model().without_comm(), 20, seed);
        let nonh = finishing_nonh(&draws, &d, &g, 6).finishing_time;
        let m = finishing_mlcc(&draws, &d, &g, &RecoveryProfile::uniform(6, 4)).finishing_time;
        assert!((m - nonh).abs() <= 1e-9 * nonh, "{m} vs {nonh}");
    }
}

#[test]
fn level_completions_and_completing_workers() {
    let d = Dims::cube(64);
    let g = GridSpec::new(4, 1, 1);
    let draws = sample_draws(&model(), 10, 5);
    let t = finishing_mlcc(&draws, &d, &g, &RecoveryProfile::new(vec![8, 4, 3, 1]));
    assert_eq!(t.per_level_completion.len(), 4);
    let max = t.per_level_completion.iter().copied().fold(0.0, f64::max);
    assert_eq!(t.finishing_time, max);
    assert!(!t.completing_workers.is_empty());
    assert!(t.completing_workers.len() <= 10);
}

#[test]
fn hhcc_boundaries() {
    let d = Dims::cube(96);
    let g = GridSpec::new(1, 1, 4);
    let prof = RecoveryProfile::new(vec![8, 4, 3, 1]);
    for seed in 0..20 {
        let draws = sample_draws(&model(), 12, seed);
        let h = finishing_hhcc(
            &draws,
            &d,
            &g,
            &[4],
            &RecoveryProfile::new(vec![16]),
            Axis::Z,
        )
        .finishing_time;
        assert_eq!(
            h,
            finishing_bicc_along(&draws, &d, &g, 4, 16, Axis::Z).finishing_time
        );
        let h = finishing_hhcc(&draws, &d, &g, &[1, 1, 1, 1], &prof, Axis::Y).finishing_time;
        assert_eq!(
            h,
            finishing_mlcc_along(&draws, &d, &g, &prof, Axis::Y).finishing_time
        );
    }
}

#[test]
fn rmlcc_order_changes_the_outcome() {
    let d = Dims::cube(64);
    let g = GridSpec::new(4, 1, 1);
    let draws = sample_draws(&model(), 10, 2);
    let fixed = vec![vec![0, 1, 2, 3]; 10];
    let rev = vec![vec![3, 2, 1, 0]; 10];
    let a = finishing_rmlcc(&draws, &d, &g, 2, &fixed);
    let b = finishing_rmlcc(&draws, &d, &g, 2, &rev);
    // Reversing every order mirrors the level completion times.
    let mut mirrored = b.per_level_completion.clone();
    mirrored.reverse();
    for (x, y) in a.per_level_completion.iter().zip(&mirrored) {
        assert!(close(*x, *y));
    }
}

#[test]
fn monte_carlo_is_deterministic() {
    let d = Dims::cube(1000);
    let g = GridSpec::new(42, 1, 1);
    let s = Scheme::Rmlcc {
        r: 42,
        levels: 4,
        axis: None,
    };
    let a = monte_carlo(&s, &d, &g, 300, &model(), 200, 9).unwrap();
    let b = monte_carlo(&s, &d, &g, 300, &model(), 200, 9).unwrap();
    assert_eq!(a, b);
    let c = monte_carlo(&s, &d, &g, 300, &model(), 200, 10).unwrap();
    assert_ne!(a.mean, c.mean);
}

#[test]
fn monte_carlo_trial_counts() {
    let d = Dims::cube(50);
    let g = GridSpec::new(2, 1, 1);
    let s = Scheme::Nonh { r: 2 };
    let one = monte_carlo(&s, &d, &g, 4, &model(), 1, 0).unwrap();
    assert_eq!(one.trials, 1);
    assert_eq!(one.stddev, 0.0);
    assert_eq!(one.mean, one.p99);
    assert!(monte_carlo(&s, &d, &g, 4, &model(), 0, 0).is_err());
    assert!(monte_carlo(&s, &d, &g, 4, &TimingModel::new(-1.0, 0.0, 0.0, 0.0), 5, 0).is_err());
}

#[test]
fn samples_follow_trial_streams() {
    let d = Dims::cube(50);
    let g = GridSpec::new(2, 1, 1);
    let samples = monte_carlo_samples(&Scheme::Nonh { r: 3 }, &d, &g, 6, &model(), 5, 4).unwrap();
    for (t, &x) in samples.iter().enumerate() {
        let draws = trial_draws(&model(), 6, 4, t as u64);
        assert_eq!(x, finishing_nonh(&draws, &d, &g, 3).finishing_time);
    }
}

#[test]
fn standard_error_shrinks_with_trials() {
    let d = Dims::cube(100);
    let g = GridSpec::new(4, 1, 1);
    let s = Scheme::Nonh { r: 4 };
    let small = monte_carlo(&s, &d, &g, 12, &model(), 2_000, 1).unwrap();
    let big = monte_carlo(&s, &d, &g, 12, &model(), 8_000, 1).unwrap();
    let ratio = small.std_error() / big.std_error();
    assert!((ratio - 2.0).abs() < 0.3, "{ratio}");
}

#[test]
fn summary_quantiles() {
    let s = McSummary::from_samples(&(1..=100).map(f64::from).collect::<Vec<_>>(), 0);
    assert_eq!((s.p50, s.p95, s.p99), (50.0, 95.0, 99.0));
    assert_eq!(s.mean, 50.5);
}

#[test]
fn fit_recovers_parameters() {
    let x = sample_shifted_exponential(2.0, 1.0, 100_000, 8);
    let f = fit_shifted_exponential(&x).unwrap();
    assert!(!f.degenerate);
    assert!(
        (f.mu - 2.0).abs() < 0.03 && (f.alpha - 1.0).abs() < 1e-3,
        "{f:?}"
    );
    let g =
        fit_shifted_exponential(&sample_shifted_exponential(f.mu, f.alpha, 100_000, 9)).unwrap();
    assert!((g.mu - f.mu).abs() < 0.05);
}

#[test]
fn fit_degenerate_and_invalid() {
    let f = fit_shifted_exponential(&[1.0, 1.0, 1.0]).unwrap();
    assert!(f.degenerate);
    assert_eq!((f.mu, f.alpha), (0.0, 1.0));
    assert!(fit_shifted_exponential(&[1.0]).is_err());
    assert!(fit_shifted_exponential(&[1.0, f64::NAN]).is_err());
}

#[test]
fn sim_row_csv_columns() {
    let scheme = Scheme::Mlcc {
        profile: RecoveryProfile::new(vec![3, 2, 1]),
        axis: None,
    };
    let s = McSummary::from_samples(&[1.0, 2.0], 5);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(SimRow::new(&scheme, 8, 2, &s)).unwrap();
    let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scheme,L,P,N,R,profile,mean,stddev,p50,p95,p99,trials,seed"
    );
    assert!(lines.next().unwrap().starts_with("mlcc,3,3,8,2,3 2 1,1.5,"));
}

#[test]
fn scheme_json_tags() {
    let s: Scheme = serde_json::from_str(r#"{"scheme":"bicc","p":4,"r":16}"#).unwrap();
    assert_eq!(
        s,
        Scheme::Bicc {
            p: 4,
            r: 16,
            axis: Axis::Z
        }
    );
    assert_eq!(s.shape(), (1, 4));
}

#[test]
fn plan_rejects_unreachable_thresholds() {
    let d = Dims::cube(10);
    let g = GridSpec::unit();
    assert!(SlotPlan::nonh(&d, &g, 3, 4).is_err());
    assert!(SlotPlan::bicc(&d, &g, 3, 2, 7, Axis::Z).is_err());
}

proptest! {
    #[test]
    fn finishing_time_is_monotone_in_threshold(seed: u64, n in 2usize..30) {
        let d = Dims::cube(60);
        let g = GridSpec::new(2, 1, 1);
        let draws = sample_draws(&model(), n, seed);
        let plan = SlotPlan::nonh(&d, &g, n, 1).unwrap();
        let mut last = 0.0;
        for r in 1..=n {
            let mut p = plan.clone();
            p.thresholds = vec![r];
            let t = evaluate(&p, &draws, None).finishing_time;
            prop_assert!(t >= last);
            last = t;
        }
    }
}

#[test]
fn hierarchical_means_order() {
    let d = Dims::cube(1000);
    let g = GridSpec::new(4, 1, 1);
    let m = TimingModel::new(1e-6, 1e-7, 1e-8, 1e-9);
    let mean = |s: Scheme| monte_carlo(&s, &d, &g, 20, &m, 4_000, 3).unwrap().mean;
    let nonh = mean(Scheme::Nonh { r: 4 });
    let bicc = mean(Scheme::Bicc {
        p: 8,
        r: 32,
        axis: Axis::Z,
    });
    let hhcc = mean(Scheme::Hhcc {
        per_level: vec![4, 4],
        profile: RecoveryProfile::new(vec![24, 8]),
        axis: None,
    });
    let mlcc = mean(Scheme::Mlcc {
        profile: RecoveryProfile::new(vec![10, 7, 5, 4, 3, 2, 1, 0]),
        axis: None,
    });
    assert!(bicc < hhcc && hhcc < mlcc && mlcc < nonh);
}
