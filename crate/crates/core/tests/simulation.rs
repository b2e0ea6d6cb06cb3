use pvar_core::engine::{
    generate_query, risk_report, run_simulation, simulate_run, DayStatus, SimQuery, SimulationConfig,
    CODE_VERSION,
};
use pvar_core::experiment::{read_rows, simulate, write_rows, Axis, SensitivityRow, SweepRow};
use pvar_core::rng::seeded;

fn small() -> SimulationConfig {
    SimulationConfig {
        k_min: 30,
        horizon_days: 40,
        n_sim: 64,
        decoys: 99,
        utility_repetitions: 4,
        ..Default::default()
    }
}

#[test]
fn runs_are_independent_of_order() {
    let cfg = small();
    let all = run_simulation(&cfg).unwrap();
    let mut shuffled: Vec<u64> = (0..cfg.n_sim).rev().collect();
    shuffled.rotate_left(17);
    let permuted: Vec<_> = shuffled.iter().map(|&r| simulate_run(&cfg, r).unwrap()).collect();
    for t in &permuted {
        assert_eq!(t, &all[t.run as usize]);
    }
    let a = risk_report(&all).unwrap();
    let b = risk_report(&permuted).unwrap();
    assert_eq!(a, b);
}

#[test]
fn terminal_loss_within_composition_ceiling() {
    for eps in [0.1, 1.0, 3.0] {
        let cfg = SimulationConfig {
            epsilon: eps,
            queries_per_day: 3,
            ..small()
        };
        for t in run_simulation(&cfg).unwrap() {
            let released = t.status.iter().filter(|s| **s == DayStatus::Released).count() as f64;
            assert!(
                t.terminal().abs() <= eps * released + 1e-9,
                "{} > {eps} x {released}",
                t.terminal()
            );
        }
    }
}

#[test]
fn vanishing_epsilon_is_uninformative() {
    let cfg = SimulationConfig {
        epsilon: 1e-6,
        n_sim: 10_000,
        horizon_days: 30,
        ..small()
    };
    let r = risk_report(&run_simulation(&cfg).unwrap()).unwrap();
    assert!(r.p_var_95 < 0.05, "{}", r.p_var_95);
}

#[test]
fn independent_queries_pass_chi_square() {
    let mut rng = seeded(8);
    let m = 8u32;
    let mut table = vec![vec![0f64; m as usize]; m as usize];
    let mut prev: Option<SimQuery> = None;
    for t in 0..100_000 {
        let q = generate_query(t, prev, 0.0, m, &mut rng).unwrap();
        if let Some(p) = prev {
            table[p.metric as usize][q.metric as usize] += 1.0;
        }
        prev = Some(q);
    }
    let total: f64 = table.iter().flatten().sum();
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..m as usize)
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let mut chi2 = 0.0;
    for i in 0..m as usize {
        for j in 0..m as usize {
            let e = rows[i] * cols[j] / total;
            chi2 += (table[i][j] - e).powi(2) / e;
        }
    }
    // 49 degrees of freedom: the 0.99 quantile is about 74.9
    assert!(chi2 < 74.9, "{chi2}");
}

#[test]
fn correlated_queries_repeat_at_rate_rho() {
    let mut rng = seeded(9);
    let mut prev: Option<SimQuery> = None;
    let mut repeats = 0;
    let n = 100_000;
    for t in 0..n {
        let q = generate_query(t, prev, 0.99, 1_000_000, &mut rng).unwrap();
        if prev.is_some_and(|p| p.metric == q.metric) {
            repeats += 1;
        }
        prev = Some(q);
    }
    let rate = repeats as f64 / (n - 1) as f64;
    assert!((rate - 0.99).abs() < 0.01, "{rate}");
}

#[test]
fn report_is_an_audit_record() {
    let cfg = SimulationConfig { seed: 42, ..small() };
    let a = simulate(&cfg).unwrap();
    let b = simulate(&cfg).unwrap();
    assert_eq!(a.trajectories, b.trajectories);
    assert_eq!(a.report, b.report);
    let embedded = a.report.config.as_ref().unwrap();
    assert_eq!(embedded.seed, 42);
    assert_eq!(embedded.k_max, Some(300));
    assert_eq!(a.report.code_version, CODE_VERSION);
    assert!(a.report.utility.is_some());
}

#[test]
fn experiment_csvs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = vec![SweepRow {
        k_min: 50,
        epsilon: 0.3,
        pvar95: 0.61,
        pvar99: 0.9,
        cpvar95: 0.8,
        max: 1.7,
        spearman: 0.93,
        mae_pp: 4.2,
        user_error_rate: 0.05,
    }];
    let p = dir.path().join("s.csv");
    write_rows(&p, &sweep).unwrap();
    assert_eq!(read_rows::<SweepRow>(&p).unwrap(), sweep);
    let sens = vec![
        SensitivityRow {
            axis: Axis::KnownFraction,
            value: 0.1,
            pvar95: 0.6,
            delta_pct: 0.0,
        },
        SensitivityRow {
            axis: Axis::HorizonDays,
            value: 365.0,
            pvar95: 1.3,
            delta_pct: 116.7,
        },
    ];
    let p = dir.path().join("t.csv");
    write_rows(&p, &sens).unwrap();
    assert_eq!(read_rows::<SensitivityRow>(&p).unwrap(), sens);
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("axis,value,pvar95,delta_pct\nknown_fraction,0.1,"));
}
