use beamform::channel::generate_channels;
use beamform::meta::solve_mlbf;
use beamform::wmmse::solve_wmmse;
use beamform::MlbfConfig;
use beamform_bench::experiment::run_experiment_with_threads;
use beamform_bench::summary::mean_stderr;
use beamform_bench::{run_experiment, summarize, Algo, ExperimentSpec, ResultRow};

fn tiny_mlbf() -> MlbfConfig {
    MlbfConfig {
        outer_steps: 10,
        update_interval: 5,
        inner_u: 2,
        inner_w: 2,
        inner_v: 2,
        hidden: 6,
        ..MlbfConfig::default()
    }
}

fn spec(algos: Vec<Algo>) -> ExperimentSpec {
    ExperimentSpec {
        snr_db_list: vec![0.0, 20.0],
        n_channels: 3,
        n_restarts: 2,
        algos,
        seed: 5,
        antennas: 3,
        users: 2,
        mlbf: tiny_mlbf(),
        record_timing: false,
        ..ExperimentSpec::desk()
    }
}

#[test]
fn one_wmmse_solve_gives_one_row_per_iteration() {
    let s = ExperimentSpec {
        snr_db_list: vec![10.0],
        n_channels: 1,
        n_restarts: 1,
        algos: vec![Algo::Wmmse],
        ..spec(vec![])
    };
    let out = run_experiment(&s).unwrap();
    let cfg = s.system(10.0).unwrap();
    let h = &generate_channels(&cfg, 1, s.seed).realizations[0];
    let (_, traj) = solve_wmmse(h, &s.initial_beamformer(&cfg, 0, 0), &cfg, &s.wmmse).unwrap();
    assert_eq!(out.rows.len(), traj.iters_used);
    assert_eq!(out.solves, 1);
    let iters: Vec<usize> = out.rows.iter().map(|r| r.iter).collect();
    assert_eq!(iters, (1..=traj.iters_used).collect::<Vec<_>>());
    for (r, w) in out.rows.iter().zip(&traj.wsr) {
        assert_eq!(r.wsr.to_bits(), w.to_bits());
    }
}

#[test]
fn both_algorithms_start_from_the_same_beamformer() {
    let s = spec(vec![Algo::Wmmse, Algo::Mlbf]);
    let out = run_experiment(&s).unwrap();
    for (k, snr) in s.snr_db_list.iter().enumerate() {
        let cfg = s.system(*snr).unwrap();
        let channels = generate_channels(&cfg, s.n_channels, s.seed).realizations;
        for (c, h) in channels.iter().enumerate() {
            for r in 0..s.n_restarts {
                let v0 = s.initial_beamformer(&cfg, c, r);
                assert!(v0.power() <= cfg.power());
                let rows = |algo| -> Vec<&ResultRow> {
                    out.rows
                        .iter()
                        .filter(|x| x.snr_db == *snr && x.channel_id == c && x.restart_id == r && x.algo == algo)
                        .collect()
                };
                // Each table entry reproduces a direct solve from that V0.
                let (_, tw) = solve_wmmse(h, &v0, &cfg, &s.wmmse).unwrap();
                let got: Vec<f64> = rows(Algo::Wmmse).iter().map(|x| x.wsr).collect();
                assert_eq!(got, tw.wsr);
                let (_, tm) = solve_mlbf(h, &v0, &cfg, &s.mlbf, s.learner_seed(k, c, r)).unwrap();
                let got: Vec<f64> = rows(Algo::Mlbf).iter().map(|x| x.wsr).collect();
                assert_eq!(got, tm.wsr);
            }
        }
    }
}

#[test]
fn channels_and_initial_directions_are_shared_across_snr() {
    let s = spec(vec![Algo::Wmmse]);
    let lo = s.system(0.0).unwrap();
    let hi = s.system(20.0).unwrap();
    assert_eq!(
        generate_channels(&lo, 3, s.seed).realizations,
        generate_channels(&hi, 3, s.seed).realizations
    );
    let a = s.initial_beamformer(&lo, 1, 1);
    let b = s.initial_beamformer(&hi, 1, 1);
    let ratio = (hi.power() / lo.power()).sqrt();
    for i in 0..2 {
        for j in 0..3 {
            assert!((a.get(i, j) * ratio - b.get(i, j)).norm() < 1e-9);
        }
    }
    assert_ne!(s.initial_beamformer(&lo, 1, 0), a);
}

#[test]
fn output_is_independent_of_scheduling() {
    let s = spec(vec![Algo::Wmmse, Algo::Mlbf]);
    let one = run_experiment_with_threads(&s, Some(1)).unwrap();
    let many = run_experiment_with_threads(&s, Some(4)).unwrap();
    let again = run_experiment_with_threads(&s, Some(3)).unwrap();
    assert_eq!(one, many);
    assert_eq!(one, again);
    assert!(one.rows.iter().all(|r| r.wall_ms == 0.0));
}

#[test]
fn rows_are_ordered_by_key() {
    let out = run_experiment(&spec(vec![Algo::Wmmse, Algo::Mlbf])).unwrap();
    let keys: Vec<_> = out
        .rows
        .iter()
        .map(|r| ((r.snr_db * 10.0) as i64, r.channel_id, r.restart_id, r.algo, r.iter))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn iterates_stay_feasible() {
    let s = spec(vec![Algo::Wmmse, Algo::Mlbf]);
    let out = run_experiment(&s).unwrap();
    for r in &out.rows {
        assert!(r.power <= s.system(r.snr_db).unwrap().power() + 1e-9);
        assert!(r.wsr >= 0.0);
    }
}

#[test]
fn solver_failures_are_counted_not_fatal() {
    // An absurd output scale overflows the learned updates.
    let s = ExperimentSpec {
        mlbf: MlbfConfig {
            out_scale: 1e308,
            ..tiny_mlbf()
        },
        ..spec(vec![Algo::Wmmse, Algo::Mlbf])
    };
    let out = run_experiment(&s).unwrap();
    assert_eq!(out.solves, 2 * 3 * 2 * 2);
    assert!(!out.failures.is_empty());
    assert!(out.failures.iter().all(|f| f.algo == Algo::Mlbf));
    assert!(out.rows.iter().all(|r| r.algo == Algo::Wmmse || r.wsr.is_finite()));
    let summary = summarize(&out.rows).unwrap();
    assert!(summary.iter().all(|r| r.mean_wsr.is_finite()));
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = [
        ExperimentSpec { n_channels: 0, ..spec(vec![Algo::Wmmse]) },
        ExperimentSpec { n_restarts: 0, ..spec(vec![Algo::Wmmse]) },
        ExperimentSpec { snr_db_list: vec![f64::NAN], ..spec(vec![Algo::Wmmse]) },
        ExperimentSpec { snr_db_list: vec![], ..spec(vec![Algo::Wmmse]) },
        ExperimentSpec { algos: vec![], ..spec(vec![]) },
        ExperimentSpec { alpha: Some(vec![1.0]), ..spec(vec![Algo::Wmmse]) },
    ];
    for s in bad {
        assert_eq!(run_experiment(&s).unwrap_err().exit_code(), 2, "{s:?}");
    }
}

#[test]
fn mean_of_synthetic_scores_matches_its_expectation() {
    // Scores uniform on [1, 3] across 1000 channels: the summary mean must
    // sit within three standard errors of 2.
    let mut rng = beamform::rng::GaussianStream::new(99, 0);
    let rows: Vec<ResultRow> = (0..1000)
        .map(|c| ResultRow {
            snr_db: 10.0,
            channel_id: c,
            restart_id: 0,
            algo: Algo::Wmmse,
            iter: 1,
            wsr: rng.uniform_in(1.0, 3.0),
            power: 1.0,
            wall_ms: 0.0,
        })
        .collect();
    let s = &summarize(&rows).unwrap()[0];
    assert_eq!(s.channels, 1000);
    assert!((s.mean_wsr - 2.0).abs() <= 3.0 * s.stderr_wsr, "{} ± {}", s.mean_wsr, s.stderr_wsr);
    // Standard error of U(1, 3) over 1000 draws is 1/√3000.
    assert!((s.stderr_wsr - (1.0f64 / 3000.0).sqrt()).abs() < 3e-3);
    let (m, _) = mean_stderr(&rows.iter().map(|r| r.wsr).collect::<Vec<_>>());
    assert_eq!(m, s.mean_wsr);
}
