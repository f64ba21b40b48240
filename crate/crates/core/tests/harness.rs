use std::fs;

use tim::harness::*;
use tim::tasks::{Difficulty, SyntheticConfig};

fn small_config(solver: Solver) -> RunConfig {
    RunConfig {
        episodes: 24,
        seed: 5,
        ..RunConfig::new(
            solver,
            BankSource::Synthetic(SyntheticConfig::preset(Difficulty::Typical)),
        )
    }
}

#[test]
fn identical_configs_give_identical_reports() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut reports = Vec::new();
    for d in &dirs {
        let cfg = RunConfig {
            output: Some(d.path().to_path_buf()),
            bound_audit: true,
            fixed_point_test: true,
            ..small_config(Solver::Adm)
        };
        run_benchmark(&cfg).unwrap();
        reports.push(fs::read(d.path().join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn report_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        output: Some(dir.path().to_path_buf()),
        bound_audit: true,
        ..small_config(Solver::Adm)
    };
    let run = run_benchmark(&cfg).unwrap();
    assert_eq!(
        read_report(dir.path().join("report.json")).unwrap(),
        run.aggregate
    );
    let written: RunConfig =
        serde_json::from_str(&fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(written, cfg);
}

#[test]
fn artifacts_have_the_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        output: Some(dir.path().to_path_buf()),
        trace_episodes: 3,
        dump_posteriors: true,
        hyperparameters: tim::Hyperparameters::adm().with_iterations(40),
        ..small_config(Solver::Adm)
    };
    run_benchmark(&cfg).unwrap();
    let episodes = fs::read_to_string(dir.path().join("episodes.csv")).unwrap();
    assert_eq!(episodes.lines().count(), 25);
    let traces: Vec<_> = fs::read_dir(dir.path().join("traces")).unwrap().collect();
    assert_eq!(traces.len(), 3);
    let trace = fs::read_to_string(dir.path().join("traces/episode_00000.csv")).unwrap();
    assert_eq!(trace.lines().count(), 41);
    assert!(trace.starts_with("iteration,loss,accuracy,mi_alpha1,weight_displacement"));
    assert!(dir.path().join("timing.json").exists());

    let (post, truth) =
        read_posterior_dump(dir.path().join("posteriors/episode_00007.csv")).unwrap();
    assert_eq!(truth.len(), 75);
    assert_eq!(post.num_classes(), 5);
}

#[test]
fn solvers_never_see_query_labels() {
    // Accuracy is computed by the harness; a solver that read the labels
    // would match them exactly on every episode.
    let run = run_benchmark(&small_config(Solver::Gd)).unwrap();
    assert!(run.aggregate.episodes.iter().any(|e| e.accuracy < 1.0));
}

#[test]
fn episode_seeds_depend_only_on_run_seed_and_index() {
    let a = small_config(Solver::Adm);
    let b = RunConfig {
        episodes: 3,
        ..small_config(Solver::Gd)
    };
    for i in 0..3 {
        assert_eq!(a.episode_seed(i), b.episode_seed(i));
    }
    assert_ne!(a.episode_seed(0), a.episode_seed(1));
    let c = RunConfig {
        seed: 6,
        ..a.clone()
    };
    assert_ne!(a.episode_seed(0), c.episode_seed(0));
}

#[test]
fn aggregate_matches_its_episodes() {
    let run = run_benchmark(&RunConfig {
        bound_audit: true,
        hessian_check: true,
        hyperparameters: tim::Hyperparameters::adm().with_iterations(30),
        ..small_config(Solver::Adm)
    })
    .unwrap();
    let a = &run.aggregate;
    let acc: Vec<f64> = a.episodes.iter().map(|e| e.accuracy).collect();
    let (mean, ci) = mean_ci95(&acc);
    assert_eq!((a.mean_accuracy, a.ci95), (mean, ci));
    assert_eq!(a.episodes_run, 24);
    assert!(a.episodes.iter().enumerate().all(|(i, e)| e.index == i));
    assert!(a.hessian_pass_rate.is_some());
    assert!(a.bound_audit_pass_rate.is_some() || a.bound_audit_applicable == Some(0));
    assert_eq!(run.timing.episode_seconds.len(), 24);
}

#[test]
fn invalid_configs_are_rejected() {
    let zero = RunConfig {
        episodes: 0,
        ..small_config(Solver::Adm)
    };
    assert!(matches!(run_benchmark(&zero), Err(tim::Error::Config(_))));
    let gd_variant = RunConfig {
        variant: tim::adm::AblationVariant::CeOnly,
        ..small_config(Solver::Gd)
    };
    assert!(run_benchmark(&gd_variant).is_err());
    let missing = RunConfig {
        bank: BankSource::File("/nonexistent/bank.timb".into()),
        ..small_config(Solver::Adm)
    };
    assert!(matches!(run_benchmark(&missing), Err(tim::Error::Io(_))));
}

#[test]
fn episode_errors_name_the_episode() {
    let cfg = RunConfig {
        episode: tim::tasks::EpisodeSpec::standard(5, 150, 100),
        ..small_config(Solver::Adm)
    };
    match run_benchmark(&cfg) {
        Err(tim::Error::Episode { index: 0, source }) => {
            assert!(matches!(*source, tim::Error::InsufficientSamples { .. }))
        }
        other => panic!("unexpected {other:?}"),
    }
}
