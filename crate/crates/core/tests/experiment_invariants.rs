use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sflpon::aggregation::{cps_aggregate_one_step, relative_linf};
use sflpon::orchestrator::{
    select_clients, select_clients_covering, PartitionSettings, SelectionPolicy,
};
use sflpon::training::synth_partition;
use sflpon::{run_experiment, Experiment, ExperimentConfig, Mode, Topology};

fn cfg(mode: Mode) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        partition: PartitionSettings {
            feature_dim: 8,
            test_samples: 1000,
            ..PartitionSettings::default()
        },
        n_selected_per_round: 64,
        n_rounds: 6,
        seed: 17,
        ..ExperimentConfig::default()
    }
}

#[test]
fn stored_model_matches_one_step_oracle_every_round() {
    for mode in [Mode::Classical, Mode::Sfl] {
        let mut exp = Experiment::new(cfg(mode)).unwrap();
        for _ in 0..6 {
            let before = exp.global().clone();
            let rec = exp.run_round().unwrap();
            let detail = exp.last_round().unwrap();
            let updates = &detail.involved_updates;
            assert_eq!(rec.n_involved, updates.len());
            assert_eq!(rec.n_involved, detail.outcome.involved.len());
            assert_eq!(rec.k_total, updates.iter().map(|u| u.sample_count).sum::<u64>());
            if updates.is_empty() {
                assert_eq!(exp.global().params, before.params);
                continue;
            }
            let oracle = cps_aggregate_one_step(updates, before.round).unwrap();
            let err = relative_linf(exp.global().params.as_slice(), oracle.params.as_slice());
            assert!(err <= 1e-9, "{mode} round {}: {err}", rec.round);
            assert_eq!(exp.global().round, before.round + 1);
        }
    }
}

#[test]
fn infinite_threshold_makes_modes_agree() {
    let mut base = cfg(Mode::Classical);
    base.network.sync_threshold_s = f64::INFINITY;
    let data = Arc::new(synth_partition(&base.partition_config()).unwrap());
    let mut classical = Experiment::with_partition(base.clone(), Arc::clone(&data)).unwrap();
    let mut sfl = Experiment::with_partition(
        ExperimentConfig {
            mode: Mode::Sfl,
            ..base
        },
        data,
    )
    .unwrap();
    for _ in 0..6 {
        let a = classical.run_round().unwrap();
        let b = sfl.run_round().unwrap();
        assert_eq!(a.n_involved, 64);
        assert_eq!(b.n_involved, 64);
        let err = relative_linf(sfl.global().params.as_slice(), classical.global().params.as_slice());
        assert!(err <= 1e-9, "round {}: {err}", a.round);
        assert!((a.accuracy - b.accuracy).abs() <= 1e-9);
    }
}

#[test]
fn run_experiment_is_a_function_of_config() {
    let c = cfg(Mode::Sfl);
    assert_eq!(run_experiment(&c).unwrap(), run_experiment(&c).unwrap());
    let other = ExperimentConfig { seed: 18, ..c.clone() };
    assert_ne!(run_experiment(&c).unwrap(), run_experiment(&other).unwrap());
}

#[test]
fn thread_count_does_not_change_results() {
    let c = cfg(Mode::Classical);
    let serial = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_experiment(&c).unwrap());
    let parallel = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap()
        .install(|| run_experiment(&c).unwrap());
    assert_eq!(serial, parallel);
}

fn frequency_check(policy: SelectionPolicy) {
    let topo = Topology::default();
    let draws = 10_000;
    let n = 16;
    let mut counts = vec![0usize; topo.population()];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..draws {
        let picked = match policy {
            SelectionPolicy::Uniform => select_clients(&mut rng, n, &topo),
            SelectionPolicy::CoverOnus => select_clients_covering(&mut rng, n, &topo),
        }
        .unwrap();
        for id in picked {
            counts[id.flat_index(&topo)] += 1;
        }
    }
    let p = n as f64 / topo.population() as f64;
    let expected = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    // With 320 clients a handful land outside 3 sigma by chance (expected
    // 320 * 0.0027 = 0.86); more than 5 would be a defect. Nobody may leave
    // the 4.5 sigma band.
    let mut chi2 = 0.0;
    let mut outside = 0;
    for (i, &c) in counts.iter().enumerate() {
        let z = (c as f64 - expected).abs() / sigma;
        assert!(z <= 4.5, "{policy:?}: client {i} picked {c} times, expected {expected}");
        if z > 3.0 {
            outside += 1;
        }
        chi2 += (c as f64 - expected).powi(2) / expected;
    }
    assert!(outside <= 5, "{policy:?}: {outside} clients outside 3 sigma");
    // 319 degrees of freedom; 397 is roughly the 0.999 quantile.
    assert!(chi2 < 397.0, "{policy:?}: chi2 {chi2}");
}

#[test]
fn uniform_selection_frequencies() {
    frequency_check(SelectionPolicy::Uniform);
}

#[test]
fn covering_selection_frequencies() {
    frequency_check(SelectionPolicy::CoverOnus);
}
