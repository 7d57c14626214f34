//! Round loop: select, broadcast, train, upload, filter, aggregate, evaluate.

use std::fmt;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate_two_step, cps_aggregate_one_step};
use crate::error::{Error, Result};
use crate::ponsim::{
    sample_latencies, simulate_upstream_classical, simulate_upstream_sfl, NetworkConfig,
    UploadOutcome,
};
use crate::streams::{self, Purpose};
use crate::training::{
    evaluate, local_train, model_dim, synth_partition, HyperParams, Partition, PartitionConfig,
};
use crate::types::{ClientId, ClientUpdate, GlobalModel, ModelParams, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Every client update crosses the PON; FedAvg at the CPS.
    Classical,
    /// Weighted sums at the ONUs, then the CPS divides by the total sample
    /// count.
    Sfl,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Classical => "classical",
            Mode::Sfl => "sfl",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Mode::Classical),
            "sfl" => Ok(Mode::Sfl),
            other => Err(Error::config("mode", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Uniform sample without replacement over the whole population.
    Uniform,
    /// One uniformly chosen client per ONU, the rest uniform over the
    /// remaining population. Falls back to `uniform` when N < n_onus.
    CoverOnus,
}

/// Data-generation settings; the client count and seed of the resulting
/// [`PartitionConfig`] come from the topology and the experiment seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSettings {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub skew: f64,
    pub class_separation: f64,
    pub test_samples: usize,
}

impl Default for PartitionSettings {
    fn default() -> Self {
        Self {
            n_classes: 10,
            feature_dim: 32,
            k_min: 20,
            k_max: 200,
            skew: 0.8,
            class_separation: 0.5,
            test_samples: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: Topology,
    pub network: NetworkConfig,
    pub partition: PartitionSettings,
    pub hyper: HyperParams,
    pub mode: Mode,
    pub selection: SelectionPolicy,
    /// Clients selected per round (N).
    pub n_selected_per_round: usize,
    pub n_rounds: u32,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            topology: Topology::default(),
            network: NetworkConfig::default(),
            partition: PartitionSettings::default(),
            hyper: HyperParams::default(),
            mode: Mode::Sfl,
            selection: SelectionPolicy::CoverOnus,
            n_selected_per_round: 48,
            n_rounds: 100,
            seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.network.validate()?;
        self.hyper.validate()?;
        self.partition_config().validate()?;
        if self.n_rounds == 0 {
            return Err(Error::config("n_rounds", "must be at least 1"));
        }
        if self.n_selected_per_round == 0 {
            return Err(Error::config("n_selected_per_round", "must be at least 1"));
        }
        let population = self.topology.population();
        if self.n_selected_per_round > population {
            return Err(Error::TooManyRequested {
                requested: self.n_selected_per_round,
                available: population,
            });
        }
        Ok(())
    }

    pub fn partition_config(&self) -> PartitionConfig {
        let p = &self.partition;
        PartitionConfig {
            n_clients: self.topology.population(),
            n_classes: p.n_classes,
            feature_dim: p.feature_dim,
            k_min: p.k_min,
            k_max: p.k_max,
            skew: p.skew,
            class_separation: p.class_separation,
            test_samples: p.test_samples,
            seed: self.seed,
        }
    }

    pub fn model_dim(&self) -> usize {
        model_dim(self.partition.feature_dim, self.partition.n_classes)
    }
}

/// Per-round telemetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based index of the round that produced this record.
    pub round: u32,
    pub mode: Mode,
    pub n_selected: usize,
    pub n_involved: usize,
    pub upstream_bits: f64,
    /// `1 - upstream_bits / (n_selected * model_bits)`.
    pub saving_fraction: f64,
    pub accuracy: f64,
    pub t_total_min_s: f64,
    pub t_total_mean_s: f64,
    pub t_total_max_s: f64,
    /// Simulated duration of the round: the last upstream completion, capped
    /// at the synchronization threshold.
    pub round_time_s: f64,
    /// Samples behind the aggregated model (K).
    pub k_total: u64,
}

fn check_request(n: usize, topology: &Topology) -> Result<()> {
    if n == 0 {
        return Err(Error::config("n_selected_per_round", "must be at least 1"));
    }
    let available = topology.population();
    if n > available {
        return Err(Error::TooManyRequested {
            requested: n,
            available,
        });
    }
    Ok(())
}

/// Uniform sample of `n` distinct clients, returned in canonical order.
pub fn select_clients<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    topology: &Topology,
) -> Result<Vec<ClientId>> {
    check_request(n, topology)?;
    let mut picked: Vec<ClientId> = rand::seq::index::sample(rng, topology.population(), n)
        .into_iter()
        .map(|i| ClientId::from_flat_index(i, topology))
        .collect();
    picked.sort();
    Ok(picked)
}

/// Like [`select_clients`], but when `n >= n_onus` every ONU gets at least
/// one selected client. Each client's marginal selection probability is still
/// `n / population`.
pub fn select_clients_covering<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    topology: &Topology,
) -> Result<Vec<ClientId>> {
    check_request(n, topology)?;
    let n_onus = topology.n_onus as usize;
    if n < n_onus {
        return select_clients(rng, n, topology);
    }
    let m = topology.clients_per_onu;
    let mut picked: Vec<ClientId> = (1..=topology.n_onus)
        .map(|onu| ClientId {
            onu,
            client: rng.random_range(1..=m),
        })
        .collect();
    let rest: Vec<ClientId> = (0..topology.population())
        .map(|i| ClientId::from_flat_index(i, topology))
        .filter(|id| !picked.contains(id))
        .collect();
    picked.extend(rest.choose_multiple(rng, n - n_onus).copied());
    picked.sort();
    Ok(picked)
}

/// What a round produced beyond its record; kept for consistency checks.
#[derive(Clone, Debug)]
pub struct RoundDetail {
    pub selected: Vec<ClientId>,
    pub outcome: UploadOutcome,
    /// Updates that entered aggregation, canonically ordered.
    pub involved_updates: Vec<ClientUpdate>,
}

/// Mutable state of one experiment.
pub struct Experiment {
    cfg: ExperimentConfig,
    data: Arc<Partition>,
    global: GlobalModel,
    last: Option<RoundDetail>,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let data = Arc::new(synth_partition(&cfg.partition_config())?);
        Self::with_partition(cfg, data)
    }

    /// Uses pre-generated data, so several experiments (e.g. both modes of a
    /// comparison) can share one partition.
    pub fn with_partition(cfg: ExperimentConfig, data: Arc<Partition>) -> Result<Self> {
        cfg.validate()?;
        if data.clients.len() != cfg.topology.population() {
            return Err(Error::InvalidCounts(format!(
                "partition has {} clients, topology needs {}",
                data.clients.len(),
                cfg.topology.population()
            )));
        }
        let global = GlobalModel::initial(ModelParams::zeros(cfg.model_dim())?);
        Ok(Self {
            cfg,
            data,
            global,
            last: None,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn global(&self) -> &GlobalModel {
        &self.global
    }

    pub fn partition(&self) -> &Partition {
        &self.data
    }

    pub fn last_round(&self) -> Option<&RoundDetail> {
        self.last.as_ref()
    }

    fn select(&self, round: u32) -> Result<Vec<ClientId>> {
        let mut rng = streams::stream(self.cfg.seed, Purpose::Selection, round, 0);
        let n = self.cfg.n_selected_per_round;
        match self.cfg.selection {
            SelectionPolicy::Uniform => select_clients(&mut rng, n, &self.cfg.topology),
            SelectionPolicy::CoverOnus => select_clients_covering(&mut rng, n, &self.cfg.topology),
        }
    }

    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let cfg = &self.cfg;
        let topo = &cfg.topology;
        let round = self.global.round;
        let selected = self.select(round)?;

        let updates: Vec<ClientUpdate> = selected
            .par_iter()
            .map(|id| {
                let idx = id.flat_index(topo);
                let mut rng = streams::stream(cfg.seed, Purpose::Batching, round, idx as u32 + 1);
                local_train(&self.global, *id, &self.data.clients[idx], &cfg.hyper, &mut rng)
            })
            .collect::<Result<_>>()?;

        let with_k: Vec<(ClientId, u64)> = updates.iter().map(|u| (u.client_id, u.sample_count)).collect();
        let k_range = (cfg.partition.k_min as u64, cfg.partition.k_max as u64);
        let mut rng = streams::stream(cfg.seed, Purpose::Wireless, round, 0);
        let latencies = sample_latencies(&with_k, k_range, &cfg.network, &mut rng);

        let outcome = match cfg.mode {
            Mode::Classical => simulate_upstream_classical(&latencies, &cfg.network, topo)?,
            Mode::Sfl => simulate_upstream_sfl(&latencies, &cfg.network, topo)?,
        };

        let involved: Vec<ClientUpdate> = updates
            .into_iter()
            .filter(|u| outcome.involved.binary_search(&u.client_id).is_ok())
            .collect();

        let next = if involved.is_empty() {
            self.global.carried_over()
        } else {
            match cfg.mode {
                Mode::Classical => cps_aggregate_one_step(&involved, round)?,
                Mode::Sfl => aggregate_two_step(&involved, round)?,
            }
        };
        let accuracy = evaluate(&next, &self.data.test)?;

        let totals: Vec<f64> = outcome.clients.iter().map(|c| c.timing.total()).collect();
        let n_selected = selected.len();
        let record = RoundRecord {
            round: next.round,
            mode: cfg.mode,
            n_selected,
            n_involved: involved.len(),
            upstream_bits: outcome.upstream_bits,
            saving_fraction: 1.0
                - outcome.upstream_bits / (n_selected as f64 * cfg.network.model_bits),
            accuracy,
            t_total_min_s: totals.iter().copied().fold(f64::INFINITY, f64::min),
            t_total_mean_s: totals.iter().sum::<f64>() / totals.len() as f64,
            t_total_max_s: totals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            round_time_s: outcome.round_time(cfg.network.sync_threshold_s),
            k_total: next.k_total,
        };
        log::debug!(
            "round {} {}: involved {}/{} acc {:.4}",
            record.round,
            record.mode,
            record.n_involved,
            record.n_selected,
            record.accuracy
        );

        self.global = next;
        self.last = Some(RoundDetail {
            selected,
            outcome,
            involved_updates: involved,
        });
        Ok(record)
    }

    pub fn run(&mut self) -> Result<Vec<RoundRecord>> {
        (0..self.cfg.n_rounds).map(|_| self.run_round()).collect()
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RoundRecord>> {
    Experiment::new(cfg.clone())?.run()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    /// Mean over rounds of `1 - sfl_bits / classical_bits`.
    pub mean_saving: f64,
    /// Mean over rounds of `sfl_involved - classical_involved`.
    pub mean_involved_gap: f64,
    /// `sfl_final_accuracy - classical_final_accuracy`.
    pub final_accuracy_gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub classical: Vec<RoundRecord>,
    pub sfl: Vec<RoundRecord>,
    /// Per-round `1 - sfl_bits / classical_bits`.
    pub savings: Vec<f64>,
    pub summary: ComparisonSummary,
}

/// Runs both modes on the same data with the same seed, so selection,
/// latency draws and local batching coincide round by round.
pub fn compare_modes(cfg: &ExperimentConfig) -> Result<Comparison> {
    cfg.validate()?;
    let data = Arc::new(synth_partition(&cfg.partition_config())?);
    let run = |mode: Mode| -> Result<Vec<RoundRecord>> {
        let cfg = ExperimentConfig {
            mode,
            ..cfg.clone()
        };
        Experiment::with_partition(cfg, Arc::clone(&data))?.run()
    };
    let (classical, sfl) = rayon::join(|| run(Mode::Classical), || run(Mode::Sfl));
    let (classical, sfl) = (classical?, sfl?);

    let savings: Vec<f64> = classical
        .iter()
        .zip(&sfl)
        .map(|(c, s)| 1.0 - s.upstream_bits / c.upstream_bits)
        .collect();
    let rounds = savings.len() as f64;
    let mean_involved_gap = classical
        .iter()
        .zip(&sfl)
        .map(|(c, s)| s.n_involved as f64 - c.n_involved as f64)
        .sum::<f64>()
        / rounds;
    let final_accuracy_gap = match (classical.last(), sfl.last()) {
        (Some(c), Some(s)) => s.accuracy - c.accuracy,
        _ => 0.0,
    };
    let summary = ComparisonSummary {
        mean_saving: savings.iter().sum::<f64>() / rounds,
        mean_involved_gap,
        final_accuracy_gap,
    };
    Ok(Comparison {
        classical,
        sfl,
        savings,
        summary,
    })
}
