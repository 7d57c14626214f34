//! Timing model of one round over the PON: latency sampling, the shared
//! upstream slice, straggler filtering and upstream bit accounting.
//!
//! The slice reserved for the FL task is one serial server of rate
//! `slice_rate_bps`. Transmissions are granted first-come-first-served by
//! readiness time, ties broken by `(onu, client)`. A transmission occupies the
//! slice for `model_bits / slice_rate_bps`; fiber propagation is added to its
//! completion but does not hold the slice.

use std::collections::BTreeMap;

use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClientId, TimingSample, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum OnuWaitPolicy {
    /// The ONU waits for every selected client before aggregating.
    All,
    /// Clients arriving after `local_cutoff_s` are left out of the ONU
    /// aggregate.
    Cutoff,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Upstream slice reserved for the FL task, bit/s.
    pub slice_rate_bps: f64,
    /// Size of one model update on the wire, bits.
    pub model_bits: f64,
    /// Broadcast time of the global model to every client, s.
    pub t_download_s: f64,
    /// Local training time range `[fewest samples, most samples]`, s.
    pub t_train_range_s: (f64, f64),
    /// Wireless upload time range, s (drawn uniformly).
    pub t_wireless_range_s: (f64, f64),
    /// One-round synchronization threshold, s. `"inf"` disables it.
    #[serde(with = "crate::config::f64_or_inf")]
    #[schemars(schema_with = "crate::config::f64_or_inf_schema")]
    pub sync_threshold_s: f64,
    /// Aggregation time at the ONU, s.
    pub t_agg_s: f64,
    pub propagation_velocity_m_per_s: f64,
    pub onu_wait_policy: OnuWaitPolicy,
    /// Arrival deadline at the ONU under the `cutoff` policy, s.
    pub local_cutoff_s: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            slice_rate_bps: 100e6,
            model_bits: 26.416e6,
            t_download_s: 2.0,
            t_train_range_s: (3.0, 20.0),
            t_wireless_range_s: (1.0, 5.0),
            sync_threshold_s: 25.0,
            t_agg_s: 0.1,
            propagation_velocity_m_per_s: 2e8,
            onu_wait_policy: OnuWaitPolicy::Cutoff,
            local_cutoff_s: 20.0,
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, "must be positive and finite"))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, "must be non-negative and finite"))
    }
}

fn ordered_range(field: &str, (lo, hi): (f64, f64)) -> Result<()> {
    non_negative(field, lo)?;
    non_negative(field, hi)?;
    if lo > hi {
        return Err(Error::config(field, "range must be ordered (low <= high)"));
    }
    Ok(())
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        positive("network.slice_rate_bps", self.slice_rate_bps)?;
        positive("network.model_bits", self.model_bits)?;
        non_negative("network.t_download_s", self.t_download_s)?;
        ordered_range("network.t_train_range_s", self.t_train_range_s)?;
        ordered_range("network.t_wireless_range_s", self.t_wireless_range_s)?;
        if self.sync_threshold_s.is_nan() || self.sync_threshold_s <= 0.0 {
            return Err(Error::config("network.sync_threshold_s", "must be positive"));
        }
        non_negative("network.t_agg_s", self.t_agg_s)?;
        positive(
            "network.propagation_velocity_m_per_s",
            self.propagation_velocity_m_per_s,
        )?;
        non_negative("network.local_cutoff_s", self.local_cutoff_s)?;
        Ok(())
    }

    /// Time one update occupies the slice.
    pub fn transmission_time(&self) -> f64 {
        self.model_bits / self.slice_rate_bps
    }

    /// Local training time for a client holding `k` samples, mapped affinely
    /// from `[k_min, k_max]` onto `t_train_range_s`. A degenerate sample range
    /// maps to the midpoint.
    pub fn training_time(&self, k: u64, k_min: u64, k_max: u64) -> f64 {
        let (lo, hi) = self.t_train_range_s;
        if k_max <= k_min {
            return 0.5 * (lo + hi);
        }
        let frac = (k.clamp(k_min, k_max) - k_min) as f64 / (k_max - k_min) as f64;
        lo + (hi - lo) * frac
    }
}

/// One-way OLT-ONU fiber delay, s.
pub fn propagation_delay(topology: &Topology, cfg: &NetworkConfig) -> f64 {
    topology.distance_km * 1000.0 / cfg.propagation_velocity_m_per_s
}

/// Per-client latency draws for one round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClientLatency {
    pub id: ClientId,
    pub t_train: f64,
    pub t_wireless: f64,
}

/// Draws `(T_r, T_w)` for each selected client `(id, k)`. Clients are visited
/// in canonical order so the draws do not depend on input order.
pub fn sample_latencies<R: Rng + ?Sized>(
    selected: &[(ClientId, u64)],
    k_range: (u64, u64),
    cfg: &NetworkConfig,
    rng: &mut R,
) -> Vec<ClientLatency> {
    let mut sorted = selected.to_vec();
    sorted.sort_by_key(|(id, _)| *id);
    let (w_lo, w_hi) = cfg.t_wireless_range_s;
    sorted
        .into_iter()
        .map(|(id, k)| {
            let t_wireless = if w_hi > w_lo {
                rng.random_range(w_lo..=w_hi)
            } else {
                w_lo
            };
            ClientLatency {
                id,
                t_train: cfg.training_time(k, k_range.0, k_range.1),
                t_wireless,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sender {
    Client(ClientId),
    Onu(u32),
}

/// One use of the upstream slice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transmission {
    pub sender: Sender,
    pub ready_s: f64,
    pub start_s: f64,
    /// When the slice is released.
    pub end_s: f64,
    /// When the last bit reaches the OLT (`end_s` plus propagation).
    pub completion_s: f64,
}

struct SerialSlice {
    free_at: f64,
    hold: f64,
    propagation: f64,
    log: Vec<Transmission>,
}

impl SerialSlice {
    fn new(cfg: &NetworkConfig, topology: &Topology) -> Self {
        Self {
            free_at: 0.0,
            hold: cfg.transmission_time(),
            propagation: propagation_delay(topology, cfg),
            log: Vec::new(),
        }
    }

    /// Grants are issued in the order of the calls; callers sort by readiness.
    fn grant(&mut self, sender: Sender, ready_s: f64) -> f64 {
        let start_s = ready_s.max(self.free_at);
        let end_s = start_s + self.hold;
        self.free_at = end_s;
        let completion_s = end_s + self.propagation;
        self.log.push(Transmission {
            sender,
            ready_s,
            start_s,
            end_s,
            completion_s,
        });
        completion_s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientOutcome {
    pub id: ClientId,
    pub timing: TimingSample,
    /// Time the update reached the client's ONU, `T_d + T_r + T_w`.
    pub arrival_s: f64,
    /// Round time of this client. For a client left out at its ONU this is
    /// its arrival time.
    pub completion_s: f64,
    pub dropped_at_onu: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnuOutcome {
    pub onu: u32,
    pub retained: Vec<ClientId>,
    pub dropped: Vec<ClientId>,
    pub ready_s: f64,
    pub completion_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UploadOutcome {
    /// Canonically ordered.
    pub clients: Vec<ClientOutcome>,
    /// Canonically ordered subset of the selected clients.
    pub involved: Vec<ClientId>,
    pub upstream_bits: f64,
    /// Slice usage in grant order.
    pub transmissions: Vec<Transmission>,
    /// Empty in classical mode.
    pub onus: Vec<OnuOutcome>,
}

impl UploadOutcome {
    /// Time the CPS spends on the upload phase: the last completion, capped at
    /// the synchronization threshold.
    pub fn round_time(&self, threshold: f64) -> f64 {
        let last = self
            .transmissions
            .iter()
            .map(|t| t.completion_s)
            .fold(0.0, f64::max);
        last.min(threshold)
    }
}

fn sorted_by_id(latencies: &[ClientLatency]) -> Vec<ClientLatency> {
    let mut v = latencies.to_vec();
    v.sort_by_key(|l| l.id);
    v
}

/// Classical mode: every selected client sends its own update through the
/// slice; the CPS keeps those that complete within the threshold.
pub fn simulate_upstream_classical(
    latencies: &[ClientLatency],
    cfg: &NetworkConfig,
    topology: &Topology,
) -> Result<UploadOutcome> {
    if latencies.is_empty() {
        return Err(Error::EmptySelection);
    }
    let clients = sorted_by_id(latencies);
    let ready: Vec<f64> = clients
        .iter()
        .map(|l| cfg.t_download_s + l.t_train + l.t_wireless)
        .collect();

    let mut order: Vec<usize> = (0..clients.len()).collect();
    order.sort_by(|&a, &b| ready[a].total_cmp(&ready[b]).then(clients[a].id.cmp(&clients[b].id)));

    let mut slice = SerialSlice::new(cfg, topology);
    let mut completion = vec![0.0; clients.len()];
    for &i in &order {
        completion[i] = slice.grant(Sender::Client(clients[i].id), ready[i]);
    }

    let outcomes: Vec<ClientOutcome> = clients
        .iter()
        .enumerate()
        .map(|(i, l)| ClientOutcome {
            id: l.id,
            timing: TimingSample {
                t_download: cfg.t_download_s,
                t_train: l.t_train,
                t_wireless: l.t_wireless,
                t_pon: completion[i] - ready[i],
                t_agg: 0.0,
            },
            arrival_s: ready[i],
            completion_s: completion[i],
            dropped_at_onu: false,
        })
        .collect();

    let pairs: Vec<(ClientId, f64)> = outcomes.iter().map(|c| (c.id, c.completion_s)).collect();
    Ok(UploadOutcome {
        involved: filter_stragglers(&pairs, cfg.sync_threshold_s),
        upstream_bits: clients.len() as f64 * cfg.model_bits,
        transmissions: slice.log,
        clients: outcomes,
        onus: Vec::new(),
    })
}

/// Two-step mode: each ONU aggregates its retained clients and sends a single
/// update through the slice.
///
/// Under the `cutoff` policy with a finite threshold, clients arriving after
/// `local_cutoff_s` are left out. If that would leave an ONU with nothing, the
/// ONU keeps its earliest arrival instead, so every ONU hosting a selected
/// client transmits exactly once.
pub fn simulate_upstream_sfl(
    latencies: &[ClientLatency],
    cfg: &NetworkConfig,
    topology: &Topology,
) -> Result<UploadOutcome> {
    if latencies.is_empty() {
        return Err(Error::EmptySelection);
    }
    let clients = sorted_by_id(latencies);
    let arrival = |l: &ClientLatency| cfg.t_download_s + l.t_train + l.t_wireless;
    let apply_cutoff =
        cfg.onu_wait_policy == OnuWaitPolicy::Cutoff && cfg.sync_threshold_s.is_finite();

    let mut by_onu: BTreeMap<u32, Vec<&ClientLatency>> = BTreeMap::new();
    for l in &clients {
        by_onu.entry(l.id.onu).or_default().push(l);
    }

    let mut onus: Vec<OnuOutcome> = by_onu
        .into_iter()
        .map(|(onu, members)| {
            let (mut retained, mut dropped): (Vec<&ClientLatency>, Vec<&ClientLatency>) =
                if apply_cutoff {
                    members.iter().partition(|l| arrival(l) <= cfg.local_cutoff_s)
                } else {
                    (members.clone(), Vec::new())
                };
            if retained.is_empty() {
                let earliest = dropped
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| arrival(a).total_cmp(&arrival(b)).then(a.id.cmp(&b.id)))
                    .map(|(i, _)| i)
                    .expect("ONU group is non-empty");
                retained.push(dropped.remove(earliest));
            }
            let last = retained.iter().map(|l| arrival(l)).fold(f64::NEG_INFINITY, f64::max);
            OnuOutcome {
                onu,
                retained: retained.iter().map(|l| l.id).collect(),
                dropped: dropped.iter().map(|l| l.id).collect(),
                ready_s: last + cfg.t_agg_s,
                completion_s: 0.0,
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..onus.len()).collect();
    order.sort_by(|&a, &b| {
        onus[a]
            .ready_s
            .total_cmp(&onus[b].ready_s)
            .then(onus[a].onu.cmp(&onus[b].onu))
    });
    let mut slice = SerialSlice::new(cfg, topology);
    for &i in &order {
        onus[i].completion_s = slice.grant(Sender::Onu(onus[i].onu), onus[i].ready_s);
    }

    let onu_of: BTreeMap<u32, &OnuOutcome> = onus.iter().map(|o| (o.onu, o)).collect();
    let outcomes: Vec<ClientOutcome> = clients
        .iter()
        .map(|l| {
            let onu = onu_of[&l.id.onu];
            let a = arrival(l);
            let dropped = onu.dropped.contains(&l.id);
            let (t_agg, t_pon, completion_s) = if dropped {
                (0.0, 0.0, a)
            } else {
                (onu.ready_s - a, onu.completion_s - onu.ready_s, onu.completion_s)
            };
            ClientOutcome {
                id: l.id,
                timing: TimingSample {
                    t_download: cfg.t_download_s,
                    t_train: l.t_train,
                    t_wireless: l.t_wireless,
                    t_pon,
                    t_agg,
                },
                arrival_s: a,
                completion_s,
                dropped_at_onu: dropped,
            }
        })
        .collect();

    let mut involved: Vec<ClientId> = onus
        .iter()
        .filter(|o| o.completion_s <= cfg.sync_threshold_s)
        .flat_map(|o| o.retained.iter().copied())
        .collect();
    involved.sort();

    Ok(UploadOutcome {
        clients: outcomes,
        involved,
        upstream_bits: onus.len() as f64 * cfg.model_bits,
        transmissions: slice.log,
        onus,
    })
}

/// Fraction of upstream traffic saved by sending one aggregate per ONU
/// instead of one update per selected client.
pub fn round_bandwidth_saving(n_onus: usize, n_selected: usize, model_bits: f64) -> Result<f64> {
    if n_onus == 0 || n_selected < n_onus {
        return Err(Error::InvalidCounts(format!(
            "need n_selected >= n_onus >= 1, got n_onus={n_onus}, n_selected={n_selected}"
        )));
    }
    if !(model_bits.is_finite() && model_bits > 0.0) {
        return Err(Error::InvalidCounts("model_bits must be positive".into()));
    }
    let classical = n_selected as f64 * model_bits;
    let two_step = n_onus as f64 * model_bits;
    Ok(1.0 - two_step / classical)
}

/// Clients whose completion does not exceed `threshold`; stragglers are those
/// strictly later.
pub fn filter_stragglers(completions: &[(ClientId, f64)], threshold: f64) -> Vec<ClientId> {
    let mut involved: Vec<ClientId> = completions
        .iter()
        .filter(|(_, t)| *t <= threshold)
        .map(|(id, _)| *id)
        .collect();
    involved.sort();
    involved
}
