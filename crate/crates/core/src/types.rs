//! Value types shared across the simulator.
//!
//! Every constructor validates its invariants, so an instance that exists is
//! an instance that is valid.

use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A flat vector of model coordinates (global or local model).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ModelParams {
    weights: Vec<f64>,
}

impl ModelParams {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(index) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFiniteWeight { index });
        }
        Ok(Self { weights })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }
}

impl TryFrom<Vec<f64>> for ModelParams {
    type Error = Error;

    fn try_from(weights: Vec<f64>) -> Result<Self> {
        Self::new(weights)
    }
}

impl From<ModelParams> for Vec<f64> {
    fn from(params: ModelParams) -> Self {
        params.weights
    }
}

/// 1-based `(onu, client)` pair. Ordering is by ONU first, then client; this
/// is the canonical order used for every accumulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClientId {
    pub onu: u32,
    pub client: u32,
}

impl ClientId {
    pub fn new(onu: u32, client: u32, topology: &Topology) -> Result<Self> {
        if onu == 0 || onu > topology.n_onus {
            return Err(Error::config(
                "onu_index",
                format!("{onu} outside [1, {}]", topology.n_onus),
            ));
        }
        if client == 0 || client > topology.clients_per_onu {
            return Err(Error::config(
                "client_index",
                format!("{client} outside [1, {}]", topology.clients_per_onu),
            ));
        }
        Ok(Self { onu, client })
    }

    /// Zero-based position in the flattened population, ONU-major.
    pub fn flat_index(&self, topology: &Topology) -> usize {
        (self.onu as usize - 1) * topology.clients_per_onu as usize + (self.client as usize - 1)
    }

    pub fn from_flat_index(index: usize, topology: &Topology) -> Self {
        let m = topology.clients_per_onu as usize;
        Self {
            onu: (index / m) as u32 + 1,
            client: (index % m) as u32 + 1,
        }
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "client({},{})", self.onu, self.client)
    }
}

/// A trained local model together with the number of samples it saw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: ClientId,
    pub params: ModelParams,
    pub sample_count: u64,
}

impl ClientUpdate {
    pub fn new(client_id: ClientId, params: ModelParams, sample_count: u64) -> Result<Self> {
        if sample_count == 0 {
            return Err(Error::ZeroSamples);
        }
        Ok(Self {
            client_id,
            params,
            sample_count,
        })
    }
}

/// Checks that an update can enter aggregation for a model of `expected_dim`.
pub fn validate_update(update: &ClientUpdate, expected_dim: usize) -> Result<()> {
    let dim = update.params.dim();
    if dim != expected_dim {
        return Err(Error::DimensionMismatch {
            expected: expected_dim,
            found: dim,
        });
    }
    if let Some(index) = update.params.as_slice().iter().position(|w| !w.is_finite()) {
        return Err(Error::NonFiniteWeight { index });
    }
    if update.sample_count == 0 {
        return Err(Error::ZeroSamples);
    }
    Ok(())
}

/// First-step aggregate produced at an ONU: the sample-weighted *sum* of its
/// clients' models, not their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnuAggregate {
    onu_index: u32,
    theta: ModelParams,
    k_total: u64,
    client_count: usize,
}

impl OnuAggregate {
    pub fn new(onu_index: u32, theta: ModelParams, k_total: u64, client_count: usize) -> Result<Self> {
        if client_count == 0 {
            return Err(Error::EmptyInput);
        }
        if k_total < client_count as u64 {
            return Err(Error::InvalidCounts(format!(
                "k_total {k_total} smaller than client_count {client_count}"
            )));
        }
        Ok(Self {
            onu_index,
            theta,
            k_total,
            client_count,
        })
    }

    pub fn onu_index(&self) -> u32 {
        self.onu_index
    }

    pub fn theta(&self) -> &ModelParams {
        &self.theta
    }

    pub fn k_total(&self) -> u64 {
        self.k_total
    }

    pub fn client_count(&self) -> usize {
        self.client_count
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub params: ModelParams,
    /// Number of completed rounds that produced this model.
    pub round: u32,
    /// Total samples of the clients aggregated into this model (0 for the
    /// initial model and for carried-over rounds).
    pub k_total: u64,
}

impl GlobalModel {
    pub fn initial(params: ModelParams) -> Self {
        Self {
            params,
            round: 0,
            k_total: 0,
        }
    }

    /// The same parameters advanced by one round without any contribution.
    pub fn carried_over(&self) -> Self {
        Self {
            params: self.params.clone(),
            round: self.round + 1,
            k_total: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct Topology {
    /// Number of ONUs attached to the OLT.
    pub n_onus: u32,
    /// Clients reachable through each ONU's base station.
    pub clients_per_onu: u32,
    /// OLT-ONU fiber length in km.
    pub distance_km: f64,
}

impl Default for Topology {
    fn default() -> Self {
        Self {
            n_onus: 16,
            clients_per_onu: 20,
            distance_km: 20.0,
        }
    }
}

impl Topology {
    pub fn population(&self) -> usize {
        self.n_onus as usize * self.clients_per_onu as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_onus == 0 {
            return Err(Error::config("topology.n_onus", "must be at least 1"));
        }
        if self.clients_per_onu == 0 {
            return Err(Error::config("topology.clients_per_onu", "must be at least 1"));
        }
        if !(self.distance_km.is_finite() && self.distance_km >= 0.0) {
            return Err(Error::config(
                "topology.distance_km",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Per-client breakdown of one round's synchronization time, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSample {
    pub t_download: f64,
    pub t_train: f64,
    pub t_wireless: f64,
    pub t_pon: f64,
    /// Time spent at the ONU before its aggregate is sent; always 0 in
    /// classical mode.
    pub t_agg: f64,
}

impl TimingSample {
    pub fn total(&self) -> f64 {
        self.t_download + self.t_train + self.t_wireless + self.t_pon + self.t_agg
    }
}
