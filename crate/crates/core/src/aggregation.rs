//! One-step FedAvg at the parameter server and the two-step variant where
//! each ONU first forms a sample-weighted sum of its clients' models.
//!
//! Inputs are sorted by `(onu_index, client_index)` before any accumulation,
//! so every result is bit-deterministic regardless of arrival order.
//! Accumulation is plain sequential `f64` summation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::types::{validate_update, ClientUpdate, GlobalModel, ModelParams, OnuAggregate};

fn canonical(updates: &[ClientUpdate]) -> Vec<&ClientUpdate> {
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    sorted
}

fn check_updates(updates: &[ClientUpdate]) -> Result<usize> {
    let first = updates.first().ok_or(Error::EmptyInput)?;
    let dim = first.params.dim();
    for u in updates {
        validate_update(u, dim)?;
    }
    Ok(dim)
}

/// ONU-side weighted addition: `theta[d] = sum_j k_j * w_j[d]`.
pub fn onu_aggregate(updates: &[ClientUpdate]) -> Result<OnuAggregate> {
    let dim = check_updates(updates)?;
    let onu = updates[0].client_id.onu;
    if let Some(other) = updates.iter().find(|u| u.client_id.onu != onu) {
        return Err(Error::MixedOnu {
            expected: onu,
            found: other.client_id.onu,
        });
    }

    let mut theta = vec![0.0; dim];
    let mut k_total = 0u64;
    for u in canonical(updates) {
        let k = u.sample_count as f64;
        for (acc, w) in theta.iter_mut().zip(u.params.as_slice()) {
            *acc += k * w;
        }
        k_total += u.sample_count;
    }
    OnuAggregate::new(onu, ModelParams::new(theta)?, k_total, updates.len())
}

/// Second step at the parameter server: `w[d] = sum_i theta_i[d] / K`.
pub fn cps_aggregate_two_step(aggs: &[OnuAggregate], round: u32) -> Result<GlobalModel> {
    let first = aggs.first().ok_or(Error::EmptyInput)?;
    let dim = first.theta().dim();
    if let Some(bad) = aggs.iter().find(|a| a.theta().dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.theta().dim(),
        });
    }

    let mut sorted: Vec<&OnuAggregate> = aggs.iter().collect();
    sorted.sort_by_key(|a| a.onu_index());

    let mut sum = vec![0.0; dim];
    let mut k_total = 0u64;
    for agg in sorted {
        for (acc, t) in sum.iter_mut().zip(agg.theta().as_slice()) {
            *acc += t;
        }
        k_total += agg.k_total();
    }
    let k = k_total as f64;
    for v in &mut sum {
        *v /= k;
    }
    Ok(GlobalModel {
        params: ModelParams::new(sum)?,
        round: round + 1,
        k_total,
    })
}

/// Classical FedAvg over individual client updates:
/// `w[d] = sum (k_j / K) * w_j[d]`.
pub fn cps_aggregate_one_step(updates: &[ClientUpdate], round: u32) -> Result<GlobalModel> {
    let dim = check_updates(updates)?;
    let k_total: u64 = updates.iter().map(|u| u.sample_count).sum();
    let k = k_total as f64;

    let mut out = vec![0.0; dim];
    for u in canonical(updates) {
        let weight = u.sample_count as f64 / k;
        for (acc, w) in out.iter_mut().zip(u.params.as_slice()) {
            *acc += weight * w;
        }
    }
    Ok(GlobalModel {
        params: ModelParams::new(out)?,
        round: round + 1,
        k_total,
    })
}

/// Groups updates by ONU, runs [`onu_aggregate`] on each group (ascending ONU
/// order) and returns the resulting aggregates.
pub fn group_by_onu(updates: &[ClientUpdate]) -> Result<Vec<OnuAggregate>> {
    let mut groups: BTreeMap<u32, Vec<ClientUpdate>> = BTreeMap::new();
    for u in updates {
        groups.entry(u.client_id.onu).or_default().push(u.clone());
    }
    groups.values().map(|g| onu_aggregate(g)).collect()
}

/// Full two-step pipeline: per-ONU weighted sums followed by the server step.
pub fn aggregate_two_step(updates: &[ClientUpdate], round: u32) -> Result<GlobalModel> {
    if updates.is_empty() {
        return Err(Error::EmptyInput);
    }
    cps_aggregate_two_step(&group_by_onu(updates)?, round)
}

/// Relative L-infinity distance `max|a-b| / max(max|b|, tiny)`.
pub fn relative_linf(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    diff / scale.max(f64::MIN_POSITIVE)
}
