//! Shared domain types: the delay-sorted client roster, selection decisions
//! with aggregation coefficients, and per-round records.

use std::collections::BTreeMap;

use ndarray::Array1;

use crate::error::{Error, Result};

/// Dense model parameter vector.
pub type ModelVector = Array1<f64>;

/// 1-based client index into a delay-sorted roster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClientId(pub usize);

impl ClientId {
    /// Zero-based position in roster-ordered storage.
    pub fn index0(self) -> usize {
        self.0 - 1
    }
}

impl std::fmt::Display for ClientId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Client registry sorted by non-decreasing mean delay.
///
/// All other components address clients by their position in this ordering;
/// the permutation back to the caller's original order is retained.
#[derive(Clone, Debug)]
pub struct ClientRoster {
    mean_delays: Vec<f64>,
    source_index: Vec<usize>,
}

impl ClientRoster {
    /// Builds a roster from per-client mean delays in seconds.
    ///
    /// Delays must be positive and finite. Ties keep the input order.
    pub fn from_delays(delays: &[f64]) -> Result<Self> {
        if delays.is_empty() {
            return Err(Error::InvalidParameter("roster needs at least one client".into()));
        }
        for (index, &value) in delays.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidDelay { index, value });
            }
        }
        let mut order: Vec<usize> = (0..delays.len()).collect();
        order.sort_by(|&i, &j| delays[i].partial_cmp(&delays[j]).unwrap());
        let mean_delays = order.iter().map(|&i| delays[i]).collect();
        Ok(ClientRoster {
            mean_delays,
            source_index: order,
        })
    }

    pub fn len(&self) -> usize {
        self.mean_delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_delays.is_empty()
    }

    /// Mean delay of a client, in roster order.
    pub fn mean_delay(&self, id: ClientId) -> f64 {
        self.mean_delays[id.index0()]
    }

    /// All mean delays, ascending.
    pub fn mean_delays(&self) -> &[f64] {
        &self.mean_delays
    }

    /// For each roster position, the zero-based index in the input order.
    pub fn source_indices(&self) -> &[usize] {
        &self.source_index
    }

    pub fn ids(&self) -> impl Iterator<Item = ClientId> {
        (1..=self.len()).map(ClientId)
    }

    pub fn contains(&self, id: ClientId) -> bool {
        id.0 >= 1 && id.0 <= self.len()
    }
}

/// Outcome of a selection strategy: a multiset of clients plus aggregation
/// coefficients summing to one over the distinct clients.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionDecision {
    selected: Vec<ClientId>,
    coefficients: BTreeMap<ClientId, f64>,
}

impl SelectionDecision {
    pub fn new(mut selected: Vec<ClientId>, coefficients: BTreeMap<ClientId, f64>) -> Result<Self> {
        if selected.is_empty() {
            return Err(Error::EmptySelection);
        }
        selected.sort();
        let mut distinct = selected.clone();
        distinct.dedup();
        if distinct.len() != coefficients.len()
            || distinct.iter().any(|id| !coefficients.contains_key(id))
        {
            return Err(Error::CoefficientMismatch(
                "coefficient keys must be exactly the distinct selected clients".into(),
            ));
        }
        let mut sum = 0.0;
        for (&id, &alpha) in &coefficients {
            if !alpha.is_finite() || alpha < 0.0 {
                return Err(Error::CoefficientMismatch(format!(
                    "coefficient for client {id} is {alpha}"
                )));
            }
            sum += alpha;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::CoefficientMismatch(format!(
                "coefficients sum to {sum}, expected 1"
            )));
        }
        Ok(SelectionDecision {
            selected,
            coefficients,
        })
    }

    /// Uniform coefficients 1/K over a multiset of K picks (summed per client).
    pub fn with_uniform_share(selected: Vec<ClientId>) -> Result<Self> {
        if selected.is_empty() {
            return Err(Error::EmptySelection);
        }
        let share = 1.0 / selected.len() as f64;
        let mut coefficients: BTreeMap<ClientId, f64> = BTreeMap::new();
        for &id in &selected {
            *coefficients.entry(id).or_insert(0.0) += share;
        }
        // Wash out accumulation error so the sum is exactly one.
        let sum: f64 = coefficients.values().sum();
        for v in coefficients.values_mut() {
            *v /= sum;
        }
        Self::new(selected, coefficients)
    }

    /// Selected clients as a sorted multiset.
    pub fn selected(&self) -> &[ClientId] {
        &self.selected
    }

    /// Distinct selected clients, ascending.
    pub fn distinct(&self) -> Vec<ClientId> {
        let mut d = self.selected.clone();
        d.dedup();
        d
    }

    pub fn coefficients(&self) -> &BTreeMap<ClientId, f64> {
        &self.coefficients
    }

    pub fn coefficient(&self, id: ClientId) -> f64 {
        self.coefficients.get(&id).copied().unwrap_or(0.0)
    }
}

/// One row of a run's history.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub round_delay_s: f64,
    pub cumulative_time_s: f64,
    pub train_loss: f64,
    pub test_metric: f64,
    pub selected: Vec<ClientId>,
}

/// Wall-clock duration of one round: the slowest sampled delay among the
/// distinct selected clients.
pub fn round_delay(
    roster: &ClientRoster,
    selected: &[ClientId],
    sampled: &BTreeMap<ClientId, f64>,
) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut max = 0.0_f64;
    let mut distinct: Vec<ClientId> = selected.to_vec();
    distinct.sort();
    distinct.dedup();
    for id in distinct {
        if !roster.contains(id) {
            return Err(Error::UnknownClient(id.0, roster.len()));
        }
        let value = *sampled.get(&id).ok_or(Error::MissingDelay(id.0))?;
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidDelay {
                index: id.index0(),
                value,
            });
        }
        max = max.max(value);
    }
    Ok(max)
}
