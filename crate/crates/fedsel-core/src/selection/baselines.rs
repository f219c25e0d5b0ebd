//! Reference selection policies the proposed schemes are compared against.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::heterogeneity::coefficients_for_set;
use crate::linalg;
use crate::roster::{ClientId, SelectionDecision};

use super::{RoundContext, Selector};

/// Draws `count` distinct 0-based indices uniformly from 0..m, ascending.
pub fn sample_distinct(m: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    assert!(count <= m, "cannot draw {count} distinct clients from {m}");
    let mut pool: Vec<usize> = (0..m).collect();
    for t in 0..count {
        let j = rng.random_range(t..m);
        pool.swap(t, j);
    }
    let mut picked = pool[..count].to_vec();
    picked.sort_unstable();
    picked
}

fn uniform_decision(indices: &[usize]) -> Result<SelectionDecision> {
    SelectionDecision::with_uniform_share(indices.iter().map(|&i| ClientId(i + 1)).collect())
}

/// Uniformly random distinct clients with equal weights.
pub struct RandomSelector {
    k: usize,
}

impl RandomSelector {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        Ok(RandomSelector { k })
    }
}

impl Selector for RandomSelector {
    fn name(&self) -> &str {
        "random"
    }

    fn select(&mut self, ctx: &mut RoundContext<'_>) -> Result<SelectionDecision> {
        let m = ctx.roster.len();
        if self.k > m {
            return Err(Error::InvalidParameter(format!(
                "k = {} exceeds roster of {m}",
                self.k
            )));
        }
        uniform_decision(&sample_distinct(m, self.k, ctx.rng))
    }
}

/// Samples a candidate pool and keeps the k clients with the largest local
/// loss at the current model.
pub struct PowerOfChoiceSelector {
    k: usize,
}

impl PowerOfChoiceSelector {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        Ok(PowerOfChoiceSelector { k })
    }
}

impl Selector for PowerOfChoiceSelector {
    fn name(&self) -> &str {
        "power_of_choice"
    }

    fn select(&mut self, ctx: &mut RoundContext<'_>) -> Result<SelectionDecision> {
        let m = ctx.roster.len();
        if self.k > m {
            return Err(Error::InvalidParameter(format!(
                "k = {} exceeds roster of {m}",
                self.k
            )));
        }
        let pool = (2 * self.k).min(m);
        let candidates = sample_distinct(m, pool, ctx.rng);
        let mut scored: Vec<(f64, usize)> = candidates
            .into_iter()
            .map(|i| (ctx.prob.client_loss(ClientId(i + 1), ctx.model), i))
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut picked: Vec<usize> = scored[..self.k].iter().map(|&(_, i)| i).collect();
        picked.sort_unstable();
        uniform_decision(&picked)
    }
}

/// Greedy facility-location selection over pairwise gradient distances at
/// the current model, weighted by how many clients each pick represents.
pub struct DivFlSelector {
    k: usize,
}

impl DivFlSelector {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        Ok(DivFlSelector { k })
    }
}

/// Greedy minimization of sum_j min_{i in S} dist[i][j], k steps; ties go to
/// the smallest index.
pub fn facility_location_greedy(dist: &Array2<f64>, k: usize) -> Vec<usize> {
    let m = dist.nrows();
    let k = k.min(m);
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut colmin = vec![f64::INFINITY; m];
    let mut in_set = vec![false; m];
    for _ in 0..k {
        let mut best = usize::MAX;
        let mut best_cost = f64::INFINITY;
        for i in 0..m {
            if in_set[i] {
                continue;
            }
            let mut cost = 0.0;
            for j in 0..m {
                cost += colmin[j].min(dist[[i, j]]);
            }
            if cost < best_cost {
                best_cost = cost;
                best = i;
            }
        }
        in_set[best] = true;
        selected.push(best);
        for j in 0..m {
            colmin[j] = colmin[j].min(dist[[best, j]]);
        }
    }
    selected.sort_unstable();
    selected
}

impl Selector for DivFlSelector {
    fn name(&self) -> &str {
        "divfl"
    }

    fn select(&mut self, ctx: &mut RoundContext<'_>) -> Result<SelectionDecision> {
        let m = ctx.roster.len();
        if self.k > m {
            return Err(Error::InvalidParameter(format!(
                "k = {} exceeds roster of {m}",
                self.k
            )));
        }
        let grads: Vec<_> = (1..=m)
            .map(|i| ctx.prob.client_gradient(ClientId(i), ctx.model))
            .collect();
        let mut dist = Array2::<f64>::zeros((m, m));
        for i in 0..m {
            for j in i + 1..m {
                let v = linalg::l2_norm((&grads[i] - &grads[j]).view());
                dist[[i, j]] = v;
                dist[[j, i]] = v;
            }
        }
        let set: Vec<ClientId> = facility_location_greedy(&dist, self.k)
            .into_iter()
            .map(|i| ClientId(i + 1))
            .collect();
        coefficients_for_set(&dist, &set)
    }
}

/// Starts with the fastest clients and doubles the prefix whenever training
/// stalls, trading stragglers for coverage as the model converges.
pub struct FlanpSelector {
    size: Option<usize>,
    stall_rounds: usize,
    prev_loss: Option<f64>,
    patience: usize,
    stall_threshold: f64,
}

impl FlanpSelector {
    pub fn new() -> Self {
        FlanpSelector {
            size: None,
            stall_rounds: 0,
            prev_loss: None,
            patience: 3,
            stall_threshold: 0.01,
        }
    }

    /// Feeds one round's training loss into the state machine and returns
    /// the prefix size to use this round.
    fn observe(&mut self, m: usize, train_loss: f64) -> usize {
        let size = self.size.get_or_insert(2.min(m));
        if let Some(prev) = self.prev_loss {
            let improvement = (prev - train_loss) / prev.abs().max(f64::MIN_POSITIVE);
            if improvement < self.stall_threshold {
                self.stall_rounds += 1;
            } else {
                self.stall_rounds = 0;
            }
            if self.stall_rounds >= self.patience {
                *size = (*size * 2).min(m);
                self.stall_rounds = 0;
            }
        }
        self.prev_loss = Some(train_loss);
        *size
    }
}

impl Default for FlanpSelector {
    fn default() -> Self {
        Self::new()
    }
}

impl Selector for FlanpSelector {
    fn name(&self) -> &str {
        "flanp"
    }

    fn select(&mut self, ctx: &mut RoundContext<'_>) -> Result<SelectionDecision> {
        let size = self.observe(ctx.roster.len(), ctx.train_loss);
        let prefix: Vec<usize> = (0..size).collect();
        uniform_decision(&prefix)
    }
}
