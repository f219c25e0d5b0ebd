//! Client selection policies.
//!
//! A [`Selector`] is consulted once per round with the current model and
//! the latest heterogeneity estimate and returns which clients train this
//! round and with what aggregation weights. The two delay-aware policies
//! ([`SubmodularSelector`], [`SamplingSelector`]) trade the speed of the
//! fastest clients against the gradient bias of leaving slow clients out;
//! the baselines in [`baselines`] ignore one side of that trade or both.

pub mod baselines;
pub mod sampling;
pub mod submodular;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::datagen::QuadraticProblem;
use crate::error::Result;
use crate::heterogeneity::{coefficients_for_set, SamplingDistribution};
use crate::roster::{ClientId, ClientRoster, ModelVector, SelectionDecision};

pub use baselines::{DivFlSelector, FlanpSelector, PowerOfChoiceSelector, RandomSelector};
pub use sampling::{sample_multiset, SamplingMode, SamplingObjective};
pub use submodular::{MinimizerMode, SubmodularObjective};

/// Everything a selector may look at when choosing this round's clients.
///
/// `b_matrix` rows and columns follow roster order (delay ascending) and
/// already satisfy the heterogeneity assumptions; `train_loss` is the global
/// training loss at `model`, i.e. at the start of the round.
pub struct RoundContext<'a> {
    pub round: usize,
    pub model: &'a ModelVector,
    pub prob: &'a QuadraticProblem,
    pub roster: &'a ClientRoster,
    pub b_matrix: &'a Array2<f64>,
    pub train_loss: f64,
    pub rng: &'a mut ChaCha8Rng,
}

pub trait Selector {
    fn name(&self) -> &str;

    fn select(&mut self, ctx: &mut RoundContext<'_>) -> Result<SelectionDecision>;
}

/// Always returns the same set; used to study a fixed participation pattern.
pub struct FixedSetSelector {
    set: Vec<ClientId>,
}

impl FixedSetSelector {
    pub fn new(set: Vec<ClientId>) -> Result<Self> {
        if set.is_empty() {
            return Err(crate::error::Error::EmptySelection);
        }
        Ok(FixedSetSelector { set })
    }
}

impl Selector for FixedSetSelector {
    fn name(&self) -> &str {
        "fixed"
    }

    fn select(&mut self, ctx: &mut RoundContext<'_>) -> Result<SelectionDecision> {
        coefficients_for_set(ctx.b_matrix, &self.set)
    }
}

/// Picks the set minimizing expected round time inflated by set bias.
pub struct SubmodularSelector {
    mode: MinimizerMode,
    reuse_decision: bool,
    cached: Option<SelectionDecision>,
}

impl SubmodularSelector {
    pub fn new(mode: MinimizerMode, reuse_decision: bool) -> Self {
        SubmodularSelector {
            mode,
            reuse_decision,
            cached: None,
        }
    }
}

impl Selector for SubmodularSelector {
    fn name(&self) -> &str {
        "submodular"
    }

    fn select(&mut self, ctx: &mut RoundContext<'_>) -> Result<SelectionDecision> {
        if self.reuse_decision {
            if let Some(d) = &self.cached {
                return Ok(d.clone());
            }
        }
        let objective = SubmodularObjective::new(ctx.roster.mean_delays(), ctx.b_matrix)?;
        let solution = objective.minimize(self.mode)?;
        let set: Vec<ClientId> = solution.set.into_iter().map(|i| ClientId(i + 1)).collect();
        let decision = coefficients_for_set(ctx.b_matrix, &set)?;
        if self.reuse_decision {
            self.cached = Some(decision.clone());
        }
        Ok(decision)
    }
}

/// Optimizes a sampling distribution, then draws a K-multiset from it each
/// round with equal weights.
pub struct SamplingSelector {
    k: usize,
    mode: SamplingMode,
    reuse_distribution: bool,
    cached: Option<SamplingDistribution>,
}

impl SamplingSelector {
    pub fn new(k: usize, mode: SamplingMode, reuse_distribution: bool) -> Result<Self> {
        if k == 0 {
            return Err(crate::error::Error::InvalidParameter(
                "k must be at least 1".into(),
            ));
        }
        Ok(SamplingSelector {
            k,
            mode,
            reuse_distribution,
            cached: None,
        })
    }
}

impl Selector for SamplingSelector {
    fn name(&self) -> &str {
        "sampling"
    }

    fn select(&mut self, ctx: &mut RoundContext<'_>) -> Result<SelectionDecision> {
        let dist = match (&self.cached, self.reuse_distribution) {
            (Some(d), true) => d.clone(),
            _ => {
                let objective =
                    SamplingObjective::new(ctx.roster.mean_delays(), ctx.b_matrix, self.k, self.mode)?;
                let solution = objective.optimize(ctx.rng)?;
                let dist = SamplingDistribution::new(solution.p, self.k)?;
                if self.reuse_distribution {
                    self.cached = Some(dist.clone());
                }
                dist
            }
        };
        let picks = sample_multiset(dist.probabilities(), dist.k(), ctx.rng);
        SelectionDecision::with_uniform_share(picks.into_iter().map(|i| ClientId(i + 1)).collect())
    }
}
