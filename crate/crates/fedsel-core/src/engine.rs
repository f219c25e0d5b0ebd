//! Federated training loop with partial participation.
//!
//! Each round the selector picks clients, every distinct pick runs E local
//! gradient steps from the current model, and the server aggregates the
//! results with the decision's weights. Wall-clock time advances by the
//! slowest sampled delay among the participants; losses are evaluated on the
//! aggregated model after every round. Selectors see a pairwise
//! dissimilarity estimate that is either computed once from full local
//! datasets or re-estimated from fresh minibatches by the round's
//! participants.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::{CurvatureConstants, QuadraticProblem};
use crate::delays::DelayModel;
use crate::error::{Error, Result};
use crate::heterogeneity::{
    compute_b_matrix, rescale_to_assumption, update_b_rows, DEFAULT_ASSUMPTION_MARGIN,
};
use crate::roster::{round_delay, ClientId, ClientRoster, ModelVector, RoundRecord};
use crate::selection::{RoundContext, Selector};

const JITTER_STREAM: u64 = 1;
const SELECTOR_STREAM: u64 = 2;
const ESTIMATION_STREAM: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Server step size, capped at 1/L.
#[derive(Clone, Copy, Debug, Default)]
pub enum StepSize {
    /// Exactly 1/L from the problem's curvature.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetMetric {
    TrainLoss,
    TestMetric,
}

/// Stop once the chosen metric is at or below `value`.
#[derive(Clone, Copy, Debug)]
pub struct Target {
    pub metric: TargetMetric,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub eta: StepSize,
    pub local_steps: usize,
    pub max_rounds: usize,
    pub target: Option<Target>,
    pub seed: u64,
    /// Minibatch size for live covariance estimation; `None` or any value
    /// covering the full local dataset uses exact covariances computed once.
    pub covariance_batch: Option<usize>,
    pub assumption_margin: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            eta: StepSize::Auto,
            local_steps: 1,
            max_rounds: 200,
            target: None,
            seed: 0,
            covariance_batch: None,
            assumption_margin: DEFAULT_ASSUMPTION_MARGIN,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub records: Vec<RoundRecord>,
    /// Wall-clock seconds of the first round at or below the target; 0 when
    /// the initial model already meets it, `None` when never reached.
    pub time_to_target: Option<f64>,
    pub final_model: ModelVector,
}

/// Rounds sufficient to reach suboptimality `epsilon` from `delta0` under a
/// gradient-bias bound `b`: ceil(L / (mu (1 - b)) * ln(delta0 / epsilon)).
pub fn theoretical_rounds(
    curv: &CurvatureConstants,
    b: f64,
    delta0: f64,
    epsilon: f64,
) -> Result<usize> {
    if !(curv.mu > 0.0 && curv.lipschitz >= curv.mu) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < mu <= L, got mu = {}, L = {}",
            curv.mu, curv.lipschitz
        )));
    }
    if !((0.0..1.0).contains(&b) && delta0 > 0.0 && epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need b in [0,1), delta0 > 0, epsilon > 0; got b = {b}, delta0 = {delta0}, epsilon = {epsilon}"
        )));
    }
    let ratio = delta0 / epsilon;
    if ratio <= 1.0 {
        return Ok(0);
    }
    let rounds = curv.lipschitz / (curv.mu * (1.0 - b)) * ratio.ln();
    Ok(rounds.ceil() as usize)
}

/// Dissimilarity state the server maintains across rounds.
struct HetTracker {
    covs: Vec<Array2<f64>>,
    b_raw: Array2<f64>,
    b_used: Array2<f64>,
    /// Live minibatch size; `None` once estimates are exact and final.
    batch: Option<usize>,
    margin: f64,
}

impl HetTracker {
    fn new(
        prob: &QuadraticProblem,
        batch: Option<usize>,
        margin: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let m = prob.num_clients();
        let live = match batch {
            Some(0) => {
                return Err(Error::InvalidParameter(
                    "covariance batch must be at least 1".into(),
                ))
            }
            Some(b) if b < prob.points_per_client() => Some(b),
            _ => None,
        };
        let covs: Vec<Array2<f64>> = match live {
            Some(b) => (1..=m)
                .map(|i| prob.subsample_covariance(ClientId(i), b, rng))
                .collect(),
            None => (1..=m)
                .map(|i| prob.covariance(ClientId(i)).clone())
                .collect(),
        };
        let global = mean_covariance(&covs);
        let b_raw = compute_b_matrix(&covs, &global)?;
        let (b_used, _) = rescale_to_assumption(&b_raw, margin)?;
        Ok(HetTracker {
            covs,
            b_raw,
            b_used,
            batch: live,
            margin,
        })
    }

    /// Participants re-estimate their covariances from a fresh minibatch;
    /// their rows of the dissimilarity matrix are recomputed against the
    /// updated global mean.
    fn refresh(
        &mut self,
        prob: &QuadraticProblem,
        participants: &[ClientId],
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let Some(batch) = self.batch else {
            return Ok(());
        };
        for id in participants {
            self.covs[id.index0()] = prob.subsample_covariance(*id, batch, rng);
        }
        let global = mean_covariance(&self.covs);
        let rows: Vec<usize> = participants.iter().map(|id| id.index0()).collect();
        update_b_rows(&mut self.b_raw, &self.covs, &global, &rows)?;
        let (b_used, _) = rescale_to_assumption(&self.b_raw, self.margin)?;
        self.b_used = b_used;
        Ok(())
    }
}

fn mean_covariance(covs: &[Array2<f64>]) -> Array2<f64> {
    let mut acc = covs[0].clone();
    for c in &covs[1..] {
        acc += c;
    }
    acc / covs.len() as f64
}

fn target_met(target: &Option<Target>, train_loss: f64, test_metric: f64) -> bool {
    match target {
        None => false,
        Some(t) => {
            let observed = match t.metric {
                TargetMetric::TrainLoss => train_loss,
                TargetMetric::TestMetric => test_metric,
            };
            observed <= t.value
        }
    }
}

/// Runs federated training and returns the per-round history.
pub fn run(
    prob: &QuadraticProblem,
    roster: &ClientRoster,
    delays: &DelayModel,
    selector: &mut dyn Selector,
    cfg: &EngineConfig,
) -> Result<RunResult> {
    let m = prob.num_clients();
    if roster.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "roster has {} clients, problem has {m}",
            roster.len()
        )));
    }
    if cfg.local_steps == 0 {
        return Err(Error::InvalidParameter("local_steps must be >= 1".into()));
    }
    if cfg.max_rounds == 0 {
        return Err(Error::InvalidParameter("max_rounds must be >= 1".into()));
    }
    let curv = prob.curvature()?;
    let eta_cap = 1.0 / curv.lipschitz;
    let eta = match cfg.eta {
        StepSize::Auto => eta_cap,
        StepSize::Fixed(e) => {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::InvalidParameter(format!("step size {e}")));
            }
            if e > eta_cap * (1.0 + 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "step size {e} exceeds 1/L = {eta_cap:.6e}"
                )));
            }
            e
        }
    };

    let mut jitter_rng = stream_rng(cfg.seed, JITTER_STREAM);
    let mut selector_rng = stream_rng(cfg.seed, SELECTOR_STREAM);
    let mut estimation_rng = stream_rng(cfg.seed, ESTIMATION_STREAM);
    let mut het = HetTracker::new(prob, cfg.covariance_batch, cfg.assumption_margin, &mut estimation_rng)?;

    let mut w: ModelVector = Array1::zeros(prob.dim());
    let mut records: Vec<RoundRecord> = Vec::with_capacity(cfg.max_rounds + 1);
    let train0 = prob.global_loss(&w);
    let test0 = prob.normalized_test_loss(&w);
    records.push(RoundRecord {
        round: 0,
        round_delay_s: 0.0,
        cumulative_time_s: 0.0,
        train_loss: train0,
        test_metric: test0,
        selected: Vec::new(),
    });
    if target_met(&cfg.target, train0, test0) {
        return Ok(RunResult {
            records,
            time_to_target: Some(0.0),
            final_model: w,
        });
    }

    let mut time_to_target = None;
    let mut cumulative = 0.0;
    for round in 1..=cfg.max_rounds {
        let decision = {
            let mut ctx = RoundContext {
                round,
                model: &w,
                prob,
                roster,
                b_matrix: &het.b_used,
                train_loss: records.last().unwrap().train_loss,
                rng: &mut selector_rng,
            };
            selector.select(&mut ctx)?
        };
        let distinct = decision.distinct();
        if let Some(id) = distinct.iter().find(|id| id.0 > m) {
            return Err(Error::UnknownClient(id.0, m));
        }

        let mut w_next: ModelVector = Array1::zeros(prob.dim());
        for id in &distinct {
            let mut wi = w.clone();
            for _ in 0..cfg.local_steps {
                let g = prob.client_gradient(*id, &wi);
                wi.scaled_add(-eta, &g);
            }
            w_next.scaled_add(decision.coefficient(*id), &wi);
        }

        let mut sampled = BTreeMap::new();
        for id in &distinct {
            sampled.insert(*id, delays.sample(*id, &mut jitter_rng));
        }
        let delay = round_delay(roster, decision.selected(), &sampled)?;
        cumulative += delay;
        w = w_next;

        let train = prob.global_loss(&w);
        let test = prob.normalized_test_loss(&w);
        if !(train.is_finite() && test.is_finite()) {
            return Err(Error::Divergence {
                round,
                detail: format!("train loss {train}, test metric {test}"),
            });
        }
        records.push(RoundRecord {
            round,
            round_delay_s: delay,
            cumulative_time_s: cumulative,
            train_loss: train,
            test_metric: test,
            selected: decision.selected().to_vec(),
        });

        het.refresh(prob, &distinct, &mut estimation_rng)?;

        if target_met(&cfg.target, train, test) {
            time_to_target = Some(cumulative);
            break;
        }
    }

    Ok(RunResult {
        records,
        time_to_target,
        final_model: w,
    })
}
