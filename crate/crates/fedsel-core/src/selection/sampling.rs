//! Client-sampling distributions that minimize expected round time inflated
//! by sampling bias: g(p) = E[max delay of a K-multiset from p] / (1 - B_p).
//!
//! The objective is smooth on the simplex, so it is minimized by projected
//! gradient descent with an Armijo line search, restarted from several
//! points. Corner distributions are always feasible when the mean-of-squares
//! assumption holds, which anchors the restarts even when the uniform start
//! sits in the infeasible region where B_p >= 1.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::heterogeneity::{check_bounded_heterogeneity, expected_max_delay};

/// Whether the objective accounts for the real multiset size or uses the
/// cheaper single-draw surrogate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SamplingMode {
    #[default]
    ExactK,
    /// Optimize as if one client were drawn per round; the round still
    /// samples the configured K.
    KEqualsOne,
}

/// Expected-delay/bias objective over the probability simplex.
pub struct SamplingObjective {
    tau: Vec<f64>,
    b_sq: Array2<f64>,
    row_mean_sq: Array1<f64>,
    k_eff: usize,
}

/// Optimizer output over 0-based roster indices.
#[derive(Clone, Debug)]
pub struct SamplingSolution {
    pub p: Vec<f64>,
    pub value: f64,
    pub converged: bool,
}

const MAX_PGD_ITERS: usize = 2_000;
const NUM_DIRICHLET_RESTARTS: usize = 5;

impl SamplingObjective {
    /// `tau` ascending and positive; `b` must satisfy the row-mean-of-squares
    /// bound so that every corner of the simplex is feasible.
    pub fn new(tau: &[f64], b: &Array2<f64>, k: usize, mode: SamplingMode) -> Result<Self> {
        let m = tau.len();
        if m == 0 || k == 0 {
            return Err(Error::InvalidParameter(
                "need at least one client and k >= 1".into(),
            ));
        }
        if b.nrows() != m || b.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "{} delays but B is {}x{}",
                m,
                b.nrows(),
                b.ncols()
            )));
        }
        for (i, &t) in tau.iter().enumerate() {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidDelay { index: i, value: t });
            }
        }
        if tau.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParameter(
                "delays must be sorted ascending".into(),
            ));
        }
        let check = check_bounded_heterogeneity(b);
        if !check.sampling_ok {
            return Err(Error::AssumptionViolated(format!(
                "max row mean of B^2 is {:.6}, need < 1/2",
                check.max_row_mean_sq
            )));
        }
        let b_sq = b.mapv(|x| x * x);
        let row_mean_sq = b_sq.sum_axis(ndarray::Axis(1)) / m as f64;
        Ok(SamplingObjective {
            tau: tau.to_vec(),
            b_sq,
            row_mean_sq,
            k_eff: match mode {
                SamplingMode::ExactK => k,
                SamplingMode::KEqualsOne => 1,
            },
        })
    }

    fn bias_term(&self, p: &Array1<f64>) -> f64 {
        2.0 * (p.dot(&self.row_mean_sq) + p.dot(&self.b_sq.dot(p)) / self.k_eff as f64)
    }

    /// Objective value; infinite where the bias reaches or exceeds 1.
    pub fn value(&self, p: &[f64]) -> f64 {
        let pv = Array1::from_vec(p.to_vec());
        let denom = 1.0 - self.bias_term(&pv);
        if denom <= 1e-12 {
            return f64::INFINITY;
        }
        expected_max_delay(&self.tau, p, self.k_eff).unwrap() / denom
    }

    /// Analytic gradient of the value at a feasible point.
    pub fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let m = self.tau.len();
        let k = self.k_eff as f64;
        let pv = Array1::from_vec(p.to_vec());

        let mut prefix = vec![0.0_f64; m];
        let mut acc = 0.0;
        for i in 0..m {
            acc += p[i];
            prefix[i] = acc;
        }
        let numerator = expected_max_delay(&self.tau, p, self.k_eff).unwrap();
        // d/dp_l of the expected max delay via suffix sums over the Abel
        // form: N = tau_m P_m^K - sum_{i<m} (tau_{i+1}-tau_i) P_i^K.
        let top = k * prefix[m - 1].powi(self.k_eff as i32 - 1) * self.tau[m - 1];
        let mut grad_n = vec![0.0_f64; m];
        let mut suffix = 0.0;
        for l in (0..m).rev() {
            if l < m - 1 {
                suffix +=
                    (self.tau[l + 1] - self.tau[l]) * k * prefix[l].powi(self.k_eff as i32 - 1);
            }
            grad_n[l] = top - suffix;
        }

        let denom = 1.0 - self.bias_term(&pv);
        let bp = self.b_sq.dot(&pv);
        let mut grad = vec![0.0_f64; m];
        for l in 0..m {
            let grad_b = 2.0 * (self.row_mean_sq[l] + 2.0 * bp[l] / k);
            grad[l] = (grad_n[l] * denom + numerator * grad_b) / (denom * denom);
        }
        grad
    }

    /// Projected gradient descent from several starts: uniform, the best
    /// corner, and Dirichlet(1) draws from `rng`. Returns the best run.
    pub fn optimize(&self, rng: &mut ChaCha8Rng) -> Result<SamplingSolution> {
        let m = self.tau.len();
        let mut starts: Vec<Vec<f64>> = Vec::new();
        starts.push(vec![1.0 / m as f64; m]);
        let best_corner = (0..m)
            .min_by(|&a, &b| {
                let va = self.corner_value(a);
                let vb = self.corner_value(b);
                va.partial_cmp(&vb).unwrap()
            })
            .unwrap();
        let mut corner = vec![0.0; m];
        corner[best_corner] = 1.0;
        starts.push(corner);
        for _ in 0..NUM_DIRICHLET_RESTARTS {
            let mut draw: Vec<f64> = (0..m)
                .map(|_| {
                    let e: f64 = Exp1.sample(rng);
                    e
                })
                .collect();
            let total: f64 = draw.iter().sum();
            if total <= 0.0 {
                continue;
            }
            for v in draw.iter_mut() {
                *v /= total;
            }
            starts.push(draw);
        }

        let mut best: Option<SamplingSolution> = None;
        for start in starts {
            if !self.value(&start).is_finite() {
                continue;
            }
            let sol = self.pgd(start);
            let better = match &best {
                None => true,
                Some(b) => sol.value < b.value,
            };
            if better {
                best = Some(sol);
            }
        }
        best.ok_or_else(|| {
            Error::InvalidDistribution("no feasible starting distribution".into())
        })
    }

    fn corner_value(&self, i: usize) -> f64 {
        let m = self.tau.len();
        let mut p = vec![0.0; m];
        p[i] = 1.0;
        self.value(&p)
    }

    fn pgd(&self, start: Vec<f64>) -> SamplingSolution {
        let mut p = start;
        let mut value = self.value(&p);
        let mut converged = false;
        for _ in 0..MAX_PGD_ITERS {
            let grad = self.gradient(&p);
            let mut eta = 1.0_f64;
            let mut accepted = false;
            while eta >= 1e-14 {
                let trial: Vec<f64> = p
                    .iter()
                    .zip(grad.iter())
                    .map(|(&pi, &gi)| pi - eta * gi)
                    .collect();
                let q = project_to_simplex(&trial);
                let trial_value = self.value(&q);
                let decrease: f64 = grad
                    .iter()
                    .zip(p.iter().zip(q.iter()))
                    .map(|(&g, (&a, &b))| g * (b - a))
                    .sum();
                if trial_value <= value + 1e-4 * decrease {
                    let step: f64 = p
                        .iter()
                        .zip(q.iter())
                        .map(|(&a, &b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    p = q;
                    value = trial_value;
                    accepted = true;
                    if step < 1e-13 {
                        converged = true;
                    }
                    break;
                }
                eta *= 0.5;
            }
            if !accepted {
                converged = true;
                break;
            }
            if converged {
                break;
            }
        }
        SamplingSolution {
            p,
            value,
            converged,
        }
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let m = v.len();
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        acc += uj;
        let t = (acc - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        for x in out.iter_mut() {
            *x /= total;
        }
    } else {
        for x in out.iter_mut() {
            *x = 1.0 / m as f64;
        }
    }
    out
}

/// Draws a K-multiset of 0-based indices by inverse CDF; ascending order.
pub fn sample_multiset(p: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut cum = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for &pi in p {
        acc += pi;
        cum.push(acc);
    }
    let last_positive = p
        .iter()
        .rposition(|&pi| pi > 0.0)
        .expect("distribution must have positive mass");
    let mut picks: Vec<usize> = (0..k)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            cum.partition_point(|&c| c <= u).min(last_positive)
        })
        .collect();
    picks.sort_unstable();
    picks
}
