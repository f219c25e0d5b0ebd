//! Synthetic federated linear-regression problems.
//!
//! All clients share one random orthonormal eigenbasis; each client draws its
//! own covariance eigenvalues uniformly from a configured range, then samples
//! Gaussian features with that covariance. Labels come from a single shared
//! generating model (Bernoulli(0.5) coordinates) plus Gaussian noise, so the
//! per-client least-squares optima disagree only through sampling noise while
//! the per-client curvatures disagree through the spectra.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::roster::{ClientId, ModelVector};

/// Smallest and largest eigenvalue of the global quadratic: the PL constant μ
/// and the gradient-Lipschitz constant L.
#[derive(Clone, Copy, Debug)]
pub struct CurvatureConstants {
    pub mu: f64,
    pub lipschitz: f64,
}

/// A fully materialized synthetic problem: per-client data, empirical
/// covariances and local optima, and the exact global optimum.
pub struct QuadraticProblem {
    m: usize,
    n: usize,
    d: usize,
    noise_std: f64,
    train_x: Vec<Array2<f64>>,
    train_y: Vec<Array1<f64>>,
    test_x: Vec<Array2<f64>>,
    test_y: Vec<Array1<f64>>,
    covariances: Vec<Array2<f64>>,
    cross_moments: Vec<Array1<f64>>,
    local_opts: Vec<Array1<f64>>,
    global_cov: Array2<f64>,
    global_opt: Array1<f64>,
    basis: Array2<f64>,
    population_eigs: Vec<Array1<f64>>,
    generating_model: Array1<f64>,
}

/// Generates a synthetic problem. Draw order per seed: shared basis, shared
/// generating model, then per client eigenvalues, training data, test data.
pub fn generate_quadratic(
    m: usize,
    n: usize,
    d: usize,
    eig_range: (f64, f64),
    noise_std: f64,
    seed: u64,
) -> Result<QuadraticProblem> {
    if m == 0 || n == 0 || d == 0 {
        return Err(Error::InvalidParameter(format!(
            "m, n, d must be positive, got m={m} n={n} d={d}"
        )));
    }
    let (lo, hi) = eig_range;
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidParameter(format!(
            "eigenvalue range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
        )));
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise std must be nonnegative, got {noise_std}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Array2::<f64>::zeros((d, d));
    for x in g.iter_mut() {
        *x = StandardNormal.sample(&mut rng);
    }
    let basis = linalg::householder_q(&g)?;

    let mut generating_model = Array1::<f64>::zeros(d);
    for x in generating_model.iter_mut() {
        *x = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
    }

    let mut train_x = Vec::with_capacity(m);
    let mut train_y = Vec::with_capacity(m);
    let mut test_x = Vec::with_capacity(m);
    let mut test_y = Vec::with_capacity(m);
    let mut covariances = Vec::with_capacity(m);
    let mut cross_moments = Vec::with_capacity(m);
    let mut local_opts = Vec::with_capacity(m);
    let mut population_eigs = Vec::with_capacity(m);

    for _ in 0..m {
        let mut eigs = Array1::<f64>::zeros(d);
        for e in eigs.iter_mut() {
            *e = if hi > lo { rng.random_range(lo..hi) } else { lo };
        }
        let scale = eigs.mapv(f64::sqrt);

        let draw_block = |rng: &mut ChaCha8Rng| -> (Array2<f64>, Array1<f64>) {
            let mut x = Array2::<f64>::zeros((n, d));
            let mut y = Array1::<f64>::zeros(n);
            for q in 0..n {
                let mut z = Array1::<f64>::zeros(d);
                for v in z.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
                let point = basis.dot(&(&scale * &z));
                let noise: f64 = StandardNormal.sample(rng);
                y[q] = point.dot(&generating_model) + noise_std * noise;
                x.row_mut(q).assign(&point);
            }
            (x, y)
        };

        let (x, y) = draw_block(&mut rng);
        let (tx, ty) = draw_block(&mut rng);

        let cov = x.t().dot(&x) / n as f64;
        let cross = x.t().dot(&y) / n as f64;
        let local_opt = least_squares_opt(&x, &y, &cov, &cross)?;

        train_x.push(x);
        train_y.push(y);
        test_x.push(tx);
        test_y.push(ty);
        covariances.push(cov);
        cross_moments.push(cross);
        local_opts.push(local_opt);
        population_eigs.push(eigs);
    }

    let mut global_cov = Array2::<f64>::zeros((d, d));
    for cov in &covariances {
        global_cov += cov;
    }
    global_cov /= m as f64;

    let mut mean_cross = Array1::<f64>::zeros(d);
    for b in &cross_moments {
        mean_cross += b;
    }
    mean_cross /= m as f64;

    let l = linalg::cholesky(&global_cov).map_err(|_| {
        Error::NotPositiveDefinite(format!(
            "global covariance is singular (d={d}, total samples={})",
            m * n
        ))
    })?;
    let global_opt = linalg::cholesky_solve(&l, mean_cross.view());

    Ok(QuadraticProblem {
        m,
        n,
        d,
        noise_std,
        train_x,
        train_y,
        test_x,
        test_y,
        covariances,
        cross_moments,
        local_opts,
        global_cov,
        global_opt,
        basis,
        population_eigs,
        generating_model,
    })
}

/// Per-client least-squares optimum. Overdetermined systems go through the
/// d×d normal equations; underdetermined ones (n <= d) take the minimum-norm
/// solution through the n×n Gram matrix, so A_i w_i* = b_i holds either way.
fn least_squares_opt(
    x: &Array2<f64>,
    y: &Array1<f64>,
    cov: &Array2<f64>,
    cross: &Array1<f64>,
) -> Result<Array1<f64>> {
    let (n, d) = x.dim();
    if n > d {
        let f = linalg::SpdFactor::new(cov)?;
        Ok(f.solve(cross.view()))
    } else {
        let gram = x.dot(&x.t());
        let f = linalg::SpdFactor::new(&gram)?;
        let coef = f.solve(y.view());
        Ok(x.t().dot(&coef))
    }
}

impl QuadraticProblem {
    pub fn num_clients(&self) -> usize {
        self.m
    }

    pub fn points_per_client(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Empirical feature covariance A_i.
    pub fn covariance(&self, id: ClientId) -> &Array2<f64> {
        &self.covariances[id.index0()]
    }

    /// Empirical cross moment b_i = Xᵀy/n; equals A_i w_i*.
    pub fn cross_moment(&self, id: ClientId) -> &Array1<f64> {
        &self.cross_moments[id.index0()]
    }

    /// Per-client least-squares optimum w_i*.
    pub fn local_opt(&self, id: ClientId) -> &Array1<f64> {
        &self.local_opts[id.index0()]
    }

    /// Mean of the client covariances.
    pub fn global_covariance(&self) -> &Array2<f64> {
        &self.global_cov
    }

    /// Exact global optimum of the averaged objective.
    pub fn global_opt(&self) -> &Array1<f64> {
        &self.global_opt
    }

    /// Shared eigenbasis used to generate features.
    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    /// Population covariance eigenvalues of one client.
    pub fn population_eigenvalues(&self, id: ClientId) -> &Array1<f64> {
        &self.population_eigs[id.index0()]
    }

    /// Shared label-generating model.
    pub fn generating_model(&self) -> &Array1<f64> {
        &self.generating_model
    }

    /// Gradient of one client's loss: A_i (w - w_i*).
    pub fn client_gradient(&self, id: ClientId, w: &ModelVector) -> Array1<f64> {
        let i = id.index0();
        self.covariances[i].dot(&(w - &self.local_opts[i]))
    }

    /// Gradient of the averaged loss: A (w - w*).
    pub fn global_gradient(&self, w: &ModelVector) -> Array1<f64> {
        self.global_cov.dot(&(w - &self.global_opt))
    }

    /// One client's training loss, straight from its data.
    pub fn client_loss(&self, id: ClientId, w: &ModelVector) -> f64 {
        let i = id.index0();
        mean_half_square_loss(&self.train_x[i], &self.train_y[i], w)
    }

    /// Averaged training loss over all clients, straight from the data.
    pub fn global_loss(&self, w: &ModelVector) -> f64 {
        let mut total = 0.0;
        for i in 0..self.m {
            total += mean_half_square_loss(&self.train_x[i], &self.train_y[i], w);
        }
        total / self.m as f64
    }

    /// Mean held-out loss over clients, divided by sqrt(d).
    pub fn normalized_test_loss(&self, w: &ModelVector) -> f64 {
        let mut total = 0.0;
        for i in 0..self.m {
            total += mean_half_square_loss(&self.test_x[i], &self.test_y[i], w);
        }
        total / self.m as f64 / (self.d as f64).sqrt()
    }

    /// Exact suboptimality f(w) - f(w*), via the quadratic form around w*.
    pub fn suboptimality(&self, w: &ModelVector) -> f64 {
        let delta = w - &self.global_opt;
        0.5 * delta.dot(&self.global_cov.dot(&delta))
    }

    /// μ and L of the averaged quadratic. Small problems use a dense
    /// symmetric eigensolve; larger ones take L from power iteration on A and
    /// μ from power iteration on A⁻¹ through a Cholesky solve.
    pub fn curvature(&self) -> Result<CurvatureConstants> {
        let a = &self.global_cov;
        if self.d <= linalg::DENSE_FALLBACK_DIM {
            let (vals, _) = linalg::sym_eigen(a)?;
            let mu = vals[0];
            let lipschitz = vals[vals.len() - 1];
            if !(mu > 0.0) {
                return Err(Error::NotPositiveDefinite(format!(
                    "global covariance has smallest eigenvalue {mu:e}"
                )));
            }
            return Ok(CurvatureConstants { mu, lipschitz });
        }
        let (lipschitz, _) = linalg::spectral_norm_power(self.d, |v| a.dot(v), |v| a.dot(v));
        let factor = linalg::SpdFactor::new(a)?;
        let (inv_norm, _) =
            linalg::spectral_norm_power(self.d, |v| factor.solve(v.view()), |v| {
                factor.solve(v.view())
            });
        if !(inv_norm.is_finite() && inv_norm > 0.0) {
            return Err(Error::NotPositiveDefinite(
                "global covariance inverse has no positive spectral norm".into(),
            ));
        }
        Ok(CurvatureConstants {
            mu: 1.0 / inv_norm,
            lipschitz,
        })
    }

    /// Empirical covariance of one client from a fresh subsample of its
    /// training points (without replacement). Batch sizes covering all points
    /// reproduce the stored covariance exactly.
    pub fn subsample_covariance(
        &self,
        id: ClientId,
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Array2<f64> {
        let i = id.index0();
        let b = batch.clamp(1, self.n);
        if b == self.n {
            return self.covariances[i].clone();
        }
        // Partial Fisher-Yates over point indices.
        let mut idx: Vec<usize> = (0..self.n).collect();
        for k in 0..b {
            let j = k + rng.random_range(0..self.n - k);
            idx.swap(k, j);
        }
        let mut cov = Array2::<f64>::zeros((self.d, self.d));
        for &q in &idx[..b] {
            let row = self.train_x[i].row(q);
            for r in 0..self.d {
                let xr = row[r];
                if xr == 0.0 {
                    continue;
                }
                for c in 0..self.d {
                    cov[[r, c]] += xr * row[c];
                }
            }
        }
        cov / b as f64
    }
}

fn mean_half_square_loss(x: &Array2<f64>, y: &Array1<f64>, w: &ModelVector) -> f64 {
    let pred = x.dot(w);
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(y.iter()) {
        let r = t - p;
        total += 0.5 * r * r;
    }
    total / y.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_client_covariance_approaches_population() {
        let prob = generate_quadratic(1, 4000, 1, (4.0, 4.0), 0.0, 9).unwrap();
        let a = prob.covariance(ClientId(1))[[0, 0]];
        assert!((a - 4.0).abs() < 0.4, "empirical variance {a}");
        // With one client the global optimum is the local one.
        assert_eq!(prob.global_opt()[0], prob.local_opt(ClientId(1))[0]);
    }

    #[test]
    fn global_covariance_is_mean_of_clients() {
        let prob = generate_quadratic(2, 3, 2, (1.0, 5.0), 0.01, 3).unwrap();
        let want = (prob.covariance(ClientId(1)) + prob.covariance(ClientId(2))) / 2.0;
        for (x, y) in prob.global_covariance().iter().zip(want.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn client_gradient_matches_finite_differences() {
        let prob = generate_quadratic(3, 20, 6, (1.0, 8.0), 0.05, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w = Array1::from_iter((0..6).map(|_| rng.random_range(-2.0..2.0)));
        let id = ClientId(2);
        let grad = prob.client_gradient(id, &w);
        let h = 1e-5;
        for k in 0..6 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[k] += h;
            wm[k] -= h;
            let fd = (prob.client_loss(id, &wp) - prob.client_loss(id, &wm)) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() < 1e-5,
                "coordinate {k}: fd {fd} vs analytic {}",
                grad[k]
            );
        }
    }

    #[test]
    fn loss_gap_equals_quadratic_form() {
        let prob = generate_quadratic(4, 12, 5, (1.0, 10.0), 0.01, 23).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let w = Array1::from_iter((0..5).map(|_| rng.random_range(-3.0..3.0)));
            let gap = prob.global_loss(&w) - prob.global_loss(prob.global_opt());
            let form = prob.suboptimality(&w);
            assert!(
                (gap - form).abs() <= 1e-8 * form.abs().max(1e-8),
                "gap {gap} vs quadratic form {form}"
            );
        }
    }

    #[test]
    fn local_opt_satisfies_normal_equations_even_underdetermined() {
        // n < d: rank-deficient per-client systems.
        let prob = generate_quadratic(3, 4, 7, (1.0, 6.0), 0.02, 31).unwrap();
        for id in [ClientId(1), ClientId(2), ClientId(3)] {
            let lhs = prob.covariance(id).dot(prob.local_opt(id));
            for (a, b) in lhs.iter().zip(prob.cross_moment(id).iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn curvature_agrees_with_power_iteration() {
        let prob = generate_quadratic(5, 30, 8, (2.0, 9.0), 0.01, 41).unwrap();
        let c = prob.curvature().unwrap();
        assert!(c.mu > 0.0 && c.mu <= c.lipschitz);
        // Independent route: spectral norm of A is L; spectral norm of A⁻¹ is 1/μ.
        let a = prob.global_covariance();
        let (l_norm, _) = linalg::spectral_norm_power(8, |v| a.dot(v), |v| a.dot(v));
        assert!((l_norm - c.lipschitz).abs() <= 1e-7 * c.lipschitz);
        let inv = linalg::SpdFactor::new(a).unwrap().inverse();
        let (inv_norm, _) = linalg::spectral_norm_power(8, |v| inv.dot(v), |v| inv.dot(v));
        assert!((1.0 / inv_norm - c.mu).abs() <= 1e-6 * c.mu);
    }

    #[test]
    fn curvature_power_route_matches_dense_above_cutoff() {
        let d = linalg::DENSE_FALLBACK_DIM + 6;
        let prob = generate_quadratic(2, 90, d, (1.0, 10.0), 0.01, 13).unwrap();
        let c = prob.curvature().unwrap();
        let (vals, _) = linalg::sym_eigen(prob.global_covariance()).unwrap();
        assert!((c.mu - vals[0]).abs() <= 1e-6 * vals[0]);
        assert!((c.lipschitz - vals[d - 1]).abs() <= 1e-6 * vals[d - 1]);
    }

    #[test]
    fn generating_model_is_binary_and_seed_deterministic() {
        let p1 = generate_quadratic(2, 5, 10, (1.0, 10.0), 0.001, 77).unwrap();
        assert!(p1
            .generating_model()
            .iter()
            .all(|&v| v == 0.0 || v == 1.0));
        let p2 = generate_quadratic(2, 5, 10, (1.0, 10.0), 0.001, 77).unwrap();
        assert_eq!(p1.global_opt(), p2.global_opt());
        assert_eq!(p1.covariance(ClientId(2)), p2.covariance(ClientId(2)));
        let p3 = generate_quadratic(2, 5, 10, (1.0, 10.0), 0.001, 78).unwrap();
        assert_ne!(p1.global_opt(), p3.global_opt());
    }

    #[test]
    fn subsample_covariance_full_batch_is_exact() {
        let prob = generate_quadratic(2, 6, 4, (1.0, 5.0), 0.01, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let full = prob.subsample_covariance(ClientId(1), 6, &mut rng);
        assert_eq!(&full, prob.covariance(ClientId(1)));
        let half = prob.subsample_covariance(ClientId(1), 3, &mut rng);
        assert_ne!(&half, prob.covariance(ClientId(1)));
        // Still symmetric PSD-shaped.
        for i in 0..4 {
            for j in 0..4 {
                assert!((half[[i, j]] - half[[j, i]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate_quadratic(0, 5, 3, (1.0, 2.0), 0.0, 1).is_err());
        assert!(generate_quadratic(2, 5, 3, (0.0, 2.0), 0.0, 1).is_err());
        assert!(generate_quadratic(2, 5, 3, (3.0, 2.0), 0.0, 1).is_err());
        assert!(generate_quadratic(2, 5, 3, (1.0, 2.0), -0.1, 1).is_err());
    }
}
