//! Pairwise gradient-dissimilarity structure between clients and the bias
//! bounds it induces for partial participation.
//!
//! For linear regression the dissimilarity coefficients have closed forms:
//! B_ij is the spectral norm of (A_i - A_j)A⁻¹ and Γ_ij the Euclidean norm of
//! A_i(w* - w_i*) - A_j(w* - w_j*). Aggregating a selected set S with the
//! argmin-assignment coefficients makes the aggregate gradient a biased
//! estimate of the full gradient; the `bias_*` functions bound that bias for
//! a fixed set and for multiset sampling from a distribution.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::roster::{ClientId, SelectionDecision};

/// Margin kept below the heterogeneity-assumption thresholds when rescaling.
pub const DEFAULT_ASSUMPTION_MARGIN: f64 = 0.05;

/// Symmetric, zero-diagonal matrices of pairwise dissimilarity coefficients.
#[derive(Clone, Debug)]
pub struct HeterogeneityMatrix {
    b: Array2<f64>,
    gamma: Array2<f64>,
}

impl HeterogeneityMatrix {
    pub fn new(b: Array2<f64>, gamma: Array2<f64>) -> Result<Self> {
        validate_pairwise(&b, "B")?;
        validate_pairwise(&gamma, "Gamma")?;
        if b.nrows() != gamma.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "B is {}x{} but Gamma is {}x{}",
                b.nrows(),
                b.ncols(),
                gamma.nrows(),
                gamma.ncols()
            )));
        }
        Ok(HeterogeneityMatrix { b, gamma })
    }

    pub fn num_clients(&self) -> usize {
        self.b.nrows()
    }

    pub fn b(&self) -> &Array2<f64> {
        &self.b
    }

    pub fn gamma(&self) -> &Array2<f64> {
        &self.gamma
    }
}

fn validate_pairwise(m: &Array2<f64>, name: &str) -> Result<()> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "{name} must be square, got {}x{}",
            d,
            m.ncols()
        )));
    }
    for i in 0..d {
        if m[[i, i]] != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "{name} diagonal entry {i} is {}, expected 0",
                m[[i, i]]
            )));
        }
        for j in 0..d {
            let v = m[[i, j]];
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name}[{i},{j}] = {v} must be finite and nonnegative"
                )));
            }
            if (v - m[[j, i]]).abs() > 1e-12 * v.abs().max(1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    Ok(())
}

/// Multiplicative and additive components of a gradient-bias bound:
/// ‖aggregate - full‖² <= b·‖full‖² + gamma (pointwise or in expectation).
#[derive(Clone, Copy, Debug)]
pub struct BiasBound {
    pub b: f64,
    pub gamma: f64,
}

/// Client-sampling distribution together with the per-round multiset size.
#[derive(Clone, Debug)]
pub struct SamplingDistribution {
    p: Vec<f64>,
    k: usize,
}

impl SamplingDistribution {
    pub fn new(p: Vec<f64>, k: usize) -> Result<Self> {
        if p.is_empty() || k == 0 {
            return Err(Error::InvalidDistribution(
                "need at least one client and k >= 1".into(),
            ));
        }
        let mut sum = 0.0;
        for (i, &v) in p.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidDistribution(format!("p[{i}] = {v}")));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(SamplingDistribution { p, k })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

fn validate_covariances(covariances: &[Array2<f64>], global: &Array2<f64>) -> Result<()> {
    if covariances.is_empty() {
        return Err(Error::InvalidParameter("no client covariances".into()));
    }
    let d = global.nrows();
    for (i, c) in covariances.iter().enumerate() {
        if c.nrows() != d || c.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "covariance {i} is {}x{}, global is {}x{}",
                c.nrows(),
                c.ncols(),
                d,
                global.ncols()
            )));
        }
    }
    Ok(())
}

/// Spectral norm of (A_i - A_j)A⁻¹ given the difference and the inverse.
fn pair_dissimilarity(diff: &Array2<f64>, inv: &Array2<f64>) -> f64 {
    let d = diff.nrows();
    let (sigma, converged) =
        linalg::spectral_norm_power(d, |v| diff.dot(&inv.dot(v)), |v| inv.dot(&diff.dot(v)));
    if converged || d > linalg::DENSE_FALLBACK_DIM {
        sigma
    } else {
        linalg::spectral_norm_dense(&diff.dot(inv)).unwrap_or(sigma)
    }
}

/// Pairwise B matrix for linear regression from per-client covariances:
/// B_ij = ‖(A_i - A_j) A⁻¹‖₂, power iteration with dense fallback.
pub fn compute_b_matrix(covariances: &[Array2<f64>], global: &Array2<f64>) -> Result<Array2<f64>> {
    validate_covariances(covariances, global)?;
    let m = covariances.len();
    let inv = linalg::SpdFactor::new(global)?.inverse();
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect();
    let entries: Vec<((usize, usize), f64)> = pairs
        .into_par_iter()
        .map(|(i, j)| {
            let diff = &covariances[i] - &covariances[j];
            ((i, j), pair_dissimilarity(&diff, &inv))
        })
        .collect();
    let mut b = Array2::<f64>::zeros((m, m));
    for ((i, j), v) in entries {
        b[[i, j]] = v;
        b[[j, i]] = v;
    }
    Ok(b)
}

/// Recomputes the B rows (and matching columns) of the given clients after
/// their covariance estimates changed. Entries between two untouched clients
/// keep their previous values.
pub fn update_b_rows(
    b: &mut Array2<f64>,
    covariances: &[Array2<f64>],
    global: &Array2<f64>,
    rows: &[usize],
) -> Result<()> {
    validate_covariances(covariances, global)?;
    let m = covariances.len();
    if b.nrows() != m || b.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "B is {}x{} for {m} covariances",
            b.nrows(),
            b.ncols()
        )));
    }
    let inv = linalg::SpdFactor::new(global)?.inverse();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for &i in rows {
        if i >= m {
            return Err(Error::UnknownClient(i + 1, m));
        }
        for j in 0..m {
            if j != i {
                pairs.push((i.min(j), i.max(j)));
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let entries: Vec<((usize, usize), f64)> = pairs
        .into_par_iter()
        .map(|(i, j)| {
            let diff = &covariances[i] - &covariances[j];
            ((i, j), pair_dissimilarity(&diff, &inv))
        })
        .collect();
    for ((i, j), v) in entries {
        b[[i, j]] = v;
        b[[j, i]] = v;
    }
    Ok(())
}

/// Pairwise Gamma matrix for linear regression:
/// Γ_ij = ‖A_i(w* - w_i*) - A_j(w* - w_j*)‖₂.
pub fn compute_gamma_matrix(
    covariances: &[Array2<f64>],
    local_opts: &[Array1<f64>],
    global_opt: &Array1<f64>,
) -> Result<Array2<f64>> {
    let m = covariances.len();
    if local_opts.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{m} covariances but {} local optima",
            local_opts.len()
        )));
    }
    let residuals: Vec<Array1<f64>> = (0..m)
        .map(|i| covariances[i].dot(&(global_opt - &local_opts[i])))
        .collect();
    let mut gamma = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for j in i + 1..m {
            let v = linalg::l2_norm((&residuals[i] - &residuals[j]).view());
            gamma[[i, j]] = v;
            gamma[[j, i]] = v;
        }
    }
    Ok(gamma)
}

/// Exact B and Gamma matrices of a generated problem.
pub fn exact_heterogeneity(
    prob: &crate::datagen::QuadraticProblem,
) -> Result<HeterogeneityMatrix> {
    let covs: Vec<Array2<f64>> = (1..=prob.num_clients())
        .map(|i| prob.covariance(ClientId(i)).clone())
        .collect();
    let opts: Vec<Array1<f64>> = (1..=prob.num_clients())
        .map(|i| prob.local_opt(ClientId(i)).clone())
        .collect();
    let b = compute_b_matrix(&covs, prob.global_covariance())?;
    let gamma = compute_gamma_matrix(&covs, &opts, prob.global_opt())?;
    HeterogeneityMatrix::new(b, gamma)
}

/// For every client j, the selected client with the smallest B entry toward
/// j. A selected j is assigned to itself (its entry is zero); other ties go
/// to the smallest index.
fn argmin_assignment(b: &Array2<f64>, set: &[usize]) -> Vec<usize> {
    let m = b.nrows();
    let mut beta = vec![0usize; m];
    for j in 0..m {
        if set.binary_search(&j).is_ok() {
            beta[j] = j;
            continue;
        }
        let mut best = set[0];
        for &i in set {
            if b[[i, j]] < b[[best, j]] {
                best = i;
            }
        }
        beta[j] = best;
    }
    beta
}

fn sorted_distinct_indices(b: &Array2<f64>, set: &[ClientId]) -> Result<Vec<usize>> {
    if set.is_empty() {
        return Err(Error::EmptySelection);
    }
    let m = b.nrows();
    let mut idx: Vec<usize> = Vec::with_capacity(set.len());
    for id in set {
        if id.0 < 1 || id.0 > m {
            return Err(Error::UnknownClient(id.0, m));
        }
        idx.push(id.index0());
    }
    idx.sort_unstable();
    idx.dedup();
    Ok(idx)
}

/// Aggregation coefficients for a fixed set: α_i is the fraction of clients
/// whose best representative in the set is i.
pub fn coefficients_for_set(b: &Array2<f64>, set: &[ClientId]) -> Result<SelectionDecision> {
    let idx = sorted_distinct_indices(b, set)?;
    let m = b.nrows();
    let beta = argmin_assignment(b, &idx);
    let mut counts = vec![0usize; m];
    for &rep in &beta {
        counts[rep] += 1;
    }
    let coefficients = idx
        .iter()
        .map(|&i| (ClientId(i + 1), counts[i] as f64 / m as f64))
        .collect();
    SelectionDecision::new(idx.iter().map(|&i| ClientId(i + 1)).collect(), coefficients)
}

/// Bias bound for aggregating a fixed set with argmin coefficients:
/// b = 2·(mean_j B_{j,β_j})², gamma = 2·(mean_j Γ_{j,β_j})².
pub fn bias_for_set(het: &HeterogeneityMatrix, set: &[ClientId]) -> Result<BiasBound> {
    let idx = sorted_distinct_indices(het.b(), set)?;
    let m = het.num_clients();
    let beta = argmin_assignment(het.b(), &idx);
    let mut b_mean = 0.0;
    let mut g_mean = 0.0;
    for j in 0..m {
        b_mean += het.b()[[beta[j], j]];
        g_mean += het.gamma()[[beta[j], j]];
    }
    b_mean /= m as f64;
    g_mean /= m as f64;
    Ok(BiasBound {
        b: 2.0 * b_mean * b_mean,
        gamma: 2.0 * g_mean * g_mean,
    })
}

/// Bias bound for uniform aggregation of a K-multiset drawn iid from p:
/// b = 2(pᵀB̃1/m + pᵀB̃p/K) with B̃ the entrywise square of B; gamma likewise.
pub fn bias_for_distribution(
    het: &HeterogeneityMatrix,
    dist: &SamplingDistribution,
) -> Result<BiasBound> {
    let m = het.num_clients();
    if dist.probabilities().len() != m {
        return Err(Error::DimensionMismatch(format!(
            "distribution over {} clients, matrix over {m}",
            dist.probabilities().len()
        )));
    }
    let p = Array1::from_vec(dist.probabilities().to_vec());
    let k = dist.k() as f64;
    let quad = |mat: &Array2<f64>| -> f64 {
        let sq = mat.mapv(|x| x * x);
        let row_means = sq.sum_axis(ndarray::Axis(1)) / m as f64;
        2.0 * (p.dot(&row_means) + p.dot(&sq.dot(&p)) / k)
    };
    Ok(BiasBound {
        b: quad(het.b()),
        gamma: quad(het.gamma()),
    })
}

/// Exact expectation of the slowest delay in a K-multiset sampled iid from p
/// over delay-sorted clients, via the prefix-probability formula.
pub fn expected_max_delay(tau_sorted: &[f64], p: &[f64], k: usize) -> Result<f64> {
    let m = tau_sorted.len();
    if p.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities for {m} delays",
            p.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if tau_sorted.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter(
            "delays must be sorted ascending".into(),
        ));
    }
    let mut prev_pow = 0.0_f64;
    let mut prefix = 0.0_f64;
    let mut total = 0.0_f64;
    for i in 0..m {
        prefix += p[i];
        let pow = prefix.powi(k as i32);
        total += (pow - prev_pow) * tau_sorted[i];
        prev_pow = pow;
    }
    Ok(total)
}

/// Strict checks of the two heterogeneity assumptions.
#[derive(Clone, Copy, Debug)]
pub struct HeterogeneityCheck {
    /// max_i mean_j B_ij < 1/sqrt(2), required by set selection.
    pub set_ok: bool,
    /// max_i mean_j B_ij² < 1/2, required by distribution sampling.
    pub sampling_ok: bool,
    pub max_row_mean: f64,
    pub max_row_mean_sq: f64,
}

pub fn check_bounded_heterogeneity(b: &Array2<f64>) -> HeterogeneityCheck {
    let m = b.nrows() as f64;
    let mut max_row_mean = 0.0_f64;
    let mut max_row_mean_sq = 0.0_f64;
    for row in b.rows() {
        let mean = row.sum() / m;
        let mean_sq = row.iter().map(|x| x * x).sum::<f64>() / m;
        max_row_mean = max_row_mean.max(mean);
        max_row_mean_sq = max_row_mean_sq.max(mean_sq);
    }
    HeterogeneityCheck {
        set_ok: max_row_mean < std::f64::consts::FRAC_1_SQRT_2,
        sampling_ok: max_row_mean_sq < 0.5,
        max_row_mean,
        max_row_mean_sq,
    }
}

/// Scales B down just enough to satisfy both assumptions with a margin.
///
/// Returns the scaled matrix and the scale s <= 1. When the row-mean
/// constraint binds, the scaled max row mean equals (1-margin)/sqrt(2)
/// exactly; already-compliant matrices pass through unchanged (s = 1).
pub fn rescale_to_assumption(b: &Array2<f64>, margin: f64) -> Result<(Array2<f64>, f64)> {
    if !(0.0..1.0).contains(&margin) {
        return Err(Error::InvalidParameter(format!(
            "margin must be in [0, 1), got {margin}"
        )));
    }
    let check = check_bounded_heterogeneity(b);
    let mean_target = (1.0 - margin) * std::f64::consts::FRAC_1_SQRT_2;
    let sq_target = (1.0 - margin) * 0.5;
    let mut s = 1.0_f64;
    if check.max_row_mean > 0.0 {
        s = s.min(mean_target / check.max_row_mean);
    }
    if check.max_row_mean_sq > 0.0 {
        s = s.min((sq_target / check.max_row_mean_sq).sqrt());
    }
    if s >= 1.0 {
        return Ok((b.clone(), 1.0));
    }
    Ok((b * s, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn het(b: Array2<f64>) -> HeterogeneityMatrix {
        let m = b.nrows();
        HeterogeneityMatrix::new(b, Array2::zeros((m, m))).unwrap()
    }

    #[test]
    fn scalar_b_entry_has_closed_form() {
        let covs = vec![array![[2.0]], array![[4.0]]];
        let global = array![[3.0]];
        let b = compute_b_matrix(&covs, &global).unwrap();
        assert!((b[[0, 1]] - 2.0 / 3.0).abs() < 1e-9);
        assert!((b[[1, 0]] - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(b[[0, 0]], 0.0);
    }

    #[test]
    fn identical_clients_have_zero_heterogeneity() {
        let a = array![[2.0, 0.3], [0.3, 1.0]];
        let covs = vec![a.clone(), a.clone(), a.clone()];
        let b = compute_b_matrix(&covs, &a).unwrap();
        assert!(b.iter().all(|&x| x.abs() < 1e-12));
        let w = array![0.5, -0.25];
        let opts = vec![w.clone(), w.clone(), w.clone()];
        let gamma = compute_gamma_matrix(&covs, &opts, &w).unwrap();
        assert!(gamma.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn row_update_matches_full_recompute_on_touched_pairs() {
        let mut covs = vec![
            array![[2.0, 0.1], [0.1, 1.0]],
            array![[1.5, 0.0], [0.0, 2.5]],
            array![[3.0, -0.2], [-0.2, 0.8]],
        ];
        let global = array![[2.1, 0.0], [0.0, 1.4]];
        let mut b = compute_b_matrix(&covs, &global).unwrap();
        let untouched = b[[0, 2]];
        covs[1] = array![[0.9, 0.3], [0.3, 1.9]];
        update_b_rows(&mut b, &covs, &global, &[1]).unwrap();
        let full = compute_b_matrix(&covs, &global).unwrap();
        assert!((b[[0, 1]] - full[[0, 1]]).abs() < 1e-12);
        assert!((b[[1, 2]] - full[[1, 2]]).abs() < 1e-12);
        assert_eq!(b[[0, 2]], untouched);
    }

    #[test]
    fn matrix_validation_rejects_defects() {
        let asym = array![[0.0, 1.0], [2.0, 0.0]];
        assert!(HeterogeneityMatrix::new(asym, Array2::zeros((2, 2))).is_err());
        let diag = array![[0.5, 1.0], [1.0, 0.0]];
        assert!(HeterogeneityMatrix::new(diag, Array2::zeros((2, 2))).is_err());
        let neg = array![[0.0, -1.0], [-1.0, 0.0]];
        assert!(HeterogeneityMatrix::new(neg, Array2::zeros((2, 2))).is_err());
    }

    #[test]
    fn coefficients_follow_argmin_assignment() {
        // Clients 1 and 2 selected; client 3 is closer to client 2.
        let b = array![
            [0.0, 0.5, 0.2],
            [0.5, 0.0, 0.1],
            [0.2, 0.1, 0.0]
        ];
        let d = coefficients_for_set(&b, &[ClientId(1), ClientId(2)]).unwrap();
        assert!((d.coefficient(ClientId(1)) - 1.0 / 3.0).abs() < 1e-15);
        assert!((d.coefficient(ClientId(2)) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.coefficient(ClientId(3)), 0.0);
    }

    #[test]
    fn full_set_gives_uniform_coefficients_even_for_zero_b() {
        let b = Array2::<f64>::zeros((4, 4));
        let all: Vec<ClientId> = (1..=4).map(ClientId).collect();
        let d = coefficients_for_set(&b, &all).unwrap();
        for id in all {
            assert!((d.coefficient(id) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn singleton_bias_is_twice_squared_row_mean() {
        let b = array![
            [0.0, 0.4, 0.2],
            [0.4, 0.0, 0.6],
            [0.2, 0.6, 0.0]
        ];
        let bound = bias_for_set(&het(b), &[ClientId(1)]).unwrap();
        let row_mean: f64 = (0.0 + 0.4 + 0.2) / 3.0;
        assert!((bound.b - 2.0 * row_mean * row_mean).abs() < 1e-15);
        assert_eq!(bound.gamma, 0.0);
    }

    #[test]
    fn full_set_bias_vanishes() {
        let b = array![[0.0, 0.4], [0.4, 0.0]];
        let bound = bias_for_set(&het(b), &[ClientId(1), ClientId(2)]).unwrap();
        assert_eq!(bound.b, 0.0);
    }

    #[test]
    fn distribution_bias_matches_hand_expansion() {
        // m=2, K=1, p=(1/2,1/2): b = 2(b12²/2 + b12²/2) = 2 b12².
        let b12 = 0.3_f64;
        let b = array![[0.0, b12], [b12, 0.0]];
        let dist = SamplingDistribution::new(vec![0.5, 0.5], 1).unwrap();
        let bound = bias_for_distribution(&het(b), &dist).unwrap();
        assert!((bound.b - 2.0 * b12 * b12).abs() < 1e-15);
    }

    #[test]
    fn corner_distribution_bias_is_row_mean_of_squares() {
        let b = array![
            [0.0, 0.4, 0.2],
            [0.4, 0.0, 0.6],
            [0.2, 0.6, 0.0]
        ];
        let dist = SamplingDistribution::new(vec![1.0, 0.0, 0.0], 4).unwrap();
        let bound = bias_for_distribution(&het(b.clone()), &dist).unwrap();
        let row_sq: f64 = (0.4f64.powi(2) + 0.2f64.powi(2)) / 3.0;
        // pᵀB̃p = B̃_11 = 0 at a corner, so only the row-mean term survives.
        assert!((bound.b - 2.0 * row_sq).abs() < 1e-15);
    }

    #[test]
    fn expected_max_delay_hand_case() {
        // m=2, K=2, p=(1/2,1/2), tau=(1,2): P(max=tau1)=1/4 -> 1.75.
        let v = expected_max_delay(&[1.0, 2.0], &[0.5, 0.5], 2).unwrap();
        assert!((v - 1.75).abs() < 1e-15);
        // K=1 telescopes to the plain expectation.
        let v1 = expected_max_delay(&[1.0, 2.0, 4.0], &[0.2, 0.3, 0.5], 1).unwrap();
        assert!((v1 - (0.2 + 0.6 + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn expected_max_delay_validates_input() {
        assert!(expected_max_delay(&[2.0, 1.0], &[0.5, 0.5], 2).is_err());
        assert!(expected_max_delay(&[1.0, 2.0], &[1.0], 2).is_err());
        assert!(expected_max_delay(&[1.0, 2.0], &[0.5, 0.5], 0).is_err());
    }

    #[test]
    fn assumption_check_uses_strict_boundaries() {
        let b = array![[0.0, 1.0], [1.0, 0.0]];
        let check = check_bounded_heterogeneity(&b);
        assert!(check.set_ok, "row mean 0.5 < 1/sqrt(2)");
        assert!(!check.sampling_ok, "row mean of squares exactly 0.5 fails");
        assert!((check.max_row_mean - 0.5).abs() < 1e-15);
        assert!((check.max_row_mean_sq - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rescale_is_identity_for_zero_matrix() {
        let b = Array2::<f64>::zeros((3, 3));
        let (scaled, s) = rescale_to_assumption(&b, 0.05).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(scaled, b);
    }

    #[test]
    fn rescale_binds_mean_of_squares_for_spiky_rows() {
        // A row with one dominant entry: the mean-of-squares constraint
        // binds before the row-mean one.
        let b = array![
            [0.0, 2.0, 1.0],
            [2.0, 0.0, 0.5],
            [1.0, 0.5, 0.0]
        ];
        let (scaled, s) = rescale_to_assumption(&b, 0.05).unwrap();
        assert!(s < 1.0);
        let check = check_bounded_heterogeneity(&scaled);
        assert!(check.set_ok && check.sampling_ok);
        assert!((check.max_row_mean_sq - 0.95 * 0.5).abs() < 1e-12);
        // Scaling is uniform.
        assert!((scaled[[0, 1]] / b[[0, 1]] - s).abs() < 1e-15);
    }

    #[test]
    fn rescale_binds_row_mean_for_homogeneous_rows() {
        // Uniform off-diagonal entries at large m: the row-mean constraint
        // binds before the mean-of-squares one.
        let m = 25;
        let mut b = Array2::<f64>::from_elem((m, m), 2.0);
        for i in 0..m {
            b[[i, i]] = 0.0;
        }
        let (scaled, s) = rescale_to_assumption(&b, 0.05).unwrap();
        assert!(s < 1.0);
        let check = check_bounded_heterogeneity(&scaled);
        assert!(check.set_ok && check.sampling_ok);
        let target = 0.95 / std::f64::consts::SQRT_2;
        assert!((check.max_row_mean - target).abs() < 1e-12);
    }
}
