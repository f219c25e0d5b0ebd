//! Dense symmetric linear algebra used by the data generator and the
//! heterogeneity estimator: Cholesky factorization with a conditional ridge,
//! power-iteration spectral norms, a cyclic Jacobi eigensolver, and
//! Householder orthonormalization.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Relative value tolerance for power iterations.
pub const POWER_ITER_TOL: f64 = 1e-9;
/// Iteration cap for power iterations.
pub const POWER_ITER_CAP: usize = 10_000;
/// Condition-number threshold beyond which a ridge is added before factoring.
pub const RIDGE_CONDITION_LIMIT: f64 = 1e12;
/// Largest dimension at which the dense eigensolver backs up the power method.
pub const DENSE_FALLBACK_DIM: usize = 64;

pub fn l2_norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "cholesky expects a square matrix, got {}x{}",
            d,
            a.ncols()
        )));
    }
    let mut l = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite(format!(
                        "pivot {i} is {s:e}"
                    )));
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solves L Lᵀ x = b given the lower factor L.
pub fn cholesky_solve(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let d = l.nrows();
    let mut y = Array1::<f64>::zeros(d);
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(d);
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in i + 1..d {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Symmetric positive-definite factorization with the ridge policy applied.
///
/// A ridge of 1e-10 · trace(A)/d is added when the estimated condition number
/// exceeds [`RIDGE_CONDITION_LIMIT`] or when the plain factorization fails.
pub struct SpdFactor {
    l: Array2<f64>,
    /// Ridge that was added to the diagonal, zero when none was needed.
    pub ridge: f64,
}

impl SpdFactor {
    pub fn new(a: &Array2<f64>) -> Result<Self> {
        let d = a.nrows();
        let ridge_value = 1e-10 * a.diag().sum() / d.max(1) as f64;
        match cholesky(a) {
            Ok(l) => {
                let cond = estimate_condition(a, &l);
                if cond > RIDGE_CONDITION_LIMIT {
                    Self::with_ridge(a, ridge_value)
                } else {
                    Ok(SpdFactor { l, ridge: 0.0 })
                }
            }
            Err(_) => Self::with_ridge(a, ridge_value),
        }
    }

    fn with_ridge(a: &Array2<f64>, ridge: f64) -> Result<Self> {
        let mut ridged = a.clone();
        for i in 0..ridged.nrows() {
            ridged[[i, i]] += ridge;
        }
        let l = cholesky(&ridged)?;
        Ok(SpdFactor { l, ridge })
    }

    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        cholesky_solve(&self.l, b)
    }

    /// Explicit inverse, column by column.
    pub fn inverse(&self) -> Array2<f64> {
        let d = self.l.nrows();
        let mut inv = Array2::<f64>::zeros((d, d));
        let mut e = Array1::<f64>::zeros(d);
        for j in 0..d {
            e[j] = 1.0;
            let col = cholesky_solve(&self.l, e.view());
            inv.column_mut(j).assign(&col);
            e[j] = 0.0;
        }
        // Symmetrize to wash out the last bits of round-off.
        let t = inv.t().to_owned();
        (inv + t) * 0.5
    }
}

/// Rough λ_max/λ_min estimate from short power and inverse-power iterations.
fn estimate_condition(a: &Array2<f64>, l: &Array2<f64>) -> f64 {
    let d = a.nrows();
    let mut v = deterministic_unit_vector(d, 1);
    let mut lam_max = 0.0_f64;
    for _ in 0..200 {
        let w = a.dot(&v);
        let nw = l2_norm(w.view());
        if nw == 0.0 {
            return f64::INFINITY;
        }
        let next = nw;
        v = w / nw;
        if (next - lam_max).abs() <= 1e-6 * next.max(f64::MIN_POSITIVE) {
            lam_max = next;
            break;
        }
        lam_max = next;
    }
    let mut u = deterministic_unit_vector(d, 2);
    let mut inv_lam = 0.0_f64;
    for _ in 0..200 {
        let w = cholesky_solve(l, u.view());
        let nw = l2_norm(w.view());
        if nw == 0.0 || !nw.is_finite() {
            return f64::INFINITY;
        }
        u = w / nw;
        if (nw - inv_lam).abs() <= 1e-6 * nw.max(f64::MIN_POSITIVE) {
            inv_lam = nw;
            break;
        }
        inv_lam = nw;
    }
    if inv_lam == 0.0 {
        return f64::INFINITY;
    }
    lam_max * inv_lam
}

/// Reproducible pseudo-random unit vector for iteration starts.
fn deterministic_unit_vector(d: usize, stream: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9_7f4a_7c15 ^ stream);
    let mut v = Array1::<f64>::zeros(d);
    for x in v.iter_mut() {
        *x = StandardNormal.sample(&mut rng);
    }
    let n = l2_norm(v.view());
    if n > 0.0 {
        v /= n;
    } else {
        v[0] = 1.0;
    }
    v
}

/// Largest singular value of an implicitly given matrix M, by power iteration
/// on MᵀM. Returns the estimate and whether the value converged to
/// [`POWER_ITER_TOL`] within [`POWER_ITER_CAP`] iterations.
pub fn spectral_norm_power<F, G>(d: usize, mv: F, mtv: G) -> (f64, bool)
where
    F: Fn(&Array1<f64>) -> Array1<f64>,
    G: Fn(&Array1<f64>) -> Array1<f64>,
{
    let mut v = deterministic_unit_vector(d, 3);
    let mut sigma2_prev = f64::NAN;
    for _ in 0..POWER_ITER_CAP {
        let mv_v = mv(&v);
        let w = mtv(&mv_v);
        // With ‖v‖ = 1 the Rayleigh quotient of MᵀM is just v·w.
        let sigma2 = v.dot(&w).max(0.0);
        let nw = l2_norm(w.view());
        if nw == 0.0 {
            return (0.0, true);
        }
        v = w / nw;
        if sigma2_prev.is_finite()
            && (sigma2 - sigma2_prev).abs() <= POWER_ITER_TOL * sigma2.max(f64::MIN_POSITIVE)
        {
            return (sigma2.sqrt(), true);
        }
        sigma2_prev = sigma2;
    }
    (sigma2_prev.max(0.0).sqrt(), false)
}

/// Largest singular value via the dense eigensolver; the test oracle and the
/// small-dimension fallback.
pub fn spectral_norm_dense(m: &Array2<f64>) -> Result<f64> {
    let g = m.t().dot(m);
    let (vals, _) = sym_eigen(&g)?;
    Ok(vals[vals.len() - 1].max(0.0).sqrt())
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in ascending order with matching eigenvector columns.
pub fn sym_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "eigensolve expects a square matrix, got {}x{}",
            d,
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(
            "eigensolve input contains non-finite entries".into(),
        ));
    }
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(d);
    let scale = m.iter().map(|x| x.abs()).fold(0.0_f64, f64::max).max(1.0);
    for _sweep in 0..60 {
        let mut off = 0.0_f64;
        for p in 0..d {
            for q in p + 1..d {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= 1e-15 * scale * d as f64 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    m[[p, q]] = 0.0;
                    m[[q, p]] = 0.0;
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                m[[p, p]] = app - t * apq;
                m[[q, q]] = aqq + t * apq;
                m[[p, q]] = 0.0;
                m[[q, p]] = 0.0;
                for k in 0..d {
                    if k != p && k != q {
                        let akp = m[[k, p]];
                        let akq = m[[k, q]];
                        m[[k, p]] = c * akp - s * akq;
                        m[[p, k]] = m[[k, p]];
                        m[[k, q]] = s * akp + c * akq;
                        m[[q, k]] = m[[k, q]];
                    }
                }
                for k in 0..d {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).unwrap());
    let vals = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vecs = Array2::<f64>::zeros((d, d));
    for (dst, &src) in order.iter().enumerate() {
        vecs.column_mut(dst).assign(&v.column(src));
    }
    Ok((vals, vecs))
}

/// Orthonormal Q factor of a square matrix via Householder reflections.
pub fn householder_q(a: &Array2<f64>) -> Result<Array2<f64>> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "orthonormalization expects a square matrix, got {}x{}",
            d,
            a.ncols()
        )));
    }
    let mut r = a.clone();
    let mut vs: Vec<Array1<f64>> = Vec::with_capacity(d);
    for k in 0..d {
        let mut x = Array1::<f64>::zeros(d - k);
        for i in k..d {
            x[i - k] = r[[i, k]];
        }
        let nx = l2_norm(x.view());
        if nx == 0.0 {
            vs.push(Array1::zeros(d - k));
            continue;
        }
        let alpha = -x[0].signum() * nx;
        x[0] -= alpha;
        let nv = l2_norm(x.view());
        if nv == 0.0 {
            vs.push(Array1::zeros(d - k));
            continue;
        }
        x /= nv;
        for j in k..d {
            let mut dot = 0.0;
            for i in k..d {
                dot += x[i - k] * r[[i, j]];
            }
            for i in k..d {
                r[[i, j]] -= 2.0 * x[i - k] * dot;
            }
        }
        vs.push(x);
    }
    // Accumulate Q = H_0 H_1 ... H_{d-1} applied to the identity.
    let mut q = Array2::<f64>::eye(d);
    for k in (0..d).rev() {
        let v = &vs[k];
        if v.iter().all(|&x| x == 0.0) {
            continue;
        }
        for j in 0..d {
            let mut dot = 0.0;
            for i in k..d {
                dot += v[i - k] * q[[i, j]];
            }
            for i in k..d {
                q[[i, j]] -= 2.0 * v[i - k] * dot;
            }
        }
    }
    Ok(q)
}

/// Solves a general square system by Gaussian elimination with partial
/// pivoting. Intended for small dense systems (tens of unknowns).
pub fn solve_general(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "solve expects square system, got {}x{} with rhs of {}",
            n,
            a.ncols(),
            b.len()
        )));
    }
    let mut m = a.clone();
    let mut x = b.clone();
    let scale = a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0);
    for k in 0..n {
        let mut piv = k;
        for i in k + 1..n {
            if m[[i, k]].abs() > m[[piv, k]].abs() {
                piv = i;
            }
        }
        if m[[piv, k]].abs() <= 1e-14 * scale {
            return Err(Error::Singular(format!("pivot {k} is negligible")));
        }
        if piv != k {
            for j in k..n {
                let tmp = m[[k, j]];
                m[[k, j]] = m[[piv, j]];
                m[[piv, j]] = tmp;
            }
            x.swap(k, piv);
        }
        for i in k + 1..n {
            let factor = m[[i, k]] / m[[k, k]];
            if factor == 0.0 {
                continue;
            }
            for j in k..n {
                m[[i, j]] -= factor * m[[k, j]];
            }
            x[i] -= factor * x[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in k + 1..n {
            s -= m[[k, j]] * x[j];
        }
        x[k] = s / m[[k, k]];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random_spd(d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Array2::<f64>::zeros((d, d));
        for x in g.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        let mut a = g.t().dot(&g);
        for i in 0..d {
            a[[i, i]] += 0.5;
        }
        a
    }

    #[test]
    fn cholesky_reconstructs_input() {
        let a = random_spd(12, 7);
        let l = cholesky(&a).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in a.iter().zip(back.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = random_spd(9, 11);
        let x_true = Array1::from_iter((0..9).map(|i| i as f64 - 4.0));
        let b = a.dot(&x_true);
        let f = SpdFactor::new(&a).unwrap();
        let x = f.solve(b.view());
        for (u, v) in x.iter().zip(x_true.iter()) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = random_spd(8, 3);
        let inv = SpdFactor::new(&a).unwrap().inverse();
        let id = a.dot(&inv);
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[[i, j]] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ridge_kicks_in_for_singular_input() {
        let mut a = Array2::<f64>::zeros((3, 3));
        a[[0, 0]] = 1.0;
        a[[1, 1]] = 1.0;
        // third row/column is all zeros: singular
        let f = SpdFactor::new(&a).unwrap();
        assert!(f.ridge > 0.0);
    }

    #[test]
    fn eigen_matches_constructed_spectrum() {
        // Build A = Q diag(vals) Qᵀ with a known spectrum; the construction
        // itself is the oracle.
        let d = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut g = Array2::<f64>::zeros((d, d));
        for x in g.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        let q = householder_q(&g).unwrap();
        let mut vals: Vec<f64> = (0..d).map(|i| 0.5 + 0.7 * i as f64).collect();
        let mut a = Array2::<f64>::zeros((d, d));
        for k in 0..d {
            let col = q.column(k).to_owned();
            for i in 0..d {
                for j in 0..d {
                    a[[i, j]] += vals[k] * col[i] * col[j];
                }
            }
        }
        let (ev, evec) = sym_eigen(&a).unwrap();
        vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (got, want) in ev.iter().zip(vals.iter()) {
            assert!((got - want).abs() < 1e-10, "got {got}, want {want}");
        }
        // Residual check: A v = λ v.
        for k in 0..d {
            let v = evec.column(k).to_owned();
            let av = a.dot(&v);
            for i in 0..d {
                assert!((av[i] - ev[k] * v[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn spectral_norm_hand_values() {
        let m = array![[3.0, 0.0], [0.0, 1.0]];
        let (s, ok) = spectral_norm_power(2, |v| m.dot(v), |v| m.t().dot(v));
        assert!(ok);
        assert!((s - 3.0).abs() < 1e-8);

        // Nilpotent matrix: singular value 2 even though all eigenvalues are 0.
        let n = array![[0.0, 2.0], [0.0, 0.0]];
        let (s, ok) = spectral_norm_power(2, |v| n.dot(v), |v| n.t().dot(v));
        assert!(ok);
        assert!((s - 2.0).abs() < 1e-8);
        assert!((spectral_norm_dense(&n).unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn spectral_norm_power_agrees_with_dense() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 3 + (seed as usize % 14);
            let mut m = Array2::<f64>::zeros((d, d));
            for x in m.iter_mut() {
                *x = rng.random_range(-2.0..2.0);
            }
            let (p, _) = spectral_norm_power(d, |v| m.dot(v), |v| m.t().dot(v));
            let dn = spectral_norm_dense(&m).unwrap();
            assert!(
                (p - dn).abs() <= 1e-7 * dn.max(1.0),
                "power {p} vs dense {dn} at seed {seed}"
            );
        }
    }

    #[test]
    fn spectral_norm_of_zero_matrix_is_zero() {
        let z = Array2::<f64>::zeros((5, 5));
        let (s, ok) = spectral_norm_power(5, |v| z.dot(v), |v| z.t().dot(v));
        assert!(ok);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn spectral_norm_handles_repeated_top_value() {
        let m = Array2::from_diag(&array![3.0, 3.0, 1.0]);
        let (s, _) = spectral_norm_power(3, |v| m.dot(v), |v| m.t().dot(v));
        assert!((s - 3.0).abs() < 1e-8);
    }

    #[test]
    fn householder_q_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 17;
        let mut g = Array2::<f64>::zeros((d, d));
        for x in g.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        let q = householder_q(&g).unwrap();
        let qtq = q.t().dot(&q);
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((qtq[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn general_solver_handles_indefinite_systems() {
        // Bordered system; not positive definite, needs pivoting.
        let a = array![
            [0.0, 2.0, 1.0],
            [2.0, -1.0, 3.0],
            [1.0, 3.0, 0.0]
        ];
        let x_true = array![1.0, -2.0, 0.5];
        let b = a.dot(&x_true);
        let x = solve_general(&a, &b).unwrap();
        for i in 0..3 {
            assert!((x[i] - x_true[i]).abs() < 1e-12);
        }
        let singular = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(solve_general(&singular, &array![1.0, 2.0]).is_err());
    }
}
