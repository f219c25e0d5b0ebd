//! Set selection by minimizing expected round time inflated by gradient
//! bias: g(S) = max_{i in S} tau_i / (1 - B_S).
//!
//! g is often treated as submodular, but its marginals do not always
//! diminish: with equal delays the bias term behaves supermodularly (see
//! `marginals_can_grow_on_nested_sets`). The minimizer therefore never
//! relies on submodularity alone. It searches exhaustively at small m, and
//! otherwise runs the Fujishige-Wolfe minimum-norm-point algorithm followed
//! by a candidate sweep; because B_S only shrinks as S grows while the delay
//! term depends on the slowest member alone, the optimum over nonempty sets
//! is always attained on a delay-sorted prefix, which the sweep includes.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::heterogeneity::check_bounded_heterogeneity;
use crate::linalg;

/// How the set minimizer searches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MinimizerMode {
    /// Exhaustive up to [`EXHAUSTIVE_AUTO_LIMIT`] clients, min-norm beyond.
    #[default]
    Auto,
    MinNorm,
    Exhaustive,
}

/// Largest roster the Auto mode still enumerates exhaustively.
pub const EXHAUSTIVE_AUTO_LIMIT: usize = 15;

/// Hard cap for explicit exhaustive enumeration.
pub const EXHAUSTIVE_HARD_LIMIT: usize = 25;

/// Delay/bias objective over subsets of a delay-sorted roster.
pub struct SubmodularObjective {
    tau: Vec<f64>,
    b: Array2<f64>,
}

/// Minimizer output: 0-based roster indices, ascending.
#[derive(Clone, Debug)]
pub struct SetSolution {
    pub set: Vec<usize>,
    pub value: f64,
    /// Whether the duality gap of the min-norm solve closed (always true
    /// for exhaustive search).
    pub converged: bool,
}

impl SubmodularObjective {
    /// `tau` must be ascending and positive; `b` must satisfy the row-mean
    /// bound that keeps 1 - B_S positive on every nonempty set.
    pub fn new(tau: &[f64], b: &Array2<f64>) -> Result<Self> {
        let m = tau.len();
        if m == 0 {
            return Err(Error::InvalidParameter("empty roster".into()));
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
        if !check.set_ok {
            return Err(Error::AssumptionViolated(format!(
                "max row mean of B is {:.6}, need < 1/sqrt(2)",
                check.max_row_mean
            )));
        }
        Ok(SubmodularObjective {
            tau: tau.to_vec(),
            b: b.clone(),
        })
    }

    pub fn num_clients(&self) -> usize {
        self.tau.len()
    }

    /// Objective value; the empty set is assigned the worst singleton value
    /// so that adding any client never increases it.
    pub fn value(&self, set: &[usize]) -> f64 {
        if set.is_empty() {
            return (0..self.tau.len())
                .map(|i| self.value(&[i]))
                .fold(f64::NEG_INFINITY, f64::max);
        }
        let m = self.tau.len();
        let mut tau_max = 0.0_f64;
        let mut colmin: Option<Vec<f64>> = None;
        for &i in set {
            tau_max = tau_max.max(self.tau[i]);
            let row = self.b.row(i);
            match colmin.as_mut() {
                None => colmin = Some(row.to_vec()),
                Some(c) => {
                    for j in 0..m {
                        if row[j] < c[j] {
                            c[j] = row[j];
                        }
                    }
                }
            }
        }
        let h = colmin.unwrap().iter().sum::<f64>() / m as f64;
        let denom = 1.0 - 2.0 * h * h;
        if denom <= 0.0 {
            return f64::INFINITY;
        }
        tau_max / denom
    }

    pub fn minimize(&self, mode: MinimizerMode) -> Result<SetSolution> {
        let m = self.tau.len();
        match mode {
            MinimizerMode::Auto => {
                if m <= EXHAUSTIVE_AUTO_LIMIT {
                    self.minimize_exhaustive()
                } else {
                    Ok(self.minimize_min_norm())
                }
            }
            MinimizerMode::MinNorm => Ok(self.minimize_min_norm()),
            MinimizerMode::Exhaustive => self.minimize_exhaustive(),
        }
    }

    /// Enumerates every nonempty subset.
    pub fn minimize_exhaustive(&self) -> Result<SetSolution> {
        let m = self.tau.len();
        if m > EXHAUSTIVE_HARD_LIMIT {
            return Err(Error::InvalidParameter(format!(
                "exhaustive search over {m} clients is intractable, use the min-norm mode"
            )));
        }
        let mut best_set = vec![0usize];
        let mut best = self.value(&best_set);
        let mut idx = Vec::with_capacity(m);
        for mask in 1u64..(1u64 << m) {
            idx.clear();
            let mut bits = mask;
            while bits != 0 {
                idx.push(bits.trailing_zeros() as usize);
                bits &= bits - 1;
            }
            let v = self.value(&idx);
            if v < best {
                best = v;
                best_set = idx.clone();
            }
        }
        Ok(SetSolution {
            set: best_set,
            value: best,
            converged: true,
        })
    }

    /// Min-norm-point solve followed by a sweep of rounding candidates
    /// (level sets of the min-norm point, delay prefixes, singletons, the
    /// full set) and a local add/drop polish.
    pub fn minimize_min_norm(&self) -> SetSolution {
        let m = self.tau.len();
        let (x, converged) = self.wolfe_min_norm();

        let mut candidates: Vec<Vec<usize>> = Vec::new();
        let neg: Vec<usize> = (0..m).filter(|&i| x[i] < -1e-12).collect();
        if !neg.is_empty() {
            candidates.push(neg);
        }
        let nonpos: Vec<usize> = (0..m).filter(|&i| x[i] <= 1e-12).collect();
        if !nonpos.is_empty() {
            candidates.push(nonpos);
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap().then(a.cmp(&b)));
        for t in 1..=m {
            let mut prefix: Vec<usize> = order[..t].to_vec();
            prefix.sort_unstable();
            candidates.push(prefix);
        }
        for t in 1..=m {
            candidates.push((0..t).collect());
        }
        for i in 0..m {
            candidates.push(vec![i]);
        }

        candidates.sort();
        candidates.dedup();
        let mut best_set = candidates[0].clone();
        let mut best = self.value(&best_set);
        for cand in &candidates[1..] {
            let v = self.value(cand);
            if v < best {
                best = v;
                best_set = cand.clone();
            }
        }

        let (best_set, best) = self.local_search(best_set, best);
        SetSolution {
            set: best_set,
            value: best,
            converged,
        }
    }

    /// First-improvement add/drop descent.
    fn local_search(&self, mut set: Vec<usize>, mut value: f64) -> (Vec<usize>, f64) {
        let m = self.tau.len();
        for _ in 0..4 * m {
            let mut improved = false;
            for i in 0..m {
                let pos = set.binary_search(&i);
                let trial: Vec<usize> = match pos {
                    Ok(p) if set.len() > 1 => {
                        let mut t = set.clone();
                        t.remove(p);
                        t
                    }
                    Ok(_) => continue,
                    Err(p) => {
                        let mut t = set.clone();
                        t.insert(p, i);
                        t
                    }
                };
                let v = self.value(&trial);
                if v < value - 1e-15 * value.abs() {
                    set = trial;
                    value = v;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        (set, value)
    }

    /// Marginal gains of g - g(empty) along `order`, forming one vertex of
    /// the associated base polytope.
    fn greedy_vertex(&self, order: &[usize]) -> Array1<f64> {
        let m = self.tau.len();
        let g0 = self.value(&[]);
        let mut q = Array1::<f64>::zeros(m);
        let mut colmin = vec![f64::INFINITY; m];
        let mut tau_max = 0.0_f64;
        let mut prev = g0;
        for &v in order {
            tau_max = tau_max.max(self.tau[v]);
            let row = self.b.row(v);
            for j in 0..m {
                if row[j] < colmin[j] {
                    colmin[j] = row[j];
                }
            }
            let h = colmin.iter().sum::<f64>() / m as f64;
            let denom = 1.0 - 2.0 * h * h;
            let g = if denom <= 0.0 {
                f64::INFINITY
            } else {
                tau_max / denom
            };
            q[v] = g - prev;
            prev = g;
        }
        q
    }

    /// Fujishige-Wolfe minimum-norm point over the base polytope of the
    /// shifted objective. Returns the final point and whether the duality
    /// gap closed.
    fn wolfe_min_norm(&self) -> (Array1<f64>, bool) {
        let m = self.tau.len();
        let init_order: Vec<usize> = (0..m).collect();
        let q0 = self.greedy_vertex(&init_order);
        let mut vertices: Vec<Array1<f64>> = vec![q0.clone()];
        let mut lambda: Vec<f64> = vec![1.0];
        let mut x = q0;
        let mut converged = false;

        'outer: for _ in 0..100 * m.max(4) {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap().then(a.cmp(&b)));
            let q = self.greedy_vertex(&order);
            let xx = x.dot(&x);
            if x.dot(&q) >= xx - 1e-10 * xx.max(1.0) {
                converged = true;
                break;
            }
            let q_scale = 1.0 + linalg::l2_norm(q.view());
            if vertices
                .iter()
                .any(|v| linalg::l2_norm((v - &q).view()) <= 1e-12 * q_scale)
            {
                break;
            }
            vertices.push(q);
            lambda.push(0.0);

            for _ in 0..100 {
                let r = vertices.len();
                let mut kkt = Array2::<f64>::zeros((r + 1, r + 1));
                for i in 0..r {
                    for j in i..r {
                        let dot = vertices[i].dot(&vertices[j]);
                        kkt[[i, j]] = dot;
                        kkt[[j, i]] = dot;
                    }
                    kkt[[i, r]] = 1.0;
                    kkt[[r, i]] = 1.0;
                }
                let mut rhs = Array1::<f64>::zeros(r + 1);
                rhs[r] = 1.0;
                let a = match linalg::solve_general(&kkt, &rhs) {
                    Ok(sol) => sol.slice(ndarray::s![..r]).to_owned(),
                    Err(_) => break 'outer,
                };
                if a.iter().all(|&ai| ai > 1e-12) {
                    lambda = a.to_vec();
                    break;
                }
                let mut theta = 1.0_f64;
                for i in 0..r {
                    if a[i] <= 1e-12 && lambda[i] > a[i] {
                        theta = theta.min(lambda[i] / (lambda[i] - a[i]));
                    }
                }
                for i in 0..r {
                    lambda[i] = (1.0 - theta) * lambda[i] + theta * a[i];
                }
                let keep: Vec<bool> = lambda.iter().map(|&l| l > 1e-14).collect();
                let mut vi = 0;
                vertices.retain(|_| {
                    let k = keep[vi];
                    vi += 1;
                    k
                });
                lambda.retain(|&l| l > 1e-14);
                if vertices.is_empty() {
                    break 'outer;
                }
                let total: f64 = lambda.iter().sum();
                for l in lambda.iter_mut() {
                    *l /= total;
                }
            }

            x = Array1::<f64>::zeros(m);
            for (v, &l) in vertices.iter().zip(lambda.iter()) {
                x = x + v * l;
            }
        }

        let mut xfin = Array1::<f64>::zeros(m);
        for (v, &l) in vertices.iter().zip(lambda.iter()) {
            xfin = xfin + v * l;
        }
        (xfin, converged)
    }
}
