//! Structural smoke test at the full experiment scale (100 clients, 100
//! points each, 500 features): generation, curvature, optimum consistency,
//! and a sample of pairwise dissimilarity entries.

use fedsel_core::datagen::generate_quadratic;
use fedsel_core::heterogeneity::compute_b_matrix;
use fedsel_core::linalg::{spectral_norm_power, SpdFactor};
use fedsel_core::ClientId;
use ndarray::Array1;

#[test]
fn full_scale_problem_generates_with_consistent_structure() {
    let m = 100;
    let n = 100;
    let d = 500;
    let prob = generate_quadratic(m, n, d, (1.0, 10.0), 0.001, 2024).unwrap();
    assert_eq!(prob.num_clients(), m);
    assert_eq!(prob.dim(), d);
    assert_eq!(prob.points_per_client(), n);

    // Curvature via power iterations; the dense eigensolve is impractical
    // at this dimension.
    let a = prob.global_covariance();
    let (lipschitz, ok) = spectral_norm_power(d, |v| a.dot(v), |v| a.dot(v));
    assert!(ok && lipschitz > 0.0);
    let factor = SpdFactor::new(a).unwrap();
    let (inv_norm, ok) =
        spectral_norm_power(d, |v| factor.solve(v.view()), |v| factor.solve(v.view()));
    assert!(ok && inv_norm > 0.0);
    let mu = 1.0 / inv_norm;
    assert!(mu > 0.0 && lipschitz >= mu);

    // The recorded optimum solves the normal equations of the average.
    let mut mean_cross = Array1::<f64>::zeros(d);
    for i in 1..=m {
        mean_cross.scaled_add(1.0 / m as f64, prob.cross_moment(ClientId(i)));
    }
    let residual = &prob.global_covariance().dot(prob.global_opt()) - &mean_cross;
    let rel = residual.dot(&residual).sqrt() / mean_cross.dot(&mean_cross).sqrt();
    assert!(rel < 1e-8, "normal equation residual {rel}");

    let w0 = Array1::<f64>::zeros(d);
    assert!(prob.global_loss(&w0).is_finite());
    assert!(prob.normalized_test_loss(&w0).is_finite());

    // Dissimilarity entries on a small sample of clients stay finite and
    // symmetric at full dimension.
    let sample: Vec<_> = [1usize, 50, 100]
        .iter()
        .map(|&i| prob.covariance(ClientId(i)).clone())
        .collect();
    let b = compute_b_matrix(&sample, prob.global_covariance()).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!(b[[i, j]].is_finite());
            assert_eq!(b[[i, j]], b[[j, i]]);
            if i != j {
                assert!(b[[i, j]] > 0.0);
            }
        }
    }
}
