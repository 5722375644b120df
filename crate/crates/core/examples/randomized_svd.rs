// Compare a randomized SVD against the exact one on a matrix with a decaying
// spectrum, with and without power iterations.

use dmdkit::linalg::DenseMatrix;
use dmdkit::svd::{exact_svd, rsvd, RsvdConfig};

fn main() {
    let (n, m) = (400, 120);
    let a = DenseMatrix::from_fn(n, m, |i, j| {
        let x = i as f64 / n as f64;
        let t = j as f64 / m as f64;
        (1..=80).map(|k| (k as f64).powf(-1.5) * (k as f64 * (x + 2.0 * t)).sin() * (k as f64 * t).cos()).sum()
    });
    let exact = exact_svd(&a).unwrap();
    let rank = 10;

    for q in [0, 1, 2] {
        let cfg = RsvdConfig { power_iterations: q, ..RsvdConfig::new(rank) };
        let approx = rsvd(&a, &cfg).unwrap();
        let worst = (0..rank)
            .map(|i| (approx.s[i] - exact.s[i]).abs() / exact.s[i])
            .fold(0.0, f64::max);
        let resid = a.sub(&approx.reconstruct()).frobenius_norm() / a.frobenius_norm();
        println!("q = {q}: max rel σ error {worst:.2e}, residual {resid:.2e}");
        if q == 2 {
            assert!(worst < 1e-2);
        }
    }
}
