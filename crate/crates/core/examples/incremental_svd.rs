// Build an SVD one column at a time and check it against the batch result.

use dmdkit::linalg::DenseMatrix;
use dmdkit::svd::{exact_svd, isvd_init, DEFAULT_EPSILON_SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = DenseMatrix::from_fn(80, 25, |_, _| StandardNormal.sample(&mut rng));

    let mut state = isvd_init(a.col(0), 25, DEFAULT_EPSILON_SVD).unwrap();
    for j in 1..a.cols() {
        state.push(a.col(j)).unwrap();
    }
    // a column already in the span is skipped
    let accepted = state.push(a.col(4)).unwrap();

    let exact = exact_svd(&a).unwrap();
    let worst = exact
        .s
        .iter()
        .zip(&state.factors.s)
        .map(|(e, i)| (e - i).abs() / e)
        .fold(0.0, f64::max);
    println!(
        "rank {}, accepted {}/{} (repeat accepted: {accepted})",
        state.rank(),
        state.accepted_count,
        state.seen_count
    );
    println!("max rel σ error {worst:.2e}, ‖UᵀU − I‖ {:.2e}", state.factors.u.orthonormality_residual());
    assert!(!accepted && worst < 1e-10);
}
