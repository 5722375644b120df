//! Singular value decompositions: a one-sided Jacobi kernel, a seeded
//! randomized range-finder variant, and an incremental (column-append) update.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, householder_qr, norm2, DenseMatrix};

/// Relevance threshold on the projection residual of a new snapshot.
pub const DEFAULT_EPSILON_SVD: f64 = 1e-15;

/// Loss of orthogonality in `U` (largest off-diagonal of `UᵀU`) that triggers a QR pass.
pub const REORTHOGONALIZE_ABOVE: f64 = 1e-12;

// A snapshot whose residual and basis coefficients both match an absorbed
// snapshot to this relative level is a duplicate.
const DUPLICATE_TOLERANCE: f64 = 1e-12;

const MAX_SWEEPS: usize = 80;

/// Thin SVD `M ≈ U·diag(S)·Vᵀ` with singular values sorted non-increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvdFactors {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub v: DenseMatrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Keeps the leading `r` triplets.
    pub fn truncate(&self, r: usize) -> SvdFactors {
        let r = r.min(self.rank());
        SvdFactors {
            u: self.u.col_range(0..r),
            s: self.s[..r].to_vec(),
            v: self.v.col_range(0..r),
        }
    }

    /// `U·diag(S)·Vᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        us.scale_columns(&self.s);
        us.matmul(&self.v.transpose())
    }
}

/// Full thin SVD by one-sided Jacobi rotations.
///
/// Returns `min(rows, cols)` triplets. Columns of `U` belonging to zero
/// singular values are completed to an orthonormal set.
pub fn exact_svd(m: &DenseMatrix) -> Result<SvdFactors> {
    if m.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    if m.cols() > m.rows() {
        let t = exact_svd(&m.transpose())?;
        let mut f = SvdFactors {
            u: t.v,
            s: t.s,
            v: t.u,
        };
        normalize_signs(&mut f);
        return Ok(f);
    }
    // tall input: Jacobi on the small triangular factor
    if m.rows() >= 2 * m.cols() {
        let (q, r) = householder_qr(m);
        let inner = jacobi_tall(&r);
        let mut f = SvdFactors {
            u: q.matmul(&inner.u),
            s: inner.s,
            v: inner.v,
        };
        normalize_signs(&mut f);
        return Ok(f);
    }
    let mut f = jacobi_tall(m);
    normalize_signs(&mut f);
    Ok(f)
}

// Hestenes one-sided Jacobi for rows >= cols.
fn jacobi_tall(a: &DenseMatrix) -> SvdFactors {
    let (rows, n) = a.shape();
    let mut w = a.clone();
    let mut v = DenseMatrix::identity(n);
    let tol = f64::EPSILON * (rows as f64).sqrt().max(1.0);

    let mut norms: Vec<f64> = w.columns().map(|c| dot(c, c)).collect();
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(w.col(p), w.col(q));
                if gamma.abs() <= tol * alpha.sqrt() * beta.sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
                norms[p] = dot(w.col(p), w.col(p));
                norms[q] = dot(w.col(q), w.col(q));
            }
        }
        if !rotated {
            break;
        }
    }

    let sigma: Vec<f64> = w.columns().map(norm2).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal values keep sweep order
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));

    let mut u = DenseMatrix::zeros(rows, n);
    let mut vs = DenseMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        s.push(sigma[j]);
        vs.col_mut(k).copy_from_slice(v.col(j));
        if sigma[j] > 0.0 {
            let inv = 1.0 / sigma[j];
            for (dst, src) in u.col_mut(k).iter_mut().zip(w.col(j)) {
                *dst = src * inv;
            }
        } else {
            missing.push(k);
        }
    }
    complete_basis(&mut u, &missing);
    SvdFactors { u, s, v: vs }
}

#[inline]
fn rotate(m: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    let (cp, cq) = m.col_pair_mut(p, q);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

// Fills the listed (zero) columns with unit vectors orthogonal to the rest.
fn complete_basis(u: &mut DenseMatrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let rows = u.rows();
    let mut filled: Vec<usize> = (0..u.cols()).filter(|k| !missing.contains(k)).collect();
    let mut candidate = 0;
    for &k in missing {
        while candidate < rows {
            let mut e = vec![0.0; rows];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &j in &filled {
                    let p = dot(u.col(j), &e);
                    axpy(-p, u.col(j), &mut e);
                }
            }
            let nrm = norm2(&e);
            if nrm > 0.5 {
                e.iter_mut().for_each(|x| *x /= nrm);
                u.col_mut(k).copy_from_slice(&e);
                filled.push(k);
                break;
            }
        }
    }
}

/// Makes the largest-magnitude entry of every `U` column positive, flipping
/// the matching `V` column.
fn normalize_signs(f: &mut SvdFactors) {
    for k in 0..f.rank() {
        let col = f.u.col(k);
        let mut best = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            f.u.col_mut(k).iter_mut().for_each(|x| *x = -*x);
            f.v.col_mut(k).iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Parameters of the randomized SVD.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsvdConfig {
    pub rank: usize,
    pub oversampling: usize,
    pub power_iterations: usize,
    pub seed: u64,
}

impl RsvdConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            oversampling: 10,
            power_iterations: 2,
            seed: 0x5eed,
        }
    }
}

/// Randomized SVD: Gaussian sketch, `q` power iterations, QR projection and a
/// small dense SVD lifted back through the basis.
///
/// The sketch is re-orthonormalized between power iterations; this leaves the
/// spanned subspace unchanged and avoids overflow on steep spectra.
pub fn rsvd(m: &DenseMatrix, cfg: &RsvdConfig) -> Result<SvdFactors> {
    if m.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let limit = m.rows().min(m.cols());
    if cfg.rank == 0 {
        return Err(Error::InvalidArgument("rsvd rank must be at least 1".into()));
    }
    if cfg.rank + cfg.oversampling > limit {
        return Err(Error::RankTooLarge {
            rank: cfg.rank,
            oversampling: cfg.oversampling,
            limit,
        });
    }
    let k = cfg.rank + cfg.oversampling;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let test = DenseMatrix::from_fn(m.cols(), k, |_, _| StandardNormal.sample(&mut rng));

    let mut q = householder_qr(&m.matmul(&test)).0;
    for _ in 0..cfg.power_iterations {
        let z = m.matmul(&m.t_matmul(&q));
        q = householder_qr(&z).0;
    }
    let b = q.t_matmul(m);
    let small = exact_svd(&b)?;
    let mut f = SvdFactors {
        u: q.matmul(&small.u),
        s: small.s,
        v: small.v,
    }
    .truncate(cfg.rank);
    normalize_signs(&mut f);
    Ok(f)
}

/// Incrementally maintained SVD of a growing column set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsvdState {
    pub factors: SvdFactors,
    pub max_rank: usize,
    pub epsilon_svd: f64,
    pub accepted_count: usize,
    pub seen_count: usize,
    /// Frobenius norm of everything dropped by rank truncation so far.
    pub truncation_loss: f64,
}

/// Starts an incremental SVD from a single snapshot.
pub fn isvd_init(y: &[f64], max_rank: usize, epsilon_svd: f64) -> Result<IsvdState> {
    if max_rank == 0 {
        return Err(Error::InvalidArgument("max_rank must be at least 1".into()));
    }
    if !(epsilon_svd > 0.0) {
        return Err(Error::InvalidArgument("epsilon_svd must be positive".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let norm = norm2(y);
    if norm == 0.0 {
        return Err(Error::ZeroSnapshot);
    }
    let u = DenseMatrix::from_raw(y.len(), 1, y.iter().map(|v| v / norm).collect());
    Ok(IsvdState {
        factors: SvdFactors {
            u,
            s: vec![norm],
            v: DenseMatrix::identity(1),
        },
        max_rank,
        epsilon_svd,
        accepted_count: 1,
        seen_count: 1,
        truncation_loss: 0.0,
    })
}

/// Pure form of [`IsvdState::push`].
pub fn isvd_update(state: &IsvdState, y: &[f64]) -> Result<IsvdState> {
    let mut next = state.clone();
    next.push(y)?;
    Ok(next)
}

impl IsvdState {
    pub fn rank(&self) -> usize {
        self.factors.rank()
    }

    /// Absorbs one snapshot. Returns whether it changed the factorization.
    ///
    /// A snapshot that duplicates an absorbed one is skipped. Otherwise its
    /// residual `g` against the current basis decides the update: above
    /// `epsilon_svd` (and below the rank cap) the residual direction joins the
    /// basis, else only the projection onto the current basis is absorbed and
    /// the span of `U` is left unchanged.
    pub fn push(&mut self, y: &[f64]) -> Result<bool> {
        let n = self.factors.u.rows();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        self.seen_count += 1;

        let u = &self.factors.u;
        // l = Uᵀy with one refinement pass; g is the norm of the explicit
        // residual, i.e. sqrt(max(0, yᵀy − lᵀl)) without the cancellation
        let mut l = u.t_matvec(y);
        let mut residual = y.to_vec();
        for (j, &c) in l.iter().enumerate() {
            axpy(-c, u.col(j), &mut residual);
        }
        let refine = u.t_matvec(&residual);
        for (j, &c) in refine.iter().enumerate() {
            axpy(-c, u.col(j), &mut residual);
            l[j] += c;
        }
        let g = norm2(&residual);

        if g <= DUPLICATE_TOLERANCE * norm2(y) && self.is_duplicate(&l, norm2(y)) {
            return Ok(false);
        }
        self.accepted_count += 1;

        let k = self.rank();
        if g > self.epsilon_svd && k < self.max_rank && k < n {
            let mut h: Vec<f64> = residual.iter().map(|v| v / g).collect();
            for _ in 0..2 {
                let p = u.t_matvec(&h);
                for (j, &c) in p.iter().enumerate() {
                    axpy(-c, u.col(j), &mut h);
                }
                let hn = norm2(&h);
                h.iter_mut().for_each(|v| *v /= hn);
            }
            // bordered core [[Σ, l], [0, g]]
            let core = DenseMatrix::from_fn(k + 1, k + 1, |i, j| {
                if j == k {
                    if i == k {
                        g
                    } else {
                        l[i]
                    }
                } else if i == j {
                    self.factors.s[i]
                } else {
                    0.0
                }
            });
            let inner = exact_svd(&core)?;
            let mut basis = self.factors.u.clone();
            basis.push_column(&h)?;
            self.factors = SvdFactors {
                u: basis.matmul(&inner.u),
                s: inner.s,
                v: bordered_v(&self.factors.v).matmul(&inner.v),
            };
        } else {
            // g below the threshold, or rank saturated: the residual
            // direction h is dropped and only the projection U·l enters
            let core = DenseMatrix::from_fn(k, k + 1, |i, j| {
                if j == k {
                    l[i]
                } else if i == j {
                    self.factors.s[i]
                } else {
                    0.0
                }
            });
            let inner = exact_svd(&core)?;
            self.factors = SvdFactors {
                u: self.factors.u.matmul(&inner.u),
                s: inner.s,
                v: bordered_v(&self.factors.v).matmul(&inner.v),
            };
            self.truncation_loss = self.truncation_loss.hypot(g);
        }

        if self.factors.u.max_off_diagonal_gram() > REORTHOGONALIZE_ABOVE {
            self.reorthogonalize()?;
        }
        Ok(true)
    }

    // U = QR, then re-diagonalize R·Σ so that U·Σ·Vᵀ is unchanged.
    fn reorthogonalize(&mut self) -> Result<()> {
        let (q, r) = householder_qr(&self.factors.u);
        let mut rs = r;
        rs.scale_columns(&self.factors.s);
        let inner = exact_svd(&rs)?;
        self.factors = SvdFactors {
            u: q.matmul(&inner.u),
            s: inner.s,
            v: self.factors.v.matmul(&inner.v),
        };
        Ok(())
    }

    fn is_duplicate(&self, l: &[f64], ynorm: f64) -> bool {
        let tol = DUPLICATE_TOLERANCE * ynorm;
        // absorbed snapshot j has basis coefficients Σ·V[j, :]ᵀ
        let v = &self.factors.v;
        let s = &self.factors.s;
        (0..v.rows()).any(|j| {
            let d2: f64 = (0..s.len())
                .map(|i| {
                    let d = l[i] - s[i] * v[(j, i)];
                    d * d
                })
                .sum();
            d2.sqrt() <= tol
        })
    }
}

// [[V, 0], [0, 1]]
fn bordered_v(v: &DenseMatrix) -> DenseMatrix {
    let (m, k) = v.shape();
    DenseMatrix::from_fn(m + 1, k + 1, |i, j| {
        if i < m && j < k {
            v[(i, j)]
        } else if i == m && j == k {
            1.0
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    // independent oracle: singular values from the symmetric eigenproblem of MᵀM
    fn gram_singular_values(m: &DenseMatrix) -> Vec<f64> {
        let g = m.t_matmul(m).to_nalgebra();
        let mut ev: Vec<f64> = nalgebra::SymmetricEigen::new(g)
            .eigenvalues
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    fn assert_factors_valid(f: &SvdFactors) {
        assert!(f.u.orthonormality_residual() <= 1e-10);
        assert!(f.v.orthonormality_residual() <= 1e-10);
        assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
        assert!(f.s.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let f = exact_svd(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(f.s, vec![1.0, 1.0, 1.0]);
        assert_factors_valid(&f);
    }

    #[test]
    fn diagonal_with_negative_entry() {
        let m = DenseMatrix::from_column_major(2, 2, vec![3.0, 0.0, 0.0, -2.0]).unwrap();
        let f = exact_svd(&m).unwrap();
        assert_eq!(f.s, vec![3.0, 2.0]);
        assert!(f.reconstruct().sub(&m).max_abs() < 1e-15);
    }

    #[test]
    fn random_reconstruction_residual() {
        let m = random_matrix(6, 4, 7);
        let f = exact_svd(&m).unwrap();
        assert_eq!(f.rank(), 4);
        assert_factors_valid(&f);
        assert!(f.reconstruct().sub(&m).max_abs() <= 1e-12 * m.max_abs());
        for (a, b) in f.s.iter().zip(gram_singular_values(&m)) {
            assert!((a - b).abs() <= 1e-12 * f.s[0]);
        }
    }

    #[test]
    fn wide_and_tall_inputs() {
        for (r, c) in [(3, 8), (20, 4), (7, 7), (1, 5), (5, 1)] {
            let m = random_matrix(r, c, (r * 31 + c) as u64);
            let f = exact_svd(&m).unwrap();
            assert_eq!(f.rank(), r.min(c));
            assert_factors_valid(&f);
            assert!(f.reconstruct().sub(&m).max_abs() <= 1e-12 * m.max_abs());
        }
    }

    #[test]
    fn rank_deficient_gets_completed_basis() {
        let m = DenseMatrix::from_fn(5, 3, |i, j| (i + 1) as f64 * (j + 1) as f64);
        let f = exact_svd(&m).unwrap();
        assert_factors_valid(&f);
        assert!(f.s[1] < 1e-12 * f.s[0]);
        assert!(f.reconstruct().sub(&m).max_abs() <= 1e-12 * m.max_abs());
    }

    #[test]
    fn sign_convention_holds() {
        let f = exact_svd(&random_matrix(6, 5, 3)).unwrap();
        for k in 0..f.rank() {
            let col = f.u.col(k);
            let best = col.iter().copied().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(best > 0.0);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut values = vec![1.0; 4];
        values[2] = f64::INFINITY;
        let m = DenseMatrix::from_raw(2, 2, values);
        assert!(matches!(exact_svd(&m), Err(Error::NonFinite)));
    }

    #[test]
    fn rsvd_rank_two_matches_exact() {
        let a: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..9).map(|i| (i as f64 * 0.3).cos() + 0.1).collect();
        let c: Vec<f64> = (0..12).map(|i| (i as f64 * 0.2).cos()).collect();
        let d: Vec<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
        let m = DenseMatrix::from_fn(12, 9, |i, j| 3.0 * a[i] * b[j] + c[i] * d[j]);
        let exact = exact_svd(&m).unwrap();
        let cfg = RsvdConfig {
            rank: 2,
            oversampling: 4,
            power_iterations: 1,
            seed: 11,
        };
        let approx = rsvd(&m, &cfg).unwrap();
        assert_eq!(approx.rank(), 2);
        for k in 0..2 {
            assert!((approx.s[k] - exact.s[k]).abs() <= 1e-10 * exact.s[k]);
        }
    }

    #[test]
    fn rsvd_orthogonal_matrix() {
        let q = householder_qr(&random_matrix(5, 5, 21)).0;
        let cfg = RsvdConfig {
            rank: 5,
            oversampling: 0,
            power_iterations: 0,
            seed: 2,
        };
        let f = rsvd(&q, &cfg).unwrap();
        for s in f.s {
            assert!((s - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn power_iterations_do_not_hurt() {
        // slowly decaying spectrum 1/(k+1)
        let left = householder_qr(&random_matrix(60, 40, 5)).0;
        let right = householder_qr(&random_matrix(40, 40, 6)).0;
        let mut scaled = left.clone();
        let sig: Vec<f64> = (0..40).map(|k| 1.0 / (k as f64 + 1.0)).collect();
        scaled.scale_columns(&sig);
        let m = scaled.matmul(&right.transpose());
        let err = |q: usize| {
            let cfg = RsvdConfig {
                rank: 5,
                oversampling: 2,
                power_iterations: q,
                seed: 9,
            };
            rsvd(&m, &cfg).unwrap().reconstruct().sub(&m).frobenius_norm()
        };
        assert!(err(2) <= err(0));
    }

    #[test]
    fn rsvd_is_deterministic_and_checks_rank() {
        let m = random_matrix(30, 20, 4);
        let cfg = RsvdConfig::new(4);
        assert_eq!(rsvd(&m, &cfg).unwrap(), rsvd(&m, &cfg).unwrap());
        let too_big = RsvdConfig {
            rank: 15,
            ..RsvdConfig::new(15)
        };
        assert!(matches!(rsvd(&m, &too_big), Err(Error::RankTooLarge { .. })));
    }

    #[test]
    fn isvd_init_cases() {
        let s = isvd_init(&[3.0, 4.0], 4, DEFAULT_EPSILON_SVD).unwrap();
        assert_eq!(s.factors.s, vec![5.0]);
        assert_eq!(s.factors.u.col(0), &[0.6, 0.8]);
        assert_eq!(s.factors.v.as_slice(), &[1.0]);
        assert_eq!((s.accepted_count, s.seen_count), (1, 1));

        let s = isvd_init(&[1.0, 0.0, 0.0], 4, DEFAULT_EPSILON_SVD).unwrap();
        assert_eq!(s.factors.s, vec![1.0]);
        assert_eq!(s.factors.u.col(0), &[1.0, 0.0, 0.0]);

        let s = isvd_init(&[2.0; 4], 4, DEFAULT_EPSILON_SVD).unwrap();
        assert_eq!(s.factors.s, vec![4.0]);
        assert_eq!(s.factors.u.col(0), &[0.5; 4]);

        assert!(matches!(
            isvd_init(&[0.0, 0.0], 2, DEFAULT_EPSILON_SVD),
            Err(Error::ZeroSnapshot)
        ));
    }

    #[test]
    fn isvd_orthogonal_directions() {
        let s = isvd_init(&[1.0, 0.0, 0.0], 3, DEFAULT_EPSILON_SVD).unwrap();
        let s = isvd_update(&s, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(s.rank(), 2);
        assert!((s.factors.s[0] - 1.0).abs() < 1e-15);
        assert!((s.factors.s[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn isvd_duplicate_is_ignored() {
        let a = [0.3, -1.2, 2.5, 0.7, 1.1];
        let b = [1.0, 0.4, -0.2, 0.9, -1.3];
        let s = isvd_init(&a, 4, DEFAULT_EPSILON_SVD).unwrap();
        let s = isvd_update(&s, &b).unwrap();
        for dup in [&a, &b] {
            let next = isvd_update(&s, dup).unwrap();
            assert_eq!(next.factors, s.factors);
            assert_eq!(next.accepted_count, s.accepted_count);
            assert_eq!(next.seen_count, s.seen_count + 1);
        }
    }

    #[test]
    fn isvd_streams_to_exact_singular_values() {
        let m = random_matrix(5, 3, 99);
        let mut s = isvd_init(m.col(0), 3, DEFAULT_EPSILON_SVD).unwrap();
        for j in 1..3 {
            s = isvd_update(&s, m.col(j)).unwrap();
        }
        let exact = exact_svd(&m).unwrap();
        for (a, b) in s.factors.s.iter().zip(&exact.s) {
            assert!((a - b).abs() <= 1e-8 * b);
        }
        assert!(s.factors.reconstruct().sub(&m).max_abs() < 1e-12);
    }

    #[test]
    fn isvd_dimension_mismatch() {
        let s = isvd_init(&[1.0, 2.0], 2, DEFAULT_EPSILON_SVD).unwrap();
        assert!(matches!(
            isvd_update(&s, &[1.0]),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn isvd_saturation_keeps_rank() {
        let m = random_matrix(8, 6, 17);
        let mut s = isvd_init(m.col(0), 3, DEFAULT_EPSILON_SVD).unwrap();
        for j in 1..6 {
            s.push(m.col(j)).unwrap();
            assert!(s.rank() <= 3);
            assert!(s.factors.u.orthonormality_residual() <= 1e-10);
        }
        assert_eq!(s.accepted_count, 6);
        assert!(s.truncation_loss > 0.0);
        assert_eq!(s.factors.v.rows(), 6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn streaming_matches_batch(rows in 2usize..12, cols in 1usize..8, seed in any::<u64>()) {
                let m = random_matrix(rows, cols, seed);
                let mut s = isvd_init(m.col(0), cols, DEFAULT_EPSILON_SVD).unwrap();
                for j in 1..cols {
                    let before_rank = s.rank();
                    let before_accepted = s.accepted_count;
                    s.push(m.col(j)).unwrap();
                    prop_assert!(s.rank() <= cols);
                    prop_assert!(s.rank() >= before_rank);
                    prop_assert!(s.accepted_count >= before_accepted);
                    prop_assert!(s.factors.u.orthonormality_residual() <= 1e-10);
                }
                let exact = exact_svd(&m).unwrap();
                for (a, b) in s.factors.s.iter().zip(&exact.s) {
                    prop_assert!((a - b).abs() <= 1e-8 * exact.s[0]);
                }
            }

            #[test]
            fn exact_svd_matches_gram_oracle(rows in 1usize..10, cols in 1usize..10, seed in any::<u64>()) {
                let m = random_matrix(rows, cols, seed);
                let f = exact_svd(&m).unwrap();
                prop_assert!(f.u.orthonormality_residual() <= 1e-10);
                prop_assert!(f.reconstruct().sub(&m).max_abs() <= 1e-10 * m.max_abs().max(1e-300));
                let oracle = gram_singular_values(&m);
                for (a, b) in f.s.iter().zip(oracle) {
                    prop_assert!((a - b).abs() <= 1e-7 * f.s[0].max(1e-300));
                }
            }
        }
    }
}
