//! Exact DMD from a snapshot series, and a streaming variant fed one snapshot
//! at a time through the incremental SVD.
//!
//! With `Y1 = [y_0 … y_{m-1}]`, `Y2 = [y_1 … y_m]` and the rank-`r` SVD
//! `Y1 ≈ U Σ Vᵀ`, the projected operator is `Ã = Uᵀ Y2 V Σ⁻¹`. Its
//! eigendecomposition `Ã W = W Λ` gives the modes `Ψ = Y2 V Σ⁻¹ W`, the
//! continuous eigenvalues `ω = ln λ / dt`, and the amplitudes `b` from the
//! least-squares fit `Ψ b ≈ y_0`. The signal model is
//! `ŷ(t) = Re(Ψ exp(ω (t − t0)) b)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::store::SnapshotMatrix;
use crate::svd::{exact_svd, isvd_init, rsvd, IsvdState, RsvdConfig, SvdFactors, DEFAULT_EPSILON_SVD};

/// Energy threshold used when no rank is given.
pub const DEFAULT_TAU: f64 = 1e-6;

/// Singular values at or below this fraction of the largest cannot be inverted.
pub const SINGULAR_CUTOFF: f64 = 1e-14;

/// Discrete eigenvalues at or below this magnitude have no logarithm worth keeping.
pub const ZERO_EIGENVALUE: f64 = 1e-14;

/// Imaginary part of a reconstruction, relative to its real part, above which
/// the model is flagged as not representing a real signal.
pub const IMAGINARY_TOLERANCE: f64 = 1e-8;

/// Smallest `r` with `1 − Σ_{i≤r} σ_i² / Σ σ_i² ≤ tau`.
pub fn select_rank(singular_values: &[f64], tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0, 1), got {tau}")));
    }
    if singular_values.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::InvalidArgument("singular values must be finite and non-negative".into()));
    }
    if singular_values.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("singular values must be non-increasing".into()));
    }
    if singular_values.iter().all(|&s| s == 0.0) {
        return Err(Error::AllZero);
    }
    // squares overflow past ~1e154; rescale only then so ordinary inputs
    // follow the textbook arithmetic exactly
    let mut scale = 1.0;
    if singular_values.iter().map(|s| s * s).sum::<f64>().is_infinite() {
        scale = singular_values[0];
    }
    let squares: Vec<f64> = singular_values.iter().map(|s| (s / scale) * (s / scale)).collect();
    let total: f64 = squares.iter().sum();
    let mut kept = 0.0;
    for (i, sq) in squares.iter().enumerate() {
        kept += sq;
        if 1.0 - kept / total <= tau {
            return Ok(i + 1);
        }
    }
    Ok(squares.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RankChoice {
    Fixed(usize),
    /// Energy threshold, see [`select_rank`].
    Auto(f64),
}

impl Default for RankChoice {
    fn default() -> Self {
        RankChoice::Auto(DEFAULT_TAU)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum SvdBackend {
    #[default]
    Exact,
    /// Randomized SVD. With a fixed rank the config's rank is replaced by it;
    /// with an energy threshold the config's rank bounds the search.
    Rsvd(RsvdConfig),
}

/// Fitted modes, eigenvalues and amplitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmdModel {
    n: usize,
    /// Column-major `n × rank`.
    modes: Vec<Complex64>,
    pub cont_eigs: Vec<Complex64>,
    pub disc_eigs: Vec<Complex64>,
    pub amplitudes: Vec<Complex64>,
    pub dt: f64,
    pub rank: usize,
    pub t0: f64,
}

impl DmdModel {
    /// Length of the reconstructed state vector.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self, i: usize) -> &[Complex64] {
        &self.modes[i * self.n..(i + 1) * self.n]
    }

    /// `Re(Ψ exp(ω (t − t0)) b)` together with `max|Im| / max|Re|`.
    pub fn reconstruct_checked(&self, t: f64) -> (Vec<f64>, f64) {
        let tau = t - self.t0;
        let coeffs: Vec<Complex64> = self
            .cont_eigs
            .iter()
            .zip(&self.amplitudes)
            .map(|(w, b)| b * (w * tau).exp())
            .collect();
        let mut acc = vec![Complex64::new(0.0, 0.0); self.n];
        for (i, c) in coeffs.iter().enumerate() {
            for (a, psi) in acc.iter_mut().zip(self.mode(i)) {
                *a += psi * c;
            }
        }
        let re_max = acc.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
        let im_max = acc.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        let ratio = if re_max > 0.0 { im_max / re_max } else { im_max };
        (acc.into_iter().map(|z| z.re).collect(), ratio)
    }

    pub fn is_real_at(&self, t: f64) -> bool {
        self.reconstruct_checked(t).1 <= IMAGINARY_TOLERANCE
    }
}

/// Exact DMD of a snapshot series.
pub fn fit_batch(snaps: &SnapshotMatrix, rank: RankChoice, backend: SvdBackend) -> Result<DmdModel> {
    if snaps.len() < 2 {
        return Err(Error::TooFewSnapshots {
            needed: 2,
            found: snaps.len(),
        });
    }
    let y1 = snaps.leading();
    let y2 = snaps.trailing();
    let max_rank = y1.cols().min(y1.rows());
    if let RankChoice::Fixed(r) = rank {
        if r == 0 || r > max_rank {
            return Err(Error::InvalidArgument(format!(
                "rank {r} outside [1, {max_rank}] for {} snapshots of length {}",
                snaps.len(),
                snaps.n()
            )));
        }
    }
    let factors = match backend {
        SvdBackend::Exact => exact_svd(&y1)?,
        SvdBackend::Rsvd(mut cfg) => {
            if let RankChoice::Fixed(r) = rank {
                cfg.rank = r;
            }
            rsvd(&y1, &cfg)?
        }
    };
    let r = match rank {
        RankChoice::Fixed(r) => r,
        RankChoice::Auto(tau) => select_rank(&factors.s, tau)?,
    };
    let s1 = factors.s[0];
    if s1 == 0.0 {
        return Err(Error::AllZero);
    }
    if let Some(index) = factors.s[..r].iter().position(|&s| s <= SINGULAR_CUTOFF * s1) {
        return Err(Error::SingularTruncation { index, usable: index });
    }
    project(&factors.truncate(r), &y2, snaps.snapshot(0), snaps.dt(), snaps.t0())
}

// Algorithm steps after the SVD of Y1: operator, eigenpairs, modes, amplitudes.
fn project(f: &SvdFactors, y2: &DenseMatrix, y0: &[f64], dt: f64, t0: f64) -> Result<DmdModel> {
    let r = f.rank();
    let n = y2.rows();
    let inv: Vec<f64> = f.s.iter().map(|s| 1.0 / s).collect();
    let mut b = y2.matmul(&f.v);
    b.scale_columns(&inv);
    let atilde = f.u.t_matmul(&b);

    let (lambda, w) = eigen(&atilde);
    if let Some(index) = lambda.iter().position(|l| l.norm() <= ZERO_EIGENVALUE) {
        let usable = lambda.iter().filter(|l| l.norm() > ZERO_EIGENVALUE).count();
        return Err(Error::SingularTruncation { index, usable });
    }

    let bc = b.to_nalgebra().map(|x| Complex64::new(x, 0.0));
    let psi = bc * w;
    let rhs = DMatrix::from_iterator(n, 1, y0.iter().map(|&x| Complex64::new(x, 0.0)));
    let amplitudes = psi
        .clone()
        .svd(true, true)
        .solve(&rhs, f64::EPSILON)
        .map_err(|e| Error::InvalidArgument(format!("amplitude solve failed: {e}")))?;

    Ok(DmdModel {
        n,
        modes: psi.as_slice().to_vec(),
        cont_eigs: lambda.iter().map(|l| l.ln() / dt).collect(),
        disc_eigs: lambda,
        amplitudes: amplitudes.as_slice().to_vec(),
        dt,
        rank: r,
        t0,
    })
}

// Eigenpairs of a real square matrix through the complex Schur form
// A = Q T Qᴴ. Eigenvectors of T come from back-substitution and are mapped
// back with Q. Near-conjugate pairs are then made exactly conjugate, which is
// what the real input implies.
fn eigen(a: &DenseMatrix) -> (Vec<Complex64>, DMatrix<Complex64>) {
    let r = a.rows();
    let ac = a.to_nalgebra().map(|x| Complex64::new(x, 0.0));
    let (q, t) = ac.schur().unpack();
    let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let floor = f64::EPSILON * scale;

    let mut lambda: Vec<Complex64> = (0..r).map(|i| t[(i, i)]).collect();
    let mut x = DMatrix::<Complex64>::zeros(r, r);
    for k in 0..r {
        x[(k, k)] = Complex64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let mut sum = Complex64::new(0.0, 0.0);
            for l in j + 1..=k {
                sum += t[(j, l)] * x[(l, k)];
            }
            let mut d = t[(j, j)] - lambda[k];
            if d.norm() < floor {
                d = Complex64::new(floor, 0.0);
            }
            x[(j, k)] = -sum / d;
        }
    }
    let mut w = q * x;
    for mut col in w.column_iter_mut() {
        let norm = col.norm();
        col /= Complex64::new(norm, 0.0);
    }

    let tol = 1e-8;
    let mut paired = vec![false; r];
    for i in 0..r {
        let li = lambda[i];
        if paired[i] || li.im.abs() <= 64.0 * f64::EPSILON * li.norm() {
            if !paired[i] {
                lambda[i].im = 0.0;
            }
            continue;
        }
        if li.im < 0.0 {
            continue;
        }
        let partner = (0..r)
            .filter(|&j| j != i && !paired[j] && lambda[j].im < 0.0)
            .min_by(|&a, &b| {
                let da = (lambda[a] - li.conj()).norm();
                let db = (lambda[b] - li.conj()).norm();
                da.total_cmp(&db)
            });
        if let Some(j) = partner {
            if (lambda[j] - li.conj()).norm() <= tol * li.norm() {
                paired[i] = true;
                paired[j] = true;
                lambda[j] = li.conj();
                let conj: Vec<Complex64> = w.column(i).iter().map(|z| z.conj()).collect();
                w.column_mut(j).iter_mut().zip(conj).for_each(|(a, b)| *a = b);
            }
        }
    }
    (lambda, w)
}

/// Reconstructs `ŷ(t)` (real part).
pub fn reconstruct(model: &DmdModel, t: f64) -> Vec<f64> {
    model.reconstruct_checked(t).0
}

/// One reconstructed column per requested time.
///
/// The returned matrix takes its time origin from `times[0]` (or the model's
/// `t0` when `times` is empty) and the model's `dt`; callers with irregular
/// `times` should keep their own time vector.
pub fn reconstruct_series(model: &DmdModel, times: &[f64]) -> Result<SnapshotMatrix> {
    let mut data = DenseMatrix::zeros(model.n, 0);
    for &t in times {
        data.push_column(&reconstruct(model, t))?;
    }
    SnapshotMatrix::new(data, model.dt, times.first().copied().unwrap_or(model.t0))
}

/// Streaming DMD: an incremental SVD that filters and summarizes incoming
/// snapshots, plus the buffer of accepted snapshots needed for the shifted split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamDmdState {
    pub isvd: Option<IsvdState>,
    retained: DenseMatrix,
    times: Vec<f64>,
    rank_target: usize,
    epsilon_svd: f64,
    last_t: Option<f64>,
    dt: Option<f64>,
}

pub fn stream_init(rank_target: usize, epsilon_svd: f64) -> Result<StreamDmdState> {
    if rank_target == 0 {
        return Err(Error::InvalidArgument("rank target must be at least 1".into()));
    }
    if !(epsilon_svd > 0.0) {
        return Err(Error::InvalidArgument("epsilon_svd must be positive".into()));
    }
    Ok(StreamDmdState {
        isvd: None,
        retained: DenseMatrix::zeros(0, 0),
        times: Vec::new(),
        rank_target,
        epsilon_svd,
        last_t: None,
        dt: None,
    })
}

/// Pure form of [`StreamDmdState::push`].
pub fn stream_push(state: &StreamDmdState, y: &[f64], t: f64) -> Result<StreamDmdState> {
    let mut next = state.clone();
    next.push(y, t)?;
    Ok(next)
}

pub fn stream_finalize(state: &StreamDmdState) -> Result<DmdModel> {
    state.finalize()
}

impl StreamDmdState {
    pub fn new(rank_target: usize) -> Result<Self> {
        stream_init(rank_target, DEFAULT_EPSILON_SVD)
    }

    pub fn rank_target(&self) -> usize {
        self.rank_target
    }

    pub fn epsilon_svd(&self) -> f64 {
        self.epsilon_svd
    }

    pub fn accepted_count(&self) -> usize {
        self.isvd.as_ref().map_or(0, |s| s.accepted_count)
    }

    pub fn seen_count(&self) -> usize {
        self.isvd.as_ref().map_or(0, |s| s.seen_count)
    }

    /// Timestamps of the retained snapshots.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Accepted snapshots as a series on the pushed time grid.
    pub fn retained(&self) -> Result<SnapshotMatrix> {
        SnapshotMatrix::new(
            self.retained.clone(),
            self.dt.unwrap_or(1.0),
            self.times.first().copied().unwrap_or(0.0),
        )
    }

    /// Feeds one snapshot taken at time `t`. Returns whether it was retained.
    ///
    /// Times must increase. The sampling interval is taken from the first two
    /// pushes, so snapshots skipped as duplicates leave gaps in the retained
    /// series rather than shifting the clock.
    pub fn push(&mut self, y: &[f64], t: f64) -> Result<bool> {
        if !t.is_finite() {
            return Err(Error::NonFinite);
        }
        if let Some(last) = self.last_t {
            if t <= last {
                return Err(Error::InvalidArgument(format!(
                    "snapshot time {t} does not follow {last}"
                )));
            }
        }
        let accepted = match &mut self.isvd {
            None => {
                self.isvd = Some(isvd_init(y, self.rank_target, self.epsilon_svd)?);
                self.retained = DenseMatrix::zeros(y.len(), 0);
                true
            }
            Some(isvd) => isvd.push(y)?,
        };
        if let (Some(last), None) = (self.last_t, self.dt) {
            self.dt = Some(t - last);
        }
        self.last_t = Some(t);
        if accepted {
            self.retained.push_column(y)?;
            self.times.push(t);
        }
        Ok(accepted)
    }

    /// Exact DMD on the retained snapshots at the target rank.
    ///
    /// The shifted-split SVD is recomputed from the retained columns. When the
    /// data supports fewer than `rank_target` modes the rank drops to what is
    /// usable and the model's `rank` reports it.
    pub fn finalize(&self) -> Result<DmdModel> {
        let accepted = self.accepted_count();
        let retained = self.retained.cols();
        if retained < 2 || accepted < self.rank_target {
            return Err(Error::NotEnoughSnapshots {
                accepted,
                needed: self.rank_target.max(2),
            });
        }
        let snaps = self.retained()?;
        let mut r = self.rank_target.min(retained - 1).min(snaps.n());
        loop {
            match fit_batch(&snaps, RankChoice::Fixed(r), SvdBackend::Exact) {
                Err(Error::SingularTruncation { usable, .. }) if usable > 0 && usable < r => r = usable,
                other => return other,
            }
        }
    }
}
