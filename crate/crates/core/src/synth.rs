//! Synthetic snapshot series with known modal content.
//!
//! * `linear_lattice`: `y_{k+1} = A y_k` with `A = P diag(λ) Pᵀ`, `P` identity
//!   or a seeded random orthogonal matrix. The eigenvalues are returned.
//! * `traveling_wave`: `a·sin(κx − ωt)` on `x_j = 2πj/nx`. Two modes, `λ = e^{±iωΔt}`.
//! * `advecting_front`: a smooth periodic plateau bounded by two tanh fronts,
//!   translating in x at constant speed. Its discrete mass is conserved.
//! * `rising_blob`: a 2-D Gaussian moving upward through a frame, periodic in y.
//!
//! The last two produce values in `[0, 1]` and are suited to frame rendering.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{self, FrameSpec};
use crate::linalg::{householder_qr, DenseMatrix};
use crate::store::SnapshotMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Mixing {
    Identity,
    /// Seeded random orthogonal basis.
    RandomOrthogonal,
}

/// Modal coordinates of the first snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitialState {
    Ones,
    /// Every modal trajectory `c_i λ_i^k`, `k < m`, has unit Euclidean norm.
    Balanced,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GeneratorKind {
    LinearLattice {
        eigenvalues: Vec<f64>,
        mixing: Mixing,
        initial: InitialState,
    },
    TravelingWave {
        wavenumber: f64,
        frequency: f64,
        amplitude: f64,
    },
    AdvectingFront {
        /// Grid cells travelled per unit time.
        speed: f64,
        /// Front thickness in cells.
        width: f64,
        /// Fraction of the domain inside the plateau.
        fill: f64,
    },
    RisingBlob {
        /// Standard deviation in pixels.
        sigma: f64,
        /// Pixels travelled per unit time.
        speed: f64,
    },
}

impl GeneratorKind {
    pub const NAMES: [&'static str; 4] = ["linear_lattice", "traveling_wave", "advecting_front", "rising_blob"];

    pub fn name(&self) -> &'static str {
        match self {
            GeneratorKind::LinearLattice { .. } => Self::NAMES[0],
            GeneratorKind::TravelingWave { .. } => Self::NAMES[1],
            GeneratorKind::AdvectingFront { .. } => Self::NAMES[2],
            GeneratorKind::RisingBlob { .. } => Self::NAMES[3],
        }
    }

    /// Default parameters for a kind given by name.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "linear_lattice" => GeneratorKind::LinearLattice {
                eigenvalues: linspace(0.5, 1.0, 6),
                mixing: Mixing::RandomOrthogonal,
                initial: InitialState::Balanced,
            },
            "traveling_wave" => GeneratorKind::TravelingWave {
                wavenumber: 1.0,
                frequency: 1.0,
                amplitude: 1.0,
            },
            "advecting_front" => GeneratorKind::AdvectingFront {
                speed: 1.0,
                width: 4.0,
                fill: 0.5,
            },
            "rising_blob" => GeneratorKind::RisingBlob {
                sigma: 8.0,
                speed: 0.4,
            },
            other => {
                return Err(Error::BadSpec(format!(
                    "unknown kind `{other}`, expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_name(s)
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub nx: usize,
    /// Rows for the 2-D kinds; `1` otherwise.
    pub ny: usize,
    pub steps: usize,
    pub dt: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    /// Spec with the kind's default parameters and grid.
    pub fn defaults(kind: GeneratorKind) -> Self {
        let (nx, ny, steps) = match kind {
            GeneratorKind::LinearLattice { .. } => (64, 1, 40),
            GeneratorKind::TravelingWave { .. } => (64, 1, 50),
            GeneratorKind::AdvectingFront { .. } => (256, 1, 100),
            GeneratorKind::RisingBlob { .. } => (48, 96, 240),
        };
        Self {
            kind,
            nx,
            ny,
            steps,
            dt: if ny > 1 { 1.0 } else { 0.1 },
            seed: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.nx * self.ny
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadSpec(msg));
        if self.steps < 2 {
            return bad(format!("need at least 2 steps, got {}", self.steps));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.nx == 0 || self.ny == 0 {
            return bad(format!("empty grid {}x{}", self.nx, self.ny));
        }
        match &self.kind {
            GeneratorKind::LinearLattice {
                eigenvalues, initial, ..
            } => {
                if eigenvalues.is_empty() || eigenvalues.len() > self.n() {
                    return bad(format!(
                        "{} eigenvalues do not fit {} degrees of freedom",
                        eigenvalues.len(),
                        self.n()
                    ));
                }
                if eigenvalues.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
                    return bad("eigenvalues must be positive and finite".into());
                }
                if let InitialState::Explicit(c) = initial {
                    if c.len() != eigenvalues.len() || c.iter().any(|v| !v.is_finite()) {
                        return bad("initial coefficients must match the eigenvalues".into());
                    }
                }
            }
            GeneratorKind::TravelingWave {
                wavenumber,
                frequency,
                amplitude,
            } => {
                if ![wavenumber, frequency, amplitude].iter().all(|v| v.is_finite()) {
                    return bad("wave parameters must be finite".into());
                }
            }
            GeneratorKind::AdvectingFront { speed, width, fill } => {
                if !speed.is_finite() || !(*width > 0.0) || !(*fill > 0.0 && *fill < 1.0) {
                    return bad("front needs finite speed, width > 0 and fill in (0, 1)".into());
                }
            }
            GeneratorKind::RisingBlob { sigma, speed } => {
                if !(*sigma > 0.0) || !speed.is_finite() {
                    return bad("blob needs sigma > 0 and finite speed".into());
                }
            }
        }
        Ok(())
    }

    /// Frame geometry for rendering: `nx` wide, `ny` tall.
    pub fn frame_spec(&self) -> Result<FrameSpec> {
        FrameSpec::gray(self.nx, self.ny)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub snapshots: SnapshotMatrix,
    /// Discrete-time eigenvalues, when the generator knows them.
    pub eigenvalues: Option<Vec<Complex64>>,
}

pub fn generate(spec: &GeneratorSpec) -> Result<Generated> {
    spec.validate()?;
    let n = spec.n();
    let m = spec.steps;
    let t = |k: usize| k as f64 * spec.dt;
    let (data, eigenvalues) = match &spec.kind {
        GeneratorKind::LinearLattice {
            eigenvalues,
            mixing,
            initial,
        } => {
            let r = eigenvalues.len();
            let p = match mixing {
                Mixing::Identity => DenseMatrix::from_fn(n, r, |i, j| if i == j { 1.0 } else { 0.0 }),
                Mixing::RandomOrthogonal => {
                    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                    let g = DenseMatrix::from_fn(n, r, |_, _| StandardNormal.sample(&mut rng));
                    householder_qr(&g).0
                }
            };
            let c: Vec<f64> = match initial {
                InitialState::Ones => vec![1.0; r],
                InitialState::Balanced => eigenvalues
                    .iter()
                    .map(|l| 1.0 / (0..m).map(|k| l.powi(2 * k as i32)).sum::<f64>().sqrt())
                    .collect(),
                InitialState::Explicit(c) => c.clone(),
            };
            // modal coordinates evolve by repeated multiplication, the
            // recurrence itself rather than a closed form
            let mut z = c;
            let mut data = DenseMatrix::zeros(n, 0);
            for _ in 0..m {
                data.push_column(&p.matvec(&z))?;
                z.iter_mut().zip(eigenvalues).for_each(|(z, l)| *z *= l);
            }
            let eig = eigenvalues.iter().map(|&l| Complex64::new(l, 0.0)).collect();
            (data, Some(eig))
        }
        GeneratorKind::TravelingWave {
            wavenumber,
            frequency,
            amplitude,
        } => {
            let data = DenseMatrix::from_fn(n, m, |j, k| {
                let x = 2.0 * PI * (j % spec.nx) as f64 / spec.nx as f64;
                amplitude * (wavenumber * x - frequency * t(k)).sin()
            });
            let arg = frequency * spec.dt;
            let eig = vec![Complex64::from_polar(1.0, arg), Complex64::from_polar(1.0, -arg)];
            (data, Some(eig))
        }
        GeneratorKind::AdvectingFront { speed, width, fill } => {
            let nx = spec.nx as f64;
            let half = fill * nx / 2.0;
            let data = DenseMatrix::from_fn(n, m, |i, k| {
                let x = (i % spec.nx) as f64 + 0.5;
                let center = nx / 4.0 + speed * t(k);
                // signed distance to the plateau center on the periodic grid
                let d = (x - center).rem_euclid(nx) - nx / 2.0;
                0.5 * (((d + half) / width).tanh() - ((d - half) / width).tanh())
            });
            (data, None)
        }
        GeneratorKind::RisingBlob { sigma, speed } => {
            let (w, h) = (spec.nx as f64, spec.ny as f64);
            let data = DenseMatrix::from_fn(n, m, |i, k| {
                let col = (i % spec.nx) as f64;
                let row = (i / spec.nx) as f64;
                let cy = (0.75 * h - speed * t(k)).rem_euclid(h);
                let dx = col - w / 2.0;
                let mut v = 0.0;
                for image in [-1.0, 0.0, 1.0] {
                    let dy = row - cy + image * h;
                    v += (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                }
                v.min(1.0)
            });
            (data, None)
        }
    };
    Ok(Generated {
        snapshots: SnapshotMatrix::new(data, spec.dt, 0.0)?,
        eigenvalues,
    })
}

/// Writes one frame per step into `out_dir`, then the end-of-stream marker.
/// Returns the number of frames.
///
/// Kinds whose values already lie in `[0, 1]` are written as is; the others
/// are mapped affinely from their overall range.
pub fn render_frames(spec: &GeneratorSpec, out_dir: impl AsRef<Path>) -> Result<usize> {
    let generated = generate(spec)?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let frame = spec.frame_spec()?;
    let data = generated.snapshots.data();
    let (lo, hi) = match spec.kind {
        GeneratorKind::AdvectingFront { .. } | GeneratorKind::RisingBlob { .. } => (0.0, 1.0),
        _ => {
            let lo = data.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = data.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, if hi > lo { hi } else { lo + 1.0 })
        }
    };
    for (k, col) in data.columns().enumerate() {
        let v: Vec<f64> = col.iter().map(|x| (x - lo) / (hi - lo)).collect();
        imageio::write_frame(out_dir, k, &imageio::vector_to_frame(&v, &frame)?)?;
    }
    imageio::finish_stream(out_dir)?;
    Ok(data.cols())
}

pub fn linspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![a],
        _ => (0..count).map(|i| a + (b - a) * i as f64 / (count - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(eigenvalues: Vec<f64>, mixing: Mixing, initial: InitialState, nx: usize, steps: usize) -> GeneratorSpec {
        GeneratorSpec {
            kind: GeneratorKind::LinearLattice {
                eigenvalues,
                mixing,
                initial,
            },
            nx,
            ny: 1,
            steps,
            dt: 1.0,
            seed: 3,
        }
    }

    #[test]
    fn diag_lattice_columns() {
        let spec = lattice(vec![2.0, 0.5], Mixing::Identity, InitialState::Ones, 2, 10);
        let g = generate(&spec).unwrap();
        for k in 0..10 {
            assert_eq!(g.snapshots.snapshot(k), &[2f64.powi(k as i32), 0.5f64.powi(k as i32)]);
        }
        assert_eq!(g.eigenvalues.unwrap().len(), 2);
    }

    #[test]
    fn random_mixing_is_a_linear_map() {
        // any two-mode linear recurrence obeys y_{k+2} = (λ1+λ2) y_{k+1} − λ1λ2 y_k
        let spec = lattice(vec![1.1, 0.7], Mixing::RandomOrthogonal, InitialState::Ones, 6, 8);
        let s = generate(&spec).unwrap().snapshots;
        for k in 0..6 {
            for i in 0..6 {
                let lhs = s.snapshot(k + 2)[i];
                let rhs = 1.8 * s.snapshot(k + 1)[i] - 0.77 * s.snapshot(k)[i];
                assert!((lhs - rhs).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn traveling_wave_starts_as_sine() {
        let spec = GeneratorSpec::defaults(GeneratorKind::from_name("traveling_wave").unwrap());
        let g = generate(&spec).unwrap();
        for (j, v) in g.snapshots.snapshot(0).iter().enumerate() {
            assert_eq!(*v, (2.0 * PI * j as f64 / 64.0).sin());
        }
        assert_eq!(g.snapshots.len(), 50);
    }

    #[test]
    fn front_conserves_mass() {
        let spec = GeneratorSpec::defaults(GeneratorKind::from_name("advecting_front").unwrap());
        let s = generate(&spec).unwrap().snapshots;
        let dx = 1.0 / spec.nx as f64;
        let mass: Vec<f64> = s.data().columns().map(|c| c.iter().sum::<f64>() * dx).collect();
        for m in &mass {
            assert!((m - mass[0]).abs() <= 1e-10 * mass[0], "{m} vs {}", mass[0]);
        }
        assert!(s.data().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn front_with_fractional_speed_conserves_mass() {
        let mut spec = GeneratorSpec::defaults(GeneratorKind::AdvectingFront {
            speed: 0.37,
            width: 4.0,
            fill: 0.3,
        });
        spec.dt = 1.0;
        let s = generate(&spec).unwrap().snapshots;
        let m0: f64 = s.snapshot(0).iter().sum();
        for c in s.data().columns() {
            assert!((c.iter().sum::<f64>() - m0).abs() <= 1e-10 * m0);
        }
    }

    #[test]
    fn blob_moves_up() {
        let spec = GeneratorSpec::defaults(GeneratorKind::from_name("rising_blob").unwrap());
        let s = generate(&spec).unwrap().snapshots;
        let peak_row = |k: usize| {
            let c = s.snapshot(k);
            (0..c.len()).max_by(|&a, &b| c[a].total_cmp(&c[b])).unwrap() / spec.nx
        };
        assert!(peak_row(10) < peak_row(0));
        assert!(s.data().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn deterministic() {
        let spec = lattice(linspace(0.3, 2.0, 10), Mixing::RandomOrthogonal, InitialState::Balanced, 64, 40);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }

    #[test]
    fn bad_specs() {
        let mut spec = GeneratorSpec::defaults(GeneratorKind::from_name("rising_blob").unwrap());
        spec.steps = 0;
        assert!(matches!(generate(&spec), Err(Error::BadSpec(_))));
        assert!(matches!(GeneratorKind::from_name("vortex"), Err(Error::BadSpec(_))));
        let spec = lattice(vec![1.0; 5], Mixing::Identity, InitialState::Ones, 3, 4);
        assert!(matches!(generate(&spec), Err(Error::BadSpec(_))));
    }

    #[test]
    fn frames_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = GeneratorSpec::defaults(GeneratorKind::from_name("rising_blob").unwrap());
        spec.nx = 12;
        spec.ny = 20;
        spec.steps = 6;
        spec.kind = GeneratorKind::RisingBlob { sigma: 3.0, speed: 1.0 };
        assert_eq!(render_frames(&spec, dir.path()).unwrap(), 6);
        let s = generate(&spec).unwrap().snapshots;
        let frame = spec.frame_spec().unwrap();
        for k in 0..6 {
            let bytes = std::fs::read(dir.path().join(imageio::frame_name(k))).unwrap();
            let v = imageio::frame_to_vector(&bytes, &frame).unwrap();
            for (a, b) in v.iter().zip(s.snapshot(k)) {
                assert!((a - b).abs() <= 1.0 / 255.0);
            }
        }
        assert!(dir.path().join(imageio::END_OF_STREAM).exists());
        let first = std::fs::read(dir.path().join(imageio::frame_name(0))).unwrap();
        let again = tempfile::tempdir().unwrap();
        render_frames(&spec, again.path()).unwrap();
        assert_eq!(first, std::fs::read(again.path().join(imageio::frame_name(0))).unwrap());
    }
}
