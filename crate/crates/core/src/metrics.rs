//! Reconstruction error measures: relative L2 error per snapshot, relative
//! Frobenius error over a series, conserved-mass drift and SSIM.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::store::SnapshotMatrix;

/// `‖y − ŷ‖ / ‖y‖`.
pub fn relative_error(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            found: yhat.len(),
        });
    }
    let reference = norm2(y);
    if reference == 0.0 {
        return Err(Error::ZeroReference);
    }
    let diff: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| a - b).collect();
    Ok(norm2(&diff) / reference)
}

/// `‖Y − Ŷ‖_F / ‖Y‖_F`.
pub fn frobenius_relative_error(y: &SnapshotMatrix, yhat: &SnapshotMatrix) -> Result<f64> {
    let (a, b) = (y.data(), yhat.data());
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    relative_error(a.as_slice(), b.as_slice())
}

/// `η_F` over the first `k + 1` snapshots, for every `k`.
pub fn cumulative_frobenius_error(y: &SnapshotMatrix, yhat: &SnapshotMatrix) -> Result<Vec<f64>> {
    if y.data().shape() != yhat.data().shape() {
        return Err(Error::ShapeMismatch {
            left: y.data().shape(),
            right: yhat.data().shape(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut out = Vec::with_capacity(y.len());
    for k in 0..y.len() {
        let (a, b) = (y.snapshot(k), yhat.snapshot(k));
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, z)| x - z).collect();
        num += norm2(&diff).powi(2);
        den += norm2(a).powi(2);
        if den == 0.0 {
            return Err(Error::ZeroReference);
        }
        out.push((num / den).sqrt());
    }
    Ok(out)
}

/// Midpoint-rule integral of a field on a uniform grid.
pub fn conserved_quantity(field: &[f64], cell_volume: f64) -> f64 {
    cell_volume * field.iter().sum::<f64>()
}

/// `|M_t − M̂_t| / |M_t|` for every snapshot.
pub fn conserved_quantity_error(
    field_series: &SnapshotMatrix,
    dmd_series: &SnapshotMatrix,
    cell_volume: f64,
) -> Result<Vec<f64>> {
    if field_series.data().shape() != dmd_series.data().shape() {
        return Err(Error::ShapeMismatch {
            left: field_series.data().shape(),
            right: dmd_series.data().shape(),
        });
    }
    (0..field_series.len())
        .map(|k| {
            let m = conserved_quantity(field_series.snapshot(k), cell_volume);
            if m == 0.0 {
                return Err(Error::ZeroMass(k));
            }
            let mhat = conserved_quantity(dmd_series.snapshot(k), cell_volume);
            Ok((m - mhat).abs() / m.abs())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "SSIM window must be odd and at least 3, got {}",
                self.window
            )));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.data_range > 0.0) {
            return Err(Error::InvalidArgument("SSIM constants must be positive".into()));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }
}

/// Mean structural similarity of two row-major images of `width × height`
/// pixels, over every fully contained square window.
///
/// Window statistics use the unweighted mean and the sample (N − 1)
/// covariance.
pub fn ssim(img1: &[f64], img2: &[f64], width: usize, height: usize, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    let len = width * height;
    if img1.len() != len || img2.len() != len {
        return Err(Error::ShapeMismatch {
            left: (img1.len(), 1),
            right: (img2.len(), 1),
        });
    }
    let w = params.window;
    if w > width || w > height {
        return Err(Error::WindowTooLarge {
            window: w,
            width,
            height,
        });
    }
    let (c1, c2) = (params.c1(), params.c2());
    let count = (w * w) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    let mut a = vec![0.0; w * w];
    let mut b = vec![0.0; w * w];
    for top in 0..=height - w {
        for left in 0..=width - w {
            for r in 0..w {
                let row = (top + r) * width + left;
                a[r * w..(r + 1) * w].copy_from_slice(&img1[row..row + w]);
                b[r * w..(r + 1) * w].copy_from_slice(&img2[row..row + w]);
            }
            let mu1 = a.iter().sum::<f64>() / count;
            let mu2 = b.iter().sum::<f64>() / count;
            let (mut v1, mut v2, mut cov) = (0.0, 0.0, 0.0);
            for (x, y) in a.iter().zip(&b) {
                let (dx, dy) = (x - mu1, y - mu2);
                v1 += dx * dx;
                v2 += dy * dy;
                cov += dx * dy;
            }
            let norm = count - 1.0;
            let (v1, v2, cov) = (v1 / norm, v2 / norm, cov / norm);
            total += ((2.0 * mu1 * mu2 + c1) * (2.0 * cov + c2)) / ((mu1 * mu1 + mu2 * mu2 + c1) * (v1 + v2 + c2));
            windows += 1;
        }
    }
    Ok((total / windows as f64).clamp(-1.0, 1.0))
}

/// One line of a metric report. Columns that do not apply are left empty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub t: f64,
    pub eta: f64,
    pub eta_f_cumulative: f64,
    pub ssim: Option<f64>,
    pub mass_err: Option<f64>,
}

pub const CSV_HEADER: &str = "t,eta,eta_F-cumulative,ssim,mass_err";

/// Per-snapshot rows comparing `truth` with `recon`. SSIM needs the frame
/// size, mass drift the cell volume.
pub fn metric_rows(
    truth: &SnapshotMatrix,
    recon: &SnapshotMatrix,
    frame: Option<(usize, usize)>,
    cell_volume: Option<f64>,
) -> Result<Vec<MetricRow>> {
    let cumulative = cumulative_frobenius_error(truth, recon)?;
    let mass = cell_volume
        .map(|v| conserved_quantity_error(truth, recon, v))
        .transpose()?;
    let params = SsimParams::default();
    (0..truth.len())
        .map(|k| {
            let (y, yhat) = (truth.snapshot(k), recon.snapshot(k));
            Ok(MetricRow {
                t: truth.time(k),
                eta: relative_error(y, yhat)?,
                eta_f_cumulative: cumulative[k],
                ssim: frame.map(|(w, h)| ssim(y, yhat, w, h, &params)).transpose()?,
                mass_err: mass.as_ref().map(|m| m[k]),
            })
        })
        .collect()
}

pub fn rows_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{},{}",
            r.t,
            r.eta,
            r.eta_f_cumulative,
            opt(r.ssim),
            opt(r.mass_err)
        );
    }
    out
}

pub fn write_csv(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, rows_to_csv(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snaps(cols: &[Vec<f64>]) -> SnapshotMatrix {
        SnapshotMatrix::from_columns(cols, 1.0, 0.0).unwrap()
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(relative_error(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!((relative_error(&[1.0, 0.0], &[1.0, 1e-3]).unwrap() - 1e-3).abs() < 1e-18);
        assert!(matches!(relative_error(&[0.0], &[1.0]), Err(Error::ZeroReference)));
        assert!(relative_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn frobenius_examples() {
        let y = snaps(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let zero = snaps(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(frobenius_relative_error(&y, &y).unwrap(), 0.0);
        assert_eq!(frobenius_relative_error(&y, &zero).unwrap(), 1.0);
        let other = snaps(&[vec![1.0, 2.0]]);
        assert!(matches!(frobenius_relative_error(&y, &other), Err(Error::ShapeMismatch { .. })));
        let cum = cumulative_frobenius_error(&y, &zero).unwrap();
        assert_eq!(cum, vec![1.0, 1.0]);
    }

    #[test]
    fn mass_examples() {
        let ones = snaps(&[vec![1.0; 4], vec![1.0; 4]]);
        assert_eq!(conserved_quantity(ones.snapshot(0), 0.25), 1.0);
        assert_eq!(conserved_quantity_error(&ones, &ones, 0.25).unwrap(), vec![0.0, 0.0]);
        let zero = snaps(&[vec![0.0; 4], vec![1.0; 4]]);
        assert!(matches!(conserved_quantity_error(&zero, &ones, 1.0), Err(Error::ZeroMass(0))));
    }

    #[test]
    fn ssim_identical_is_one() {
        let img: Vec<f64> = (0..100).map(|i| ((i * 17) % 23) as f64 / 22.0).collect();
        assert_eq!(ssim(&img, &img, 10, 10, &SsimParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn ssim_constant_pair_closed_form() {
        let p = SsimParams::default();
        let (a, b) = (0.3, 0.8);
        let want = (2.0 * a * b + p.c1()) / (a * a + b * b + p.c1());
        let got = ssim(&[a; 64], &[b; 64], 8, 8, &p).unwrap();
        assert!((got - want).abs() <= 1e-14);
    }

    #[test]
    fn ssim_errors() {
        let p = SsimParams::default();
        assert!(matches!(ssim(&[0.0; 30], &[0.0; 30], 6, 5, &p), Err(Error::WindowTooLarge { .. })));
        assert!(matches!(ssim(&[0.0; 49], &[0.0; 48], 7, 7, &p), Err(Error::ShapeMismatch { .. })));
        let even = SsimParams { window: 4, ..p };
        assert!(ssim(&[0.0; 49], &[0.0; 49], 7, 7, &even).is_err());
    }

    // brute-force oracle: average of the formula over explicitly listed windows
    fn ssim_oracle(x: &[f64], y: &[f64], w: usize, h: usize, win: usize) -> f64 {
        let p = SsimParams::default();
        let mut vals = Vec::new();
        for top in 0..=h - win {
            for left in 0..=w - win {
                let idx: Vec<usize> = (0..win * win).map(|i| (top + i / win) * w + left + i % win).collect();
                let n = idx.len() as f64;
                let mx = idx.iter().map(|&i| x[i]).sum::<f64>() / n;
                let my = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
                let sxx = idx.iter().map(|&i| (x[i] - mx).powi(2)).sum::<f64>() / (n - 1.0);
                let syy = idx.iter().map(|&i| (y[i] - my).powi(2)).sum::<f64>() / (n - 1.0);
                let sxy = idx.iter().map(|&i| (x[i] - mx) * (y[i] - my)).sum::<f64>() / (n - 1.0);
                vals.push(
                    (2.0 * mx * my + p.c1()) * (2.0 * sxy + p.c2())
                        / ((mx * mx + my * my + p.c1()) * (sxx + syy + p.c2())),
                );
            }
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn csv_layout() {
        let y = snaps(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let rows = metric_rows(&y, &y, None, Some(1.0)).unwrap();
        let csv = rows_to_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "0,0e0,0e0,,0e0");
        assert_eq!(lines.len(), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::{prop_assert, proptest};
        use proptest::collection::vec;

        proptest! {
            #[test]
            fn ssim_matches_oracle_and_is_symmetric(a in vec(0.0f64..1.0, 8 * 9), b in vec(0.0f64..1.0, 8 * 9)) {
                let p = SsimParams::default();
                let ab = ssim(&a, &b, 8, 9, &p).unwrap();
                let ba = ssim(&b, &a, 8, 9, &p).unwrap();
                prop_assert!((ab - ba).abs() <= 1e-14);
                prop_assert!((-1.0..=1.0).contains(&ab));
                prop_assert!((ab - ssim_oracle(&a, &b, 8, 9, 7)).abs() <= 1e-12);
                prop_assert!(ssim(&a, &a, 8, 9, &p).unwrap() == 1.0);
            }

            #[test]
            fn errors_scale_with_the_perturbation(y in vec(-5.0f64..5.0, 1..40), e in vec(-1.0f64..1.0, 40), s in -10.0f64..10.0) {
                let n = y.len();
                if norm2(&y) == 0.0 { return Ok(()); }
                let e = &e[..n];
                let base: Vec<f64> = y.iter().zip(e).map(|(a, b)| a + b).collect();
                let scaled: Vec<f64> = y.iter().zip(e).map(|(a, b)| a + s * b).collect();
                let m1 = relative_error(&y, &base).unwrap();
                let ms = relative_error(&y, &scaled).unwrap();
                prop_assert!((ms - s.abs() * m1).abs() <= 1e-12 * (1.0 + ms));
            }
        }
    }
}
