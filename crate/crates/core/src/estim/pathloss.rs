use serde::{Deserialize, Serialize};

use crate::calib::CirMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossOptions {
    /// Window length in wavelengths of travel.
    pub window_wavelengths: f64,
    /// Overrides the window length (snapshots, must be odd).
    pub window_len: Option<usize>,
    /// Step between consecutive window centers, in snapshots.
    pub hop: usize,
}

impl Default for PathLossOptions {
    fn default() -> Self {
        PathLossOptions {
            window_wavelengths: 40.0,
            window_len: None,
            hop: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathLossSeries {
    /// `-10 log10((1/W) Σ_T Σ_τ |h(T, τ)|²)` per window, dB.
    pub pl_db: Vec<f64>,
    /// Tx-Rx distance at each window center, meters.
    pub distances: Vec<f64>,
    /// Snapshot index of each window center.
    pub centers: Vec<usize>,
    pub window_len: usize,
    /// Number of frequency points summed per snapshot.
    pub n_f: usize,
}

impl PathLossSeries {
    pub fn len(&self) -> usize {
        self.pl_db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pl_db.is_empty()
    }

    /// PL with the bin count divided out, comparable to a narrowband
    /// (Friis) loss when every bin carries the same gain.
    pub fn per_bin_db(&self) -> Vec<f64> {
        let k = 10.0 * (self.n_f as f64).log10();
        self.pl_db.iter().map(|p| p + k).collect()
    }
}

/// Rounds `multiple · λ / travel` to the nearest odd snapshot count (≥ 1).
pub fn window_len_for(wavelength: f64, travel_per_snapshot: f64, multiple: f64) -> usize {
    if travel_per_snapshot <= 0.0 {
        return 1;
    }
    let raw = multiple * wavelength / travel_per_snapshot;
    let k = ((raw - 1.0) / 2.0).round().max(0.0);
    2 * k as usize + 1
}

/// Total power per snapshot, averaged over elements. Computed in the
/// frequency domain, which equals the delay-domain sum for the unitary
/// delay transform.
pub fn snapshot_powers(cir: &CirMatrix) -> Vec<f64> {
    cir.entries
        .iter()
        .map(|e| {
            let m = e.elements().max(1) as f64;
            e.response
                .iter()
                .map(|row| row.iter().map(|x| x.norm_sqr()).sum::<f64>())
                .sum::<f64>()
                / m
        })
        .collect()
}

pub fn path_loss_series(
    cir: &CirMatrix,
    distances: &[f64],
    opts: &PathLossOptions,
) -> Result<PathLossSeries> {
    let n = cir.entries.len();
    if distances.len() != n {
        return Err(Error::config(format!(
            "{} distances for {} snapshots",
            distances.len(),
            n
        )));
    }
    if let Some(bad) = distances.iter().position(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::Domain(format!(
            "distance {} at snapshot {} is not positive",
            distances[bad], bad
        )));
    }
    let w = match opts.window_len {
        Some(w) if w % 2 == 1 => w,
        Some(w) => return Err(Error::config(format!("window length {w} must be odd"))),
        None => {
            let travel = median_step(distances);
            window_len_for(cir.wavelength, travel, opts.window_wavelengths)
        }
    };
    if n < w {
        return Err(Error::InsufficientData(format!(
            "{n} snapshots, window needs {w}"
        )));
    }
    let powers = snapshot_powers(cir);
    let half = w / 2;
    let hop = opts.hop.max(1);
    let mut pl_db = vec![];
    let mut dist = vec![];
    let mut centers = vec![];
    for c in (half..n - half).step_by(hop) {
        let sum: f64 = powers[c - half..=c + half].iter().sum();
        let pl = -10.0 * (sum / w as f64).log10();
        if !pl.is_finite() {
            return Err(Error::Numerical(format!(
                "window centered at snapshot {c} has zero power"
            )));
        }
        pl_db.push(pl);
        dist.push(distances[c]);
        centers.push(c);
    }
    let n_f = cir.active.iter().filter(|a| **a).count();
    Ok(PathLossSeries {
        pl_db,
        distances: dist,
        centers,
        window_len: w,
        n_f,
    })
}

fn median_step(d: &[f64]) -> f64 {
    let mut steps: Vec<f64> = d.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    if steps.is_empty() {
        return 0.0;
    }
    steps.sort_by(f64::total_cmp);
    steps[steps.len() / 2]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogDistanceFit {
    pub ple: f64,
    /// PL at the reference distance, dB.
    pub intercept_db: f64,
    /// Residual standard deviation (n − 2 degrees of freedom), dB.
    pub sigma_db: f64,
    pub reference_distance: f64,
    pub samples: usize,
}

impl LogDistanceFit {
    pub fn predict(&self, d: f64) -> f64 {
        self.intercept_db + 10.0 * self.ple * (d / self.reference_distance).log10()
    }
}

/// Least squares `PL = PL₀ + 10 · PLE · log10(d / d₀)`.
pub fn fit_log_distance(series: &PathLossSeries, reference_distance: f64) -> Result<LogDistanceFit> {
    fit_points(&series.distances, &series.pl_db, reference_distance)
}

pub fn fit_points(distances: &[f64], pl_db: &[f64], d0: f64) -> Result<LogDistanceFit> {
    if distances.len() != pl_db.len() {
        return Err(Error::config("distance and PL lengths differ"));
    }
    // Sorted so the result does not depend on input order.
    let mut pts: Vec<(f64, f64)> = distances
        .iter()
        .zip(pl_db)
        .map(|(d, p)| (10.0 * (d / d0).log10(), *p))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = pts.len();
    if n < 2 || pts.first().map(|p| p.0) == pts.last().map(|p| p.0) {
        return Err(Error::DegenerateFit(format!(
            "log-distance fit needs at least 2 distinct distances ({n} samples)"
        )));
    }
    let nf = n as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ssr: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let sigma = if n > 2 { (ssr / (nf - 2.0)).sqrt() } else { 0.0 };
    Ok(LogDistanceFit {
        ple: slope,
        intercept_db: intercept,
        sigma_db: sigma,
        reference_distance: d0,
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::CirEntry;
    use num_complex::Complex64;

    fn constant_cir(snapshots: usize, nf: usize, amp: f64) -> CirMatrix {
        let mut cir = CirMatrix::new((0..nf).map(|k| 28e9 + k as f64 * 1e6).collect(), 28e9, vec![true; nf]);
        for i in 0..snapshots {
            cir.entries.push(CirEntry::new(i as f64, vec![i as f64], vec![vec![Complex64::new(amp, 0.0); nf]]));
        }
        cir
    }

    #[test]
    fn constant_field() {
        let cir = constant_cir(9, 100, 1.0);
        let d: Vec<f64> = (1..=9).map(|i| i as f64).collect();
        let s = path_loss_series(&cir, &d, &PathLossOptions { window_len: Some(3), ..Default::default() }).unwrap();
        assert_eq!(s.len(), 7);
        for p in &s.pl_db {
            assert!((p + 20.0).abs() < 1e-12);
        }
        assert!(s.per_bin_db().iter().all(|p| p.abs() < 1e-12));
    }

    #[test]
    fn scaling_shifts_pl() {
        let d: Vec<f64> = (1..=5).map(|i| i as f64).collect();
        let o = PathLossOptions { window_len: Some(5), ..Default::default() };
        let a = path_loss_series(&constant_cir(5, 10, 1.0), &d, &o).unwrap();
        let b = path_loss_series(&constant_cir(5, 10, 0.1), &d, &o).unwrap();
        assert!((b.pl_db[0] - a.pl_db[0] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn too_short() {
        let cir = constant_cir(2, 4, 1.0);
        let r = path_loss_series(&cir, &[1.0, 2.0], &PathLossOptions { window_len: Some(3), ..Default::default() });
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn window_rounds_to_odd() {
        assert_eq!(window_len_for(0.01, 0.1, 40.0), 5); // tie at 4 rounds up
        assert_eq!(window_len_for(0.0107, 0.1111, 40.0), 3);
        assert_eq!(window_len_for(0.01, 0.01, 40.0), 41);
        assert_eq!(window_len_for(0.01, 10.0, 40.0), 1);
    }

    #[test]
    fn exact_free_space_fit() {
        let d: Vec<f64> = (0..50).map(|i| 10.0 + 6.0 * i as f64).collect();
        let pl: Vec<f64> = d.iter().map(|x| 61.4 + 20.0 * x.log10()).collect();
        let f = fit_points(&d, &pl, 1.0).unwrap();
        assert!((f.ple - 2.0).abs() < 1e-9);
        assert!((f.intercept_db - 61.4).abs() < 1e-9);
        assert!(f.sigma_db < 1e-9);
    }

    #[test]
    fn flat_and_degenerate() {
        let f = fit_points(&[1.0, 2.0, 3.0], &[50.0; 3], 1.0).unwrap();
        assert!(f.ple.abs() < 1e-12);
        assert!(matches!(
            fit_points(&[4.0; 3], &[1.0, 2.0, 3.0], 1.0),
            Err(Error::DegenerateFit(_))
        ));
    }
}
