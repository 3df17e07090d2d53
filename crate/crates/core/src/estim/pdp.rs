use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::geom::lin_to_db;

/// Taper applied across frequency bins before the delay transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// No taper. First sidelobe sits about 13.3 dB below the peak.
    #[default]
    Rectangular,
    /// Hann taper. Lower sidelobes, twice the main-lobe width, and Parseval
    /// no longer holds against the raw response.
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdpOptions {
    pub window: Window,
    /// Zero-padding factor on the delay axis (1 = none).
    pub oversample: usize,
}

impl Default for PdpOptions {
    fn default() -> Self {
        PdpOptions {
            window: Window::Rectangular,
            oversample: 1,
        }
    }
}

/// Power delay profile of one frequency-response row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pdp {
    pub timestamp: f64,
    /// Delay of bin 0 is 0; spacing is `1 / (bandwidth · oversample)`.
    pub delays: Vec<f64>,
    /// Linear power per delay bin.
    pub power: Vec<f64>,
}

impl Pdp {
    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    pub fn delay_step(&self) -> f64 {
        if self.delays.len() > 1 {
            self.delays[1] - self.delays[0]
        } else {
            0.0
        }
    }

    pub fn power_db(&self) -> Vec<f64> {
        self.power.iter().map(|&p| lin_to_db(p)).collect()
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }

    pub fn peak(&self) -> Option<(usize, f64)> {
        self.power
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Unitary inverse DFT over the bin axis: `h[n] = N^{-1/2} Σ_k H[k] e^{+j2πkn/N}`.
/// `Σ|h|² = Σ|H|²` holds exactly.
pub fn to_delay_domain(row: &[Complex64]) -> Vec<Complex64> {
    to_delay_domain_padded(row, row.len())
}

pub(crate) fn to_delay_domain_padded(row: &[Complex64], len: usize) -> Vec<Complex64> {
    if len == 0 {
        return vec![];
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    buf[..row.len()].copy_from_slice(row);
    FftPlanner::new().plan_fft_inverse(len).process(&mut buf);
    let s = 1.0 / (len as f64).sqrt();
    buf.iter_mut().for_each(|x| *x *= s);
    buf
}

fn hann(n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![1.0; n];
    }
    (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / (n - 1) as f64).cos())
        .collect()
}

/// PDP of a calibrated row on a uniform grid with bin spacing `tone_spacing`.
pub fn pdp(row: &[Complex64], tone_spacing: f64, timestamp: f64, opts: PdpOptions) -> Pdp {
    let n = row.len();
    let os = opts.oversample.max(1);
    let tapered: Vec<Complex64> = match opts.window {
        Window::Rectangular => row.to_vec(),
        Window::Hann => row.iter().zip(hann(n)).map(|(x, w)| x * w).collect(),
    };
    let h = to_delay_domain_padded(&tapered, n * os);
    let step = 1.0 / (n as f64 * tone_spacing * os as f64);
    Pdp {
        timestamp,
        delays: (0..h.len()).map(|i| i as f64 * step).collect(),
        power: h.iter().map(|x| x.norm_sqr()).collect(),
    }
}

/// Local maxima within `range_db` of the global maximum. The delay axis is
/// circular, so bin 0 neighbors the last bin.
pub fn find_peaks(pdp: &Pdp, range_db: f64) -> Vec<usize> {
    let Some((_, max)) = pdp.peak() else {
        return vec![];
    };
    if max <= 0.0 {
        return vec![];
    }
    let thr = max * 10f64.powf(-range_db / 10.0);
    let p = &pdp.power;
    let n = p.len();
    (0..n)
        .filter(|&i| {
            let left = p[(i + n - 1) % n];
            let right = p[(i + 1) % n];
            p[i] >= thr && p[i] > left && p[i] >= right
        })
        .collect()
}

/// Robust noise floor in dB: median power over ln 2 (the mean of an
/// exponential distribution) plus `margin_db`.
pub fn noise_floor(pdp: &Pdp, margin_db: f64) -> f64 {
    noise_floor_of(&pdp.power, margin_db)
}

pub(crate) fn noise_floor_of(power: &[f64], margin_db: f64) -> f64 {
    if power.is_empty() {
        return f64::NEG_INFINITY;
    }
    let mut v = power.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    lin_to_db(median / std::f64::consts::LN_2) + margin_db
}

pub const DEFAULT_FLOOR_MARGIN_DB: f64 = 6.0;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sounder::complex_gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn delayed(n: usize, df: f64, tau: f64) -> Vec<Complex64> {
        (0..n)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 * df * tau))
            .collect()
    }

    /// |Dirichlet kernel|² of `n` unit tones at offset `x` resolution cells,
    /// normalized by the padded transform length.
    fn dirichlet_power(n: usize, len: usize, x: f64) -> f64 {
        let den = (PI * x / n as f64).sin();
        if den.abs() < 1e-15 {
            return (n * n) as f64 / len as f64;
        }
        let r = (PI * x).sin() / den;
        r * r / len as f64
    }

    #[test]
    fn zero_delay_is_impulse_at_bin_zero() {
        let p = pdp(&vec![Complex64::new(1.0, 0.0); 64], 1e6, 0.0, PdpOptions::default());
        assert_eq!(p.peak().unwrap().0, 0);
        assert!((p.power[0] - 64.0).abs() < 1e-9);
        assert!(p.power[1..].iter().all(|&x| x < 1e-20));
    }

    #[test]
    fn pure_delay_matches_sinc_oracle() {
        // 1 GHz over 1000 bins, 100 ns delay; oversampled so sidelobes show.
        let (n, df, tau) = (1000, 1e6, 100e-9);
        let p = pdp(&delayed(n, df, tau), df, 0.0, PdpOptions { window: Window::Rectangular, oversample: 8 });
        let (ipk, pk) = p.peak().unwrap();
        assert!((p.delays[ipk] - tau).abs() < 1e-15);
        for (i, d) in p.delays.iter().enumerate().step_by(7) {
            let want = dirichlet_power(n, 8 * n, (d - tau) * n as f64 * df);
            assert!((p.power[i] - want).abs() <= 1e-8 * pk, "bin {i}");
        }
        // First sidelobe between 1 and 2 resolution cells after the peak.
        let side = (ipk + 9..ipk + 16).map(|i| p.power[i]).fold(0.0, f64::max);
        assert!(10.0 * (pk / side).log10() >= 13.0);
    }

    #[test]
    fn resolves_two_paths_two_ns_apart() {
        let (n, df) = (1000, 1e6);
        let a = delayed(n, df, 0.0);
        let b = delayed(n, df, 2e-9);
        let row: Vec<_> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let p = pdp(&row, df, 0.0, PdpOptions { window: Window::Rectangular, oversample: 8 });
        assert_eq!(find_peaks(&p, 10.0).len(), 2);
    }

    #[test]
    fn hann_lowers_sidelobes() {
        let (n, df, tau) = (256, 1e6, 40.3e-9);
        let row = delayed(n, df, tau);
        let o = PdpOptions { window: Window::Hann, oversample: 8 };
        let p = pdp(&row, df, 0.0, o);
        let (ipk, pk) = p.peak().unwrap();
        let far = (ipk + 40..ipk + 200).map(|i| p.power[i]).fold(0.0, f64::max);
        assert!(10.0 * (pk / far).log10() > 31.0);
    }

    #[test]
    fn parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let row: Vec<_> = (0..77).map(|_| complex_gaussian(&mut rng, 2.0)).collect();
        let p = pdp(&row, 1e6, 0.0, PdpOptions::default());
        let e: f64 = row.iter().map(|x| x.norm_sqr()).sum();
        assert!((p.total_power() - e).abs() <= 1e-9 * e);
    }

    #[test]
    fn noise_floor_of_known_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let var = 0.37;
        let row: Vec<_> = (0..4096).map(|_| complex_gaussian(&mut rng, var)).collect();
        let p = pdp(&row, 1e6, 0.0, PdpOptions::default());
        let f = noise_floor(&p, 6.0);
        assert!((f - (10.0 * var.log10() + 6.0)).abs() < 1.0, "{f}");
        assert_eq!(f, noise_floor(&p, 6.0));
    }

    #[test]
    fn impulse_floor_below_signal() {
        let p = pdp(&delayed(64, 1e6, 3.0 / 64e6), 1e6, 0.0, PdpOptions::default());
        let f = noise_floor(&p, 6.0);
        let (_, pk) = p.peak().unwrap();
        assert!(lin_to_db(pk) > f);
    }
}
