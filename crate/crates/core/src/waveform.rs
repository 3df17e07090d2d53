//! Multi-tone sounding waveform: `m(t) = Σ_{n=-N}^{N} exp(j(2π n Δf t + θ_n))`,
//! built in the frequency domain (unit-magnitude tones, everything else zero)
//! and brought to the time domain with an inverse FFT.
//!
//! Spectra are DC-centered throughout the crate: bin `k` of a length-`L`
//! spectrum corresponds to frequency `(k - ⌊L/2⌋) · fs / L`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "phases")]
pub enum PhaseSchedule {
    /// Quadratic schedule `θ_n = π n² / (2N+1)`.
    #[default]
    Newman,
    Zero,
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneConfig {
    pub tone_spacing: f64,
    pub half_tone_count: usize,
    #[serde(default)]
    pub phase_schedule: PhaseSchedule,
    pub sample_rate: f64,
    /// Per-tone in-band mask (length 2N+1); inactive tones are zeroed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<Vec<bool>>,
}

impl ToneConfig {
    pub fn new(tone_spacing: f64, half_tone_count: usize, sample_rate: f64) -> Self {
        ToneConfig {
            tone_spacing,
            half_tone_count,
            phase_schedule: PhaseSchedule::Newman,
            sample_rate,
            active: None,
        }
    }

    pub fn with_phases(mut self, schedule: PhaseSchedule) -> Self {
        self.phase_schedule = schedule;
        self
    }

    pub fn tone_count(&self) -> usize {
        2 * self.half_tone_count + 1
    }

    /// Tone index n for position i in `[0, 2N]`.
    pub fn tone_index(&self, i: usize) -> i64 {
        i as i64 - self.half_tone_count as i64
    }

    /// Baseband tone frequencies `n Δf`, ascending.
    pub fn tone_offsets(&self) -> Vec<f64> {
        (0..self.tone_count())
            .map(|i| self.tone_index(i) as f64 * self.tone_spacing)
            .collect()
    }

    /// Occupied bandwidth `(2N+1) Δf`; the delay-domain bin is its inverse.
    pub fn bandwidth(&self) -> f64 {
        self.tone_count() as f64 * self.tone_spacing
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active.as_ref().map_or(true, |m| m[i])
    }

    pub fn active_mask(&self) -> Vec<bool> {
        (0..self.tone_count()).map(|i| self.is_active(i)).collect()
    }

    pub fn phases(&self) -> Vec<f64> {
        let k = self.tone_count();
        match &self.phase_schedule {
            PhaseSchedule::Zero => vec![0.0; k],
            PhaseSchedule::Newman => (0..k)
                .map(|i| {
                    let n = self.tone_index(i) as f64;
                    PI * n * n / k as f64
                })
                .collect(),
            PhaseSchedule::Custom(p) => p.clone(),
        }
    }

    /// Samples per waveform period, `fs / Δf`, which must be an integer.
    pub fn period_len(&self) -> Result<usize> {
        let ratio = self.sample_rate / self.tone_spacing;
        let l = ratio.round();
        if (ratio - l).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::config(format!(
                "sample_rate / tone_spacing = {ratio} is not an integer"
            )));
        }
        Ok(l as usize)
    }

    pub fn collect_violations(&self, errs: &mut Vec<String>) {
        if !(self.tone_spacing > 0.0 && self.tone_spacing.is_finite()) {
            errs.push("waveform.tone_spacing must be > 0".into());
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            errs.push("waveform.sample_rate must be > 0".into());
        }
        if let PhaseSchedule::Custom(p) = &self.phase_schedule {
            if p.len() != self.tone_count() {
                errs.push(format!(
                    "waveform phase schedule has {} entries, expected {}",
                    p.len(),
                    self.tone_count()
                ));
            }
            if p.iter().any(|v| !v.is_finite()) {
                errs.push("waveform phase schedule has non-finite entries".into());
            }
        }
        if let Some(m) = &self.active {
            if m.len() != self.tone_count() {
                errs.push(format!(
                    "waveform active mask has {} entries, expected {}",
                    m.len(),
                    self.tone_count()
                ));
            }
        }
        if errs.is_empty() {
            match self.period_len() {
                Err(Error::Config(e)) => errs.extend(e),
                Ok(l) if l < self.tone_count() => errs.push(format!(
                    "sample_rate {} Hz aliases {} tones spaced {} Hz",
                    self.sample_rate,
                    self.tone_count(),
                    self.tone_spacing
                )),
                _ => {}
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = vec![];
        self.collect_violations(&mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub epoch: f64,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64, epoch: f64) -> Self {
        ComplexSignal {
            samples,
            sample_rate,
            epoch,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }
}

/// One period of the multi-tone waveform.
pub fn multitone(cfg: &ToneConfig) -> Result<ComplexSignal> {
    cfg.validate()?;
    let len = cfg.period_len()?;
    let phases = cfg.phases();
    let mut freq = vec![Complex64::new(0.0, 0.0); len];
    for (i, th) in phases.iter().enumerate() {
        if !cfg.is_active(i) {
            continue;
        }
        let n = cfg.tone_index(i);
        let bin = n.rem_euclid(len as i64) as usize;
        freq[bin] = Complex64::from_polar(1.0, *th);
    }
    // Unnormalized inverse DFT gives exactly Σ exp(j(2π n k / L + θ_n)).
    FftPlanner::new().plan_fft_inverse(len).process(&mut freq);
    Ok(ComplexSignal::new(freq, cfg.sample_rate, 0.0))
}

/// Peak-to-average power ratio in dB.
pub fn papr(sig: &ComplexSignal) -> Result<f64> {
    if sig.is_empty() {
        return Err(Error::Undefined("PAPR of an empty signal".into()));
    }
    let mean = sig.energy() / sig.len() as f64;
    if mean == 0.0 {
        return Err(Error::Undefined("PAPR of an all-zero signal".into()));
    }
    let peak = sig
        .samples
        .iter()
        .map(|s| s.norm_sqr())
        .fold(0.0, f64::max);
    Ok(10.0 * (peak / mean).log10())
}

/// DC-centered unnormalized DFT: `X[k] = Σ x[n] e^{-j2πkn/L}`, so
/// `Σ|x|² = Σ|X|² / L`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    pub frequencies: Vec<f64>,
}

impl Spectrum {
    /// Index of the bin for signed DFT index `k` (0 = DC).
    pub fn bin_of(&self, k: i64) -> usize {
        let l = self.bins.len() as i64;
        (k + l / 2).rem_euclid(l) as usize
    }
}

pub fn spectrum(sig: &ComplexSignal) -> Spectrum {
    let l = sig.len();
    let mut buf = sig.samples.clone();
    if l > 0 {
        FftPlanner::new().plan_fft_forward(l).process(&mut buf);
    }
    let half = l / 2;
    buf.rotate_left(l - half);
    let frequencies = (0..l)
        .map(|k| (k as f64 - half as f64) * sig.sample_rate / l as f64)
        .collect();
    Spectrum {
        bins: buf,
        frequencies,
    }
}

/// Complex amplitude of each configured tone, read from one period as the
/// Fourier-series coefficient `X[n] / L`.
pub fn tone_amplitudes(sig: &ComplexSignal, cfg: &ToneConfig) -> Vec<Complex64> {
    let sp = spectrum(sig);
    let l = sig.len() as f64;
    (0..cfg.tone_count())
        .map(|i| sp.bins[sp.bin_of(cfg.tone_index(i))] / l)
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct SignalSidecar {
    format: String,
    version: u32,
    endianness: String,
    sample_rate: f64,
    epoch: f64,
    samples: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".toml");
    PathBuf::from(p)
}

/// Writes interleaved little-endian f64 I/Q plus a `<path>.toml` sidecar.
pub fn write_signal(path: &Path, sig: &ComplexSignal) -> Result<()> {
    let mut bytes = Vec::with_capacity(sig.len() * 16);
    for s in &sig.samples {
        bytes.extend_from_slice(&s.re.to_le_bytes());
        bytes.extend_from_slice(&s.im.to_le_bytes());
    }
    fs::write(path, bytes)?;
    let side = SignalSidecar {
        format: "iq-f64".into(),
        version: 1,
        endianness: "little".into(),
        sample_rate: sig.sample_rate,
        epoch: sig.epoch,
        samples: sig.len(),
    };
    fs::write(
        sidecar_path(path),
        toml::to_string(&side).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    Ok(())
}

pub fn read_signal(path: &Path) -> Result<ComplexSignal> {
    let side_path = sidecar_path(path);
    let side: SignalSidecar = toml::from_str(&fs::read_to_string(&side_path)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", side_path.display())))?;
    if side.version != 1 {
        return Err(Error::UnsupportedVersion {
            file: side_path,
            found: side.version,
            expected: 1,
        });
    }
    if side.endianness != "little" {
        return Err(Error::Format {
            file: side_path,
            offset: 0,
            reason: format!("unsupported endianness {}", side.endianness),
        });
    }
    let bytes = fs::read(path)?;
    if bytes.len() != side.samples * 16 {
        return Err(Error::Format {
            file: path.to_path_buf(),
            offset: bytes.len() as u64,
            reason: format!("expected {} bytes", side.samples * 16),
        });
    }
    let samples = bytes
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    Ok(ComplexSignal::new(samples, side.sample_rate, side.epoch))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tone_is_constant() {
        let cfg = ToneConfig::new(1e6, 0, 8e6).with_phases(PhaseSchedule::Zero);
        let s = multitone(&cfg).unwrap();
        assert_eq!(s.len(), 8);
        for x in &s.samples {
            assert!((x - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn aliasing_rejected() {
        let cfg = ToneConfig::new(1e6, 8, 8e6);
        assert!(matches!(multitone(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn non_integer_period_rejected() {
        let cfg = ToneConfig::new(3e6, 1, 10e6);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_signal_papr_undefined() {
        let s = ComplexSignal::new(vec![Complex64::new(0.0, 0.0); 4], 1.0, 0.0);
        assert!(matches!(papr(&s), Err(Error::Undefined(_))));
    }

    #[test]
    fn constant_envelope_papr_zero() {
        let s = ComplexSignal::new(
            (0..32)
                .map(|k| Complex64::from_polar(2.0, k as f64 * 0.7))
                .collect(),
            1.0,
            0.0,
        );
        assert!(papr(&s).unwrap().abs() < 1e-12);
    }

    #[test]
    fn impulse_and_tone_spectra() {
        let mut x = vec![Complex64::new(0.0, 0.0); 16];
        x[0] = Complex64::new(1.0, 0.0);
        let sp = spectrum(&ComplexSignal::new(x, 16.0, 0.0));
        assert!(sp.bins.iter().all(|b| (b.norm() - 1.0).abs() < 1e-12));
        assert_eq!(sp.frequencies[8], 0.0);

        let k = 3;
        let x: Vec<_> = (0..16)
            .map(|n| Complex64::from_polar(1.0, 2.0 * PI * (k * n) as f64 / 16.0))
            .collect();
        let sp = spectrum(&ComplexSignal::new(x, 16.0, 0.0));
        for (i, b) in sp.bins.iter().enumerate() {
            if i == sp.bin_of(k) {
                assert!((b.norm() - 16.0).abs() < 1e-9);
            } else {
                assert!(b.norm() < 1e-9);
            }
        }
    }

    #[test]
    fn masked_tones_are_zero() {
        let mut cfg = ToneConfig::new(1e6, 2, 8e6);
        cfg.active = Some(vec![true, true, false, true, true]);
        let s = multitone(&cfg).unwrap();
        let a = tone_amplitudes(&s, &cfg);
        assert!(a[2].norm() < 1e-12);
        assert!((a[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn signal_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.iq");
        let s = multitone(&ToneConfig::new(1e6, 3, 16e6)).unwrap();
        write_signal(&p, &s).unwrap();
        let back = read_signal(&p).unwrap();
        assert_eq!(back, s);
        fs::write(&p, [0u8; 5]).unwrap();
        assert!(matches!(read_signal(&p), Err(Error::Format { .. })));
    }
}
