//! Back-to-back system-response extraction, calibration of raw captures,
//! and inter-channel phase-offset estimation.

use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estim::to_delay_domain;
use crate::geom::wrap_pi;
use crate::sounder::{cable_response, ChannelMatrix, Snapshot};
use crate::SPEED_OF_LIGHT;

/// Known cabled path used for the back-to-back reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct B2bReference {
    pub attenuation_db: f64,
    #[serde(default)]
    pub delay: f64,
}

impl B2bReference {
    pub fn pad(attenuation_db: f64) -> Self {
        B2bReference {
            attenuation_db,
            delay: 0.0,
        }
    }
}

/// Per-channel complex response of the measurement system itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemResponse {
    pub freqs: Vec<f64>,
    /// `[channel][bin]`; zero where the bin is inactive.
    pub response: ChannelMatrix,
    /// Bins carrying energy. Inactive bins are skipped by every division.
    pub active: Vec<bool>,
    pub reference: B2bReference,
}

impl SystemResponse {
    pub fn channels(&self) -> usize {
        self.response.len()
    }

    pub fn bins(&self) -> usize {
        self.freqs.len()
    }
}

/// `SystemResponse = raw / (10^(-A/20) · e^{-j2πfτ})` on every active bin.
pub fn b2b_extract(
    reference_capture: &Snapshot,
    freqs: &[f64],
    reference: B2bReference,
    active: &[bool],
) -> Result<SystemResponse> {
    if reference_capture.bins() != freqs.len() || active.len() != freqs.len() {
        return Err(Error::config(format!(
            "B2B capture has {} bins, grid has {} (mask {})",
            reference_capture.bins(),
            freqs.len(),
            active.len()
        )));
    }
    let ideal = cable_response(freqs, reference.attenuation_db, reference.delay);
    let mut response = Vec::with_capacity(reference_capture.elements());
    for (m, row) in reference_capture.response.iter().enumerate() {
        let mut out = vec![Complex64::new(0.0, 0.0); row.len()];
        for (f, x) in row.iter().enumerate() {
            if !active[f] {
                continue;
            }
            if x.norm() == 0.0 || !x.is_finite() {
                return Err(Error::DivisionGuard { channel: m, bin: f });
            }
            out[f] = x / ideal[f];
        }
        response.push(out);
    }
    Ok(SystemResponse {
        freqs: freqs.to_vec(),
        response,
        active: active.to_vec(),
        reference,
    })
}

/// A calibrated capture.
#[derive(Debug, Clone)]
pub struct CirEntry {
    pub timestamp: f64,
    pub element_times: Vec<f64>,
    /// Calibrated frequency response `[element][bin]`.
    pub response: ChannelMatrix,
    delay_cache: OnceLock<ChannelMatrix>,
}

impl PartialEq for CirEntry {
    fn eq(&self, other: &Self) -> bool {
        self.timestamp == other.timestamp
            && self.element_times == other.element_times
            && self.response == other.response
    }
}

impl CirEntry {
    pub fn new(timestamp: f64, element_times: Vec<f64>, response: ChannelMatrix) -> Self {
        CirEntry {
            timestamp,
            element_times,
            response,
            delay_cache: OnceLock::new(),
        }
    }

    /// Delay-domain impulse response per element (computed once).
    pub fn impulse_response(&self) -> &ChannelMatrix {
        self.delay_cache
            .get_or_init(|| self.response.iter().map(|r| to_delay_domain(r)).collect())
    }

    pub fn elements(&self) -> usize {
        self.response.len()
    }

    pub fn bins(&self) -> usize {
        self.response.first().map_or(0, |r| r.len())
    }
}

/// Calibrated captures over a uniform frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CirMatrix {
    pub freqs: Vec<f64>,
    pub wavelength: f64,
    pub active: Vec<bool>,
    pub entries: Vec<CirEntry>,
}

impl CirMatrix {
    pub fn new(freqs: Vec<f64>, carrier_frequency: f64, active: Vec<bool>) -> Self {
        CirMatrix {
            freqs,
            wavelength: SPEED_OF_LIGHT / carrier_frequency,
            active,
            entries: vec![],
        }
    }

    pub fn bandwidth(&self) -> f64 {
        let n = self.freqs.len();
        if n < 2 {
            return 0.0;
        }
        (self.freqs[n - 1] - self.freqs[0]) / (n - 1) as f64 * n as f64
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Divides a raw capture by the system response, bin by bin. Inactive bins
/// come out as zero.
pub fn apply_calibration(raw: &Snapshot, sys: &SystemResponse) -> Result<CirEntry> {
    if raw.bins() != sys.bins() || raw.elements() != sys.channels() {
        return Err(Error::config(format!(
            "capture grid {}×{} does not match system response {}×{}",
            raw.elements(),
            raw.bins(),
            sys.channels(),
            sys.bins()
        )));
    }
    let response = raw
        .response
        .iter()
        .zip(&sys.response)
        .map(|(r, s)| {
            r.iter()
                .zip(s)
                .zip(&sys.active)
                .map(|((x, d), &on)| if on { x / d } else { Complex64::new(0.0, 0.0) })
                .collect()
        })
        .collect();
    Ok(CirEntry::new(raw.timestamp, raw.element_times.clone(), response))
}

/// Any capture with a timestamp and an `[element][bin]` response.
pub trait Capture {
    fn time(&self) -> f64;
    fn rows(&self) -> &ChannelMatrix;
}

impl Capture for Snapshot {
    fn time(&self) -> f64 {
        self.timestamp
    }
    fn rows(&self) -> &ChannelMatrix {
        &self.response
    }
}

impl Capture for CirEntry {
    fn time(&self) -> f64 {
        self.timestamp
    }
    fn rows(&self) -> &ChannelMatrix {
        &self.response
    }
}

/// Phase of each channel relative to channel 1 (index 0), coherently
/// combined across bins.
pub fn relative_phases<C: Capture>(cap: &C) -> Vec<f64> {
    let rows = cap.rows();
    let base = &rows[0];
    rows.iter()
        .map(|r| {
            let z: Complex64 = r.iter().zip(base).map(|(x, b)| x * b.conj()).sum();
            z.arg()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseOffsets {
    /// Offset relative to channel 1 at `window.0`; entry 0 is always 0.
    pub offsets: Vec<f64>,
    /// Relative drift rate, rad/s.
    pub drift_rates: Vec<f64>,
    pub window: (f64, f64),
    /// Post-compensation residual phase std per channel over the window.
    pub residual_std: Vec<f64>,
}

impl PhaseOffsets {
    pub fn zero(channels: usize) -> Self {
        PhaseOffsets {
            offsets: vec![0.0; channels],
            drift_rates: vec![0.0; channels],
            window: (0.0, 0.0),
            residual_std: vec![0.0; channels],
        }
    }

    /// Correction phase for channel `m` at time `t`.
    pub fn phase_at(&self, m: usize, t: f64) -> f64 {
        self.offsets[m] + self.drift_rates[m] * (t - self.window.0)
    }

    /// Removes the estimated offsets from a calibrated capture.
    pub fn compensate(&self, entry: &CirEntry) -> CirEntry {
        let response = entry
            .response
            .iter()
            .enumerate()
            .map(|(m, r)| {
                let rot = Complex64::from_polar(1.0, -self.phase_at(m, entry.timestamp));
                r.iter().map(|x| x * rot).collect()
            })
            .collect();
        CirEntry::new(entry.timestamp, entry.element_times.clone(), response)
    }

    pub fn compensate_snapshot(&self, snap: &Snapshot) -> Snapshot {
        let mut out = snap.clone();
        for (m, r) in out.response.iter_mut().enumerate() {
            let rot = Complex64::from_polar(1.0, -self.phase_at(m, snap.timestamp));
            r.iter_mut().for_each(|x| *x *= rot);
        }
        out
    }
}

fn unwrap(seq: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(seq.len());
    let mut prev = 0.0;
    for (i, &p) in seq.iter().enumerate() {
        let v = if i == 0 { p } else { prev + wrap_pi(p - prev) };
        out.push(v);
        prev = v;
    }
    out
}

/// Circular mean angle and circular standard deviation about it.
pub fn circular_stats(angles: &[f64]) -> (f64, f64) {
    let z: Complex64 = angles.iter().map(|a| Complex64::from_polar(1.0, *a)).sum();
    let mean = z.arg();
    let n = angles.len().max(1) as f64;
    let var = angles
        .iter()
        .map(|a| wrap_pi(a - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// Estimates per-channel offsets and drifts from captures of a static
/// channel that reaches every element identically (e.g. a cabled feed).
pub fn estimate_phase_offsets<C: Capture>(captures: &[C]) -> Result<PhaseOffsets> {
    if captures.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "phase offset estimation needs at least 2 captures, got {}",
            captures.len()
        )));
    }
    let mut order: Vec<usize> = (0..captures.len()).collect();
    order.sort_by(|&a, &b| captures[a].time().total_cmp(&captures[b].time()));
    let times: Vec<f64> = order.iter().map(|&i| captures[i].time()).collect();
    let t0 = times[0];
    let rel: Vec<Vec<f64>> = order.iter().map(|&i| relative_phases(&captures[i])).collect();
    let m = rel[0].len();
    let tm = times.iter().map(|t| t - t0).sum::<f64>() / times.len() as f64;
    let sxx: f64 = times.iter().map(|t| (t - t0 - tm).powi(2)).sum();

    let mut offsets = vec![0.0; m];
    let mut drifts = vec![0.0; m];
    let mut resid = vec![0.0; m];
    for ch in 1..m {
        let seq: Vec<f64> = rel.iter().map(|r| r[ch]).collect();
        let un = unwrap(&seq);
        let drift = if sxx > 0.0 {
            let ym = un.iter().sum::<f64>() / un.len() as f64;
            times
                .iter()
                .zip(&un)
                .map(|(t, y)| (t - t0 - tm) * (y - ym))
                .sum::<f64>()
                / sxx
        } else {
            0.0
        };
        let detrended: Vec<f64> = seq
            .iter()
            .zip(&times)
            .map(|(p, t)| p - drift * (t - t0))
            .collect();
        let (mean, _) = circular_stats(&detrended);
        let residuals: Vec<f64> = detrended.iter().map(|p| wrap_pi(p - mean)).collect();
        let (_, sd) = circular_stats(&residuals);
        offsets[ch] = wrap_pi(mean);
        drifts[ch] = drift;
        resid[ch] = sd;
    }
    Ok(PhaseOffsets {
        offsets,
        drift_rates: drifts,
        window: (t0, *times.last().unwrap()),
        residual_std: resid,
    })
}

/// Spread of inter-channel phases relative to channel 1 over a capture set.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpread {
    /// `[capture][channel]` relative phases, wrapped to (-π, π].
    pub relative: Vec<Vec<f64>>,
    /// Circular std over time, per channel.
    pub per_channel_std: Vec<f64>,
    /// Std of all relative phases pooled across channels and captures.
    pub pooled_std: f64,
}

pub fn phase_spread<C: Capture>(captures: &[C]) -> PhaseSpread {
    let relative: Vec<Vec<f64>> = captures.iter().map(relative_phases).collect();
    let m = relative.first().map_or(0, |r| r.len());
    let per_channel_std = (0..m)
        .map(|ch| circular_stats(&relative.iter().map(|r| r[ch]).collect::<Vec<_>>()).1)
        .collect();
    let pooled: Vec<f64> = relative.iter().flatten().copied().collect();
    let (_, pooled_std) = circular_stats(&pooled);
    PhaseSpread {
        relative,
        per_channel_std,
        pooled_std,
    }
}
