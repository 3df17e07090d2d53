use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::array::ArrayGeometry;
use crate::error::{Error, Result};
use crate::rng::indexed_rng;
use crate::scene::{PathSet, SceneSpec};
use crate::waveform::ToneConfig;

/// Channel matrix indexed `[element][bin]`.
pub type ChannelMatrix = Vec<Vec<Complex64>>;

/// `H[m, f] = Σ g · exp(-j2π f τ) · exp(+j2π ν (t - epoch)) · a_m(f)`.
///
/// Steering is evaluated per bin (wideband). Paths arriving outside the
/// array support contribute nothing.
pub fn synth_channel(
    paths: &PathSet,
    array: &ArrayGeometry,
    freqs: &[f64],
    t: f64,
) -> ChannelMatrix {
    synth_channel_at(paths, array, freqs, &vec![t; array.len()])
}

/// [`synth_channel`] with a separate observation instant per element.
pub fn synth_channel_at(
    paths: &PathSet,
    array: &ArrayGeometry,
    freqs: &[f64],
    times: &[f64],
) -> ChannelMatrix {
    let m = array.len();
    let nf = freqs.len();
    let mut h = vec![vec![Complex64::new(0.0, 0.0); nf]; m];
    let uniform = uniform_step(freqs);
    for p in &paths.paths {
        if !array.support.contains(p.azimuth, p.elevation) {
            continue;
        }
        let leads = array.element_leads(p.azimuth, p.elevation);
        for (k, row) in h.iter_mut().enumerate() {
            let dop = Complex64::from_polar(1.0, 2.0 * PI * p.doppler * (times[k] - paths.epoch));
            let amp = p.gain * dop * array.element_gain(k, p.azimuth, p.elevation);
            let s = leads[k] - p.delay;
            match uniform {
                // Phase recurrence along a uniform grid, resynchronized
                // periodically to bound rounding growth.
                Some(step) => {
                    let rot = Complex64::from_polar(1.0, 2.0 * PI * step * s);
                    let mut ph = Complex64::new(0.0, 0.0);
                    for (i, cell) in row.iter_mut().enumerate() {
                        if i % 64 == 0 {
                            ph = Complex64::from_polar(1.0, 2.0 * PI * freqs[i] * s);
                        }
                        *cell += amp * ph;
                        ph *= rot;
                    }
                }
                None => {
                    for (cell, f) in row.iter_mut().zip(freqs) {
                        *cell += amp * Complex64::from_polar(1.0, 2.0 * PI * f * s);
                    }
                }
            }
        }
    }
    h
}

pub(crate) fn uniform_step(freqs: &[f64]) -> Option<f64> {
    if freqs.len() < 2 {
        return None;
    }
    let step = (freqs[freqs.len() - 1] - freqs[0]) / (freqs.len() - 1) as f64;
    let ok = freqs
        .windows(2)
        .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step.abs().max(1.0));
    ok.then_some(step)
}

/// Time-division switching of the array through one receive chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchSchedule {
    /// Capture order; `order[k]` is captured at `t + k · dwell`.
    pub order: Vec<usize>,
    pub dwell: f64,
    pub snapshot_period: f64,
    #[serde(default)]
    pub min_dwell: f64,
}

impl SwitchSchedule {
    pub fn sequential(m: usize, dwell: f64, snapshot_rate: f64) -> Self {
        SwitchSchedule {
            order: (0..m).collect(),
            dwell,
            snapshot_period: 1.0 / snapshot_rate,
            min_dwell: 0.0,
        }
    }

    pub fn snapshot_rate(&self) -> f64 {
        1.0 / self.snapshot_period
    }

    pub fn collect_violations(&self, m: usize, errs: &mut Vec<String>) {
        let mut seen = vec![false; m];
        let mut perm = self.order.len() == m;
        for &e in &self.order {
            if e >= m || seen[e] {
                perm = false;
                break;
            }
            seen[e] = true;
        }
        if !perm {
            errs.push(format!(
                "switch order is not a permutation of 0..{m} ({} entries)",
                self.order.len()
            ));
        }
        if !(self.dwell >= self.min_dwell) || !self.dwell.is_finite() {
            errs.push(format!(
                "switch dwell {} s below the minimum {} s",
                self.dwell, self.min_dwell
            ));
        }
        if !(self.snapshot_period > 0.0) {
            errs.push("snapshot_period must be > 0".into());
        } else if m as f64 * self.dwell > self.snapshot_period * (1.0 + 1e-12) {
            errs.push(format!(
                "{m} elements × {} s dwell exceed the snapshot period {} s",
                self.dwell, self.snapshot_period
            ));
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        let mut errs = vec![];
        self.collect_violations(m, &mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Capture instant of each element (indexed by element id).
    pub fn element_times(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.order.len()];
        for (k, &e) in self.order.iter().enumerate() {
            out[e] = t + k as f64 * self.dwell;
        }
        out
    }
}

/// Receive-chain imperfections. Empty vectors mean "none".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ImpairmentProfile {
    pub phase_offsets: Vec<f64>,
    pub gain_ripple_db: Vec<f64>,
    pub drift_rates: Vec<f64>,
    /// Complex response over the band: no rows (flat), one row shared by
    /// every channel, or one row per channel.
    pub system_response: Vec<Vec<Complex64>>,
}

impl ImpairmentProfile {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn collect_violations(&self, m: usize, nf: usize, errs: &mut Vec<String>) {
        for (name, v) in [
            ("phase_offsets", &self.phase_offsets),
            ("gain_ripple_db", &self.gain_ripple_db),
            ("drift_rates", &self.drift_rates),
        ] {
            if !v.is_empty() && v.len() != m {
                errs.push(format!("impairments.{name} has {} entries, array has {m}", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                errs.push(format!("impairments.{name} must be finite"));
            }
        }
        let rows = self.system_response.len();
        if rows > 1 && rows != m {
            errs.push(format!("impairments.system_response has {rows} rows, array has {m}"));
        }
        for r in &self.system_response {
            if r.len() != nf {
                errs.push(format!(
                    "impairments.system_response row has {} bins, band has {nf}",
                    r.len()
                ));
                break;
            }
            if r.iter().any(|c| !(c.norm() > 0.0) || !c.is_finite()) {
                errs.push("impairments.system_response must be finite and nonzero".into());
                break;
            }
        }
    }

    /// Multiplicative factor on channel `m`, bin `f`, at time `t`.
    pub fn factor(&self, m: usize, bin: usize, t: f64) -> Complex64 {
        let get = |v: &Vec<f64>| v.get(m).copied().unwrap_or(0.0);
        let gain = 10f64.powf(get(&self.gain_ripple_db) / 20.0);
        let phase = get(&self.phase_offsets) + get(&self.drift_rates) * t;
        let sys = match self.system_response.len() {
            0 => Complex64::new(1.0, 0.0),
            1 => self.system_response[0][bin],
            _ => self.system_response[m][bin],
        };
        sys * Complex64::from_polar(gain, phase)
    }

    /// Raised-cosine amplitude ripple with a mild linear phase, shared by all
    /// channels.
    pub fn raised_cosine_ripple(nf: usize, depth_db: f64, cycles: f64) -> Vec<Complex64> {
        (0..nf)
            .map(|i| {
                let x = i as f64 / nf as f64;
                let db = -depth_db * 0.5 * (1.0 - (2.0 * PI * cycles * x).cos());
                Complex64::from_polar(10f64.powf(db / 20.0), 0.3 * PI * x)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Complex per-bin variance in channel units (|H|²).
    pub variance: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn off() -> Self {
        NoiseConfig {
            enabled: false,
            variance: 0.0,
            seed: 0,
        }
    }

    pub fn on(variance: f64, seed: u64) -> Self {
        NoiseConfig {
            enabled: true,
            variance,
            seed,
        }
    }

    pub fn effective_variance(&self) -> f64 {
        if self.enabled {
            self.variance
        } else {
            0.0
        }
    }
}

/// One raw capture of the switched array.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub timestamp: f64,
    /// Capture instant per element id.
    pub element_times: Vec<f64>,
    /// Raw frequency response `[element][bin]`.
    pub response: ChannelMatrix,
    pub noise_variance: f64,
}

impl Snapshot {
    pub fn elements(&self) -> usize {
        self.response.len()
    }

    pub fn bins(&self) -> usize {
        self.response.first().map_or(0, |r| r.len())
    }

    pub fn validate(&self, schedule: &SwitchSchedule) -> Result<()> {
        let m = schedule.order.len();
        let mut errs = vec![];
        if self.elements() != m {
            errs.push(format!("snapshot has {} elements, array has {m}", self.elements()));
        }
        if self.bins() == 0 {
            errs.push("snapshot has no frequency bins".into());
        }
        if self.response.iter().any(|r| r.len() != self.bins()) {
            errs.push("snapshot rows have unequal bin counts".into());
        }
        if self.element_times.len() == m {
            let ordered: Vec<f64> = schedule.order.iter().map(|&e| self.element_times[e]).collect();
            if ordered.windows(2).any(|w| w[1] < w[0]) {
                errs.push("element timestamps not increasing in schedule order".into());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Element-wise average of repeated captures.
pub fn average_snapshots(caps: &[Snapshot]) -> Result<Snapshot> {
    let first = caps
        .first()
        .ok_or_else(|| Error::InsufficientData("no captures to average".into()))?;
    let n = caps.len() as f64;
    let mut out = first.clone();
    for c in &caps[1..] {
        if c.elements() != first.elements() || c.bins() != first.bins() {
            return Err(Error::config("captures to average differ in shape"));
        }
        for (ro, rc) in out.response.iter_mut().zip(&c.response) {
            for (o, x) in ro.iter_mut().zip(rc) {
                *o += x;
            }
        }
    }
    for r in out.response.iter_mut() {
        for x in r.iter_mut() {
            *x /= n;
        }
    }
    out.timestamp = caps.iter().map(|c| c.timestamp).sum::<f64>() / n;
    out.noise_variance = first.noise_variance / n;
    Ok(out)
}

/// Everything needed to simulate captures through the switched receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Sounder {
    pub array: ArrayGeometry,
    pub schedule: SwitchSchedule,
    pub impairments: ImpairmentProfile,
    pub waveform: ToneConfig,
    pub carrier_frequency: f64,
}

impl Sounder {
    pub fn validate(&self) -> Result<()> {
        let mut errs = vec![];
        self.collect_violations(&mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn collect_violations(&self, errs: &mut Vec<String>) {
        self.array.collect_violations(errs);
        self.schedule.collect_violations(self.array.len(), errs);
        self.waveform.collect_violations(errs);
        self.impairments
            .collect_violations(self.array.len(), self.waveform.tone_count(), errs);
        if !(self.carrier_frequency > 0.0) {
            errs.push("carrier_frequency must be > 0".into());
        }
    }

    /// Absolute RF frequency of every tone.
    pub fn freq_grid(&self) -> Vec<f64> {
        self.waveform
            .tone_offsets()
            .iter()
            .map(|f| self.carrier_frequency + f)
            .collect()
    }

    fn finish(
        &self,
        t: f64,
        times: Vec<f64>,
        mut response: ChannelMatrix,
        noise: &NoiseConfig,
        index: u64,
    ) -> Snapshot {
        let mask = self.waveform.active_mask();
        let var = noise.effective_variance();
        let mut rng = indexed_rng(noise.seed, index);
        let sd = (var / 2.0).sqrt();
        for (m, row) in response.iter_mut().enumerate() {
            for (f, cell) in row.iter_mut().enumerate() {
                if !mask[f] {
                    *cell = Complex64::new(0.0, 0.0);
                    continue;
                }
                *cell *= self.impairments.factor(m, f, times[m]);
                if var > 0.0 {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    *cell += Complex64::new(re * sd, im * sd);
                }
            }
        }
        Snapshot {
            timestamp: t,
            element_times: times,
            response,
            noise_variance: var,
        }
    }

    /// Captures the scene at `t`. Element `order[k]` sees the channel at
    /// `t + k · dwell`; noise for capture `index` comes from its own
    /// sub-stream of `noise.seed`.
    pub fn capture(
        &self,
        scene: &SceneSpec,
        t: f64,
        noise: &NoiseConfig,
        index: u64,
    ) -> Result<Snapshot> {
        self.schedule.validate(self.array.len())?;
        let paths = scene.ground_truth_paths(t)?;
        Ok(self.capture_paths(&paths, t, noise, index))
    }

    pub fn capture_paths(
        &self,
        paths: &PathSet,
        t: f64,
        noise: &NoiseConfig,
        index: u64,
    ) -> Snapshot {
        let freqs = self.freq_grid();
        let times = self.schedule.element_times(t);
        let response = synth_channel_at(paths, &self.array, &freqs, &times);
        self.finish(t, times, response, noise, index)
    }

    /// Back-to-back reference: every channel fed through a cable of
    /// `attenuation_db` and `delay`, averaged over `repetitions` captures.
    pub fn capture_b2b(
        &self,
        attenuation_db: f64,
        delay: f64,
        t: f64,
        repetitions: usize,
        noise: &NoiseConfig,
        first_index: u64,
    ) -> Result<Snapshot> {
        let caps: Vec<Snapshot> = (0..repetitions.max(1))
            .map(|r| {
                self.capture_cabled(attenuation_db, delay, t, noise, first_index + r as u64)
            })
            .collect();
        average_snapshots(&caps)
    }

    /// A single cabled capture (identical feed on every channel).
    pub fn capture_cabled(
        &self,
        attenuation_db: f64,
        delay: f64,
        t: f64,
        noise: &NoiseConfig,
        index: u64,
    ) -> Snapshot {
        let ideal = cable_response(&self.freq_grid(), attenuation_db, delay);
        let response = vec![ideal; self.array.len()];
        let times = self.schedule.element_times(t);
        self.finish(t, times, response, noise, index)
    }
}

/// `10^(-A/20) · exp(-j2π f τ)` over the grid.
pub fn cable_response(freqs: &[f64], attenuation_db: f64, delay: f64) -> Vec<Complex64> {
    let a = 10f64.powf(-attenuation_db / 20.0);
    freqs
        .iter()
        .map(|f| Complex64::from_polar(a, -2.0 * PI * f * delay))
        .collect()
}

/// Draws one complex circular Gaussian with the given variance.
pub fn complex_gaussian<R: Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let sd = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * sd, im * sd)
}
