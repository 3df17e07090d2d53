//! Clock models and alignment of multi-rate sensor streams onto a common
//! reference time grid.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest drift accepted from a fit.
pub const DRIFT_SANITY_BOUND: f64 = 1e-3;

/// `local = reference · (1 + drift) + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    pub offset: f64,
    pub drift: f64,
    /// Reference-time span the model was fitted on.
    pub span: (f64, f64),
    pub reference: String,
    #[serde(default)]
    pub residual_rms: f64,
}

impl ClockModel {
    pub fn identity() -> Self {
        ClockModel {
            offset: 0.0,
            drift: 0.0,
            span: (f64::NEG_INFINITY, f64::INFINITY),
            reference: "reference".into(),
            residual_rms: 0.0,
        }
    }

    pub fn new(offset: f64, drift: f64) -> Self {
        ClockModel {
            offset,
            drift,
            ..Self::identity()
        }
    }

    pub fn to_local(&self, reference_t: f64) -> f64 {
        reference_t * (1.0 + self.drift) + self.offset
    }

    pub fn to_reference(&self, local_t: f64) -> Mapped {
        let t = (local_t - self.offset) / (1.0 + self.drift);
        Mapped {
            time: t,
            extrapolated: t < self.span.0 || t > self.span.1,
        }
    }
}

/// A mapped timestamp; `extrapolated` is set outside the model's span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mapped {
    pub time: f64,
    pub extrapolated: bool,
}

/// Least-squares affine fit of `(local, reference)` pairs.
pub fn fit_clock_model(pairs: &[(f64, f64)]) -> Result<ClockModel> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "clock fit needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let xm = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    // Regress local − reference on reference; the slope is the drift.
    let ym = pairs.iter().map(|p| p.0 - p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.1 - xm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit(
            "clock fit needs distinct reference times".into(),
        ));
    }
    let sxy: f64 = pairs.iter().map(|p| (p.1 - xm) * (p.0 - p.1 - ym)).sum();
    let drift = sxy / sxx;
    let offset = ym - drift * xm;
    if !(drift.abs() < DRIFT_SANITY_BOUND) {
        return Err(Error::Numerical(format!(
            "fitted drift {drift:e} exceeds sanity bound {DRIFT_SANITY_BOUND:e}"
        )));
    }
    let rms = (pairs
        .iter()
        .map(|p| (p.0 - p.1 * (1.0 + drift) - offset).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let lo = pairs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(ClockModel {
        offset,
        drift,
        span: (lo, hi),
        reference: "reference".into(),
        residual_rms: rms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Channel,
    Lidar,
    Image,
    Geolocation,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Channel => "channel",
            Modality::Lidar => "lidar",
            Modality::Image => "image",
            Modality::Geolocation => "geolocation",
        }
    }

    pub fn nominal_rate(self) -> f64 {
        match self {
            Modality::Channel => 50.0,
            Modality::Lidar => 10.0,
            Modality::Image => 100.0,
            Modality::Geolocation => 120.0,
        }
    }
}

/// Frames are matched to the nearest sample; values are interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Frames,
    Values(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledStream {
    pub modality: Modality,
    pub nominal_rate: f64,
    pub local_times: Vec<f64>,
    pub payload: Payload,
    pub clock: ClockModel,
}

impl SampledStream {
    pub fn frames(modality: Modality, local_times: Vec<f64>, clock: ClockModel) -> Self {
        SampledStream {
            modality,
            nominal_rate: modality.nominal_rate(),
            local_times,
            payload: Payload::Frames,
            clock,
        }
    }

    pub fn values(modality: Modality, local_times: Vec<f64>, values: Vec<Vec<f64>>, clock: ClockModel) -> Self {
        SampledStream {
            modality,
            nominal_rate: modality.nominal_rate(),
            local_times,
            payload: Payload::Values(values),
            clock,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = vec![];
        if self.local_times.windows(2).any(|w| !(w[1] > w[0])) {
            errs.push(format!("{} timestamps must be strictly increasing", self.modality.name()));
        }
        if let Payload::Values(v) = &self.payload {
            if v.len() != self.local_times.len() {
                errs.push(format!(
                    "{} has {} values for {} timestamps",
                    self.modality.name(),
                    v.len(),
                    self.local_times.len()
                ));
            }
        }
        if !(self.nominal_rate > 0.0) {
            errs.push(format!("{} nominal rate must be > 0", self.modality.name()));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn reference_times(&self) -> Vec<f64> {
        self.local_times
            .iter()
            .map(|&t| self.clock.to_reference(t).time)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Interpolated,
    Nearest,
    Extrapolated,
    Absent,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Interpolated => "interpolated",
            Method::Nearest => "nearest",
            Method::Extrapolated => "extrapolated",
            Method::Absent => "absent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSample {
    pub method: Method,
    /// Sample used (nearest for frames, lower neighbor when interpolating).
    pub index: Option<usize>,
    pub value: Option<Vec<f64>>,
    /// Distance from the grid instant to the nearest used sample, s.
    pub residual: f64,
}

impl AlignedSample {
    fn absent() -> Self {
        AlignedSample {
            method: Method::Absent,
            index: None,
            value: None,
            residual: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedColumn {
    pub modality: Modality,
    pub nominal_rate: f64,
    pub samples: Vec<AlignedSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedTimeline {
    pub grid: Vec<f64>,
    pub columns: Vec<AlignedColumn>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignOptions {
    /// Samples closer than this to a grid instant count as exact, s.
    pub exact_tolerance: f64,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            exact_tolerance: 1e-9,
        }
    }
}

fn lerp(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + (y - x) * w).collect()
}

fn align_one(s: &SampledStream, grid: &[f64], opts: &AlignOptions) -> Vec<AlignedSample> {
    let t = s.reference_times();
    let n = t.len();
    if n == 0 {
        return vec![AlignedSample::absent(); grid.len()];
    }
    let values = match &s.payload {
        Payload::Values(v) => Some(v),
        Payload::Frames => None,
    };
    let interval = 1.0 / s.nominal_rate;
    grid.iter()
        .map(|&g| {
            // First sample at or after g.
            let hi = t.partition_point(|&x| x < g);
            let nearest = match (hi.checked_sub(1), (hi < n).then_some(hi)) {
                (Some(a), Some(b)) => {
                    if g - t[a] <= t[b] - g {
                        a
                    } else {
                        b
                    }
                }
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => unreachable!(),
            };
            let resid = (t[nearest] - g).abs();
            let value_at = |i: usize| values.map(|v| v[i].clone());
            if resid <= opts.exact_tolerance {
                return AlignedSample {
                    method: Method::Exact,
                    index: Some(nearest),
                    value: value_at(nearest),
                    residual: resid,
                };
            }
            let inside = g >= t[0] && g <= t[n - 1];
            if inside {
                let a = hi - 1;
                return match values {
                    Some(v) => AlignedSample {
                        method: Method::Interpolated,
                        index: Some(a),
                        value: Some(lerp(&v[a], &v[hi], (g - t[a]) / (t[hi] - t[a]))),
                        residual: resid,
                    },
                    None => AlignedSample {
                        method: Method::Nearest,
                        index: Some(nearest),
                        value: None,
                        residual: resid,
                    },
                };
            }
            if resid > interval {
                return AlignedSample::absent();
            }
            let value = match values {
                Some(v) if n >= 2 => {
                    let (a, b) = if g < t[0] { (0, 1) } else { (n - 2, n - 1) };
                    Some(lerp(&v[a], &v[b], (g - t[a]) / (t[b] - t[a])))
                }
                Some(v) => Some(v[nearest].clone()),
                None => None,
            };
            AlignedSample {
                method: Method::Extrapolated,
                index: Some(nearest),
                value,
                residual: resid,
            }
        })
        .collect()
}

/// Resolves every stream at every grid instant: exact match, linear
/// interpolation (values), nearest sample (frames), extrapolation up to one
/// nominal interval past the ends, or absent.
pub fn align(streams: &[SampledStream], grid: &[f64], opts: &AlignOptions) -> Result<AlignedTimeline> {
    for s in streams {
        s.validate()?;
    }
    Ok(AlignedTimeline {
        grid: grid.to_vec(),
        columns: streams
            .iter()
            .map(|s| AlignedColumn {
                modality: s.modality,
                nominal_rate: s.nominal_rate,
                samples: align_one(s, grid, opts),
            })
            .collect(),
    })
}

impl AlignedTimeline {
    /// Value columns re-expressed as streams on the grid (identity clock),
    /// e.g. to align again.
    pub fn value_streams(&self) -> Vec<SampledStream> {
        self.columns
            .iter()
            .filter(|c| c.samples.iter().any(|s| s.value.is_some()))
            .map(|c| {
                let (times, vals): (Vec<f64>, Vec<Vec<f64>>) = self
                    .grid
                    .iter()
                    .zip(&c.samples)
                    .filter_map(|(t, s)| s.value.clone().map(|v| (*t, v)))
                    .unzip();
                SampledStream {
                    modality: c.modality,
                    nominal_rate: c.nominal_rate,
                    local_times: times,
                    payload: Payload::Values(vals),
                    clock: ClockModel::identity(),
                }
            })
            .collect()
    }

    /// One row per grid instant, one column group per modality.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let width: Vec<usize> = self
            .columns
            .iter()
            .map(|c| c.samples.iter().filter_map(|s| s.value.as_ref().map(|v| v.len())).max().unwrap_or(0))
            .collect();
        let mut head = vec!["t_ref".to_string()];
        for (c, k) in self.columns.iter().zip(&width) {
            let n = c.modality.name();
            head.push(format!("{n}_method"));
            head.push(format!("{n}_index"));
            head.push(format!("{n}_residual_s"));
            for j in 0..*k {
                head.push(format!("{n}_v{j}"));
            }
        }
        writeln!(w, "{}", head.join(","))?;
        for (i, t) in self.grid.iter().enumerate() {
            let mut row = vec![format!("{t:.9}")];
            for (c, k) in self.columns.iter().zip(&width) {
                let s = &c.samples[i];
                row.push(s.method.name().into());
                row.push(s.index.map(|x| x.to_string()).unwrap_or_default());
                row.push(if s.residual.is_finite() { format!("{:.9}", s.residual) } else { String::new() });
                for j in 0..*k {
                    row.push(
                        s.value
                            .as_ref()
                            .and_then(|v| v.get(j))
                            .map(|x| format!("{x:.9}"))
                            .unwrap_or_default(),
                    );
                }
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_offset_recovered() {
        let pairs: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 + 0.5, i as f64)).collect();
        let m = fit_clock_model(&pairs).unwrap();
        assert!((m.offset - 0.5).abs() < 1e-12);
        assert!(m.drift.abs() < 1e-12);
        assert!(m.residual_rms <= 1e-12);
    }

    #[test]
    fn affine_recovered() {
        let pairs: Vec<(f64, f64)> = (0..100)
            .map(|i| {
                let r = i as f64 * 0.37;
                (r * (1.0 + 1e-6) + 0.5, r)
            })
            .collect();
        let m = fit_clock_model(&pairs).unwrap();
        assert!((m.offset - 0.5).abs() < 1e-12);
        assert!((m.drift - 1e-6).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit_clock_model(&[(1.0, 1.0)]), Err(Error::InsufficientData(_))));
        assert!(matches!(fit_clock_model(&[(1.0, 2.0), (1.5, 2.0)]), Err(Error::DegenerateFit(_))));
        assert!(matches!(fit_clock_model(&[(0.0, 0.0), (1.1, 1.0)]), Err(Error::Numerical(_))));
    }

    #[test]
    fn mapping_examples() {
        assert_eq!(ClockModel::identity().to_reference(3.25).time, 3.25);
        let m = ClockModel::new(0.5, 0.0);
        assert_eq!(m.to_reference(10.5).time, 10.0);
        let mut m = ClockModel::new(0.1, 2e-5);
        m.span = (0.0, 10.0);
        assert!(m.to_reference(m.to_local(20.0)).extrapolated);
        assert!(!m.to_reference(m.to_local(5.0)).extrapolated);
    }

    #[test]
    fn co_sampled_is_exact() {
        let grid: Vec<f64> = (0..20).map(|i| i as f64 * 0.02).collect();
        let s = SampledStream::frames(Modality::Channel, grid.clone(), ClockModel::identity());
        let tl = align(&[s], &grid, &AlignOptions::default()).unwrap();
        assert!(tl.columns[0].samples.iter().all(|x| x.method == Method::Exact && x.residual == 0.0));
    }

    #[test]
    fn empty_stream_absent() {
        let s = SampledStream::frames(Modality::Image, vec![], ClockModel::identity());
        let tl = align(&[s], &[0.0, 1.0], &AlignOptions::default()).unwrap();
        assert!(tl.columns[0].samples.iter().all(|x| x.method == Method::Absent));
    }

    #[test]
    fn extrapolation_limited_to_one_interval() {
        let s = SampledStream::values(
            Modality::Geolocation,
            vec![0.0, 1.0 / 120.0],
            vec![vec![0.0], vec![1.0]],
            ClockModel::identity(),
        );
        let tl = align(&[s], &[-0.005, 0.013, 0.5], &AlignOptions::default()).unwrap();
        let m: Vec<Method> = tl.columns[0].samples.iter().map(|x| x.method).collect();
        assert_eq!(m, vec![Method::Extrapolated, Method::Extrapolated, Method::Absent]);
        let v = tl.columns[0].samples[1].value.as_ref().unwrap()[0];
        assert!((v - 0.013 * 120.0).abs() < 1e-9);
    }

    #[test]
    fn non_increasing_rejected() {
        let s = SampledStream::frames(Modality::Lidar, vec![0.0, 0.1, 0.1], ClockModel::identity());
        assert!(matches!(align(&[s], &[0.0], &AlignOptions::default()), Err(Error::Config(_))));
    }
}
