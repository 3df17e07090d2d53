use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::pdp::to_delay_domain_padded;
use crate::error::{Error, Result};
use crate::geom::direction;
use crate::sounder::{uniform_step, AngularSupport, ArrayGeometry, ChannelMatrix};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageConfig {
    pub max_paths: usize,
    /// Stop once the relative residual-power improvement of a full sweep
    /// drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Coarse angle grid step, radians.
    pub angle_step: f64,
    /// Zero-padding factor of the coarse delay search.
    pub delay_oversample: usize,
    /// Angular search region; `None` uses the array support.
    #[serde(default)]
    pub search: Option<AngularSupport>,
    /// Largest delay searched; `None` uses the unambiguous range `1/Δf`.
    #[serde(default)]
    pub max_delay: Option<f64>,
}

impl Default for SageConfig {
    fn default() -> Self {
        SageConfig {
            max_paths: 5,
            tolerance: 1e-4,
            max_iterations: 50,
            angle_step: 1f64.to_radians(),
            delay_oversample: 4,
            search: None,
            max_delay: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    pub delay: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub amplitude: Complex64,
    /// Relative to the strongest estimate.
    pub power_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEstimates {
    /// Sorted by power, strongest first.
    pub paths: Vec<PathEstimate>,
    pub iterations: usize,
    pub converged: bool,
    /// Residual power after initialization and after every sweep.
    pub residual_history: Vec<f64>,
    pub input_power: f64,
}

impl PathEstimates {
    pub fn residual_power(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(self.input_power)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Params {
    delay: f64,
    az: f64,
    el: f64,
}

/// Wideband plane-wave signal model `c[m, f] = g_m · e^{j2πf(⟨u, p_m⟩/c − τ)}`
/// over the active bins.
struct Model<'a> {
    freqs: &'a [f64],
    active: &'a [bool],
    array: &'a ArrayGeometry,
    step: Option<f64>,
    n_active: f64,
}

impl<'a> Model<'a> {
    fn phasors(&self, s: f64, out: &mut [Complex64]) {
        match self.step {
            Some(step) => {
                let rot = Complex64::from_polar(1.0, 2.0 * PI * step * s);
                let mut ph = Complex64::new(0.0, 0.0);
                for (i, o) in out.iter_mut().enumerate() {
                    if i % 64 == 0 {
                        ph = Complex64::from_polar(1.0, 2.0 * PI * self.freqs[i] * s);
                    }
                    *o = ph;
                    ph *= rot;
                }
            }
            None => {
                for (o, f) in out.iter_mut().zip(self.freqs) {
                    *o = Complex64::from_polar(1.0, 2.0 * PI * f * s);
                }
            }
        }
    }

    /// `(c^H x, ‖c‖²)`.
    fn correlate(&self, x: &ChannelMatrix, p: Params, buf: &mut [Complex64]) -> (Complex64, f64) {
        let leads = self.array.element_leads(p.az, p.el);
        let mut acc = Complex64::new(0.0, 0.0);
        let mut g2 = 0.0;
        for (k, row) in x.iter().enumerate() {
            let g = self.array.element_gain(k, p.az, p.el);
            self.phasors(leads[k] - p.delay, buf);
            let mut s = Complex64::new(0.0, 0.0);
            for ((ph, v), &on) in buf.iter().zip(row).zip(self.active) {
                if on {
                    s += ph.conj() * v;
                }
            }
            acc += g.conj() * s;
            g2 += g.norm_sqr();
        }
        (acc, g2 * self.n_active)
    }

    fn objective(&self, x: &ChannelMatrix, p: Params, buf: &mut [Complex64]) -> f64 {
        let (c, n) = self.correlate(x, p, buf);
        if n > 0.0 {
            c.norm_sqr() / n
        } else {
            0.0
        }
    }

    /// `x += coef · c(p)`.
    fn accumulate(&self, x: &mut ChannelMatrix, p: Params, coef: Complex64, buf: &mut [Complex64]) {
        let leads = self.array.element_leads(p.az, p.el);
        for (k, row) in x.iter_mut().enumerate() {
            let g = coef * self.array.element_gain(k, p.az, p.el);
            self.phasors(leads[k] - p.delay, buf);
            for ((v, ph), &on) in row.iter_mut().zip(buf.iter()).zip(self.active) {
                if on {
                    *v += g * ph;
                }
            }
        }
    }
}

fn power(x: &ChannelMatrix) -> f64 {
    x.iter().flatten().map(|v| v.norm_sqr()).sum()
}

/// Maximizes `f` on `[a, b]`; returns the best abscissa and value seen.
fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

struct Search {
    region: AngularSupport,
    max_delay: f64,
    delay_cell: f64,
    angle_step: f64,
}

impl Search {
    /// One coordinate-wise golden-section pass. Keeps the current value of
    /// a coordinate unless the new one scores strictly higher.
    fn refine(&self, model: &Model, x: &ChannelMatrix, p: &mut Params, best: &mut f64, buf: &mut [Complex64]) {
        let dtol = self.delay_cell * 1e-7;
        let atol = 1e-9;
        let (lo, hi) = ((p.delay - self.delay_cell).max(0.0), (p.delay + self.delay_cell).min(self.max_delay));
        let (t, v) = golden_max(|d| model.objective(x, Params { delay: d, ..*p }, buf), lo, hi, dtol);
        if v > *best {
            p.delay = t;
            *best = v;
        }
        let r = &self.region;
        let (lo, hi) = ((p.az - self.angle_step).max(r.az_min), (p.az + self.angle_step).min(r.az_max));
        let (t, v) = golden_max(|a| model.objective(x, Params { az: a, ..*p }, buf), lo, hi, atol);
        if v > *best {
            p.az = t;
            *best = v;
        }
        let (lo, hi) = ((p.el - self.angle_step).max(r.el_min), (p.el + self.angle_step).min(r.el_max));
        let (t, v) = golden_max(|e| model.objective(x, Params { el: e, ..*p }, buf), lo, hi, atol);
        if v > *best {
            p.el = t;
            *best = v;
        }
    }

    /// Coarse delay by noncoherent delay-domain power, then coarse angles by
    /// narrowband beamforming at that delay.
    fn coarse(&self, model: &Model, x: &ChannelMatrix, os: usize) -> Params {
        let nf = model.freqs.len();
        let mut acc = vec![0.0; nf * os];
        for row in x {
            for (a, v) in acc.iter_mut().zip(to_delay_domain_padded(row, nf * os)) {
                *a += v.norm_sqr();
            }
        }
        let df = model.step.unwrap_or(1.0);
        let cell = 1.0 / (nf as f64 * df * os as f64);
        let (mut ibest, mut vbest) = (0, f64::NEG_INFINITY);
        for (i, v) in acc.iter().enumerate() {
            if i as f64 * cell <= self.max_delay && *v > vbest {
                ibest = i;
                vbest = *v;
            }
        }
        let delay = ibest as f64 * cell;

        let fc = model.freqs.iter().sum::<f64>() / nf as f64;
        let z: Vec<Complex64> = x
            .iter()
            .map(|row| {
                row.iter()
                    .zip(model.freqs)
                    .zip(model.active)
                    .filter(|(_, &on)| on)
                    .map(|((v, f), _)| v * Complex64::from_polar(1.0, 2.0 * PI * f * delay))
                    .sum()
            })
            .collect();
        let r = &self.region;
        let n_az = ((r.az_max - r.az_min) / self.angle_step).floor() as usize + 1;
        let n_el = ((r.el_max - r.el_min) / self.angle_step).floor() as usize + 1;
        let (mut best, mut bv) = (Params { delay, az: r.az_min, el: r.el_min }, f64::NEG_INFINITY);
        for i in 0..n_az {
            let az = r.az_min + i as f64 * self.angle_step;
            for j in 0..n_el {
                let el = r.el_min + j as f64 * self.angle_step;
                let u = direction(az, el);
                let mut s = Complex64::new(0.0, 0.0);
                let mut g2 = 0.0;
                for (k, pos) in model.array.positions.iter().enumerate() {
                    let g = model.array.element_gain(k, az, el);
                    let ph = Complex64::from_polar(1.0, -2.0 * PI * fc * u.dot(pos) / SPEED_OF_LIGHT);
                    s += g.conj() * ph * z[k];
                    g2 += g.norm_sqr();
                }
                let v = if g2 > 0.0 { s.norm_sqr() / g2 } else { 0.0 };
                if v > bv {
                    bv = v;
                    best = Params { delay, az, el };
                }
            }
        }
        best
    }
}

/// SAGE estimation of delay, arrival angles and complex amplitude per path.
///
/// Successive interference cancellation seeds up to `max_paths` paths;
/// each sweep then re-estimates every path against the signal with all
/// other paths cancelled. Residual power never increases between sweeps.
pub fn sage_estimate(
    response: &ChannelMatrix,
    freqs: &[f64],
    active: &[bool],
    array: &ArrayGeometry,
    cfg: &SageConfig,
) -> Result<PathEstimates> {
    if cfg.max_paths < 1 {
        return Err(Error::config("max_paths must be at least 1"));
    }
    if response.len() != array.len() || response.iter().any(|r| r.len() != freqs.len()) {
        return Err(Error::config(format!(
            "response is {}×{}, array has {} elements and grid {} bins",
            response.len(),
            response.first().map_or(0, |r| r.len()),
            array.len(),
            freqs.len()
        )));
    }
    if active.len() != freqs.len() {
        return Err(Error::config("active mask length differs from grid"));
    }
    let step = uniform_step(freqs);
    let input_power = power(response);
    let mut out = PathEstimates {
        paths: vec![],
        iterations: 0,
        converged: true,
        residual_history: vec![],
        input_power,
    };
    if input_power == 0.0 {
        return Ok(out);
    }
    let Some(df) = step else {
        return Err(Error::config("SAGE needs a uniform frequency grid"));
    };
    let model = Model {
        freqs,
        active,
        array,
        step,
        n_active: active.iter().filter(|a| **a).count() as f64,
    };
    let os = cfg.delay_oversample.max(1);
    let search = Search {
        region: cfg.search.unwrap_or(array.support).intersect(&array.support),
        max_delay: cfg.max_delay.unwrap_or(1.0 / df).min(1.0 / df),
        delay_cell: 1.0 / (freqs.len() as f64 * df * os as f64),
        angle_step: cfg.angle_step,
    };
    let mut buf = vec![Complex64::new(0.0, 0.0); freqs.len()];

    let mut residual = response.clone();
    let mut params: Vec<Params> = vec![];
    let mut amps: Vec<Complex64> = vec![];
    for _ in 0..cfg.max_paths {
        let mut p = search.coarse(&model, &residual, os);
        let mut best = model.objective(&residual, p, &mut buf);
        if best <= 1e-24 * input_power {
            break;
        }
        search.refine(&model, &residual, &mut p, &mut best, &mut buf);
        let (c, n) = model.correlate(&residual, p, &mut buf);
        let alpha = c / n;
        model.accumulate(&mut residual, p, -alpha, &mut buf);
        params.push(p);
        amps.push(alpha);
    }
    let mut res_power = power(&residual);
    out.residual_history.push(res_power);

    out.converged = false;
    for iter in 1..=cfg.max_iterations {
        out.iterations = iter;
        let before = res_power;
        for l in 0..params.len() {
            let mut x_l = residual.clone();
            model.accumulate(&mut x_l, params[l], amps[l], &mut buf);
            let mut p = params[l];
            let mut best = model.objective(&x_l, p, &mut buf);
            search.refine(&model, &x_l, &mut p, &mut best, &mut buf);
            let (c, n) = model.correlate(&x_l, p, &mut buf);
            let alpha = c / n;
            model.accumulate(&mut x_l, p, -alpha, &mut buf);
            let after = power(&x_l);
            // Guard against rounding: only accept a non-increasing residual.
            if after <= res_power {
                residual = x_l;
                res_power = after;
                params[l] = p;
                amps[l] = alpha;
            }
        }
        out.residual_history.push(res_power);
        if before == 0.0 || (before - res_power) / before < cfg.tolerance {
            out.converged = true;
            break;
        }
    }

    let pmax = amps.iter().map(|a| a.norm_sqr()).fold(0.0, f64::max);
    let mut paths: Vec<PathEstimate> = params
        .iter()
        .zip(&amps)
        .map(|(p, a)| PathEstimate {
            delay: p.delay,
            azimuth: p.az,
            elevation: p.el,
            amplitude: *a,
            power_db: 10.0 * (a.norm_sqr() / pmax).log10(),
        })
        .collect();
    paths.sort_by(|a, b| b.power_db.total_cmp(&a.power_db));
    out.paths = paths;
    Ok(out)
}
