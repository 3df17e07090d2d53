use chansense::calib::{
    apply_calibration, b2b_extract, estimate_phase_offsets, phase_spread, B2bReference, CirEntry,
};
use chansense::geom::wrap_pi;
use chansense::scene::{Interaction, Path, PathSet};
use chansense::sounder::{
    synth_channel_at, ArrayGeometry, ImpairmentProfile, NoiseConfig, Snapshot, Sounder, SwitchSchedule,
};
use chansense::waveform::ToneConfig;
use num_complex::Complex64;

fn sounder(impairments: ImpairmentProfile) -> Sounder {
    let array = ArrayGeometry::ula(4, 0.005);
    Sounder {
        schedule: SwitchSchedule::sequential(array.len(), 8e-6, 50.0),
        array,
        impairments,
        waveform: ToneConfig::new(4e6, 32, 512e6),
        carrier_frequency: 28e9,
    }
}

fn offsets_deg(deg: &[f64]) -> ImpairmentProfile {
    ImpairmentProfile {
        phase_offsets: deg.iter().map(|d| d.to_radians()).collect(),
        ..Default::default()
    }
}

#[test]
fn flat_system_extracts_unit_response() {
    let s = sounder(ImpairmentProfile::none());
    let freqs = s.freq_grid();
    let raw = s.capture_b2b(30.0, 0.0, 0.0, 1, &NoiseConfig::off(), 0).unwrap();
    let sys = b2b_extract(&raw, &freqs, B2bReference::pad(30.0), &s.waveform.active_mask()).unwrap();
    for row in &sys.response {
        for x in row {
            assert!((x - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }
}

#[test]
fn ripple_is_recovered_per_bin() {
    let nf = 65;
    let ripple = ImpairmentProfile::raised_cosine_ripple(nf, 3.0, 2.5);
    let s = sounder(ImpairmentProfile {
        system_response: vec![ripple.clone()],
        ..Default::default()
    });
    let freqs = s.freq_grid();
    let raw = s.capture_b2b(30.0, 3.2e-9, 0.0, 1, &NoiseConfig::off(), 0).unwrap();
    let reference = B2bReference { attenuation_db: 30.0, delay: 3.2e-9 };
    let sys = b2b_extract(&raw, &freqs, reference, &s.waveform.active_mask()).unwrap();
    for row in &sys.response {
        for (x, want) in row.iter().zip(&ripple) {
            assert!((x - want).norm() < 1e-9);
        }
    }
}

#[test]
fn repeated_extraction_is_bit_identical() {
    let s = sounder(offsets_deg(&[0.0, 10.0, 20.0, 30.0]));
    let freqs = s.freq_grid();
    let noise = NoiseConfig::on(1e-6, 42);
    let a = s.capture_b2b(30.0, 0.0, 0.0, 16, &noise, 0).unwrap();
    let b = s.capture_b2b(30.0, 0.0, 0.0, 16, &noise, 0).unwrap();
    let mask = s.waveform.active_mask();
    assert_eq!(
        b2b_extract(&a, &freqs, B2bReference::pad(30.0), &mask).unwrap(),
        b2b_extract(&b, &freqs, B2bReference::pad(30.0), &mask).unwrap()
    );
}

#[test]
fn self_calibration_is_all_ones_and_delay_survives() {
    let ripple = ImpairmentProfile::raised_cosine_ripple(65, 4.0, 1.5);
    let s = sounder(ImpairmentProfile {
        system_response: vec![ripple],
        phase_offsets: vec![0.0, 0.4, -1.1, 2.0],
        ..Default::default()
    });
    let freqs = s.freq_grid();
    let mask = s.waveform.active_mask();
    let raw = s.capture_b2b(20.0, 0.0, 0.0, 1, &NoiseConfig::off(), 0).unwrap();
    let sys = b2b_extract(&raw, &freqs, B2bReference::pad(20.0), &mask).unwrap();

    let mut own = raw.clone();
    own.response = sys.response.clone();
    let cal = apply_calibration(&own, &sys).unwrap();
    for row in &cal.response {
        for x in row {
            assert!((x - Complex64::new(1.0, 0.0)).norm() < 1e-10);
        }
    }

    let tau = 7e-9;
    let mut delayed = own;
    for row in delayed.response.iter_mut() {
        for (x, f) in row.iter_mut().zip(&freqs) {
            *x *= Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * tau);
        }
    }
    let cal = apply_calibration(&delayed, &sys).unwrap();
    for row in &cal.response {
        for (x, f) in row.iter().zip(&freqs) {
            let want = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * tau);
            assert!((x - want).norm() < 1e-10);
        }
    }
}

#[test]
fn end_to_end_matches_clean_synthesis() {
    let ripple = ImpairmentProfile::raised_cosine_ripple(65, 6.0, 3.0);
    let s = sounder(ImpairmentProfile {
        system_response: vec![ripple],
        phase_offsets: vec![0.0, 0.5, 1.0, 1.5],
        gain_ripple_db: vec![0.0, -1.0, 0.5, 2.0],
        ..Default::default()
    });
    let freqs = s.freq_grid();
    let mask = s.waveform.active_mask();
    let raw_b2b = s.capture_b2b(30.0, 1e-9, 0.0, 1, &NoiseConfig::off(), 0).unwrap();
    let sys = b2b_extract(&raw_b2b, &freqs, B2bReference { attenuation_db: 30.0, delay: 1e-9 }, &mask).unwrap();

    let paths = PathSet::new(
        0.0,
        vec![
            Path {
                delay: 40e-9,
                gain: Complex64::from_polar(1e-5, 0.3),
                azimuth: 0.9,
                elevation: 1.4,
                doppler: 0.0,
                interaction: Interaction::LineOfSight,
            },
            Path {
                delay: 95e-9,
                gain: Complex64::from_polar(3e-6, -2.0),
                azimuth: 2.2,
                elevation: 1.7,
                doppler: 0.0,
                interaction: Interaction::Reflection(0),
            },
        ],
    );
    let raw = s.capture_paths(&paths, 0.0, &NoiseConfig::off(), 0);
    let cal = apply_calibration(&raw, &sys).unwrap();
    let clean = synth_channel_at(&paths, &s.array, &freqs, &raw.element_times);
    for (a, b) in cal.response.iter().zip(&clean) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).norm() < 1e-8 * 1e-5);
        }
    }
}

fn cabled_series(s: &Sounder, n: usize, period: f64, noise: NoiseConfig) -> Vec<Snapshot> {
    (0..n)
        .map(|i| s.capture_cabled(10.0, 0.0, i as f64 * period, &noise, i as u64))
        .collect()
}

#[test]
fn noiseless_offsets_exact() {
    let s = sounder(offsets_deg(&[0.0, 30.0, 60.0, 90.0]));
    let caps = cabled_series(&s, 5, 0.02, NoiseConfig::off());
    let est = estimate_phase_offsets(&caps).unwrap();
    for (e, want) in est.offsets.iter().zip([0.0f64, 30.0, 60.0, 90.0]) {
        assert!((e - want.to_radians()).abs() < 1e-12);
    }
    assert_eq!(est.offsets[0], 0.0);
}

#[test]
fn noiseless_drift_exact() {
    let s = sounder(ImpairmentProfile {
        drift_rates: vec![0.0, 0.01, -0.02, 0.0],
        ..Default::default()
    });
    let caps = cabled_series(&s, 11, 1.0, NoiseConfig::off());
    let est = estimate_phase_offsets(&caps).unwrap();
    assert!((est.drift_rates[1] - 0.01).abs() < 1e-9);
    assert!((est.drift_rates[2] + 0.02).abs() < 1e-9);
    assert_eq!(est.window, (0.0, 10.0));
}

/// Maximizes Σ cos(ψ_c − θ − δ·t_c) over (θ, δ), coarse grid then fine grid.
fn grid_search_offset(psi: &[f64], t: &[f64]) -> f64 {
    let score = |th: f64, dr: f64| -> f64 {
        psi.iter().zip(t).map(|(p, t)| (p - th - dr * t).cos()).sum()
    };
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..=200 {
        let dr = -1.0 + i as f64 * 0.01;
        for j in 0..3600 {
            let th = (-180.0 + j as f64 * 0.1f64).to_radians();
            let v = score(th, dr);
            if v > best.0 {
                best = (v, th, dr);
            }
        }
    }
    let (_, th0, dr0) = best;
    for i in 0..=200 {
        let dr = dr0 - 0.01 + i as f64 * 1e-4;
        for j in 0..=200 {
            let th = th0 + (-0.1 + j as f64 * 0.001f64).to_radians();
            let v = score(th, dr);
            if v > best.0 {
                best = (v, th, dr);
            }
        }
    }
    best.1
}

#[test]
fn noisy_offsets_agree_with_grid_search() {
    let programmed = [0.0, 30.0, 60.0, 90.0];
    let s = sounder(offsets_deg(&programmed));
    // 10 dB pad → |H|² = 0.1; 20 dB SNR per bin.
    let caps = cabled_series(&s, 100, 0.02, NoiseConfig::on(1e-3, 7));
    let est = estimate_phase_offsets(&caps).unwrap();
    let spread = phase_spread(&caps);
    for ch in 1..4 {
        let psi: Vec<f64> = spread.relative.iter().map(|r| r[ch]).collect();
        let t: Vec<f64> = caps.iter().map(|c| c.timestamp).collect();
        let oracle = grid_search_offset(&psi, &t);
        assert!(wrap_pi(est.offsets[ch] - oracle).abs().to_degrees() < 0.05);
        assert!(wrap_pi(est.offsets[ch] - programmed[ch].to_radians()).abs().to_degrees() < 2.0);
    }
}

#[test]
fn invariant_to_global_rotation_and_idempotent() {
    let s = sounder(offsets_deg(&[0.0, -40.0, 75.0, 170.0]));
    let caps = cabled_series(&s, 20, 0.02, NoiseConfig::on(1e-3, 9));
    let a = estimate_phase_offsets(&caps).unwrap();
    let rot = Complex64::from_polar(1.0, 1.234);
    let rotated: Vec<Snapshot> = caps
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.response.iter_mut().flatten().for_each(|x| *x *= rot);
            c
        })
        .collect();
    let b = estimate_phase_offsets(&rotated).unwrap();
    for (x, y) in a.offsets.iter().zip(&b.offsets) {
        assert!(wrap_pi(x - y).abs() < 1e-9);
    }

    let compensated: Vec<CirEntry> = caps
        .iter()
        .map(|c| a.compensate(&CirEntry::new(c.timestamp, c.element_times.clone(), c.response.clone())))
        .collect();
    let second = estimate_phase_offsets(&compensated).unwrap();
    let twice: Vec<CirEntry> = compensated.iter().map(|e| second.compensate(e)).collect();
    for (e1, e2) in compensated.iter().zip(&twice) {
        for (r1, r2) in e1.response.iter().zip(&e2.response) {
            for (x, y) in r1.iter().zip(r2) {
                if x.norm() > 0.0 {
                    assert!(wrap_pi(x.arg() - y.arg()).abs() < 1e-6);
                }
            }
        }
    }
}
