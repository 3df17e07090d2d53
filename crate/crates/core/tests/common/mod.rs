#![allow(dead_code)]

use std::fs;
use std::path::Path;

use chansense::estim::Pdp;
use chansense::geom::db_to_lin;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every file under `dir` as (relative path, bytes), sorted by path.
pub fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = vec![];
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Onset delay (ns) and peak power (dB) of each component in
/// [`seven_cluster_pdp`].
pub const SEVEN_COMPONENTS: [(f64, f64); 7] = [
    (12.0, 0.0),
    (41.0, -6.0),
    (77.0, -9.0),
    (118.0, -14.0),
    (165.0, -17.0),
    (221.0, -21.0),
    (290.0, -25.0),
];

/// A 512-bin, 1 ns PDP with seven exponentially decaying clusters over
/// exponential noise 45 dB below the strongest peak. Each cluster decays
/// 1.5 dB per bin over eight bins.
pub fn seven_cluster_pdp(seed: u64) -> Pdp {
    let n = 512;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = db_to_lin(-45.0);
    let mut power: Vec<f64> = (0..n)
        .map(|_| -noise * (1.0 - rng.gen::<f64>()).ln())
        .collect();
    for (onset, peak) in SEVEN_COMPONENTS {
        let i0 = onset as usize;
        for k in 0..8 {
            power[i0 + k] += db_to_lin(peak - 1.5 * k as f64);
        }
    }
    Pdp {
        timestamp: 0.0,
        delays: (0..n).map(|i| i as f64 * 1e-9).collect(),
        power,
    }
}
