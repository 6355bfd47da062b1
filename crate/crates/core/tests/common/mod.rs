#![allow(dead_code)]

use qndsim::protocol::ProtocolParams;

pub const GHZ: f64 = 2.0 * std::f64::consts::PI * 1e9;

pub const GRID_AREA: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
pub const GRID_N: [f64; 4] = [0.0, 0.5, 1.0, 3.0];
pub const GRID_GAIN: [f64; 3] = [1.0, 10.0, 50.0];

/// The 48 `(A, N, e^{2r})` points of the moment grid.
pub fn moment_grid() -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for a in GRID_AREA {
        for n in GRID_N {
            for g in GRID_GAIN {
                out.push((a, n, g));
            }
        }
    }
    out
}

pub fn params(area: f64, gain: f64, n: f64) -> ProtocolParams {
    ProtocolParams::new(area, ProtocolParams::squeeze_from_gain(gain).unwrap(), n, GHZ).unwrap()
}

/// `|got − want| ≤ tol · max(|want|, 1)`.
pub fn close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want.abs().max(1.0)
}

/// Fourth central moment of `y = 2Am + e^{−r} z` with geometric `m`.
pub fn fourth_central_moment(a: f64, n: f64, r: f64) -> f64 {
    let s2 = (-2.0 * r).exp();
    let mu = 2.0 * a * n;
    let q = n / (n + 1.0);
    let mut w = 1.0 / (n + 1.0);
    let mut acc = 0.0;
    for m in 0..10_000 {
        let d = 2.0 * a * m as f64 - mu;
        acc += w * (d.powi(4) + 6.0 * d * d * s2 + 3.0 * s2 * s2);
        w *= q;
        if w < 1e-20 {
            break;
        }
    }
    acc
}
