//! Error-rate statistics.

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959964;

/// Wilson score interval for `errors` out of `trials`.
pub fn wilson_interval(errors: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if errors == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if errors == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Axis value where a BER curve crosses `target`, interpolating `log10(ber)`
/// linearly between the first bracketing pair. BER values must be positive.
/// `None` when the curve never crosses.
pub fn crossing(points: &[(f64, f64)], target: f64) -> Option<f64> {
    let t = target.log10();
    points.windows(2).find_map(|w| {
        let ((x0, b0), (x1, b1)) = (w[0], w[1]);
        let (y0, y1) = (b0.log10(), b1.log10());
        if y0 == t {
            return Some(x0);
        }
        if (y0 - t) * (y1 - t) > 0.0 || y0 == y1 {
            return None;
        }
        Some(x0 + (t - y0) / (y1 - y0) * (x1 - x0))
    })
}

/// RMS error vector magnitude relative to the reference RMS.
pub fn evm(err_energy: f64, ref_energy: f64) -> f64 {
    if ref_energy > 0.0 {
        (err_energy / ref_energy).sqrt()
    } else {
        0.0
    }
}
