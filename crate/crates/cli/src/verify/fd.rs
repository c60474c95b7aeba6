/// Central finite-difference gradient with per-coordinate step
/// `1e-5·(1 + |x_i|)`.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-5 * (1.0 + x[i].abs());
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d = cml::numkit::norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());
    let s = cml::numkit::norm(a).max(cml::numkit::norm(b));
    if s == 0.0 {
        d
    } else {
        d / s
    }
}
