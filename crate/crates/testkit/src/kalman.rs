//! Scalar Kalman analysis update, written from the textbook gain formulas.

/// One scalar Kalman update of `(mean, var)` under `y = h·x + ν`,
/// `ν ~ N(0, r)`: returns the posterior `(mean, var)`.
pub fn scalar_update(mean: f64, var: f64, h: f64, r: f64, y: f64) -> (f64, f64) {
    let gain = var * h / (h * h * var + r);
    let post_mean = mean + gain * (y - h * mean);
    let post_var = (1.0 - gain * h) * var;
    (post_mean, post_var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_information_limit() {
        let (m, v) = scalar_update(1.5, 2.0, 1.0, 1e12, 40.0);
        assert!((m - 1.5).abs() < 1e-9);
        assert!((v - 2.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_observation_limit() {
        let (m, v) = scalar_update(1.5, 2.0, 1.0, 1e-12, 40.0);
        assert!((m - 40.0).abs() < 1e-9);
        assert!(v < 1e-9);
    }

    #[test]
    fn equal_precision_splits_the_difference() {
        // prior N(0, 1), observation y = 2 with r = 1: posterior N(1, 0.5)
        let (m, v) = scalar_update(0.0, 1.0, 1.0, 1.0, 2.0);
        assert!((m - 1.0).abs() < 1e-12);
        assert!((v - 0.5).abs() < 1e-12);
    }
}
