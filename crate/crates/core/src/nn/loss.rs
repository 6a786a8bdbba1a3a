//! Loss functions.

/// Huber loss of a scalar error, returning (value, derivative).
///
/// value = e^2/2 for |e| <= delta, else delta*(|e| - delta/2);
/// derivative = e clipped to [-delta, delta], continuous at the branch point.
pub fn huber_loss(error: f64, delta: f64) -> (f64, f64) {
    debug_assert!(delta > 0.0);
    let a = error.abs();
    if a <= delta {
        (0.5 * error * error, error)
    } else {
        (delta * (a - 0.5 * delta), delta * error.signum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_error() {
        assert_eq!(huber_loss(0.0, 1.0), (0.0, 0.0));
    }

    #[test]
    fn quadratic_branch() {
        assert_eq!(huber_loss(0.5, 1.0), (0.125, 0.5));
    }

    #[test]
    fn linear_branch() {
        assert_eq!(huber_loss(-3.0, 1.0), (2.5, -1.0));
    }

    #[test]
    fn derivative_continuous_at_branch_point() {
        let delta = 1.0;
        let (_, below) = huber_loss(delta, delta);
        let (_, above) = huber_loss(delta + f64::EPSILON, delta);
        assert_eq!(below, above);
        let (_, below_n) = huber_loss(-delta, delta);
        let (_, above_n) = huber_loss(-delta - f64::EPSILON, delta);
        assert_eq!(below_n, above_n);
    }
}
