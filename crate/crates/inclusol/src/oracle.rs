//! Classic fixed-step integrators used as reference solutions when a
//! scenario declares an oracle check.

/// Fourth-order Runge-Kutta on a uniform grid; returns the states at all
/// `steps + 1` nodes.
pub fn rk4_solve(
    f: impl Fn(f64, &[f64], &mut [f64]),
    x0: &[f64],
    horizon: f64,
    steps: usize,
) -> Vec<Vec<f64>> {
    let dim = x0.len();
    let h = horizon / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.to_vec());
    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    for step in 0..steps {
        let t = horizon * (step as f64) / (steps as f64);
        f(t, &x, &mut k1);
        for i in 0..dim {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        f(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        f(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = x[i] + h * k3[i];
        }
        f(t + h, &tmp, &mut k4);
        for i in 0..dim {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(x.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential_decay() {
        let states = rk4_solve(|_, x, dx| dx[0] = -x[0], &[1.0], 1.0, 1000);
        let end = states.last().unwrap()[0];
        assert!((end - (-1.0_f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn rk4_harmonic_oscillator() {
        let states = rk4_solve(
            |_, x, dx| {
                dx[0] = x[1];
                dx[1] = -x[0];
            },
            &[1.0, 0.0],
            std::f64::consts::PI,
            2000,
        );
        let end = states.last().unwrap();
        assert!((end[0] + 1.0).abs() < 1e-9);
        assert!(end[1].abs() < 1e-9);
    }
}
