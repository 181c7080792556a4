//! Fixed-step classical Runge-Kutta integration over flat state arrays.
//!
//! ```text
//! k1 = f(y)
//! k2 = f(y + h/2·k1)
//! k3 = f(y + h/2·k2)
//! k4 = f(y + h·k3)
//! y' = y + h/6·(k1 + 2k2 + 2k3 + k4)
//! ```
//!
//! Inputs are held constant over the step, so `f` is autonomous here.

/// Default step shared by every module.
pub const DEFAULT_DT: f64 = 1e-3;

pub fn rk4_step<const N: usize, F>(y: &[f64; N], h: f64, mut f: F) -> [f64; N]
where
    F: FnMut(&[f64; N]) -> [f64; N],
{
    let k1 = f(y);
    let k2 = f(&axpy(y, 0.5 * h, &k1));
    let k3 = f(&axpy(y, 0.5 * h, &k2));
    let k4 = f(&axpy(y, h, &k3));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn axpy<const N: usize>(y: &[f64; N], a: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += a * k[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let mut y = [1.0];
        for _ in 0..1000 {
            y = rk4_step(&y, 1e-3, |y| [-y[0]]);
        }
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn harmonic_oscillator_fourth_order() {
        // global error should drop ~16x when h halves
        let err = |h: f64| {
            let n = (1.0 / h).round() as usize;
            let mut y = [1.0, 0.0];
            for _ in 0..n {
                y = rk4_step(&y, h, |y| [y[1], -y[0]]);
            }
            (y[0] - 1.0f64.cos()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
    }
}
