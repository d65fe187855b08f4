//! Dormand–Prince 5(4) embedded Runge–Kutta with PI step-size control.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// 5th-order weights equal the last row of A (first-same-as-last).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Right-hand side `ẏ = f(t, y)` writing into the output slice.
pub trait OdeSystem {
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]);
}

impl<F: FnMut(f64, &[f64], &mut [f64])> OdeSystem for F {
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        self(t, y, dy)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-10,
        }
    }
}

/// One Dormand–Prince step of size `h`; returns `(y5, y4)`.
pub fn dopri_step(system: &mut impl OdeSystem, t: f64, y: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    system.rhs(t, y, &mut k[0]);
    for s in 1..7 {
        for i in 0..n {
            tmp[i] = y[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>();
        }
        let (done, rest) = k.split_at_mut(s);
        let _ = done;
        system.rhs(t + C[s] * h, &tmp, &mut rest[0]);
    }
    let combine = |b: &[f64; 7]| -> Vec<f64> {
        (0..n)
            .map(|i| y[i] + h * (0..7).map(|s| b[s] * k[s][i]).sum::<f64>())
            .collect()
    };
    (combine(&B5), combine(&B4))
}

/// Integrates from `t0` to `t_end`, returning every accepted `(t, y)`
/// including the initial point.
pub fn integrate(
    system: &mut impl OdeSystem,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    tol: Tolerances,
) -> Result<Vec<(f64, Vec<f64>)>> {
    const SAFETY: f64 = 0.9;
    const BETA: f64 = 0.04;
    const ALPHA: f64 = 0.2 - BETA * 0.75;
    const MIN_FACTOR: f64 = 0.2;
    const MAX_FACTOR: f64 = 10.0;

    let n = y0.len();
    let mut out = vec![(t0, y0.to_vec())];
    if t_end <= t0 {
        return Ok(out);
    }
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    system.rhs(t, &y, &mut k1);

    let scale = |y: &[f64], i: usize| tol.atol + tol.rtol * y[i].abs();
    // Initial step from the size of y and ẏ.
    let d0 = (0..n).map(|i| (y[i] / scale(&y, i)).powi(2)).sum::<f64>().sqrt() / (n as f64).sqrt();
    let d1 = (0..n).map(|i| (k1[i] / scale(&y, i)).powi(2)).sum::<f64>().sqrt() / (n as f64).sqrt();
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(t_end - t0);

    let mut err_prev = 1e-4_f64;
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut rejected_last = false;

    while t < t_end {
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::Numerical(format!("step size underflow at t = {t}")));
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        k[0].copy_from_slice(&k1);
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * k[j][i];
                }
                tmp[i] = y[i] + h * acc;
            }
            let (_, rest) = k.split_at_mut(s);
            system.rhs(t + C[s] * h, &tmp, &mut rest[0]);
        }
        // Stage 7 was evaluated at the 5th-order solution.
        y_new.copy_from_slice(&tmp);
        let mut err = 0.0;
        for i in 0..n {
            let e: f64 = h * (0..7).map(|s| (B5[s] - B4[s]) * k[s][i]).sum::<f64>();
            let sc = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / n as f64).sqrt();
        if !err.is_finite() {
            h *= MIN_FACTOR;
            rejected_last = true;
            continue;
        }

        if err <= 1.0 {
            let factor = (SAFETY * err.max(1e-10).powf(-ALPHA) * err_prev.powf(BETA))
                .clamp(MIN_FACTOR, MAX_FACTOR);
            let factor = if rejected_last { factor.min(1.0) } else { factor };
            err_prev = err.max(1e-4);
            t = if last { t_end } else { t + h };
            std::mem::swap(&mut y, &mut y_new);
            k1.copy_from_slice(&k[6]);
            out.push((t, y.clone()));
            h *= factor;
            rejected_last = false;
        } else {
            let factor = (SAFETY * err.powf(-ALPHA)).max(MIN_FACTOR);
            h *= factor;
            rejected_last = true;
        }
    }
    Ok(out)
}
