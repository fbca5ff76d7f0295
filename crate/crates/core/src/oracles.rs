//! Closed-form reference solutions used by tests, the verify suite and the
//! default CLI instances.

/// Contact radius of the 1D normalized obstacle problem on (-1, 1) with
/// boundary value `a` at both ends.
pub fn obstacle_1d_rho(a: f64) -> f64 {
    1.0 - (2.0 * a).sqrt()
}

/// `v(x) = (|x| - ρ)₊² / 2` solving `v'' = 1_{v>0}` on (-1, 1).
pub fn obstacle_1d_v(x: f64, a: f64) -> f64 {
    let d = (x.abs() - obstacle_1d_rho(a)).max(0.0);
    d * d / 2.0
}

/// Contact radius of the radial 2D instance.
pub const RADIAL_RHO: f64 = 0.5;

/// Boundary value on the unit circle that puts the free boundary at `r = 1/2`:
/// `3/16 - ln(2)/8`.
pub const RADIAL_G0: f64 = 0.100_856_602_430_006_84;

/// Radial solution of `Δv = 1_{v>0}` in the plane with contact disk of radius 1/2.
pub fn radial_obstacle_v(r: f64) -> f64 {
    let rho = RADIAL_RHO;
    if r <= rho {
        0.0
    } else {
        (r * r - rho * rho) / 4.0 - rho * rho / 2.0 * (r / rho).ln()
    }
}

/// `dv/dr` of [`radial_obstacle_v`].
pub fn radial_obstacle_dv(r: f64) -> f64 {
    let rho = RADIAL_RHO;
    if r <= rho {
        0.0
    } else {
        r / 2.0 - rho * rho / (2.0 * r)
    }
}

/// Half-space model `(x · e)₊² / 2`.
pub fn half_space(x: &[f64], e: &[f64]) -> f64 {
    let t: f64 = x.iter().zip(e).map(|(a, b)| a * b).sum();
    t.max(0.0).powi(2) / 2.0
}

/// Free boundary point and energy of the 1D one-phase problem on (-1, 1)
/// with `u(-1) = 0`, `u(1) = g`: the solution is `√Λ (x - x*)₊` with
/// `x* = 1 - g/√Λ`, and the energy is `2 g √Λ`.
pub fn one_phase_1d(g: f64, lambda: f64) -> (f64, f64) {
    let s = lambda.sqrt();
    (1.0 - g / s, 2.0 * g * s)
}

/// Brute-force crossing search for the 1D two-phase problem on (-1, 1) with
/// `u(1) = a > 0`, `u(-1) = -b < 0`. Among piecewise-linear profiles with a
/// single crossing at `c`, returns the crossing that minimizes
/// `∫ u'^2 + Λ⁺ |{u>0}| + Λ⁻ |{u<0}|`, refined to `tol`, together with its energy.
pub fn two_phase_1d(a: f64, b: f64, lp: f64, lm: f64, tol: f64) -> (f64, f64) {
    let energy = |c: f64| a * a / (1.0 - c) + b * b / (1.0 + c) + lp * (1.0 - c) + lm * (1.0 + c);
    let n = 20_000;
    let mut best = (0.0, f64::INFINITY);
    for k in 1..n {
        let c = -1.0 + 2.0 * k as f64 / n as f64;
        let e = energy(c);
        if e < best.1 {
            best = (c, e);
        }
    }
    let (mut lo, mut hi) = (best.0 - 2.0 / n as f64, best.0 + 2.0 / n as f64);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > tol {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if energy(m1) < energy(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let c = (lo + hi) / 2.0;
    (c, energy(c))
}

/// `r^{3/2} cos(3θ/2)` with `θ` measured from the positive `x1` axis in the
/// `(x1, x_n)` plane: the 3/2-homogeneous thin-obstacle model solution with
/// zero obstacle (contact on the negative `x1` half of the face).
pub fn signorini_three_halves(x1: f64, xn: f64) -> f64 {
    let r = (x1 * x1 + xn * xn).sqrt();
    if r == 0.0 {
        return 0.0;
    }
    let theta = xn.atan2(x1);
    r.powf(1.5) * (1.5 * theta).cos()
}
