//! Problem instances with known answers, shared by the verify suite, the
//! acceptance tests and the command-line front end.

use std::sync::Arc;

use crate::bernoulli::{OnePhaseSpec, TwoPhaseSpec};
use crate::error::Result;
use crate::grid::{make_ball_domain, make_box_domain, norm, CellTag, GridDomain, Point, ScalarField};
use crate::obstacle::ObstacleSpec;
use crate::oracles;
use crate::thin_obstacle::ThinObstacleSpec;

/// Normalized obstacle problem on (-1, 1) with `v = a` at both ends.
pub fn obstacle_1d(h: f64, a: f64) -> Result<ObstacleSpec> {
    let d = make_box_domain(1, 2.0, h)?;
    Ok(ObstacleSpec::normalized(&d, |_| a))
}

/// Normalized obstacle problem on the unit disk whose contact set is the disk
/// of radius 1/2. Boundary nodes take the closed-form radial solution, which
/// equals `RADIAL_G0` on the unit circle.
pub fn radial_obstacle(h: f64) -> Result<ObstacleSpec> {
    let d = make_ball_domain(2, 1.0, h, false)?;
    Ok(ObstacleSpec::normalized(&d, |p| oracles::radial_obstacle_v(norm(p))))
}

/// Same disk with the constant `RADIAL_G0` on every boundary node.
pub fn radial_obstacle_constant_data(h: f64) -> Result<ObstacleSpec> {
    let d = make_ball_domain(2, 1.0, h, false)?;
    Ok(ObstacleSpec::normalized(&d, |_| oracles::RADIAL_G0))
}

/// 1D boundary data on (-1, 1): `left` at -1, `right` at 1.
pub fn two_point_boundary(h: f64, left: f64, right: f64) -> Result<ScalarField> {
    let d = make_box_domain(1, 2.0, h)?;
    Ok(ScalarField::from_fn_on(&d, &[CellTag::Dirichlet], |p| if p[0] < 0.0 { left } else { right }))
}

/// One-phase problem on (-1, 1) with `u(-1) = 0`, `u(1) = g`.
pub fn one_phase_1d(h: f64, g: f64, lambda: f64) -> Result<OnePhaseSpec> {
    Ok(OnePhaseSpec::new(two_point_boundary(h, 0.0, g)?, lambda))
}

/// Two-phase problem on (-1, 1) with `u(-1) = -b`, `u(1) = a`.
pub fn two_phase_1d(h: f64, a: f64, b: f64, lambda_plus: f64, lambda_minus: f64) -> Result<TwoPhaseSpec> {
    Ok(TwoPhaseSpec::new(two_point_boundary(h, -b, a)?, lambda_plus, lambda_minus))
}

/// Thin obstacle problem on the upper unit half-disk with boundary data `g`
/// and face obstacle `phi`.
pub fn thin_obstacle(
    h: f64,
    g: impl Fn(&Point) -> f64,
    phi: impl Fn(&Point) -> f64,
) -> Result<ThinObstacleSpec> {
    let d = make_ball_domain(2, 1.0, h, true)?;
    let boundary = ScalarField::from_fn_on(&d, &[CellTag::Dirichlet], g);
    let mut obstacle = ScalarField::unset(&d);
    for idx in d.active_cells() {
        let p = d.point(idx);
        if p[1] == 0.0 {
            obstacle.set(idx, phi(&p));
        }
    }
    Ok(ThinObstacleSpec::new(boundary, obstacle))
}

/// Thin obstacle instance reproducing the 3/2-homogeneous solution with zero
/// obstacle.
pub fn thin_three_halves(h: f64) -> Result<ThinObstacleSpec> {
    thin_obstacle(h, |p| oracles::signorini_three_halves(p[0], p[1]), |_| 0.0)
}

/// Positive harmonic functions on `[-1, 1]²` used as Harnack probes.
pub fn positive_harmonic(k: usize) -> impl Fn(&Point) -> f64 {
    move |p: &Point| {
        let (x, y) = (p[0], p[1]);
        match k % 5 {
            0 => 2.0 + x,
            1 => x.exp() * y.cos() + 1.5,
            2 => ((x - 1.5).powi(2) + y * y).sqrt().ln() + 1.0,
            3 => {
                let (zx, zy) = (1.6, 1.0);
                (zx * zx + zy * zy - x * x - y * y) / ((x - zx).powi(2) + (y - zy).powi(2))
            }
            _ => x * x - y * y + 2.0,
        }
    }
}

/// Box domain `(-1, 1)^n` with the given spacing.
pub fn unit_box(n: usize, h: f64) -> Result<Arc<GridDomain>> {
    make_box_domain(n, 2.0, h)
}
