//! One-phase and two-phase Bernoulli energies
//! `∫|∇u|² + Λ⁺|{u>0}| + Λ⁻|{u<0}|`, minimized through a continuation over
//! smoothed indicators `χ_ε ↑ Λ 1_{w>0}`.
//!
//! Each level is minimized by nonlinear red-black coordinate descent: the
//! energy restricted to one nodal value is `a (t - m)² + χ(t)` with `m` the
//! neighbour mean, which is minimized exactly. Over-relaxed steps are kept
//! only when they do not increase that local energy, so every update is a
//! descent step for the global discrete energy.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{CellTag, GridDomain, ScalarField};
use crate::harmonic::{harmonic_extension, PoissonOptions};
use crate::obstacle::dirichlet_energy;
use crate::relax;

/// `Λ S(w/ε)` with the cubic Hermite step `S(t) = 3t² - 2t³` on `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothedIndicator {
    pub lambda: f64,
    pub eps: f64,
}

impl SmoothedIndicator {
    pub fn value(&self, w: f64) -> f64 {
        if w <= 0.0 {
            0.0
        } else if w >= self.eps {
            self.lambda
        } else {
            let t = w / self.eps;
            self.lambda * t * t * (3.0 - 2.0 * t)
        }
    }

    pub fn derivative(&self, w: f64) -> f64 {
        if w <= 0.0 || w >= self.eps {
            0.0
        } else {
            let t = w / self.eps;
            6.0 * self.lambda * t * (1.0 - t) / self.eps
        }
    }
}

/// Halving schedule from `max|g|/2` down to `h²` (always ending at `h²`).
pub fn default_schedule(g_max: f64, h: f64) -> Vec<f64> {
    let floor = h * h;
    let mut eps = (g_max / 2.0).max(floor);
    let mut out = Vec::new();
    while eps > 2.0 * floor {
        out.push(eps);
        eps /= 2.0;
    }
    out.push(floor);
    out
}

fn validate_schedule(schedule: &[f64], h: f64) -> Result<()> {
    if schedule.is_empty() {
        return Err(LabError::Precondition("empty continuation schedule".into()));
    }
    if schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(LabError::Precondition("schedule must be strictly decreasing".into()));
    }
    if schedule.iter().any(|&e| e < h * h * (1.0 - 1e-12)) {
        return Err(LabError::Precondition("schedule entries must be at least h²".into()));
    }
    Ok(())
}

/// Penalties on each side of zero; `minus = None` is the one-phase case.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phases {
    pub plus: f64,
    pub minus: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct OnePhaseSpec {
    /// Nonnegative data on every non-Interior active cell.
    pub boundary: ScalarField,
    pub lambda: f64,
    pub schedule: Vec<f64>,
    pub tol: f64,
    pub max_sweeps: usize,
    pub contact_eps: Option<f64>,
}

impl OnePhaseSpec {
    pub fn new(boundary: ScalarField, lambda: f64) -> OnePhaseSpec {
        let h = boundary.domain().h();
        let schedule = default_schedule(boundary.max_abs(), h);
        OnePhaseSpec {
            boundary,
            lambda,
            schedule,
            tol: 1e-8,
            max_sweeps: 200_000,
            contact_eps: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TwoPhaseSpec {
    pub boundary: ScalarField,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub schedule: Vec<f64>,
    pub tol: f64,
    pub max_sweeps: usize,
    pub contact_eps: Option<f64>,
}

impl TwoPhaseSpec {
    pub fn new(boundary: ScalarField, lambda_plus: f64, lambda_minus: f64) -> TwoPhaseSpec {
        let h = boundary.domain().h();
        let schedule = default_schedule(boundary.max_abs(), h);
        TwoPhaseSpec {
            boundary,
            lambda_plus,
            lambda_minus,
            schedule,
            tol: 1e-8,
            max_sweeps: 200_000,
            contact_eps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub eps: f64,
    pub sweeps: usize,
    pub energy_start: f64,
    pub energy_end: f64,
}

#[derive(Clone, Debug)]
pub struct BernoulliSolution {
    pub u: ScalarField,
    pub phases: Phases,
    pub contact_eps: f64,
    /// `u > contact_eps`, per cell.
    pub positive: Vec<bool>,
    /// `u < -contact_eps`, per cell.
    pub negative: Vec<bool>,
    /// Sharp energy, see [`energy`].
    pub energy: f64,
    pub trace: Vec<LevelTrace>,
}

impl BernoulliSolution {
    pub fn domain(&self) -> &Arc<GridDomain> {
        self.u.domain()
    }
}

fn default_eps(dom: &GridDomain, tol: f64, given: Option<f64>) -> f64 {
    let h = dom.h();
    given.unwrap_or(tol.max(h * h / 100.0))
}

pub fn solve_one_phase(spec: &OnePhaseSpec) -> Result<BernoulliSolution> {
    if !(spec.lambda > 0.0) {
        return Err(LabError::Precondition("lambda must be positive".into()));
    }
    let dom = spec.boundary.domain();
    for idx in dom.active_cells() {
        if dom.tag(idx) != CellTag::Interior && spec.boundary.value(idx)? < 0.0 {
            return Err(LabError::Precondition("one-phase boundary data must be nonnegative".into()));
        }
    }
    let phases = Phases {
        plus: spec.lambda,
        minus: None,
    };
    let eps_c = default_eps(dom, spec.tol, spec.contact_eps);
    let mut sol = minimize(&spec.boundary, phases, &spec.schedule, spec.tol, spec.max_sweeps, eps_c)?;
    // the minimizer is nonnegative; remove roundoff below zero
    sol.u = sol.u.map(|x| x.max(0.0));
    sol.energy = energy(&sol.u, phases, eps_c);
    Ok(sol)
}

pub fn solve_two_phase(spec: &TwoPhaseSpec) -> Result<BernoulliSolution> {
    if !(spec.lambda_plus > 0.0 && spec.lambda_minus > 0.0) {
        return Err(LabError::Precondition("both lambdas must be positive".into()));
    }
    if spec.lambda_plus == spec.lambda_minus {
        return Err(LabError::Precondition("lambda_plus and lambda_minus must differ".into()));
    }
    let phases = Phases {
        plus: spec.lambda_plus,
        minus: Some(spec.lambda_minus),
    };
    let dom = spec.boundary.domain();
    let eps_c = default_eps(dom, spec.tol, spec.contact_eps);
    minimize(&spec.boundary, phases, &spec.schedule, spec.tol, spec.max_sweeps, eps_c)
}

#[derive(Clone, Copy)]
struct Local {
    a: f64,
    plus: SmoothedIndicator,
    minus: Option<SmoothedIndicator>,
}

impl Local {
    fn chi(&self, t: f64) -> f64 {
        if t > 0.0 {
            self.plus.value(t)
        } else {
            self.minus.map_or(0.0, |m| m.value(-t))
        }
    }

    fn cost(&self, t: f64, m: f64) -> f64 {
        self.a * (t - m) * (t - m) + self.chi(t)
    }

    /// Stationary points of `a (εs - m)² + Λ S(s)` with `s` in `(0, 1)`.
    fn ramp_roots(a: f64, ind: &SmoothedIndicator, m: f64, out: &mut Vec<f64>) {
        let e = ind.eps;
        let qa = 6.0 * ind.lambda / e;
        let qb = -(2.0 * a * e + 6.0 * ind.lambda / e);
        let qc = 2.0 * a * m;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return;
        }
        let sq = disc.sqrt();
        // numerically stable pair
        let q = -0.5 * (qb + qb.signum() * sq);
        for s in [q / qa, if q != 0.0 { qc / q } else { f64::NAN }] {
            if s > 0.0 && s < 1.0 {
                out.push(e * s);
            }
        }
    }

    fn argmin(&self, m: f64) -> f64 {
        let mut cands = vec![0.0];
        cands.push(m.max(self.plus.eps));
        Local::ramp_roots(self.a, &self.plus, m, &mut cands);
        match self.minus {
            Some(ind) => {
                cands.push(m.min(-ind.eps));
                let mut neg = Vec::new();
                Local::ramp_roots(self.a, &ind, -m, &mut neg);
                cands.extend(neg.into_iter().map(|t| -t));
            }
            None => cands.push(m.min(0.0)),
        }
        let mut best = cands[0];
        let mut best_cost = self.cost(best, m);
        for &t in &cands[1..] {
            let c = self.cost(t, m);
            if c < best_cost {
                best = t;
                best_cost = c;
            }
        }
        best
    }
}

/// Smoothed energy `h^{n-2} Σ_edges (u_j - u_i)² + h^n Σ_interior χ_ε(u)`,
/// the functional each continuation level descends.
pub fn smoothed_energy(u: &ScalarField, phases: Phases, eps: f64) -> f64 {
    let dom = u.domain();
    let local = Local {
        a: 0.0,
        plus: SmoothedIndicator { lambda: phases.plus, eps },
        minus: phases.minus.map(|l| SmoothedIndicator { lambda: l, eps }),
    };
    let bulk: f64 = dom.interior_cells().filter_map(|i| u.get(i)).map(|t| local.chi(t)).sum();
    dirichlet_energy(u) + bulk * dom.h().powi(dom.dim() as i32)
}

/// Nodal energy with the exact indicators `1_{u>0}`, `1_{u<0}` on Interior
/// cells; it dominates [`smoothed_energy`] for every `ε`.
pub fn nodal_energy(u: &ScalarField, phases: Phases) -> f64 {
    let dom = u.domain();
    let bulk: f64 = dom
        .interior_cells()
        .filter_map(|i| u.get(i))
        .map(|t| {
            if t > 0.0 {
                phases.plus
            } else if t < 0.0 {
                phases.minus.unwrap_or(0.0)
            } else {
                0.0
            }
        })
        .sum();
    dirichlet_energy(u) + bulk * dom.h().powi(dom.dim() as i32)
}

fn minimize(
    boundary: &ScalarField,
    phases: Phases,
    schedule: &[f64],
    tol: f64,
    max_sweeps: usize,
    eps_c: f64,
) -> Result<BernoulliSolution> {
    let dom = Arc::clone(boundary.domain());
    let n = dom.dim();
    let h = dom.h();
    if !(tol > 0.0) {
        return Err(LabError::Precondition("tol must be positive".into()));
    }
    validate_schedule(schedule, h)?;
    let start = harmonic_extension(boundary, &PoissonOptions { tol: 1e-6, ..Default::default() })?;
    let mut values = start.field.into_raw();
    for idx in dom.active_cells() {
        if dom.tag(idx) != CellTag::Interior {
            values[idx] = boundary.value(idx)?;
        } else if phases.minus.is_none() {
            values[idx] = values[idx].max(0.0);
        }
    }
    let a = 2.0 * n as f64 / (h * h);
    let omega = relax::optimal_omega(&dom);
    let strides = dom.strides();
    let mut trace = Vec::with_capacity(schedule.len());
    for &eps in schedule {
        let local = Local {
            a,
            plus: SmoothedIndicator { lambda: phases.plus, eps },
            minus: phases.minus.map(|l| SmoothedIndicator { lambda: l, eps }),
        };
        let energy_start = smoothed_energy(&ScalarField::from_values(&dom, values.clone())?, phases, eps);
        let mut sweeps = 0;
        loop {
            let mut change = 0.0f64;
            for color in 0..2 {
                for &idx in dom.color_cells(color) {
                    let mut s = 0.0;
                    for st in &strides[..n] {
                        s += values[idx - st] + values[idx + st];
                    }
                    let m = s / (2 * n) as f64;
                    let old = values[idx];
                    let best = local.argmin(m);
                    change = change.max((best - old).abs());
                    let over = old + omega * (best - old);
                    values[idx] = if local.cost(over, m) <= local.cost(old, m) { over } else { best };
                }
            }
            sweeps += 1;
            if a * change <= tol {
                break;
            }
            if sweeps >= max_sweeps {
                return Err(LabError::NotConverged {
                    iterations: sweeps,
                    residual: a * change,
                });
            }
        }
        let energy_end = smoothed_energy(&ScalarField::from_values(&dom, values.clone())?, phases, eps);
        if energy_end > energy_start + 1e-12 * energy_start.abs().max(1.0) {
            return Err(LabError::EnergyIncrease {
                eps,
                before: energy_start,
                after: energy_end,
            });
        }
        trace.push(LevelTrace {
            eps,
            sweeps,
            energy_start,
            energy_end,
        });
    }
    let u = ScalarField::from_values(&dom, values)?;
    let positive = (0..dom.len()).map(|i| u.get(i).is_some_and(|x| x > eps_c)).collect();
    let negative = (0..dom.len()).map(|i| u.get(i).is_some_and(|x| x < -eps_c)).collect();
    Ok(BernoulliSolution {
        energy: energy(&u, phases, eps_c),
        u,
        phases,
        contact_eps: eps_c,
        positive,
        negative,
        trace,
    })
}

/// Fraction of a simplex where a linear function with vertex values `w` is positive.
fn triangle_fraction(w: [f64; 3]) -> f64 {
    let pos: Vec<usize> = (0..3).filter(|&k| w[k] > 0.0).collect();
    let lone = |k: usize, sign: f64| {
        let others: Vec<usize> = (0..3).filter(|&j| j != k).collect();
        let wk = w[k] * sign;
        others.iter().map(|&j| wk / (wk - w[j] * sign)).product::<f64>()
    };
    match pos.len() {
        0 => 0.0,
        3 => 1.0,
        1 => lone(pos[0], 1.0),
        _ => {
            let neg = (0..3).find(|k| !pos.contains(k)).expect("one nonpositive");
            if w[neg] == 0.0 {
                1.0
            } else {
                1.0 - lone(neg, -1.0)
            }
        }
    }
}

/// Measure of `{w > 0}` for the piecewise-linear interpolant of `w` over the
/// lattice cells whose corners are all set (1D segments, 2D squares split
/// into two triangles). In 3D the positive-corner fraction of each cube is used.
pub fn positive_measure(w: &ScalarField) -> f64 {
    let dom = w.domain();
    let n = dom.dim();
    let h = dom.h();
    let ext = dom.extent();
    let st = dom.strides();
    let mut total = 0.0;
    for idx in 0..dom.len() {
        let mi = dom.multi_index(idx);
        if (0..n).any(|a| mi[a] + 1 >= ext[a]) {
            continue;
        }
        let corners: Vec<usize> = (0..(1usize << n))
            .map(|b| idx + (0..n).filter(|a| b >> a & 1 == 1).map(|a| st[a]).sum::<usize>())
            .collect();
        let vals: Option<Vec<f64>> = corners.iter().map(|&c| w.get(c)).collect();
        let Some(v) = vals else { continue };
        total += match n {
            1 => {
                let (a, b) = (v[0], v[1]);
                if a > 0.0 && b > 0.0 {
                    1.0
                } else if a <= 0.0 && b <= 0.0 {
                    0.0
                } else {
                    let (p, q) = if a > 0.0 { (a, b) } else { (b, a) };
                    p / (p - q)
                }
            }
            2 => {
                // corners 0:(0,0) 1:(1,0) 2:(0,1) 3:(1,1)
                0.5 * (triangle_fraction([v[0], v[1], v[3]]) + triangle_fraction([v[0], v[3], v[2]]))
            }
            _ => v.iter().filter(|&&x| x > 0.0).count() as f64 / v.len() as f64,
        };
    }
    total * h.powi(n as i32)
}

/// Sharp energy: Dirichlet sum plus `Λ⁺ |{u > ε_c}| + Λ⁻ |{u < -ε_c}|`,
/// measures taken from the linear interpolant.
pub fn energy(u: &ScalarField, phases: Phases, eps_c: f64) -> f64 {
    let mut e = dirichlet_energy(u) + phases.plus * positive_measure(&u.map(|x| x - eps_c));
    if let Some(lm) = phases.minus {
        e += lm * positive_measure(&u.map(|x| -x - eps_c));
    }
    e
}

/// Gradient at `idx` using only neighbours for which `in_phase` holds:
/// central where both are, one-sided where one is, zero where neither is.
pub fn phase_gradient(u: &ScalarField, idx: usize, in_phase: impl Fn(f64) -> bool) -> Option<f64> {
    let dom = u.domain();
    let h = dom.h();
    let c = u.get(idx)?;
    let mut g2 = 0.0;
    for a in 0..dom.dim() {
        let side = |s: isize| dom.neighbor(idx, a, s).and_then(|j| u.get(j)).filter(|&x| in_phase(x));
        let d = match (side(-1), side(1)) {
            (Some(l), Some(r)) => (r - l) / (2.0 * h),
            (None, Some(r)) => (r - c) / h,
            (Some(l), None) => (c - l) / h,
            (None, None) => 0.0,
        };
        g2 += d * d;
    }
    Some(g2.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientStats {
    pub samples: usize,
    pub target: f64,
    pub mean: f64,
    pub max_rel_deviation: f64,
}

/// `|∇_h u|` on cells of `{u > eps}` with an axis neighbour in `{u <= eps}`,
/// compared with `√Λ`.
pub fn fb_gradient_stats(u: &ScalarField, lambda: f64, eps: f64) -> Result<GradientStats> {
    let dom = u.domain();
    let n = dom.dim();
    let target = lambda.sqrt();
    let mut grads = Vec::new();
    for idx in dom.interior_cells() {
        let Some(x) = u.get(idx) else { continue };
        if x <= eps {
            continue;
        }
        let at_interface = (0..n).any(|a| {
            [-1, 1]
                .iter()
                .any(|&s| dom.neighbor(idx, a, s).and_then(|j| u.get(j)).is_some_and(|y| y <= eps))
        });
        if at_interface {
            grads.push(phase_gradient(u, idx, |y| y > eps).ok_or(LabError::MissingValue(idx))?);
        }
    }
    if grads.is_empty() {
        return Err(LabError::EmptySet("no interface cells".into()));
    }
    let mean = grads.iter().sum::<f64>() / grads.len() as f64;
    let max_rel_deviation = grads.iter().map(|g| (g - target).abs() / target).fold(0.0, f64::max);
    Ok(GradientStats {
        samples: grads.len(),
        target,
        mean,
        max_rel_deviation,
    })
}

pub fn measure_fb_gradient(sol: &BernoulliSolution) -> Result<GradientStats> {
    fb_gradient_stats(&sol.u, sol.phases.plus, sol.contact_eps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpStats {
    pub samples: usize,
    pub target: f64,
    pub mean_jump: f64,
    pub max_rel_deviation: f64,
}

/// `|∇u⁺|² - |∇u⁻|²` across two-phase interfaces: a positive cell and a
/// negative cell on one axis line with at most two near-zero cells between.
pub fn jump_stats(u: &ScalarField, lambda_plus: f64, lambda_minus: f64, eps: f64) -> Result<JumpStats> {
    let dom = u.domain();
    let n = dom.dim();
    let target = lambda_plus - lambda_minus;
    let mut jumps = Vec::new();
    for idx in dom.interior_cells() {
        let Some(x) = u.get(idx) else { continue };
        if x <= eps {
            continue;
        }
        for a in 0..n {
            for s in [-1isize, 1] {
                let mut partner = None;
                let mut cur = idx;
                for _ in 0..3 {
                    let Some(j) = dom.neighbor(cur, a, s) else { break };
                    let Some(y) = u.get(j) else { break };
                    if y < -eps {
                        partner = Some(j);
                    }
                    if y.abs() > eps {
                        break;
                    }
                    cur = j;
                }
                let Some(k) = partner else { continue };
                if dom.tag(k) != CellTag::Interior {
                    continue;
                }
                let gp = phase_gradient(u, idx, |z| z > eps).ok_or(LabError::MissingValue(idx))?;
                let gm = phase_gradient(u, k, |z| z < -eps).ok_or(LabError::MissingValue(k))?;
                jumps.push(gp * gp - gm * gm);
            }
        }
    }
    if jumps.is_empty() {
        return Err(LabError::EmptySet("no two-phase interface".into()));
    }
    let mean_jump = jumps.iter().sum::<f64>() / jumps.len() as f64;
    let scale = target.abs();
    let max_rel_deviation = jumps.iter().map(|j| (j - target).abs() / scale).fold(0.0, f64::max);
    Ok(JumpStats {
        samples: jumps.len(),
        target,
        mean_jump,
        max_rel_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::free_boundary::extract_free_boundary;
    use crate::grid::{laplacian, make_box_domain};
    use crate::oracles;
    use proptest::prelude::*;

    fn one_d_boundary(h: f64, left: f64, right: f64) -> ScalarField {
        let d = make_box_domain(1, 2.0, h).unwrap();
        ScalarField::from_fn_on(&d, &[CellTag::Dirichlet], |p| if p[0] < 0.0 { left } else { right })
    }

    #[test]
    fn indicator_shape() {
        let chi = SmoothedIndicator { lambda: 2.0, eps: 0.1 };
        assert_eq!(chi.value(-1.0), 0.0);
        assert_eq!(chi.value(0.0), 0.0);
        assert_eq!(chi.value(0.1), 2.0);
        assert_eq!(chi.value(5.0), 2.0);
        assert!((chi.value(0.05) - 1.0).abs() < 1e-15);
        let e = 1e-7;
        let fd = (chi.value(0.03 + e) - chi.value(0.03 - e)) / (2.0 * e);
        assert!((fd - chi.derivative(0.03)).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn indicator_family_is_monotone(w in -1.0f64..1.0, e1 in 1e-4f64..0.5, e2 in 1e-4f64..0.5) {
            let (small, large) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
            let a = SmoothedIndicator { lambda: 1.5, eps: small };
            let b = SmoothedIndicator { lambda: 1.5, eps: large };
            prop_assert!(a.value(w) >= b.value(w));
            prop_assert!((0.0..=1.5).contains(&a.value(w)));
            prop_assert!(a.value(w + 0.01) >= a.value(w));
            if w <= 0.0 {
                prop_assert_eq!(a.value(w), 0.0);
            }
        }
    }

    #[test]
    fn shipped_schedule_indicators_ordered() {
        let sched = default_schedule(0.5, 1.0 / 128.0);
        for pair in sched.windows(2) {
            let a = SmoothedIndicator { lambda: 1.0, eps: pair[1] };
            let b = SmoothedIndicator { lambda: 1.0, eps: pair[0] };
            for k in 0..1000 {
                let w = -0.5 + k as f64 / 1000.0;
                assert!(a.value(w) >= b.value(w));
            }
        }
        assert_eq!(*sched.last().unwrap(), 1.0 / 128.0 / 128.0);
    }

    #[test]
    fn local_minimizer_is_global_on_a_grid_search() {
        let local = Local {
            a: 2.0 / 0.01,
            plus: SmoothedIndicator { lambda: 1.0, eps: 0.05 },
            minus: Some(SmoothedIndicator { lambda: 0.4, eps: 0.05 }),
        };
        for k in 0..200 {
            let m = -0.2 + 0.4 * k as f64 / 200.0;
            let t = local.argmin(m);
            let best = (0..40001)
                .map(|j| -0.3 + 0.6 * j as f64 / 40000.0)
                .map(|s| local.cost(s, m))
                .fold(f64::INFINITY, f64::min);
            assert!(local.cost(t, m) <= best + 1e-9, "m={m}");
        }
    }

    #[test]
    fn one_phase_1d_oracle() {
        let h = 1.0 / 128.0;
        let spec = OnePhaseSpec::new(one_d_boundary(h, 0.0, 0.5), 1.0);
        let sol = solve_one_phase(&spec).unwrap();
        let (x_star, e_star) = oracles::one_phase_1d(0.5, 1.0);
        let geom = extract_free_boundary(&sol.u, sol.contact_eps).unwrap();
        assert_eq!(geom.vertices.len(), 1);
        assert!((geom.vertices[0][0] - x_star).abs() <= 3.0 * h);
        assert!((sol.energy - e_star).abs() <= 1e-3 * e_star, "{}", sol.energy);
        let stats = measure_fb_gradient(&sol).unwrap();
        assert!(stats.max_rel_deviation <= 0.1, "{stats:?}");
        assert!(sol.u.raw().iter().filter(|x| !x.is_nan()).all(|&x| x >= -1e-12));
        for t in &sol.trace {
            assert!(t.energy_end <= t.energy_start + 1e-12);
            assert!(nodal_energy(&sol.u, sol.phases) >= smoothed_energy(&sol.u, sol.phases, t.eps));
        }
    }

    #[test]
    fn large_data_has_no_free_boundary() {
        let h = 1.0 / 64.0;
        let spec = OnePhaseSpec::new(one_d_boundary(h, 0.0, 2.5), 1.0);
        let sol = solve_one_phase(&spec).unwrap();
        let dom = sol.domain();
        let err = dom
            .active_cells()
            .map(|i| (sol.u.get(i).unwrap() - 1.25 * (dom.point(i)[0] + 1.0)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn vanishing_lambda_gives_harmonic_extension() {
        let h = 1.0 / 16.0;
        let d = make_box_domain(2, 2.0, h).unwrap();
        let g = ScalarField::from_fn_on(&d, &[CellTag::Dirichlet], |p| (p[0] + 0.3).max(0.0));
        let sol = solve_one_phase(&OnePhaseSpec::new(g.clone(), 1e-8)).unwrap();
        let harm = harmonic_extension(&g, &PoissonOptions { tol: 1e-10, ..Default::default() }).unwrap();
        assert!(sol.u.max_abs_diff(&harm.field).unwrap() <= 1e-5);
    }

    #[test]
    fn bulk_is_harmonic() {
        let h = 1.0 / 32.0;
        let d = make_box_domain(2, 2.0, h).unwrap();
        let g = ScalarField::from_fn_on(&d, &[CellTag::Dirichlet], |p| (p[1] + 0.2).max(0.0));
        let sol = solve_one_phase(&OnePhaseSpec::new(g, 1.0)).unwrap();
        let geom = extract_free_boundary(&sol.u, sol.contact_eps).unwrap();
        let lap = laplacian(&sol.u).unwrap();
        for idx in d.interior_cells() {
            let far = geom.signed_distance.get(idx).unwrap() > 3.0 * h;
            if far && sol.u.get(idx).unwrap() > sol.contact_eps {
                assert!(lap.get(idx).unwrap().abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn planar_model_energy_and_gradient() {
        let h = 1.0 / 64.0;
        let d = make_box_domain(2, 1.0, h).unwrap();
        for lambda in [1.0f64, 4.0] {
            let u = ScalarField::from_fn(&d, |p| lambda.sqrt() * p[1].max(0.0));
            let stats = fb_gradient_stats(&u, lambda, 1e-12).unwrap();
            assert!((stats.mean - lambda.sqrt()).abs() <= 2.0 * h);
            assert!(stats.max_rel_deviation <= 2.0 * h);
            if lambda == 1.0 {
                let e = energy(&u, Phases { plus: 1.0, minus: None }, 1e-12);
                assert!((e - 1.0).abs() <= 5.0 * h, "{e}");
            }
        }
        let zero = ScalarField::constant(&d, 0.0);
        assert_eq!(energy(&zero, Phases { plus: 3.0, minus: Some(1.0) }, 1e-12), 0.0);
        assert!(fb_gradient_stats(&zero, 1.0, 1e-12).is_err());
    }

    #[test]
    fn solver_beats_planar_competitor() {
        let h = 1.0 / 32.0;
        let d = make_box_domain(2, 1.0, h).unwrap();
        let model = |p: &crate::grid::Point| p[1].max(0.0);
        let g = ScalarField::from_fn_on(&d, &[CellTag::Dirichlet], model);
        let sol = solve_one_phase(&OnePhaseSpec::new(g, 1.0)).unwrap();
        let competitor = ScalarField::from_fn(&d, model);
        // compared in the functional the last continuation level minimizes
        let eps = *sol.trace.last().map(|t| &t.eps).unwrap();
        let es = smoothed_energy(&sol.u, sol.phases, eps);
        let ec = smoothed_energy(&competitor, sol.phases, eps);
        assert!(es <= ec * (1.0 + 1e-6), "{es} vs {ec}");
        // the sharp energies agree to discretization accuracy
        let sharp = energy(&competitor, sol.phases, sol.contact_eps);
        assert!((sol.energy - sharp).abs() <= h * sharp);
    }

    #[test]
    fn two_phase_1d_oracle() {
        let h = 1.0 / 256.0;
        let (a, b, lp, lm) = (1.5, 1.2, 2.0, 1.0);
        let spec = TwoPhaseSpec::new(one_d_boundary(h, -b, a), lp, lm);
        let sol = solve_two_phase(&spec).unwrap();
        let (c, _) = oracles::two_phase_1d(a, b, lp, lm, 1e-12);
        let geom = extract_free_boundary(&sol.u, 0.0).unwrap();
        assert_eq!(geom.vertices.len(), 1);
        assert!((geom.vertices[0][0] - c).abs() <= 3.0 * h, "{:?} vs {c}", geom.vertices[0]);
        let jumps = jump_stats(&sol.u, lp, lm, sol.contact_eps).unwrap();
        assert!(jumps.max_rel_deviation <= 0.15, "{jumps:?}");
    }

    #[test]
    fn two_phase_preconditions_and_one_phase_agreement() {
        let h = 1.0 / 64.0;
        let g = one_d_boundary(h, 0.0, 0.5);
        assert!(solve_two_phase(&TwoPhaseSpec::new(g.clone(), 1.0, 1.0)).is_err());
        let two = solve_two_phase(&TwoPhaseSpec::new(g.clone(), 1.0, 0.5)).unwrap();
        let one = solve_one_phase(&OnePhaseSpec::new(g, 1.0)).unwrap();
        assert!(two.negative.iter().all(|&x| !x));
        assert!(two.u.max_abs_diff(&one.u).unwrap() <= 10.0 * 1e-8);
    }

    #[test]
    fn bad_schedules_rejected() {
        let g = one_d_boundary(0.25, 0.0, 0.5);
        let mut spec = OnePhaseSpec::new(g, 1.0);
        spec.schedule = vec![0.1, 0.2];
        assert!(solve_one_phase(&spec).is_err());
        spec.schedule = vec![0.001];
        assert!(solve_one_phase(&spec).is_err());
    }
}
