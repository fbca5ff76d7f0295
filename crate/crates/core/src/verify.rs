//! Verification suite: runs every quantitative check over a configured list of
//! problem instances and reports one result per (check, instance) pair.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bernoulli::{measure_fb_gradient, jump_stats, solve_one_phase, solve_two_phase};
use crate::blowup::{
    blowup_sequence, classify, classify_at, concavity_check, convexity_deficit, eps_regularity_probe,
    half_space_model, iterate_improvement_map, nondegeneracy_check, reference_domain, rescale, sample_free_boundary,
    BlowupParams, BlowupTag,
};
use crate::error::{LabError, Result};
use crate::free_boundary::{
    extract_free_boundary, hausdorff_distance, normal_oscillation_in_ball, zero_set_measure_profile,
};
use crate::grid::{distance, laplacian_at, norm, point, CellTag, Point, ScalarField, MAX_DIM};
use crate::harmonic::{harmonic_extension, harnack_check, mean_value_profile, PoissonOptions};
use crate::instances;
use crate::io::write_json;
use crate::obstacle::{
    fit_growth, make_pathological_obstacle, solve_obstacle, solve_obstacle_from, ObstacleSolution,
};
use crate::oracles;
use crate::thin_obstacle::{signorini_residuals, solve_thin_obstacle};

/// Check id → the result it verifies. Every id maps to exactly one anchor.
pub const ANCHORS: &[(&str, &str)] = &[
    ("blowup-sequence", "blow-up pipeline"),
    ("classification", "regular free-boundary points"),
    ("convexity", "convexity of blow-ups"),
    ("fb-gradient", "one-phase free-boundary condition"),
    ("flatness", "flatness implies regularity"),
    ("flat-normal-oscillation", "flatness implies regularity"),
    ("general-obstacle-concavity", "pathological obstacle"),
    ("gradient-growth", "quadratic growth bound"),
    ("growth-bound", "quadratic growth bound"),
    ("half-space-model", "half-space blow-up model"),
    ("harnack", "Harnack inequality"),
    ("hausdorff", "Hausdorff convergence of free boundaries"),
    ("improvement-map", "improvement iteration"),
    ("lower-growth", "nondegeneracy"),
    ("measure-decay", "thinning of the zero set at singular points"),
    ("normalized-rhs", "normalized reformulation"),
    ("obstacle-fb-location", "obstacle problem"),
    ("obstacle-lcp", "obstacle problem"),
    ("obstacle-profile", "obstacle problem"),
    ("obstacle-solve", "obstacle problem"),
    ("one-phase-energy", "one-phase free-boundary condition"),
    ("one-phase-fb-location", "one-phase free-boundary condition"),
    ("one-phase-solve", "one-phase free-boundary condition"),
    ("pathological-obstacle", "pathological obstacle"),
    ("rescaling", "quadratic rescaling"),
    ("signorini-model", "thin obstacle system"),
    ("signorini-residuals", "thin obstacle system"),
    ("signorini-solve", "thin obstacle system"),
    ("singular-model", "degenerate blow-ups are quadratic"),
    ("smoothed-descent", "one-phase free-boundary condition"),
    ("superharmonic-mean-value", "obstacle problem"),
    ("two-phase-crossing", "two-phase jump condition"),
    ("two-phase-jump", "two-phase jump condition"),
    ("two-phase-solve", "two-phase jump condition"),
];

/// Every result the default suite must cover.
pub const ANCHOR_MANIFEST: &[&str] = &[
    "Harnack inequality",
    "Hausdorff convergence of free boundaries",
    "blow-up pipeline",
    "convexity of blow-ups",
    "degenerate blow-ups are quadratic",
    "flatness implies regularity",
    "half-space blow-up model",
    "improvement iteration",
    "nondegeneracy",
    "normalized reformulation",
    "obstacle problem",
    "one-phase free-boundary condition",
    "pathological obstacle",
    "quadratic growth bound",
    "quadratic rescaling",
    "regular free-boundary points",
    "thin obstacle system",
    "thinning of the zero set at singular points",
    "two-phase jump condition",
];

pub fn anchor_of(id: &str) -> Option<&'static str> {
    ANCHORS.iter().find(|(k, _)| *k == id).map(|(_, a)| *a)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    AtMost,
    AtLeast,
}

impl Relation {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Relation::AtMost => value <= threshold,
            Relation::AtLeast => value >= threshold,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub id: String,
    pub anchor: String,
    pub instance: String,
    /// Non-finite values are written as JSON `null` and read back as NaN.
    #[serde(deserialize_with = "nullable")]
    pub value: f64,
    pub relation: Relation,
    #[serde(deserialize_with = "nullable")]
    pub threshold: f64,
    pub pass: bool,
    #[serde(deserialize_with = "nullable_map")]
    pub details: BTreeMap<String, f64>,
    pub error: Option<String>,
}

fn nullable<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn nullable_map<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<String, f64>, D::Error> {
    let raw = BTreeMap::<String, Option<f64>>::deserialize(d)?;
    Ok(raw.into_iter().map(|(k, v)| (k, v.unwrap_or(f64::NAN))).collect())
}

impl CheckResult {
    fn measured(id: &str, instance: &str, value: f64, relation: Relation, threshold: f64) -> CheckResult {
        CheckResult {
            id: id.to_string(),
            anchor: anchor_of(id).unwrap_or_else(|| panic!("check id {id} has no anchor")).to_string(),
            instance: instance.to_string(),
            value,
            relation,
            threshold,
            pass: relation.holds(value, threshold),
            details: BTreeMap::new(),
            error: None,
        }
    }

    fn failed(id: &str, instance: &str, err: &LabError) -> CheckResult {
        CheckResult {
            error: Some(err.to_string()),
            pass: false,
            value: f64::NAN,
            ..CheckResult::measured(id, instance, f64::NAN, Relation::AtMost, f64::NAN)
        }
    }

    fn with(mut self, key: &str, value: f64) -> CheckResult {
        self.details.insert(key.to_string(), value);
        self
    }
}

/// Pass thresholds. Defaults are the tolerances the suite is specified with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub lcp_residual: f64,
    /// Free-boundary location error in units of `h`, 1D instance.
    pub fb_cells_1d: f64,
    /// Free-boundary radius error in units of `h`, radial instance.
    pub fb_cells_radial: f64,
    /// Profile error in units of `h²`, 1D instance.
    pub profile_h2: f64,
    pub normalized_rhs: f64,
    /// Largest growth-constant change between two refinements.
    pub growth_refinement: f64,
    pub growth_constant: f64,
    pub gradient_constant: f64,
    pub omega: f64,
    pub angle_deg: f64,
    pub classify_radius: f64,
    pub blowup_r0: f64,
    pub blowup_levels: usize,
    /// Largest sup distance between consecutive rescalings on `B_1`.
    pub blowup_distance: f64,
    pub hausdorff_r0: f64,
    pub hausdorff_levels: usize,
    pub hausdorff_ratio: f64,
    pub harnack_abs_slack: f64,
    pub harnack_h_slack: f64,
    pub fb_gradient_rel: f64,
    pub energy_rel: f64,
    pub descent_rel: f64,
    pub crossing_cells: f64,
    pub jump_rel: f64,
    pub signorini_cells: f64,
    /// Bound on `M_k` at `k = k_max` (the sequence must also strictly decrease).
    pub improvement_final: f64,
    pub flatness_radius: f64,
    pub flatness_eps: f64,
    pub normal_oscillation: f64,
    pub singular_matrix: f64,
    /// Zero-set profile bound in units of `h` for a hyperplane zero set.
    pub measure_band_cells: f64,
    pub pathological_change: f64,
    pub concavity_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            lcp_residual: 1e-8,
            fb_cells_1d: 3.0,
            fb_cells_radial: 2.0,
            profile_h2: 5.0,
            normalized_rhs: 1e-6,
            growth_refinement: 2.0,
            growth_constant: 1.0,
            gradient_constant: 2.0,
            omega: 0.1,
            angle_deg: 2.0,
            classify_radius: 0.05,
            blowup_r0: 0.2,
            blowup_levels: 3,
            blowup_distance: 0.1,
            hausdorff_r0: 0.4,
            hausdorff_levels: 2,
            hausdorff_ratio: 0.5,
            harnack_abs_slack: 1e-8,
            harnack_h_slack: 10.0,
            fb_gradient_rel: 0.1,
            energy_rel: 1e-3,
            descent_rel: 1e-12,
            crossing_cells: 3.0,
            jump_rel: 0.15,
            signorini_cells: 10.0,
            improvement_final: 1e-2,
            flatness_radius: 0.025,
            flatness_eps: 0.2,
            normal_oscillation: 0.25,
            singular_matrix: 0.05,
            measure_band_cells: 2.0,
            pathological_change: 1e-6,
            concavity_tol: 1e-9,
        }
    }
}

/// One problem instance and the settings it is run with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Instance {
    Obstacle1d {
        h: f64,
        a: f64,
        #[serde(default)]
        max_iters: Option<usize>,
    },
    RadialObstacle {
        h: f64,
        coarse_h: f64,
        #[serde(default)]
        max_iters: Option<usize>,
    },
    RadialFlatness {
        h: f64,
    },
    Harnack {
        h: f64,
        fields: usize,
        probes: usize,
        seed: u64,
    },
    OnePhase1d {
        h: f64,
        g: f64,
        lambda: f64,
        #[serde(default)]
        max_sweeps: Option<usize>,
    },
    TwoPhase1d {
        h: f64,
        a: f64,
        b: f64,
        lambda_plus: f64,
        lambda_minus: f64,
        #[serde(default)]
        max_sweeps: Option<usize>,
    },
    ThinObstacle {
        h: f64,
        #[serde(default)]
        max_iters: Option<usize>,
    },
    ImprovementMap {
        dims: Vec<usize>,
        c1: Vec<f64>,
        m0: f64,
        k_max: usize,
    },
    ModelFields {
        h: f64,
    },
    PathologicalObstacle {
        h: f64,
    },
}

/// `1/N` when `h` is a reciprocal integer, else the plain number.
pub fn fmt_spacing(h: f64) -> String {
    let inv = 1.0 / h;
    if (inv - inv.round()).abs() < 1e-9 {
        format!("1/{}", inv.round() as u64)
    } else {
        format!("{h}")
    }
}

impl Instance {
    pub fn descriptor(&self) -> String {
        match self {
            Instance::Obstacle1d { h, a, .. } => format!("obstacle-1d h={} a={a}", fmt_spacing(*h)),
            Instance::RadialObstacle { h, coarse_h, .. } => {
                format!("radial-obstacle h={} coarse={}", fmt_spacing(*h), fmt_spacing(*coarse_h))
            }
            Instance::RadialFlatness { h } => format!("radial-flatness h={}", fmt_spacing(*h)),
            Instance::Harnack { h, fields, probes, seed } => {
                format!("harnack h={} fields={fields} probes={probes} seed={seed}", fmt_spacing(*h))
            }
            Instance::OnePhase1d { h, g, lambda, .. } => {
                format!("one-phase-1d h={} g={g} lambda={lambda}", fmt_spacing(*h))
            }
            Instance::TwoPhase1d {
                h,
                a,
                b,
                lambda_plus,
                lambda_minus,
                ..
            } => format!(
                "two-phase-1d h={} a={a} b={b} lambda+={lambda_plus} lambda-={lambda_minus}",
                fmt_spacing(*h)
            ),
            Instance::ThinObstacle { h, .. } => format!("thin-obstacle h={}", fmt_spacing(*h)),
            Instance::ImprovementMap { m0, k_max, .. } => format!("improvement-map m0={m0} k_max={k_max}"),
            Instance::ModelFields { h } => format!("model-fields h={}", fmt_spacing(*h)),
            Instance::PathologicalObstacle { h } => format!("pathological-obstacle h={}", fmt_spacing(*h)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub blowup: BlowupParams,
    #[serde(default)]
    pub instances: Vec<Instance>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            thresholds: Thresholds::default(),
            blowup: BlowupParams::default(),
            instances: vec![
                Instance::Obstacle1d {
                    h: 1.0 / 256.0,
                    a: 0.125,
                    max_iters: None,
                },
                Instance::RadialObstacle {
                    h: 1.0 / 128.0,
                    coarse_h: 1.0 / 64.0,
                    max_iters: None,
                },
                Instance::RadialFlatness { h: 1.0 / 256.0 },
                Instance::Harnack {
                    h: 1.0 / 64.0,
                    fields: 5,
                    probes: 100,
                    seed: 20_240_601,
                },
                Instance::OnePhase1d {
                    h: 1.0 / 128.0,
                    g: 0.5,
                    lambda: 1.0,
                    max_sweeps: None,
                },
                Instance::TwoPhase1d {
                    h: 1.0 / 256.0,
                    a: 1.5,
                    b: 1.2,
                    lambda_plus: 2.0,
                    lambda_minus: 1.0,
                    max_sweeps: None,
                },
                Instance::ThinObstacle {
                    h: 1.0 / 128.0,
                    max_iters: None,
                },
                Instance::ImprovementMap {
                    dims: vec![2, 3],
                    c1: vec![0.05, 0.1],
                    m0: 1.0,
                    k_max: 100_000,
                },
                Instance::ModelFields { h: 1.0 / 32.0 },
                Instance::PathologicalObstacle { h: 1.0 / 64.0 },
            ],
        }
    }
}

impl SuiteConfig {
    pub fn empty() -> SuiteConfig {
        SuiteConfig {
            instances: Vec::new(),
            ..SuiteConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
}

/// Deterministic part of a suite report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub config: SuiteConfig,
    pub results: Vec<CheckResult>,
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub generated_unix: u64,
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub header: ReportHeader,
    pub body: ReportBody,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.body.summary.failed == 0
    }

    /// Emitted anchors, sorted and deduplicated.
    pub fn anchors(&self) -> BTreeSet<String> {
        self.body.results.iter().map(|r| r.anchor.clone()).collect()
    }

    /// Aligned text table; the first line is the only one that varies
    /// between runs.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# generated {} (unix), {:.1} s",
            self.header.generated_unix, self.header.elapsed_seconds
        );
        out.push_str(&self.body.to_text());
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("report.json"), self)?;
        std::fs::write(dir.join("report.txt"), self.to_text())?;
        Ok(())
    }
}

impl ReportBody {
    pub fn to_text(&self) -> String {
        let rows: Vec<[String; 6]> = self
            .results
            .iter()
            .map(|r| {
                [
                    r.id.clone(),
                    r.instance.clone(),
                    format!("{:.6e}", r.value),
                    r.relation.symbol().to_string(),
                    format!("{:.6e}", r.threshold),
                    if r.pass { "pass".into() } else { "FAIL".into() },
                ]
            })
            .collect();
        let head = ["check", "instance", "value", "", "threshold", "result"];
        let mut width = head.map(str::len);
        for row in &rows {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |cells: &[String; 6], out: &mut String| {
            let parts: Vec<String> = cells.iter().zip(width).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&head.map(String::from), &mut out);
        for (row, r) in rows.iter().zip(&self.results) {
            line(row, &mut out);
            if let Some(e) = &r.error {
                let _ = writeln!(out, "    error: {e}");
            }
        }
        let _ = writeln!(
            out,
            "{} checks, {} passed, {} failed",
            self.summary.total, self.summary.passed, self.summary.failed
        );
        out
    }
}

/// Runs every configured instance (in parallel) and returns the results
/// sorted by check id, then instance.
pub fn run_suite(config: &SuiteConfig) -> SuiteReport {
    let start = Instant::now();
    let mut results: Vec<CheckResult> = config
        .instances
        .par_iter()
        .flat_map_iter(|inst| run_instance(inst, config))
        .collect();
    results.sort_by(|a, b| (&a.id, &a.instance).cmp(&(&b.id, &b.instance)));
    let passed = results.iter().filter(|r| r.pass).count();
    let summary = Summary {
        total: results.len(),
        passed,
        failed: results.len() - passed,
    };
    SuiteReport {
        header: ReportHeader {
            generated_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            elapsed_seconds: start.elapsed().as_secs_f64(),
        },
        body: ReportBody {
            config: config.clone(),
            results,
            summary,
        },
    }
}

/// Checks for one instance; a failed solve yields a single failed result.
pub fn run_instance(instance: &Instance, config: &SuiteConfig) -> Vec<CheckResult> {
    let name = instance.descriptor();
    let t = &config.thresholds;
    let p = &config.blowup;
    match instance {
        Instance::Obstacle1d { h, a, max_iters } => {
            obstacle_1d_checks(&name, *h, *a, *max_iters, t, p).unwrap_or_else(|e| vec![CheckResult::failed("obstacle-solve", &name, &e)])
        }
        Instance::RadialObstacle { h, coarse_h, max_iters } => radial_checks(&name, *h, *coarse_h, *max_iters, t, p)
            .unwrap_or_else(|e| vec![CheckResult::failed("obstacle-solve", &name, &e)]),
        Instance::RadialFlatness { h } => {
            flatness_checks(&name, *h, t, p).unwrap_or_else(|e| vec![CheckResult::failed("obstacle-solve", &name, &e)])
        }
        Instance::Harnack { h, fields, probes, seed } => vec![harnack_probes(&name, *h, *fields, *probes, *seed, t)],
        Instance::OnePhase1d { h, g, lambda, max_sweeps } => one_phase_checks(&name, *h, *g, *lambda, *max_sweeps, t)
            .unwrap_or_else(|e| vec![CheckResult::failed("one-phase-solve", &name, &e)]),
        Instance::TwoPhase1d {
            h,
            a,
            b,
            lambda_plus,
            lambda_minus,
            max_sweeps,
        } => two_phase_checks(&name, *h, *a, *b, *lambda_plus, *lambda_minus, *max_sweeps, t)
            .unwrap_or_else(|e| vec![CheckResult::failed("two-phase-solve", &name, &e)]),
        Instance::ThinObstacle { h, max_iters } => {
            thin_checks(&name, *h, *max_iters, t).unwrap_or_else(|e| vec![CheckResult::failed("signorini-solve", &name, &e)])
        }
        Instance::ImprovementMap { dims, c1, m0, k_max } => improvement_checks(&name, dims, c1, *m0, *k_max, t),
        Instance::ModelFields { h } => model_checks(&name, *h, t, p),
        Instance::PathologicalObstacle { h } => pathological_checks(&name, *h, t)
            .unwrap_or_else(|e| vec![CheckResult::failed("obstacle-solve", &name, &e)]),
    }
}

fn solve_with(spec: crate::obstacle::ObstacleSpec, max_iters: Option<usize>) -> Result<ObstacleSolution> {
    let mut spec = spec;
    if let Some(m) = max_iters {
        spec.max_iters = m;
    }
    solve_obstacle(&spec)
}

/// `max |Δ_h v - 1|` over Interior cells whose whole stencil is in `{v > eps}`.
fn normalized_rhs_error(sol: &ObstacleSolution) -> Result<f64> {
    let dom = sol.domain();
    let n = dom.dim();
    let mut worst = 0.0f64;
    for idx in dom.interior_cells() {
        let stencil_positive = std::iter::once(Some(idx))
            .chain((0..n).flat_map(|a| [dom.neighbor(idx, a, -1), dom.neighbor(idx, a, 1)]))
            .all(|j| j.and_then(|j| sol.v.get(j)).is_some_and(|x| x > sol.contact_eps));
        if stencil_positive {
            worst = worst.max((laplacian_at(&sol.v, idx)? - 1.0).abs());
        }
    }
    Ok(worst)
}

fn angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d.clamp(-1.0, 1.0).acos().to_degrees()
}

fn outward(p: &Point, n: usize) -> Vec<f64> {
    let l = norm(p);
    p[..n].iter().map(|x| x / l).collect()
}

/// Checks shared by the obstacle instances at the sampled free-boundary points.
fn blowup_checks(
    name: &str,
    sol: &ObstacleSolution,
    t: &Thresholds,
    params: &BlowupParams,
    oracle_points: &[Point],
    out: &mut Vec<CheckResult>,
) -> Result<()> {
    let dom = sol.domain();
    let n = dom.dim();
    let h = dom.h();
    let geom = sol.free_boundary()?;
    let points = sample_free_boundary(&geom);
    if points.is_empty() {
        return Err(LabError::EmptySet("no free-boundary points to sample".into()));
    }
    let params = BlowupParams {
        eps: sol.contact_eps,
        ..params.clone()
    };
    let radii = [32.0 * h, 16.0 * h, 8.0 * h];
    let growth = fit_growth(&sol.v, &geom, sol.contact_eps, false)?;

    let mut nondeg_margin = f64::INFINITY;
    let mut worst_ratio = f64::INFINITY;
    let mut omega_small = 0.0f64;
    let mut omega_monotone = true;
    let mut sampled_angle = 0.0f64;
    let mut sampled_regular = 0usize;
    let mut worst_d = 0.0f64;
    let mut cauchy_points = 0usize;
    let mut sup_over_growth = 0.0f64;
    let mut rescale_bound = 0.0f64;
    let mut origin_value = 0.0f64;
    for x0 in &points {
        let nd = nondegeneracy_check(&sol.v, x0, &radii, sol.contact_eps)?;
        for (r, th) in nd.ratios.iter().zip(&nd.thresholds) {
            nondeg_margin = nondeg_margin.min(r - th);
            worst_ratio = worst_ratio.min(*r);
        }
        let cv = convexity_deficit(&sol.v, x0, &radii)?;
        omega_small = omega_small.max(*cv.omega.last().expect("radii nonempty"));
        omega_monotone &= cv.is_nonincreasing(0.0);

        let c = classify_at(&sol.v, x0, t.classify_radius, &params)?;
        if let BlowupTag::Regular { nu } = &c.tag {
            sampled_regular += 1;
            sampled_angle = sampled_angle.max(angle_deg(nu, &outward(x0, n)));
        }

        let seq = blowup_sequence(&sol.v, x0, t.blowup_r0, t.blowup_levels, 1.0, &params)?;
        cauchy_points += usize::from(seq.cauchy);
        worst_d = seq.distances.iter().copied().fold(worst_d, f64::max);
        let r_min = *seq.radii.last().expect("at least one level");
        rescale_bound = rescale_bound.max((1.0 + (n as f64).sqrt() * h / r_min).powi(2));
        sup_over_growth = sup_over_growth.max(seq.sup_ratios.iter().copied().fold(0.0, f64::max) / growth.constant);
        origin_value = origin_value.max(seq.origin_values.iter().map(|x| x.abs()).fold(0.0, f64::max));
    }
    let count = points.len() as f64;
    out.push(
        CheckResult::measured("lower-growth", name, nondeg_margin, Relation::AtLeast, 0.0)
            .with("points", count)
            .with("min_ratio", worst_ratio),
    );
    out.push(
        CheckResult::measured("convexity", name, omega_small, Relation::AtMost, t.omega)
            .with("points", count)
            .with("nonincreasing", f64::from(u8::from(omega_monotone))),
    );
    out.push(
        classification_at_oracle_points(name, sol, t, &params, oracle_points)?
            .with("sampled_points", count)
            .with("sampled_regular", sampled_regular as f64)
            .with("sampled_max_angle_regular", sampled_angle),
    );
    out.push(
        CheckResult::measured("blowup-sequence", name, worst_d, Relation::AtMost, t.blowup_distance)
            .with("points", count)
            .with("cauchy_points", cauchy_points as f64),
    );
    out.push(
        CheckResult::measured("rescaling", name, sup_over_growth, Relation::AtMost, rescale_bound)
            .with("growth_constant", growth.constant)
            .with("max_origin_value", origin_value),
    );
    Ok(())
}

/// Worst normal angle over points where the exact free boundary is known
/// (180° for a point not classified Regular).
fn classification_at_oracle_points(
    name: &str,
    sol: &ObstacleSolution,
    t: &Thresholds,
    params: &BlowupParams,
    points: &[Point],
) -> Result<CheckResult> {
    let n = sol.domain().dim();
    let mut worst = 0.0f64;
    let mut residual = 0.0f64;
    for x0 in points {
        let c = classify_at(&sol.v, x0, t.classify_radius, params)?;
        residual = residual.max(c.residual_regular);
        worst = worst.max(match &c.tag {
            BlowupTag::Regular { nu } => angle_deg(nu, &outward(x0, n)),
            _ => 180.0,
        });
    }
    Ok(CheckResult::measured("classification", name, worst, Relation::AtMost, t.angle_deg)
        .with("oracle_points", points.len() as f64)
        .with("max_residual_regular", residual))
}

fn superharmonic_check(name: &str, sol: &ObstacleSolution, radii: &[f64]) -> CheckResult {
    let h = sol.domain().h();
    match mean_value_profile(&sol.u, &[0.0; MAX_DIM], radii) {
        Ok(profile) => {
            let rise = |xs: &[f64]| xs.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            let worst = rise(&profile.sphere_averages).max(rise(&profile.ball_averages));
            CheckResult::measured("superharmonic-mean-value", name, worst, Relation::AtMost, h * h)
        }
        Err(e) => CheckResult::failed("superharmonic-mean-value", name, &e),
    }
}

fn obstacle_1d_checks(
    name: &str,
    h: f64,
    a: f64,
    max_iters: Option<usize>,
    t: &Thresholds,
    params: &BlowupParams,
) -> Result<Vec<CheckResult>> {
    let sol = solve_with(instances::obstacle_1d(h, a)?, max_iters)?;
    let dom = sol.domain();
    let rho = oracles::obstacle_1d_rho(a);
    let geom = sol.free_boundary()?;
    let fb_err = geom
        .vertices
        .iter()
        .map(|p| (p[0].abs() - rho).abs())
        .fold(if geom.vertices.len() == 2 { 0.0 } else { f64::INFINITY }, f64::max);
    let profile_err = dom
        .active_cells()
        .map(|i| (sol.v.get(i).unwrap_or(f64::NAN) - oracles::obstacle_1d_v(dom.point(i)[0], a)).abs())
        .fold(0.0, f64::max);
    let mut out = vec![
        CheckResult::measured("obstacle-fb-location", name, fb_err / h, Relation::AtMost, t.fb_cells_1d)
            .with("vertices", geom.vertices.len() as f64),
        CheckResult::measured("obstacle-profile", name, profile_err / (h * h), Relation::AtMost, t.profile_h2),
        CheckResult::measured("obstacle-lcp", name, sol.lcp_residual, Relation::AtMost, t.lcp_residual)
            .with("iterations", sol.iterations as f64),
        CheckResult::measured("normalized-rhs", name, normalized_rhs_error(&sol)?, Relation::AtMost, t.normalized_rhs),
    ];
    let up = fit_growth(&sol.v, &geom, sol.contact_eps, false)?;
    let grad = fit_growth(&sol.v, &geom, sol.contact_eps, true)?;
    out.push(CheckResult::measured("growth-bound", name, up.constant, Relation::AtMost, t.growth_constant));
    out.push(CheckResult::measured("gradient-growth", name, grad.constant, Relation::AtMost, t.gradient_constant));
    out.push(superharmonic_check(name, &sol, &[0.1, 0.2, 0.4, 0.6, 0.8]));
    blowup_checks(name, &sol, t, params, &[point(&[-rho]), point(&[rho])], &mut out)?;
    Ok(out)
}

fn radial_checks(
    name: &str,
    h: f64,
    coarse_h: f64,
    max_iters: Option<usize>,
    t: &Thresholds,
    params: &BlowupParams,
) -> Result<Vec<CheckResult>> {
    let sol = solve_with(instances::radial_obstacle(h)?, max_iters)?;
    let coarse = solve_with(instances::radial_obstacle(coarse_h)?, max_iters)?;
    let geom = sol.free_boundary()?;
    let radius_err = geom
        .vertices
        .iter()
        .map(|p| (norm(p) - oracles::RADIAL_RHO).abs())
        .fold(0.0, f64::max);
    let mut out = vec![
        CheckResult::measured("obstacle-fb-location", name, radius_err / h, Relation::AtMost, t.fb_cells_radial)
            .with("vertices", geom.vertices.len() as f64),
        CheckResult::measured("obstacle-lcp", name, sol.lcp_residual, Relation::AtMost, t.lcp_residual)
            .with("iterations", sol.iterations as f64),
        CheckResult::measured("normalized-rhs", name, normalized_rhs_error(&sol)?, Relation::AtMost, t.normalized_rhs),
    ];
    let coarse_geom = coarse.free_boundary()?;
    for (id, gradient) in [("growth-bound", false), ("gradient-growth", true)] {
        let fine = fit_growth(&sol.v, &geom, sol.contact_eps, gradient)?.constant;
        let rough = fit_growth(&coarse.v, &coarse_geom, coarse.contact_eps, gradient)?.constant;
        let change = (fine / rough).max(rough / fine);
        out.push(
            CheckResult::measured(id, name, change, Relation::AtMost, t.growth_refinement)
                .with("constant_fine", fine)
                .with("constant_coarse", rough),
        );
    }
    out.push(superharmonic_check(name, &sol, &[0.1, 0.2, 0.4, 0.6, 0.8]));
    blowup_checks(name, &sol, t, params, &[point(&[oracles::RADIAL_RHO, 0.0])], &mut out)?;
    out.push(hausdorff_check(name, &sol, t)?);
    Ok(out)
}

/// Hausdorff distance inside `B_0.9` between the rescaled free boundary
/// `(Γ - x₀)/r` and the tangent hyperplane `{y · ν = 0}`, finest radius over
/// coarsest. Rescaling maps free boundaries onto free boundaries, so the
/// source vertices are rescaled directly instead of re-extracted from the
/// interpolated field.
fn hausdorff_check(name: &str, sol: &ObstacleSolution, t: &Thresholds) -> Result<CheckResult> {
    let n = sol.domain().dim();
    if n != 2 {
        return Err(LabError::Precondition("hyperplane sampling is implemented for n = 2".into()));
    }
    let geom = sol.free_boundary()?;
    let clip = 0.9;
    let mut worst = 0.0f64;
    let mut finest = 0.0f64;
    for x0 in sample_free_boundary(&geom) {
        let nu = outward(&x0, n);
        let model: Vec<Point> = (-400..=400)
            .map(|k| {
                let s = k as f64 / 400.0;
                point(&[-s * nu[1], s * nu[0]])
            })
            .collect();
        let mut distances = Vec::new();
        for r in (0..=t.hausdorff_levels).map(|k| t.hausdorff_r0 / 2f64.powi(k as i32)) {
            let scaled: Vec<Point> = geom
                .vertices
                .iter()
                .map(|p| point(&[(p[0] - x0[0]) / r, (p[1] - x0[1]) / r]))
                .collect();
            distances.push(hausdorff_distance(&scaled, &model, &[0.0; MAX_DIM], clip)?);
        }
        let (first, last) = (distances[0], *distances.last().expect("nonempty"));
        finest = finest.max(last);
        worst = worst.max(if first > 0.0 { last / first } else { 0.0 });
    }
    Ok(CheckResult::measured("hausdorff", name, worst, Relation::AtMost, t.hausdorff_ratio).with("max_finest_distance", finest))
}

fn flatness_checks(name: &str, h: f64, t: &Thresholds, params: &BlowupParams) -> Result<Vec<CheckResult>> {
    let sol = solve_obstacle(&instances::radial_obstacle(h)?)?;
    let params = BlowupParams {
        eps: sol.contact_eps,
        ..params.clone()
    };
    let geom = sol.free_boundary()?;
    let x0 = point(&[oracles::RADIAL_RHO, 0.0]);
    let probe = eps_regularity_probe(&sol.v, &x0, t.flatness_radius, t.flatness_eps, &params)?;
    let mut out = vec![CheckResult::measured("flatness", name, probe.flatness, Relation::AtMost, t.flatness_eps)
        .with("c0", probe.c0_distance)
        .with("gradient", probe.gradient_distance)
        .with("radius", t.flatness_radius)];
    let osc = if probe.verdict {
        normal_oscillation_in_ball(&geom, &x0, t.flatness_radius).unwrap_or(f64::INFINITY)
    } else {
        f64::INFINITY
    };
    out.push(CheckResult::measured(
        "flat-normal-oscillation",
        name,
        osc,
        Relation::AtMost,
        t.normal_oscillation,
    ));
    Ok(out)
}

/// Randomized Harnack probes on positive discrete-harmonic fields: worst
/// margin over both inequalities (nonnegative means every probe passed).
pub fn harnack_probes(name: &str, h: f64, fields: usize, probes: usize, seed: u64, t: &Thresholds) -> CheckResult {
    let run = || -> Result<CheckResult> {
        let d = instances::unit_box(2, h)?;
        let opts = PoissonOptions {
            tol: 1e-9,
            ..Default::default()
        };
        let slack = t.harnack_abs_slack + t.harnack_h_slack * h;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::INFINITY;
        let mut failures = 0usize;
        for k in 0..fields {
            let g = ScalarField::from_fn_on(&d, &[CellTag::Dirichlet], instances::positive_harmonic(k));
            let f = harmonic_extension(&g, &opts)?.field;
            for _ in 0..probes.div_ceil(fields.max(1)) {
                let x0 = loop {
                    let p = point(&[rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]);
                    if norm(&p) <= 0.5 {
                        break p;
                    }
                };
                let big_r = rng.random_range(0.1..0.4);
                let r = rng.random_range(0.0..0.9) * big_r;
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let x1 = point(&[x0[0] + r * theta.cos(), x0[1] + r * theta.sin()]);
                let c = harnack_check(&f, &x0, &x1, big_r, opts.tol, slack)?;
                let margin = (c.f_x1 * c.upper_factor + slack - c.f_x0).min(c.f_x0 + slack - c.lower_factor * c.f_x1);
                worst = worst.min(margin);
                failures += usize::from(!c.pass);
            }
        }
        Ok(CheckResult::measured("harnack", name, worst, Relation::AtLeast, 0.0).with("failures", failures as f64))
    };
    run().unwrap_or_else(|e| CheckResult::failed("harnack", name, &e))
}

fn one_phase_checks(
    name: &str,
    h: f64,
    g: f64,
    lambda: f64,
    max_sweeps: Option<usize>,
    t: &Thresholds,
) -> Result<Vec<CheckResult>> {
    let mut spec = instances::one_phase_1d(h, g, lambda)?;
    if let Some(m) = max_sweeps {
        spec.max_sweeps = m;
    }
    let sol = solve_one_phase(&spec)?;
    let (x_star, e_star) = oracles::one_phase_1d(g, lambda);
    let geom = extract_free_boundary(&sol.u, sol.contact_eps)?;
    let fb_err = geom.vertices.iter().map(|p| (p[0] - x_star).abs()).fold(
        if geom.vertices.len() == 1 { 0.0 } else { f64::INFINITY },
        f64::max,
    );
    let stats = measure_fb_gradient(&sol)?;
    let descent = sol
        .trace
        .iter()
        .map(|l| (l.energy_end - l.energy_start) / l.energy_start.abs().max(1e-300))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(vec![
        CheckResult::measured("one-phase-fb-location", name, fb_err / h, Relation::AtMost, t.fb_cells_1d),
        CheckResult::measured("fb-gradient", name, stats.max_rel_deviation, Relation::AtMost, t.fb_gradient_rel)
            .with("mean", stats.mean)
            .with("samples", stats.samples as f64),
        CheckResult::measured(
            "one-phase-energy",
            name,
            (sol.energy - e_star).abs() / e_star,
            Relation::AtMost,
            t.energy_rel,
        )
        .with("energy", sol.energy)
        .with("oracle", e_star),
        CheckResult::measured("smoothed-descent", name, descent, Relation::AtMost, t.descent_rel)
            .with("levels", sol.trace.len() as f64),
    ])
}

#[allow(clippy::too_many_arguments)]
fn two_phase_checks(
    name: &str,
    h: f64,
    a: f64,
    b: f64,
    lambda_plus: f64,
    lambda_minus: f64,
    max_sweeps: Option<usize>,
    t: &Thresholds,
) -> Result<Vec<CheckResult>> {
    let mut spec = instances::two_phase_1d(h, a, b, lambda_plus, lambda_minus)?;
    if let Some(m) = max_sweeps {
        spec.max_sweeps = m;
    }
    let sol = solve_two_phase(&spec)?;
    let (c, _) = oracles::two_phase_1d(a, b, lambda_plus, lambda_minus, 1e-12);
    let geom = extract_free_boundary(&sol.u, 0.0)?;
    let err = geom
        .vertices
        .iter()
        .map(|p| (p[0] - c).abs())
        .fold(if geom.vertices.len() == 1 { 0.0 } else { f64::INFINITY }, f64::max);
    let jumps = jump_stats(&sol.u, lambda_plus, lambda_minus, sol.contact_eps)?;
    Ok(vec![
        CheckResult::measured("two-phase-crossing", name, err / h, Relation::AtMost, t.crossing_cells).with("oracle", c),
        CheckResult::measured("two-phase-jump", name, jumps.max_rel_deviation, Relation::AtMost, t.jump_rel),
    ])
}

fn thin_checks(name: &str, h: f64, max_iters: Option<usize>, t: &Thresholds) -> Result<Vec<CheckResult>> {
    let mut spec = instances::thin_three_halves(h)?;
    if let Some(m) = max_iters {
        spec.max_iters = m;
    }
    let sol = solve_thin_obstacle(&spec)?;
    let dom = sol.domain();
    let err = dom
        .active_cells()
        .map(|i| {
            let p = dom.point(i);
            (sol.u.get(i).unwrap_or(f64::NAN) - oracles::signorini_three_halves(p[0], p[1])).abs()
        })
        .fold(0.0, f64::max);
    let r = signorini_residuals(&sol);
    Ok(vec![
        CheckResult::measured("signorini-model", name, err / h, Relation::AtMost, t.signorini_cells),
        CheckResult::measured("signorini-residuals", name, r.max() / h, Relation::AtMost, t.signorini_cells)
            .with("complementarity", r.complementarity)
            .with("wrong_sign", r.wrong_sign)
            .with("neumann", r.neumann),
    ])
}

fn improvement_checks(name: &str, dims: &[usize], c1s: &[f64], m0: f64, k_max: usize, t: &Thresholds) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for &n in dims {
        for &c1 in c1s {
            let label = format!("{name} n={n} c1={c1}");
            out.push(match iterate_improvement_map(m0, c1, n, k_max) {
                Ok(s) => {
                    let value = if s.strictly_decreasing { s.last() } else { f64::INFINITY };
                    CheckResult::measured("improvement-map", &label, value, Relation::AtMost, t.improvement_final)
                        .with("strictly_decreasing", f64::from(u8::from(s.strictly_decreasing)))
                        .with("first_below_1e-3", s.first_below.map_or(-1.0, |k| k as f64))
                }
                Err(e) => CheckResult::failed("improvement-map", &label, &e),
            });
        }
    }
    out
}

/// Exact model fields: rotated half-spaces, the degenerate quadratics and the
/// hyperplane zero set.
fn model_checks(name: &str, h: f64, t: &Thresholds, params: &BlowupParams) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let half_space = || -> Result<CheckResult> {
        let d = reference_domain(2, 1.0, h)?;
        let mut worst = 0.0f64;
        for k in 0..8 {
            let th = (7.3 + 45.0 * k as f64).to_radians();
            let nu = [th.cos(), th.sin(), 0.0];
            let v = ScalarField::from_fn(&d, |y| half_space_model(y, &nu));
            let c = classify(&v, params)?;
            worst = worst.max(match &c.tag {
                BlowupTag::Regular { nu: got } => angle_deg(got, &nu[..2]),
                _ => 180.0,
            });
        }
        Ok(CheckResult::measured("half-space-model", name, worst, Relation::AtMost, t.angle_deg).with("rotations", 8.0))
    };
    out.push(half_space().unwrap_or_else(|e| CheckResult::failed("half-space-model", name, &e)));

    let singular = || -> Result<CheckResult> {
        let d = reference_domain(2, 1.0, h)?;
        let mut worst = 0.0f64;
        let cases: [(Box<dyn Fn(&Point) -> f64>, [[f64; 2]; 2]); 2] = [
            (Box::new(|y: &Point| norm(y).powi(2) / 4.0), [[0.5, 0.0], [0.0, 0.5]]),
            (Box::new(|y: &Point| y[0] * y[0] / 2.0), [[1.0, 0.0], [0.0, 0.0]]),
        ];
        for (f, want) in &cases {
            let v = ScalarField::from_fn(&d, f);
            let c = classify(&v, params)?;
            let err = match &c.tag {
                BlowupTag::Singular { a } => (0..2)
                    .flat_map(|i| (0..2).map(move |j| (i, j)))
                    .map(|(i, j)| (a[i][j] - want[i][j]).abs())
                    .fold(0.0, f64::max),
                _ => f64::INFINITY,
            };
            worst = worst.max(err);
        }
        Ok(CheckResult::measured("singular-model", name, worst, Relation::AtMost, t.singular_matrix))
    };
    out.push(singular().unwrap_or_else(|e| CheckResult::failed("singular-model", name, &e)));

    let band = || -> Result<CheckResult> {
        let hb = h / 2.0;
        let d = instances::unit_box(2, hb)?;
        let v = ScalarField::from_fn(&d, |p| p[0] * p[0] / 2.0);
        let radii = [8.0 * hb, 16.0 * hb, 32.0 * hb];
        let eps = hb * hb / 100.0;
        let profile = zero_set_measure_profile(&v, &[0.0; MAX_DIM], &radii, eps)?;
        let worst = profile.values.iter().copied().fold(0.0, f64::max) / hb;
        let mut r = CheckResult::measured("measure-decay", name, worst, Relation::AtMost, t.measure_band_cells);
        // the regular half-space point keeps a positive density for contrast
        let regular = ScalarField::from_fn(&d, |p| half_space_model(p, &[1.0, 0.0, 0.0]));
        let dense = zero_set_measure_profile(&regular, &[0.0; MAX_DIM], &radii, eps)?;
        r = r.with("regular_profile_at_largest_radius", *dense.values.last().expect("radii nonempty"));
        Ok(r)
    };
    out.push(band().unwrap_or_else(|e| CheckResult::failed("measure-decay", name, &e)));
    out
}

/// Raises the radial obstacle to the solution on a small disk inside the
/// positivity set, re-solves in general mode, and checks that the solution is
/// unchanged and that `Δ_h φ <= 0` at the new contact points.
fn pathological_checks(name: &str, h: f64, t: &Thresholds) -> Result<Vec<CheckResult>> {
    let base = solve_obstacle(&instances::radial_obstacle(h)?)?;
    let dom = base.domain().clone();
    let center = point(&[0.75, 0.0]);
    let k_cells: Vec<usize> = dom
        .cells_in_ball(&center, 0.05)
        .into_iter()
        .filter(|&i| distance(&dom.point(i), &center) < 0.05)
        .collect();
    let spec = make_pathological_obstacle(&base, &k_cells)?;
    let sol = solve_obstacle_from(&spec, Some(&base.u))?;
    let change = sol.u.max_abs_diff(&base.u)?;
    let island = k_cells.iter().filter(|&&k| sol.contact[k]).count();
    let geom = sol.free_boundary()?;
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0usize;
    for x0 in sample_free_boundary(&geom) {
        if let Ok(c) = concavity_check(&spec.obstacle, &sol.v, &x0, sol.contact_eps, t.concavity_tol) {
            worst = worst.max(c.laplacian);
            checked += 1;
        }
    }
    // points on the raised island, where φ is no longer the normalized obstacle
    for x0 in geom.vertices.iter().filter(|p| distance(p, &center) < 0.1) {
        if let Ok(c) = concavity_check(&spec.obstacle, &sol.v, x0, sol.contact_eps, t.concavity_tol) {
            worst = worst.max(c.laplacian);
            checked += 1;
        }
    }
    if checked == 0 {
        worst = f64::INFINITY;
    }
    Ok(vec![
        CheckResult::measured("pathological-obstacle", name, change, Relation::AtMost, t.pathological_change)
            .with("island_contact_cells", island as f64)
            .with("island_cells", k_cells.len() as f64),
        CheckResult::measured("general-obstacle-concavity", name, worst, Relation::AtMost, t.concavity_tol)
            .with("points", checked as f64),
    ])
}

/// Problem families for [`refinement_study`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefinementInstance {
    Obstacle1d,
    RadialObstacle,
    OnePhase1d,
    HalfSpaceModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub h: f64,
    pub errors: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementTable {
    pub instance: RefinementInstance,
    pub rows: Vec<RefinementRow>,
    /// Per metric, `e(h) / e(h/2)` for consecutive rows.
    pub ratios: BTreeMap<String, Vec<f64>>,
    /// Per metric, `log2` of the ratios; `None` when either error sits at the
    /// interpolation floor.
    pub orders: BTreeMap<String, Vec<Option<f64>>>,
}

const ERROR_FLOOR: f64 = 1e-12;

fn refinement_errors(instance: RefinementInstance, h: f64) -> Result<BTreeMap<String, f64>> {
    let mut e = BTreeMap::new();
    match instance {
        RefinementInstance::Obstacle1d => {
            let sol = solve_obstacle(&instances::obstacle_1d(h, 0.125)?.with_tol(1e-11))?;
            let rho = oracles::obstacle_1d_rho(0.125);
            let geom = sol.free_boundary()?;
            e.insert(
                "fb-location".into(),
                geom.vertices.iter().map(|p| (p[0].abs() - rho).abs()).fold(0.0, f64::max),
            );
            let dom = sol.domain();
            e.insert(
                "profile".into(),
                dom.active_cells()
                    .map(|i| (sol.v.get(i).unwrap_or(0.0) - oracles::obstacle_1d_v(dom.point(i)[0], 0.125)).abs())
                    .fold(0.0, f64::max),
            );
        }
        RefinementInstance::RadialObstacle => {
            let sol = solve_obstacle(&instances::radial_obstacle(h)?)?;
            let geom = sol.free_boundary()?;
            e.insert(
                "fb-radius".into(),
                geom.vertices.iter().map(|p| (norm(p) - oracles::RADIAL_RHO).abs()).fold(0.0, f64::max),
            );
            let dom = sol.domain();
            e.insert(
                "profile".into(),
                dom.active_cells()
                    .map(|i| (sol.v.get(i).unwrap_or(0.0) - oracles::radial_obstacle_v(norm(&dom.point(i)))).abs())
                    .fold(0.0, f64::max),
            );
        }
        RefinementInstance::OnePhase1d => {
            let sol = solve_one_phase(&instances::one_phase_1d(h, 0.5, 1.0)?)?;
            let (x_star, e_star) = oracles::one_phase_1d(0.5, 1.0);
            let geom = extract_free_boundary(&sol.u, sol.contact_eps)?;
            e.insert(
                "fb-location".into(),
                geom.vertices.iter().map(|p| (p[0] - x_star).abs()).fold(0.0, f64::max),
            );
            e.insert("energy".into(), (sol.energy - e_star).abs() / e_star);
        }
        RefinementInstance::HalfSpaceModel => {
            let d = instances::unit_box(2, h)?;
            let nu = [0.0, 1.0, 0.0];
            let v = ScalarField::from_fn(&d, |p| half_space_model(p, &nu));
            let vr = rescale(&v, &[0.0; MAX_DIM], 0.5, 1.0, 1.0 / 16.0)?;
            let exact = ScalarField::from_fn(vr.domain(), |y| half_space_model(y, &nu));
            e.insert("rescale".into(), vr.max_abs_diff(&exact)?);
        }
    }
    Ok(e)
}

/// Errors per metric over a sequence of halving spacings and the observed
/// convergence orders.
pub fn refinement_study(instance: RefinementInstance, spacings: &[f64]) -> Result<RefinementTable> {
    if spacings.len() < 2 {
        return Err(LabError::Precondition("refinement needs at least two spacings".into()));
    }
    if spacings.windows(2).any(|w| (w[1] * 2.0 - w[0]).abs() > 1e-12 * w[0]) {
        return Err(LabError::Precondition("each spacing must halve the previous one".into()));
    }
    let rows: Vec<RefinementRow> = spacings
        .par_iter()
        .map(|&h| refinement_errors(instance, h).map(|errors| RefinementRow { h, errors }))
        .collect::<Result<_>>()?;
    let mut ratios = BTreeMap::new();
    let mut orders = BTreeMap::new();
    for key in rows[0].errors.keys() {
        let mut rs = Vec::new();
        let mut ps = Vec::new();
        for w in rows.windows(2) {
            let (a, b) = (w[0].errors[key], w[1].errors[key]);
            let at_floor = a <= ERROR_FLOOR || b <= ERROR_FLOOR;
            rs.push(if b > 0.0 { a / b } else { f64::INFINITY });
            ps.push((!at_floor).then(|| (a / b).log2()));
        }
        ratios.insert(key.clone(), rs);
        orders.insert(key.clone(), ps);
    }
    Ok(RefinementTable {
        instance,
        rows,
        ratios,
        orders,
    })
}
