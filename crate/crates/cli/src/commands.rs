use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fblab::bernoulli::{jump_stats, measure_fb_gradient, solve_one_phase, solve_two_phase, BernoulliSolution};
use fblab::blowup::{self, analyze_point, blowup_sequence, sample_free_boundary, BlowupParams, BlowupTag};
use fblab::free_boundary::{extract_free_boundary, extract_free_boundary_with, FreeBoundaryGeometry, VertexRule};
use fblab::grid::{point, GridDomain, Point, ScalarField};
use fblab::instances;
use fblab::io::{mask_field, read_field, read_json, write_field, write_json, write_table, FieldMeta};
use fblab::obstacle::{gradient_growth_bound, growth_upper_bound, solve_obstacle, ObstacleSpec};
use fblab::thin_obstacle::solve_thin_obstacle;
use fblab::verify::{refinement_study, run_suite, RefinementInstance, RefinementTable, SuiteConfig, SuiteReport};
use fblab::LabError;
use serde::{Deserialize, Serialize};

use crate::config::{output_dir, parse_spacing, LabConfig, ObstacleInstance, OutputConfig, Points, ProblemConfig, ThinInstance, VerifyFile};
use crate::CliError;

/// Contents of `report.json` in a solution bundle.
#[derive(Debug, Serialize, Deserialize)]
struct SolveReport {
    config: LabConfig,
    status: String,
    iterations: Option<usize>,
    residual: Option<f64>,
    energy: Option<f64>,
    contact_eps: Option<f64>,
    free_boundary_vertices: Option<usize>,
    metrics: BTreeMap<String, f64>,
    /// Diagnostics that could not be computed, with the reason.
    notes: Vec<String>,
}

impl SolveReport {
    fn new(config: &LabConfig) -> SolveReport {
        SolveReport {
            config: config.clone(),
            status: "converged".into(),
            iterations: None,
            residual: None,
            energy: None,
            contact_eps: None,
            free_boundary_vertices: None,
            metrics: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn metric(&mut self, key: &str, value: f64) {
        if value.is_finite() {
            self.metrics.insert(key.into(), value);
        }
    }

    fn note(&mut self, what: &str, e: LabError) {
        self.notes.push(format!("{what}: {e}"));
    }
}

fn bundle_dir(config: &LabConfig, path: &Path) -> PathBuf {
    output_dir(&config.output, Some(path), "run")
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Failed(format!("cannot create {}: {e}", dir.display())))
}

fn write_meta(dir: &Path, domain: &GridDomain, problem: &str) -> Result<(), CliError> {
    Ok(write_json(&dir.join("meta.json"), &FieldMeta::new(domain, problem))?)
}

fn write_free_boundary(dir: &Path, geom: &FreeBoundaryGeometry) -> Result<(), CliError> {
    Ok(geom.write_polyline(&dir.join("free_boundary.csv"))?)
}

/// Records a cap hit in the report before handing the error back.
fn not_converged(dir: &Path, mut report: SolveReport, e: LabError) -> CliError {
    if let LabError::NotConverged { iterations, residual } = &e {
        report.status = "not-converged".into();
        report.iterations = Some(*iterations);
        report.residual = Some(*residual);
        if let Err(w) = write_json(&dir.join("report.json"), &report) {
            eprintln!("fblab: could not write report: {w}");
        }
    }
    e.into()
}

pub fn solve(path: &Path) -> Result<u8, CliError> {
    let config = LabConfig::load(path)?;
    let dir = bundle_dir(&config, path);
    create_dir(&dir)?;
    let h = config.grid.h;
    let mut report = SolveReport::new(&config);
    match &config.problem {
        ProblemConfig::Obstacle { instance, a } => {
            let mut spec: ObstacleSpec = match instance {
                ObstacleInstance::OneD => instances::obstacle_1d(h, *a)?,
                ObstacleInstance::Radial => instances::radial_obstacle(h)?,
                ObstacleInstance::RadialConstantData => instances::radial_obstacle_constant_data(h)?,
            };
            if let Some(tol) = config.solver.tol {
                spec.tol = tol;
            }
            if let Some(m) = config.solver.max_iters {
                spec.max_iters = m;
            }
            let sol = solve_obstacle(&spec).map_err(|e| not_converged(&dir, SolveReport::new(&config), e))?;
            let dom = sol.domain();
            write_meta(&dir, dom, config.problem.tag())?;
            write_field(&dir.join("u.csv"), &sol.u)?;
            write_field(&dir.join("v.csv"), &sol.v)?;
            write_field(&dir.join("contact.csv"), &mask_field(dom, &sol.contact))?;
            let geom = sol.free_boundary()?;
            write_free_boundary(&dir, &geom)?;
            report.iterations = Some(sol.iterations);
            report.residual = Some(sol.lcp_residual);
            report.energy = Some(sol.energy);
            report.contact_eps = Some(sol.contact_eps);
            report.free_boundary_vertices = Some(geom.vertices.len());
            report.metric("contact_cells", sol.contact_cells().count() as f64);
            match growth_upper_bound(&sol) {
                Ok(g) => report.metric("growth_constant", g.constant),
                Err(e) => report.note("growth_constant", e),
            }
            match gradient_growth_bound(&sol) {
                Ok(g) => report.metric("gradient_growth_constant", g.constant),
                Err(e) => report.note("gradient_growth_constant", e),
            }
        }
        ProblemConfig::OnePhase { g, lambda } => {
            let mut spec = instances::one_phase_1d(h, *g, *lambda)?;
            if let Some(tol) = config.solver.tol {
                spec.tol = tol;
            }
            if let Some(m) = config.solver.max_iters {
                spec.max_sweeps = m;
            }
            let sol = solve_one_phase(&spec).map_err(|e| not_converged(&dir, SolveReport::new(&config), e))?;
            bernoulli_bundle(&dir, &config, &sol, &mut report)?;
            match measure_fb_gradient(&sol) {
                Ok(s) => {
                    report.metric("fb_gradient_mean", s.mean);
                    report.metric("fb_gradient_target", s.target);
                    report.metric("fb_gradient_max_rel_deviation", s.max_rel_deviation);
                }
                Err(e) => report.note("fb_gradient", e),
            }
        }
        ProblemConfig::TwoPhase {
            a,
            b,
            lambda_plus,
            lambda_minus,
        } => {
            let mut spec = instances::two_phase_1d(h, *a, *b, *lambda_plus, *lambda_minus)?;
            if let Some(tol) = config.solver.tol {
                spec.tol = tol;
            }
            if let Some(m) = config.solver.max_iters {
                spec.max_sweeps = m;
            }
            let sol = solve_two_phase(&spec).map_err(|e| not_converged(&dir, SolveReport::new(&config), e))?;
            bernoulli_bundle(&dir, &config, &sol, &mut report)?;
            match jump_stats(&sol.u, *lambda_plus, *lambda_minus, sol.contact_eps) {
                Ok(s) => {
                    report.metric("jump_mean", s.mean_jump);
                    report.metric("jump_target", s.target);
                    report.metric("jump_max_rel_deviation", s.max_rel_deviation);
                }
                Err(e) => report.note("jump", e),
            }
        }
        ProblemConfig::ThinObstacle { instance } => {
            let mut spec = match instance {
                ThinInstance::ThreeHalves => instances::thin_three_halves(h)?,
            };
            if let Some(tol) = config.solver.tol {
                spec.tol = tol;
            }
            if let Some(m) = config.solver.max_iters {
                spec.max_iters = m;
            }
            let sol = solve_thin_obstacle(&spec).map_err(|e| not_converged(&dir, SolveReport::new(&config), e))?;
            write_meta(&dir, sol.domain(), config.problem.tag())?;
            write_field(&dir.join("u.csv"), &sol.u)?;
            sol.write_face_profile(&dir.join("face_profile.csv"))?;
            report.iterations = Some(sol.iterations);
            report.residual = Some(sol.pde_residual.max(sol.residuals.max()));
            report.energy = Some(sol.energy);
            report.contact_eps = Some(sol.contact_eps);
            report.metric("pde_residual", sol.pde_residual);
            report.metric("complementarity", sol.residuals.complementarity);
            report.metric("wrong_sign", sol.residuals.wrong_sign);
            report.metric("neumann", sol.residuals.neumann);
            report.metric("contact_face_cells", sol.contact.iter().filter(|&&c| c).count() as f64);
        }
    }
    write_json(&dir.join("report.json"), &report)?;
    println!(
        "{} solved on h = {}: {} iterations{}, output in {}",
        config.problem.tag(),
        h,
        report.iterations.map_or("-".into(), |i| i.to_string()),
        report.residual.map_or(String::new(), |r| format!(", residual {r:.3e}")),
        dir.display()
    );
    for (k, x) in &report.metrics {
        if x.fract() == 0.0 && x.abs() < 1e15 {
            println!("  {k} = {x}");
        } else {
            println!("  {k} = {x:.6e}");
        }
    }
    for note in &report.notes {
        println!("  skipped {note}");
    }
    Ok(0)
}

fn bernoulli_bundle(dir: &Path, config: &LabConfig, sol: &BernoulliSolution, report: &mut SolveReport) -> Result<(), CliError> {
    let dom = sol.domain();
    write_meta(dir, dom, config.problem.tag())?;
    write_field(&dir.join("u.csv"), &sol.u)?;
    write_field(&dir.join("positive.csv"), &mask_field(dom, &sol.positive))?;
    let geom = extract_free_boundary(&sol.u, sol.contact_eps)?;
    write_free_boundary(dir, &geom)?;
    report.iterations = Some(sol.trace.iter().map(|t| t.sweeps).sum());
    report.energy = Some(sol.energy);
    report.contact_eps = Some(sol.contact_eps);
    report.free_boundary_vertices = Some(geom.vertices.len());
    report.metric("continuation_levels", sol.trace.len() as f64);
    Ok(())
}

/// `v` and the contact threshold from a solved obstacle bundle.
fn load_obstacle_bundle(config: &LabConfig, path: &Path) -> Result<(PathBuf, ScalarField, f64), CliError> {
    if !matches!(config.problem, ProblemConfig::Obstacle { .. }) {
        return Err(CliError::Config(format!(
            "{}: blow-up analysis needs an obstacle problem, got {}",
            path.display(),
            config.problem.tag()
        )));
    }
    let dir = bundle_dir(config, path);
    let missing = |what: &str, e: LabError| {
        CliError::Failed(format!(
            "{} in {} is unreadable ({e}); run `fblab solve {}` first",
            what,
            dir.display(),
            path.display()
        ))
    };
    let meta: FieldMeta = read_json(&dir.join("meta.json")).map_err(|e| missing("meta.json", e))?;
    let domain = meta.domain()?;
    let v = read_field(&dir.join("v.csv"), &domain).map_err(|e| missing("v.csv", e))?;
    let report: SolveReport = read_json(&dir.join("report.json")).map_err(|e| missing("report.json", e))?;
    let eps = report
        .contact_eps
        .ok_or_else(|| CliError::Failed(format!("{} records no converged solve", dir.display())))?;
    Ok((dir, v, eps))
}

fn check_point(p: &[f64], n: usize) -> Result<Point, CliError> {
    if p.len() != n {
        return Err(CliError::Config(format!("point {p:?} has {} coordinates, expected {n}", p.len())));
    }
    Ok(point(p))
}

fn point_label(p: &[f64]) -> String {
    let parts: Vec<String> = p.iter().map(|x| format!("{x:.4}")).collect();
    format!("p_{}", parts.join("_"))
}

fn tag_name(tag: &BlowupTag) -> &'static str {
    match tag {
        BlowupTag::Regular { .. } => "regular",
        BlowupTag::Singular { .. } => "singular",
        BlowupTag::Undetermined => "undetermined",
    }
}

fn tag_code(tag: &BlowupTag) -> f64 {
    match tag {
        BlowupTag::Regular { .. } => 0.0,
        BlowupTag::Singular { .. } => 1.0,
        BlowupTag::Undetermined => 2.0,
    }
}

fn describe_tag(tag: &BlowupTag) -> String {
    match tag {
        BlowupTag::Regular { nu } => format!("regular, nu = {nu:.4?}"),
        BlowupTag::Singular { a } => format!("singular, A = {a:.4?}"),
        BlowupTag::Undetermined => "undetermined".into(),
    }
}

fn analysis_params(config: &LabConfig, eps: f64) -> BlowupParams {
    BlowupParams {
        eps,
        ..config.analysis.blowup.clone()
    }
}

pub fn blowup(path: &Path, at: &[f64], r0: Option<f64>, levels: Option<usize>) -> Result<u8, CliError> {
    let config = LabConfig::load(path)?;
    let r0 = r0.unwrap_or(config.analysis.r0);
    let levels = levels.unwrap_or(config.analysis.levels);
    if !(r0 > 0.0 && r0 < 1.0) {
        return Err(CliError::Config(format!("--r0 {r0} is outside (0, 1)")));
    }
    let (dir, v, eps) = load_obstacle_bundle(&config, path)?;
    let x0 = check_point(at, v.domain().dim())?;
    let params = analysis_params(&config, eps);
    let seq = blowup_sequence(&v, &x0, r0, levels, config.analysis.rho, &params)?;
    if seq.truncated {
        eprintln!(
            "fblab: warning: sequence truncated at {} of {} levels by the grid resolution",
            seq.radii.len().saturating_sub(1),
            levels
        );
    }
    let verdict = blowup::classify(seq.finest(), &params)?;
    let out = dir.join("blowup").join(point_label(at));
    create_dir(&out)?;
    for (k, field) in seq.fields.iter().enumerate() {
        write_field(&out.join(format!("level_{k}.csv")), field)?;
    }
    #[derive(Serialize)]
    struct Record<'a> {
        sequence: &'a blowup::BlowupSequence,
        classification: &'a blowup::BlowupClassification,
    }
    write_json(
        &out.join("sequence.json"),
        &Record {
            sequence: &seq,
            classification: &verdict,
        },
    )?;
    for (k, r) in seq.radii.iter().enumerate() {
        let d = if k == 0 { "-".to_string() } else { format!("{:.3e}", seq.distances[k - 1]) };
        println!("level {k}  r = {r:.5}  distance {d}  sup/rho^2 {:.4}", seq.sup_ratios[k]);
    }
    println!("limit at r = {:.5}: {}", seq.radii.last().copied().unwrap_or(r0), describe_tag(&verdict.tag));
    println!("output in {}", out.display());
    Ok(0)
}

pub fn classify(path: &Path, given: &[Vec<f64>]) -> Result<u8, CliError> {
    let config = LabConfig::load(path)?;
    let (dir, v, eps) = load_obstacle_bundle(&config, path)?;
    let n = v.domain().dim();
    let geom = extract_free_boundary_with(&v, eps, VertexRule::Quadratic)?;
    let points: Vec<Point> = if !given.is_empty() {
        given.iter().map(|p| check_point(p, n)).collect::<Result<_, _>>()?
    } else {
        match &config.analysis.points {
            Points::List(list) => list.iter().map(|p| check_point(p, n)).collect::<Result<_, _>>()?,
            Points::Auto(_) => sample_free_boundary(&geom),
        }
    };
    if points.is_empty() {
        return Err(CliError::Failed("no free-boundary points to analyze".into()));
    }
    let params = analysis_params(&config, eps);
    let out = dir.join("classify");
    create_dir(&out)?;
    let mut rows = Vec::new();
    for (k, x0) in points.iter().enumerate() {
        let r = analyze_point(&v, &geom, x0, &config.analysis.settings, &params);
        write_json(&out.join(format!("point_{k}.json")), &r)?;
        let tag = r.classification.as_ref().map(|c| &c.tag);
        let min_ratio = r.nondegeneracy.as_ref().map_or(f64::NAN, |d| d.ratios.iter().copied().fold(f64::INFINITY, f64::min));
        let omega = r.convexity.as_ref().and_then(|c| c.omega.last().copied()).unwrap_or(f64::NAN);
        let flat = r.flatness.as_ref().map_or(f64::NAN, |f| f.flatness);
        let mut row = x0[..n].to_vec();
        row.extend([
            tag.map_or(f64::NAN, tag_code),
            r.classification.as_ref().map_or(f64::NAN, |c| c.residual_regular),
            r.classification.as_ref().map_or(f64::NAN, |c| c.residual_singular),
            min_ratio,
            omega,
            flat,
        ]);
        rows.push(row);
        println!(
            "point {k} {:.4?}: {}  min growth ratio {min_ratio:.3}  omega {omega:.3e}  flatness {flat:.3e}{}",
            &x0[..n],
            tag.map_or("not classified", tag_name),
            if r.errors.is_empty() { String::new() } else { format!("  ({})", r.errors.join("; ")) }
        );
    }
    let mut header: Vec<String> = (1..=n).map(|a| format!("x{a}")).collect();
    header.extend(
        ["tag", "residual_regular", "residual_singular", "min_growth_ratio", "omega", "flatness"]
            .iter()
            .map(|s| s.to_string()),
    );
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(&out.join("summary.csv"), &header, &rows)?;
    println!("tag codes: 0 regular, 1 singular, 2 undetermined; output in {}", out.display());
    Ok(0)
}

pub fn verify(path: Option<&Path>) -> Result<u8, CliError> {
    let (suite, output) = match path {
        Some(p) => {
            let file = VerifyFile::load(p)?;
            (file.suite(), file.output)
        }
        None => (SuiteConfig::default(), OutputConfig::default()),
    };
    if suite.instances.is_empty() {
        return Err(CliError::Config("verify file lists no instances".into()));
    }
    let dir = output_dir(&output, path, "verify");
    let report = run_suite(&suite);
    report.write(&dir)?;
    print!("{}", report.to_text());
    println!("report in {}", dir.display());
    Ok(if report.all_passed() { 0 } else { 1 })
}

pub fn refine(instance: RefinementInstance, spacings: &[String]) -> Result<u8, CliError> {
    let hs: Vec<f64> = spacings
        .iter()
        .map(|s| parse_spacing(s).map_err(CliError::Config))
        .collect::<Result<_, _>>()?;
    let table = refinement_study(instance, &hs).map_err(|e| match e {
        LabError::Precondition(m) => CliError::Config(m),
        other => other.into(),
    })?;
    print!("{}", refinement_text(&table));
    let name = serde_json::to_value(instance)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_else(|| "refine".into());
    let dir = output_dir(&OutputConfig::default(), None, "refine");
    create_dir(&dir)?;
    let file = dir.join(format!("{name}.json"));
    write_json(&file, &table)?;
    println!("table in {}", file.display());
    Ok(0)
}

fn refinement_text(table: &RefinementTable) -> String {
    let keys: Vec<&String> = table.rows[0].errors.keys().collect();
    let mut out = format!("{:<12}", "h");
    for k in &keys {
        out.push_str(&format!("  {:>14}  {:>6}", k, "order"));
    }
    out.push('\n');
    for (i, row) in table.rows.iter().enumerate() {
        out.push_str(&format!("{:<12}", format!("1/{}", (1.0 / row.h).round())));
        for k in &keys {
            let order = if i == 0 {
                "-".to_string()
            } else {
                table.orders[*k][i - 1].map_or("floor".into(), |p| format!("{p:.2}"))
            };
            out.push_str(&format!("  {:>14.6e}  {:>6}", row.errors[*k], order));
        }
        out.push('\n');
    }
    out
}

pub fn report(path: &Path) -> Result<u8, CliError> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(|e| CliError::Config(format!("cannot read {}: {e}", file.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?;
    if let Ok(suite) = serde_json::from_value::<SuiteReport>(value.clone()) {
        print!("{}", suite.to_text());
        return Ok(if suite.all_passed() { 0 } else { 1 });
    }
    let pretty = serde_json::to_string_pretty(&value).map_err(|e| CliError::Failed(e.to_string()))?;
    println!("{pretty}");
    Ok(0)
}
