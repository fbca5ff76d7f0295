//! TOML configuration files for the `fblab` commands.
//!
//! A problem file has four sections:
//!
//! ```toml
//! [problem]
//! kind = "obstacle"         # obstacle | one-phase | two-phase | thin-obstacle
//! instance = "radial"       # obstacle: one-d | radial | radial-constant-data
//!
//! [grid]
//! h = "1/128"               # number or "p/q"
//!
//! [solver]                  # optional
//! tol = 1e-8
//!
//! [analysis]                # optional
//! points = "auto"           # or [[0.5, 0.0], ...]
//!
//! [output]                  # optional
//! dir = "out/radial"
//! ```
//!
//! A verify file holds `[thresholds]`, `[blowup]`, `[[instances]]` and an
//! optional `[output]`.

use std::path::{Path, PathBuf};

use fblab::blowup::{AnalysisSettings, BlowupParams};
use fblab::verify::{Instance, SuiteConfig, Thresholds};
use serde::{Deserialize, Deserializer, Serialize};

use crate::CliError;

/// Environment variable that replaces the working directory as the root for
/// relative output paths.
pub const OUTPUT_ROOT_VAR: &str = "FBLAB_OUTPUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabConfig {
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    Obstacle {
        instance: ObstacleInstance,
        /// Boundary value of `v` for the one-d instance.
        #[serde(default = "default_obstacle_a")]
        a: f64,
    },
    OnePhase {
        g: f64,
        lambda: f64,
    },
    TwoPhase {
        a: f64,
        b: f64,
        lambda_plus: f64,
        lambda_minus: f64,
    },
    ThinObstacle {
        instance: ThinInstance,
    },
}

fn default_obstacle_a() -> f64 {
    0.125
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObstacleInstance {
    OneD,
    Radial,
    RadialConstantData,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThinInstance {
    ThreeHalves,
}

impl ProblemConfig {
    pub fn dim(&self) -> usize {
        match self {
            ProblemConfig::Obstacle {
                instance: ObstacleInstance::OneD,
                ..
            }
            | ProblemConfig::OnePhase { .. }
            | ProblemConfig::TwoPhase { .. } => 1,
            _ => 2,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ProblemConfig::Obstacle { .. } => "obstacle",
            ProblemConfig::OnePhase { .. } => "one-phase",
            ProblemConfig::TwoPhase { .. } => "two-phase",
            ProblemConfig::ThinObstacle { .. } => "thin-obstacle",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Checked against the problem's dimension when present.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(deserialize_with = "spacing")]
    pub h: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub points: Points,
    pub r0: f64,
    pub levels: usize,
    /// Radius of the ball the rescalings are compared on.
    pub rho: f64,
    pub settings: AnalysisSettings,
    pub blowup: BlowupParams,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            points: Points::Auto(Auto::Auto),
            r0: 0.2,
            levels: 3,
            rho: 1.0,
            settings: AnalysisSettings::default(),
            blowup: BlowupParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Points {
    Auto(Auto),
    List(Vec<Vec<f64>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Auto {
    Auto,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Relative paths resolve against `$FBLAB_OUTPUT`, else the working
    /// directory. Defaults to `out/<config file stem>`.
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyFile {
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub blowup: BlowupParams,
    #[serde(default)]
    pub instances: Vec<Instance>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl VerifyFile {
    pub fn suite(&self) -> SuiteConfig {
        SuiteConfig {
            thresholds: self.thresholds.clone(),
            blowup: self.blowup.clone(),
            instances: self.instances.clone(),
        }
    }
}

/// Accepts a number or a `"p/q"` string.
fn spacing<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(x) => Ok(x),
        Raw::Text(s) => parse_spacing(&s).map_err(serde::de::Error::custom),
    }
}

pub fn parse_spacing(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let value = match s.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.trim().parse().map_err(|_| format!("bad spacing {s:?}"))?;
            let q: f64 = q.trim().parse().map_err(|_| format!("bad spacing {s:?}"))?;
            p / q
        }
        None => s.parse().map_err(|_| format!("bad spacing {s:?}"))?,
    };
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(format!("spacing {s:?} must be positive"))
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn range_error(what: &str, value: impl std::fmt::Display, range: &str) -> CliError {
    CliError::Config(format!("{what} = {value} is outside {range}"))
}

impl LabConfig {
    pub fn load(path: &Path) -> Result<LabConfig, CliError> {
        let config: LabConfig = parse_toml(path, &read_text(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let n = self.problem.dim();
        if let Some(m) = self.grid.n {
            if m != n {
                return Err(CliError::Config(format!(
                    "grid.n = {m} but a {} problem of this instance is {n}-dimensional",
                    self.problem.tag()
                )));
            }
        }
        let h = self.grid.h;
        if !(h > 0.0 && h <= 0.25) {
            return Err(range_error("grid.h", h, "(0, 1/4]"));
        }
        match &self.problem {
            ProblemConfig::Obstacle { a, .. } if !(*a >= 0.0 && a.is_finite()) => {
                return Err(range_error("problem.a", a, "[0, inf)"))
            }
            ProblemConfig::OnePhase { g, lambda } => {
                if !(*g > 0.0 && g.is_finite()) {
                    return Err(range_error("problem.g", g, "(0, inf)"));
                }
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return Err(range_error("problem.lambda", lambda, "(0, inf)"));
                }
            }
            ProblemConfig::TwoPhase {
                a,
                b,
                lambda_plus,
                lambda_minus,
            } => {
                for (name, x) in [("a", a), ("b", b)] {
                    if !(*x > 0.0 && x.is_finite()) {
                        return Err(range_error(&format!("problem.{name}"), x, "(0, inf)"));
                    }
                }
                if !(*lambda_minus >= 0.0 && lambda_plus > lambda_minus && lambda_plus.is_finite()) {
                    return Err(CliError::Config(format!(
                        "problem needs lambda_plus > lambda_minus >= 0, got {lambda_plus} and {lambda_minus}"
                    )));
                }
            }
            _ => {}
        }
        if let Some(tol) = self.solver.tol {
            if !(tol > 0.0 && tol < 1e-2) {
                return Err(range_error("solver.tol", tol, "(0, 1e-2)"));
            }
        }
        if self.solver.max_iters == Some(0) {
            return Err(range_error("solver.max_iters", 0, "[1, inf)"));
        }
        let a = &self.analysis;
        if !(a.r0 > 0.0 && a.r0 < 1.0) {
            return Err(range_error("analysis.r0", a.r0, "(0, 1)"));
        }
        if a.levels == 0 || a.levels > 20 {
            return Err(range_error("analysis.levels", a.levels, "[1, 20]"));
        }
        if !(a.rho > 0.0 && a.rho <= 4.0) {
            return Err(range_error("analysis.rho", a.rho, "(0, 4]"));
        }
        if let Points::List(points) = &a.points {
            for p in points {
                if p.len() != n {
                    return Err(CliError::Config(format!(
                        "analysis point {p:?} has {} coordinates, expected {n}",
                        p.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

impl VerifyFile {
    pub fn load(path: &Path) -> Result<VerifyFile, CliError> {
        parse_toml(path, &read_text(path)?)
    }
}

/// Output directory for a config file: `output.dir` if given, else
/// `out/<stem>`, resolved against the output root.
pub fn output_dir(output: &OutputConfig, config_path: Option<&Path>, fallback: &str) -> PathBuf {
    let dir = output.dir.clone().unwrap_or_else(|| {
        let stem = config_path
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| fallback.to_string());
        PathBuf::from("out").join(stem)
    });
    if dir.is_absolute() {
        return dir;
    }
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<LabConfig, CliError> {
        let c: LabConfig = parse_toml(Path::new("test.toml"), text)?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn minimal_obstacle_config() {
        let c = parse("[problem]\nkind = \"obstacle\"\ninstance = \"radial\"\n[grid]\nh = \"1/128\"\n").unwrap();
        assert_eq!(c.grid.h, 1.0 / 128.0);
        assert_eq!(c.analysis.points, Points::Auto(Auto::Auto));
        assert_eq!(c.problem.dim(), 2);
    }

    #[test]
    fn unknown_keys_are_named_with_a_line() {
        let err = parse("[problem]\nkind = \"obstacle\"\ninstance = \"radial\"\n[grid]\nh = 0.01\nspacing = 2\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("spacing"), "{err}");
        assert!(err.contains("line 6"), "{err}");
    }

    #[test]
    fn ranges_are_enforced() {
        let base = "[problem]\nkind = \"one-phase\"\ng = 0.5\nlambda = 1.0\n[grid]\n";
        assert!(parse(&format!("{base}h = 0.0\n")).is_err());
        assert!(parse(&format!("{base}h = \"1/64\"\nn = 2\n")).is_err());
        assert!(parse(&format!("{base}h = \"1/64\"\n[analysis]\npoints = [[0.1, 0.2]]\n")).is_err());
        assert!(parse(&format!("{base}h = \"1/64\"\n[analysis]\npoints = [[0.1]]\n")).is_ok());
    }

    #[test]
    fn spacings() {
        assert_eq!(parse_spacing("1/256").unwrap(), 1.0 / 256.0);
        assert_eq!(parse_spacing("0.5").unwrap(), 0.5);
        assert!(parse_spacing("1/0").is_err());
        assert!(parse_spacing("x").is_err());
    }

    #[test]
    fn verify_file_accepts_instances_and_rejects_typos() {
        let text = "[blowup]\ntheta_reg = 0.0\n[[instances]]\nkind = \"model-fields\"\nh = 0.03125\n";
        let v: VerifyFile = parse_toml(Path::new("v.toml"), text).unwrap();
        assert_eq!(v.suite().instances.len(), 1);
        assert_eq!(v.blowup.theta_reg, 0.0);
        assert!(parse_toml::<VerifyFile>(Path::new("v.toml"), "[blowup]\ntheta = 1\n").is_err());
    }

    #[test]
    fn shipped_configs_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for name in ["radial", "obstacle_1d", "one_phase", "two_phase", "thin"] {
            LabConfig::load(&dir.join(format!("{name}.toml"))).unwrap();
        }
        let full = VerifyFile::load(&dir.join("verify.toml")).unwrap();
        assert_eq!(full.suite(), SuiteConfig::default());
        VerifyFile::load(&dir.join("verify_quick.toml")).unwrap();
    }
}
