//! Convergence studies: configuration, the per-level pipeline, rates and
//! deterministic CSV / markdown / plot-data output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, load_degree, Coefficients, Discretization, Loads};
use crate::coupling::projection_residual;
use crate::error::{Error, Result};
use crate::mesh::{build_pair, BoxDomain};
use crate::mms::{compute_errors, ErrorReport, ExactSolution, SolutionId};
use crate::solver::{estimate_infsup, solve, InfSupReport, SolveReport};
use crate::spaces::ElementPair;

/// Finest 3D Stokes level allowed without `allow_fine_3d`.
pub const MAX_3D_CELLS: usize = 10;

/// One mesh level given by cells per axis of the full box (h = 1/n).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Level {
    pub n_s: usize,
    pub n_d: usize,
}

impl Level {
    pub fn h_s(&self) -> f64 {
        1.0 / self.n_s as f64
    }

    pub fn h_d(&self) -> f64 {
        1.0 / self.n_d as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientOverrides {
    pub viscosity: Option<f64>,
    pub kappa: Option<f64>,
    /// Isotropic permeability K = k I.
    pub permeability: Option<f64>,
}

impl CoefficientOverrides {
    pub fn coefficients(&self) -> Coefficients {
        Coefficients::isotropic(
            self.viscosity.unwrap_or(1.0),
            self.kappa.unwrap_or(1.0),
            self.permeability.unwrap_or(1.0),
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub csv: Option<PathBuf>,
    pub markdown: Option<PathBuf>,
    pub plot: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

/// Which H¹ error of the Stokes velocity feeds e_uS.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityNorm {
    #[default]
    Full,
    NoBubbles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    /// Rates (u_S, u_D, p_S, p_D) for every level after the first.
    #[serde(default)]
    pub rates: Vec<[f64; 4]>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Lower bound on β_h / β_h(coarsest) for the inf-sup scan.
    pub beta_ratio_min: Option<f64>,
}

fn default_tolerance() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub dimension: usize,
    pub pair: ElementPair,
    pub solution: SolutionId,
    pub levels: Vec<Level>,
    #[serde(default)]
    pub coefficients: CoefficientOverrides,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub infsup: bool,
    #[serde(default)]
    pub br_sigma_bubbles: bool,
    #[serde(default)]
    pub allow_fine_3d: bool,
    #[serde(default)]
    pub velocity_norm: VelocityNorm,
    pub expected: Option<Expected>,
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<StudyConfig> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<StudyConfig> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension != 2 && self.dimension != 3 {
            return Err(Error::Config(format!(
                "dimension must be 2 or 3, got {}",
                self.dimension
            )));
        }
        if self.solution.dim() != self.dimension {
            return Err(Error::Config(format!(
                "solution {} lives in {}D, config asks for {}D",
                self.solution.name(),
                self.solution.dim(),
                self.dimension
            )));
        }
        if self.levels.is_empty() {
            return Err(Error::Config("no mesh levels".into()));
        }
        for l in &self.levels {
            if l.n_s == 0 || l.n_d == 0 || l.n_s % 2 != 0 || l.n_d % 2 != 0 {
                return Err(Error::Config(format!(
                    "level ({}, {}): cell counts must be even so the interface z = 1/2 is a mesh plane",
                    l.n_s, l.n_d
                )));
            }
            if self.dimension == 3 && l.n_s > MAX_3D_CELLS && !self.allow_fine_3d {
                return Err(Error::Config(format!(
                    "3D level h_S = 1/{} is finer than 1/{MAX_3D_CELLS}; set allow_fine_3d to run it",
                    l.n_s
                )));
            }
        }
        if self.br_sigma_bubbles && !matches!(self.pair, ElementPair::BrBdm1 | ElementPair::BrRt0) {
            return Err(Error::Config(
                "br_sigma_bubbles only applies to Bernardi–Raugel pairs".into(),
            ));
        }
        self.coefficients.coefficients().validate(self.dimension, 0, 0)?;
        if let Some(e) = &self.expected {
            if !e.rates.is_empty() && e.rates.len() + 1 != self.levels.len() {
                return Err(Error::Config(format!(
                    "{} expected rate rows for {} levels",
                    e.rates.len(),
                    self.levels.len()
                )));
            }
            if !(e.tolerance > 0.0) {
                return Err(Error::Config("tolerance must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Everything computed on one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: Level,
    pub errors: ErrorReport,
    /// ‖p_D − R p_D‖_Σ of the exact Darcy pressure.
    pub consistency: f64,
    pub beta: Option<f64>,
    pub solve: SolveReportSummary,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReportSummary {
    pub relative_residual: f64,
    pub refinement_steps: usize,
    pub nnz: usize,
}

impl From<&SolveReport> for SolveReportSummary {
    fn from(r: &SolveReport) -> Self {
        SolveReportSummary {
            relative_residual: r.relative_residual,
            refinement_steps: r.refinement_steps,
            nnz: r.nnz,
        }
    }
}

/// Rates (u_S, u_D, p_S, p_D).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub u_s: f64,
    pub u_d: f64,
    pub p_s: f64,
    pub p_d: f64,
}

impl Rates {
    pub fn as_array(&self) -> [f64; 4] {
        [self.u_s, self.u_d, self.p_s, self.p_d]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub pair: ElementPair,
    pub solution: SolutionId,
    pub velocity_norm: VelocityNorm,
    pub levels: Vec<LevelRecord>,
    /// `rates[i]` compares level i with level i + 1.
    pub rates: Vec<Rates>,
}

/// Experimental order log(e/e')/log(h/h').
pub fn rate(e: f64, e_next: f64, h: f64, h_next: f64) -> Result<f64> {
    if !(e > 0.0 && e_next > 0.0 && h > 0.0 && h_next > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rate needs positive errors and mesh sizes, got e = {e}, e' = {e_next}, h = {h}, h' = {h_next}"
        )));
    }
    if h == h_next {
        return Err(Error::InvalidArgument("rate needs two different mesh sizes".into()));
    }
    Ok((e / e_next).ln() / (h / h_next).ln())
}

fn velocity_error(e: &ErrorReport, norm: VelocityNorm) -> f64 {
    match norm {
        VelocityNorm::Full => e.e_us,
        VelocityNorm::NoBubbles => e.e_us_no_bubbles,
    }
}

/// Errors feeding the four columns (u_S, u_D, p_S, p_D).
pub fn columns(e: &ErrorReport, norm: VelocityNorm) -> [f64; 4] {
    [velocity_error(e, norm), e.e_ud, e.e_ps, e.e_pd]
}

/// Rates between consecutive levels; Stokes errors against h_S, Darcy
/// errors against h_D.
pub fn study_rates(levels: &[LevelRecord], norm: VelocityNorm) -> Result<Vec<Rates>> {
    levels
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0].errors, &w[1].errors);
            let (ca, cb) = (columns(a, norm), columns(b, norm));
            Ok(Rates {
                u_s: rate(ca[0], cb[0], a.h_s, b.h_s)?,
                u_d: rate(ca[1], cb[1], a.h_d, b.h_d)?,
                p_s: rate(ca[2], cb[2], a.h_s, b.h_s)?,
                p_d: rate(ca[3], cb[3], a.h_d, b.h_d)?,
            })
        })
        .collect()
}

/// Discretization of one level.
pub fn discretize(cfg: &StudyConfig, level: Level) -> Result<Discretization> {
    let pair =
        build_pair(cfg.dimension, BoxDomain::unit(), level.n_s, level.n_d, 0.5).map_err(|e| e.at_stage("mesh"))?;
    Discretization::new(pair, cfg.pair, cfg.br_sigma_bubbles).map_err(|e| e.at_stage("spaces"))
}

/// Runs mesh, spaces, coupling, assembly, solve and error evaluation on
/// one level.
pub fn run_level(cfg: &StudyConfig, exact: &ExactSolution, loads: &Loads, level: Level) -> Result<LevelRecord> {
    let coef = cfg.coefficients.coefficients();
    let disc = discretize(cfg, level)?;
    let system = assemble(&disc, &coef, loads).map_err(|e| e.at_stage("assembly"))?;
    let sol = solve(&system).map_err(|e| e.at_stage("solve"))?;
    let errors = compute_errors(&disc, &sol, exact, system.n_unknowns());
    let consistency = projection_residual(
        &disc.pair.darcy,
        &disc.coupling,
        &|x| exact.p_d(x),
        load_degree(cfg.dimension),
    );
    let beta = if cfg.infsup {
        Some(estimate_infsup(&disc, &system).map_err(|e| e.at_stage("infsup"))?.beta)
    } else {
        None
    };
    log::info!(
        "level ({}, {}): N = {}, residual {:.2e}",
        level.n_s,
        level.n_d,
        errors.n,
        sol.report.relative_residual
    );
    Ok(LevelRecord {
        level,
        errors,
        consistency,
        beta,
        solve: (&sol.report).into(),
        warnings: system.warnings.clone(),
    })
}

pub fn run_study(cfg: &StudyConfig) -> Result<StudyRecord> {
    cfg.validate()?;
    let exact = ExactSolution::new(cfg.solution, &cfg.coefficients.coefficients())?;
    let loads = exact.loads();
    let mut levels = Vec::with_capacity(cfg.levels.len());
    for &l in &cfg.levels {
        levels.push(run_level(cfg, &exact, &loads, l)?);
    }
    let rates = study_rates(&levels, cfg.velocity_norm)?;
    Ok(StudyRecord {
        pair: cfg.pair,
        solution: cfg.solution,
        velocity_norm: cfg.velocity_norm,
        levels,
        rates,
    })
}

/// β_h on every level of the config (zero loads, no solve).
pub fn run_infsup(cfg: &StudyConfig) -> Result<Vec<InfSupReport>> {
    cfg.validate()?;
    let coef = cfg.coefficients.coefficients();
    cfg.levels
        .iter()
        .map(|&l| {
            let disc = discretize(cfg, l)?;
            let system = assemble(&disc, &coef, &Loads::default()).map_err(|e| e.at_stage("assembly"))?;
            estimate_infsup(&disc, &system).map_err(|e| e.at_stage("infsup"))
        })
        .collect()
}

/// Rate breaches against the expected values, one message per entry.
pub fn check_rates(record: &StudyRecord, expected: &Expected) -> Vec<String> {
    const NAMES: [&str; 4] = ["r(u_S)", "r(u_D)", "r(p_S)", "r(p_D)"];
    let mut out = Vec::new();
    for (i, (got, want)) in record.rates.iter().zip(&expected.rates).enumerate() {
        for (k, (g, w)) in got.as_array().iter().zip(want).enumerate() {
            if !((g - w).abs() <= expected.tolerance) {
                out.push(format!(
                    "level {}: {} = {:.3}, expected {:.3} ± {}",
                    i + 2,
                    NAMES[k],
                    g,
                    w,
                    expected.tolerance
                ));
            }
        }
    }
    out
}

/// β ratio breaches of an inf-sup scan.
pub fn check_infsup(reports: &[InfSupReport], ratio_min: f64) -> Vec<String> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    reports
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, r)| !(r.beta >= ratio_min * first.beta))
        .map(|(i, r)| {
            format!(
                "level {}: β_h = {:.4} below {ratio_min} × {:.4}",
                i + 1,
                r.beta,
                first.beta
            )
        })
        .collect()
}

fn frac(n: usize) -> String {
    format!("1/{n}")
}

fn sci(v: f64) -> String {
    format!("{v:.6e}")
}

fn fixed3(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |r| format!("{r:.3}"))
}

pub fn to_csv(record: &StudyRecord) -> String {
    let mut s = String::from("level,h_S,h_D,N,e_uS,r_uS,e_uD,r_uD,e_pS,r_pS,e_pD,r_pD,beta_h,consistency\n");
    for (i, l) in record.levels.iter().enumerate() {
        let e = columns(&l.errors, record.velocity_norm);
        let r = if i == 0 {
            None
        } else {
            Some(record.rates[i - 1].as_array())
        };
        let rr = |k: usize| fixed3(r.map(|r| r[k]));
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{},{},{},{},{},{},{},{},{},{},{}",
            i + 1,
            l.errors.h_s,
            l.errors.h_d,
            l.errors.n,
            sci(e[0]),
            rr(0),
            sci(e[1]),
            rr(1),
            sci(e[2]),
            rr(2),
            sci(e[3]),
            rr(3),
            l.beta.map_or_else(|| "-".to_string(), |b| format!("{b:.6}")),
            sci(l.consistency)
        );
    }
    s
}

pub fn to_markdown(record: &StudyRecord) -> String {
    let mut s = format!(
        "{} / {}\n\n| h_S | h_D | N | e(u_S) | r(u_S) | e(u_D) | r(u_D) | e(p_S) | r(p_S) | e(p_D) | r(p_D) |\n|---|---|---|---|---|---|---|---|---|---|---|\n",
        record.pair.name(),
        record.solution.name()
    );
    for (i, l) in record.levels.iter().enumerate() {
        let e = columns(&l.errors, record.velocity_norm);
        let r = if i == 0 {
            None
        } else {
            Some(record.rates[i - 1].as_array())
        };
        let _ = write!(s, "| {} | {} | {} |", frac(l.level.n_s), frac(l.level.n_d), l.errors.n);
        for k in 0..4 {
            let _ = write!(s, " {} | {} |", sci(e[k]), fixed3(r.map(|r| r[k])));
        }
        s.push('\n');
    }
    s
}

/// Whitespace-separated N versus the four errors, for log-log plots.
pub fn to_plot_data(record: &StudyRecord) -> String {
    let mut s = String::from("# N e_uS e_uD e_pS e_pD\n");
    for l in &record.levels {
        let e = columns(&l.errors, record.velocity_norm);
        let _ = writeln!(
            s,
            "{} {} {} {} {}",
            l.errors.n,
            sci(e[0]),
            sci(e[1]),
            sci(e[2]),
            sci(e[3])
        );
    }
    s
}

pub fn infsup_csv(reports: &[InfSupReport]) -> String {
    let mut s = String::from("level,h_S,h_D,n_pressure,beta_h,kernel_dim,beta_nonzero\n");
    for (i, r) in reports.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{},{:.6},{},{:.6}",
            i + 1,
            r.h_s,
            r.h_d,
            r.n_pressure,
            r.beta,
            r.kernel_dim,
            r.beta_nonzero
        );
    }
    s
}

/// Writes `text`, creating parent directories.
pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes every output path set in the config.
pub fn emit(record: &StudyRecord, outputs: &Outputs) -> Result<()> {
    if let Some(p) = &outputs.csv {
        write_file(p, &to_csv(record))?;
    }
    if let Some(p) = &outputs.markdown {
        write_file(p, &to_markdown(record))?;
    }
    if let Some(p) = &outputs.plot {
        write_file(p, &to_plot_data(record))?;
    }
    if let Some(p) = &outputs.json {
        write_file(p, &(serde_json::to_string_pretty(record)? + "\n"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn desk(pair: ElementPair, ns: &[usize]) -> StudyConfig {
        StudyConfig {
            dimension: 2,
            pair,
            solution: SolutionId::Desk2d,
            levels: ns.iter().map(|&n| Level { n_s: n, n_d: n }).collect(),
            coefficients: CoefficientOverrides::default(),
            outputs: Outputs::default(),
            infsup: false,
            br_sigma_bubbles: false,
            allow_fine_3d: false,
            velocity_norm: VelocityNorm::Full,
            expected: None,
        }
    }

    #[test]
    fn rate_examples() {
        assert!((rate(0.1, 0.05, 1.0 / 8.0, 1.0 / 16.0).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(rate(0.3, 0.3, 0.5, 0.25).unwrap(), 0.0);
        assert!((rate(0.2, 0.05, 1.0 / 8.0, 1.0 / 16.0).unwrap() - 2.0).abs() < 1e-14);
        assert!(rate(0.0, 0.1, 0.5, 0.25).is_err());
        assert!(rate(0.1, 0.1, 0.5, 0.5).is_err());
        assert!(rate(0.1, 0.1, -0.5, 0.25).is_err());
    }

    proptest! {
        #[test]
        fn rate_recovers_power_laws(c in 1e-3f64..1e3, p in 0.1f64..4.0, h in 0.01f64..1.0, k in 1.1f64..5.0) {
            let h2 = h / k;
            let r = rate(c * h.powf(p), c * h2.powf(p), h, h2).unwrap();
            prop_assert!((r - p).abs() < 1e-9);
        }
    }

    #[test]
    fn config_round_trips_and_validates() {
        let text = r#"{
            "dimension": 3, "pair": "mini-bdm1", "solution": "paper_3d",
            "levels": [{"n_s": 6, "n_d": 12}, {"n_s": 10, "n_d": 20}],
            "expected": {"rates": [[1.091, 0.983, 1.990, 1.017]], "tolerance": 0.05}
        }"#;
        let cfg = StudyConfig::from_json(text).unwrap();
        cfg.validate().unwrap();
        let back = StudyConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);
        let mut fine = cfg.clone();
        fine.levels.push(Level { n_s: 14, n_d: 28 });
        fine.expected = None;
        assert!(matches!(fine.validate(), Err(Error::Config(_))));
        fine.allow_fine_3d = true;
        fine.validate().unwrap();
        let mut odd = cfg.clone();
        odd.levels[0].n_s = 5;
        assert!(odd.validate().is_err());
        let mut wrong_dim = cfg;
        wrong_dim.dimension = 2;
        assert!(wrong_dim.validate().is_err());
        assert!(StudyConfig::from_json(
            r#"{"dimension": 2, "pair": "mini-rt0", "solution": "desk_2d", "levels": [], "bogus": 1}"#
        )
        .is_err());
    }

    #[test]
    fn desk_study_converges_and_emits_deterministically() {
        let cfg = desk(ElementPair::MiniRt0, &[8, 16, 32]);
        let rec = run_study(&cfg).unwrap();
        for r in &rec.rates {
            for v in r.as_array() {
                assert!(v >= 0.9, "{:?}", rec.rates);
            }
        }
        assert!(rec.rates.iter().all(|r| r.p_s >= 1.7), "{:?}", rec.rates);
        let csv = to_csv(&rec);
        assert_eq!(csv.lines().count(), 1 + cfg.levels.len());
        let first: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(first.len(), 14);
        assert_eq!([first[5], first[7], first[9], first[11]], ["-"; 4]);
        let again = run_study(&cfg).unwrap();
        assert_eq!(csv, to_csv(&again));
        assert_eq!(to_markdown(&rec), to_markdown(&again));
        assert!(to_markdown(&rec).contains("| 1/8 | 1/8 |"));
        assert_eq!(to_plot_data(&rec).lines().count(), 4);
    }

    #[test]
    fn consistency_indicator_decays_linearly() {
        let rec = run_study(&desk(ElementPair::MiniRt0, &[8, 16])).unwrap();
        let (a, b) = (rec.levels[0].consistency, rec.levels[1].consistency);
        let r = rate(a, b, 1.0 / 8.0, 1.0 / 16.0).unwrap();
        assert!((r - 1.0).abs() < 0.2, "{r}");
    }

    #[test]
    fn check_reports_breaches() {
        let mut rec = run_study(&desk(ElementPair::MiniRt0, &[4, 8])).unwrap();
        rec.rates[0] = Rates {
            u_s: 1.0,
            u_d: 1.0,
            p_s: 1.5,
            p_d: 1.0,
        };
        let ok = Expected {
            rates: vec![[1.02, 0.98, 1.5, 1.0]],
            tolerance: 0.05,
            beta_ratio_min: None,
        };
        assert!(check_rates(&rec, &ok).is_empty());
        let bad = Expected {
            rates: vec![[1.2, 0.98, 1.5, 1.0]],
            tolerance: 0.05,
            beta_ratio_min: None,
        };
        let msgs = check_rates(&rec, &bad);
        assert_eq!(msgs.len(), 1);
        assert!(msgs[0].contains("r(u_S)"));
    }

    #[test]
    fn emit_writes_requested_files() {
        let dir = tempfile::tempdir().unwrap();
        let rec = run_study(&desk(ElementPair::MiniRt0, &[4, 8])).unwrap();
        let outputs = Outputs {
            csv: Some(dir.path().join("a/out.csv")),
            markdown: Some(dir.path().join("out.md")),
            plot: Some(dir.path().join("out.dat")),
            json: Some(dir.path().join("out.json")),
        };
        emit(&rec, &outputs).unwrap();
        assert_eq!(
            std::fs::read_to_string(dir.path().join("a/out.csv")).unwrap(),
            to_csv(&rec)
        );
        let back: StudyRecord =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("out.json")).unwrap()).unwrap();
        assert_eq!(back.levels.len(), 2);
    }

    #[test]
    fn stage_tagged_failures() {
        let cfg = desk(ElementPair::P1p1Rt0, &[4]);
        match run_study(&cfg) {
            Err(Error::Stage { stage: "solve", .. }) => {}
            other => panic!("unexpected {:?}", other.map(|r| r.levels.len())),
        }
    }
}
