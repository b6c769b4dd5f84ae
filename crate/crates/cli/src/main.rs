use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use darcy_stokes::assembly::assemble;
use darcy_stokes::mms::{compute_errors, ExactSolution, SolutionId};
use darcy_stokes::solver::solve;
use darcy_stokes::spaces::ElementPair;
use darcy_stokes::study::{
    check_infsup, check_rates, discretize, emit, infsup_csv, run_infsup, run_study, to_markdown, write_file, Expected,
    Level, StudyConfig, VelocityNorm,
};

#[derive(Parser)]
#[command(
    name = "darcy-stokes",
    version,
    about = "Coupled Darcy-Stokes mixed finite element studies"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one level and print its errors.
    Solve {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Index of the config level to solve (0-based).
        #[arg(long, default_value_t = 0)]
        level: usize,
        /// Write the reduced system as "i j value" triplets.
        #[arg(long, value_name = "FILE")]
        dump_system: Option<PathBuf>,
    },
    /// Run a convergence study over all levels.
    Study {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Exit nonzero when a rate misses the expected value.
        #[arg(long)]
        check: bool,
    },
    /// Estimate the discrete inf-sup constant on every level.
    Infsup {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Exit nonzero when β_h drops below the expected ratio of the
        /// coarsest value.
        #[arg(long)]
        check: bool,
        /// Ratio used by --check when the config has none.
        #[arg(long, default_value_t = 0.8)]
        min_ratio: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Full,
    NoBubbles,
}

/// Config file plus flags overriding its keys.
#[derive(Args)]
struct ConfigArgs {
    /// JSON study configuration (see presets/).
    config: Option<PathBuf>,
    #[arg(long)]
    dimension: Option<usize>,
    /// Element pair, e.g. mini-rt0, br-bdm1, taylor-hood-rt1.
    #[arg(long, value_parser = parse_pair)]
    pair: Option<ElementPair>,
    /// paper_3d or desk_2d.
    #[arg(long, value_parser = parse_solution)]
    solution: Option<SolutionId>,
    /// Levels as n_s:n_d pairs or single n (cells per axis), comma separated.
    #[arg(long, value_parser = parse_levels)]
    levels: Option<LevelList>,
    #[arg(long)]
    viscosity: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Isotropic permeability K = k I.
    #[arg(long)]
    permeability: Option<f64>,
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    markdown: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    plot: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
    /// Estimate β_h on every study level.
    #[arg(long)]
    infsup: bool,
    /// Keep Bernardi-Raugel face bubbles on the interface.
    #[arg(long)]
    br_sigma_bubbles: bool,
    /// Allow 3D Stokes levels finer than h = 1/10.
    #[arg(long)]
    allow_fine_3d: bool,
    #[arg(long, value_enum)]
    velocity_norm: Option<NormArg>,
    /// Rate tolerance for --check.
    #[arg(long)]
    tolerance: Option<f64>,
}

fn parse_pair(s: &str) -> Result<ElementPair, String> {
    ElementPair::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = ElementPair::ALL.iter().map(|p| p.name()).collect();
        format!("unknown pair {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_solution(s: &str) -> Result<SolutionId, String> {
    match s {
        "paper_3d" => Ok(SolutionId::Paper3d),
        "desk_2d" => Ok(SolutionId::Desk2d),
        _ => Err(format!("unknown solution {s:?}; expected paper_3d or desk_2d")),
    }
}

#[derive(Clone)]
struct LevelList(Vec<Level>);

fn parse_levels(s: &str) -> Result<LevelList, String> {
    s.split(',')
        .map(|item| {
            let item = item.trim();
            let (a, b) = item.split_once(':').unwrap_or((item, item));
            let n = |t: &str| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|e| format!("bad level {item:?}: {e}"))
            };
            Ok(Level { n_s: n(a)?, n_d: n(b)? })
        })
        .collect::<Result<_, _>>()
        .map(LevelList)
}

impl ConfigArgs {
    fn resolve(&self) -> Result<StudyConfig> {
        let mut cfg = match &self.config {
            Some(path) => StudyConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => {
                let dimension = self
                    .dimension
                    .or(self.solution.map(|s| s.dim()))
                    .ok_or_else(|| anyhow!("give a config file or --dimension/--solution"))?;
                StudyConfig {
                    dimension,
                    pair: self
                        .pair
                        .ok_or_else(|| anyhow!("--pair is required without a config file"))?,
                    solution: self.solution.unwrap_or(if dimension == 3 {
                        SolutionId::Paper3d
                    } else {
                        SolutionId::Desk2d
                    }),
                    levels: self
                        .levels
                        .clone()
                        .map(|l| l.0)
                        .ok_or_else(|| anyhow!("--levels is required without a config file"))?,
                    coefficients: Default::default(),
                    outputs: Default::default(),
                    infsup: false,
                    br_sigma_bubbles: false,
                    allow_fine_3d: false,
                    velocity_norm: VelocityNorm::Full,
                    expected: None,
                }
            }
        };
        if let Some(d) = self.dimension {
            cfg.dimension = d;
        }
        if let Some(p) = self.pair {
            if p != cfg.pair {
                // expected rates belong to the configured pair
                cfg.expected = None;
            }
            cfg.pair = p;
        }
        if let Some(s) = self.solution {
            cfg.solution = s;
        }
        if let Some(LevelList(l)) = &self.levels {
            if cfg.expected.as_ref().is_some_and(|e| e.rates.len() + 1 != l.len()) {
                cfg.expected.as_mut().unwrap().rates.clear();
            }
            cfg.levels = l.clone();
        }
        let c = &mut cfg.coefficients;
        c.viscosity = self.viscosity.or(c.viscosity);
        c.kappa = self.kappa.or(c.kappa);
        c.permeability = self.permeability.or(c.permeability);
        let o = &mut cfg.outputs;
        for (flag, slot) in [
            (&self.csv, &mut o.csv),
            (&self.markdown, &mut o.markdown),
            (&self.plot, &mut o.plot),
            (&self.json, &mut o.json),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        cfg.infsup |= self.infsup;
        cfg.br_sigma_bubbles |= self.br_sigma_bubbles;
        cfg.allow_fine_3d |= self.allow_fine_3d;
        if let Some(n) = self.velocity_norm {
            cfg.velocity_norm = match n {
                NormArg::Full => VelocityNorm::Full,
                NormArg::NoBubbles => VelocityNorm::NoBubbles,
            };
        }
        if let Some(t) = self.tolerance {
            cfg.expected
                .get_or_insert(Expected {
                    rates: Vec::new(),
                    tolerance: t,
                    beta_ratio_min: None,
                })
                .tolerance = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run_solve(cfg: &StudyConfig, level: usize, dump: Option<&PathBuf>) -> Result<()> {
    let lv = *cfg
        .levels
        .get(level)
        .ok_or_else(|| anyhow!("level {level} out of range (config has {})", cfg.levels.len()))?;
    let coef = cfg.coefficients.coefficients();
    let exact = ExactSolution::new(cfg.solution, &coef)?;
    let disc = discretize(cfg, lv)?;
    let system = assemble(&disc, &coef, &exact.loads())?;
    for w in &system.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = dump {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        system.write_triplets(BufWriter::new(f))?;
    }
    let sol = solve(&system)?;
    let e = compute_errors(&disc, &sol, &exact, system.n_unknowns());
    println!("pair        {}", cfg.pair.name());
    println!("solution    {}", cfg.solution.name());
    println!("h_S, h_D    1/{}, 1/{}", lv.n_s, lv.n_d);
    println!("N           {}", e.n);
    println!("e(u_S)      {:.6e}", e.e_us);
    println!("e(u_D)      {:.6e}", e.e_ud);
    println!("e(p_S)      {:.6e}", e.e_ps);
    println!("e(p_D)      {:.6e}", e.e_pd);
    println!("delta_h     {:.10}", sol.delta);
    println!(
        "residual    {:.3e} after {} refinement steps",
        sol.report.relative_residual, sol.report.refinement_steps
    );
    if let Some(p) = &cfg.outputs.json {
        write_file(p, &(serde_json::to_string_pretty(&e)? + "\n"))
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve {
            cfg,
            level,
            dump_system,
        } => {
            run_solve(&cfg.resolve()?, level, dump_system.as_ref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Study { cfg, check } => {
            let cfg = cfg.resolve()?;
            let record = run_study(&cfg)?;
            print!("{}", to_markdown(&record));
            emit(&record, &cfg.outputs)?;
            for (i, l) in record.levels.iter().enumerate() {
                for w in &l.warnings {
                    eprintln!("warning (level {}): {w}", i + 1);
                }
            }
            if check {
                let expected = cfg
                    .expected
                    .as_ref()
                    .filter(|e| !e.rates.is_empty())
                    .ok_or_else(|| anyhow!("--check needs expected rates in the config"))?;
                let breaches = check_rates(&record, expected);
                for b in &breaches {
                    eprintln!("breach: {b}");
                }
                if !breaches.is_empty() {
                    return Ok(ExitCode::FAILURE);
                }
                println!("all rates within ±{}", expected.tolerance);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Infsup { cfg, check, min_ratio } => {
            let cfg = cfg.resolve()?;
            let reports = run_infsup(&cfg)?;
            let csv = infsup_csv(&reports);
            print!("{csv}");
            if let Some(p) = &cfg.outputs.csv {
                write_file(p, &csv).with_context(|| format!("writing {}", p.display()))?;
            }
            if check {
                let ratio = cfg
                    .expected
                    .as_ref()
                    .and_then(|e| e.beta_ratio_min)
                    .unwrap_or(min_ratio);
                let breaches = check_infsup(&reports, ratio);
                for b in &breaches {
                    eprintln!("breach: {b}");
                }
                if !breaches.is_empty() {
                    return Ok(ExitCode::FAILURE);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.verbose {
        env_logger::Builder::new().filter_level(log::LevelFilter::Info).init();
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<darcy_stokes::Error>()
                .is_some_and(|e| matches!(e, darcy_stokes::Error::Config(_)))
            {
                return ExitCode::from(2);
            }
            ExitCode::FAILURE
        }
    }
}
