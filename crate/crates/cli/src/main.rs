//! `pmerge`: merge p-values, solve M-family coefficients, build discovery
//! matrices and run the simulation experiments.
//!
//! Exit codes: 0 on success, 2 for unreadable or malformed input, 3 for an
//! unknown method or a parameter outside its domain.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pmerge_core::analysis::{m_family_domination, m_scaled_domination};
use pmerge_core::classic::solve_m_coefficients;
use pmerge_core::discovery::{discovery_matrix, DEFAULT_ALPHAS, DEFAULT_CORNER};
use pmerge_core::induced::{gamma_k_exact, improvement_ratio_mstar};
use pmerge_core::method::{MergeMethod, MethodSpec};
use pmerge_core::numeric::format_float as num;
use pmerge_core::simlab::{
    borderline_epsilon_with, empirical_cdfs, median_discovery_matrix, threshold_grid, DiscreteScenario, ZTestModel, DEFAULT_CDF_POINTS,
    DEFAULT_MU_ALT,
};
use pmerge_core::{MergeError, PVector};

const DEFAULT_SEED: u64 = 42;
/// Methods behind `--methods all`.
const ALL_METHODS: [&str; 6] = ["bonferroni", "simes", "hommel", "grid-harmonic", "m:r=-1", "m-star:r=-1"];

#[derive(Parser)]
#[command(name = "pmerge", version, about = "Admissible p-merging under arbitrary dependence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge the p-values in a one-column CSV file.
    Merge {
        input: PathBuf,
        #[arg(long, short)]
        method: String,
    },
    /// Solve the M-family coefficients for exponent r and K p-values.
    Coeffs {
        #[arg(long, allow_hyphen_values = true)]
        r: f64,
        #[arg(long = "k", short = 'k')]
        k: usize,
    },
    /// Discovery matrix of a p-value file, or the element-wise median over
    /// simulated draws.
    Dm(DmArgs),
    /// Simulation experiments.
    #[command(subcommand)]
    Simulate(Simulate),
    /// Worst-case ratio of grid harmonic to Hommel, and harmonic* to
    /// harmonic.
    Ratio {
        #[arg(long = "k", short = 'k')]
        k: usize,
    },
    /// Domination between F_{r,K} and F_{s,K}, or between a·M_r and b·M_s
    /// when both --a and --b are given.
    Dominate {
        #[arg(long, allow_hyphen_values = true)]
        r: f64,
        #[arg(long, allow_hyphen_values = true)]
        s: f64,
        #[arg(long = "k", short = 'k')]
        k: usize,
        #[arg(long, requires = "b")]
        a: Option<f64>,
        #[arg(long, requires = "a")]
        b: Option<f64>,
    },
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long = "k", short = 'k')]
    k: usize,
    #[arg(long, default_value_t = 0)]
    k1: usize,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = DEFAULT_MU_ALT, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long)]
    flip_last: bool,
    /// Round p-values up to the grid 1/D.
    #[arg(long)]
    discretize: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

impl ModelArgs {
    fn model(&self) -> Result<ZTestModel, MergeError> {
        let m = ZTestModel {
            k: self.k,
            k1: self.k1,
            mu_alt: self.mu,
            rho: self.rho,
            flip_last: self.flip_last,
            seed: self.seed,
            discretize: self.discretize,
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Args)]
struct DmArgs {
    /// One-column CSV of p-values; omit to simulate with the model flags.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    family: String,
    #[arg(long, default_value_t = DEFAULT_CORNER)]
    corner: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ALPHAS)]
    alphas: Vec<f64>,
    /// Write the bucketed matrix here as `l,j,bucket`.
    #[arg(long)]
    categories: Option<PathBuf>,
    /// Element-wise median over this many simulated draws.
    #[arg(long, default_value_t = 10)]
    median_of: usize,
    #[arg(long = "k", short = 'k')]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    k1: usize,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Subcommand)]
enum Simulate {
    /// Empirical CDFs of merged p-values: `threshold,method,fraction`.
    Cdf {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long, value_delimiter = ',', default_value = "all")]
        methods: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_CDF_POINTS)]
        grid_points: usize,
        /// Largest threshold of the grid.
        #[arg(long, default_value_t = 1.0)]
        upper: f64,
    },
    /// Borderline ε for the scenario (ε, 2ε, …, K1·ε, 1, …, 1):
    /// `method,K1,epsilon`.
    Epsilon {
        #[arg(long = "k", short = 'k')]
        k: usize,
        #[arg(long)]
        k1: usize,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long, value_delimiter = ',', default_value = "all")]
        methods: Vec<String>,
        #[arg(long)]
        discretize: Option<u64>,
    },
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<MergeError> for Failure {
    fn from(e: MergeError) -> Self {
        let code = match e {
            MergeError::Parse { .. } | MergeError::Value { .. } | MergeError::Length { .. } => 2,
            _ => 3,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn input_error(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

fn read_pvalues(path: &PathBuf) -> Result<PVector, Failure> {
    let text = fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    Ok(PVector::from_csv_str(&text)?)
}

fn parse_methods(names: &[String]) -> Result<Vec<MethodSpec>, Failure> {
    let mut out = Vec::new();
    for name in names {
        if name == "all" {
            out.extend(ALL_METHODS.iter().map(|s| s.parse::<MethodSpec>().expect("built-in method")));
        } else {
            out.push(name.parse()?);
        }
    }
    Ok(out)
}

fn warn_if_invalid(spec: &MethodSpec) {
    if !spec.is_universally_valid() {
        eprintln!("warning: {spec} is not a valid p-merging function under arbitrary dependence");
    }
}

fn run(cli: Cli) -> Result<String, Failure> {
    let mut out = String::new();
    match cli.command {
        Command::Merge { input, method } => {
            let spec: MethodSpec = method.parse()?;
            let p = read_pvalues(&input)?;
            warn_if_invalid(&spec);
            let res = spec.bind(p.len())?.merge(&p)?;
            writeln!(out, "method,p,accuracy_bound").unwrap();
            writeln!(out, "{},{},{}", res.method_tag, num(res.p), num(res.accuracy_bound)).unwrap();
        }
        Command::Coeffs { r, k } => {
            let c = solve_m_coefficients(r, k)?;
            writeln!(out, "r,K,c_r,d_r,b_rK,residual").unwrap();
            writeln!(out, "{},{},{},{},{},{}", num(c.r), c.k, num(c.c_r), num(c.d_r), num(c.b_rk), num(c.residual)).unwrap();
        }
        Command::Dm(args) => {
            let spec: MethodSpec = args.family.parse()?;
            let dm = match (&args.input, args.k) {
                (Some(path), _) => discovery_matrix(&read_pvalues(path)?, &spec, args.corner)?,
                (None, Some(k)) => {
                    let model = ZTestModel::new(k, args.k1, args.rho, args.seed)?;
                    writeln!(out, "# seed={}", args.seed).unwrap();
                    median_discovery_matrix(&model, &spec, args.corner, args.median_of.max(1))?
                }
                (None, None) => return Err(input_error("dm needs --input or a model size --k")),
            };
            if !dm.equals_prime() {
                eprintln!("note: running maximum over j changed the matrix");
            }
            out.push_str(&dm.to_csv());
            if let Some(path) = &args.categories {
                fs::write(path, dm.categories_csv(&args.alphas)).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
            }
        }
        Command::Simulate(Simulate::Cdf { model, reps, methods, grid_points, upper }) => {
            let m = model.model()?;
            let specs = parse_methods(&methods)?;
            let bound = specs.iter().map(|s| s.bind(m.k)).collect::<Result<Vec<MergeMethod>, _>>()?;
            let grid = threshold_grid(grid_points, upper);
            let cdfs = empirical_cdfs(&m, &bound, reps, &grid)?;
            writeln!(out, "# seed={}", m.seed).unwrap();
            writeln!(out, "threshold,method,fraction").unwrap();
            for (spec, cdf) in specs.iter().zip(&cdfs) {
                for (t, frac) in cdf {
                    writeln!(out, "{},{spec},{}", num(*t), num(*frac)).unwrap();
                }
            }
        }
        Command::Simulate(Simulate::Epsilon { k, k1, alpha, methods, discretize }) => {
            let scenario = DiscreteScenario { k, k1, alpha_target: alpha };
            let specs = parse_methods(&methods)?;
            writeln!(out, "method,K1,epsilon").unwrap();
            for spec in &specs {
                let eps = match borderline_epsilon_with(&scenario, &spec.bind(k)?, discretize) {
                    Ok(e) => num(e),
                    Err(MergeError::NoRejection(msg)) => {
                        eprintln!("warning: {msg}");
                        "NA".to_string()
                    }
                    Err(e) => return Err(e.into()),
                };
                writeln!(out, "{spec},{k1},{eps}").unwrap();
            }
        }
        Command::Ratio { k } => {
            let (n, den) = gamma_k_exact(k)?;
            let d = improvement_ratio_mstar(k)?;
            writeln!(out, "K,gamma_K,gamma_K_fraction,harmonic_star_ratio").unwrap();
            writeln!(out, "{k},{},{n}/{den},{}", num(n as f64 / den as f64), num(d)).unwrap();
        }
        Command::Dominate { r, s, k, a, b } => {
            let verdict = match (a, b) {
                (Some(a), Some(b)) => m_scaled_domination(r, a, s, b, k)?,
                _ => m_family_domination(r, s, k)?,
            };
            writeln!(out, "{}", verdict.to_json()).unwrap();
        }
    }
    Ok(out)
}

fn configure_threads() {
    if let Some(n) = std::env::var("PMERGE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
