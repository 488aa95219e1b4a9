use std::path::PathBuf;
use std::process::ExitCode;

use awfisher::categorize::TightParams;
use awfisher::interpolation::{save_library, LibraryInterpolator};
use awfisher::sampling::{build_library, GridPreset, TargetGrid};
use awfisher::simulate::{
    gen_accuracy_dataset, gen_categorization_dataset, AccuracySimConfig, CategorizationSimConfig,
};
use awfisher_cli::format::{pval, stat};
use awfisher_cli::pipeline::{
    analyze, calibration_check, meta_analyze, oracle_pvalue, pvalue_output_text, resolve_library,
    write_analysis, write_simulation, AnalyzeOptions,
};
use awfisher_cli::tsv::{parse_pvalue_table, read_study, read_text, write_text};
use awfisher_cli::{CliError, CliResult};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "awfisher",
    version,
    about = "Adaptively weighted Fisher meta-analysis"
)]
struct Cli {
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a statistic library by importance sampling.
    BuildLib(BuildLibArgs),
    /// AW statistics, weights, meta p-values and q-values for a p-value table.
    Pvalue(PvalueArgs),
    /// Full pipeline from per-study expression tables.
    Analyze(AnalyzeArgs),
    /// Exact tail probabilities for K = 2 or 3, or a library calibration check.
    Oracle(OracleArgs),
    /// Write a simulated dataset.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Paper,
    Desk,
}

#[derive(Args)]
struct BuildLibArgs {
    #[arg(long, default_value_t = 2)]
    kmin: usize,
    #[arg(long, default_value_t = 10)]
    kmax: usize,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    targets_preset: Preset,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PvalueArgs {
    /// Library file; defaults to $AWFISHER_LIB, then the bundled desk library.
    #[arg(long)]
    lib: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, num_args = 1.., required = true)]
    studies: Vec<PathBuf>,
    #[arg(long)]
    lib: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    fdr: f64,
    /// Bootstrap replicates (0 skips variability and co-membership).
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    /// Target module count (0 skips clustering).
    #[arg(long, default_value_t = 0)]
    modules: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Minimum within-module consensus and co-membership.
    #[arg(long, default_value_t = 0.7)]
    alpha: f64,
    #[arg(long, default_value_t = 0.7)]
    subsample: f64,
    #[arg(long, default_value_t = 10)]
    resamples: usize,
    /// Clustering starts at k = modules + k0_offset.
    #[arg(long, default_value_t = 2)]
    k0_offset: usize,
    #[arg(long, default_value_t = 2)]
    min_size: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, required_unless_present = "calibration_check")]
    k: Option<usize>,
    #[arg(long, required_unless_present = "calibration_check")]
    s_obs: Option<f64>,
    #[arg(long, conflicts_with_all = ["k", "s_obs"])]
    calibration_check: bool,
    #[arg(long)]
    lib: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Accuracy,
    Categorization,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    scenario: Scenario,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of studies.
    #[arg(long)]
    studies: Option<usize>,
    #[arg(long)]
    genes: Option<usize>,
    /// Samples per class.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    homo_fraction: Option<f64>,
    #[arg(long)]
    ssp_fraction: Option<f64>,
    #[arg(long)]
    de_fraction: Option<f64>,
    #[arg(long)]
    module_count: Option<usize>,
    #[arg(long)]
    module_size: Option<usize>,
    #[arg(long)]
    wishart_df: Option<usize>,
}

fn entry(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn lib_label(p: &Option<PathBuf>) -> String {
    match p {
        Some(p) => p.display().to_string(),
        None => {
            std::env::var(awfisher_cli::pipeline::LIB_ENV).unwrap_or_else(|_| "bundled-desk".into())
        }
    }
}

fn build_lib(a: BuildLibArgs) -> CliResult<()> {
    let preset = match a.targets_preset {
        Preset::Paper => GridPreset::Paper,
        Preset::Desk => GridPreset::Desk,
    };
    let grid = TargetGrid::preset(preset, a.kmin, a.kmax)?;
    log::info!(
        "building {} targets for K = {}..={}",
        grid.len(),
        a.kmin,
        a.kmax
    );
    let lib = build_library(&grid, a.samples, a.seed)?;
    save_library(&lib, &a.out)?;
    Ok(())
}

fn pvalue(a: PvalueArgs) -> CliResult<()> {
    let table = parse_pvalue_table(&read_text(&a.input)?)?;
    let rows = if table.genes.is_empty() {
        Vec::new()
    } else {
        let lib = resolve_library(a.lib.as_deref())?;
        let interp = LibraryInterpolator::new(&lib)?;
        meta_analyze(&table.genes, &table.p, &interp)?
    };
    let text = pvalue_output_text(&rows);
    match a.out {
        Some(p) => write_text(&p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_analyze(a: AnalyzeArgs) -> CliResult<()> {
    let studies = a
        .studies
        .iter()
        .map(|p| read_study(p))
        .collect::<CliResult<Vec<_>>>()?;
    let lib = resolve_library(a.lib.as_deref())?;
    let interp = LibraryInterpolator::new(&lib)?;
    let opts = AnalyzeOptions {
        fdr: a.fdr,
        bootstrap: a.bootstrap,
        modules: a.modules,
        seed: a.seed,
        tight: TightParams {
            alpha: a.alpha,
            subsample: a.subsample,
            resamples: a.resamples,
            k0_offset: a.k0_offset,
            min_size: a.min_size,
            ..TightParams::default()
        },
    };
    let out = analyze(&studies, &interp, &opts)?;
    let studies_list: Vec<String> = a.studies.iter().map(|p| p.display().to_string()).collect();
    let manifest = vec![
        entry("command", "analyze"),
        entry("version", env!("CARGO_PKG_VERSION")),
        entry("studies", studies_list.join(",")),
        entry("lib", lib_label(&a.lib)),
        entry("fdr", a.fdr),
        entry("bootstrap", a.bootstrap),
        entry("modules", a.modules),
        entry("seed", a.seed),
        entry("alpha", a.alpha),
        entry("subsample", a.subsample),
        entry("resamples", a.resamples),
        entry("k0_offset", a.k0_offset),
        entry("min_size", a.min_size),
        entry("de_genes", out.de.len()),
        entry(
            "module_count",
            out.assignment.as_ref().map_or(0, |m| m.module_count()),
        ),
    ];
    write_analysis(&a.out_dir, &out, &manifest)
}

fn oracle(a: OracleArgs) -> CliResult<()> {
    if a.calibration_check {
        let lib = resolve_library(a.lib.as_deref())?;
        let r = calibration_check(&lib)?;
        println!("points\t{}", r.points);
        println!("max_abs_log10_dev\t{}", stat(r.max_dev));
        println!("worst_statistic\t{}", stat(r.worst_s));
        return Ok(());
    }
    let (Some(k), Some(s)) = (a.k, a.s_obs) else {
        return Err(CliError::Input("--k and --s-obs are required".into()));
    };
    println!("{}", pval(oracle_pvalue(k, s)?));
    Ok(())
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let mut manifest = vec![
        entry("command", "simulate"),
        entry("version", env!("CARGO_PKG_VERSION")),
        entry("seed", a.seed),
    ];
    let data = match a.scenario {
        Scenario::Accuracy => {
            let d = AccuracySimConfig::default();
            let cfg = AccuracySimConfig {
                k: a.studies.unwrap_or(d.k),
                genes: a.genes.unwrap_or(d.genes),
                n: a.n.unwrap_or(d.n),
                sigma: a.sigma.unwrap_or(d.sigma),
                module_count: a.module_count.unwrap_or(d.module_count),
                module_size: a.module_size.unwrap_or(d.module_size),
                wishart_df: a.wishart_df.unwrap_or(d.wishart_df),
                de_fraction: a.de_fraction.unwrap_or(d.de_fraction),
                seed: a.seed,
            };
            manifest.extend([
                entry("scenario", "accuracy"),
                entry("studies", cfg.k),
                entry("genes", cfg.genes),
                entry("n", cfg.n),
                entry("sigma", cfg.sigma),
                entry("module_count", cfg.module_count),
                entry("module_size", cfg.module_size),
                entry("wishart_df", cfg.wishart_df),
                entry("de_fraction", cfg.de_fraction),
            ]);
            gen_accuracy_dataset(&cfg)?
        }
        Scenario::Categorization => {
            let d = CategorizationSimConfig::default();
            let cfg = CategorizationSimConfig {
                studies: a.studies.unwrap_or(d.studies),
                n: a.n.unwrap_or(d.n),
                genes: a.genes.unwrap_or(d.genes),
                homo_fraction: a.homo_fraction.unwrap_or(d.homo_fraction),
                ssp_fraction: a.ssp_fraction.unwrap_or(d.ssp_fraction),
                sigma: a.sigma.unwrap_or(d.sigma),
                seed: a.seed,
            };
            manifest.extend([
                entry("scenario", "categorization"),
                entry("studies", cfg.studies),
                entry("genes", cfg.genes),
                entry("n", cfg.n),
                entry("sigma", cfg.sigma),
                entry("homo_fraction", cfg.homo_fraction),
                entry("ssp_fraction", cfg.ssp_fraction),
            ]);
            gen_categorization_dataset(&cfg)?
        }
    };
    write_simulation(&a.out_dir, &data, &manifest)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::BuildLib(a) => build_lib(a),
        Command::Pvalue(a) => pvalue(a),
        Command::Analyze(a) => run_analyze(a),
        Command::Oracle(a) => oracle(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
