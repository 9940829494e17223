//! `pje`: build densities, run verification suites, classify rectangles and
//! sweep the solver from a single TOML configuration.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 I/O error.

mod run;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use pje_core::config::RunConfig;
use pje_core::density::{build_constraint_set, write_discrepancy_table, DensityField};
use pje_core::dichotomy::{classify, embedding_registry, find_good_rectangle, write_classification, VerdictStatus};
use pje_core::fields::Grid;
use pje_core::report::{self, write_cell_samples, CsvSchema};
use pje_core::solver::sweep_depth;
use pje_core::suites::suite_registry;
use pje_core::Error;

use run::{io_error, sha256_hex, RunDir};

#[derive(Debug)]
pub enum CliError {
    Verification(String),
    Config(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) => CliError::Io(e.to_string()),
            Error::InvalidParams(_)
            | Error::Parse(_)
            | Error::UnknownName { .. }
            | Error::OrderTooLarge { .. }
            | Error::DimensionMismatch { .. }
            | Error::GridMisaligned(_)
            | Error::OutsideUnitCube(_) => CliError::Config(e.to_string()),
            _ => CliError::Verification(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "pje", version, about = "Checkerboard densities, determinant estimates and the Lipschitz solver sweep")]
struct Cli {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for this run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root under which runs without --out are placed, one directory per command.
    #[arg(long, global = true, env = "PJE_OUT_ROOT", hide_env_values = true)]
    out_root: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Density JSON, cell-mean samples and the exact pair-discrepancy table.
    BuildDensity,
    /// Run one verification suite, or `all`.
    Verify {
        #[arg(long)]
        suite: String,
    },
    /// Classify every rectangle up to the configured depth.
    Classify,
    /// Solver sweep over depths and budgets.
    Sweep,
    /// Check the CSV files of a run directory against their schemas and index them.
    ReportData,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BuildDensity => "build-density",
            Command::Verify { .. } => "verify",
            Command::Classify => "classify",
            Command::Sweep => "sweep",
            Command::ReportData => "report-data",
        }
    }
}

struct Loaded {
    config: RunConfig,
    source: Option<(PathBuf, Vec<u8>)>,
}

fn load_config(cli: &Cli) -> Result<Loaded, CliError> {
    let (mut config, source) = match &cli.config {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
            let text = String::from_utf8(bytes.clone())
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let config: RunConfig =
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            (config, Some((path.clone(), bytes)))
        }
        None => (RunConfig::default(), None),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.solver.seed = config.seed;
    config.validate()?;
    Ok(Loaded { config, source })
}

fn output_dir(cli: &Cli, config: &RunConfig) -> PathBuf {
    if let Some(out) = &cli.out {
        return out.clone();
    }
    if let Some(out) = &config.output {
        return out.clone();
    }
    let root = cli.out_root.clone().unwrap_or_else(|| PathBuf::from("runs"));
    root.join(cli.command.name())
}

fn open_run(cli: &Cli, loaded: &Loaded) -> Result<RunDir, CliError> {
    let toml_text = toml::to_string(&loaded.config).map_err(|e| CliError::Config(e.to_string()))?;
    RunDir::create(
        output_dir(cli, &loaded.config),
        cli.command.name(),
        loaded.config.seed,
        &toml_text,
        loaded.source.as_ref().map(|(p, b)| (p.as_path(), b.as_slice())),
    )
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> pje_core::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn cmd_build_density(cli: &Cli, loaded: &Loaded) -> Result<(), CliError> {
    let c = &loaded.config;
    let rho = DensityField::new(c.hierarchy.clone(), c.density.base.clone())?.refine_to_depth(c.density.depth)?;
    let mut run = open_run(cli, loaded)?;
    let json = serde_json::to_vec_pretty(&rho.to_json()?).map_err(|e| CliError::Io(e.to_string()))?;
    run.write("density.json", &json)?;
    let grid = Grid::over_box(&c.hierarchy.root_rect().bounds(), c.density.sample_cells)?;
    let samples = rho.cell_averages(&grid)?;
    run.write(report::density_samples(grid.dim()).file, &csv_bytes(|b| write_cell_samples(&samples, b))?)?;
    let mut rows = 0;
    let table = csv_bytes(|b| {
        rows = write_discrepancy_table(&rho, c.density.depth, b)?;
        Ok(())
    })?;
    run.write(report::discrepancy().file, &table)?;
    let constraints = build_constraint_set(&rho, c.density.depth, &c.density.eps()?)?;
    let violated = constraints.violations(&rho)?.len();
    run.extra = json!({
        "pairs": rows,
        "constraints": constraints.len(),
        "vacuous_constraints": constraints.vacuous_count(),
        "violated_constraints": violated,
    });
    let root = run.root().to_path_buf();
    run.finish()?;
    println!("wrote density, {} samples and {rows} pair rows to {}", samples.values().len(), root.display());
    Ok(())
}

fn cmd_verify(cli: &Cli, loaded: &Loaded, suite: &str) -> Result<(), CliError> {
    let registry = suite_registry();
    let names: Vec<&'static str> = if suite == "all" {
        registry.names()
    } else {
        registry.get(suite)?;
        registry.names().into_iter().filter(|n| *n == suite).collect()
    };
    let ctx = loaded.config.suite_context();
    let mut run = open_run(cli, loaded)?;
    let mut failed = Vec::new();
    let mut summary = Vec::new();
    for name in names {
        let report = registry.get(name)?.run(&ctx)?;
        run.write(&format!("verify_{name}.csv"), &csv_bytes(|b| report.write_csv(b))?)?;
        println!(
            "{name}: {} checks, {} failed, min slack {:e}",
            report.rows.len(),
            report.failures(),
            report.min_slack()
        );
        summary.push(json!({
            "suite": name,
            "checks": report.rows.len(),
            "failures": report.failures(),
            "min_slack": report.min_slack(),
        }));
        if !report.passed() {
            failed.push(name);
        }
    }
    run.extra = json!({ "suites": summary });
    run.finish()?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("suites with slack below tolerance: {}", failed.join(", "))))
    }
}

fn cmd_classify(cli: &Cli, loaded: &Loaded) -> Result<(), CliError> {
    let c = &loaded.config;
    let dp = c.dichotomy.params()?;
    let factory = embedding_registry();
    let h = factory
        .get(&c.dichotomy.embedding)?
        .build(&c.dichotomy.spec(c.hierarchy.dim(), c.seed))?;
    let verdicts = classify(&c.hierarchy, h.as_ref(), &dp)?;
    let mut run = open_run(cli, loaded)?;
    run.write(report::classification().file, &csv_bytes(|b| write_classification(&verdicts, b))?)?;
    let count = |s: VerdictStatus| verdicts.iter().filter(|v| v.status == s).count();
    let good = match find_good_rectangle(&c.hierarchy, h.as_ref(), &dp) {
        Ok(v) => json!(v.rect.id()),
        Err(Error::NoGoodRectangle { .. }) => serde_json::Value::Null,
        Err(e) => return Err(e.into()),
    };
    let counts = json!({
        "rectangles": verdicts.len(),
        "property1": count(VerdictStatus::Property1),
        "property2": count(VerdictStatus::Property2),
        "both": count(VerdictStatus::Both),
        "neither": count(VerdictStatus::Neither),
        "good_rectangle": good,
    });
    println!("{}", serde_json::to_string(&counts).unwrap_or_default());
    run.extra = counts;
    run.finish()?;
    Ok(())
}

fn cmd_sweep(cli: &Cli, loaded: &Loaded) -> Result<(), CliError> {
    let c = &loaded.config;
    let result = sweep_depth(&c.sweep.hierarchy, &c.sweep.budgets, &c.sweep.depths, &c.solver)?;
    let mut run = open_run(cli, loaded)?;
    run.write(report::sweep().file, &csv_bytes(|b| result.write_csv(b))?)?;
    let timings: Vec<_> = result
        .rows
        .iter()
        .map(|r| json!({ "k0": r.k0, "S": r.s, "seconds": r.seconds }))
        .collect();
    run.extra = json!({ "rows": result.rows.len(), "cell_seconds": timings, "total_cell_seconds": result.total_seconds() });
    run.finish()?;
    let failed = result.rows.iter().filter(|r| r.status != "ok").count();
    println!("{} sweep rows, {failed} failed", result.rows.len());
    for r in result.rows.iter().filter(|r| r.status != "ok") {
        eprintln!("k0 = {}, S = {}: {}", r.k0, r.s, r.status);
    }
    Ok(())
}

fn schema_for(file: &str, d: usize) -> Option<CsvSchema> {
    let fixed = [report::density_samples(d), report::discrepancy(), report::classification(), report::sweep()];
    if let Some(s) = fixed.into_iter().find(|s| s.file == file) {
        return Some(s);
    }
    (file.starts_with("verify_") && file.ends_with(".csv")).then(report::verify)
}

fn cmd_report_data(cli: &Cli, loaded: &Loaded) -> Result<(), CliError> {
    let dir = output_dir(cli, &loaded.config);
    let entries = fs::read_dir(&dir).map_err(|e| io_error(&dir, e))?;
    let mut files: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    files.sort();
    let d = loaded.config.hierarchy.dim();
    let mut index = Vec::new();
    let mut mismatched = Vec::new();
    for name in files {
        let Some(schema) = schema_for(&name, d) else {
            eprintln!("warning: {name} has no known schema, skipped");
            continue;
        };
        let path = dir.join(&name);
        let bytes = fs::read(&path).map_err(|e| io_error(&path, e))?;
        match schema.check(bytes.as_slice()) {
            Ok(rows) => index.push(json!({
                "file": name,
                "schema": schema.name,
                "columns": schema.columns,
                "rows": rows,
                "sha256": sha256_hex(&bytes),
            })),
            Err(e) => mismatched.push(format!("{name}: {e}")),
        }
    }
    if index.iter().all(|e| e["schema"] != "sweep") {
        eprintln!("warning: no sweep.csv in {}", dir.display());
    }
    let text = serde_json::to_string_pretty(&json!({ "files": index })).map_err(|e| CliError::Io(e.to_string()))?;
    let path = dir.join("report_index.json");
    fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    println!("indexed {} files in {}", index.len(), path.display());
    if mismatched.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(mismatched.join("; ")))
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads {n}: {e}")))?;
    }
    let loaded = load_config(cli)?;
    match &cli.command {
        Command::BuildDensity => cmd_build_density(cli, &loaded),
        Command::Verify { suite } => cmd_verify(cli, &loaded, suite),
        Command::Classify => cmd_classify(cli, &loaded),
        Command::Sweep => cmd_sweep(cli, &loaded),
        Command::ReportData => cmd_report_data(cli, &loaded),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pje: {e}");
            ExitCode::from(e.code())
        }
    }
}
