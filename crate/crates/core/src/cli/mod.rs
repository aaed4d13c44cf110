//! Command-line front end: `simulate`, `match-assign` and `analyze`.
//!
//! Exit codes: 0 success, 1 data or numerical error, 2 usage error.

mod analyze;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::design::{
    assign_within_pairs, closeness_diagnostics, match_pairs_greedy, match_pairs_sorted, reorder_pairs, AssignmentSeed,
};
use crate::error::Error;
use crate::experiment::ExperimentData;
use crate::simulation::{default_menu, run_monte_carlo, run_monte_carlo_threads, simulate_dataset, ModelSpec};

pub use analyze::{analyze, AnalyzeConfig, LassoBasis};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(format!("i/o error: {e}"))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "paired-ate",
    version,
    about = "Covariate-adjusted inference for matched-pairs experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo rejection rates and standard errors for Models 1-15.
    Simulate(SimulateArgs),
    /// Pair units on covariates and randomize treatment within pairs.
    MatchAssign(MatchAssignArgs),
    /// Estimate the average treatment effect of a matched-pairs experiment.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=15))]
    model: u8,
    /// Number of pairs n.
    #[arg(long, default_value_t = 100)]
    pairs: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    delta: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Also write replication 0's matched and assigned dataset as CSV.
    #[arg(long)]
    dump_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MatchAssignArgs {
    #[arg(long)]
    data: PathBuf,
    /// Column holding unit identifiers.
    #[arg(long, default_value = "unit_id")]
    id: String,
    /// Comma-separated matching covariates (default: every other column).
    #[arg(long, value_delimiter = ',')]
    x: Vec<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    outcome: String,
    #[arg(long)]
    treatment: String,
    #[arg(long)]
    pair_id: String,
    /// Comma-separated matching covariates.
    #[arg(long, value_delimiter = ',', required = true)]
    x: Vec<String>,
    /// Comma-separated adjustment covariates.
    #[arg(long, value_delimiter = ',')]
    w: Vec<String>,
    /// Comma-separated estimators, reported in this order.
    #[arg(long, value_delimiter = ',', default_value = "unadjusted,pfe")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    delta0: f64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Add the LASSO intercepts to the arm working models.
    #[arg(long)]
    include_intercept: bool,
    /// Regressors of the LASSO-based methods.
    #[arg(long, value_enum, default_value_t = LassoBasis::Raw)]
    lasso_basis: LassoBasis,
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a, stdout),
        Command::MatchAssign(a) => cmd_match_assign(a, stdout, stderr),
        Command::Analyze(a) => analyze::cmd_analyze(a, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            e.code()
        }
    }
}

fn with_output(
    out: Option<&Path>,
    stdout: &mut dyn Write,
    f: impl FnOnce(&mut dyn Write) -> CliResult<()>,
) -> CliResult<()> {
    match out {
        Some(path) => {
            let file =
                File::create(path).map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => f(stdout),
    }
}

/// `v` rounded to 12 significant digits, printed in shortest form.
pub fn fmt12(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    rounded.to_string()
}

fn cmd_simulate(a: SimulateArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let spec = ModelSpec::new(a.model, a.pairs, a.delta, a.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    if a.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    if a.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    if let Some(path) = &a.dump_data {
        let data = simulate_dataset(&spec, 0)?;
        with_output(Some(path), stdout, |w| write_dataset(&data, w))?;
    }
    let menu = default_menu(spec.model_id);
    let summary = match a.threads {
        Some(t) => run_monte_carlo_threads(&spec, &menu, a.reps, t)?,
        None => run_monte_carlo(&spec, &menu, a.reps)?,
    };
    with_output(a.out.as_deref(), stdout, |w| {
        match a.format {
            Format::Csv => summary.write_csv(w)?,
            Format::Json => {
                serde_json::to_writer_pretty(&mut *w, &summary).map_err(|e| CliError::Data(e.to_string()))?;
                writeln!(w)?;
            }
        }
        Ok(())
    })
}

/// Writes `unit_id,pair_id,y,d,x1..,w1..` with pairs in plan order.
fn write_dataset(data: &ExperimentData, out: &mut dyn Write) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| CliError::Data(format!("writing dataset: {e}"));
    let mut header = vec!["unit_id".to_string(), "pair_id".into(), "y".into(), "d".into()];
    header.extend((1..=data.kx()).map(|k| format!("x{k}")));
    header.extend((1..=data.kw()).map(|k| format!("w{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for (j, &(a, b)) in data.plan().pairs().iter().enumerate() {
        for i in [a, b] {
            let u = &data.units()[i];
            let mut row = vec![u.unit_id.clone(), (j + 1).to_string(), u.y.to_string(), u.d.to_string()];
            row.extend(u.x.iter().chain(&u.w).map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_match_assign(a: MatchAssignArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    let table = analyze::Table::read(&a.data)?;
    let id_col = table.column(&a.id)?;
    let x_names: Vec<String> = if a.x.is_empty() {
        table.headers.iter().filter(|h| **h != a.id).cloned().collect()
    } else {
        a.x.clone()
    };
    if x_names.is_empty() {
        return Err(CliError::Usage("no matching covariates".into()));
    }
    let x_cols = x_names.iter().map(|n| table.column(n)).collect::<CliResult<Vec<_>>>()?;
    let rows = table.rows.len();
    if rows % 2 != 0 {
        return Err(CliError::Data(format!(
            "{rows} units cannot be split into pairs (odd count)"
        )));
    }
    if rows == 0 {
        return Err(CliError::Data("no units in input".into()));
    }
    let mut x = nalgebra::DMatrix::zeros(rows, x_cols.len());
    for r in 0..rows {
        for (c, &col) in x_cols.iter().enumerate() {
            x[(r, c)] = table.number(r, col)?;
        }
    }
    let plan = if x.ncols() == 1 {
        match_pairs_sorted(x.column(0).as_slice())?
    } else {
        reorder_pairs(&match_pairs_greedy(&x)?, &x)?
    };
    let d = assign_within_pairs(&plan, AssignmentSeed(a.seed));
    let diag = closeness_diagnostics(&plan, &x)?;
    writeln!(
        stderr,
        "mean_within_pair_dist_r1={} mean_within_pair_dist_r2={} cross_pair_dist_r2={}",
        fmt12(diag.mean_within_pair_dist_r1),
        fmt12(diag.mean_within_pair_dist_r2),
        fmt12(diag.cross_pair_dist_r2)
    )?;
    with_output(a.out.as_deref(), stdout, |out| {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| CliError::Data(format!("writing assignment: {e}"));
        w.write_record(["unit_id", "pair_id", "pair_order", "d"])
            .map_err(csv_err)?;
        for (j, &(u, v)) in plan.pairs().iter().enumerate() {
            for (pos, i) in [(1, u), (2, v)] {
                w.write_record([
                    table.rows[i][id_col].clone(),
                    (j + 1).to_string(),
                    pos.to_string(),
                    d[i].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("paired-ate").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn fmt12_rounds() {
        assert_eq!(fmt12(2.0), "2");
        assert_eq!(fmt12(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt12(-123456.7890123456), "-123456.789012");
        assert_eq!(fmt12(f64::NAN), "NaN");
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_str(&["simulate", "--model", "99"]).0, EXIT_USAGE);
        assert_eq!(run_str(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(run_str(&["simulate", "--model", "1", "--pairs", "1"]).0, EXIT_USAGE);
        assert_eq!(run_str(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn simulate_smoke_is_deterministic() {
        let args = [
            "simulate", "--model", "1", "--pairs", "20", "--reps", "5", "--delta", "0", "--seed", "7",
        ];
        let (code, a, _) = run_str(&args);
        assert_eq!(code, EXIT_OK);
        assert_eq!(a, run_str(&args).1);
        assert_eq!(a.lines().count(), 1 + default_menu(1).len());
    }
}
