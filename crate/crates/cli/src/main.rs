use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use lapcert::bound::{audit_with_fit, AuditConfig, BoundForm, BoundReport, Delta4Mode};
use lapcert::experiment::{format_number, run_experiment, write_report_csv, ExperimentSpec};
use lapcert::laplace::fit_laplace;
use lapcert::mcmc::{ground_truth, KLEstimate, McmcPreset};
use lapcert::model::{
    generate_dataset, read_dataset_csv, write_dataset_csv, GaussianModel, LogisticRegressionModel,
    SyntheticDatasetConfig, TargetModel,
};
use lapcert::{Error, Result};

/// Laplace approximation audit with a computable KL(g, f) bound.
#[derive(Debug, Parser)]
#[command(name = "lapcert", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the Laplace approximation and report the KL bound as JSON.
    Audit(AuditArgs),
    /// Estimate KL(g, f) by Metropolis-Hastings and importance sampling.
    Truth(TruthArgs),
    /// Run an experiment spec and write the table.
    Table(TableArgs),
    /// Write a synthetic logistic-regression dataset as CSV.
    GenData(GenDataArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Logistic,
    Gaussian,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

impl From<PresetArg> for McmcPreset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => McmcPreset::Desk,
            PresetArg::Paper => McmcPreset::Paper,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BoundArg {
    Approx,
    Detailed,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Delta4Arg {
    Analytic,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Prior standard deviation; `inf` gives a flat prior.
    #[arg(long, default_value_t = 10.0)]
    sigma0: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset CSV (header `y,x1,...,xd`) instead of synthetic data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "logistic")]
    model: ModelArg,
}

#[derive(Debug, Args)]
struct OutputArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 256)]
    directions: usize,
    #[arg(long, default_value_t = 64)]
    nodes: usize,
    #[arg(long, value_enum, default_value = "both")]
    bound: BoundArg,
    #[arg(long = "delta4-mode", value_enum, default_value = "analytic")]
    delta4_mode: Delta4Arg,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct TruthArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long = "mcmc-preset", value_enum, default_value = "desk")]
    mcmc_preset: PresetArg,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct TableArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the preset in the spec file.
    #[arg(long = "mcmc-preset", value_enum)]
    mcmc_preset: Option<PresetArg>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Round numbers to 4 significant digits.
    #[arg(long)]
    pretty: bool,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "assumption_violation": e.is_assumption_violation(),
            });
            eprintln!("{message}");
            ExitCode::from(if e.is_assumption_violation() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Audit(args) => cmd_audit(args),
        Command::Truth(args) => cmd_truth(args),
        Command::Table(args) => cmd_table(args),
        Command::GenData(args) => cmd_gen_data(args),
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn build_model(args: &ModelArgs) -> Result<Box<dyn TargetModel>> {
    match args.model {
        ModelArg::Gaussian => {
            if args.data.is_some() {
                return Err(Error::InvalidArgument(
                    "--data applies only to the logistic model".into(),
                ));
            }
            Ok(Box::new(GaussianModel::random(args.d, args.seed)?))
        }
        ModelArg::Logistic => {
            let data = match &args.data {
                Some(path) => read_dataset_csv(File::open(path)?)?,
                None => generate_dataset(&SyntheticDatasetConfig {
                    d: args.d,
                    n: args.n,
                    seed: args.seed,
                })?,
            };
            Ok(Box::new(LogisticRegressionModel::from_data(
                &data,
                args.sigma0,
            )?))
        }
    }
}

fn write_json<T: serde::Serialize + ?Sized>(value: &T, out: &mut dyn Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format_number(x, false))
}

fn write_audit_csv(report: &BoundReport, out: &mut dyn Write) -> Result<()> {
    let terms = report.term_breakdown;
    writeln!(
        out,
        "d,n_directions,mean_delta3_sq,se_delta3_sq,approx_bound,detailed_bound,e_term,cond_term,eps1_term,invalid_directions"
    )?;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{}",
        report.d,
        report.n_directions,
        format_number(report.mean_delta3_sq, false),
        format_number(report.se_delta3_sq, false),
        opt(report.approx_bound),
        opt(report.detailed_bound),
        opt(terms.map(|t| t.e_term)),
        opt(terms.map(|t| t.cond_term)),
        opt(terms.map(|t| t.eps1_term)),
        report.invalid_directions.len()
    )?;
    Ok(())
}

fn write_truth_csv(est: &KLEstimate, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "kl,se,inv_z,inv_z_se,log_inv_z,k,k2,acceptance_rate")?;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{}",
        format_number(est.kl, false),
        format_number(est.se, false),
        format_number(est.inv_z, false),
        format_number(est.inv_z_se, false),
        format_number(est.log_inv_z, false),
        est.k,
        est.k2,
        format_number(est.acceptance_rate, false)
    )?;
    Ok(())
}

fn cmd_audit(args: AuditArgs) -> Result<()> {
    let model = build_model(&args.model)?;
    let config = AuditConfig {
        n_directions: args.directions,
        seed: args.model.seed,
        quadrature_nodes: args.nodes,
        bound: match args.bound {
            BoundArg::Approx => BoundForm::Approx,
            BoundArg::Detailed => BoundForm::Detailed,
            BoundArg::Both => BoundForm::Both,
        },
        delta4_mode: match args.delta4_mode {
            Delta4Arg::Analytic => Delta4Mode::Analytic,
            Delta4Arg::Grid => Delta4Mode::Grid,
        },
        ..AuditConfig::default()
    };
    let fit = fit_laplace(
        model.as_ref(),
        &DVector::zeros(model.dim()),
        &config.optimizer,
    )?;
    let report = audit_with_fit(model.as_ref(), &fit, &config)?;
    let mut out = open_output(args.output.out.as_deref())?;
    match args.output.format {
        Format::Json => write_json(&report, &mut *out)?,
        Format::Csv => write_audit_csv(&report, &mut *out)?,
    }
    out.flush()?;
    Ok(())
}

fn cmd_truth(args: TruthArgs) -> Result<()> {
    let model = build_model(&args.model)?;
    let fit = fit_laplace(
        model.as_ref(),
        &DVector::zeros(model.dim()),
        &Default::default(),
    )?;
    let preset = McmcPreset::from(args.mcmc_preset);
    let est = ground_truth(
        model.as_ref(),
        &fit,
        &preset.chain_config(args.model.seed),
        preset.k2(),
    )?;
    if let Some(w) = &est.warning {
        eprintln!("warning: {w}");
    }
    let mut out = open_output(args.output.out.as_deref())?;
    match args.output.format {
        Format::Json => write_json(&est, &mut *out)?,
        Format::Csv => write_truth_csv(&est, &mut *out)?,
    }
    out.flush()?;
    Ok(())
}

fn cmd_table(args: TableArgs) -> Result<()> {
    let mut spec: ExperimentSpec = serde_json::from_reader(File::open(&args.spec)?)?;
    if let Some(p) = args.mcmc_preset {
        spec.mcmc_preset = p.into();
    }
    let report = run_experiment(&spec)?;
    for r in report.replicates.iter().filter(|r| r.status != "ok") {
        eprintln!("row {} replicate {}: {}", r.row, r.replicate, r.status);
    }
    let csv_path = args
        .out
        .clone()
        .or_else(|| spec.output.csv.clone().map(PathBuf::from));
    match args.format {
        Format::Csv => {
            let mut out = open_output(csv_path.as_deref())?;
            write_report_csv(&report, &mut *out, args.pretty)?;
            out.flush()?;
            if let (None, Some(json)) = (&args.out, &spec.output.json) {
                let mut f = BufWriter::new(File::create(json)?);
                write_json(&report, &mut f)?;
                f.flush()?;
            }
        }
        Format::Json => {
            let json_path = args
                .out
                .clone()
                .or_else(|| spec.output.json.clone().map(PathBuf::from));
            let mut out = open_output(json_path.as_deref())?;
            write_json(&report, &mut *out)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let data = generate_dataset(&SyntheticDatasetConfig {
        d: args.d,
        n: args.n,
        seed: args.seed,
    })?;
    let mut out = open_output(args.out.as_deref())?;
    write_dataset_csv(&data, &mut *out)?;
    out.flush()?;
    Ok(())
}
