use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use repr_audit::cli::{self, OutputFormat, Overrides};
use repr_audit::config::AuditConfig;

#[derive(Parser)]
#[command(
    name = "repr-audit",
    version,
    about = "Representation-bias auditing for embedding models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Feature-space inspection: PCA, optional t-SNE, KS tests per subgroup pair
    Inspect(CommonArgs),
    /// Train probe heads (linear / MLP presets) on frozen embeddings
    TrainProbe(CommonArgs),
    /// Subgroup performance report with bootstrap confidence intervals
    Evaluate(CommonArgs),
    /// Generate a synthetic cohort with injected bias
    Synth(CommonArgs),
    /// Table-1-style cohort summary
    Summarize(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Audit config TOML (for `synth`: the synth spec TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory override
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Which outputs to write
    #[arg(long, value_enum, default_value_t = FormatArg::Both)]
    format: FormatArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Both,
    Json,
    Csv,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Both => OutputFormat::Both,
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Csv => OutputFormat::Csv,
        }
    }
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            format: Some(self.format.into()),
        }
    }

    fn load_config(&self) -> anyhow::Result<AuditConfig> {
        let mut config = AuditConfig::from_path(&self.config)?;
        self.overrides().apply(&mut config);
        Ok(config)
    }
}

fn run() -> anyhow::Result<Vec<PathBuf>> {
    let cli = Cli::parse();
    let written = match &cli.command {
        Command::Inspect(args) => cli::cmd_inspect(&args.load_config()?, &args.overrides())?,
        Command::TrainProbe(args) => cli::cmd_train(&args.load_config()?, &args.overrides())?,
        Command::Evaluate(args) => cli::cmd_evaluate(&args.load_config()?, &args.overrides())?,
        Command::Synth(args) => cli::cmd_synth(&args.config, &args.overrides())?,
        Command::Summarize(args) => cli::cmd_summarize(&args.load_config()?, &args.overrides())?,
    };
    Ok(written)
}

fn main() -> ExitCode {
    env_logger::init();
    match run() {
        Ok(written) => {
            for path in written {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
