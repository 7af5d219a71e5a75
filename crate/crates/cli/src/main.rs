use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use parisi_cli::{error_json, exit_code, parse_betas, run, with_meta, Command, Format, Options, PottsCase};

#[derive(Parser)]
#[command(name = "parisi", version, about = "Parisi PDE solver and functional minimisation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration (sk-rs, sk-1rsb, potts2) used when --config is absent.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Directory for artifacts; standard output when absent.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    /// Worker threads; 0 uses every logical core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Leave out the meta block (timestamps) from JSON artifacts.
    #[arg(long, global = true)]
    no_meta: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    Identities,
    Positive,
    Degenerate,
    Convexity,
    All,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the PDE and report Φ at the configured points (csv: full grid dump).
    EvalPhi,
    /// Three-term decomposition of the functional.
    EvalFunctional,
    /// Minimise over the levels of α on a fixed jump grid.
    Minimize,
    /// Simulate the optimal control and price perturbations.
    SdeCheck,
    /// Potts identities and experiments.
    Potts {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Comma-separated p:beta pairs.
        #[arg(long, default_value = "2:1.0")]
        betas: String,
        #[arg(long, value_enum, default_value_t = CaseArg::All)]
        case: CaseArg,
    },
    /// Keyed pass/fail report over the numerical properties.
    Verify,
}

fn fail(e: &parisi_core::Error) -> ExitCode {
    eprintln!("{}", error_json(e));
    ExitCode::from(exit_code(e) as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = cli.common;
    parisi_core::par::init_threads(c.threads);
    let command = match cli.command {
        Cmd::EvalPhi => Command::EvalPhi,
        Cmd::EvalFunctional => Command::EvalFunctional,
        Cmd::Minimize => Command::Minimize,
        Cmd::SdeCheck => Command::SdeCheck,
        Cmd::Verify => Command::Verify,
        Cmd::Potts { dim, betas, case } => {
            let betas = match parse_betas(&betas) {
                Ok(b) => b,
                Err(e) => return fail(&e),
            };
            let case = match case {
                CaseArg::Identities => PottsCase::Identities,
                CaseArg::Positive => PottsCase::Positive,
                CaseArg::Degenerate => PottsCase::Degenerate,
                CaseArg::Convexity => PottsCase::Convexity,
                CaseArg::All => PottsCase::All,
            };
            Command::Potts { dim, betas, case }
        }
    };
    let name = command.name();
    let opts = Options {
        command,
        config: c.config,
        preset: c.preset,
        output: c.output,
        format: match c.format {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        },
        seed: c.seed,
        no_meta: c.no_meta,
    };
    let outcome = match run(&opts) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    for (file, contents) in outcome.artifacts {
        let contents = if opts.no_meta { contents } else { with_meta(&file, contents, name) };
        match &opts.output {
            Some(dir) => {
                let path = dir.join(&file);
                if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, contents)) {
                    eprintln!("{}", serde_json::json!({ "error": { "kind": "io", "message": format!("{}: {e}", path.display()) } }));
                    return ExitCode::from(1);
                }
            }
            None => print!("{contents}"),
        }
    }
    if outcome.ok {
        ExitCode::SUCCESS
    } else {
        eprintln!("{}", serde_json::json!({ "error": { "kind": "check_failed", "message": format!("{name} reported a failed check") } }));
        ExitCode::from(2)
    }
}
