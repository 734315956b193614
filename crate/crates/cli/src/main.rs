//! `panorad`: every pipeline stage as a subcommand.
//!
//! Each invocation prints one TOML document with the command name, the
//! fully resolved configuration and the result. Exit codes: 0 success,
//! 1 usage error, 2 data error.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use panorad_core::Error;

#[derive(Debug, Parser)]
#[command(name = "panorad", version, about = "RGB-D indoor panorama toolkit")]
struct Cli {
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true, env = "PANORAD_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes and a manifest.
    Scenegen(commands::ScenegenArgs),
    /// Sample a sensor rig and write its visibility masks.
    Maskgen(commands::MaskgenArgs),
    /// Render layout depth for every manifest entry.
    Layoutdepth(commands::LayoutdepthArgs),
    /// Corrupt every scene of a manifest.
    Corrupt(commands::CorruptArgs),
    /// Train the FAED auto-encoder.
    FaedTrain(commands::FaedTrainArgs),
    /// Feature statistics of a corpus.
    FaedStats(commands::FaedStatsArgs),
    /// Fréchet distance between two statistics files.
    Faed(commands::FaedArgs),
    /// Compare predictions against ground truth.
    Metrics(commands::MetricsArgs),
    /// Train the panorama generator.
    BipsTrain(commands::BipsTrainArgs),
    /// Run a trained generator on masked inputs.
    BipsInfer(commands::BipsInferArgs),
    /// FAED against corrupted copies of a synthetic corpus, per kind and level.
    VerifyFaed(commands::VerifyFaedArgs),
}

#[derive(Serialize)]
struct Report<'a, C: Serialize, R: Serialize> {
    command: &'a str,
    threads: usize,
    config: &'a C,
    result: R,
}

fn emit<C: Serialize, R: Serialize>(command: &str, config: &C, result: R) -> panorad_core::Result<()> {
    let report = Report {
        command,
        threads: rayon::current_num_threads(),
        config,
        result,
    };
    let text = toml::to_string(&report).map_err(|e| Error::Data(format!("cannot serialize report: {e}")))?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> panorad_core::Result<()> {
    use Command::*;
    match &cli.command {
        Scenegen(a) => emit("scenegen", a, commands::scenegen(a)?),
        Maskgen(a) => emit("maskgen", a, commands::maskgen(a)?),
        Layoutdepth(a) => emit("layoutdepth", a, commands::layoutdepth(a)?),
        Corrupt(a) => emit("corrupt", a, commands::corrupt(a)?),
        FaedTrain(a) => emit("faed-train", a, commands::faed_train(a)?),
        FaedStats(a) => emit("faed-stats", a, commands::faed_stats(a)?),
        Faed(a) => emit("faed", a, commands::faed(a)?),
        Metrics(a) => emit("metrics", a, commands::metrics(a)?),
        BipsTrain(a) => emit("bips-train", a, commands::bips_train(a)?),
        BipsInfer(a) => emit("bips-infer", a, commands::bips_infer(a)?),
        VerifyFaed(a) => emit("verify-faed", a, commands::verify_faed(a)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
