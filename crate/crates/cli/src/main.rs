//! Command-line front end: generate training shapes, learn the deformable
//! vehicle model, render synthetic stereo scenes, fit the model to their
//! observations, score the fits and export the results.

mod artifacts;
mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "carfit",
    version,
    about = "Deformable vehicle shape models fitted to stereo street scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic training corpus of vehicle keypoint sets.
    GenTrain(commands::GenTrainArgs),
    /// Learn the deformable shape model from a directory of keypoint sets.
    LearnAsm(commands::LearnAsmArgs),
    /// Render a synthetic stereo scene with per-vehicle observations.
    GenScene(commands::GenSceneArgs),
    /// Fit the shape model to every observed vehicle of a scene.
    Fit(commands::FitArgs),
    /// Score fitted states against the scene ground truth.
    Eval(commands::EvalArgs),
    /// Export one fitted vehicle as mesh text and an image overlay.
    Export(commands::ExportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTrain(args) => commands::gen_train(args),
        Command::LearnAsm(args) => commands::learn_asm(args),
        Command::GenScene(args) => commands::gen_scene(args),
        Command::Fit(args) => commands::fit(args),
        Command::Eval(args) => commands::eval(args),
        Command::Export(args) => commands::export(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 for bad flags or config values, 4 for numerical failures inside the
/// pipeline, 3 for everything else (missing or malformed data).
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<config::UsageError>().is_some() {
        return 2;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<carfit::Error>() {
            return if e.is_numerical() { 4 } else { 3 };
        }
    }
    3
}
