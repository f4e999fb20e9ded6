use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cavscreen::harness::{self, RunConfig, Workspace};
use cavscreen::Result;

#[derive(Parser)]
#[command(
    name = "cavscreen",
    version,
    about = "Cavity-aware structure-based virtual screening"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory shared by all stages.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic planted world.
    GenSynth(Common),
    /// Detect cavities on every structure.
    Detect(Common),
    /// Label cavities against holo pockets.
    Label(Common),
    /// Train encoders with the alignment loss.
    TrainAlign(Common),
    /// Train the cavity aggregation adapter on frozen encoders.
    TrainAdapter(Common),
    /// Score the screening libraries.
    Screen(Common),
    /// Pocket identification hit rates.
    PocketId(Common),
    /// Compute metrics and write the report.
    Eval(Common),
    /// Run every stage in order.
    Run(Common),
    /// Print every configuration key with its default value.
    Defaults,
}

fn resolve(common: &Common) -> Result<(RunConfig, Workspace)> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    Ok((cfg, Workspace::new(&common.out)))
}

fn execute(command: Command) -> Result<()> {
    let common = match &command {
        Command::Defaults => {
            for (k, v) in RunConfig::default().echo() {
                println!("{k} = {v}");
            }
            return Ok(());
        }
        Command::GenSynth(c)
        | Command::Detect(c)
        | Command::Label(c)
        | Command::TrainAlign(c)
        | Command::TrainAdapter(c)
        | Command::Screen(c)
        | Command::PocketId(c)
        | Command::Eval(c)
        | Command::Run(c) => c,
    };
    let (cfg, ws) = resolve(common)?;
    match command {
        Command::GenSynth(_) => {
            let m = harness::stage_gen_synth(&cfg, &ws)?;
            println!("wrote {} structures to {}", m.sites.len(), ws.root().display());
        }
        Command::Detect(_) => harness::stage_detect(&cfg, &ws)?,
        Command::Label(_) => harness::stage_label(&cfg, &ws)?,
        Command::TrainAlign(_) => {
            let t = harness::stage_train_align(&cfg, &ws)?;
            println!(
                "alignment: {} epochs, best epoch {}, train loss {:.4} -> {:.4}",
                t.epochs.len(),
                t.best_epoch,
                t.initial_train_loss,
                t.final_train_loss
            );
        }
        Command::TrainAdapter(_) => {
            let t = harness::stage_train_adapter(&cfg, &ws)?;
            println!(
                "adapter: {} epochs, best epoch {}, train loss {:.4} -> {:.4}",
                t.epochs.len(),
                t.best_epoch,
                t.initial_train_loss,
                t.final_train_loss
            );
        }
        Command::Screen(_) => harness::stage_screen(&cfg, &ws)?,
        Command::PocketId(_) => harness::stage_pocket_id(&cfg, &ws)?,
        Command::Eval(_) | Command::Run(_) => {
            let report = if matches!(command, Command::Run(_)) {
                harness::run_pipeline(&cfg, &ws)?
            } else {
                harness::stage_eval(&cfg, &ws)?
            };
            for (run, m) in &report.metrics {
                println!(
                    "{run:<16} AUROC {:.3}  BEDROC {:.3}  EF1% {:.2}",
                    m.averages.auroc, m.averages.bedroc, m.averages.ef1
                );
            }
            println!("report: {}", ws.report().display());
        }
        Command::Defaults => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
