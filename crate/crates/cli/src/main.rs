use std::process::ExitCode;

use bdg::cli::{Cli, Command};
use bdg::commands;
use bdg::reproduce::TableId;
use bdg::Result;
use clap::Parser;

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Design(common) => {
            let cfg = common.resolve()?;
            let done = commands::design(&cfg, &common.out)?;
            println!("final loss {:.6}", done.report.final_loss);
            println!("wrote {} and {}", done.checkpoint.display(), done.loss_curve.display());
        }
        Command::Evaluate { game, common } => {
            let cfg = common.resolve()?;
            let file = commands::evaluate(&game, &cfg, &common.out)?;
            println!("{:.3} ({:.3})", file.report.mean, file.report.std);
        }
        Command::Render {
            game,
            what,
            rollouts,
            common,
        } => {
            let cfg = common.resolve()?;
            let (svg, _, text) = commands::render(&game, what, rollouts, &cfg, &common.out)?;
            print!("{text}");
            println!("wrote {}", svg.display());
        }
        Command::Reproduce { table, common } => {
            let cfg = common.resolve()?;
            let output = commands::reproduce(TableId::from_number(table)?, &cfg, &common.out)?;
            print!("{}", output.text);
        }
        Command::Simulate { game, common } => {
            let cfg = common.resolve()?;
            let path = commands::simulate(&game, &cfg, &common.out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
