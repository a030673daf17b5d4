use clap::Parser;

use ssrepl_pipeline::cli::{self, Cli, Command};

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Synth(args) => report_anyhow(cli::cmd_synth(&args)),
        Command::Inspect { path } => report_anyhow(cli::cmd_inspect(&path)),
        Command::Train(args) => match cli::cmd_train(&args) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::Evaluate { run, data } => match cli::cmd_evaluate(&run, data.as_deref()) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::Gradcheck(args) => match cli::cmd_gradcheck(&args) {
            Ok(true) => 0,
            Ok(false) => 4,
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
        Command::Report { runs, out } => report_anyhow(cli::cmd_report(&runs, out.as_deref())),
    };
    std::process::exit(code);
}

fn report_anyhow(result: anyhow::Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
