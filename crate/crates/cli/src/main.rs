use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use catchrelease_cli::args::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match catchrelease_cli::run(&cli) {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.render(cli.json).as_bytes());
            ExitCode::SUCCESS
        }
        Err(f) => {
            if cli.json {
                let body = serde_json::json!({ "code": f.code, "message": f.message });
                println!("{body}");
            }
            eprintln!("error: {f}");
            ExitCode::from(1)
        }
    }
}
