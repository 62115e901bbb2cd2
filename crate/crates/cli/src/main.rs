use clap::Parser;
use laserpm_cli::Cli;

fn main() {
    let args: Vec<std::ffi::OsString> = std::env::args_os().collect();
    // Help and version go through clap's own printer.
    if let Err(e) = Cli::try_parse_from(&args) {
        if !e.use_stderr() {
            e.exit();
        }
    }
    match laserpm_cli::run(args) {
        Ok(text) => println!("{text}"),
        Err(e) => {
            eprintln!("laserpm: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
