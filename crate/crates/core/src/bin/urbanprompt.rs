use clap::Parser;

fn main() {
    let cli = urbanprompt::cli::Cli::parse();
    if let Err(e) = urbanprompt::cli::run(cli) {
        eprintln!("error[{}]: {e}", e.kind());
        std::process::exit(1);
    }
}
