use clap::Parser;

fn main() {
    let cli = ctrs::cli::Cli::parse();
    if let Err(e) = ctrs::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
