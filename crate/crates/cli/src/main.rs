use clap::Parser;

fn main() {
    let cli = ctae_cli::Cli::parse();
    match ctae_cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
