use clap::Parser;

fn main() {
    let cli = tracefa::Cli::parse();
    if let Err(e) = tracefa::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
