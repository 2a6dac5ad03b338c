use clap::Parser;

fn main() {
    let cli = wavectl::Cli::parse();
    if let Err(e) = wavectl::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
