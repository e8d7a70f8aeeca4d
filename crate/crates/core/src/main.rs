use clap::Parser;

fn main() {
    let cli = provkit::cli::Cli::parse();
    if let Err(e) = provkit::cli::run(cli) {
        eprintln!("provkit: {}", e.message());
        std::process::exit(e.code());
    }
}
