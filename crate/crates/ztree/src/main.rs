use clap::Parser;

fn main() {
    let cli = ztree::cli::Cli::parse();
    if let Err(e) = ztree::cli::run(cli) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
