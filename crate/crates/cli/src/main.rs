use clap::Parser;

fn main() {
    let cli = lexnmt_cli::args::Cli::parse();
    if let Err(err) = lexnmt_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
