use clap::Parser;

fn main() {
    let cli = bilip_cli::Cli::parse();
    match bilip_cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
