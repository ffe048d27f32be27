use clap::Parser;

fn main() {
    let cli = pseudohyp_cli::Cli::parse();
    match pseudohyp_cli::dispatch(&cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("pseudohyp: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
