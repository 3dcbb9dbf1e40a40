use clap::Parser;
use voyagecast_cli::{init_threads, run, Cli};

fn main() {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| run(cli));
    match result {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("voyagecast: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
