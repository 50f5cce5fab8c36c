use clap::Parser;

fn main() {
    let cli = replica_sync_cli::Cli::parse();
    match replica_sync_cli::main_with(cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
