use clap::Parser;
use lstore_bench::config::{Args, Format};

fn main() {
    let mut args = Args::parse();
    if let Some(path) = args.config.clone() {
        if let Err(e) = args.apply_config_file(&path) {
            eprintln!("config file error: {e}");
            std::process::exit(2);
        }
    }
    if let Err(e) = args.validate() {
        eprintln!("invalid arguments: {e}");
        std::process::exit(2);
    }
    match lstore_bench::workload::run(&args) {
        Ok(outcome) => {
            let text = match args.format {
                Format::Json => outcome.report.to_json(),
                Format::Csv => outcome.report.to_csv(),
                Format::Human => outcome.report.to_human(),
            };
            match &args.out {
                Some(path) => {
                    if let Err(e) = std::fs::write(path, &text) {
                        eprintln!("cannot write {}: {e}", path.display());
                        std::process::exit(1);
                    }
                }
                None => println!("{text}"),
            }
            if let Some(false) = outcome.verified {
                eprintln!("verification FAILED:");
                for f in outcome.verify_failures.iter().take(16) {
                    eprintln!("  {f}");
                }
                std::process::exit(1);
            }
        }
        Err(e) => {
            eprintln!("benchmark failed: {e}");
            std::process::exit(1);
        }
    }
}
