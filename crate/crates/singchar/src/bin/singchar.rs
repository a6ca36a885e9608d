use clap::{Parser, Subcommand};
use singchar::cli::{self, EXIT_ASSERTION, EXIT_CONFIG, EXIT_OK, Suite};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "singchar", version, about = "Singular characteristics of Tonelli Hamiltonians on the torus")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file.
    Run {
        config: PathBuf,
        /// Output directory (default `out/<name>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Built-in test problems.
    Fixtures {
        #[command(subcommand)]
        cmd: FixturesCmd,
    },
    /// Run the invariant suite on every fixture.
    Verify {
        #[arg(long, value_enum, default_value = "fast")]
        suite: Suite,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Subcommand)]
enum FixturesCmd {
    List,
}

fn threads(n: Option<usize>) -> Result<(), u8> {
    if let Some(n) = n {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return Err(EXIT_CONFIG);
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| {
            eprintln!("error: {e}");
            EXIT_CONFIG
        })?;
    }
    Ok(())
}

fn seed() -> Result<Option<u64>, u8> {
    cli::seed_from_env().map_err(|e| {
        eprintln!("error: {e}");
        cli::exit_code(&e)
    })
}

fn main_inner() -> Result<u8, u8> {
    let args = match Cli::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return Ok(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    match args.cmd {
        Cmd::Run { config, out, threads: n } => {
            threads(n)?;
            let seed = seed()?;
            match cli::run_file(&config, out.as_deref(), seed) {
                Ok(o) => {
                    for a in o.run["assertions"].as_array().into_iter().flatten() {
                        let mark = if a["passed"] == true { "ok  " } else { "FAIL" };
                        println!("{mark} {} = {}", a["metric"].as_str().unwrap_or(""), a["value"]);
                    }
                    println!("{} -> {} ({})", o.run["name"].as_str().unwrap_or(""), o.out_dir.display(), o.run["status"].as_str().unwrap_or(""));
                    Ok(o.exit_code())
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    Err(cli::exit_code(&e))
                }
            }
        }
        Cmd::Fixtures { cmd: FixturesCmd::List } => {
            for f in singchar::fixtures::list() {
                println!("{:<10} {}D  {}", f.name, f.dim, f.description);
            }
            Ok(EXIT_OK)
        }
        Cmd::Verify { suite, threads: n } => {
            threads(n)?;
            let seed = seed()?.unwrap_or(0);
            let checks = cli::suites::run_suite(suite, seed).map_err(|e| {
                eprintln!("error: {e}");
                cli::exit_code(&e)
            })?;
            let mut failed = 0;
            for c in &checks {
                if !c.passed {
                    failed += 1;
                }
                let mark = if c.passed { "ok  " } else { "FAIL" };
                println!("{mark} {:<10} {:<34} {:>12.3e} <= {:.1e}", c.fixture, c.name, c.value, c.bound);
            }
            println!("{} checks, {failed} failed", checks.len());
            Ok(if failed == 0 { EXIT_OK } else { EXIT_ASSERTION })
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(main_inner().unwrap_or_else(|c| c))
}
