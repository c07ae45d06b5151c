use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use coalition_bench::manifest::{RunManifest, OUTPUT_DIR_ENV};
use coalition_bench::report::{report_dir, run_manifest_to, write_csv, SUMMARY_FILE};
use coalition_bench::{BenchError, Result};
use coalition_core::dynamics::VetoRule;
use coalition_core::game::DEFAULT_TYPE_SPACE_CAP;
use coalition_core::markov::{attach_formation_probabilities, build_chain};
use coalition_core::par::Execution;
use coalition_core::scenario::parse_type_set;
use coalition_core::{BeliefState, Environment, Network, PayoffEngine, Scenario, SimulationSetting};

#[derive(Parser)]
#[command(name = "coalbench", version, about = "Bayesian coalition formation among drone base stations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Beliefs {
    Truth,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum Veto {
    NextBest,
    StayOnVeto,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario file.
    Generate {
        #[arg(long, default_value = "S1")]
        setting: String,
        #[arg(long, default_value = "urban")]
        environment: String,
        /// Type set as id:mu:sigma, comma separated.
        #[arg(long, default_value = "1:12:3,2:18:3")]
        types: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run a manifest and write the result tables.
    Run {
        manifest: PathBuf,
        /// Overrides the manifest's output directory.
        #[arg(long, env = OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        topologies: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sequential: bool,
        /// Exit with status 3 if any run did not converge.
        #[arg(long)]
        strict: bool,
    },
    /// Build the best-reply Markov chain of one scenario and write it as JSON.
    Markov {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "truth")]
        beliefs: Beliefs,
        #[arg(long, value_enum, default_value = "next-best")]
        veto: Veto,
        #[arg(long, default_value_t = 8)]
        cap: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Recompute the summary table from an existing result directory.
    Report {
        dir: PathBuf,
        /// Also rewrite summary.csv in the directory.
        #[arg(long)]
        write: bool,
    },
    /// Print an example manifest.
    Example,
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate {
            setting,
            environment,
            types,
            seed,
            out,
        } => {
            let s = Scenario::generate(
                &SimulationSetting::named(&setting)?,
                &Environment::preset(&environment)?,
                &parse_type_set(&types)?,
                seed,
            )?;
            s.save(&out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Run {
            manifest,
            output_dir,
            topologies,
            repetitions,
            seed,
            sequential,
            strict,
        } => {
            let mut m = RunManifest::load(&manifest)?;
            if let Some(t) = topologies {
                m.topologies = t;
            }
            if let Some(r) = repetitions {
                m.repetitions = r;
            }
            if let Some(s) = seed {
                m.seed = s;
            }
            if sequential {
                m.execution = Execution::Sequential;
            }
            // clap has already applied the environment override
            let dir = output_dir.unwrap_or_else(|| m.output_dir.clone());
            let results = run_manifest_to(&m, &dir)?;
            for n in &results.notices {
                eprintln!("notice: {n}");
            }
            for r in &results.summary {
                println!(
                    "{:<3} {:<16} best_stable {:>12.4} ± {:<10.4} expected {:>12.4} ± {:.4}",
                    r.setting, r.regime, r.best_stable_mean, r.best_stable_std, r.expected_mean, r.expected_std
                );
            }
            eprintln!("wrote {}", results.output_dir.display());
            if strict && !results.all_converged() {
                eprintln!("error: some runs did not converge");
                return Ok(ExitCode::from(3));
            }
        }
        Command::Markov {
            scenario,
            beliefs,
            veto,
            cap,
            out,
        } => {
            let net = Network::new(Scenario::load(&scenario)?)?;
            let engine = PayoffEngine::new(&net, DEFAULT_TYPE_SPACE_CAP)?;
            let b = match beliefs {
                Beliefs::Truth => BeliefState::truth(&net.true_type, net.num_types()),
                Beliefs::Uniform => BeliefState::uniform(&net.true_type, net.num_types()),
            };
            let rule = match veto {
                Veto::NextBest => VetoRule::NextBest,
                Veto::StayOnVeto => VetoRule::StayOnVeto,
            };
            let mut chain = build_chain(&engine, &b, rule, Execution::Parallel, cap)?;
            attach_formation_probabilities(&mut chain)?;
            let probs = chain.formation_probs.clone().unwrap_or_default();
            for &a in &chain.absorbing {
                println!("{:<24} {:.6}", chain.states[a].to_string(), probs[a]);
            }
            chain.write_json(std::io::BufWriter::new(std::fs::File::create(&out)?))?;
            eprintln!("wrote {}", out.display());
        }
        Command::Report { dir, write } => {
            let summary = report_dir(&dir)?;
            for r in &summary {
                println!(
                    "{},{},{},{},{},{},{},{}",
                    r.setting,
                    r.environment,
                    r.regime,
                    r.topologies,
                    r.best_stable_mean,
                    r.best_stable_std,
                    r.expected_mean,
                    r.expected_std
                );
            }
            if write {
                write_csv(&dir.join(SUMMARY_FILE), &summary)?;
            }
        }
        Command::Example => print!("{}", RunManifest::example().to_toml()?),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                BenchError::Core(coalition_core::Error::NonConvergence { .. }) => ExitCode::from(3),
                e if e.is_validation() => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
