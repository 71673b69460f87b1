use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use mii_resil::{evaluation_text, resolve_config, run_all, run_episodes, Workspace, ALL_METHODS};
use mii_resil_core::experiment::{self, select_scenarios, DemoKind, Profile};

#[derive(Parser)]
#[command(name = "mii-resil", version, about = "Hazard injection, diagnosis and mitigation experiments on a simulated manufacturing AI system")]
struct Cli {
    /// Experiment config JSON; defaults to <out>/config.json, then the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = ProfileArg::Desk)]
    profile: ProfileArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Data,
    Pipeline,
    Node,
}

#[derive(Subcommand)]
enum Command {
    /// Base corpus, baseline pipeline and machine ground truth.
    GenData,
    /// Train the configuration grid per machine and deploy the top three.
    TrainPipelines,
    /// Factorial scenario roster (stratified subsample under the desk profile).
    GenScenarios,
    /// Execute all scenarios and log tasks, events and traces.
    Run,
    /// Fit MMSLA and the cyber-physical classifier on the run's tasks.
    TrainDiagnoser,
    /// Cross-validate MMSLA, MSLA and the spectral baseline.
    Eval,
    /// Scripted hazard episodes with and without mitigation.
    Episode {
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
    },
    /// Task report and run manifest with artifact digests.
    Report,
    /// Every stage in order.
    All,
}

fn execute(cli: Cli) -> Result<()> {
    let profile = match cli.profile {
        ProfileArg::Desk => Profile::Desk,
        ProfileArg::Full => Profile::Full,
    };
    let cfg = resolve_config(cli.config.as_deref(), &cli.out, profile, cli.seed)?;
    let ws = Workspace::new(&cli.out);
    match cli.command {
        Command::GenData => {
            ws.save_config(&cfg)?;
            let data = experiment::generate_data(&cfg)?;
            ws.save_data(&cfg, &data)?;
            println!("baseline config {} validation F1 {:.3}", data.baseline.config.id, data.baseline.validation_score);
        }
        Command::TrainPipelines => {
            let data = ws.load_data()?;
            let (grid, dep) = experiment::train_pipelines(&cfg, &data)?;
            ws.save_deployment(&grid, &dep)?;
            for m in &dep.machines {
                let s: Vec<String> = m.pipelines.iter().map(|p| format!("#{} {:.3}", p.config.id, p.validation_score)).collect();
                println!("M{}: {}", m.machine_id, s.join(", "));
            }
        }
        Command::GenScenarios => {
            let plans = select_scenarios(&cfg)?;
            ws.save_plans(&plans)?;
            println!("{} scenarios, {} tasks", plans.len(), plans.len() * cfg.tasks_per_scenario);
        }
        Command::Run => {
            let world = ws.load_world()?;
            let plans = ws.load_plans()?;
            let run = experiment::run_experiment(&cfg, &world, &plans)?;
            let digest = ws.save_run(&run)?;
            println!("{} tasks, {} events, task log sha256 {digest}", run.tasks.len(), run.events.len());
        }
        Command::TrainDiagnoser => {
            let run = ws.load_run()?;
            let d = experiment::train_diagnosers(&cfg, &run)?;
            ws.save_diagnosers(&cfg, &d)?;
            println!("final training loss {:.4}", d.mmsla.loss_history.last().copied().unwrap_or(f64::NAN));
        }
        Command::Eval => {
            let run = ws.load_run()?;
            let report = experiment::evaluate_diagnosers(&cfg, &run, &ALL_METHODS)?;
            ws.save_evaluation(&report)?;
            print!("{}", evaluation_text(&report));
        }
        Command::Episode { kind } => {
            let world = ws.load_world()?;
            let d = ws.load_diagnosers()?;
            let pairs = match kind {
                None => run_episodes(&cfg, &world, &d)?,
                Some(k) => {
                    let k = match k {
                        KindArg::Data => DemoKind::Data,
                        KindArg::Pipeline => DemoKind::Pipeline,
                        KindArg::Node => DemoKind::Node,
                    };
                    vec![experiment::run_episode_pair(&cfg, &world, &d, k)?]
                }
            };
            print!("{}", ws.save_episodes(&pairs)?);
        }
        Command::Report => {
            let m = ws.emit_report(&cfg)?;
            println!("{} artifacts; task log sha256 {}", m.files.len(), m.task_log_sha256.as_deref().unwrap_or("n/a"));
        }
        Command::All => {
            let o = run_all(&cfg, &ws, &ALL_METHODS)?;
            print!("{}", evaluation_text(&o.evaluation));
            for (m, c) in &o.episodes {
                print!("{}", mii_resil::episode_text(m, c));
            }
            for (s, t) in &o.times.stages {
                println!("{s}: {t:.1} s");
            }
            println!("task log sha256 {}", o.digest);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            let kind = e.downcast_ref::<mii_resil_core::Error>().map(|c| format!("{c:?}").split(['(', ' ', '{']).next().unwrap_or("").to_string());
            let body = serde_json::json!({ "error": chain.first(), "kind": kind.unwrap_or_else(|| "Other".into()), "causes": &chain[1..] });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
