use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Arg, ArgMatches, Args, FromArgMatches, Parser, Subcommand, ValueEnum};
use graphdistill::eval::{coreset, evaluate_condensed, CoresetMethod, EvalConfig};
use graphdistill::graph::normalized_adjacency;
use graphdistill::io::{load_condensed, load_dataset, save_condensed, save_dataset};
use graphdistill::pipeline::{condensed_size, eval_seed, evaluator_fid};
use graphdistill::propagate::gls_propagate;
use graphdistill::sbm::{generate_sbm, SbmSpec};
use graphdistill::{distill, run_pipeline, CondensedGraph, Dataset, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "graphdistill",
    version,
    about = "Condense a labelled graph into a small synthetic graph"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Condense a dataset and write the condensed graph.
    Distill {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train evaluators on a condensed graph and test them on the dataset.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Directory written by `distill` or `baseline`.
        #[arg(long, visible_alias = "out-dir")]
        condensed_dir: PathBuf,
    },
    /// Fréchet distance between evaluator outputs on the dataset and on a condensed graph.
    Fid {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, visible_alias = "out-dir")]
        condensed_dir: PathBuf,
    },
    /// Select real training nodes instead of synthesizing them.
    Baseline {
        #[arg(value_enum)]
        method: Method,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write a stochastic block model dataset.
    GenSbm {
        #[command(flatten)]
        spec: SbmArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run every stage and print the metric report.
    Report {
        #[command(flatten)]
        run: RunArgs,
        /// Also write the condensed graph and `report.txt` here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Random,
    #[value(name = "kcenter")]
    KCenter,
    Herding,
}

impl From<Method> for CoresetMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Random => CoresetMethod::Random,
            Method::KCenter => CoresetMethod::KCenter,
            Method::Herding => CoresetMethod::Herding,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML file of config keys; flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset_dir: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let base = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        Ok(base.with_overrides(&self.overrides.0)?)
    }

    fn dataset(&self) -> Result<Dataset> {
        load_dataset(&self.dataset_dir).with_context(|| format!("loading {}", self.dataset_dir.display()))
    }
}

/// One `--<key> <value>` flag per config key.
struct Overrides(Vec<(String, String)>);

impl FromArgMatches for Overrides {
    fn from_arg_matches(matches: &ArgMatches) -> Result<Self, clap::Error> {
        let set = PipelineConfig::keys()
            .into_iter()
            .filter_map(|key| matches.get_one::<String>(&key).map(|v| (key.clone(), v.clone())))
            .collect();
        Ok(Overrides(set))
    }

    fn update_from_arg_matches(&mut self, matches: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(matches)?;
        Ok(())
    }
}

impl Args for Overrides {
    fn augment_args(cmd: clap::Command) -> clap::Command {
        PipelineConfig::keys().into_iter().fold(cmd, |cmd, key| {
            cmd.arg(
                Arg::new(key.clone())
                    .long(key)
                    .value_name("VALUE")
                    .help_heading("Config keys"),
            )
        })
    }

    fn augment_args_for_update(cmd: clap::Command) -> clap::Command {
        Self::augment_args(cmd)
    }
}

#[derive(Args)]
struct SbmArgs {
    #[arg(long = "num_nodes", default_value_t = SbmSpec::default().num_nodes)]
    num_nodes: usize,
    #[arg(long = "num_classes", default_value_t = SbmSpec::default().num_classes)]
    num_classes: usize,
    /// Edge probability inside a block.
    #[arg(long, default_value_t = SbmSpec::default().p)]
    p: f64,
    /// Edge probability across blocks.
    #[arg(long, default_value_t = SbmSpec::default().q)]
    q: f64,
    #[arg(long = "feature_dim", default_value_t = SbmSpec::default().feature_dim)]
    feature_dim: usize,
    #[arg(long, default_value_t = SbmSpec::default().separation)]
    separation: f64,
    #[arg(long, default_value_t = SbmSpec::default().noise)]
    noise: f64,
    #[arg(long, default_value_t = SbmSpec::default().seed)]
    seed: u64,
}

impl From<&SbmArgs> for SbmSpec {
    fn from(a: &SbmArgs) -> Self {
        SbmSpec {
            num_nodes: a.num_nodes,
            num_classes: a.num_classes,
            p: a.p,
            q: a.q,
            feature_dim: a.feature_dim,
            separation: a.separation,
            noise: a.noise,
            seed: a.seed,
        }
    }
}

fn write_condensed(condensed: &CondensedGraph, metrics: &BTreeMap<String, f64>, dir: &Path) -> Result<()> {
    save_condensed(condensed, metrics, dir).with_context(|| format!("writing {}", dir.display()))
}

fn read_condensed(dir: &Path) -> Result<CondensedGraph> {
    let (condensed, _) = load_condensed(dir).with_context(|| format!("loading {}", dir.display()))?;
    Ok(condensed)
}

fn accuracy_lines(accuracies: &[f64], mean: f64, std: f64) -> String {
    let runs: Vec<String> = accuracies.iter().map(|a| format!("{a:.6}")).collect();
    format!(
        "accuracy_mean = {mean:.6}\naccuracy_std = {std:.6}\naccuracy_runs = {}\n",
        runs.join(",")
    )
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Distill { run, out_dir } => {
            let cfg = run.config()?;
            let d = distill(&run.dataset()?, &cfg)?;
            write_condensed(&d.condensed, &d.metrics.to_map(), &out_dir)?;
            println!("n = {}", d.condensed.n());
            println!("runtime_per_stage = {}", d.times.summary());
        }
        Command::Evaluate { run, condensed_dir } => {
            let cfg = run.config()?;
            let condensed = read_condensed(&condensed_dir)?;
            let (report, _) = evaluate_condensed(&condensed, &run.dataset()?, &cfg.eval(), eval_seed(cfg.seed))?;
            print!("{}", accuracy_lines(&report.accuracies, report.mean, report.std));
        }
        Command::Fid { run, condensed_dir } => {
            let cfg = run.config()?;
            let dataset = run.dataset()?;
            let condensed = read_condensed(&condensed_dir)?;
            let eval = EvalConfig { runs: 1, ..cfg.eval() };
            let (_, params) = evaluate_condensed(&condensed, &dataset, &eval, eval_seed(cfg.seed))?;
            println!(
                "fid = {:.6}",
                evaluator_fid(&params[0], &condensed, &dataset, cfg.normalize_fid)?
            );
        }
        Command::Baseline { method, run, out_dir } => {
            let cfg = run.config()?;
            let dataset = run.dataset()?;
            let z = gls_propagate(
                &normalized_adjacency(&dataset.graph),
                &dataset.features.view(),
                cfg.propagation(),
            )?;
            let mut selected = coreset(
                &dataset,
                &z.view(),
                condensed_size(&dataset, &cfg),
                cfg.seed,
                method.into(),
            )?;
            selected.meta.config_hash = cfg.hash();
            let (report, _) = evaluate_condensed(&selected, &dataset, &cfg.eval(), eval_seed(cfg.seed))?;
            let metrics = BTreeMap::from([
                ("accuracy_mean".to_string(), report.mean),
                ("accuracy_std".to_string(), report.std),
            ]);
            write_condensed(&selected, &metrics, &out_dir)?;
            print!("{}", accuracy_lines(&report.accuracies, report.mean, report.std));
        }
        Command::GenSbm { spec, out_dir } => {
            let sbm = generate_sbm(&SbmSpec::from(&spec))?;
            save_dataset(&sbm.dataset, &out_dir).with_context(|| format!("writing {}", out_dir.display()))?;
            println!("nodes = {}", sbm.dataset.num_nodes());
            println!("edges = {}", sbm.dataset.graph.num_edges());
            println!("homophily = {:.6}", sbm.homophily);
        }
        Command::Report { run, out_dir } => {
            let cfg = run.config()?;
            let out = run_pipeline(&run.dataset()?, &cfg)?;
            let block = out.report_block();
            if let Some(dir) = out_dir {
                let mut metrics = out.distillation.metrics.to_map();
                metrics.insert("accuracy_mean".into(), out.report.mean);
                metrics.insert("accuracy_std".into(), out.report.std);
                if let Some(fid) = out.report.fid {
                    metrics.insert("fid".into(), fid);
                }
                write_condensed(&out.distillation.condensed, &metrics, &dir)?;
                fs::write(dir.join("report.txt"), &block)?;
            }
            print!("{block}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
