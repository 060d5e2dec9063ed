use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use driftlens::context::{DEFAULT_DEPTH, DEFAULT_MAX_LINES};
use driftlens::diffing::DEFAULT_CONTEXT_LINES;
use driftlens::metrics::evaluate;
use driftlens::pipeline::{self, load_pair, record_diff, record_seed};
use driftlens::prompting::sample_exemplars;
use driftlens::{
    build_method_prompt, diff_paths, extract_context, match_files, partition, render_difference_list, BaselineKind,
    MethodId, PartitionStats, RunConfig,
};

#[derive(Parser)]
#[command(name = "driftlens", version, about = "Change-aware file-level defect prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct DataArgs {
    /// Flat key = value run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV of the older version.
    #[arg(long)]
    old: Option<PathBuf>,
    /// CSV of the newer version.
    #[arg(long)]
    new: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// Override any config key, e.g. `--set threshold=0.6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Clone, Default)]
struct LlmArgs {
    /// Answer from the offline scripted stub instead of the endpoint.
    #[arg(long)]
    stub: bool,
    /// JSON reply script for the stub (implies --stub).
    #[arg(long)]
    stub_script: Option<PathBuf>,
    /// Directory for artifacts.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Match files of two versions and print the decisions as CSV.
    Match {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the file-evolution partition; optionally write records.csv.
    Partition {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unified diff of two source files.
    Diff {
        old_file: PathBuf,
        new_file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CONTEXT_LINES)]
        context: usize,
        /// Print the numbered difference list instead of the unified diff.
        #[arg(long)]
        list: bool,
    },
    /// Expanded method context around the changes between two files.
    Context {
        old_file: PathBuf,
        new_file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DEPTH)]
        depth: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_LINES)]
        max_lines: usize,
    },
    /// Render the prompt of a method for one record.
    Prompt {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        method: MethodId,
        /// Record id, i.e. the file path in the newer version.
        #[arg(long)]
        record: String,
    },
    /// Naive predictions for every file of the newer version, as CSV.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "label-persistent")]
        kind: BaselineKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a single-shot method M0..M8 end to end.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        llm: LlmArgs,
        #[arg(long)]
        method: MethodId,
    },
    /// Run the multi-agent debate end to end.
    Debate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        llm: LlmArgs,
        #[arg(long)]
        rounds: Option<usize>,
        /// Model per role, e.g. analyzer=gemini-2.5-flash-lite,judge=deepseek-v3.1
        #[arg(long)]
        roles: Option<String>,
    },
    /// Score a predictions CSV against a records CSV.
    Evaluate {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "predictions")]
        method: String,
        /// Also write the machine-readable report here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Full pipeline from a config file.
    Run {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        llm: LlmArgs,
    },
}

fn load_config(data: &DataArgs) -> Result<RunConfig> {
    let mut cfg = match &data.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &data.old {
        cfg.old_csv = Some(p.clone());
    }
    if let Some(p) = &data.new {
        cfg.new_csv = Some(p.clone());
    }
    if let Some(d) = &data.dataset {
        cfg.dataset = d.clone();
    }
    for o in &data.overrides {
        cfg.set_pair(o)?;
    }
    Ok(cfg)
}

fn apply_llm(cfg: &mut RunConfig, llm: &LlmArgs) {
    if llm.stub || llm.stub_script.is_some() {
        cfg.stub = true;
    }
    if let Some(p) = &llm.stub_script {
        cfg.stub_script = Some(p.clone());
    }
    if let Some(d) = &llm.out_dir {
        cfg.out_dir = d.clone();
    }
}

fn read_source(p: &Path) -> Result<String> {
    let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn full_run(cfg: RunConfig) -> Result<()> {
    let out = pipeline::run(&cfg, None).map_err(|e| anyhow!("{e}"))?;
    print!("{}", out.report.to_text());
    eprintln!("artifacts written to {}", out.out_dir.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Match { data, out } => {
            let cfg = load_config(&data)?;
            let (old, new) = load_pair(&cfg).context("stage `load`")?;
            let matches = match_files(&old, &new, &cfg.match_params);
            let (records, _) = partition(&old, &new, &matches);
            pipeline::write_matches_to(sink(&out)?, &matches, &records).context("stage `match`")?;
        }
        Command::Partition { data, out } => {
            let cfg = load_config(&data)?;
            let (old, new) = load_pair(&cfg).context("stage `load`")?;
            let matches = match_files(&old, &new, &cfg.match_params);
            let (records, stats) = partition(&old, &new, &matches);
            println!("{}", PartitionStats::table_header());
            println!("{}", stats.table_row(&cfg.dataset));
            if let Some(p) = out {
                pipeline::write_records(&p, &records).context("stage `partition`")?;
            }
        }
        Command::Diff { old_file, new_file, context, list } => {
            let (a, b) = (read_source(&old_file)?, read_source(&new_file)?);
            let cs = diff_paths(&old_file.display().to_string(), &new_file.display().to_string(), &a, &b, context);
            if list {
                println!("{}", render_difference_list(&cs));
            } else {
                print!("{}", cs.unified);
            }
        }
        Command::Context { old_file, new_file, depth, max_lines } => {
            let (a, b) = (read_source(&old_file)?, read_source(&new_file)?);
            let cs = diff_paths("old", "new", &a, &b, DEFAULT_CONTEXT_LINES);
            let ctx = extract_context(&cs, &b, depth, max_lines);
            println!("{}", ctx.snippet);
            eprintln!(
                "methods: [{}]  depth used: {}  truncated: {}",
                ctx.included_methods.join(", "),
                ctx.depth_used,
                ctx.truncated
            );
        }
        Command::Prompt { data, method, record } => {
            let cfg = load_config(&data)?;
            let (old, new) = load_pair(&cfg).context("stage `load`")?;
            let matches = match_files(&old, &new, &cfg.match_params);
            let (records, _) = partition(&old, &new, &matches);
            let rec = records
                .iter()
                .find(|r| r.id() == record)
                .ok_or_else(|| anyhow!("no record `{record}` in the newer version"))?;
            let cs = record_diff(rec, cfg.diff_context);
            let ctx = extract_context(&cs, &rec.new_file.source, cfg.debate.depth, cfg.debate.max_lines);
            let defective: Vec<_> = old.files().iter().filter(|f| f.label.is_defective()).collect();
            let exclude = rec.old_file.as_ref().map(|f| f.path.as_str());
            let ex = sample_exemplars(&defective, exclude, cfg.exemplars, record_seed(cfg.seed, rec.id()));
            let bundle = build_method_prompt(method, rec, &cs, Some(&ctx), Some(&ex)).context("stage `prompt`")?;
            println!("=== system ===\n{}\n=== user ===\n{}", bundle.system.trim_end(), bundle.user);
        }
        Command::Baseline { data, kind, out } => {
            let cfg = load_config(&data)?;
            let (old, new) = load_pair(&cfg).context("stage `load`")?;
            let matches = match_files(&old, &new, &cfg.match_params);
            let (records, _) = partition(&old, &new, &matches);
            let preds = pipeline::baseline_predictions(&records, kind);
            pipeline::write_predictions_to(sink(&out)?, &preds).context("stage `baseline`")?;
        }
        Command::Predict { data, llm, method } => {
            let mut cfg = load_config(&data)?;
            apply_llm(&mut cfg, &llm);
            cfg.method = Some(method);
            full_run(cfg)?;
        }
        Command::Debate { data, llm, rounds, roles } => {
            let mut cfg = load_config(&data)?;
            apply_llm(&mut cfg, &llm);
            cfg.debate_enabled = true;
            if let Some(r) = rounds {
                cfg.debate.rounds = r;
            }
            if let Some(r) = roles {
                cfg.debate.set_roles(&r)?;
            }
            full_run(cfg)?;
        }
        Command::Evaluate { preds, records, method, csv } => {
            let recs = pipeline::read_records(&records).context("reading records")?;
            let preds = pipeline::read_predictions(&preds).context("reading predictions")?;
            let report = evaluate(&recs, &preds, &method).context("stage `evaluate`")?;
            print!("{}", report.to_text());
            if let Some(p) = csv {
                std::fs::write(&p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Run { data, llm } => {
            if data.config.is_none() && data.overrides.is_empty() {
                bail!("`run` needs --config or --set to choose a method");
            }
            let mut cfg = load_config(&data)?;
            apply_llm(&mut cfg, &llm);
            full_run(cfg)?;
        }
    }
    Ok(())
}
