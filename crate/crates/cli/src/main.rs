use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use firescope::commands::{self, render};
use firescope::config::RunConfig;
use firescope::domain::{aggregate_category, AssessmentLabel, ImageRef, RawDamageCategory, ViewMode};
use firescope::ingestion::{draw_sample, load_manifest, write_manifest, DatasetManifest, SamplePlan};
use firescope::runlog::{PipelineKind, RunLog};
use firescope::similarity::{default_pairs, EmbeddingStore, DEFAULT_MERGE_THRESHOLD};
use firescope::simulate::{synthetic_dataset, SyntheticSpec};
use firescope::stats::McNemarMethod;

#[derive(Parser)]
#[command(name = "firescope", version, about = "Wildfire damage assessment from ground-level household images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Directory for output files (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a manifest and print category counts.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Draw a reproducible sample from a manifest.
    Sample {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Uniform sample size.
        #[arg(long, conflicts_with = "quota")]
        total: Option<usize>,
        /// Per-category quota, e.g. `--quota no_damage=155` (repeatable).
        #[arg(long, value_parser = parse_quota)]
        quota: Vec<(RawDamageCategory, usize)>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Run a pipeline over a manifest and write a run log.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pipeline: PipelineKind,
        #[arg(long, default_value = "single")]
        mode: ViewMode,
        #[command(flatten)]
        out: OutDir,
    },
    /// Score a run log against the manifest.
    Evaluate {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Paired per-category comparison of two run logs.
    Mcnemar {
        #[arg(long)]
        log1: PathBuf,
        #[arg(long)]
        log2: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Exact binomial p-values instead of the chi-square approximation.
        #[arg(long)]
        exact: bool,
        #[command(flatten)]
        out: OutDir,
    },
    /// Mean cosine similarity between category image sets.
    Similarity {
        /// JSON-lines store of `{"uri", "vector"}`.
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Category pair `a:b` (repeatable); defaults to the standard five.
        #[arg(long, value_parser = parse_pair)]
        pair: Vec<(RawDamageCategory, RawDamageCategory)>,
        #[arg(long, default_value_t = DEFAULT_MERGE_THRESHOLD)]
        threshold: f64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Project the cost of a run from per-sample token averages.
    CostEstimate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pipeline: PipelineKind,
        #[arg(long, default_value = "single")]
        mode: ViewMode,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Re-derive a saved report from its logs and list differences.
    Verify {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        log: PathBuf,
        /// Second log, for McNemar reports.
        #[arg(long)]
        log2: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Write a synthetic manifest, images and mock scene.
    Synth {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
}

fn parse_quota(s: &str) -> Result<(RawDamageCategory, usize), String> {
    let (c, n) = s.split_once('=').ok_or("expected category=count")?;
    Ok((c.parse().map_err(|e| format!("{e}"))?, n.trim().parse().map_err(|e| format!("{e}"))?))
}

fn parse_pair(s: &str) -> Result<(RawDamageCategory, RawDamageCategory), String> {
    let (a, b) = s.split_once(':').ok_or("expected a:b")?;
    Ok((a.parse().map_err(|e| format!("{e}"))?, b.parse().map_err(|e| format!("{e}"))?))
}

fn out_dir(o: &OutDir) -> Result<&Path> {
    fs::create_dir_all(&o.out).with_context(|| format!("creating {}", o.out.display()))?;
    Ok(&o.out)
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: PathBuf, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn manifest(path: &Path) -> Result<DatasetManifest> {
    load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))
}

/// Writes `m` into `dir`, rewriting relative image paths so they still
/// resolve from the new location.
fn save_manifest(m: &DatasetManifest, dir: &Path, name: &str) -> Result<PathBuf> {
    let mut copy = m.clone();
    let same_dir = m.base_dir.as_deref().map(fs::canonicalize).transpose()?.as_deref() == Some(&fs::canonicalize(dir)?);
    if !same_dir {
        for r in &mut copy.records {
            for img in &mut r.images {
                let resolved = m.resolve(&img.uri);
                if resolved != img.uri {
                    let abs = fs::canonicalize(&resolved).unwrap_or_else(|_| PathBuf::from(&resolved));
                    *img = ImageRef { uri: abs.display().to_string(), view: img.view };
                }
            }
        }
    }
    let path = dir.join(name);
    write_manifest(&path, &copy).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn count_table(m: &DatasetManifest) -> String {
    let counts = m.counts_by_category();
    let mut out = String::new();
    for c in RawDamageCategory::ALL {
        out.push_str(&format!("{:<12}{:>8}\n", c.as_str(), counts.get(&c).copied().unwrap_or(0)));
    }
    let mut agg: BTreeMap<AssessmentLabel, usize> = BTreeMap::new();
    for (c, n) in counts {
        *agg.entry(aggregate_category(c)).or_default() += n;
    }
    out.push_str("aggregated:\n");
    for l in AssessmentLabel::ALL {
        out.push_str(&format!("{:<12}{:>8}\n", l.as_str(), agg.get(&l).copied().unwrap_or(0)));
    }
    out
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Ingest { manifest: path, out } => {
            let m = manifest(&path)?;
            print!("{}", count_table(&m));
            for miss in &m.missing_images {
                println!("missing image: {} {}", miss.household_id, miss.uri);
            }
            let dest = save_manifest(&m, out_dir(&out)?, "manifest.jsonl")?;
            println!("{} records -> {}", m.len(), dest.display());
        }
        Command::Sample { manifest: path, seed, total, quota, out } => {
            let m = manifest(&path)?;
            let plan = match total {
                Some(t) => SamplePlan::uniform(seed, t),
                None if !quota.is_empty() => SamplePlan::stratified(seed, quota.into_iter().collect()),
                None => bail!("give --total or at least one --quota"),
            };
            let s = draw_sample(&m, &plan)?;
            print!("{}", count_table(&s));
            let dest = save_manifest(&s, out_dir(&out)?, "sample.jsonl")?;
            println!("{} records -> {}", s.len(), dest.display());
        }
        Command::Run { config, manifest: path, pipeline, mode, out } => {
            let cfg = RunConfig::load(&config).with_context(|| format!("loading config {}", config.display()))?;
            let m = manifest(&path)?;
            let provider = cfg.build_provider()?;
            let dir = out_dir(&out)?;
            let log_path = dir.join(format!("runlog_{pipeline}_{mode}.jsonl"));
            let summary = commands::cmd_run(&m, &cfg, provider.as_ref(), pipeline, mode, &log_path, &mut std::io::stderr())?;
            write_json(dir.join(format!("run_summary_{pipeline}_{mode}.json")), &summary)?;
            println!(
                "{} records ({} ok, {} errors), {} input / {} output tokens, cost {} -> {}",
                summary.records,
                summary.ok,
                summary.errors,
                summary.usage.input_tokens,
                summary.usage.output_tokens,
                summary.cost.normalize(),
                log_path.display()
            );
        }
        Command::Evaluate { log, manifest: path, out } => {
            let eval = commands::cmd_evaluate(&RunLog::read(&log)?, &manifest(&path)?)?;
            let dir = out_dir(&out)?;
            let name = match (eval.pipeline, eval.mode) {
                (Some(p), Some(m)) => format!("Pipeline {p} ({m})"),
                _ => "run".into(),
            };
            let text = render::evaluation_text(&name, &eval);
            write_json(dir.join("evaluation.json"), &eval)?;
            write(dir.join("confusion.csv"), &render::confusion_csv(&eval.confusion))?;
            write(dir.join("evaluation.txt"), &text)?;
            print!("{text}");
        }
        Command::Mcnemar { log1, log2, manifest: path, exact, out } => {
            let method = if exact { McNemarMethod::ExactBinomial } else { McNemarMethod::ContinuityCorrected };
            let r = commands::cmd_mcnemar(&RunLog::read(&log1)?, &RunLog::read(&log2)?, &manifest(&path)?, method)?;
            let dir = out_dir(&out)?;
            let text = render::mcnemar_table(&r);
            write_json(dir.join("mcnemar.json"), &r)?;
            write(dir.join("mcnemar.txt"), &text)?;
            print!("{text}");
        }
        Command::Similarity { embeddings, manifest: path, pair, threshold, out } => {
            let store = EmbeddingStore::load(&embeddings)?;
            let pairs = if pair.is_empty() { default_pairs() } else { pair };
            let sim = commands::cmd_similarity(&store, &manifest(&path)?, &pairs, threshold)?;
            let dir = out_dir(&out)?;
            let text = render::similarity_table(&sim);
            write_json(dir.join("similarity.json"), &sim)?;
            write(dir.join("similarity.txt"), &text)?;
            print!("{text}");
        }
        Command::CostEstimate { manifest: path, pipeline, mode, config, out } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let est = commands::cmd_cost_estimate(&manifest(&path)?, pipeline, mode, &cfg)?;
            let dir = out_dir(&out)?;
            let text = format!("{}\n{}", render::token_profile_table(&cfg), render::cost_table(&est));
            write_json(dir.join("cost_estimate.json"), &est)?;
            write(dir.join("cost_estimate.txt"), &text)?;
            print!("{text}");
        }
        Command::Verify { report, log, log2, manifest: path } => {
            let saved: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report)?)
                .with_context(|| format!("parsing {}", report.display()))?;
            let second = log2.as_deref().map(RunLog::read).transpose()?;
            let diffs = commands::cmd_verify(&saved, &RunLog::read(&log)?, second.as_ref(), &manifest(&path)?)?;
            for d in &diffs {
                println!("{}: reported {} derived {}", d.path, d.reported, d.derived);
            }
            println!("diffs: {}", diffs.len());
            return Ok(diffs.is_empty());
        }
        Command::Synth { n, seed, out } => {
            let dir = out_dir(&out)?;
            let m = synthetic_dataset(dir, &SyntheticSpec::new(n, seed))?;
            print!("{}", count_table(&m));
            println!("wrote {}/manifest.jsonl and scene.json", dir.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
