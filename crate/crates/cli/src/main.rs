use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use taxomap::eval::{accuracy, fisher_exact, load_annotations, screen_first_k, ContingencyTable};
use taxomap::matching::Method;
use taxomap::pipeline::{
    cmd_align, cmd_eval, cmd_ingest, cmd_match, cmd_project, cmd_run, cmd_vectors, AlignMethod, EvalMode,
    PipelineConfig, VectorSource,
};
use taxomap::{Error, ErrorKind, Result};

/// Align and match hierarchical product classifications.
#[derive(Debug, Parser)]
#[command(name = "taxomap", version)]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides the config `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (0: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load both taxonomies and print category counts per level.
    Ingest,
    /// Build category vectors: load (keyed by code), average (word vectors) or train (PV-DBOW).
    Vectors { source: Option<String> },
    /// Learn the source-to-target mapping.
    Align { method: Option<String> },
    /// Match source categories to target categories.
    Match { method: Option<String> },
    /// Accuracy, Fisher's exact test or early screening over annotation files.
    Eval {
        /// accuracy | fisher | screen
        mode: String,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Screening window.
        #[arg(long)]
        k: Option<usize>,
        /// Screening accuracy threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// Fisher's test on a 2x2 table given as a,b,c,d.
        #[arg(long, value_delimiter = ',')]
        table: Option<Vec<u64>>,
    },
    /// 2-D PCA coordinates of both category sets for plotting.
    Project,
    /// Full pipeline: vectors, alignment, matching and evaluation.
    Run,
}

fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = absolute(o);
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn eval_without_config(
    mode: EvalMode,
    annotations: Option<&Path>,
    compare: Option<&Path>,
    k: usize,
    threshold: f64,
) -> Result<()> {
    let path = annotations.ok_or_else(|| Error::Config("--annotations or --config is required".into()))?;
    let first = load_annotations(path, "annotations")?;
    match mode {
        EvalMode::Accuracy => println!("{}", accuracy(&first)?),
        EvalMode::Screen => {
            let s = screen_first_k(&first, k, threshold)?;
            println!(
                "screening: accuracy {:.3} over the first {} -> {}",
                s.accuracy,
                s.window,
                if s.dropped { "dropped" } else { "pass" }
            );
        }
        EvalMode::Fisher => {
            let c = compare.ok_or_else(|| Error::Config("--compare is required for fisher".into()))?;
            let second = load_annotations(c, "compare")?;
            let (a, b) = (accuracy(&first)?, accuracy(&second)?);
            println!("{a}\n{b}");
            let f = fisher_exact(&ContingencyTable::from_reports(&a, &b)?);
            println!("fisher exact (two-sided, point-probability rule): p = {}", f.p);
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest => print!("{}", cmd_ingest(&load_config(cli)?)?),
        Command::Vectors { source } => {
            let mut cfg = load_config(cli)?;
            if let Some(s) = source {
                cfg.vectors.source = match s.as_str() {
                    "load" => VectorSource::Category,
                    "average" => VectorSource::Average,
                    "train" => VectorSource::Pvdbow,
                    other => return Err(Error::Config(format!("unknown vector source {other:?}"))),
                };
            }
            let s = cmd_vectors(&cfg)?;
            println!(
                "dim {}; source {} usable, {} uncovered; target {} usable, {} uncovered",
                s.dim,
                s.source_usable,
                s.source_uncovered.len(),
                s.target_usable,
                s.target_uncovered.len()
            );
        }
        Command::Align { method } => {
            let mut cfg = load_config(cli)?;
            if let Some(m) = method {
                cfg.align.method = m.parse::<AlignMethod>()?;
            }
            let m = cmd_align(&cfg)?;
            println!(
                "{}: {} rounds, scores {:?}, orthogonality error {:.2e}",
                m.meta.method,
                m.meta.iterations,
                m.meta.history,
                m.orthogonality_error()
            );
        }
        Command::Match { method } => {
            let mut cfg = load_config(cli)?;
            if let Some(m) = method {
                cfg.matching.method = m.parse::<Method>().map_err(|e| Error::Config(e.to_string()))?;
            }
            let out = cmd_match(&cfg)?;
            println!(
                "{} matches, {} skipped -> {}",
                out.matches.records.len(),
                out.matches.skipped.len(),
                cfg.out_path().display()
            );
        }
        Command::Eval {
            mode,
            annotations,
            compare,
            k,
            threshold,
            table,
        } => {
            let mode: EvalMode = mode.parse()?;
            if let Some(t) = table {
                if t.len() != 4 {
                    return Err(Error::Config(format!("--table needs 4 counts, got {}", t.len())));
                }
                let f = fisher_exact(&ContingencyTable::new([[t[0], t[1]], [t[2], t[3]]])?);
                println!("fisher exact (two-sided, point-probability rule): p = {}", f.p);
                return Ok(());
            }
            if cli.config.is_none() {
                return eval_without_config(
                    mode,
                    annotations.as_deref(),
                    compare.as_deref(),
                    k.unwrap_or(50),
                    threshold.unwrap_or(0.01),
                );
            }
            let mut cfg = load_config(cli)?;
            if let Some(p) = annotations {
                cfg.eval.annotations = Some(absolute(p));
            }
            if let Some(p) = compare {
                cfg.eval.compare = Some(absolute(p));
            }
            if let Some(k) = k {
                cfg.eval.screen_k = *k;
            }
            if let Some(t) = threshold {
                cfg.eval.screen_threshold = *t;
            }
            print!("{}", cmd_eval(&cfg, mode)?.text());
        }
        Command::Project => {
            let cfg = load_config(cli)?;
            let p = cmd_project(&cfg)?;
            println!(
                "{} points, explained variance ratio {:?} -> {}",
                p.points.len(),
                p.explained_ratio,
                cfg.out_path().join("projection.tsv").display()
            );
        }
        Command::Run => {
            let cfg = load_config(cli)?;
            let out = cmd_run(&cfg)?;
            println!(
                "{} matches, {} skipped -> {}",
                out.matches.records.len(),
                out.matches.skipped.len(),
                cfg.out_path().display()
            );
            if let Some(e) = out.eval {
                print!("{}", e.text());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}
