//! Command-line entry points. Every run prints its fully resolved
//! configuration and seed before doing work, so a log line is enough to
//! reproduce it. Exit codes: 0 success, 1 usage/format/parameter errors,
//! 2 internal invariant violations.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::dataset::{to_train_images, Dataset, ImageRecord, Role};
use super::{checkpoint, init_model, model_parameters, synth, Config};
use crate::concepts::{cluster, ConceptVocabulary};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, load_predictions, predictions_from_model, save_predictions,
    selection_similarity_matrix,
};
use crate::harness::config::PromptMode;
use crate::prompts::selection_entropy;
use crate::train::{format_metrics, train_loop};

#[derive(Parser)]
#[command(name = "inpcc", version, about = "Interaction detector workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic vocabulary and dataset from a scene spec.
    Synth {
        /// Scene spec file (TOML).
        #[arg(long)]
        spec: PathBuf,
        /// Directory for vocab.jsonl and dataset.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster description embeddings and write the category→cluster map.
    Cluster {
        /// Vocabulary file (JSON lines).
        #[arg(long)]
        vocab: PathBuf,
        /// Number of clusters.
        #[arg(long)]
        j: usize,
        #[arg(long)]
        seed: u64,
        /// Output map file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the configured dataset; writes checkpoint.bin and
    /// metrics.tsv into the configured out_dir.
    Train {
        /// Config file (TOML, dotted keys).
        #[arg(long)]
        config: PathBuf,
        /// Override a config value, e.g. --set train.lr=0.01 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint, or an external prediction file, against the
    /// test split; writes report.txt into the configured out_dir.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Model checkpoint to score (omit when using --predictions).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate this prediction file instead of running the model.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Print per-category selection-entropy and selection-similarity tables
    /// for a trained checkpoint.
    Diag {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset to diagnose over (defaults to the configured dataset).
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

/// Parses argv and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{e}");
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth { spec, out } => run_synth(&spec, &out),
        Command::Cluster {
            vocab,
            j,
            seed,
            out,
        } => run_cluster(&vocab, j, seed, &out),
        Command::Train { config, set } => run_train(&config, &set),
        Command::Eval {
            config,
            checkpoint,
            predictions,
            set,
        } => run_eval(&config, checkpoint.as_deref(), predictions.as_deref(), &set),
        Command::Diag {
            config,
            checkpoint,
            dataset,
            set,
        } => run_diag(&config, &checkpoint, dataset.as_deref(), &set),
    }
}

fn run_synth(spec_path: &Path, out: &Path) -> Result<()> {
    let spec = synth::SyntheticSceneSpec::load(spec_path)?;
    println!(
        "{}seed {}",
        toml::to_string(&spec).expect("spec serializes"),
        spec.seed
    );
    std::fs::create_dir_all(out)?;
    let (vocab, dataset) = synth::generate_synthetic(&spec)?;
    let vocab_path = out.join("vocab.jsonl");
    let dataset_path = out.join("dataset.jsonl");
    vocab.save(&vocab_path)?;
    dataset.save(&dataset_path)?;
    println!(
        "wrote {} ({} categories) and {} ({} images)",
        vocab_path.display(),
        vocab.len(),
        dataset_path.display(),
        dataset.images.len()
    );
    Ok(())
}

fn run_cluster(vocab_path: &Path, j: usize, seed: u64, out: &Path) -> Result<()> {
    println!("seed {seed}");
    let mut vocab = ConceptVocabulary::load(vocab_path)?;
    let model = cluster(&mut vocab, j, seed)?;
    std::fs::write(out, model.map_text())?;
    println!(
        "wrote {} (J={} inertia {:.6})",
        out.display(),
        model.j,
        model.inertia
    );
    Ok(())
}

/// Loads config + vocab and logs the resolved run parameters.
fn load_run(
    config_path: &Path,
    overrides: &[String],
) -> Result<(Config, ConceptVocabulary, u64)> {
    let config = Config::load_with_overrides(config_path, overrides)?;
    let seed = config.resolved_seed()?;
    println!("{}seed {seed}", config.to_toml_string());
    let vocab = ConceptVocabulary::load(&config.paths.vocab)?;
    Ok((config, vocab, seed))
}

fn run_train(config_path: &Path, overrides: &[String]) -> Result<()> {
    let (config, mut vocab, seed) = load_run(config_path, overrides)?;
    let clusters = cluster(&mut vocab, config.concepts.j, seed)?;
    let dataset = Dataset::load(&config.paths.dataset, &vocab)?;
    let images = to_train_images(&dataset, &vocab, Role::Train)?;
    let (detector, bank) = init_model(&config, &vocab, seed)?;

    let rows = train_loop(&config, &images, &vocab, &clusters, &detector, &bank, seed)?;

    std::fs::create_dir_all(&config.paths.out_dir)?;
    let metrics_path = config.paths.out_dir.join("metrics.tsv");
    std::fs::write(&metrics_path, format_metrics(&rows))?;
    let ckpt_path = config.paths.out_dir.join("checkpoint.bin");
    checkpoint::save(&ckpt_path, &model_parameters(&detector, &bank))?;

    if let Some(last) = rows.last() {
        println!("trained {} steps, final loss {:.6}", rows.len(), last.total);
    }
    println!("wrote {} and {}", metrics_path.display(), ckpt_path.display());
    Ok(())
}

fn test_images(dataset: &Dataset) -> Vec<&ImageRecord> {
    dataset
        .images
        .iter()
        .filter(|im| im.role == Role::Test)
        .collect()
}

fn run_eval(
    config_path: &Path,
    ckpt: Option<&Path>,
    predictions: Option<&Path>,
    overrides: &[String],
) -> Result<()> {
    let (config, vocab, seed) = load_run(config_path, overrides)?;
    let dataset = Dataset::load(&config.paths.dataset, &vocab)?;
    let images = test_images(&dataset);
    if images.is_empty() {
        return Err(Error::Parameter(
            "dataset has no test images to evaluate".to_string(),
        ));
    }

    std::fs::create_dir_all(&config.paths.out_dir)?;
    let preds = match (predictions, ckpt) {
        (Some(path), _) => load_predictions(path)?,
        (None, Some(ckpt)) => {
            let (detector, bank) = init_model(&config, &vocab, seed)?;
            checkpoint::load_into(ckpt, &model_parameters(&detector, &bank))?;
            let use_inp = config.prompt.mode == PromptMode::Inp;
            let (preds, _) = predictions_from_model(
                &detector,
                &bank,
                &vocab,
                &images,
                config.eval.gamma,
                use_inp,
            )?;
            // Keep the raw predictions next to the report; they feed back
            // in through --predictions.
            let preds_path = config.paths.out_dir.join("predictions.tsv");
            save_predictions(&preds_path, &preds)?;
            println!("wrote {}", preds_path.display());
            preds
        }
        (None, None) => {
            return Err(Error::Parameter(
                "eval needs --checkpoint or --predictions".to_string(),
            ))
        }
    };

    let report = evaluate(&preds, &images, &vocab, config.eval.iou_threshold)?;
    let text = report.render();
    let report_path = config.paths.out_dir.join("report.txt");
    std::fs::write(&report_path, &text)?;
    print!("{text}");
    println!("wrote {}", report_path.display());
    Ok(())
}

fn run_diag(
    config_path: &Path,
    ckpt: &Path,
    dataset_override: Option<&Path>,
    overrides: &[String],
) -> Result<()> {
    let (config, vocab, seed) = load_run(config_path, overrides)?;
    if config.prompt.mode != PromptMode::Inp {
        return Err(Error::Parameter(
            "diag requires interaction-aware prompts (prompt.mode = \"inp\")".to_string(),
        ));
    }
    let dataset_path = dataset_override.unwrap_or(&config.paths.dataset);
    let dataset = Dataset::load(dataset_path, &vocab)?;
    let images: Vec<&ImageRecord> = dataset.images.iter().collect();
    if images.is_empty() {
        return Err(Error::Parameter("dataset has no images".to_string()));
    }

    let (detector, bank) = init_model(&config, &vocab, seed)?;
    checkpoint::load_into(ckpt, &model_parameters(&detector, &bank))?;
    let (_, histories) = predictions_from_model(
        &detector,
        &bank,
        &vocab,
        &images,
        config.eval.gamma,
        true,
    )?;
    if histories.is_empty() {
        return Err(Error::Parameter(
            "no ground-truth interactions to attribute selections to".to_string(),
        ));
    }

    let mut out = String::new();
    for (id, history) in &histories {
        if history.is_empty() {
            continue;
        }
        writeln!(
            out,
            "entropy {id} {:.6} count {}",
            selection_entropy(history)?,
            history.len()
        )
        .expect("string write");
    }
    let (included, sim, excluded) =
        selection_similarity_matrix(&histories, config.prompt.m)?;
    let header: Vec<String> = included.iter().map(|id| id.to_string()).collect();
    writeln!(out, "similarity ids {}", header.join(" ")).expect("string write");
    let n = included.len();
    let values = sim.to_vec();
    for (row, id) in included.iter().enumerate() {
        let cells: Vec<String> = (0..n)
            .map(|col| format!("{:.6}", values[row * n + col]))
            .collect();
        writeln!(out, "similarity {id} {}", cells.join(" ")).expect("string write");
    }
    if !excluded.is_empty() {
        let ids: Vec<String> = excluded.iter().map(|id| id.to_string()).collect();
        writeln!(out, "excluded {}", ids.join(" ")).expect("string write");
    }
    print!("{out}");
    Ok(())
}
