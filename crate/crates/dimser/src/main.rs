//! Command-line front end for the emotion-recognition pipeline.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use dimser::data::{load_manifest, split_loso, split_sd, Partition, Scaler, ScalerKind};
use dimser::features::{write_feature_cache, LldConfig, SilenceConfig};
use dimser::harness::{
    emit_report, evaluate_in_label_space, gen_synthetic_corpus, partition_corpus, resolve_features,
    run_experiment, ExperimentConfig, FeatureSource,
};
use dimser::nn::{
    init_model, train, Activation, Checkpoint, LossKind, TrainConfig, CHECKPOINT_VERSION,
    DEFAULT_HIDDEN_SIZES,
};
use dimser::objectives::LossWeights;
use ndarray::Axis;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "dimser",
    about = "Dimensional speech emotion recognition: HSF features + deep MLP",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract per-utterance HSF feature vectors into a feature cache
    Extract {
        /// Corpus manifest CSV
        #[arg(long)]
        manifest: PathBuf,
        /// Feature source: `native`, `ingest:PATH`, or `cache:PATH`
        #[arg(long, default_value = "native")]
        source: FeatureSource,
        /// Silence-frame threshold factor applied to the mean frame RMS
        #[arg(long, default_value_t = 0.3)]
        silence_factor: f64,
        /// Output feature cache CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce a train/dev/test partition of a manifest
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// Protocol: `sd` (speaker-dependent) or `loso`
        #[arg(long)]
        mode: String,
        /// SD only: number of test utterances
        #[arg(long)]
        test_count: Option<usize>,
        /// LOSO only: session held out as the test set
        #[arg(long)]
        holdout_session: Option<u32>,
        /// Fraction of the non-test remainder used as the dev set
        #[arg(long, default_value_t = 0.2)]
        dev_fraction: f64,
        #[arg(long)]
        seed: u64,
        /// Output partition JSON
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the MLP on a feature cache and partition
    Train {
        /// Feature cache CSV from `extract`
        #[arg(long)]
        features: PathBuf,
        /// Manifest CSV (labels)
        #[arg(long)]
        manifest: PathBuf,
        /// Partition JSON from `split`
        #[arg(long)]
        split: PathBuf,
        /// Loss: `mse` or `ccc`
        #[arg(long, default_value = "mse")]
        loss: String,
        /// Valence weight of the multitask CCC loss
        #[arg(long, default_value_t = 1.0 / 3.0)]
        alpha: f64,
        /// Arousal weight of the multitask CCC loss
        #[arg(long, default_value_t = 1.0 / 3.0)]
        beta: f64,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 200)]
        batch_size: usize,
        #[arg(long, default_value_t = 180)]
        max_epochs: usize,
        #[arg(long, default_value_t = 10)]
        patience: usize,
        #[arg(long)]
        seed: u64,
        /// Output model checkpoint (JSON)
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model on the test partition
    Evaluate {
        /// Model checkpoint from `train`
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Scenario label used in the report's method/scenario column
        #[arg(long, default_value = "sd")]
        scenario: String,
        /// Output report text file (CSV written alongside)
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus with recoverable labels
    Synth {
        /// Number of utterances
        #[arg(long)]
        n: usize,
        /// Number of round-robin sessions
        #[arg(long, default_value_t = 5)]
        sessions: usize,
        #[arg(long)]
        seed: u64,
        /// Output corpus directory (manifest.csv + wav/)
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full experiment from a TOML configuration file
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_loss(s: &str) -> anyhow::Result<LossKind> {
    match s {
        "mse" => Ok(LossKind::MseMultitask),
        "ccc" => Ok(LossKind::CccMultitask),
        other => bail!("loss must be `mse` or `ccc` (got `{other}`)"),
    }
}

/// Load a feature cache, a manifest, and a partition, and return the three
/// aligned datasets with raw labels.
fn load_partitioned(
    features: &Path,
    manifest: &Path,
    split: &Path,
) -> anyhow::Result<dimser::data::PartitionedData> {
    let manifest = load_manifest(manifest).context("loading manifest")?;
    let (vectors, _names) = resolve_features(
        &manifest,
        Path::new("."),
        &FeatureSource::Cache(features.to_path_buf()),
        &SilenceConfig::default(),
        &LldConfig::default(),
    )
    .context("loading feature cache")?;
    let text = std::fs::read_to_string(split).context("reading partition")?;
    let partition: Partition = serde_json::from_str(&text).context("parsing partition")?;
    Ok(partition_corpus(&manifest, &vectors, &partition, "")?)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Extract { manifest, source, silence_factor, out } => {
            let manifest_dir = manifest.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
            let manifest = load_manifest(&manifest)?;
            let silence_cfg = SilenceConfig { factor: silence_factor, ..SilenceConfig::default() };
            let (vectors, names) = resolve_features(
                &manifest,
                &manifest_dir,
                &source,
                &silence_cfg,
                &LldConfig::default(),
            )?;
            write_feature_cache(&vectors, &names, &out)?;
            println!("wrote {} feature vectors ({} dims) to {}", vectors.len(), names.len(), out.display());
        }
        Command::Split { manifest, mode, test_count, holdout_session, dev_fraction, seed, out } => {
            let manifest = load_manifest(&manifest)?;
            let partition = match mode.as_str() {
                "sd" => {
                    let count = test_count.context("--test-count is required for sd")?;
                    split_sd(&manifest, count, dev_fraction, seed)?
                }
                "loso" => {
                    let session =
                        holdout_session.context("--holdout-session is required for loso")?;
                    split_loso(&manifest, session, dev_fraction, seed)?
                }
                other => bail!("mode must be `sd` or `loso` (got `{other}`)"),
            };
            std::fs::write(&out, serde_json::to_string_pretty(&partition)?)?;
            println!(
                "split: {} train / {} dev / {} test -> {}",
                partition.train.len(),
                partition.dev.len(),
                partition.test.len(),
                out.display()
            );
        }
        Command::Train {
            features,
            manifest,
            split,
            loss,
            alpha,
            beta,
            learning_rate,
            batch_size,
            max_epochs,
            patience,
            seed,
            out,
        } => {
            let data = load_partitioned(&features, &manifest, &split)?;
            let feature_scaler = Scaler::fit(ScalerKind::Zscore, &data.train.features)?;
            let norm = |m: &ndarray::Array2<f64>| -> anyhow::Result<ndarray::Array2<f64>> {
                let mut out = ndarray::Array2::zeros(m.dim());
                for (i, row) in m.axis_iter(Axis(0)).enumerate() {
                    let n = dimser::data::normalize_labels(&[row[0], row[1], row[2]])?;
                    for j in 0..3 {
                        out[[i, j]] = n[j];
                    }
                }
                Ok(out)
            };
            let train_norm = norm(&data.train.labels)?;
            let label_scaler = Scaler::fit(ScalerKind::Minmax, &train_norm)?;
            let cfg = TrainConfig {
                batch_size,
                max_epochs,
                patience,
                learning_rate,
                loss: parse_loss(&loss)?,
                weights: LossWeights::new(alpha, beta)?,
                seed,
            };
            let model = init_model(
                data.train.features.ncols(),
                &DEFAULT_HIDDEN_SIZES,
                Activation::Relu,
                seed,
            )?;
            let (model, history) = train(
                model,
                &feature_scaler.apply(&data.train.features)?,
                &label_scaler.apply(&train_norm)?,
                &feature_scaler.apply(&data.dev.features)?,
                &label_scaler.apply(&norm(&data.dev.labels)?)?,
                &cfg,
            )?;
            let (cached, names) = dimser::features::read_feature_cache(&features)?;
            drop(cached);
            Checkpoint {
                version: CHECKPOINT_VERSION,
                model,
                feature_scaler,
                label_scaler,
                feature_names: names,
            }
            .save(&out)?;
            println!(
                "trained {} epochs (best epoch {}, dev loss {:.6}) -> {}",
                history.epochs_run(),
                history.best_epoch + 1,
                history.best_dev_loss(),
                out.display()
            );
        }
        Command::Evaluate { model, features, manifest, split, scenario, out } => {
            let ckpt = Checkpoint::load(&model)?;
            let data = load_partitioned(&features, &manifest, &split)?;
            let test_x = ckpt.feature_scaler.apply(&data.test.features)?;
            let eval =
                evaluate_in_label_space(&ckpt.model, &test_x, &data.test.labels, &ckpt.label_scaler)?;
            let scenario = match scenario.as_str() {
                "sd" => dimser::harness::Scenario::Sd,
                "loso" => dimser::harness::Scenario::Loso,
                "mixed-sd" => dimser::harness::Scenario::MixedSd,
                "mixed-loso" => dimser::harness::Scenario::MixedLoso,
                other => bail!("unknown scenario `{other}`"),
            };
            let report = dimser::harness::Report {
                name: "mlp".into(),
                scenario,
                eval,
                epochs: 0,
                wall_secs: 0.0,
                fingerprint: String::new(),
            };
            emit_report(std::slice::from_ref(&report), &out)?;
            println!(
                "CCC  V {:.3}  A {:.3}  D {:.3}  mean {:.3} -> {}",
                report.eval.ccc_v,
                report.eval.ccc_a,
                report.eval.ccc_d,
                report.eval.mean,
                out.display()
            );
        }
        Command::Synth { n, sessions, seed, out } => {
            let manifest = gen_synthetic_corpus(n, sessions, seed, &out)?;
            println!(
                "generated {} utterances across {} sessions -> {}",
                manifest.len(),
                sessions,
                out.display()
            );
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_experiment(&cfg)?;
            println!(
                "{}/{}: CCC  V {:.3}  A {:.3}  D {:.3}  mean {:.3} ({} epochs)",
                report.name,
                report.scenario,
                report.eval.ccc_v,
                report.eval.ccc_a,
                report.eval.ccc_d,
                report.eval.mean,
                report.epochs
            );
        }
    }
    Ok(())
}
