//! Experiment orchestration: configuration files, synthetic-corpus
//! generation, end-to-end runs, and result tables.
//!
//! A run is: load manifest -> resolve features (native extraction, external
//! LLD ingestion, or a feature cache) -> split -> normalize labels ->
//! fit scalers on the training partition only -> train the MLP -> evaluate
//! test-set CCC in the original label space -> write the report.

use crate::data::{
    self, denormalize_labels, load_manifest, mix_corpora, normalize_labels, split_loso, split_sd,
    DataSet, Manifest, Partition, PartitionedData, Scaler, ScalerKind,
};
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::features::{
    aggregate_hsf, extract_llds, hsf_feature_names, ingest_lld_table, read_feature_cache,
    silence_ratio, HsfVector, LldConfig, SilenceConfig,
};
use crate::nn::{
    forward, init_model, train, Activation, Checkpoint, MlpModel, TrainConfig,
    CHECKPOINT_VERSION, DEFAULT_HIDDEN_SIZES,
};
use crate::objectives::{evaluate, EvalTriple};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "sd")]
    Sd,
    #[serde(rename = "loso")]
    Loso,
    #[serde(rename = "mixed-sd")]
    MixedSd,
    #[serde(rename = "mixed-loso")]
    MixedLoso,
}

impl Scenario {
    pub fn is_mixed(&self) -> bool {
        matches!(self, Scenario::MixedSd | Scenario::MixedLoso)
    }

    pub fn is_loso(&self) -> bool {
        matches!(self, Scenario::Loso | Scenario::MixedLoso)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::Sd => "sd",
            Scenario::Loso => "loso",
            Scenario::MixedSd => "mixed-sd",
            Scenario::MixedLoso => "mixed-loso",
        };
        f.write_str(s)
    }
}

/// Where feature vectors come from: native extraction from audio, an
/// external LLD table, or a previously written feature cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureSource {
    Native,
    Ingest(PathBuf),
    Cache(PathBuf),
}

impl Default for FeatureSource {
    fn default() -> Self {
        FeatureSource::Native
    }
}

impl FromStr for FeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "native" {
            Ok(FeatureSource::Native)
        } else if let Some(p) = s.strip_prefix("ingest:") {
            Ok(FeatureSource::Ingest(PathBuf::from(p)))
        } else if let Some(p) = s.strip_prefix("cache:") {
            Ok(FeatureSource::Cache(PathBuf::from(p)))
        } else {
            Err(Error::InvalidArgument(format!(
                "feature source must be `native`, `ingest:PATH`, or `cache:PATH` (got `{s}`)"
            )))
        }
    }
}

impl TryFrom<String> for FeatureSource {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureSource> for String {
    fn from(fs: FeatureSource) -> String {
        match fs {
            FeatureSource::Native => "native".to_string(),
            FeatureSource::Ingest(p) => format!("ingest:{}", p.display()),
            FeatureSource::Cache(p) => format!("cache:{}", p.display()),
        }
    }
}

fn default_dev_fraction() -> f64 {
    0.2
}

fn default_silence_factor() -> f64 {
    0.3
}

/// Fully resolved description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub scenario: Scenario,
    pub manifest: PathBuf,
    /// Second corpus, mixed scenarios only.
    pub manifest_b: Option<PathBuf>,
    #[serde(default)]
    pub feature_source: FeatureSource,
    #[serde(default)]
    pub feature_source_b: Option<FeatureSource>,
    /// SD test-set size (and its counterpart for the second corpus).
    pub test_count: Option<usize>,
    pub test_count_b: Option<usize>,
    /// LOSO holdout sessions.
    pub holdout_session: Option<u32>,
    pub holdout_session_b: Option<u32>,
    #[serde(default = "default_dev_fraction")]
    pub dev_fraction: f64,
    #[serde(default = "default_silence_factor")]
    pub silence_factor: f64,
    #[serde(default)]
    pub train: TrainConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        match self.scenario {
            Scenario::Sd => {
                if self.test_count.is_none() {
                    return Err(Error::InvalidArgument("sd scenario requires test_count".into()));
                }
            }
            Scenario::Loso => {
                if self.holdout_session.is_none() {
                    return Err(Error::InvalidArgument(
                        "loso scenario requires holdout_session".into(),
                    ));
                }
            }
            Scenario::MixedSd => {
                if self.manifest_b.is_none() || self.test_count.is_none() || self.test_count_b.is_none() {
                    return Err(Error::InvalidArgument(
                        "mixed-sd requires manifest_b, test_count, and test_count_b".into(),
                    ));
                }
            }
            Scenario::MixedLoso => {
                if self.manifest_b.is_none()
                    || self.holdout_session.is_none()
                    || self.holdout_session_b.is_none()
                {
                    return Err(Error::InvalidArgument(
                        "mixed-loso requires manifest_b, holdout_session, and holdout_session_b"
                            .into(),
                    ));
                }
            }
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Stable hash of the resolved configuration, for report traceability.
    pub fn fingerprint(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        format!("{digest:x}")[..16].to_string()
    }
}

/// Outcome of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub scenario: Scenario,
    pub eval: EvalTriple,
    pub epochs: usize,
    pub wall_secs: f64,
    pub fingerprint: String,
}

/// Read a mono WAV file (16-bit PCM or 32-bit float) into an AudioBuffer.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Data(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?,
    };
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Resolve one HSF vector per manifest record, in manifest order.
///
/// Native extraction and LLD ingestion both need audio for the silence
/// ratio; the cache path reads precomputed vectors directly.
pub fn resolve_features(
    manifest: &Manifest,
    manifest_dir: &Path,
    source: &FeatureSource,
    silence_cfg: &SilenceConfig,
    lld_cfg: &LldConfig,
) -> Result<(Vec<HsfVector>, Vec<String>)> {
    let audio_for = |record: &data::UtteranceRecord| -> Result<AudioBuffer> {
        let rel = record.audio_path.as_ref().ok_or_else(|| {
            Error::Data(format!("utterance `{}` has no audio path", record.utterance_id))
        })?;
        let path = if rel.is_absolute() { rel.clone() } else { manifest_dir.join(rel) };
        read_wav(&path)
    };

    match source {
        FeatureSource::Native => {
            let names = hsf_feature_names(&lld_cfg.descriptor_names());
            let mut vectors = Vec::with_capacity(manifest.len());
            for record in manifest.records() {
                let audio = audio_for(record)?;
                let llds = extract_llds(&audio, lld_cfg, &record.utterance_id)?;
                let silence = silence_ratio(&audio, silence_cfg)?;
                vectors.push(aggregate_hsf(&llds, silence)?);
            }
            Ok((vectors, names))
        }
        FeatureSource::Ingest(path) => {
            let matrices = ingest_lld_table(path, None)?;
            let by_id: HashMap<&str, &crate::features::LldMatrix> = matrices
                .iter()
                .map(|m| (m.utterance_id.as_str(), m))
                .collect();
            let names = matrices
                .first()
                .map(|m| hsf_feature_names(&m.descriptor_names))
                .ok_or_else(|| Error::Data(format!("{}: no LLD rows", path.display())))?;
            let mut vectors = Vec::with_capacity(manifest.len());
            for record in manifest.records() {
                let llds = by_id.get(record.utterance_id.as_str()).ok_or_else(|| {
                    Error::Data(format!(
                        "utterance `{}` missing from LLD table {}",
                        record.utterance_id,
                        path.display()
                    ))
                })?;
                let audio = audio_for(record)?;
                let silence = silence_ratio(&audio, silence_cfg)?;
                vectors.push(aggregate_hsf(llds, silence)?);
            }
            Ok((vectors, names))
        }
        FeatureSource::Cache(path) => {
            let (cached, names) = read_feature_cache(path)?;
            let by_id: HashMap<&str, &HsfVector> =
                cached.iter().map(|v| (v.utterance_id.as_str(), v)).collect();
            let mut vectors = Vec::with_capacity(manifest.len());
            for record in manifest.records() {
                let v = by_id.get(record.utterance_id.as_str()).ok_or_else(|| {
                    Error::Data(format!(
                        "utterance `{}` missing from feature cache {}",
                        record.utterance_id,
                        path.display()
                    ))
                })?;
                vectors.push((*v).clone());
            }
            Ok((vectors, names))
        }
    }
}

/// Assemble one split's aligned ids, feature rows, and raw labels.
fn select_dataset(
    ids: &[String],
    rows_by_id: &HashMap<&str, (usize, &HsfVector, [f64; 3])>,
    dim: usize,
    id_prefix: &str,
) -> Result<DataSet> {
    let mut features = Array2::zeros((ids.len(), dim));
    let mut labels = Array2::zeros((ids.len(), 3));
    let mut out_ids = Vec::with_capacity(ids.len());
    for (row, id) in ids.iter().enumerate() {
        let (_, hsf, raw) = rows_by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("partition id `{id}` not in manifest")))?;
        for (col, &v) in hsf.values.iter().enumerate() {
            features[[row, col]] = v;
        }
        for (col, &v) in raw.iter().enumerate() {
            labels[[row, col]] = v;
        }
        out_ids.push(format!("{id_prefix}{id}"));
    }
    Ok(DataSet { ids: out_ids, features, labels })
}

/// Split one corpus and pair each partition with its features and raw
/// labels. `id_prefix` keeps ids disjoint when corpora are later mixed.
pub fn partition_corpus(
    manifest: &Manifest,
    vectors: &[HsfVector],
    partition: &Partition,
    id_prefix: &str,
) -> Result<PartitionedData> {
    if vectors.len() != manifest.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature vectors for {} manifest records",
            vectors.len(),
            manifest.len()
        )));
    }
    let dim = vectors.first().map(|v| v.values.len()).unwrap_or(0);
    let rows_by_id: HashMap<&str, (usize, &HsfVector, [f64; 3])> = manifest
        .records()
        .iter()
        .zip(vectors.iter())
        .enumerate()
        .map(|(i, (r, v))| (r.utterance_id.as_str(), (i, v, r.labels_raw)))
        .collect();
    Ok(PartitionedData {
        train: select_dataset(&partition.train, &rows_by_id, dim, id_prefix)?,
        dev: select_dataset(&partition.dev, &rows_by_id, dim, id_prefix)?,
        test: select_dataset(&partition.test, &rows_by_id, dim, id_prefix)?,
    })
}

fn raw_to_training_space(raw: &Array2<f64>, label_scaler: &Scaler) -> Result<Array2<f64>> {
    let mut norm = Array2::zeros(raw.dim());
    for (i, row) in raw.axis_iter(Axis(0)).enumerate() {
        let n = normalize_labels(&[row[0], row[1], row[2]])?;
        for j in 0..3 {
            norm[[i, j]] = n[j];
        }
    }
    label_scaler.apply(&norm)
}

fn normalized_labels_matrix(raw: &Array2<f64>) -> Result<Array2<f64>> {
    let mut norm = Array2::zeros(raw.dim());
    for (i, row) in raw.axis_iter(Axis(0)).enumerate() {
        let n = normalize_labels(&[row[0], row[1], row[2]])?;
        for j in 0..3 {
            norm[[i, j]] = n[j];
        }
    }
    Ok(norm)
}

/// Trained artifacts of a run, before anything is written to disk.
pub struct RunOutcome {
    pub report: Report,
    pub checkpoint: Checkpoint,
    pub history: crate::nn::TrainHistory,
}

fn corpus_prefix(manifest: &Manifest, mixed: bool) -> String {
    if !mixed {
        return String::new();
    }
    manifest
        .records()
        .first()
        .map(|r| format!("{}:", r.corpus))
        .unwrap_or_default()
}

fn prepare_one_corpus(
    cfg: &ExperimentConfig,
    manifest_path: &Path,
    source: &FeatureSource,
    test_count: Option<usize>,
    holdout_session: Option<u32>,
) -> Result<PartitionedData> {
    let manifest = load_manifest(manifest_path).map_err(|e| e.in_stage("load_manifest"))?;
    let manifest_dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let silence_cfg = SilenceConfig { factor: cfg.silence_factor, ..SilenceConfig::default() };
    let (vectors, _names) =
        resolve_features(&manifest, manifest_dir, source, &silence_cfg, &LldConfig::default())
            .map_err(|e| e.in_stage("features"))?;
    let partition = if cfg.scenario.is_loso() {
        let session = holdout_session
            .ok_or_else(|| Error::InvalidArgument("missing holdout_session".into()))?;
        split_loso(&manifest, session, cfg.dev_fraction, cfg.seed)
    } else {
        let count = test_count.ok_or_else(|| Error::InvalidArgument("missing test_count".into()))?;
        split_sd(&manifest, count, cfg.dev_fraction, cfg.seed)
    }
    .map_err(|e| e.in_stage("split"))?;
    let prefix = corpus_prefix(&manifest, cfg.scenario.is_mixed());
    partition_corpus(&manifest, &vectors, &partition, &prefix).map_err(|e| e.in_stage("split"))
}

/// Run the full pipeline in memory. Nothing touches the output directory.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let t0 = Instant::now();

    let mut dataset = prepare_one_corpus(
        cfg,
        &cfg.manifest,
        &cfg.feature_source,
        cfg.test_count,
        cfg.holdout_session,
    )?;
    if cfg.scenario.is_mixed() {
        let manifest_b = cfg.manifest_b.as_ref().unwrap();
        let source_b = cfg.feature_source_b.clone().unwrap_or_else(|| cfg.feature_source.clone());
        let other = prepare_one_corpus(
            cfg,
            manifest_b,
            &source_b,
            cfg.test_count_b,
            cfg.holdout_session_b,
        )?;
        dataset = mix_corpora(&dataset, &other).map_err(|e| e.in_stage("mix"))?;
    }

    // Scalers are fitted on the training partition only.
    let feature_scaler = Scaler::fit(ScalerKind::Zscore, &dataset.train.features)
        .map_err(|e| e.in_stage("scale"))?;
    let train_norm = normalized_labels_matrix(&dataset.train.labels)?;
    let label_scaler =
        Scaler::fit(ScalerKind::Minmax, &train_norm).map_err(|e| e.in_stage("scale"))?;

    let train_x = feature_scaler.apply(&dataset.train.features)?;
    let dev_x = feature_scaler.apply(&dataset.dev.features)?;
    let test_x = feature_scaler.apply(&dataset.test.features)?;
    let train_y = raw_to_training_space(&dataset.train.labels, &label_scaler)?;
    let dev_y = raw_to_training_space(&dataset.dev.labels, &label_scaler)?;

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    let model = init_model(
        train_x.ncols(),
        &DEFAULT_HIDDEN_SIZES,
        Activation::Relu,
        cfg.seed,
    )
    .map_err(|e| e.in_stage("train"))?;
    let (model, history) = train(model, &train_x, &train_y, &dev_x, &dev_y, &train_cfg)
        .map_err(|e| e.in_stage("train"))?;

    let eval = evaluate_in_label_space(&model, &test_x, &dataset.test.labels, &label_scaler)
        .map_err(|e| e.in_stage("evaluate"))?;

    let feature_names = match &cfg.feature_source {
        FeatureSource::Native => hsf_feature_names(&LldConfig::default().descriptor_names()),
        _ => (0..train_x.ncols()).map(|i| format!("f{i}")).collect(),
    };
    let report = Report {
        name: cfg.name.clone(),
        scenario: cfg.scenario,
        eval,
        epochs: history.epochs_run(),
        wall_secs: t0.elapsed().as_secs_f64(),
        fingerprint: cfg.fingerprint(),
    };
    Ok(RunOutcome {
        report,
        checkpoint: Checkpoint {
            version: CHECKPOINT_VERSION,
            model,
            feature_scaler,
            label_scaler,
            feature_names,
        },
        history,
    })
}

/// Predict on scaled test features and score CCC against raw [1, 5] gold
/// labels, mapping predictions back through both label transforms first.
pub fn evaluate_in_label_space(
    model: &MlpModel,
    test_x: &Array2<f64>,
    test_labels_raw: &Array2<f64>,
    label_scaler: &Scaler,
) -> Result<EvalTriple> {
    let preds = forward(model, test_x)?;
    let n = test_x.nrows();
    let mut pred_matrix = Array2::zeros((n, 3));
    for j in 0..3 {
        pred_matrix.column_mut(j).assign(&preds[j]);
    }
    let in_norm_space = label_scaler.invert(&pred_matrix)?;
    let mut in_raw_space = Array2::zeros((n, 3));
    for (i, row) in in_norm_space.axis_iter(Axis(0)).enumerate() {
        let raw = denormalize_labels(&[row[0], row[1], row[2]]);
        for j in 0..3 {
            in_raw_space[[i, j]] = raw[j];
        }
    }
    let col = |m: &Array2<f64>, j: usize| m.column(j).to_vec();
    evaluate(
        (
            &col(&in_raw_space, 0),
            &col(&in_raw_space, 1),
            &col(&in_raw_space, 2),
        ),
        (
            &col(test_labels_raw, 0),
            &col(test_labels_raw, 1),
            &col(test_labels_raw, 2),
        ),
    )
}

/// Run an experiment and write its artifacts (checkpoint, report files)
/// into the configured output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let outcome = run_pipeline(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let write_all = || -> Result<()> {
        outcome.checkpoint.save(&cfg.out_dir.join("model.ckpt"))?;
        let json = serde_json::to_string_pretty(&outcome.report)
            .map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(cfg.out_dir.join("report.json"), json)?;
        emit_report(
            std::slice::from_ref(&outcome.report),
            &cfg.out_dir.join("report.txt"),
        )?;
        Ok(())
    };
    if let Err(e) = write_all() {
        // Drop partial outputs so a failed run leaves nothing behind.
        for f in ["model.ckpt", "report.json", "report.txt", "report.csv"] {
            let _ = std::fs::remove_file(cfg.out_dir.join(f));
        }
        return Err(e.in_stage("write_outputs"));
    }
    Ok(outcome.report)
}

/// Parameters of one synthetic utterance, kept for label construction.
struct SynthParams {
    f0: f64,
    amplitude: f64,
    silence_frac: f64,
}

/// Generate a desk-scale synthetic corpus: harmonic tone bursts with
/// controlled F0, amplitude, and trailing silence, plus labels that are
/// recoverable from those parameters by construction. Returns the manifest
/// (also written to `out_dir/manifest.csv`, audio under `out_dir/wav/`).
pub fn gen_synthetic_corpus(
    n: usize,
    sessions: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    if n == 0 || sessions == 0 || n < sessions {
        return Err(Error::InvalidArgument(format!(
            "need n >= sessions >= 1 (got n {n}, sessions {sessions})"
        )));
    }
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir)?;
    let sample_rate = 16_000u32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).expect("valid normal");

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let params = SynthParams {
            f0: rng.gen_range(80.0..=300.0),
            amplitude: rng.gen_range(0.1..=1.0),
            silence_frac: rng.gen_range(0.0..=0.6),
        };
        let duration = rng.gen_range(1.0..=3.0);
        let total = (duration * sample_rate as f64) as usize;
        let voiced = ((1.0 - params.silence_frac) * total as f64).round() as usize;

        // Harmonic tone burst followed by silence; three harmonics with
        // halving amplitudes, peak-normalized to the target amplitude.
        let mut samples = vec![0.0f64; total];
        let mut peak: f64 = 0.0;
        for (t, s) in samples.iter_mut().enumerate().take(voiced) {
            let phase = 2.0 * std::f64::consts::PI * params.f0 * t as f64 / sample_rate as f64;
            *s = phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin();
            peak = peak.max(s.abs());
        }
        if peak > 0.0 {
            let scale = params.amplitude / peak;
            for s in samples.iter_mut().take(voiced) {
                *s *= scale;
            }
        }

        let clip = |v: f64| v.clamp(0.0, 1.0);
        let f0_pos = (params.f0 - 80.0) / 220.0;
        let arousal = 1.0
            + 4.0 * clip(0.8 * params.amplitude + 0.2 * (1.0 - params.silence_frac)
                + noise.sample(&mut rng));
        let valence = 1.0
            + 4.0 * clip(0.6 * f0_pos + 0.4 * (1.0 - params.silence_frac) + noise.sample(&mut rng));
        let dominance =
            1.0 + 4.0 * clip(0.7 * params.amplitude + 0.3 * f0_pos + noise.sample(&mut rng));

        let session = (i % sessions) as u32 + 1;
        let id = format!("synth_{i:05}");
        let rel_path = PathBuf::from("wav").join(format!("{id}.wav"));
        write_wav_i16(&out_dir.join(&rel_path), &samples, sample_rate)?;
        records.push(data::UtteranceRecord {
            utterance_id: id,
            corpus: data::Corpus::Synth,
            session,
            speaker: format!("synthspk{session}"),
            audio_path: Some(rel_path),
            labels_raw: [valence, arousal, dominance],
        });
    }
    let manifest = Manifest::new(records)?;
    data::write_manifest(&manifest, &out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

fn write_wav_i16(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Write reports as an aligned text table at `path` and a machine-readable
/// CSV next to it (same stem, `.csv` extension). The mean column is
/// recomputed at emission and must agree with the stored mean.
pub fn emit_report(reports: &[Report], path: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to emit".into()));
    }
    let mut rows = Vec::with_capacity(reports.len());
    for r in reports {
        let recomputed = (r.eval.ccc_v + r.eval.ccc_a + r.eval.ccc_d) / 3.0;
        if (recomputed - r.eval.mean).abs() > 5e-4 {
            return Err(Error::Data(format!(
                "report `{}`: mean {:.6} inconsistent with components (recomputed {:.6})",
                r.name, r.eval.mean, recomputed
            )));
        }
        rows.push((
            format!("{}/{}", r.name, r.scenario),
            r.eval.ccc_v,
            r.eval.ccc_a,
            r.eval.ccc_d,
            recomputed,
        ));
    }
    let label_width = rows
        .iter()
        .map(|r| r.0.len())
        .max()
        .unwrap()
        .max("method/scenario".len());

    let mut table = String::new();
    table.push_str(&format!(
        "{:<label_width$}  {:>6}  {:>6}  {:>6}  {:>6}\n",
        "method/scenario", "V", "A", "D", "Mean"
    ));
    for (name, v, a, d, mean) in &rows {
        table.push_str(&format!(
            "{name:<label_width$}  {v:>6.3}  {a:>6.3}  {d:>6.3}  {mean:>6.3}\n"
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(table.as_bytes())?;

    let csv_path = path.with_extension("csv");
    let mut c = std::fs::File::create(&csv_path)?;
    writeln!(c, "method_scenario,ccc_v,ccc_a,ccc_d,mean")?;
    for (name, v, a, d, mean) in &rows {
        writeln!(c, "{name},{v:.3},{a:.3},{d:.3},{mean:.3}")?;
    }
    Ok(())
}
