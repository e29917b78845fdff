//! Manifests, label normalization, feature/label scaling, and the dataset
//! partitioning protocols: speaker-dependent (SD), leave-one-session-out
//! (LOSO), and mixed-corpus concatenation.

use crate::error::{Error, Result};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Corpus {
    Iemocap,
    Improv,
    Synth,
}

impl FromStr for Corpus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "IEMOCAP" => Ok(Corpus::Iemocap),
            "IMPROV" | "MSP-IMPROV" => Ok(Corpus::Improv),
            "SYNTH" => Ok(Corpus::Synth),
            other => Err(Error::Data(format!("unknown corpus `{other}`"))),
        }
    }
}

impl fmt::Display for Corpus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Corpus::Iemocap => "IEMOCAP",
            Corpus::Improv => "IMPROV",
            Corpus::Synth => "SYNTH",
        };
        f.write_str(s)
    }
}

/// One utterance: identity, provenance, and its raw V/A/D labels in [1, 5].
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub corpus: Corpus,
    pub session: u32,
    pub speaker: String,
    pub audio_path: Option<PathBuf>,
    /// (valence, arousal, dominance), each in [1, 5].
    pub labels_raw: [f64; 3],
}

/// An ordered collection of utterances, canonically sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    records: Vec<UtteranceRecord>,
}

impl Manifest {
    /// Build a manifest, sorting records by utterance id and rejecting
    /// duplicates and out-of-range labels.
    pub fn new(mut records: Vec<UtteranceRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.utterance_id.clone()) {
                return Err(Error::Data(format!(
                    "duplicate utterance id `{}`",
                    r.utterance_id
                )));
            }
            validate_raw_labels(&r.labels_raw)
                .map_err(|e| Error::Data(format!("utterance `{}`: {e}", r.utterance_id)))?;
            if r.session < 1 {
                return Err(Error::Data(format!(
                    "utterance `{}`: session must be >= 1",
                    r.utterance_id
                )));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sessions(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self
            .records
            .iter()
            .map(|r| r.session)
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        s.sort_unstable();
        s
    }
}

/// Disjoint train/dev/test utterance-id lists covering a whole manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl Partition {
    pub fn total(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }
}

fn validate_raw_labels(labels: &[f64; 3]) -> Result<()> {
    for (name, &v) in ["valence", "arousal", "dominance"].iter().zip(labels.iter()) {
        if !(1.0..=5.0).contains(&v) {
            return Err(Error::Data(format!("{name} label {v} outside [1, 5]")));
        }
    }
    Ok(())
}

/// Map raw [1, 5] labels onto [-1, 1]: x' = (x - 3) / 2.
pub fn normalize_labels(raw: &[f64; 3]) -> Result<[f64; 3]> {
    validate_raw_labels(raw)?;
    Ok([(raw[0] - 3.0) / 2.0, (raw[1] - 3.0) / 2.0, (raw[2] - 3.0) / 2.0])
}

/// Inverse of [`normalize_labels`]: x = 2 x' + 3.
pub fn denormalize_labels(normalized: &[f64; 3]) -> [f64; 3] {
    [
        2.0 * normalized[0] + 3.0,
        2.0 * normalized[1] + 3.0,
        2.0 * normalized[2] + 3.0,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalerKind {
    Zscore,
    Minmax,
}

/// Per-dimension affine scaler fitted on training data only.
///
/// Stored as offset/scale so apply is `(x - offset) / scale` for both kinds.
/// Degenerate dimensions (zero spread) get scale 1 so apply/invert stay
/// well defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub kind: ScalerKind,
    offset: Vec<f64>,
    scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(kind: ScalerKind, training: &Array2<f64>) -> Result<Self> {
        if training.nrows() == 0 || training.ncols() == 0 {
            return Err(Error::InvalidArgument("cannot fit scaler on empty matrix".into()));
        }
        let n = training.nrows() as f64;
        let mut offset = Vec::with_capacity(training.ncols());
        let mut scale = Vec::with_capacity(training.ncols());
        for col in training.axis_iter(Axis(1)) {
            match kind {
                ScalerKind::Zscore => {
                    let mean = col.sum() / n;
                    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let std = var.sqrt();
                    offset.push(mean);
                    scale.push(if std < 1e-12 { 1.0 } else { std });
                }
                ScalerKind::Minmax => {
                    let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
                    let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let range = max - min;
                    offset.push(min);
                    scale.push(if range < 1e-12 { 1.0 } else { range });
                }
            }
        }
        Ok(Self { kind, offset, scale })
    }

    pub fn dims(&self) -> usize {
        self.offset.len()
    }

    fn check_dims(&self, matrix: &Array2<f64>) -> Result<()> {
        if matrix.ncols() != self.dims() {
            return Err(Error::ShapeMismatch(format!(
                "scaler fitted on {} dims, matrix has {}",
                self.dims(),
                matrix.ncols()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, matrix: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dims(matrix)?;
        let mut out = matrix.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.offset[j]) / self.scale[j]);
        }
        Ok(out)
    }

    pub fn invert(&self, matrix: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dims(matrix)?;
        let mut out = matrix.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| v * self.scale[j] + self.offset[j]);
        }
        Ok(out)
    }
}

/// Train/dev split sizes: train gets floor((1 - dev_fraction) * n), dev the
/// remainder. This reproduces published SD/LOSO partition counts exactly.
fn train_dev_counts(remainder: usize, dev_fraction: f64) -> (usize, usize) {
    let train = (((1.0 - dev_fraction) * remainder as f64) + 1e-9).floor() as usize;
    (train, remainder - train)
}

/// Speaker-dependent split: seeded shuffle of the canonical order, last
/// `test_count` ids to test, the remainder split train/dev.
pub fn split_sd(
    manifest: &Manifest,
    test_count: usize,
    dev_fraction: f64,
    seed: u64,
) -> Result<Partition> {
    if !(0.0..1.0).contains(&dev_fraction) || dev_fraction <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "dev_fraction must be in (0, 1), got {dev_fraction}"
        )));
    }
    if test_count == 0 || test_count >= manifest.len() {
        return Err(Error::InvalidArgument(format!(
            "test_count {test_count} infeasible for manifest of {}",
            manifest.len()
        )));
    }
    let mut ids: Vec<String> = manifest
        .records()
        .iter()
        .map(|r| r.utterance_id.clone())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let test = ids.split_off(ids.len() - test_count);
    let (train_count, _dev_count) = train_dev_counts(ids.len(), dev_fraction);
    let dev = ids.split_off(train_count);
    Ok(Partition { train: ids, dev, test })
}

/// Leave-one-session-out split: the whole holdout session becomes the test
/// set; the remaining records are shuffled and split train/dev.
pub fn split_loso(
    manifest: &Manifest,
    holdout_session: u32,
    dev_fraction: f64,
    seed: u64,
) -> Result<Partition> {
    if !(0.0..1.0).contains(&dev_fraction) || dev_fraction <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "dev_fraction must be in (0, 1), got {dev_fraction}"
        )));
    }
    let (held, mut rest): (Vec<_>, Vec<_>) = manifest
        .records()
        .iter()
        .map(|r| (r.session, r.utterance_id.clone()))
        .partition(|(s, _)| *s == holdout_session);
    if held.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "holdout session {holdout_session} not present in manifest"
        )));
    }
    if rest.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "holdout session {holdout_session} holds every record; training set would be empty"
        )));
    }
    let test: Vec<String> = held.into_iter().map(|(_, id)| id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rest.shuffle(&mut rng);
    let mut ids: Vec<String> = rest.into_iter().map(|(_, id)| id).collect();
    let (train_count, _dev_count) = train_dev_counts(ids.len(), dev_fraction);
    let dev = ids.split_off(train_count);
    Ok(Partition { train: ids, dev, test })
}

/// One split's worth of aligned utterances: ids, feature rows, label rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub ids: Vec<String>,
    /// n x d feature matrix, one row per id.
    pub features: Array2<f64>,
    /// n x 3 label matrix (V, A, D), one row per id.
    pub labels: Array2<f64>,
}

impl DataSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn concat(a: &DataSet, b: &DataSet) -> Result<DataSet> {
        if !a.is_empty() && !b.is_empty() && a.features.ncols() != b.features.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "feature dimensionality mismatch: {} vs {}",
                a.features.ncols(),
                b.features.ncols()
            )));
        }
        if a.is_empty() {
            return Ok(b.clone());
        }
        if b.is_empty() {
            return Ok(a.clone());
        }
        let mut ids = a.ids.clone();
        ids.extend(b.ids.iter().cloned());
        let features = ndarray::concatenate(Axis(0), &[a.features.view(), b.features.view()])
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let labels = ndarray::concatenate(Axis(0), &[a.labels.view(), b.labels.view()])
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(DataSet { ids, features, labels })
    }
}

/// A full experiment's data: one [`DataSet`] per split.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedData {
    pub train: DataSet,
    pub dev: DataSet,
    pub test: DataSet,
}

impl PartitionedData {
    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.train
            .ids
            .iter()
            .chain(self.dev.ids.iter())
            .chain(self.test.ids.iter())
    }
}

/// Set-wise concatenation of two partitioned corpora: train with train,
/// dev with dev, test with test. Ids must be globally disjoint (callers
/// prefix them with the corpus name). Scalers must be re-fitted on the
/// mixed training set afterwards.
pub fn mix_corpora(a: &PartitionedData, b: &PartitionedData) -> Result<PartitionedData> {
    let ids_a: HashSet<&String> = a.all_ids().collect();
    if let Some(dup) = b.all_ids().find(|id| ids_a.contains(id)) {
        return Err(Error::Data(format!(
            "utterance id `{dup}` present in both corpora; prefix ids before mixing"
        )));
    }
    Ok(PartitionedData {
        train: DataSet::concat(&a.train, &b.train)?,
        dev: DataSet::concat(&a.dev, &b.dev)?,
        test: DataSet::concat(&a.test, &b.test)?,
    })
}

/// Manifest file column order.
pub const MANIFEST_HEADER: [&str; 8] = [
    "utterance_id",
    "corpus",
    "session",
    "speaker",
    "audio_path",
    "valence",
    "arousal",
    "dominance",
];

/// Load a comma-delimited manifest. Records come back in canonical
/// sorted-by-id order regardless of file order.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.clone();
    let expected: Vec<&str> = MANIFEST_HEADER.to_vec();
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::Data(format!(
            "{}: bad header, expected `{}`",
            path.display(),
            expected.join(",")
        )));
    }
    let mut records = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 2;
        let field = |idx: usize| -> Result<&str> {
            record.get(idx).ok_or_else(|| {
                Error::Data(format!("{}: row {row_no}: missing field {idx}", path.display()))
            })
        };
        let parse_f64 = |idx: usize| -> Result<f64> {
            let s = field(idx)?;
            s.parse().map_err(|_| {
                Error::Data(format!(
                    "{}: row {row_no}: unparseable number `{s}`",
                    path.display()
                ))
            })
        };
        let session: u32 = field(2)?.parse().map_err(|_| {
            Error::Data(format!(
                "{}: row {row_no}: unparseable session `{}`",
                path.display(),
                record.get(2).unwrap_or("")
            ))
        })?;
        let audio = field(4)?;
        records.push(UtteranceRecord {
            utterance_id: field(0)?.to_string(),
            corpus: field(1)?.parse().map_err(|e: Error| {
                Error::Data(format!("{}: row {row_no}: {e}", path.display()))
            })?,
            session,
            speaker: field(3)?.to_string(),
            audio_path: if audio.is_empty() { None } else { Some(PathBuf::from(audio)) },
            labels_raw: [parse_f64(5)?, parse_f64(6)?, parse_f64(7)?],
        });
    }
    Manifest::new(records)
}

/// Write a manifest in the canonical column order.
pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(MANIFEST_HEADER)?;
    for r in manifest.records() {
        writer.write_record([
            r.utterance_id.as_str(),
            &r.corpus.to_string(),
            &r.session.to_string(),
            r.speaker.as_str(),
            &r.audio_path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            &format!("{}", r.labels_raw[0]),
            &format!("{}", r.labels_raw[1]),
            &format!("{}", r.labels_raw[2]),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
