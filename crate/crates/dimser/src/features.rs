//! Per-utterance feature extraction: frame-level LLD matrices, the
//! silence-ratio feature, and the fixed-length HSF vector
//! `[mean(LLD_1..K), std(LLD_1..K), silence_ratio]` of length 2K+1.
//!
//! Besides the native LLD subset, externally extracted LLD tables (e.g. a
//! full 23-descriptor GeMAPS matrix) can be ingested from delimited files.

use crate::dsp::{
    self, AudioBuffer, Spectrum, VOICING_THRESHOLD,
};
use crate::error::{Error, Result};
use ndarray::{Array2, Axis};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// Frames x descriptors matrix of low-level descriptors for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct LldMatrix {
    pub values: Array2<f64>,
    pub descriptor_names: Vec<String>,
    pub utterance_id: String,
}

impl LldMatrix {
    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_descriptors(&self) -> usize {
        self.values.ncols()
    }
}

/// Fixed-length per-utterance feature vector: [means, stds, silence].
#[derive(Debug, Clone, PartialEq)]
pub struct HsfVector {
    pub values: Vec<f64>,
    pub utterance_id: String,
}

/// Parameters of the silence-ratio feature: a frame is silent when its RMS
/// is strictly below `factor` times the mean frame RMS of the utterance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SilenceConfig {
    pub factor: f64,
    pub win_ms: f64,
    pub hop_ms: f64,
}

impl Default for SilenceConfig {
    fn default() -> Self {
        Self { factor: 0.3, win_ms: 25.0, hop_ms: 10.0 }
    }
}

impl SilenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0) {
            return Err(Error::InvalidArgument("silence factor must be positive".into()));
        }
        Ok(())
    }
}

/// Which native LLD columns to extract and with what parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LldConfig {
    pub rms_loudness: bool,
    pub spectral_slope_0_500: bool,
    pub spectral_slope_500_1500: bool,
    pub spectral_flux: bool,
    /// Number of MFCC columns (coefficients 1..=n); 0 disables.
    pub n_mfcc: usize,
    pub n_mels: usize,
    pub f0: bool,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    pub f0_voicing_threshold: f64,
    pub win_ms: f64,
    pub hop_ms: f64,
}

impl Default for LldConfig {
    fn default() -> Self {
        Self {
            rms_loudness: true,
            spectral_slope_0_500: true,
            spectral_slope_500_1500: true,
            spectral_flux: true,
            n_mfcc: 4,
            n_mels: 26,
            f0: true,
            f0_min_hz: 50.0,
            f0_max_hz: 500.0,
            f0_voicing_threshold: VOICING_THRESHOLD,
            win_ms: 25.0,
            hop_ms: 10.0,
        }
    }
}

impl LldConfig {
    /// Column names in extraction order.
    pub fn descriptor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.rms_loudness {
            names.push("rms".to_string());
        }
        if self.spectral_slope_0_500 {
            names.push("slope_0_500".to_string());
        }
        if self.spectral_slope_500_1500 {
            names.push("slope_500_1500".to_string());
        }
        if self.spectral_flux {
            names.push("flux".to_string());
        }
        for i in 1..=self.n_mfcc {
            names.push(format!("mfcc{i}"));
        }
        if self.f0 {
            names.push("f0".to_string());
        }
        names
    }
}

/// Extract the configured LLD columns, one row per 25 ms / 10 ms frame.
pub fn extract_llds(
    audio: &AudioBuffer,
    cfg: &LldConfig,
    utterance_id: &str,
) -> Result<LldMatrix> {
    let names = cfg.descriptor_names();
    if names.is_empty() {
        return Err(Error::InvalidArgument("no LLDs selected".into()));
    }
    let frames = dsp::frame_signal(audio, cfg.win_ms, cfg.hop_ms)?;
    if frames.is_empty() {
        return Err(Error::UtteranceTooShort(format!(
            "utterance `{utterance_id}`: {} samples yield no {} ms frames",
            audio.samples.len(),
            cfg.win_ms
        )));
    }
    let needs_spectrum = cfg.spectral_slope_0_500
        || cfg.spectral_slope_500_1500
        || cfg.spectral_flux
        || cfg.n_mfcc > 0;

    let mut values = Array2::zeros((frames.len(), names.len()));
    let mut prev_spectrum: Option<Spectrum> = None;
    for (row, frame) in frames.frames.iter().enumerate() {
        let spectrum = if needs_spectrum {
            Some(dsp::magnitude_spectrum(frame, audio.sample_rate)?)
        } else {
            None
        };
        let mut col = 0;
        let put = |values: &mut Array2<f64>, col: &mut usize, v: f64| {
            values[[row, *col]] = v;
            *col += 1;
        };
        if cfg.rms_loudness {
            put(&mut values, &mut col, dsp::rms(frame)?);
        }
        if cfg.spectral_slope_0_500 {
            put(&mut values, &mut col, dsp::spectral_slope(spectrum.as_ref().unwrap(), 0.0, 500.0)?);
        }
        if cfg.spectral_slope_500_1500 {
            put(
                &mut values,
                &mut col,
                dsp::spectral_slope(spectrum.as_ref().unwrap(), 500.0, 1500.0)?,
            );
        }
        if cfg.spectral_flux {
            let flux = match &prev_spectrum {
                Some(prev) => dsp::spectral_flux(spectrum.as_ref().unwrap(), prev)?,
                None => 0.0, // first frame by convention
            };
            put(&mut values, &mut col, flux);
        }
        if cfg.n_mfcc > 0 {
            let coeffs = dsp::mfcc(spectrum.as_ref().unwrap(), cfg.n_mels, cfg.n_mfcc)?;
            for c in coeffs {
                put(&mut values, &mut col, c);
            }
        }
        if cfg.f0 {
            let f0 = dsp::f0_autocorrelation_with_threshold(
                frame,
                audio.sample_rate,
                cfg.f0_min_hz,
                cfg.f0_max_hz,
                cfg.f0_voicing_threshold,
            )?;
            put(&mut values, &mut col, f0);
        }
        if let Some(s) = spectrum {
            prev_spectrum = Some(s);
        }
    }
    Ok(LldMatrix {
        values,
        descriptor_names: names,
        utterance_id: utterance_id.to_string(),
    })
}

/// Fraction of frames whose RMS falls strictly below
/// `factor * mean(frame RMS)`.
pub fn silence_ratio(audio: &AudioBuffer, cfg: &SilenceConfig) -> Result<f64> {
    cfg.validate()?;
    let frames = dsp::frame_signal(audio, cfg.win_ms, cfg.hop_ms)?;
    if frames.is_empty() {
        return Err(Error::UtteranceTooShort(
            "silence ratio needs at least one frame".into(),
        ));
    }
    let energies: Vec<f64> = frames
        .frames
        .iter()
        .map(|f| dsp::rms(f))
        .collect::<Result<_>>()?;
    let mean_rms = energies.iter().sum::<f64>() / energies.len() as f64;
    let threshold = cfg.factor * mean_rms;
    let silent = energies.iter().filter(|&&e| e < threshold).count();
    Ok(silent as f64 / energies.len() as f64)
}

/// Column-wise mean and population standard deviation of the LLD matrix,
/// concatenated with the silence ratio: length 2K+1.
pub fn aggregate_hsf(llds: &LldMatrix, silence: f64) -> Result<HsfVector> {
    if llds.n_frames() == 0 {
        return Err(Error::InvalidArgument("empty LLD matrix".into()));
    }
    let n = llds.n_frames() as f64;
    let means = llds.values.mean_axis(Axis(0)).unwrap();
    let mut values = Vec::with_capacity(2 * llds.n_descriptors() + 1);
    values.extend(means.iter().copied());
    for (col, &m) in means.iter().enumerate() {
        let var = llds
            .values
            .column(col)
            .iter()
            .map(|v| (v - m) * (v - m))
            .sum::<f64>()
            / n;
        values.push(var.sqrt());
    }
    values.push(silence);
    Ok(HsfVector {
        values,
        utterance_id: llds.utterance_id.clone(),
    })
}

/// HSF feature names in vector order for a given descriptor list.
pub fn hsf_feature_names(descriptor_names: &[String]) -> Vec<String> {
    let mut names: Vec<String> = descriptor_names.iter().map(|n| format!("mean_{n}")).collect();
    names.extend(descriptor_names.iter().map(|n| format!("std_{n}")));
    names.push("silence".to_string());
    names
}

/// Read externally extracted LLD tables: comma-delimited, header row
/// `utterance_id,<descriptor names...>`, one data row per frame. Rows for
/// the same utterance must be contiguous; matrices are returned in
/// first-appearance order.
pub fn ingest_lld_table(path: &Path, expected_names: Option<&[String]>) -> Result<Vec<LldMatrix>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() < 2 || header.get(0) != Some("utterance_id") {
        return Err(Error::Data(format!(
            "{}: expected header `utterance_id,<descriptors...>`",
            path.display()
        )));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if let Some(expected) = expected_names {
        let missing: Vec<&String> = expected.iter().filter(|e| !names.contains(e)).collect();
        if !missing.is_empty() {
            return Err(Error::Data(format!(
                "{}: header missing descriptors: {}",
                path.display(),
                missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )));
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 2; // 1-based, after the header
        if record.len() != names.len() + 1 {
            return Err(Error::Data(format!(
                "{}: row {row_no}: expected {} fields, found {}",
                path.display(),
                names.len() + 1,
                record.len()
            )));
        }
        let id = record.get(0).unwrap().to_string();
        let mut row = Vec::with_capacity(names.len());
        for field in record.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| {
                Error::Data(format!(
                    "{}: row {row_no}: unparseable cell `{field}`",
                    path.display()
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{}: row {row_no}: non-finite cell `{field}`",
                    path.display()
                )));
            }
            row.push(v);
        }
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push(row);
    }

    order
        .into_iter()
        .map(|id| {
            let data = rows.remove(&id).unwrap();
            let n = data.len();
            let flat: Vec<f64> = data.into_iter().flatten().collect();
            let values = Array2::from_shape_vec((n, names.len()), flat)
                .map_err(|e| Error::Data(e.to_string()))?;
            Ok(LldMatrix {
                values,
                descriptor_names: names.clone(),
                utterance_id: id,
            })
        })
        .collect()
}

/// Write HSF vectors as a comma-delimited cache with full round-trip
/// precision. Header: `utterance_id,<feature names...>`.
pub fn write_feature_cache(
    vectors: &[HsfVector],
    feature_names: &[String],
    path: &Path,
) -> Result<()> {
    for v in vectors {
        if v.values.len() != feature_names.len() {
            return Err(Error::ShapeMismatch(format!(
                "utterance `{}` has {} features, expected {}",
                v.utterance_id,
                v.values.len(),
                feature_names.len()
            )));
        }
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "utterance_id")?;
    for name in feature_names {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for v in vectors {
        write!(out, "{}", v.utterance_id)?;
        for x in &v.values {
            // `{}` on f64 prints the shortest exact round-trip form.
            write!(out, ",{x}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Read a feature cache back: (vectors, feature names).
pub fn read_feature_cache(path: &Path) -> Result<(Vec<HsfVector>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.clone();
    if header.is_empty() || header.get(0) != Some("utterance_id") {
        return Err(Error::Data(format!(
            "{}: expected header `utterance_id,<features...>`",
            path.display()
        )));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut vectors = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 2;
        if record.len() != names.len() + 1 {
            return Err(Error::Data(format!(
                "{}: row {row_no}: expected {} fields, found {}",
                path.display(),
                names.len() + 1,
                record.len()
            )));
        }
        let values: Vec<f64> = record
            .iter()
            .skip(1)
            .map(|f| {
                f.parse().map_err(|_| {
                    Error::Data(format!(
                        "{}: row {row_no}: unparseable cell `{f}`",
                        path.display()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        vectors.push(HsfVector {
            values,
            utterance_id: record.get(0).unwrap().to_string(),
        });
    }
    Ok((vectors, names))
}
