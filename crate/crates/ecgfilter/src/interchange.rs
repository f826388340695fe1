//! Record interchange: a directory holding `manifest.json` and one
//! little-endian float32, channel-major binary file per record.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ecgfilter_core::data::{LabeledRecordMeta, QualityInterval, QualityMeta};
use ecgfilter_core::signal::{RawRecord, Superclass};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const FORMAT: &str = "ecgfilter-interchange";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordEntry {
    pub record_id: String,
    /// Relative to the manifest's directory.
    pub file: String,
    pub fs: f64,
    pub channels: Vec<String>,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superclasses: Option<BTreeSet<Superclass>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<Vec<QualityInterval>>,
    /// Set on ambulatory noise records, e.g. `"em"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_source: Option<String>,
}

impl RecordEntry {
    pub fn new(record_id: &str, fs: f64, channels: Vec<String>, samples: usize) -> Self {
        Self {
            record_id: record_id.to_string(),
            file: format!("{record_id}.f32"),
            fs,
            channels,
            samples,
            patient_id: None,
            fold: None,
            superclasses: None,
            quality: None,
            noise_source: None,
        }
    }

    pub fn expected_bytes(&self) -> u64 {
        (self.channels.len() * self.samples * 4) as u64
    }

    pub fn patient(&self) -> &str {
        self.patient_id.as_deref().unwrap_or(&self.record_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub records: Vec<RecordEntry>,
}

impl Manifest {
    pub fn new(records: Vec<RecordEntry>) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: FORMAT_VERSION,
            records,
        }
    }
}

/// An opened corpus directory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: Manifest,
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST)
    } else {
        path.to_path_buf()
    }
}

impl Corpus {
    /// Reads and checks the manifest at `path` (a directory or the manifest file).
    pub fn open(path: &Path) -> Result<Self> {
        let mpath = manifest_path(path);
        let text = fs::read_to_string(&mpath).map_err(AppError::io(&mpath))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| AppError::json(&mpath, &text, &e))?;
        let at = |needle: &str| text.find(needle).unwrap_or(0);
        if manifest.format != FORMAT {
            return Err(AppError::Parse {
                path: mpath.clone(),
                offset: at("\"format\""),
                message: format!("format is {:?}, expected {FORMAT:?}", manifest.format),
            });
        }
        if manifest.version != FORMAT_VERSION {
            return Err(AppError::UnsupportedVersion {
                path: mpath,
                found: manifest.version,
                supported: FORMAT_VERSION,
            });
        }
        let mut seen = BTreeSet::new();
        for r in &manifest.records {
            let offset = at(&format!("\"{}\"", r.record_id));
            let bad = |message: String| AppError::Parse {
                path: mpath.clone(),
                offset,
                message,
            };
            if !seen.insert(r.record_id.as_str()) {
                return Err(bad(format!("duplicate record id {}", r.record_id)));
            }
            if !(r.fs > 0.0) || r.channels.is_empty() {
                return Err(bad(format!("record {}: fs must be positive and channels non-empty", r.record_id)));
            }
            if let Some(f) = r.fold {
                if !(1..=10).contains(&f) {
                    return Err(bad(format!("record {}: fold {f} outside 1-10", r.record_id)));
                }
            }
        }
        let root = mpath.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, manifest })
    }

    pub fn entry(&self, record_id: &str) -> Option<&RecordEntry> {
        self.manifest.records.iter().find(|r| r.record_id == record_id)
    }

    /// Loads one record's samples, checking size and finiteness.
    pub fn load(&self, entry: &RecordEntry) -> Result<RawRecord> {
        let path = self.root.join(&entry.file);
        let bytes = fs::read(&path).map_err(AppError::io(&path))?;
        if bytes.len() as u64 != entry.expected_bytes() {
            return Err(AppError::Truncated {
                path,
                expected: entry.expected_bytes(),
                actual: bytes.len() as u64,
                detail: format!("{} channels x {} samples x 4", entry.channels.len(), entry.samples),
            });
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AppError::Data(format!(
                "{}: non-finite sample at channel {}, index {}",
                path.display(),
                i / entry.samples,
                i % entry.samples
            )));
        }
        let signal: Vec<Vec<f64>> = values.chunks(entry.samples.max(1)).map(<[f64]>::to_vec).collect();
        Ok(RawRecord::new(entry.record_id.clone(), entry.fs, entry.channels.clone(), signal)?)
    }

    /// Records carrying fold and superclass metadata.
    pub fn labeled_meta(&self) -> Vec<LabeledRecordMeta> {
        self.manifest
            .records
            .iter()
            .filter_map(|r| {
                Some(LabeledRecordMeta {
                    record_id: r.record_id.clone(),
                    patient_id: r.patient().to_string(),
                    fold: r.fold?,
                    superclasses: r.superclasses.clone()?,
                })
            })
            .collect()
    }

    /// Records carrying quality annotations.
    pub fn quality_meta(&self) -> Vec<QualityMeta> {
        self.manifest
            .records
            .iter()
            .filter_map(|r| {
                Some(QualityMeta {
                    record_id: r.record_id.clone(),
                    patient_id: r.patient().to_string(),
                    annotations: r.quality.clone()?,
                })
            })
            .collect()
    }
}

/// Writes `record` as channel-major little-endian float32 under `dir`.
pub fn write_record(dir: &Path, entry: &RecordEntry, record: &RawRecord) -> Result<()> {
    if record.channels() != entry.channels.len() || record.len() != entry.samples {
        return Err(AppError::Data(format!(
            "record {} shape {}x{} disagrees with its manifest entry",
            entry.record_id,
            record.channels(),
            record.len()
        )));
    }
    let mut bytes = Vec::with_capacity(entry.expected_bytes() as usize);
    for c in &record.signal {
        for v in c {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let path = dir.join(&entry.file);
    fs::write(&path, bytes).map_err(AppError::io(&path))
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(AppError::io(&path))
}

/// Loads the ambulatory noise record of a corpus (the entry carrying
/// `noise_source`, or the only entry). Its record id becomes the noise tag.
pub fn load_noise_record(path: &Path) -> Result<RawRecord> {
    let corpus = Corpus::open(path)?;
    let entries: Vec<&RecordEntry> = corpus.manifest.records.iter().filter(|r| r.noise_source.is_some()).collect();
    let entry = match (entries.as_slice(), corpus.manifest.records.as_slice()) {
        ([one], _) => *one,
        ([], [only]) => only,
        ([], _) => return Err(AppError::Data(format!("{}: no noise record in manifest", path.display()))),
        _ => return Err(AppError::Data(format!("{}: several noise records in manifest", path.display()))),
    };
    let mut rec = corpus.load(entry)?;
    rec.record_id = entry.noise_source.clone().unwrap_or_else(|| entry.record_id.clone());
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn em(dir: &Path, channels: usize, write_channels: usize) -> RecordEntry {
        let names: Vec<String> = (0..channels).map(|c| format!("ch{c}")).collect();
        let mut e = RecordEntry::new("em_rec", 360.0, names, 100);
        e.noise_source = Some("em".into());
        let rec = RawRecord::new(
            "em_rec",
            360.0,
            (0..write_channels).map(|c| format!("ch{c}")).collect(),
            (0..write_channels).map(|c| (0..100).map(|i| (i + c) as f64 * 0.25).collect()).collect(),
        )
        .unwrap();
        let mut written = e.clone();
        written.channels.truncate(write_channels);
        write_record(dir, &written, &rec).unwrap();
        write_manifest(dir, &Manifest::new(vec![e.clone()])).unwrap();
        e
    }

    #[test]
    fn noise_record_round_trip() {
        let d = tempfile::tempdir().unwrap();
        em(d.path(), 2, 2);
        let r = load_noise_record(d.path()).unwrap();
        assert_eq!(r.record_id, "em");
        assert_eq!(r.fs, 360.0);
        assert_eq!(r.signal[1][3], 1.0);
    }

    #[test]
    fn truncated_and_missing_channel_name_byte_counts() {
        let d = tempfile::tempdir().unwrap();
        em(d.path(), 2, 1);
        let e = load_noise_record(d.path()).unwrap_err();
        match &e {
            AppError::Truncated { expected, actual, .. } => assert_eq!((*expected, *actual), (800, 400)),
            other => panic!("{other}"),
        }
        assert!(e.to_string().contains("expected 800 bytes") && e.to_string().contains("found 400"));
    }

    #[test]
    fn malformed_manifest_reports_byte_offset() {
        let d = tempfile::tempdir().unwrap();
        let text = "{\"format\": \"ecgfilter-interchange\", \"version\": 1, \"records\": [ {\"record_id\": 5} ]}";
        fs::write(d.path().join(MANIFEST), text).unwrap();
        match Corpus::open(d.path()).unwrap_err() {
            AppError::Parse { offset, .. } => {
                assert!(offset > 60 && offset <= text.len(), "{offset}");
            }
            other => panic!("{other}"),
        }
        fs::write(d.path().join(MANIFEST), "{\"format\": \"ecgfilter-interchange\", \"version\": 7, \"records\": []}").unwrap();
        assert!(matches!(Corpus::open(d.path()), Err(AppError::UnsupportedVersion { found: 7, .. })));
    }

    #[test]
    fn metadata_views() {
        let d = tempfile::tempdir().unwrap();
        let mut a = RecordEntry::new("a", 100.0, vec!["I".into()], 10);
        a.fold = Some(3);
        a.superclasses = Some([Superclass::Mi].into_iter().collect());
        let mut b = RecordEntry::new("b", 100.0, vec!["I".into()], 10);
        b.patient_id = Some("p".into());
        b.quality = Some(vec![QualityInterval {
            start_s: 0.0,
            end_s: 0.1,
            class: 1,
        }]);
        write_manifest(d.path(), &Manifest::new(vec![a, b])).unwrap();
        let c = Corpus::open(d.path()).unwrap();
        assert_eq!(c.labeled_meta().len(), 1);
        assert_eq!(c.quality_meta()[0].patient_id, "p");
    }
}
