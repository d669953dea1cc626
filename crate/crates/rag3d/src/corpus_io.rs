//! Corpus directories on disk: `manifest.jsonl`, `code/*.py`, `images/*.png`.

use std::fs;
use std::io::{self, Write};
use std::path::{Component, Path, PathBuf};

use rag3d_core::corpus::{
    code_length_stats, count_code_chars, validate_corpus, Corpus, CorpusEntry, CorpusError,
    CorpusStats, Setting, ValidationMode, ValidationReport, Violation,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ErrorCode;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub category: String,
    pub setting: Setting,
    pub variation: u32,
    pub description: String,
    pub code_path: String,
    pub image_path: String,
}

impl From<&CorpusEntry> for ManifestRecord {
    fn from(e: &CorpusEntry) -> Self {
        Self {
            id: e.id.clone(),
            category: e.category.clone(),
            setting: e.setting,
            variation: e.variation,
            description: e.description.clone(),
            code_path: e.code_path.clone(),
            image_path: e.image_path.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusLoadError {
    #[error("no manifest at {0}")]
    MissingManifest(PathBuf),
    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },
    #[error("entry {entry_id}: missing asset {path}")]
    MissingAsset { entry_id: String, path: PathBuf },
    #[error("entry {entry_id}: cannot read {path}: {message}")]
    UnreadableAsset {
        entry_id: String,
        path: PathBuf,
        message: String,
    },
    #[error("duplicate entry id `{0}`")]
    DuplicateId(String),
    #[error("corpus does not have the full shape: {}", join_violations(.0))]
    ShapeViolation(Vec<Violation>),
    #[error("corpus has invalid entries: {}", join_violations(&.0.violations))]
    InvalidEntries(ValidationReport),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl ErrorCode for CorpusLoadError {
    fn code(&self) -> &'static str {
        match self {
            Self::MissingManifest(_) => "MissingManifest",
            Self::ManifestParse { .. } => "ManifestParse",
            Self::MissingAsset { .. } => "MissingAsset",
            Self::UnreadableAsset { .. } => "UnreadableAsset",
            Self::DuplicateId(_) => "DuplicateId",
            Self::ShapeViolation(_) => "ShapeViolation",
            Self::InvalidEntries(_) => "InvalidEntries",
            Self::Io { .. } => "IoError",
        }
    }
}

/// A corpus together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub root: PathBuf,
    pub corpus: Corpus,
}

impl LoadedCorpus {
    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn read_code(&self, entry: &CorpusEntry) -> io::Result<String> {
        let raw = fs::read_to_string(self.resolve(&entry.code_path))?;
        Ok(match raw.strip_prefix('\u{feff}') {
            Some(rest) => rest.to_owned(),
            None => raw,
        })
    }

    pub fn stats(&self) -> Result<CorpusStats, CorpusError> {
        code_length_stats(&self.corpus)
    }
}

fn check_relative(path: &str) -> Result<(), String> {
    let p = Path::new(path);
    if path.is_empty() || p.is_absolute() {
        return Err(format!("path `{path}` must be relative"));
    }
    if p.components()
        .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir))
    {
        return Err(format!("path `{path}` must stay inside the corpus root"));
    }
    Ok(())
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestRecord>, CorpusLoadError> {
    let path = root.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(CorpusLoadError::MissingManifest(path))
        }
        Err(source) => return Err(CorpusLoadError::Io { path, source }),
    };
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(line).map_err(|e| CorpusLoadError::ManifestParse {
                line: i + 1,
                message: e.to_string(),
            })?;
        for p in [&record.code_path, &record.image_path] {
            check_relative(p).map_err(|message| CorpusLoadError::ManifestParse {
                line: i + 1,
                message,
            })?;
        }
        records.push(record);
    }
    Ok(records)
}

/// Loads and checks a corpus directory. Strict mode additionally requires
/// the full 50-category shape and a clean validation report.
pub fn load_corpus(root: &Path, strict: bool) -> Result<LoadedCorpus, CorpusLoadError> {
    let records = read_manifest(root)?;
    let mut entries = Vec::with_capacity(records.len());
    for record in records {
        let code_path = root.join(&record.code_path);
        let code = match fs::read(&code_path) {
            Ok(bytes) => {
                String::from_utf8(bytes).map_err(|e| CorpusLoadError::UnreadableAsset {
                    entry_id: record.id.clone(),
                    path: code_path.clone(),
                    message: e.to_string(),
                })?
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(CorpusLoadError::MissingAsset {
                    entry_id: record.id,
                    path: code_path,
                })
            }
            Err(e) => {
                return Err(CorpusLoadError::UnreadableAsset {
                    entry_id: record.id,
                    path: code_path,
                    message: e.to_string(),
                })
            }
        };
        let image_path = root.join(&record.image_path);
        if !image_path.is_file() {
            return Err(CorpusLoadError::MissingAsset {
                entry_id: record.id,
                path: image_path,
            });
        }
        entries.push(CorpusEntry {
            code_chars: count_code_chars(&code),
            id: record.id,
            category: record.category,
            setting: record.setting,
            variation: record.variation,
            description: record.description,
            code_path: record.code_path,
            image_path: record.image_path,
        });
    }

    let corpus = Corpus::new(entries).map_err(|e| match e {
        CorpusError::DuplicateId(id) => CorpusLoadError::DuplicateId(id),
        CorpusError::EmptyCorpus => unreachable!("construction never reports EmptyCorpus"),
    })?;

    if strict {
        let report = validate_corpus(&corpus, ValidationMode::Strict);
        let shape: Vec<Violation> = report.shape_violations().cloned().collect();
        if !shape.is_empty() {
            return Err(CorpusLoadError::ShapeViolation(shape));
        }
        if !report.is_valid() {
            return Err(CorpusLoadError::InvalidEntries(report));
        }
    }
    Ok(LoadedCorpus {
        root: root.to_path_buf(),
        corpus,
    })
}

/// An entry to be written by [`write_corpus`].
#[derive(Debug, Clone)]
pub struct NewEntry {
    pub record: ManifestRecord,
    pub code: String,
    pub image_png: Vec<u8>,
}

/// Writes a corpus directory; files are created next to the manifest at the
/// record's relative paths.
pub fn write_corpus(root: &Path, entries: &[NewEntry]) -> Result<(), CorpusLoadError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusLoadError::Io { path, source }
    };
    fs::create_dir_all(root).map_err(io_err(root))?;
    let manifest_path = root.join(MANIFEST_FILE);
    let mut manifest = fs::File::create(&manifest_path).map_err(io_err(&manifest_path))?;
    for entry in entries {
        for (rel, bytes) in [
            (&entry.record.code_path, entry.code.as_bytes()),
            (&entry.record.image_path, entry.image_png.as_slice()),
        ] {
            check_relative(rel)
                .map_err(|message| CorpusLoadError::ManifestParse { line: 0, message })?;
            let path = root.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            fs::write(&path, bytes).map_err(io_err(&path))?;
        }
        let line = serde_json::to_string(&entry.record).expect("manifest records serialize");
        writeln!(manifest, "{line}").map_err(io_err(&manifest_path))?;
    }
    Ok(())
}

pub fn write_stats_csv(stats: &CorpusStats, out: &Path) -> Result<(), CorpusLoadError> {
    fs::write(out, stats.to_csv()).map_err(|source| CorpusLoadError::Io {
        path: out.to_path_buf(),
        source,
    })
}

/// The bundled sample corpus.
pub mod sample {
    use super::*;

    const MANIFEST: &str = include_str!("../sample/manifest.jsonl");

    const CODE: &[(&str, &str)] = &[
        (
            "code/chair_01.py",
            include_str!("../sample/code/chair_01.py"),
        ),
        (
            "code/chair_02.py",
            include_str!("../sample/code/chair_02.py"),
        ),
        (
            "code/table_01.py",
            include_str!("../sample/code/table_01.py"),
        ),
        ("code/lamp_01.py", include_str!("../sample/code/lamp_01.py")),
        (
            "code/plate_01.py",
            include_str!("../sample/code/plate_01.py"),
        ),
        (
            "code/bench_01.py",
            include_str!("../sample/code/bench_01.py"),
        ),
        (
            "code/bench_02.py",
            include_str!("../sample/code/bench_02.py"),
        ),
        ("code/tree_01.py", include_str!("../sample/code/tree_01.py")),
        ("code/rock_01.py", include_str!("../sample/code/rock_01.py")),
        ("code/ball_01.py", include_str!("../sample/code/ball_01.py")),
    ];

    /// Sample entries with generated placeholder renders.
    pub fn entries() -> Vec<NewEntry> {
        MANIFEST
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let record: ManifestRecord =
                    serde_json::from_str(line).expect("bundled manifest parses");
                let code = CODE
                    .iter()
                    .find(|(p, _)| *p == record.code_path)
                    .map(|(_, c)| (*c).to_owned())
                    .expect("bundled code exists");
                let image_png = placeholder_png(&record.id, 64);
                NewEntry {
                    record,
                    code,
                    image_png,
                }
            })
            .collect()
    }

    /// Writes the sample corpus to `out`.
    pub fn init(out: &Path) -> Result<(), CorpusLoadError> {
        write_corpus(out, &entries())
    }

    /// A square image with a disc whose color is derived from `seed`.
    pub fn placeholder_png(seed: &str, size: u32) -> Vec<u8> {
        let h = seed.bytes().fold(0x811c_9dc5u32, |h, b| {
            (h ^ u32::from(b)).wrapping_mul(0x0100_0193)
        });
        let color = image::Rgb([
            (h & 0xff) as u8,
            ((h >> 8) & 0xff) as u8,
            ((h >> 16) & 0xff) as u8,
        ]);
        let c = size as f64 / 2.0;
        let img = image::RgbImage::from_fn(size, size, |x, y| {
            let (dx, dy) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
            if dx * dx + dy * dy <= (c * 0.7) * (c * 0.7) {
                color
            } else {
                image::Rgb([235, 235, 235])
            }
        });
        let mut bytes = Vec::new();
        img.write_to(&mut io::Cursor::new(&mut bytes), image::ImageFormat::Png)
            .expect("png encoding to memory");
        bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_path_rules() {
        assert!(check_relative("code/a.py").is_ok());
        assert!(check_relative("./code/a.py").is_ok());
        assert!(check_relative("/etc/passwd").is_err());
        assert!(check_relative("../x.py").is_err());
        assert!(check_relative("").is_err());
    }

    #[test]
    fn sample_has_ten_entries_in_both_settings() {
        let entries = sample::entries();
        assert_eq!(entries.len(), 10);
        assert!(entries.iter().any(|e| e.record.setting == Setting::Indoor));
        assert!(entries.iter().any(|e| e.record.setting == Setting::Outdoor));
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_corpus(dir.path(), false),
            Err(CorpusLoadError::MissingManifest(_))
        ));
    }

    #[test]
    fn unknown_manifest_field_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(MANIFEST_FILE),
            "{\"id\":\"a\",\"bogus\":1}\n",
        )
        .unwrap();
        assert!(matches!(
            load_corpus(dir.path(), false),
            Err(CorpusLoadError::ManifestParse { line: 1, .. })
        ));
    }
}
