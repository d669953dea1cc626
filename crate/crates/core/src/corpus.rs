//! Exemplar corpus schema, invariant checks, and code length statistics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Categories per setting in a full-shape corpus.
pub const FULL_CATEGORIES_PER_SETTING: usize = 25;
/// Design variations per category in a full-shape corpus.
pub const FULL_VARIATIONS: u32 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Indoor,
    Outdoor,
}

impl Setting {
    pub const ALL: [Setting; 2] = [Setting::Indoor, Setting::Outdoor];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Indoor => "indoor",
            Setting::Outdoor => "outdoor",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One text / script / image triplet.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub category: String,
    pub setting: Setting,
    pub variation: u32,
    pub description: String,
    pub code_path: String,
    pub image_path: String,
    /// Unicode scalar count of the script, excluding a leading byte-order mark.
    pub code_chars: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryInfo {
    pub setting: Setting,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("duplicate entry id `{0}`")]
    DuplicateId(String),
    #[error("corpus is empty")]
    EmptyCorpus,
}

/// Immutable, ordered set of entries with a category summary.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
    positions: BTreeMap<String, usize>,
    categories: BTreeMap<String, CategoryInfo>,
}

impl Corpus {
    /// Builds a corpus, keeping manifest order. A category's setting is taken
    /// from its first entry; later disagreements are reported by [`validate_corpus`].
    pub fn new(entries: Vec<CorpusEntry>) -> Result<Self, CorpusError> {
        let mut positions = BTreeMap::new();
        let mut categories: BTreeMap<String, CategoryInfo> = BTreeMap::new();
        for (pos, entry) in entries.iter().enumerate() {
            if positions.insert(entry.id.clone(), pos).is_some() {
                return Err(CorpusError::DuplicateId(entry.id.clone()));
            }
            categories
                .entry(entry.category.clone())
                .or_insert(CategoryInfo {
                    setting: entry.setting,
                    count: 0,
                })
                .count += 1;
        }
        Ok(Self {
            entries,
            positions,
            categories,
        })
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn categories(&self) -> &BTreeMap<String, CategoryInfo> {
        &self.categories
    }

    pub fn get(&self, id: &str) -> Option<&CorpusEntry> {
        self.positions.get(id).map(|&p| &self.entries[p])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A copy without the entry `id`.
    pub fn without(&self, id: &str) -> Self {
        let entries = self
            .entries
            .iter()
            .filter(|e| e.id != id)
            .cloned()
            .collect();
        Self::new(entries).expect("ids remain unique")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    Lenient,
    /// Also require the full 25 + 25 category, 10 variation shape.
    Strict,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum Subject {
    Entry(String),
    Category(String),
    Setting(Setting),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum ViolationKind {
    EmptyDescription,
    EmptyCode,
    VariationZero,
    SettingConflict {
        category_setting: Setting,
        entry_setting: Setting,
    },
    /// Strict-mode shape failure.
    Shape {
        expected: String,
        actual: String,
    },
}

impl ViolationKind {
    pub fn is_shape(&self) -> bool {
        matches!(self, ViolationKind::Shape { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub subject: Subject,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.subject {
            Subject::Entry(id) => write!(f, "entry {id}: ")?,
            Subject::Category(c) => write!(f, "category {c}: ")?,
            Subject::Setting(s) => write!(f, "setting {s}: ")?,
        }
        match &self.kind {
            ViolationKind::EmptyDescription => f.write_str("description is empty"),
            ViolationKind::EmptyCode => f.write_str("code file is empty"),
            ViolationKind::VariationZero => f.write_str("variation index must be >= 1"),
            ViolationKind::SettingConflict {
                category_setting,
                entry_setting,
            } => write!(
                f,
                "setting {entry_setting} conflicts with category setting {category_setting}"
            ),
            ViolationKind::Shape { expected, actual } => {
                write!(f, "shape violation: expected {expected}, found {actual}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn shape_violations(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.kind.is_shape())
    }
}

/// Every invariant violation, ordered by subject (entries by id, then
/// categories by name, then settings).
pub fn validate_corpus(corpus: &Corpus, mode: ValidationMode) -> ValidationReport {
    let mut violations = Vec::new();
    for entry in corpus.entries() {
        let subject = || Subject::Entry(entry.id.clone());
        if entry.description.trim().is_empty() {
            violations.push(Violation {
                subject: subject(),
                kind: ViolationKind::EmptyDescription,
            });
        }
        if entry.code_chars == 0 {
            violations.push(Violation {
                subject: subject(),
                kind: ViolationKind::EmptyCode,
            });
        }
        if entry.variation == 0 {
            violations.push(Violation {
                subject: subject(),
                kind: ViolationKind::VariationZero,
            });
        }
        if let Some(info) = corpus.categories().get(&entry.category) {
            if info.setting != entry.setting {
                violations.push(Violation {
                    subject: subject(),
                    kind: ViolationKind::SettingConflict {
                        category_setting: info.setting,
                        entry_setting: entry.setting,
                    },
                });
            }
        }
    }

    if mode == ValidationMode::Strict {
        let mut variations: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
        for entry in corpus.entries() {
            variations
                .entry(&entry.category)
                .or_default()
                .push(entry.variation);
        }
        for (category, mut found) in variations {
            found.sort_unstable();
            let expected: Vec<u32> = (1..=FULL_VARIATIONS).collect();
            if found != expected {
                violations.push(Violation {
                    subject: Subject::Category(String::from(category)),
                    kind: ViolationKind::Shape {
                        expected: format!(
                            "{FULL_VARIATIONS} variations numbered 1..={FULL_VARIATIONS}"
                        ),
                        actual: format!(
                            "{} entries with variations {}",
                            found.len(),
                            join_numbers(&found)
                        ),
                    },
                });
            }
        }
        for setting in Setting::ALL {
            let n = corpus
                .categories()
                .values()
                .filter(|c| c.setting == setting)
                .count();
            if n != FULL_CATEGORIES_PER_SETTING {
                violations.push(Violation {
                    subject: Subject::Setting(setting),
                    kind: ViolationKind::Shape {
                        expected: format!("{FULL_CATEGORIES_PER_SETTING} categories"),
                        actual: format!("{n} categories"),
                    },
                });
            }
        }
    }

    violations.sort_by(|a, b| a.subject.cmp(&b.subject));
    ValidationReport { violations }
}

fn join_numbers(values: &[u32]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
    out
}

/// Counts characters the way `code_chars` is defined: Unicode scalars,
/// newlines included, a leading BOM excluded.
pub fn count_code_chars(source: &str) -> usize {
    source
        .strip_prefix('\u{feff}')
        .unwrap_or(source)
        .chars()
        .count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub count: usize,
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    pub median: f64,
}

impl LengthSummary {
    /// `None` for an empty slice.
    pub fn from_lengths(lengths: &[usize]) -> Option<Self> {
        if lengths.is_empty() {
            return None;
        }
        let mut sorted = lengths.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let sum: u128 = sorted.iter().map(|&v| v as u128).sum();
        let median = if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
        };
        Some(Self {
            count: n,
            min: sorted[0],
            max: sorted[n - 1],
            mean: sum as f64 / n as f64,
            median,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub setting: Setting,
    #[serde(flatten)]
    pub summary: LengthSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_category: BTreeMap<String, CategoryStats>,
    pub overall: LengthSummary,
}

pub const STATS_CSV_HEADER: &str =
    "category,setting,count,min_chars,max_chars,mean_chars,median_chars";
/// Category column value of the whole-corpus row.
pub const OVERALL_ROW: &str = "__all__";

impl CorpusStats {
    /// CSV report: one row per category in name order, then the overall row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(STATS_CSV_HEADER);
        out.push('\n');
        let row = |out: &mut String, category: &str, setting: &str, s: &LengthSummary| {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.1},{:.1}",
                csv_field(category),
                setting,
                s.count,
                s.min,
                s.max,
                s.mean,
                s.median
            );
        };
        for (name, stats) in &self.per_category {
            row(&mut out, name, stats.setting.as_str(), &stats.summary);
        }
        row(&mut out, OVERALL_ROW, "all", &self.overall);
        out
    }
}

fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        String::from(value)
    }
}

pub fn code_length_stats(corpus: &Corpus) -> Result<CorpusStats, CorpusError> {
    let all: Vec<usize> = corpus.entries().iter().map(|e| e.code_chars).collect();
    let overall = LengthSummary::from_lengths(&all).ok_or(CorpusError::EmptyCorpus)?;
    let mut grouped: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for entry in corpus.entries() {
        grouped
            .entry(&entry.category)
            .or_default()
            .push(entry.code_chars);
    }
    let per_category = grouped
        .into_iter()
        .map(|(name, lengths)| {
            let setting = corpus.categories()[name].setting;
            let summary = LengthSummary::from_lengths(&lengths).expect("group is non-empty");
            (String::from(name), CategoryStats { setting, summary })
        })
        .collect();
    Ok(CorpusStats {
        per_category,
        overall,
    })
}

/// Distinct category names per setting.
pub fn categories_by_setting(corpus: &Corpus) -> BTreeMap<Setting, BTreeSet<String>> {
    let mut out: BTreeMap<Setting, BTreeSet<String>> = BTreeMap::new();
    for (name, info) in corpus.categories() {
        out.entry(info.setting).or_default().insert(name.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn entry(
        id: &str,
        category: &str,
        setting: Setting,
        variation: u32,
        chars: usize,
    ) -> CorpusEntry {
        CorpusEntry {
            id: id.into(),
            category: category.into(),
            setting,
            variation,
            description: format!("a {category} number {variation}"),
            code_path: format!("code/{id}.py"),
            image_path: format!("images/{id}.png"),
            code_chars: chars,
        }
    }

    fn fixture() -> Corpus {
        Corpus::new(vec![
            entry("e1", "Chair", Setting::Indoor, 1, 10),
            entry("e2", "Lamp", Setting::Indoor, 1, 20),
            entry("e3", "Rock", Setting::Outdoor, 1, 30),
            entry("e4", "Tree", Setting::Outdoor, 1, 40),
        ])
        .unwrap()
    }

    #[test]
    fn four_entry_fixture_is_valid() {
        let c = fixture();
        assert_eq!(c.len(), 4);
        assert_eq!(c.categories().len(), 4);
        assert!(validate_corpus(&c, ValidationMode::Lenient).is_valid());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = Corpus::new(vec![
            entry("x", "Chair", Setting::Indoor, 1, 1),
            entry("x", "Lamp", Setting::Indoor, 1, 1),
        ])
        .unwrap_err();
        assert_eq!(err, CorpusError::DuplicateId("x".into()));
    }

    #[test]
    fn empty_description_names_entry() {
        let mut entries = fixture().entries().to_vec();
        entries[2].description = "   ".into();
        let report = validate_corpus(&Corpus::new(entries).unwrap(), ValidationMode::Lenient);
        assert_eq!(
            report.violations,
            vec![Violation {
                subject: Subject::Entry("e3".into()),
                kind: ViolationKind::EmptyDescription
            }]
        );
    }

    #[test]
    fn setting_conflict_and_ordering() {
        let c = Corpus::new(vec![
            entry("z", "Chair", Setting::Indoor, 0, 0),
            entry("a", "Chair", Setting::Outdoor, 1, 5),
        ])
        .unwrap();
        let report = validate_corpus(&c, ValidationMode::Lenient);
        let subjects: Vec<_> = report
            .violations
            .iter()
            .map(|v| v.subject.clone())
            .collect();
        assert_eq!(
            subjects,
            vec![
                Subject::Entry("a".into()),
                Subject::Entry("z".into()),
                Subject::Entry("z".into())
            ]
        );
    }

    #[test]
    fn strict_four_entry_fixture_has_shape_violations() {
        let report = validate_corpus(&fixture(), ValidationMode::Strict);
        assert!(!report.is_valid());
        assert_eq!(report.shape_violations().count(), report.violations.len());
        // four categories short of 10 variations plus both settings short of 25
        assert_eq!(report.violations.len(), 6);
    }

    #[test]
    fn stats_for_known_lengths() {
        let c = Corpus::new(vec![
            entry("p1", "Plate", Setting::Indoor, 1, 10),
            entry("p2", "Plate", Setting::Indoor, 2, 30),
            entry("p3", "Plate", Setting::Indoor, 3, 20),
        ])
        .unwrap();
        let stats = code_length_stats(&c).unwrap();
        let plate = &stats.per_category["Plate"].summary;
        assert_eq!(
            (plate.min, plate.max, plate.mean, plate.median),
            (10, 30, 20.0, 20.0)
        );
        assert_eq!(stats.overall, *plate);
    }

    #[test]
    fn single_entry_stats_collapse() {
        let c = Corpus::new(vec![entry("only", "Ball", Setting::Outdoor, 1, 3001)]).unwrap();
        let s = code_length_stats(&c).unwrap().overall;
        assert_eq!(
            (s.min, s.max, s.mean, s.median),
            (3001, 3001, 3001.0, 3001.0)
        );
    }

    #[test]
    fn empty_corpus_stats_error() {
        assert_eq!(
            code_length_stats(&Corpus::default()),
            Err(CorpusError::EmptyCorpus)
        );
    }

    #[test]
    fn even_count_median_is_midpoint() {
        let s = LengthSummary::from_lengths(&[4, 1, 3, 2]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 2.5);
    }

    #[test]
    fn csv_layout() {
        let csv = code_length_stats(&fixture()).unwrap().to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], STATS_CSV_HEADER);
        assert_eq!(lines[1], "Chair,indoor,1,10,10,10.0,10.0");
        assert_eq!(lines.last().unwrap(), &"__all__,all,4,10,40,25.0,25.0");
    }

    #[test]
    fn code_chars_excludes_bom_only() {
        assert_eq!(count_code_chars("\u{feff}ab\n"), 3);
        assert_eq!(count_code_chars("é\r\n"), 3);
    }
}
