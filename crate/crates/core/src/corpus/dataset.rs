use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{GlenError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unlabeled,
}

impl Split {
    pub fn is_labeled(self) -> bool {
        !matches!(self, Split::Unlabeled)
    }
}

impl FromStr for Domain {
    type Err = GlenError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(GlenError::Invalid(format!("unknown domain tag `{other}`"))),
        }
    }
}

impl FromStr for Split {
    type Err = GlenError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "dev" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unlabeled" => Ok(Split::Unlabeled),
            other => Err(GlenError::Invalid(format!("unknown split tag `{other}`"))),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        })
    }
}

/// A tokenized post before vocabulary encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    /// 0/1 vector over the unified class set; present iff the split is labeled.
    pub labels: Option<Vec<u8>>,
    pub domain: Domain,
    pub split: Split,
}

/// A post encoded against a [`crate::corpus::Vocabulary`].
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: String,
    pub tokens: Vec<usize>,
    pub labels: Option<Vec<u8>>,
    pub domain: Domain,
    pub split: Split,
}

impl Instance {
    /// Index of the single positive class of a one-hot label vector.
    pub fn class_index(&self) -> Option<usize> {
        let labels = self.labels.as_ref()?;
        let mut hot = labels.iter().enumerate().filter(|(_, &v)| v == 1);
        let (first, _) = hot.next()?;
        hot.next().is_none().then_some(first)
    }
}

/// Maps dataset class ids onto a dense unified class index space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    mapping: BTreeMap<u32, usize>,
    dropped: BTreeSet<u32>,
    num_classes: usize,
}

impl LabelMap {
    /// Unified indices must cover `0..n` without gaps.
    pub fn new(mapping: BTreeMap<u32, usize>, dropped: BTreeSet<u32>) -> Result<Self> {
        let unified: BTreeSet<usize> = mapping.values().copied().collect();
        let num_classes = unified.len();
        if unified.iter().copied().ne(0..num_classes) {
            return Err(GlenError::Config(format!(
                "unified classes must be 0..{num_classes}, got {unified:?}"
            )));
        }
        if let Some(c) = dropped.iter().find(|c| mapping.contains_key(c)) {
            return Err(GlenError::Config(format!("class {c} is both mapped and dropped")));
        }
        Ok(LabelMap {
            mapping,
            dropped,
            num_classes,
        })
    }

    /// Class ids `0..n` map to themselves.
    pub fn identity(n: usize) -> Self {
        LabelMap {
            mapping: (0..n).map(|c| (c as u32, c)).collect(),
            dropped: BTreeSet::new(),
            num_classes: n,
        }
    }

    /// FIRE16's seven classes folded onto SMERP17's four (unified index =
    /// SMERP17 id - 1). Class 5 (resources at specific locations) is dropped.
    pub fn fire16_to_smerp17() -> Self {
        let mapping = [(1, 0), (3, 0), (2, 1), (4, 1), (7, 2), (6, 3)].into_iter().collect();
        LabelMap::new(mapping, [5].into_iter().collect()).expect("static map")
    }

    /// SMERP17 ids 1..=4 onto unified indices 0..4.
    pub fn smerp17() -> Self {
        LabelMap::new((1..=4).map(|c| (c, c as usize - 1)).collect(), BTreeSet::new()).expect("static map")
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dropped(&self) -> impl Iterator<Item = u32> + '_ {
        self.dropped.iter().copied()
    }

    pub fn get(&self, class: u32) -> Option<usize> {
        self.mapping.get(&class).copied()
    }

    /// Label vector for a record, or `None` when every label was a dropped class.
    pub fn map_labels(&self, classes: &[u32]) -> Result<Option<Vec<u8>>> {
        let mut out = vec![0u8; self.num_classes];
        let mut kept = 0;
        for &c in classes {
            match self.mapping.get(&c) {
                Some(&u) => {
                    out[u] = 1;
                    kept += 1;
                }
                None if self.dropped.contains(&c) => {}
                None => return Err(GlenError::UnmappedLabel(c)),
            }
        }
        if kept == 0 && !classes.is_empty() {
            return Ok(None);
        }
        Ok(Some(out))
    }

    /// Parses `source -> unified` lines plus an optional `dropped = a, b` line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut mapping = BTreeMap::new();
        let mut dropped = BTreeSet::new();
        let bad = |line: usize, message: String| GlenError::Parse {
            path: "<label map>".into(),
            line,
            message,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(list) = line.strip_prefix("dropped") {
                let list = list.trim_start().strip_prefix('=').ok_or_else(|| bad(i + 1, "expected `dropped = ...`".into()))?;
                for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    dropped.insert(item.parse().map_err(|_| bad(i + 1, format!("bad class id `{item}`")))?);
                }
                continue;
            }
            let (src, dst) = line
                .split_once("->")
                .ok_or_else(|| bad(i + 1, format!("expected `source -> unified`, got `{line}`")))?;
            let src: u32 = src.trim().parse().map_err(|_| bad(i + 1, format!("bad class id `{}`", src.trim())))?;
            let dst: usize = dst.trim().parse().map_err(|_| bad(i + 1, format!("bad class id `{}`", dst.trim())))?;
            if mapping.insert(src, dst).is_some() {
                return Err(bad(i + 1, format!("class {src} mapped twice")));
            }
        }
        LabelMap::new(mapping, dropped)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GlenError::io(path, e))?;
        LabelMap::parse(&text).map_err(|e| match e {
            GlenError::Parse { line, message, .. } => GlenError::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (s, u) in &self.mapping {
            out.push_str(&format!("{s} -> {u}\n"));
        }
        if !self.dropped.is_empty() {
            let list: Vec<String> = self.dropped.iter().map(u32::to_string).collect();
            out.push_str(&format!("dropped = {}\n", list.join(", ")));
        }
        out
    }
}

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u32>>,
    pub domain: String,
    pub split: String,
}

/// Parses line-delimited JSON records, tokenizes text and maps labels.
///
/// Records that tokenize to nothing, or whose labels are all dropped classes,
/// are skipped and counted in the log.
pub fn parse_dataset(text: &str, origin: &Path, label_map: &LabelMap) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let (mut empty, mut all_dropped) = (0usize, 0usize);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |message: String| GlenError::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: Record = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
        let domain: Domain = record.domain.parse().map_err(|e: GlenError| at(e.to_string()))?;
        let split: Split = record.split.parse().map_err(|e: GlenError| at(e.to_string()))?;
        let labels = if split.is_labeled() {
            let classes = record
                .labels
                .as_deref()
                .ok_or_else(|| at(format!("record `{}` in split {split} has no labels", record.id)))?;
            match label_map.map_labels(classes).map_err(|e| at(e.to_string()))? {
                Some(v) => Some(v),
                None => {
                    all_dropped += 1;
                    continue;
                }
            }
        } else {
            None
        };
        let tokens = tokenize(&record.text);
        if tokens.is_empty() {
            empty += 1;
            continue;
        }
        docs.push(Document {
            id: record.id,
            tokens,
            labels,
            domain,
            split,
        });
    }
    if empty > 0 || all_dropped > 0 {
        log::info!(
            "{}: skipped {empty} empty and {all_dropped} dropped-class records",
            origin.display()
        );
    }
    Ok(docs)
}

pub fn load_dataset(path: &Path, label_map: &LabelMap) -> Result<Vec<Document>> {
    let text = fs::read_to_string(path).map_err(|e| GlenError::io(path, e))?;
    parse_dataset(&text, path, label_map)
}

/// Writes records in the dataset file format.
pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| GlenError::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r)?;
        writeln!(file, "{line}").map_err(|e| GlenError::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, map: &LabelMap) -> Result<Vec<Document>> {
        parse_dataset(text, Path::new("mem.jsonl"), map)
    }

    #[test]
    fn fire16_mapping_merges_available_classes() {
        let map = LabelMap::fire16_to_smerp17();
        let docs = parse(
            r#"{"id":"1","text":"food available","labels":[1,3],"domain":"source","split":"train"}"#,
            &map,
        )
        .unwrap();
        assert_eq!(docs[0].labels.as_deref(), Some(&[1u8, 0, 0, 0][..]));
    }

    #[test]
    fn record_with_only_dropped_class_is_discarded() {
        let map = LabelMap::fire16_to_smerp17();
        let text = concat!(
            r#"{"id":"1","text":"at kathmandu","labels":[5],"domain":"source","split":"train"}"#,
            "\n",
            r#"{"id":"2","text":"need tents","labels":[5,2],"domain":"source","split":"train"}"#
        );
        let docs = parse(text, &map).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].id, "2");
        assert_eq!(docs[0].labels.as_deref(), Some(&[0u8, 1, 0, 0][..]));
    }

    #[test]
    fn unlabeled_record() {
        let docs = parse(
            r#"{"id":"u","text":"water please","domain":"target","split":"unlabeled"}"#,
            &LabelMap::identity(2),
        )
        .unwrap();
        assert_eq!(docs[0].labels, None);
        assert_eq!(docs[0].split, Split::Unlabeled);
        assert_eq!(docs[0].domain, Domain::Target);
    }

    #[test]
    fn bad_tags_and_labels_are_errors_with_line_numbers() {
        let map = LabelMap::identity(2);
        let err = parse(
            "\n{\"id\":\"1\",\"text\":\"x\",\"labels\":[0],\"domain\":\"middle\",\"split\":\"train\"}",
            &map,
        )
        .unwrap_err();
        assert!(matches!(err, GlenError::Parse { line: 2, .. }), "{err}");
        let err = parse(r#"{"id":"1","text":"x","labels":[0],"domain":"source","split":"holdout"}"#, &map).unwrap_err();
        assert!(err.to_string().contains("holdout"));
        let err = parse(r#"{"id":"1","text":"x","labels":[9],"domain":"source","split":"train"}"#, &map).unwrap_err();
        assert!(err.to_string().contains("label 9"), "{err}");
        let err = parse(r#"{"id":"1","text":"x","domain":"source","split":"test"}"#, &map).unwrap_err();
        assert!(err.to_string().contains("no labels"));
    }

    #[test]
    fn empty_text_dropped() {
        let docs = parse(
            r#"{"id":"1","text":"!!!","labels":[0],"domain":"source","split":"train"}"#,
            &LabelMap::identity(2),
        )
        .unwrap();
        assert!(docs.is_empty());
    }

    #[test]
    fn label_map_text_round_trip() {
        let map = LabelMap::fire16_to_smerp17();
        let parsed = LabelMap::parse(&map.to_text()).unwrap();
        assert_eq!(parsed, map);
        assert_eq!(parsed.num_classes(), 4);
        assert!(LabelMap::parse("1 -> 0\n2 -> 2\n").is_err());
        assert!(LabelMap::parse("1 -> 0\n1 -> 1\n").is_err());
        assert!(LabelMap::parse("1 = 0\n").is_err());
    }

    #[test]
    fn class_index_of_one_hot() {
        let inst = Instance {
            id: "x".into(),
            tokens: vec![1],
            labels: Some(vec![0, 1]),
            domain: Domain::Source,
            split: Split::Train,
        };
        assert_eq!(inst.class_index(), Some(1));
        let multi = Instance {
            labels: Some(vec![1, 1]),
            ..inst
        };
        assert_eq!(multi.class_index(), None);
    }
}
