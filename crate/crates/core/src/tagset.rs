//! Tag inventories and mappings between fine-grained and coarse tagsets.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// The coarse part-of-speech inventory used for cross-lingual work, in its
/// conventional order. Index positions are load-bearing: models, projected
/// label files and bias matrices all address tags by index.
pub const UNIVERSAL_TAGS: [&str; 12] = [
    "NOUN", "VERB", "ADJ", "ADV", "PRON", "DET", "ADP", "NUM", "CONJ", "PRT", ".", "X",
];

/// An ordered set of tag labels with index lookup in both directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagSet {
    /// Builds a tagset from labels in order. Labels must be non-empty, unique,
    /// and free of tabs, newlines and `|` (all of which act as separators in
    /// the file formats).
    pub fn new<I, S>(labels: I) -> Result<TagSet>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::Data("tagset has no labels".into()));
        }
        let mut index = HashMap::new();
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(Error::Data(format!("tagset label {i} is empty")));
            }
            if label.contains(['\t', '\n', '\r', '|']) || label.contains(char::is_whitespace) {
                return Err(Error::Data(format!(
                    "tag label `{label}` contains whitespace or a reserved separator"
                )));
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate tag label `{label}`")));
            }
        }
        Ok(TagSet { labels, index })
    }

    /// The built-in coarse tagset.
    pub fn universal() -> TagSet {
        TagSet::new(UNIVERSAL_TAGS).expect("built-in labels are valid")
    }

    /// Number of tags.
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    /// All labels in index order.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Index of `label`, if present.
    pub fn lookup(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Like [`lookup`](Self::lookup) but turns a miss into an error.
    pub fn require(&self, label: &str) -> Result<usize> {
        self.lookup(label)
            .ok_or_else(|| Error::UnknownTag(label.to_string()))
    }

    /// Label at `idx`. Panics if out of range.
    pub fn label(&self, idx: usize) -> &str {
        &self.labels[idx]
    }

    /// Reads a tagset file: one label per line, order defines indices.
    /// Blank lines and `#` comment lines are skipped.
    pub fn read(path: impl AsRef<Path>) -> Result<TagSet> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut labels: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.contains('|') || line.contains(char::is_whitespace) {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("tag label `{line}` contains whitespace or a reserved separator"),
                ));
            }
            if labels.iter().any(|l| l == line) {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("duplicate tag label `{line}`"),
                ));
            }
            labels.push(line.to_string());
        }
        if labels.is_empty() {
            return Err(Error::Data(format!(
                "tagset file {} has no labels",
                path.display()
            )));
        }
        TagSet::new(labels)
    }

    /// Writes the tagset as one label per line.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.labels.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// A many-to-one mapping from fine-grained tag labels to coarse ones.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagMapping {
    map: HashMap<String, String>,
}

impl TagMapping {
    pub fn new<I, S, T>(pairs: I) -> TagMapping
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        TagMapping {
            map: pairs
                .into_iter()
                .map(|(f, c)| (f.into(), c.into()))
                .collect(),
        }
    }

    /// Reads a mapping file: `fine<TAB>coarse`, one pair per line.
    /// Blank lines and `#` comment lines are skipped; duplicate fine labels
    /// with conflicting targets are an error.
    pub fn read(path: impl AsRef<Path>) -> Result<TagMapping> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut map = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let (fine, coarse) = match (fields.next(), fields.next(), fields.next()) {
                (Some(f), Some(c), None) if !f.is_empty() && !c.is_empty() => (f, c),
                _ => {
                    return Err(Error::parse(
                        path,
                        lineno + 1,
                        "expected `fine<TAB>coarse`",
                    ))
                }
            };
            if let Some(prev) = map.insert(fine.to_string(), coarse.to_string()) {
                if prev != coarse {
                    return Err(Error::parse(
                        path,
                        lineno + 1,
                        format!("tag `{fine}` mapped to both `{prev}` and `{coarse}`"),
                    ));
                }
            }
        }
        Ok(TagMapping { map })
    }

    /// Coarse label for `fine`, if mapped.
    pub fn get(&self, fine: &str) -> Option<&str> {
        self.map.get(fine).map(String::as_str)
    }

    /// All fine labels in the mapping, sorted so callers can build a
    /// deterministic tagset from the mapping's domain.
    pub fn fine_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.map.keys().cloned().collect();
        labels.sort();
        labels
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn universal_has_twelve_tags_in_order() {
        let ts = TagSet::universal();
        assert_eq!(ts.size(), 12);
        assert_eq!(ts.label(0), "NOUN");
        assert_eq!(ts.label(5), "DET");
        assert_eq!(ts.label(10), ".");
        assert_eq!(ts.label(11), "X");
        assert_eq!(ts.lookup("ADP"), Some(6));
        assert_eq!(ts.lookup("nope"), None);
    }

    #[test]
    fn rejects_duplicates_and_bad_labels() {
        assert!(TagSet::new(["A", "B", "A"]).is_err());
        assert!(TagSet::new(["A", ""]).is_err());
        assert!(TagSet::new(["A|B"]).is_err());
        assert!(TagSet::new(["A B"]).is_err());
        assert!(TagSet::new(Vec::<String>::new()).is_err());
        // Punctuation-ish labels are fine, `:` included.
        let ts = TagSet::new([":", ".", ","]).unwrap();
        assert_eq!(ts.lookup(":"), Some(0));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tags.txt");
        let ts = TagSet::new(["NOUN", "VERB", "."]).unwrap();
        ts.write(&path).unwrap();
        let back = TagSet::read(&path).unwrap();
        assert_eq!(ts, back);
    }

    #[test]
    fn mapping_reads_pairs_and_reports_conflicts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.txt");
        std::fs::write(&path, "NN\tNOUN\nVBZ\tVERB\n\n# comment\nNN\tNOUN\n").unwrap();
        let m = TagMapping::read(&path).unwrap();
        assert_eq!(m.get("NN"), Some("NOUN"));
        assert_eq!(m.get("VBZ"), Some("VERB"));
        assert_eq!(m.get("JJ"), None);
        assert_eq!(m.len(), 2);

        std::fs::write(&path, "NN\tNOUN\nNN\tVERB\n").unwrap();
        let err = TagMapping::read(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn mapping_rejects_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.txt");
        std::fs::write(&path, "NN NOUN\n").unwrap();
        assert!(matches!(
            TagMapping::read(&path).unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
    }
}
