//! Tagged corpora in the two-column format, plus the token vocabulary.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tagset::{TagMapping, TagSet};

/// Token reserved for out-of-vocabulary words. Always id 0.
pub const UNK_TOKEN: &str = "<unk>";

/// Vocabulary id of [`UNK_TOKEN`].
pub const UNK_ID: usize = 0;

/// A single sentence with one tag index per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldSentence {
    pub tokens: Vec<String>,
    /// Indices into the owning corpus's tagset; same length as `tokens`.
    pub tags: Vec<usize>,
}

impl GoldSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A tagged corpus together with the tagset its indices refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldCorpus {
    pub sentences: Vec<GoldSentence>,
    pub tagset: TagSet,
}

impl GoldCorpus {
    /// Wraps sentences and a tagset, checking that every tag index is in
    /// range and no sentence is empty or length-mismatched.
    pub fn new(sentences: Vec<GoldSentence>, tagset: TagSet) -> Result<GoldCorpus> {
        for (i, s) in sentences.iter().enumerate() {
            if s.tokens.is_empty() {
                return Err(Error::Data(format!("sentence {i} is empty")));
            }
            if s.tokens.len() != s.tags.len() {
                return Err(Error::Shape(format!(
                    "sentence {i}: {} tokens but {} tags",
                    s.tokens.len(),
                    s.tags.len()
                )));
            }
            if let Some(&t) = s.tags.iter().find(|&&t| t >= tagset.size()) {
                return Err(Error::Shape(format!(
                    "sentence {i}: tag index {t} out of range for {} tags",
                    tagset.size()
                )));
            }
        }
        Ok(GoldCorpus { sentences, tagset })
    }

    pub fn empty(tagset: TagSet) -> GoldCorpus {
        GoldCorpus {
            sentences: Vec::new(),
            tagset,
        }
    }

    /// Total number of tokens across sentences.
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(GoldSentence::len).sum()
    }

    /// Reads a two-column file: `token<TAB>tag` lines, sentences separated by
    /// blank lines. Tags must belong to `tagset`.
    pub fn read_two_column(path: impl AsRef<Path>, tagset: &TagSet) -> Result<GoldCorpus> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);

        let mut sentences = Vec::new();
        let mut tokens: Vec<String> = Vec::new();
        let mut tags: Vec<usize> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() {
                if !tokens.is_empty() {
                    sentences.push(GoldSentence {
                        tokens: std::mem::take(&mut tokens),
                        tags: std::mem::take(&mut tags),
                    });
                }
                continue;
            }
            let mut fields = line.split('\t');
            let (token, tag) = match (fields.next(), fields.next(), fields.next()) {
                (Some(tok), Some(tag), None) if !tok.is_empty() && !tag.is_empty() => (tok, tag),
                _ => {
                    return Err(Error::parse(path, lineno + 1, "expected `token<TAB>tag`"));
                }
            };
            let tag_idx = tagset.require(tag)?;
            tokens.push(token.to_string());
            tags.push(tag_idx);
        }
        if !tokens.is_empty() {
            sentences.push(GoldSentence { tokens, tags });
        }
        Ok(GoldCorpus {
            sentences,
            tagset: tagset.clone(),
        })
    }

    /// Writes the corpus in the two-column format, one blank line after each
    /// sentence. Reading the output back reproduces the corpus exactly.
    pub fn write_two_column(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for s in &self.sentences {
            for (token, &tag) in s.tokens.iter().zip(&s.tags) {
                writeln!(w, "{token}\t{}", self.tagset.label(tag)).map_err(|e| Error::io(path, e))?;
            }
            writeln!(w).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Re-indexes every tag through `mapping` into `target`. Fine-grained
    /// labels without a mapping entry, and mapped labels missing from
    /// `target`, are errors.
    pub fn map_to_universal(&self, mapping: &TagMapping, target: &TagSet) -> Result<GoldCorpus> {
        let mut translate = vec![None; self.tagset.size()];
        let mut sentences = Vec::with_capacity(self.sentences.len());
        for s in &self.sentences {
            let mut tags = Vec::with_capacity(s.tags.len());
            for &t in &s.tags {
                let idx = match translate[t] {
                    Some(idx) => idx,
                    None => {
                        let fine = self.tagset.label(t);
                        let coarse = mapping
                            .get(fine)
                            .ok_or_else(|| Error::UnmappedTag(fine.to_string()))?;
                        let idx = target.require(coarse)?;
                        translate[t] = Some(idx);
                        idx
                    }
                };
                tags.push(idx);
            }
            sentences.push(GoldSentence {
                tokens: s.tokens.clone(),
                tags,
            });
        }
        Ok(GoldCorpus {
            sentences,
            tagset: target.clone(),
        })
    }

    /// Splits off the smallest sentence prefix containing at least `n`
    /// tokens. Returns `(prefix, remainder)`; errors if the corpus holds
    /// fewer than `n` tokens in total.
    pub fn take_first_tokens(&self, n: usize) -> Result<(GoldCorpus, GoldCorpus)> {
        if n == 0 {
            return Err(Error::Data("token budget must be at least 1".into()));
        }
        let mut seen = 0usize;
        let mut cut = None;
        for (i, s) in self.sentences.iter().enumerate() {
            seen += s.len();
            if seen >= n {
                cut = Some(i + 1);
                break;
            }
        }
        let cut = cut.ok_or_else(|| {
            Error::Data(format!(
                "corpus has {} tokens, fewer than the requested {n}",
                self.token_count()
            ))
        })?;
        Ok((
            GoldCorpus {
                sentences: self.sentences[..cut].to_vec(),
                tagset: self.tagset.clone(),
            },
            GoldCorpus {
                sentences: self.sentences[cut..].to_vec(),
                tagset: self.tagset.clone(),
            },
        ))
    }

    /// Splits into `(dev, test)` by sentence count: the first half (rounded
    /// down) becomes dev, the rest test. Errors on an empty corpus.
    pub fn split_dev_test(&self) -> Result<(GoldCorpus, GoldCorpus)> {
        if self.sentences.is_empty() {
            return Err(Error::Data("cannot split an empty corpus".into()));
        }
        let half = self.sentences.len() / 2;
        Ok((
            GoldCorpus {
                sentences: self.sentences[..half].to_vec(),
                tagset: self.tagset.clone(),
            },
            GoldCorpus {
                sentences: self.sentences[half..].to_vec(),
                tagset: self.tagset.clone(),
            },
        ))
    }
}

/// Token-to-id table with a reserved `<unk>` entry at id 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary over token sequences. Tokens occurring fewer than
    /// `min_count` times are dropped (they fall back to `<unk>`). Ids follow
    /// first occurrence order in the input, after the reserved `<unk>`.
    pub fn build(sequences: &[&[String]], min_count: usize) -> Result<Vocabulary> {
        if min_count == 0 {
            return Err(Error::Data("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in sequences {
            for token in *seq {
                *counts.entry(token.as_str()).or_default() += 1;
            }
        }
        let mut id_to_token = vec![UNK_TOKEN.to_string()];
        let mut token_to_id = HashMap::from([(UNK_TOKEN.to_string(), UNK_ID)]);
        for seq in sequences {
            for token in *seq {
                if token == UNK_TOKEN || token_to_id.contains_key(token.as_str()) {
                    continue;
                }
                if counts[token.as_str()] >= min_count {
                    token_to_id.insert(token.clone(), id_to_token.len());
                    id_to_token.push(token.clone());
                }
            }
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
        })
    }

    /// Restores a vocabulary from its id-ordered token list (model loading).
    pub(crate) fn from_tokens(id_to_token: Vec<String>) -> Result<Vocabulary> {
        if id_to_token.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::Model(format!(
                "vocabulary must start with `{UNK_TOKEN}`"
            )));
        }
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (id, token) in id_to_token.iter().enumerate() {
            if token_to_id.insert(token.clone(), id).is_some() {
                return Err(Error::Model(format!("duplicate vocabulary entry `{token}`")));
            }
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
        })
    }

    /// Id for `token`, falling back to [`UNK_ID`] for unseen tokens.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Maps a token sequence to ids.
    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Number of entries, `<unk>` included.
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Token at `id`. Panics if out of range.
    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    /// All tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

/// Collects every token sequence of a gold corpus, for [`Vocabulary::build`].
pub fn token_sequences(corpus: &GoldCorpus) -> Vec<&[String]> {
    corpus
        .sentences
        .iter()
        .map(|s| s.tokens.as_slice())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn toy_tagset() -> TagSet {
        TagSet::new(["NOUN", "VERB", "DET"]).unwrap()
    }

    fn write(path: &Path, text: &str) {
        fs::write(path, text).unwrap();
    }

    #[test]
    fn reads_two_column_sentences() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        write(&path, "a\tDET\ncat\tNOUN\n\n");
        let c = GoldCorpus::read_two_column(&path, &toy_tagset()).unwrap();
        assert_eq!(c.sentences.len(), 1);
        assert_eq!(c.sentences[0].tokens, ["a", "cat"]);
        assert_eq!(c.sentences[0].tags, [2, 0]);
    }

    #[test]
    fn reads_empty_file_and_flushes_trailing_sentence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        write(&path, "");
        let c = GoldCorpus::read_two_column(&path, &toy_tagset()).unwrap();
        assert!(c.sentences.is_empty());

        // No trailing blank line: the last sentence still counts.
        write(&path, "runs\tVERB");
        let c = GoldCorpus::read_two_column(&path, &toy_tagset()).unwrap();
        assert_eq!(c.sentences.len(), 1);
        assert_eq!(c.token_count(), 1);
    }

    #[test]
    fn rejects_space_separated_lines_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        write(&path, "cat NOUN\n");
        let err = GoldCorpus::read_two_column(&path, &toy_tagset()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn rejects_unknown_tags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        write(&path, "cat\tNN\n");
        let err = GoldCorpus::read_two_column(&path, &toy_tagset()).unwrap_err();
        assert!(matches!(err, Error::UnknownTag(t) if t == "NN"));
    }

    #[test]
    fn write_read_round_trip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        let b = dir.path().join("b.txt");
        let text = "a\tDET\ncat\tNOUN\n\nruns\tVERB\n\n";
        write(&a, text);
        let c = GoldCorpus::read_two_column(&a, &toy_tagset()).unwrap();
        c.write_two_column(&b).unwrap();
        assert_eq!(fs::read_to_string(&b).unwrap(), text);
        let back = GoldCorpus::read_two_column(&b, &toy_tagset()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn maps_fine_tags_to_coarse() {
        let fine = TagSet::new(["NN", "VBZ", "JJ"]).unwrap();
        let coarse = toy_tagset();
        let mapping = TagMapping::new([("NN", "NOUN"), ("VBZ", "VERB")]);
        let corpus = GoldCorpus::new(
            vec![GoldSentence {
                tokens: vec!["dog".into(), "barks".into()],
                tags: vec![0, 1],
            }],
            fine.clone(),
        )
        .unwrap();
        let mapped = corpus.map_to_universal(&mapping, &coarse).unwrap();
        assert_eq!(mapped.sentences[0].tags, [0, 1]); // NOUN, VERB
        assert_eq!(mapped.tagset, coarse);

        // Empty corpus maps to an empty corpus.
        let empty = GoldCorpus::empty(fine.clone());
        assert!(empty
            .map_to_universal(&mapping, &coarse)
            .unwrap()
            .sentences
            .is_empty());

        // An unmapped fine tag is an error naming the tag.
        let bad = GoldCorpus::new(
            vec![GoldSentence {
                tokens: vec!["big".into()],
                tags: vec![2],
            }],
            fine,
        )
        .unwrap();
        let err = bad.map_to_universal(&mapping, &coarse).unwrap_err();
        assert!(matches!(err, Error::UnmappedTag(t) if t == "JJ"));
    }

    fn corpus_with_lengths(lengths: &[usize]) -> GoldCorpus {
        let tagset = toy_tagset();
        let sentences = lengths
            .iter()
            .enumerate()
            .map(|(i, &len)| GoldSentence {
                tokens: (0..len).map(|j| format!("w{i}_{j}")).collect(),
                tags: (0..len).map(|j| j % 3).collect(),
            })
            .collect();
        GoldCorpus::new(sentences, tagset).unwrap()
    }

    /// Independent check: the cut index is the smallest prefix whose length
    /// sum reaches `n`, found here by scanning explicit prefix sums.
    fn expected_cut(lengths: &[usize], n: usize) -> Option<usize> {
        let mut sum = 0;
        for (i, &len) in lengths.iter().enumerate() {
            sum += len;
            if sum >= n {
                return Some(i + 1);
            }
        }
        None
    }

    #[test]
    fn take_first_tokens_keeps_whole_sentences() {
        let cases: &[(&[usize], usize)] = &[
            (&[600, 300, 200], 1000),
            (&[1000, 5], 1000),
            (&[999, 1, 7], 1000),
            (&[3, 3, 3], 7),
            (&[5], 5),
            (&[2, 2, 2, 2], 8),
        ];
        for &(lengths, n) in cases {
            let corpus = corpus_with_lengths(lengths);
            let (head, tail) = corpus.take_first_tokens(n).unwrap();
            let cut = expected_cut(lengths, n).unwrap();
            assert_eq!(head.sentences.len(), cut, "lengths {lengths:?} n {n}");
            assert_eq!(tail.sentences.len(), lengths.len() - cut);
            assert!(head.token_count() >= n);
            // Dropping the last sentence of the prefix falls below n.
            let without_last: usize = lengths[..cut - 1].iter().sum();
            assert!(without_last < n);
        }
    }

    #[test]
    fn take_first_tokens_rejects_short_corpora() {
        let corpus = corpus_with_lengths(&[10]);
        assert!(matches!(
            corpus.take_first_tokens(1000).unwrap_err(),
            Error::Data(_)
        ));
        assert!(corpus.take_first_tokens(0).is_err());
    }

    #[test]
    fn split_dev_test_halves_by_sentence() {
        let (dev, test) = corpus_with_lengths(&[1; 10]).split_dev_test().unwrap();
        assert_eq!((dev.sentences.len(), test.sentences.len()), (5, 5));
        let (dev, test) = corpus_with_lengths(&[1; 3]).split_dev_test().unwrap();
        assert_eq!((dev.sentences.len(), test.sentences.len()), (1, 2));
        let (dev, test) = corpus_with_lengths(&[1]).split_dev_test().unwrap();
        assert_eq!((dev.sentences.len(), test.sentences.len()), (0, 1));
        assert!(GoldCorpus::empty(toy_tagset()).split_dev_test().is_err());
    }

    #[test]
    fn vocabulary_orders_ids_by_first_occurrence() {
        let a: Vec<String> = ["a", "b", "a"].iter().map(|s| s.to_string()).collect();
        let v = Vocabulary::build(&[&a], 2).unwrap();
        assert_eq!(v.size(), 2); // <unk>, a
        assert_eq!(v.id("a"), 1);
        assert_eq!(v.id("b"), UNK_ID);
        assert_eq!(v.id("zzz"), UNK_ID);
        assert_eq!(v.token(0), UNK_TOKEN);

        let b: Vec<String> = ["x"].iter().map(|s| s.to_string()).collect();
        let v = Vocabulary::build(&[&b], 1).unwrap();
        assert_eq!(v.size(), 2);
        assert_eq!(v.id("x"), 1);
    }

    #[test]
    fn vocabulary_is_deterministic_and_reserves_unk() {
        let s1: Vec<String> = ["c", "b", "c", "<unk>"].iter().map(|s| s.to_string()).collect();
        let s2: Vec<String> = ["b", "d"].iter().map(|s| s.to_string()).collect();
        let seqs: Vec<&[String]> = vec![&s1, &s2];
        let v1 = Vocabulary::build(&seqs, 1).unwrap();
        let v2 = Vocabulary::build(&seqs, 1).unwrap();
        assert_eq!(v1, v2);
        // First-occurrence order: c, b, d after the reserved slot; a literal
        // `<unk>` in the data never claims a fresh id.
        assert_eq!(v1.tokens(), &["<unk>", "c", "b", "d"]);
        assert!(Vocabulary::build(&seqs, 0).is_err());
    }
}
