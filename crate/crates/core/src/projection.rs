//! Cross-lingual label projection over word-aligned parallel text.
//!
//! Source-side tags travel across word alignments: a target token aligned by
//! a one-to-one link copies the tag of its source token (a hard label), and
//! every other target token receives the tag distribution of the whole source
//! sentence (a soft label).

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::GoldCorpus;
use crate::error::{Error, Result};
use crate::tagset::TagSet;

/// Tolerance when validating that a probability vector sums to one.
pub const DIST_SUM_TOL: f64 = 1e-9;

/// Looser tolerance for distributions parsed from 6-decimal text; inputs
/// within it are renormalized exactly.
const PARSE_SUM_TOL: f64 = 1e-3;

/// One word-alignment link between source position `src` and target
/// position `tgt` (both 0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AlignmentLink {
    pub src: usize,
    pub tgt: usize,
}

/// A tagged source sentence, its target translation, and their alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelSentence {
    pub src_tokens: Vec<String>,
    /// Tag indices for the source tokens, same length as `src_tokens`.
    pub src_tags: Vec<usize>,
    pub tgt_tokens: Vec<String>,
    pub links: Vec<AlignmentLink>,
    /// Optional alignment quality score, used for ranking.
    pub score: Option<f64>,
}

/// Supervision for one target token.
#[derive(Debug, Clone, PartialEq)]
pub enum ProjectedLabel {
    /// A single tag index, copied through a one-to-one link.
    Hard(usize),
    /// A distribution over all tags (sums to one).
    Soft(Vec<f64>),
}

impl ProjectedLabel {
    /// Checks the label against a tagset of size `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        match self {
            ProjectedLabel::Hard(t) if *t < k => Ok(()),
            ProjectedLabel::Hard(t) => Err(Error::Shape(format!(
                "hard label {t} out of range for {k} tags"
            ))),
            ProjectedLabel::Soft(dist) => {
                if dist.len() != k {
                    return Err(Error::Shape(format!(
                        "soft label has {} entries, tagset has {k}",
                        dist.len()
                    )));
                }
                if dist.iter().any(|&p| !p.is_finite() || p < 0.0) {
                    return Err(Error::Data(
                        "soft label has a negative or non-finite entry".into(),
                    ));
                }
                let sum: f64 = dist.iter().sum();
                if (sum - 1.0).abs() > DIST_SUM_TOL {
                    return Err(Error::Data(format!(
                        "soft label sums to {sum}, expected 1"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// A target sentence with one projected label per token.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSentence {
    pub tokens: Vec<String>,
    pub labels: Vec<ProjectedLabel>,
}

impl ProjectedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Projected sentences plus the tagset their labels refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedCorpus {
    pub sentences: Vec<ProjectedSentence>,
    pub tagset: TagSet,
}

impl ProjectedCorpus {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(ProjectedSentence::len).sum()
    }

    /// Counts of `(hard, soft)` labels across the corpus.
    pub fn label_counts(&self) -> (usize, usize) {
        let mut hard = 0;
        let mut soft = 0;
        for s in &self.sentences {
            for l in &s.labels {
                match l {
                    ProjectedLabel::Hard(_) => hard += 1,
                    ProjectedLabel::Soft(_) => soft += 1,
                }
            }
        }
        (hard, soft)
    }

    /// Total label mass per tag: hard labels count 1 toward their tag, soft
    /// labels contribute their probabilities.
    pub fn tag_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.tagset.size()];
        for s in &self.sentences {
            for l in &s.labels {
                match l {
                    ProjectedLabel::Hard(t) => mass[*t] += 1.0,
                    ProjectedLabel::Soft(dist) => {
                        for (m, &p) in mass.iter_mut().zip(dist) {
                            *m += p;
                        }
                    }
                }
            }
        }
        mass
    }

    /// Writes one `token<TAB>label` line per token with blank lines between
    /// sentences. Hard labels are written as the tag name; soft labels as
    /// `TAG:p|TAG:p|...` over the non-zero entries, probabilities with six
    /// decimals, tags in tagset order.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for s in &self.sentences {
            for (token, label) in s.tokens.iter().zip(&s.labels) {
                match label {
                    ProjectedLabel::Hard(t) => {
                        writeln!(w, "{token}\t{}", self.tagset.label(*t))
                    }
                    ProjectedLabel::Soft(dist) => {
                        let parts: Vec<String> = dist
                            .iter()
                            .enumerate()
                            .filter(|(_, &p)| p > 0.0)
                            .map(|(i, &p)| format!("{}:{p:.6}", self.tagset.label(i)))
                            .collect();
                        writeln!(w, "{token}\t{}", parts.join("|"))
                    }
                }
                .map_err(|e| Error::io(path, e))?;
            }
            writeln!(w).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a projected label file written by [`write`](Self::write).
    /// Soft distributions whose printed probabilities sum near one are
    /// renormalized to sum exactly.
    pub fn read(path: impl AsRef<Path>, tagset: &TagSet) -> Result<ProjectedCorpus> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);

        let mut sentences = Vec::new();
        let mut tokens: Vec<String> = Vec::new();
        let mut labels: Vec<ProjectedLabel> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() {
                if !tokens.is_empty() {
                    sentences.push(ProjectedSentence {
                        tokens: std::mem::take(&mut tokens),
                        labels: std::mem::take(&mut labels),
                    });
                }
                continue;
            }
            let mut fields = line.split('\t');
            let (token, spec) = match (fields.next(), fields.next(), fields.next()) {
                (Some(tok), Some(spec), None) if !tok.is_empty() && !spec.is_empty() => (tok, spec),
                _ => {
                    return Err(Error::parse(path, lineno + 1, "expected `token<TAB>label`"));
                }
            };
            let label = parse_label(spec, tagset, path, lineno + 1)?;
            tokens.push(token.to_string());
            labels.push(label);
        }
        if !tokens.is_empty() {
            sentences.push(ProjectedSentence { tokens, labels });
        }
        Ok(ProjectedCorpus {
            sentences,
            tagset: tagset.clone(),
        })
    }
}

/// Parses the label column: a bare tag name is a hard label, anything with
/// `TAG:p` parts is a soft distribution. Tried as a tag name first so that
/// punctuation tags like `.` or `:` stay hard labels.
fn parse_label(spec: &str, tagset: &TagSet, path: &Path, lineno: usize) -> Result<ProjectedLabel> {
    if let Some(t) = tagset.lookup(spec) {
        return Ok(ProjectedLabel::Hard(t));
    }
    if !spec.contains(':') {
        return Err(Error::UnknownTag(spec.to_string()));
    }
    let mut dist = vec![0.0; tagset.size()];
    let mut seen = vec![false; tagset.size()];
    for part in spec.split('|') {
        let (tag, prob) = part.rsplit_once(':').ok_or_else(|| {
            Error::parse(path, lineno, format!("expected `TAG:prob` in `{part}`"))
        })?;
        let t = tagset.require(tag)?;
        if seen[t] {
            return Err(Error::parse(
                path,
                lineno,
                format!("tag `{tag}` listed twice in one label"),
            ));
        }
        seen[t] = true;
        let p: f64 = prob.parse().map_err(|_| {
            Error::parse(path, lineno, format!("bad probability `{prob}`"))
        })?;
        if !p.is_finite() || p < 0.0 {
            return Err(Error::parse(
                path,
                lineno,
                format!("probability `{prob}` out of range"),
            ));
        }
        dist[t] = p;
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > PARSE_SUM_TOL {
        return Err(Error::parse(
            path,
            lineno,
            format!("label probabilities sum to {sum}, expected 1"),
        ));
    }
    for p in &mut dist {
        *p /= sum;
    }
    Ok(ProjectedLabel::Soft(dist))
}

/// Keeps exactly the links that are one-to-one: a link survives iff its
/// source index appears in no other link and its target index appears in no
/// other link. Duplicate links are collapsed first; input order is kept.
pub fn filter_one_to_one(links: &[AlignmentLink]) -> Vec<AlignmentLink> {
    let mut unique = Vec::with_capacity(links.len());
    let mut seen = HashSet::new();
    for &l in links {
        if seen.insert(l) {
            unique.push(l);
        }
    }
    let mut src_count: HashMap<usize, usize> = HashMap::new();
    let mut tgt_count: HashMap<usize, usize> = HashMap::new();
    for l in &unique {
        *src_count.entry(l.src).or_default() += 1;
        *tgt_count.entry(l.tgt).or_default() += 1;
    }
    unique
        .into_iter()
        .filter(|l| src_count[&l.src] == 1 && tgt_count[&l.tgt] == 1)
        .collect()
}

/// The tag distribution of a source sentence: relative frequency of each of
/// the `k` tags among its tokens.
pub fn sentence_tag_distribution(src_tags: &[usize], k: usize) -> Result<Vec<f64>> {
    if src_tags.is_empty() {
        return Err(Error::Data(
            "cannot take the tag distribution of an empty sentence".into(),
        ));
    }
    let mut dist = vec![0.0; k];
    for &t in src_tags {
        if t >= k {
            return Err(Error::Shape(format!(
                "tag index {t} out of range for {k} tags"
            )));
        }
        dist[t] += 1.0;
    }
    let n = src_tags.len() as f64;
    for p in &mut dist {
        *p /= n;
    }
    Ok(dist)
}

/// Projects source tags onto the target side of one sentence pair. Target
/// tokens covered by a one-to-one link get that source token's tag as a hard
/// label; all remaining target tokens get the source sentence's tag
/// distribution as a soft label.
pub fn project(pair: &ParallelSentence, k: usize) -> Result<ProjectedSentence> {
    if pair.src_tokens.len() != pair.src_tags.len() {
        return Err(Error::Shape(format!(
            "{} source tokens but {} tags",
            pair.src_tokens.len(),
            pair.src_tags.len()
        )));
    }
    if pair.src_tokens.is_empty() || pair.tgt_tokens.is_empty() {
        return Err(Error::Data("empty side in a sentence pair".into()));
    }
    for l in &pair.links {
        if l.src >= pair.src_tokens.len() || l.tgt >= pair.tgt_tokens.len() {
            return Err(Error::Shape(format!(
                "link {}-{} outside a {}x{} sentence pair",
                l.src,
                l.tgt,
                pair.src_tokens.len(),
                pair.tgt_tokens.len()
            )));
        }
    }

    let mut tag_of_tgt: Vec<Option<usize>> = vec![None; pair.tgt_tokens.len()];
    for l in filter_one_to_one(&pair.links) {
        tag_of_tgt[l.tgt] = Some(pair.src_tags[l.src]);
    }
    let mut fallback: Option<Vec<f64>> = None;
    let labels = tag_of_tgt
        .into_iter()
        .map(|slot| match slot {
            Some(t) => Ok(ProjectedLabel::Hard(t)),
            None => {
                if fallback.is_none() {
                    fallback = Some(sentence_tag_distribution(&pair.src_tags, k)?);
                }
                Ok(ProjectedLabel::Soft(fallback.clone().unwrap()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProjectedSentence {
        tokens: pair.tgt_tokens.clone(),
        labels,
    })
}

/// Ranks sentence pairs by their alignment score (descending) and keeps the
/// best `n`, returned in their original corpus order. Asking for at least as
/// many as exist returns everything; ranking requires every pair to carry a
/// score.
pub fn select_sentences(pairs: &[ParallelSentence], n: usize) -> Result<Vec<ParallelSentence>> {
    if n >= pairs.len() {
        return Ok(pairs.to_vec());
    }
    let mut ranked: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let score = p.score.ok_or_else(|| {
            Error::Data(format!("sentence pair {i} has no alignment score"))
        })?;
        ranked.push((i, score));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut keep: Vec<usize> = ranked[..n].iter().map(|&(i, _)| i).collect();
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| pairs[i].clone()).collect())
}

/// Reads a parallel corpus spread over aligned files: a two-column tagged
/// source file, a target file with one space-separated sentence per line, an
/// alignment file with `src-tgt` index pairs per line, and optionally a score
/// file with one number per line. All files must describe the same number of
/// sentences, in the same order.
pub fn read_parallel_bundle(
    src_path: impl AsRef<Path>,
    tgt_path: impl AsRef<Path>,
    align_path: impl AsRef<Path>,
    scores_path: Option<&Path>,
    src_tagset: &TagSet,
) -> Result<Vec<ParallelSentence>> {
    let src = GoldCorpus::read_two_column(src_path, src_tagset)?;
    let tgt = read_sentence_lines(tgt_path.as_ref())?;
    let align = read_alignment_lines(align_path.as_ref())?;
    let scores = match scores_path {
        Some(p) => Some(read_score_lines(p)?),
        None => None,
    };

    if src.sentences.len() != tgt.len() || src.sentences.len() != align.len() {
        return Err(Error::Data(format!(
            "parallel bundle out of step: {} source sentences, {} target sentences, {} alignment lines",
            src.sentences.len(),
            tgt.len(),
            align.len()
        )));
    }
    if let Some(s) = &scores {
        if s.len() != src.sentences.len() {
            return Err(Error::Data(format!(
                "parallel bundle out of step: {} source sentences but {} scores",
                src.sentences.len(),
                s.len()
            )));
        }
    }

    let mut pairs = Vec::with_capacity(src.sentences.len());
    for (i, (src_sent, tgt_tokens)) in src.sentences.into_iter().zip(tgt).enumerate() {
        let pair = ParallelSentence {
            src_tokens: src_sent.tokens,
            src_tags: src_sent.tags,
            tgt_tokens,
            links: align[i].clone(),
            score: scores.as_ref().map(|s| s[i]),
        };
        for l in &pair.links {
            if l.src >= pair.src_tokens.len() || l.tgt >= pair.tgt_tokens.len() {
                return Err(Error::Data(format!(
                    "sentence pair {i}: link {}-{} outside a {}x{} pair",
                    l.src,
                    l.tgt,
                    pair.src_tokens.len(),
                    pair.tgt_tokens.len()
                )));
            }
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

/// One space-separated sentence per line; a blank line is an empty sentence,
/// which is rejected.
fn read_sentence_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sentences = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(Error::parse(path, lineno + 1, "empty target sentence"));
        }
        sentences.push(tokens);
    }
    Ok(sentences)
}

/// One alignment per line: whitespace-separated `src-tgt` index pairs.
/// A blank line means no links for that sentence pair.
fn read_alignment_lines(path: &Path) -> Result<Vec<Vec<AlignmentLink>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut all = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut links = Vec::new();
        for piece in line.split_whitespace() {
            let link = piece
                .split_once('-')
                .and_then(|(s, t)| Some(AlignmentLink {
                    src: s.parse().ok()?,
                    tgt: t.parse().ok()?,
                }))
                .ok_or_else(|| {
                    Error::parse(path, lineno + 1, format!("expected `src-tgt`, got `{piece}`"))
                })?;
            links.push(link);
        }
        all.push(links);
    }
    Ok(all)
}

/// One finite score per line.
fn read_score_lines(path: &Path) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut scores = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let score: f64 = line
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno + 1, format!("bad score `{}`", line.trim())))?;
        if !score.is_finite() {
            return Err(Error::parse(path, lineno + 1, "score must be finite"));
        }
        scores.push(score);
    }
    Ok(scores)
}
