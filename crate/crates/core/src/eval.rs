//! Scoring predictions against gold tags, and exporting the learned
//! label-noise transformation for inspection.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::corpus::GoldCorpus;
use crate::error::{Error, Result};
use crate::model::TaggerModel;

/// Per-tag precision and recall, with the counts they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TagScore {
    pub label: String,
    /// Correct / predicted-as-this-tag; `None` when never predicted.
    pub precision: Option<f64>,
    /// Correct / gold-is-this-tag; `None` when absent from gold.
    pub recall: Option<f64>,
    pub gold_count: u64,
    pub predicted_count: u64,
}

/// Everything a scoring run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub token_count: usize,
    /// `confusion[[g, p]]` counts tokens with gold tag `g` predicted as `p`.
    pub confusion: Array2<u64>,
    pub labels: Vec<String>,
    pub per_tag: Vec<TagScore>,
}

/// Fraction of positions where prediction equals gold. Sequence and length
/// mismatches are errors, as is an empty input.
pub fn token_accuracy(pred: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<f64> {
    check_aligned(pred, gold)?;
    let total: usize = gold.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Data("no tokens to score".into()));
    }
    let correct: usize = pred
        .iter()
        .zip(gold)
        .map(|(p, g)| p.iter().zip(g).filter(|(a, b)| a == b).count())
        .sum();
    Ok(correct as f64 / total as f64)
}

/// Confusion counts over `k` tags; gold tags index rows, predictions
/// columns. Empty input gives the zero matrix.
pub fn confusion(pred: &[Vec<usize>], gold: &[Vec<usize>], k: usize) -> Result<Array2<u64>> {
    check_aligned(pred, gold)?;
    let mut m = Array2::zeros((k, k));
    for (ps, gs) in pred.iter().zip(gold) {
        for (&p, &g) in ps.iter().zip(gs) {
            if p >= k || g >= k {
                return Err(Error::Shape(format!(
                    "tag index {} out of range for {k} tags",
                    p.max(g)
                )));
            }
            m[[g, p]] += 1;
        }
    }
    Ok(m)
}

fn check_aligned(pred: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predicted sentences but {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Shape(format!(
                "sentence {i}: {} predicted tags but {} gold tags",
                p.len(),
                g.len()
            )));
        }
    }
    Ok(())
}

/// Per-tag precision/recall from a confusion matrix.
pub fn per_tag_scores(confusion: &Array2<u64>, labels: &[String]) -> Vec<TagScore> {
    (0..labels.len())
        .map(|t| {
            let gold_count: u64 = confusion.row(t).sum();
            let predicted_count: u64 = confusion.column(t).sum();
            let correct = confusion[[t, t]];
            TagScore {
                label: labels[t].clone(),
                precision: (predicted_count > 0).then(|| correct as f64 / predicted_count as f64),
                recall: (gold_count > 0).then(|| correct as f64 / gold_count as f64),
                gold_count,
                predicted_count,
            }
        })
        .collect()
}

/// Scores a predicted corpus against a gold one. Both must use the same
/// tagset and align sentence-by-sentence, token-by-token.
pub fn evaluate(pred: &GoldCorpus, gold: &GoldCorpus) -> Result<EvalReport> {
    if pred.tagset != gold.tagset {
        return Err(Error::Data(
            "predicted and gold corpora use different tagsets".into(),
        ));
    }
    let pred_tags: Vec<Vec<usize>> = pred.sentences.iter().map(|s| s.tags.clone()).collect();
    let gold_tags: Vec<Vec<usize>> = gold.sentences.iter().map(|s| s.tags.clone()).collect();
    let accuracy = token_accuracy(&pred_tags, &gold_tags)?;
    let k = gold.tagset.size();
    let confusion = confusion(&pred_tags, &gold_tags, k)?;
    let labels = gold.tagset.labels().to_vec();
    let per_tag = per_tag_scores(&confusion, &labels);
    Ok(EvalReport {
        accuracy,
        token_count: gold.token_count(),
        confusion,
        labels,
        per_tag,
    })
}

impl EvalReport {
    /// Human-readable report. The first line is always
    /// `accuracy <value to 4 decimals>`.
    pub fn write_text(&self, w: &mut dyn Write) -> io::Result<()> {
        writeln!(w, "accuracy {:.4}", self.accuracy)?;
        writeln!(w, "tokens {}", self.token_count)?;
        writeln!(w)?;
        writeln!(w, "{:<8} {:>9} {:>9} {:>8} {:>8}", "tag", "precision", "recall", "gold", "pred")?;
        for s in &self.per_tag {
            let p = s
                .precision
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into());
            let r = s
                .recall
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into());
            writeln!(
                w,
                "{:<8} {:>9} {:>9} {:>8} {:>8}",
                s.label, p, r, s.gold_count, s.predicted_count
            )?;
        }
        Ok(())
    }

    /// The confusion matrix as CSV: header row of predicted labels, then one
    /// row per gold label.
    pub fn write_confusion_csv(&self, w: &mut dyn Write) -> io::Result<()> {
        writeln!(w, ",{}", self.labels.join(","))?;
        for (g, label) in self.labels.iter().enumerate() {
            let cells: Vec<String> = (0..self.labels.len())
                .map(|p| self.confusion[[g, p]].to_string())
                .collect();
            writeln!(w, "{label},{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Writes the label-noise transformation as CSV: projected tags across the
/// header, one row per prediction tag, six decimals per cell.
pub fn write_bias_csv(
    matrix: &ndarray::ArrayView2<'_, f64>,
    gold_labels: &[String],
    proj_labels: &[String],
    w: &mut dyn Write,
) -> io::Result<()> {
    writeln!(w, ",{}", proj_labels.join(","))?;
    for (i, label) in gold_labels.iter().enumerate() {
        let cells: Vec<String> = (0..proj_labels.len())
            .map(|j| format!("{:.6}", matrix[[i, j]]))
            .collect();
        writeln!(w, "{label},{}", cells.join(","))?;
    }
    Ok(())
}

/// Writes a model's learned transformation to a CSV file.
pub fn export_bias(model: &TaggerModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_bias_csv(
        &model.params.bias_transform.view(),
        model.gold_tagset.labels(),
        model.proj_tagset.labels(),
        &mut w,
    )
    .map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a transformation CSV back: `(row labels, column labels, matrix)`.
pub fn read_bias_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<String>, Array2<f64>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let mut cols = header.split(',');
    if cols.next() != Some("") {
        return Err(Error::parse(path, 1, "header must start with an empty cell"));
    }
    let col_labels: Vec<String> = cols.map(str::to_string).collect();
    if col_labels.is_empty() || col_labels.iter().any(String::is_empty) {
        return Err(Error::parse(path, 1, "bad column labels"));
    }

    let mut row_labels = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or_default();
        if label.is_empty() {
            return Err(Error::parse(path, lineno + 1, "missing row label"));
        }
        row_labels.push(label.to_string());
        let row: Vec<f64> = fields
            .map(|f| {
                f.parse()
                    .map_err(|_| Error::parse(path, lineno + 1, format!("bad number `{f}`")))
            })
            .collect::<Result<_>>()?;
        if row.len() != col_labels.len() {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("{} cells, expected {}", row.len(), col_labels.len()),
            ));
        }
        values.extend(row);
    }
    if row_labels.is_empty() {
        return Err(Error::parse(path, 1, "no data rows"));
    }
    let matrix = Array2::from_shape_vec((row_labels.len(), col_labels.len()), values)
        .expect("counts were checked per row");
    Ok((row_labels, col_labels, matrix))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::GoldSentence;
    use crate::tagset::TagSet;
    use ndarray::arr2;

    #[test]
    fn accuracy_counts_matching_positions() {
        let pred = vec![vec![0, 1], vec![1, 1, 0]];
        let gold = vec![vec![0, 0], vec![1, 1, 0]];
        let acc = token_accuracy(&pred, &gold).unwrap();
        assert!((acc - 4.0 / 5.0).abs() < 1e-12);

        assert!(token_accuracy(&pred, &[vec![0, 1]]).is_err());
        assert!(token_accuracy(&[vec![0]], &[vec![0, 1]]).is_err());
        assert!(token_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn confusion_counts_gold_rows_pred_columns() {
        let pred = vec![vec![0, 1, 1, 0]];
        let gold = vec![vec![0, 0, 1, 1]];
        let m = confusion(&pred, &gold, 2).unwrap();
        assert_eq!(m, arr2(&[[1, 1], [1, 1]]));
        // Empty input: the zero matrix.
        assert_eq!(confusion(&[], &[], 3).unwrap(), Array2::zeros((3, 3)));
        assert!(confusion(&[vec![5]], &[vec![0]], 2).is_err());
    }

    #[test]
    fn per_tag_scores_match_hand_arithmetic() {
        // Gold rows / pred columns: [[2, 1], [0, 3]].
        let m = arr2(&[[2u64, 1], [0, 3]]);
        let labels = vec!["A".to_string(), "B".to_string()];
        let scores = per_tag_scores(&m, &labels);
        assert_eq!(scores[0].precision, Some(1.0)); // 2 / (2+0)
        assert_eq!(scores[0].recall, Some(2.0 / 3.0)); // 2 / (2+1)
        assert_eq!(scores[1].precision, Some(0.75)); // 3 / (1+3)
        assert_eq!(scores[1].recall, Some(1.0));
        assert_eq!(scores[0].gold_count, 3);
        assert_eq!(scores[0].predicted_count, 2);

        // A tag never predicted and absent from gold has no scores.
        let m = arr2(&[[1u64, 0], [0, 0]]);
        let scores = per_tag_scores(&m, &labels);
        assert_eq!(scores[1].precision, None);
        assert_eq!(scores[1].recall, None);
    }

    fn corpus(tags: &[&[usize]]) -> GoldCorpus {
        let tagset = TagSet::new(["A", "B"]).unwrap();
        let sentences = tags
            .iter()
            .map(|ts| GoldSentence {
                tokens: ts.iter().map(|t| format!("w{t}")).collect(),
                tags: ts.to_vec(),
            })
            .collect();
        GoldCorpus::new(sentences, tagset).unwrap()
    }

    #[test]
    fn evaluate_reports_accuracy_first() {
        let gold = corpus(&[&[0, 1, 0]]);
        let report = evaluate(&gold, &gold).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.token_count, 3);
        let mut out = Vec::new();
        report.write_text(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("accuracy 1.0000\n"), "{text}");

        let pred = corpus(&[&[0, 0, 0]]);
        let report = evaluate(&pred, &gold).unwrap();
        assert!((report.accuracy - 2.0 / 3.0).abs() < 1e-12);
        let mut out = Vec::new();
        report.write_text(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("accuracy 0.6667\n"));
    }

    #[test]
    fn evaluate_rejects_mismatched_corpora() {
        let a = corpus(&[&[0, 1]]);
        let b = corpus(&[&[0, 1], &[1]]);
        assert!(evaluate(&a, &b).is_err());
        let sentences = a.sentences.clone();
        let other_tags = GoldCorpus::new(sentences, TagSet::new(["X", "Y"]).unwrap()).unwrap();
        assert!(evaluate(&other_tags, &a).is_err());
    }

    #[test]
    fn confusion_csv_lists_labels() {
        let gold = corpus(&[&[0, 1, 1]]);
        let pred = corpus(&[&[0, 1, 0]]);
        let report = evaluate(&pred, &gold).unwrap();
        let mut out = Vec::new();
        report.write_confusion_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), ",A,B\nA,1,0\nB,1,1\n");
    }

    #[test]
    fn bias_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bias.csv");
        let m = arr2(&[[1.0, 0.25], [0.0, -0.5], [0.125, 2.0]]);
        let rows: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let cols: Vec<String> = ["P", "Q"].iter().map(|s| s.to_string()).collect();
        {
            let file = File::create(&path).unwrap();
            let mut w = BufWriter::new(file);
            write_bias_csv(&m.view(), &rows, &cols, &mut w).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(",P,Q\nA,1.000000,0.250000\n"), "{text}");
        let (r, c, back) = read_bias_csv(&path).unwrap();
        assert_eq!(r, rows);
        assert_eq!(c, cols);
        for (a, b) in back.iter().zip(m.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn bias_csv_reader_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bias.csv");
        std::fs::write(&path, "A,B\nX,1.0,2.0\n").unwrap();
        assert!(read_bias_csv(&path).is_err()); // header misses empty cell
        std::fs::write(&path, ",A,B\nX,1.0\n").unwrap();
        assert!(read_bias_csv(&path).is_err()); // short row
        std::fs::write(&path, ",A,B\nX,1.0,oops\n").unwrap();
        assert!(read_bias_csv(&path).is_err());
        std::fs::write(&path, ",A,B\n").unwrap();
        assert!(read_bias_csv(&path).is_err()); // no rows
    }
}
