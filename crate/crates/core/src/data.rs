//! Domain types and their on-disk formats.
//!
//! Every float is written with Rust's shortest round-trip formatting, so a
//! write followed by a read reproduces the exact bit patterns.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{HstError, Result};
use crate::scalar::Scalar;

/// A dense embedding with finite entries and nonzero dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector<S>(Vec<S>);

impl<S: Scalar> EmbeddingVector<S> {
    pub fn new(values: Vec<S>) -> Result<Self> {
        if values.is_empty() {
            return Err(HstError::EmptyInput("embedding has dimension 0".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(HstError::NonFinite(format!("embedding component {i}")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<S> {
        self.0
    }

    pub fn norm(&self) -> S {
        self.0.iter().map(|&x| x * x).sum::<S>().sqrt()
    }
}

impl<S> AsRef<[S]> for EmbeddingVector<S> {
    fn as_ref(&self) -> &[S] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubActionStatement<S> {
    pub statement_id: u64,
    pub gloss_id: usize,
    /// Sub-action index within the owning gloss, starting at 0.
    pub position: usize,
    pub text: String,
    pub embedding: EmbeddingVector<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlossEntry<S> {
    pub gloss_id: usize,
    pub gloss_text: String,
    pub statements: Vec<SubActionStatement<S>>,
}

/// All glosses of the vocabulary with their ordered sub-action statements.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptionCorpus<S> {
    dimension: usize,
    /// Indexed by gloss id.
    glosses: Vec<GlossEntry<S>>,
    /// (gloss id, position) of each statement in file order.
    order: Vec<(usize, usize)>,
    by_id: HashMap<u64, (usize, usize)>,
}

/// One line of the descriptions JSON Lines file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatementRecord<S> {
    statement_id: u64,
    gloss_id: usize,
    gloss_text: String,
    position: usize,
    text: String,
    embedding: Vec<S>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusHeader {
    dimension: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CorpusLine<S> {
    Header(CorpusHeader),
    Statement(StatementRecord<S>),
}

impl<S: Scalar> DescriptionCorpus<S> {
    /// Validates and assembles a corpus from statements given in file order.
    ///
    /// Within each gloss, positions must appear as 0, 1, 2, ... in the order
    /// supplied; nothing is reordered.
    pub fn from_statements(
        statements: Vec<(SubActionStatement<S>, String)>,
        declared_dimension: Option<usize>,
    ) -> Result<Self> {
        Self::assemble(statements.into_iter().map(|(s, g)| (0, s, g)), declared_dimension)
    }

    fn assemble(
        rows: impl IntoIterator<Item = (usize, SubActionStatement<S>, String)>,
        declared_dimension: Option<usize>,
    ) -> Result<Self> {
        let mut dimension = declared_dimension;
        let mut glosses: HashMap<usize, GlossEntry<S>> = HashMap::new();
        let mut order = Vec::new();
        let mut by_id = HashMap::new();

        for (line, stmt, gloss_text) in rows {
            let located = |e: HstError| -> HstError {
                if line == 0 {
                    e
                } else {
                    HstError::Parse { line, message: e.to_string() }
                }
            };
            let d = *dimension.get_or_insert(stmt.embedding.dim());
            if stmt.embedding.dim() != d {
                log::debug!("line {line}: embedding dimension {} != {d}", stmt.embedding.dim());
                return Err(HstError::DimensionMismatch { expected: d, found: stmt.embedding.dim() });
            }
            if by_id.contains_key(&stmt.statement_id) {
                return Err(located(HstError::Duplicate(format!("statement_id {}", stmt.statement_id))));
            }
            let entry = glosses.entry(stmt.gloss_id).or_insert_with(|| GlossEntry {
                gloss_id: stmt.gloss_id,
                gloss_text: gloss_text.clone(),
                statements: Vec::new(),
            });
            if entry.gloss_text != gloss_text {
                return Err(located(HstError::Consistency(format!(
                    "gloss {} has conflicting texts {:?} and {:?}",
                    stmt.gloss_id, entry.gloss_text, gloss_text
                ))));
            }
            if entry.statements.iter().any(|s| s.position == stmt.position) {
                return Err(located(HstError::Duplicate(format!(
                    "(gloss_id {}, position {})",
                    stmt.gloss_id, stmt.position
                ))));
            }
            if stmt.position != entry.statements.len() {
                return Err(located(HstError::Consistency(format!(
                    "gloss {} expects position {} next, found {}",
                    stmt.gloss_id,
                    entry.statements.len(),
                    stmt.position
                ))));
            }
            by_id.insert(stmt.statement_id, (stmt.gloss_id, stmt.position));
            order.push((stmt.gloss_id, stmt.position));
            entry.statements.push(stmt);
        }

        if glosses.is_empty() {
            return Err(HstError::EmptyInput("corpus has no statements".into()));
        }
        let n = glosses.len();
        let mut indexed = Vec::with_capacity(n);
        for g in 0..n {
            let entry = glosses.remove(&g).ok_or_else(|| {
                HstError::Consistency(format!("gloss ids must form 0..{}; {g} is missing", n - 1))
            })?;
            indexed.push(entry);
        }
        Ok(Self {
            dimension: dimension.expect("nonempty corpus fixes the dimension"),
            glosses: indexed,
            order,
            by_id,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of gloss classes N (the CTC blank is index N).
    pub fn vocabulary_size(&self) -> usize {
        self.glosses.len()
    }

    pub fn glosses(&self) -> &[GlossEntry<S>] {
        &self.glosses
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Statements in file order.
    pub fn statements(&self) -> impl Iterator<Item = &SubActionStatement<S>> + '_ {
        self.order.iter().map(move |&(g, p)| &self.glosses[g].statements[p])
    }

    pub fn statement(&self, statement_id: u64) -> Option<&SubActionStatement<S>> {
        self.by_id.get(&statement_id).map(|&(g, p)| &self.glosses[g].statements[p])
    }

    /// The statement at position k+1 of the same gloss, if any.
    pub fn successor(&self, statement_id: u64) -> Option<&SubActionStatement<S>> {
        let &(g, p) = self.by_id.get(&statement_id)?;
        self.glosses[g].statements.get(p + 1)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut declared = None;
        let mut rows = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CorpusLine<S> = serde_json::from_str(&line)
                .map_err(|e| HstError::Parse { line: line_no, message: e.to_string() })?;
            match parsed {
                CorpusLine::Header(h) => {
                    if !rows.is_empty() || declared.is_some() {
                        return Err(HstError::Parse {
                            line: line_no,
                            message: "dimension header must be the first record".into(),
                        });
                    }
                    if h.dimension == 0 {
                        return Err(HstError::Parse { line: line_no, message: "dimension must be positive".into() });
                    }
                    declared = Some(h.dimension);
                }
                CorpusLine::Statement(r) => {
                    let embedding = EmbeddingVector::new(r.embedding)
                        .map_err(|e| HstError::Parse { line: line_no, message: e.to_string() })?;
                    rows.push((
                        line_no,
                        SubActionStatement {
                            statement_id: r.statement_id,
                            gloss_id: r.gloss_id,
                            position: r.position,
                            text: r.text,
                            embedding,
                        },
                        r.gloss_text,
                    ));
                }
            }
        }
        Self::assemble(rows, declared)
    }

    /// Writes the dimension header followed by one record per statement in
    /// file order.
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{{\"dimension\":{}}}", self.dimension)?;
        for s in self.statements() {
            let record = StatementRecord {
                statement_id: s.statement_id,
                gloss_id: s.gloss_id,
                gloss_text: self.glosses[s.gloss_id].gloss_text.clone(),
                position: s.position,
                text: s.text.clone(),
                embedding: s.embedding.as_slice().to_vec(),
            };
            serde_json::to_writer(&mut w, &record)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Per-frame visual features, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualSequence<S> {
    pub video_id: String,
    frames: Array2<S>,
}

impl<S: Scalar> VisualSequence<S> {
    pub fn new(video_id: impl Into<String>, frames: Array2<S>) -> Result<Self> {
        let (t, d) = frames.dim();
        if t == 0 {
            return Err(HstError::EmptyInput("visual sequence has no frames".into()));
        }
        if d == 0 {
            return Err(HstError::EmptyInput("visual sequence has dimension 0".into()));
        }
        check_finite(&frames)?;
        Ok(Self { video_id: video_id.into(), frames: frames.as_standard_layout().into_owned() })
    }

    pub fn frames(&self) -> &Array2<S> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<S> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, S> {
        self.frames.row(t)
    }

    /// Frame `t` as a contiguous slice.
    pub fn frame(&self, t: usize) -> &[S] {
        let d = self.dim();
        &self.frames.as_slice().expect("standard layout")[t * d..(t + 1) * d]
    }

    /// Reads a feature matrix file; the video id is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let id = id.strip_suffix(".feat").map(str::to_owned).unwrap_or(id);
        let frames = read_matrix_tsv(BufReader::new(File::open(path)?))?;
        Self::new(id, frames)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_matrix_file(path, &self.frames)
    }
}

/// T x (N+1) per-frame class scores; the last column is the CTC blank.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitMatrix<S> {
    scores: Array2<S>,
}

impl<S: Scalar> LogitMatrix<S> {
    pub fn new(scores: Array2<S>) -> Result<Self> {
        let (t, c) = scores.dim();
        if t == 0 {
            return Err(HstError::EmptyInput("logit matrix has no frames".into()));
        }
        if c < 2 {
            return Err(HstError::Shape(format!("logit matrix needs at least one class plus blank, got {c} columns")));
        }
        check_finite(&scores)?;
        Ok(Self { scores: scores.as_standard_layout().into_owned() })
    }

    /// Like [`LogitMatrix::new`] but also checks the column count equals `n_classes + 1`.
    pub fn with_classes(scores: Array2<S>, n_classes: usize) -> Result<Self> {
        if scores.ncols() != n_classes + 1 {
            return Err(HstError::Shape(format!(
                "expected {} columns for {n_classes} classes plus blank, found {}",
                n_classes + 1,
                scores.ncols()
            )));
        }
        Self::new(scores)
    }

    pub fn scores(&self) -> &Array2<S> {
        &self.scores
    }

    pub fn into_scores(self) -> Array2<S> {
        self.scores
    }

    pub fn frames(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.scores.ncols() - 1
    }

    pub fn blank(&self) -> usize {
        self.scores.ncols() - 1
    }

    pub fn row(&self, t: usize) -> &[S] {
        let c = self.scores.ncols();
        &self.scores.as_slice().expect("standard layout")[t * c..(t + 1) * c]
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_matrix_tsv(BufReader::new(File::open(path)?))?)
    }

    pub fn load_with_classes(path: impl AsRef<Path>, n_classes: usize) -> Result<Self> {
        Self::with_classes(read_matrix_tsv(BufReader::new(File::open(path)?))?, n_classes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_matrix_file(path, &self.scores)
    }
}

/// Ordered gloss labels; never contains the blank.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GlossSequence(pub Vec<usize>);

impl GlossSequence {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks every label lies in `0..n_classes`.
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        match self.0.iter().find(|&&g| g >= n_classes) {
            Some(g) => Err(HstError::Domain(format!("label {g} outside vocabulary of {n_classes} glosses"))),
            None => Ok(()),
        }
    }

    pub fn parse(line: &str) -> Result<Self> {
        line.split_whitespace()
            .map(|tok| {
                tok.parse::<usize>()
                    .map_err(|e| HstError::Parse { line: 1, message: format!("gloss id {tok:?}: {e}") })
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    /// Reads a gloss sequence file. Each line is one sequence; a file with a
    /// single line (or an empty file) yields exactly one sequence.
    pub fn load_all(path: impl AsRef<Path>) -> Result<Vec<Self>> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        let body = text.strip_suffix('\n').unwrap_or(&text);
        body.split('\n')
            .enumerate()
            .map(|(i, l)| {
                Self::parse(l.trim_end_matches('\r')).map_err(|e| match e {
                    HstError::Parse { message, .. } => HstError::Parse { line: i + 1, message },
                    other => other,
                })
            })
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut all = Self::load_all(path)?;
        if all.len() != 1 {
            return Err(HstError::Shape(format!("expected one gloss sequence, found {}", all.len())));
        }
        Ok(all.remove(0))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, format!("{self}\n"))?;
        Ok(())
    }
}

impl fmt::Display for GlossSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, g) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{g}")?;
        }
        Ok(())
    }
}

impl From<Vec<usize>> for GlossSequence {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

fn check_finite<S: Scalar>(m: &Array2<S>) -> Result<()> {
    for ((r, c), v) in m.indexed_iter() {
        if !v.is_finite() {
            return Err(HstError::NonFinite(format!("row {r}, column {c}")));
        }
    }
    Ok(())
}

/// Reads `dims\t<rows>\t<cols>` followed by `rows` lines of tab-separated values.
pub fn read_matrix_tsv<S: Scalar>(reader: impl BufRead) -> Result<Array2<S>> {
    let mut lines = reader.lines().enumerate();
    let (rows, cols) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(HstError::Parse { line: 1, message: "missing dims header".into() });
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields[0] != "dims" {
            return Err(HstError::Parse { line: i + 1, message: "expected header dims\\t<rows>\\t<cols>".into() });
        }
        let parse = |s: &str| {
            s.trim().parse::<usize>().map_err(|e| HstError::Parse { line: i + 1, message: format!("{s:?}: {e}") })
        };
        break (parse(fields[1])?, parse(fields[2])?);
    };
    if rows == 0 {
        return Err(HstError::EmptyInput("matrix declares zero rows".into()));
    }
    if cols == 0 {
        return Err(HstError::EmptyInput("matrix declares zero columns".into()));
    }

    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if seen == rows {
            return Err(HstError::Shape(format!("more than the declared {rows} rows (line {})", i + 1)));
        }
        let before = data.len();
        for tok in line.split('\t') {
            let v: S = tok.trim().parse().map_err(|_| HstError::Parse {
                line: i + 1,
                message: format!("invalid number {tok:?}"),
            })?;
            if !v.is_finite() {
                return Err(HstError::NonFinite(format!("line {}: {tok:?}", i + 1)));
            }
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(HstError::Shape(format!(
                "line {} has {} values, expected {cols}",
                i + 1,
                data.len() - before
            )));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(HstError::Shape(format!("declared {rows} rows, found {seen}")));
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("row count and width checked"))
}

pub fn write_matrix_tsv<S: Scalar>(mut w: impl Write, m: &Array2<S>) -> Result<()> {
    writeln!(w, "dims\t{}\t{}", m.nrows(), m.ncols())?;
    for row in m.rows() {
        let mut first = true;
        for v in row {
            if !first {
                w.write_all(b"\t")?;
            }
            first = false;
            write!(w, "{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn write_matrix_file<S: Scalar>(path: impl AsRef<Path>, m: &Array2<S>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix_tsv(&mut w, m)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn record(id: u64, g: usize, pos: usize, emb: &str) -> String {
        format!(
            r#"{{"statement_id":{id},"gloss_id":{g},"gloss_text":"G{g}","position":{pos},"text":"s{id}","embedding":{emb}}}"#
        )
    }

    #[test]
    fn minimal_corpus() {
        let text = record(0, 0, 0, "[0.5,-1.0]");
        let c = DescriptionCorpus::<f64>::read(text.as_bytes()).unwrap();
        assert_eq!(c.vocabulary_size(), 1);
        assert_eq!(c.dimension(), 2);
        let s: Vec<_> = c.statements().collect();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].position, 0);
    }

    #[test]
    fn header_dimension_mismatch() {
        let text = format!("{{\"dimension\":2}}\n{}\n{}\n", record(0, 0, 0, "[1,2]"), record(1, 0, 1, "[1,2,3]"));
        let err = DescriptionCorpus::<f64>::read(text.as_bytes()).unwrap_err();
        assert!(matches!(err, HstError::DimensionMismatch { expected: 2, found: 3 }), "{err}");
        // without a header the first statement fixes the dimension
        let text = format!("{}\n{}\n", record(0, 0, 0, "[1,2]"), record(1, 0, 1, "[1,2,3]"));
        assert!(matches!(
            DescriptionCorpus::<f64>::read(text.as_bytes()),
            Err(HstError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn duplicate_position_rejected() {
        let text = format!("{}\n{}\n", record(0, 0, 0, "[1,2]"), record(1, 0, 0, "[1,2]"));
        let err = DescriptionCorpus::<f64>::read(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\nnot json\n", record(0, 0, 0, "[1,2]"));
        match DescriptionCorpus::<f64>::read(text.as_bytes()) {
            Err(HstError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gloss_ids_must_be_contiguous() {
        let text = format!("{}\n{}\n", record(0, 0, 0, "[1,2]"), record(1, 2, 0, "[1,2]"));
        assert!(matches!(DescriptionCorpus::<f64>::read(text.as_bytes()), Err(HstError::Consistency(_))));
    }

    #[test]
    fn out_of_order_positions_rejected() {
        let text = format!("{}\n{}\n", record(0, 0, 1, "[1,2]"), record(1, 0, 0, "[1,2]"));
        assert!(DescriptionCorpus::<f64>::read(text.as_bytes()).is_err());
    }

    #[test]
    fn successor_lookup_and_file_order() {
        let text = [
            record(10, 1, 0, "[1,0]"),
            record(11, 0, 0, "[0,1]"),
            record(12, 1, 1, "[1,1]"),
        ]
        .join("\n");
        let c = DescriptionCorpus::<f64>::read(text.as_bytes()).unwrap();
        let ids: Vec<u64> = c.statements().map(|s| s.statement_id).collect();
        assert_eq!(ids, vec![10, 11, 12]);
        assert_eq!(c.successor(10).map(|s| s.statement_id), Some(12));
        assert!(c.successor(12).is_none());
        assert!(c.successor(11).is_none());
        assert_eq!(c.glosses()[1].gloss_text, "G1");
    }

    #[test]
    fn corpus_round_trip() {
        let text = [record(0, 0, 0, "[0.1,0.30000000000000004]"), record(1, 0, 1, "[1e-300,-2.5]")].join("\n");
        let c = DescriptionCorpus::<f64>::read(text.as_bytes()).unwrap();
        let mut buf = Vec::new();
        c.write(&mut buf).unwrap();
        let back = DescriptionCorpus::<f64>::read(buf.as_slice()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn feature_matrix_shapes() {
        let m: Array2<f64> = read_matrix_tsv("dims\t3\t2\n1\t2\n3\t4\n5\t6\n".as_bytes()).unwrap();
        assert_eq!(m.dim(), (3, 2));
        assert!(matches!(read_matrix_tsv::<f64>("dims\t2\t2\n1\t2\n3\n".as_bytes()), Err(HstError::Shape(_))));
        assert!(matches!(read_matrix_tsv::<f64>("dims\t1\t2\n1\tNaN\n".as_bytes()), Err(HstError::NonFinite(_))));
        assert!(read_matrix_tsv::<f64>("dims\t0\t2\n".as_bytes()).is_err());
        assert!(read_matrix_tsv::<f64>("".as_bytes()).is_err());
        assert!(matches!(read_matrix_tsv::<f64>("dims\t2\t2\n1\t2\n".as_bytes()), Err(HstError::Shape(_))));
    }

    #[test]
    fn logits_column_check() {
        let m = array![[0.2f64, 0.3, 0.5], [0.1, 0.1, 0.8]];
        assert!(LogitMatrix::with_classes(m.clone(), 2).is_ok());
        assert!(matches!(LogitMatrix::with_classes(m, 3), Err(HstError::Shape(_))));
    }

    #[test]
    fn logits_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.tsv");
        let m = LogitMatrix::new(array![[0.1f64, 0.7, 0.2], [1.0 / 3.0, 1e-17, 2.0 / 3.0]]).unwrap();
        m.save(&p).unwrap();
        assert_eq!(LogitMatrix::<f64>::load(&p).unwrap(), m);
        assert!(matches!(LogitMatrix::<f64>::load_with_classes(&p, 3), Err(HstError::Shape(_))));
    }

    #[test]
    fn gloss_sequence_text() {
        let s = GlossSequence::parse("3 0  7").unwrap();
        assert_eq!(s.labels(), &[3, 0, 7]);
        assert_eq!(s.to_string(), "3 0 7");
        assert!(GlossSequence::parse("").unwrap().is_empty());
        assert!(s.validate(8).is_ok());
        assert!(s.validate(7).is_err());
        assert!(GlossSequence::parse("1 x").is_err());
    }

    proptest! {
        #[test]
        fn matrix_tsv_round_trip_is_bit_exact(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 36),
        ) {
            let m = Array2::from_shape_fn((rows, cols), |(r, c)| seed[r * 6 + c]);
            let mut buf = Vec::new();
            write_matrix_tsv(&mut buf, &m).unwrap();
            let back: Array2<f64> = read_matrix_tsv(buf.as_slice()).unwrap();
            for (a, b) in m.iter().zip(back.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn f32_matrix_round_trip_is_bit_exact(vals in proptest::collection::vec(proptest::num::f32::NORMAL, 12)) {
            let m = Array2::from_shape_vec((3, 4), vals).unwrap();
            let mut buf = Vec::new();
            write_matrix_tsv(&mut buf, &m).unwrap();
            let back: Array2<f32> = read_matrix_tsv(buf.as_slice()).unwrap();
            for (a, b) in m.iter().zip(back.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
