//! Versioned plain-text formats for corpora and models.
//!
//! Every file opens with a magic line (`TAIDLAB-CORPUS 1`, `TAIDLAB-TABULAR 1`
//! or `TAIDLAB-LINEAR 1`), then `key value` header lines in a fixed order,
//! then one whitespace-separated row per line. Floats are written in
//! shortest round-trip scientific notation so a reload is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{ContextIndexer, Corpus, FeatureMap, LinearModel, StudentModel, TabularModel};
use crate::error::{Result, TaidError};

pub const CORPUS_MAGIC: &str = "TAIDLAB-CORPUS 1";
pub const TABULAR_MAGIC: &str = "TAIDLAB-TABULAR 1";
pub const LINEAR_MAGIC: &str = "TAIDLAB-LINEAR 1";

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{CORPUS_MAGIC}").unwrap();
    writeln!(out, "vocab {}", corpus.vocab).unwrap();
    writeln!(out, "order {}", corpus.order).unwrap();
    writeln!(out, "sequences {}", corpus.sequences.len()).unwrap();
    for seq in &corpus.sequences {
        let line: Vec<String> = seq.iter().map(u32::to_string).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    fs::write(path, out).map_err(|e| TaidError::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| TaidError::io(path, e))?;
    let mut r = Reader::new(path, &text);
    r.magic(CORPUS_MAGIC)?;
    let vocab = r.header("vocab")?;
    let order = r.header("order")?;
    let n: usize = r.header("sequences")?;
    let mut sequences = Vec::with_capacity(n);
    for _ in 0..n {
        sequences.push(r.row::<u32>()?);
    }
    Corpus::new(vocab, order, sequences).map_err(|e| r.fail(e.to_string()))
}

pub fn write_tabular(path: &Path, model: &TabularModel) -> Result<()> {
    fs::write(path, tabular_text(model)).map_err(|e| TaidError::io(path, e))
}

pub fn read_tabular(path: &Path) -> Result<TabularModel> {
    match read_model(path)? {
        StudentModel::Tabular(m) => Ok(m),
        StudentModel::Linear(_) => Err(TaidError::Format {
            path: path.into(),
            reason: "expected a tabular model, found a linear one".into(),
        }),
    }
}

pub fn write_model(path: &Path, model: &StudentModel) -> Result<()> {
    let text = match model {
        StudentModel::Tabular(m) => tabular_text(m),
        StudentModel::Linear(m) => linear_text(m),
    };
    fs::write(path, text).map_err(|e| TaidError::io(path, e))
}

pub fn read_model(path: &Path) -> Result<StudentModel> {
    let text = fs::read_to_string(path).map_err(|e| TaidError::io(path, e))?;
    let mut r = Reader::new(path, &text);
    match r.peek_line() {
        Some(TABULAR_MAGIC) => read_tabular_body(&mut r).map(StudentModel::Tabular),
        Some(LINEAR_MAGIC) => read_linear_body(&mut r).map(StudentModel::Linear),
        other => Err(r.fail(format!("unknown model header {other:?}"))),
    }
}

fn tabular_text(model: &TabularModel) -> String {
    let ix = model.indexer();
    let mut out = String::new();
    writeln!(out, "{TABULAR_MAGIC}").unwrap();
    writeln!(out, "vocab {}", ix.vocab()).unwrap();
    writeln!(out, "order {}", ix.order()).unwrap();
    writeln!(out, "contexts {}", ix.contexts()).unwrap();
    writeln!(out, "exact {}", ix.is_exact()).unwrap();
    writeln!(out, "hash_seed {}", ix.hash_seed()).unwrap();
    writeln!(out, "rows {}", ix.rows()).unwrap();
    write_matrix(&mut out, model.logits());
    out
}

fn read_tabular_body(r: &mut Reader) -> Result<TabularModel> {
    r.magic(TABULAR_MAGIC)?;
    let vocab = r.header("vocab")?;
    let order = r.header("order")?;
    let contexts: usize = r.header("contexts")?;
    let exact: bool = r.header("exact")?;
    let hash_seed = r.header("hash_seed")?;
    let rows: usize = r.header("rows")?;
    let ix = ContextIndexer::new(vocab, order, Some(contexts), hash_seed)
        .map_err(|e| r.fail(e.to_string()))?;
    if ix.is_exact() != exact || ix.rows() != rows {
        return Err(r.fail("header is inconsistent with the context layout".into()));
    }
    let logits = r.matrix(rows, vocab)?;
    TabularModel::from_logits(ix, logits).map_err(|e| r.fail(e.to_string()))
}

fn linear_text(model: &LinearModel) -> String {
    let mut out = String::new();
    writeln!(out, "{LINEAR_MAGIC}").unwrap();
    writeln!(out, "vocab {}", model.weights().ncols()).unwrap();
    match *model.feature_map() {
        FeatureMap::Bias => writeln!(out, "features bias").unwrap(),
        FeatureMap::LastToken { .. } => writeln!(out, "features last_token").unwrap(),
        FeatureMap::HashedContext {
            order,
            buckets,
            seed,
        } => {
            writeln!(out, "features hashed").unwrap();
            writeln!(out, "feature_order {order}").unwrap();
            writeln!(out, "buckets {buckets}").unwrap();
            writeln!(out, "hash_seed {seed}").unwrap();
        }
    }
    writeln!(out, "rows {}", model.weights().nrows()).unwrap();
    write_matrix(&mut out, model.weights());
    out
}

fn read_linear_body(r: &mut Reader) -> Result<LinearModel> {
    r.magic(LINEAR_MAGIC)?;
    let vocab = r.header("vocab")?;
    let kind: String = r.header("features")?;
    let fmap = match kind.as_str() {
        "bias" => FeatureMap::Bias,
        "last_token" => FeatureMap::LastToken { vocab },
        "hashed" => FeatureMap::HashedContext {
            order: r.header("feature_order")?,
            buckets: r.header("buckets")?,
            seed: r.header("hash_seed")?,
        },
        other => return Err(r.fail(format!("unknown feature map `{other}`"))),
    };
    let rows = r.header("rows")?;
    let weights = r.matrix(rows, vocab)?;
    LinearModel::new(fmap, weights).map_err(|e| r.fail(e.to_string()))
}

fn write_matrix(out: &mut String, m: &Array2<f64>) {
    for row in m.outer_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", cells.join(" ")).unwrap();
    }
}

struct Reader<'a> {
    path: PathBuf,
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    line_no: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &Path, text: &'a str) -> Self {
        Self {
            path: path.into(),
            lines: text.lines().enumerate().peekable(),
            line_no: 0,
        }
    }

    fn fail(&self, reason: String) -> TaidError {
        TaidError::Format {
            path: self.path.clone(),
            reason: format!("line {}: {reason}", self.line_no),
        }
    }

    fn peek_line(&mut self) -> Option<&'a str> {
        self.lines.peek().map(|(_, l)| l.trim())
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line_no = i + 1;
                Ok(l.trim())
            }
            None => Err(self.fail("unexpected end of file".into())),
        }
    }

    fn magic(&mut self, expected: &str) -> Result<()> {
        let line = self.next_line()?;
        if line != expected {
            return Err(self.fail(format!("expected `{expected}`, found `{line}`")));
        }
        Ok(())
    }

    fn header<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let line = self.next_line()?;
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| self.fail(format!("expected `{key} <value>`")))?;
        if k != key {
            return Err(self.fail(format!("expected key `{key}`, found `{k}`")));
        }
        v.trim()
            .parse()
            .map_err(|_| self.fail(format!("bad value for `{key}`: `{v}`")))
    }

    fn row<T: std::str::FromStr>(&mut self) -> Result<Vec<T>> {
        let line = self.next_line()?;
        line.split_whitespace()
            .map(|tok| tok.parse().map_err(|_| self.fail(format!("bad number `{tok}`"))))
            .collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = self.row::<f64>()?;
            if row.len() != cols {
                return Err(self.fail(format!("expected {cols} values, found {}", row.len())));
            }
            data.extend(row);
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
    }
}
