//! Matrix CSV, term-document input, and label files.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Headerless, comma-separated, 17 significant digits.
pub fn write_matrix_csv(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<DenseMatrix> {
    let mut reader = csv_reader(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = line_of(&record);
        let row = record
            .iter()
            .map(|f| parse_f64(f, line))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Ok(DenseMatrix::zeros(0, 0));
    }
    DenseMatrix::from_rows(&rows)
}

/// A term-document matrix with rows indexed by term and columns by document.
#[derive(Debug, Clone, PartialEq)]
pub struct TermDoc {
    pub matrix: DenseMatrix,
    pub vocabulary: Vec<String>,
    pub doc_ids: Vec<String>,
    /// Class index per document, when a label file was given.
    pub labels: Option<Vec<usize>>,
    /// Name of each class index.
    pub class_names: Vec<String>,
}

impl TermDoc {
    pub fn classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Reads a MatrixMarket coordinate file (detected by its banner) or a dense
/// CSV whose first row holds document ids and first column holds terms.
/// MatrixMarket input has no names, so terms and documents are identified
/// by their 0-based index.
pub fn load_term_doc(path: &Path, labels: Option<&Path>) -> Result<TermDoc> {
    let first = {
        let mut line = String::new();
        BufReader::new(File::open(path)?).read_line(&mut line)?;
        line
    };
    let (matrix, vocabulary, doc_ids) = if first.starts_with("%%MatrixMarket") {
        let m = read_matrix_market(path)?;
        let vocab = (0..m.rows()).map(|i| i.to_string()).collect();
        let docs = (0..m.cols()).map(|j| j.to_string()).collect();
        (m, vocab, docs)
    } else {
        read_dense_term_doc(path)?
    };
    matrix.check_nonnegative()?;
    let mut doc = TermDoc {
        matrix,
        vocabulary,
        doc_ids,
        labels: None,
        class_names: Vec::new(),
    };
    if let Some(p) = labels {
        let (labels, names) = load_labels(p, &doc.doc_ids)?;
        doc.labels = Some(labels);
        doc.class_names = names;
    }
    Ok(doc)
}

fn read_dense_term_doc(path: &Path) -> Result<(DenseMatrix, Vec<String>, Vec<String>)> {
    let mut reader = csv_reader(path)?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_err)?,
        None => return Err(Error::Parse { line: 1, message: "empty file".into() }),
    };
    let doc_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut vocab = Vec::new();
    let mut rows = Vec::new();
    for record in records {
        let record = record.map_err(csv_err)?;
        let line = line_of(&record);
        vocab.push(record.get(0).unwrap_or("").to_string());
        let row = record
            .iter()
            .skip(1)
            .map(|f| parse_f64(f, line))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let m = if rows.is_empty() {
        DenseMatrix::zeros(0, doc_ids.len())
    } else {
        DenseMatrix::from_rows(&rows)?
    };
    Ok((m, vocab, doc_ids))
}

/// Coordinate format, `real`/`integer`/`pattern` fields, `general` or
/// `symmetric`. Repeated coordinates are summed.
pub fn read_matrix_market(path: &Path) -> Result<DenseMatrix> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, banner) = lines
        .next()
        .ok_or(Error::Parse { line: 1, message: "empty file".into() })?;
    let banner = banner?;
    let parts: Vec<String> = banner.split_whitespace().map(str::to_ascii_lowercase).collect();
    if parts.len() != 5 || parts[0] != "%%matrixmarket" || parts[1] != "matrix" || parts[2] != "coordinate" {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported MatrixMarket banner: {banner}"),
        });
    }
    let pattern = match parts[3].as_str() {
        "real" | "integer" => false,
        "pattern" => true,
        other => return Err(Error::Parse { line: 1, message: format!("unsupported field {other}") }),
    };
    let symmetric = match parts[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(Error::Parse { line: 1, message: format!("unsupported symmetry {other}") }),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut m = DenseMatrix::zeros(0, 0);
    let mut seen = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        let Some((rows, cols, nnz)) = size else {
            if fields.len() != 3 {
                return Err(Error::Parse { line: line_no, message: "expected `rows cols entries`".into() });
            }
            let r = parse_usize(fields[0], line_no)?;
            let c = parse_usize(fields[1], line_no)?;
            let n = parse_usize(fields[2], line_no)?;
            size = Some((r, c, n));
            m = DenseMatrix::zeros(r, c);
            continue;
        };
        let want = if pattern { 2 } else { 3 };
        if fields.len() != want {
            return Err(Error::Parse { line: line_no, message: format!("expected {want} fields") });
        }
        let i = parse_usize(fields[0], line_no)?;
        let j = parse_usize(fields[1], line_no)?;
        if i == 0 || j == 0 || i > rows || j > cols {
            return Err(Error::Parse { line: line_no, message: format!("coordinate ({i}, {j}) out of range") });
        }
        let v = if pattern { 1.0 } else { parse_f64(fields[2], line_no)? };
        m.set(i - 1, j - 1, m.get(i - 1, j - 1) + v);
        if symmetric && i != j {
            m.set(j - 1, i - 1, m.get(j - 1, i - 1) + v);
        }
        seen += 1;
        if seen > nnz {
            return Err(Error::Parse { line: line_no, message: format!("more than {nnz} entries") });
        }
    }
    match size {
        None => Err(Error::Parse { line: 1, message: "missing size line".into() }),
        Some((_, _, nnz)) if seen != nnz => Err(Error::Parse {
            line: 0,
            message: format!("expected {nnz} entries, found {seen}"),
        }),
        _ => Ok(m),
    }
}

/// Reads `doc_id,class` rows (an optional `doc_id,class` header is skipped)
/// and aligns them with `doc_ids`. Every document needs exactly one label.
/// Classes that are all nonnegative integers keep their values; otherwise
/// names are sorted and numbered.
pub fn load_labels(path: &Path, doc_ids: &[String]) -> Result<(Vec<usize>, Vec<String>)> {
    let mut reader = csv_reader(path)?;
    let position: HashMap<&str, usize> = doc_ids.iter().enumerate().map(|(j, d)| (d.as_str(), j)).collect();
    let mut raw: Vec<Option<String>> = vec![None; doc_ids.len()];
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let line = line_of(&record);
        if record.len() != 2 {
            return Err(Error::Parse { line, message: "expected doc_id,class".into() });
        }
        let (doc, class) = (&record[0], &record[1]);
        if n == 0 && doc.eq_ignore_ascii_case("doc_id") && class.eq_ignore_ascii_case("class") {
            continue;
        }
        let Some(&j) = position.get(doc) else {
            return Err(Error::Parse { line, message: format!("unknown document {doc}") });
        };
        if raw[j].replace(class.to_string()).is_some() {
            return Err(Error::Parse { line, message: format!("document {doc} labeled twice") });
        }
    }
    if let Some(j) = raw.iter().position(Option::is_none) {
        return Err(Error::Parse { line: 0, message: format!("document {} has no label", doc_ids[j]) });
    }
    let raw: Vec<String> = raw.into_iter().map(Option::unwrap).collect();

    let numeric: Option<Vec<usize>> = raw.iter().map(|c| c.parse::<usize>().ok()).collect();
    if let Some(ids) = numeric {
        let classes = ids.iter().max().map_or(0, |m| m + 1);
        return Ok((ids, (0..classes).map(|c| c.to_string()).collect()));
    }
    let mut names = raw.clone();
    names.sort();
    names.dedup();
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    Ok((raw.iter().map(|c| index[c.as_str()]).collect(), names))
}

/// Writes `doc_id,class` with 0-based column indices as document ids.
pub fn write_labels_csv(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "doc_id,class")?;
    for (j, l) in labels.iter().enumerate() {
        writeln!(w, "{j},{l}")?;
    }
    w.flush()?;
    Ok(())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(File::open(path)?))
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("not a number: {s:?}"),
    })
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.parse::<usize>().map_err(|_| Error::Parse {
        line,
        message: format!("not a nonnegative integer: {s:?}"),
    })
}
