use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};

use super::{attribute_index, BooleanDataset, DatasetMeta, LabelSet};
use crate::error::{Error, Result};

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(format!("cannot open {}", path.display()), e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(format!("cannot create {}", path.display()), e))
}

fn record_line(record: &StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    parse_error(path, line, err.to_string())
}

/// Reads a dense `id,<attr>,...` file whose cells are exactly `0` or `1`.
pub fn ingest_dense_csv(path: &Path, meta: DatasetMeta) -> Result<BooleanDataset> {
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(Trim::None)
        .from_reader(open(path)?);
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(path, e))?,
        None => return Err(parse_error(path, 1, "missing header row")),
    };
    if header.get(0) != Some("id") {
        return Err(parse_error(path, 1, "header must start with `id`"));
    }
    let attributes: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut seen_attr = HashSet::new();
    for a in &attributes {
        if !seen_attr.insert(a.as_str()) {
            return Err(parse_error(path, 1, format!("duplicate attribute `{a}`")));
        }
    }

    let width = header.len();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut seen_ids = HashSet::new();
    for record in records {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        if record.len() != width {
            return Err(parse_error(
                path,
                line,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        let id = record.get(0).unwrap_or_default().to_owned();
        if id.is_empty() {
            return Err(parse_error(path, line, "empty process id"));
        }
        if !seen_ids.insert(id.clone()) {
            return Err(parse_error(path, line, format!("duplicate process id `{id}`")));
        }
        let mut row = Vec::new();
        for (j, cell) in record.iter().skip(1).enumerate() {
            match cell {
                "1" => row.push(j as u32),
                "0" => {}
                other => {
                    return Err(parse_error(
                        path,
                        line,
                        format!(
                            "row `{id}`, column `{}`: cell `{other}` is not 0 or 1",
                            attributes[j]
                        ),
                    ))
                }
            }
        }
        ids.push(id);
        rows.push(row);
    }
    BooleanDataset::new(ids, attributes, rows, meta)
}

pub fn export_dense_csv(dataset: &BooleanDataset, path: &Path) -> Result<()> {
    let mut writer = WriterBuilder::new().from_writer(create(path)?);
    let write_err = |e: csv::Error| Error::io(format!("cannot write {}", path.display()), e.into());
    let mut header = Vec::with_capacity(dataset.attribute_count() + 1);
    header.push("id");
    header.extend(dataset.attributes().iter().map(String::as_str));
    writer.write_record(&header).map_err(write_err)?;
    let mut cells = vec!["0"; dataset.attribute_count() + 1];
    for (i, id) in dataset.ids().iter().enumerate() {
        cells.iter_mut().for_each(|c| *c = "0");
        cells[0] = id;
        for &j in dataset.row(i) {
            cells[j as usize + 1] = "1";
        }
        writer.write_record(&cells).map_err(write_err)?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(format!("cannot write {}", path.display()), e))
}

/// The attribute dictionary that accompanies a sparse file: same path with a
/// `.dict` extension.
pub fn sparse_dict_path(path: &Path) -> PathBuf {
    path.with_extension("dict")
}

fn read_dict(path: &Path) -> Result<Vec<String>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
        let name = line.trim_end_matches('\r');
        if name.is_empty() {
            continue;
        }
        if !seen.insert(name.to_owned()) {
            return Err(parse_error(path, n as u64 + 1, format!("duplicate attribute `{name}`")));
        }
        out.push(name.to_owned());
    }
    Ok(out)
}

/// Reads `id,attr,attr,...` lines, using the sibling `.dict` file for the
/// attribute universe and column order.
pub fn ingest_sparse(path: &Path, meta: DatasetMeta) -> Result<BooleanDataset> {
    ingest_sparse_with_dict(path, &sparse_dict_path(path), meta)
}

pub fn ingest_sparse_with_dict(path: &Path, dict: &Path, meta: DatasetMeta) -> Result<BooleanDataset> {
    let attributes = read_dict(dict)?;
    let index = attribute_index(&attributes);
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(Trim::None)
        .from_reader(open(path)?);
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut seen_ids = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        let id = record.get(0).unwrap_or_default().to_owned();
        if id.is_empty() {
            return Err(parse_error(path, line, "empty process id"));
        }
        if !seen_ids.insert(id.clone()) {
            return Err(parse_error(path, line, format!("duplicate process id `{id}`")));
        }
        let mut row = Vec::with_capacity(record.len().saturating_sub(1));
        for name in record.iter().skip(1).filter(|s| !s.is_empty()) {
            match index.get(name) {
                Some(&j) => row.push(j),
                None => {
                    return Err(parse_error(
                        path,
                        line,
                        format!("row `{id}`: unknown attribute `{name}`"),
                    ))
                }
            }
        }
        ids.push(id);
        rows.push(row);
    }
    drop(index);
    BooleanDataset::new(ids, attributes, rows, meta)
}

/// Writes `path` and its `.dict` sibling.
pub fn export_sparse(dataset: &BooleanDataset, path: &Path) -> Result<()> {
    let dict = sparse_dict_path(path);
    let mut out = create(&dict)?;
    let io_err = |p: &Path, e| Error::io(format!("cannot write {}", p.display()), e);
    for a in dataset.attributes() {
        writeln!(out, "{a}").map_err(|e| io_err(&dict, e))?;
    }
    out.flush().map_err(|e| io_err(&dict, e))?;

    let mut writer = WriterBuilder::new().flexible(true).from_writer(create(path)?);
    for (i, id) in dataset.ids().iter().enumerate() {
        let mut record = vec![id.as_str()];
        record.extend(dataset.row(i).iter().map(|&j| dataset.attributes()[j as usize].as_str()));
        writer
            .write_record(&record)
            .map_err(|e| io_err(path, e.into()))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// One process id per line; blank lines and `#` comments are ignored.
pub fn read_labels(path: &Path) -> Result<LabelSet> {
    let reader = BufReader::new(open(path)?);
    let mut labels = LabelSet::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
        let id = line.split('#').next().unwrap_or_default().trim();
        if !id.is_empty() {
            labels.insert(id);
        }
    }
    Ok(labels)
}

pub fn write_labels(labels: &LabelSet, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let err = |e| Error::io(format!("cannot write {}", path.display()), e);
    for id in labels.iter() {
        writeln!(out, "{id}").map_err(err)?;
    }
    out.flush().map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn minimal_dense_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", "id,a,b\np1,0,1\np2,0,0\n");
        let d = ingest_dense_csv(&p, DatasetMeta::default()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.row(0), &[1]);
        assert!(d.row(1).is_empty());
    }

    #[test]
    fn dense_rejects_non_binary_cell_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", "id,a,b\np1,0,1\np2,2,0\n");
        let err = ingest_dense_csv(&p, DatasetMeta::default()).unwrap_err();
        match &err {
            Error::Parse { line, message, .. } => {
                assert_eq!(*line, 3);
                assert!(message.contains("p2"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dense_rejects_ragged_and_duplicate_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "r.csv", "id,a,b\np1,0\n");
        assert!(matches!(
            ingest_dense_csv(&p, DatasetMeta::default()),
            Err(Error::Parse { line: 2, .. })
        ));
        let p = write(dir.path(), "dup.csv", "id,a\np1,0\np1,1\n");
        assert!(matches!(
            ingest_dense_csv(&p, DatasetMeta::default()),
            Err(Error::Parse { line: 3, .. })
        ));
        let p = write(dir.path(), "ws.csv", "id,a\np1, 1\n");
        assert!(ingest_dense_csv(&p, DatasetMeta::default()).is_err());
    }

    #[test]
    fn sparse_lines() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "s.dict", "EVENT_READ\nEVENT_OPEN\nEVENT_CONNECT\n");
        let p = write(dir.path(), "s.sparse", "p1,EVENT_OPEN\np2\np3,\n");
        let d = ingest_sparse(&p, DatasetMeta::default()).unwrap();
        assert_eq!(d.attribute_count(), 3);
        assert_eq!(d.row(0), &[1]);
        assert!(d.row(1).is_empty());
        assert!(d.row(2).is_empty());
    }

    #[test]
    fn sparse_unknown_attribute() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "s.dict", "a\nb\n");
        let p = write(dir.path(), "s.sparse", "p1,a\np2,zzz\n");
        let err = ingest_sparse(&p, DatasetMeta::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("zzz"));
    }

    #[test]
    fn labels_skip_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "l.txt", "# attacks\np1\n\n  p9  # trailing\n");
        let l = read_labels(&p).unwrap();
        assert_eq!(l.iter().collect::<Vec<_>>(), vec!["p1", "p9"]);
    }
}
