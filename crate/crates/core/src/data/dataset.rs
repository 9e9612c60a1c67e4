use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::numerics::Tensor;

use super::DataError;

/// A multivariate series: `len` timesteps by `channels` channels, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesDataset {
    values: Tensor,
    labels: Option<Vec<u8>>,
    channel_names: Option<Vec<String>>,
}

impl TimeSeriesDataset {
    pub fn new(values: Tensor, labels: Option<Vec<u8>>) -> Result<Self, DataError> {
        if values.rank() != 2 {
            return Err(DataError::Shape(values.shape().to_vec()));
        }
        if let Some(pos) = values.data().iter().position(|v| !v.is_finite()) {
            let cols = values.shape()[1];
            return Err(DataError::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        if let Some(l) = &labels {
            if l.len() != values.shape()[0] {
                return Err(DataError::LabelLength {
                    labels: l.len(),
                    rows: values.shape()[0],
                });
            }
            if l.iter().any(|&v| v > 1) {
                return Err(DataError::LabelValue);
            }
        }
        Ok(Self {
            values,
            labels,
            channel_names: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<u8>>) -> Result<Self, DataError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != cols) {
            return Err(DataError::Ragged {
                line: i + 1,
                expected: cols,
                found: rows[i].len(),
            });
        }
        let data = rows.iter().flatten().copied().collect();
        let values = Tensor::matrix(rows.len(), cols, data).expect("consistent rows");
        Self::new(values, labels)
    }

    pub fn with_channel_names(mut self, names: Vec<String>) -> Self {
        self.channel_names = Some(names);
        self
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn channel_names(&self) -> Option<&[String]> {
        self.channel_names.as_deref()
    }

    /// Rows `[start, end)` as a `[end-start x channels]` tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let d = self.channels();
        Tensor::matrix(end - start, d, self.values.data()[start * d..end * d].to_vec())
            .expect("row slice")
    }

    /// Splits at `at` into `(head, tail)`, labels following their rows.
    pub fn split_at(&self, at: usize) -> (Self, Self) {
        let at = at.min(self.len());
        let mk = |s: usize, e: usize| Self {
            values: self.slice_rows(s, e),
            labels: self.labels.as_ref().map(|l| l[s..e].to_vec()),
            channel_names: self.channel_names.clone(),
        };
        (mk(0, at), mk(at, self.len()))
    }

    /// Reads a numeric CSV (rows are timesteps) and an optional label file
    /// holding one 0/1 per row. For multi-column label files the last column
    /// is used; a non-numeric first line in the label file is treated as a
    /// header.
    pub fn load_csv(path: &Path, has_header: bool, label_path: Option<&Path>) -> Result<Self, DataError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(has_header)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;

        let names = if has_header {
            let h = reader
                .headers()
                .map_err(|e| DataError::Io(e.to_string()))?;
            Some(h.iter().map(str::to_owned).collect::<Vec<_>>())
        } else {
            None
        };

        let mut data = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (i, record) in reader.records().enumerate() {
            let line = i + 1 + usize::from(has_header);
            let record = record.map_err(|e| DataError::Io(format!("line {line}: {e}")))?;
            let expected = *cols.get_or_insert(record.len());
            if record.len() != expected {
                return Err(DataError::Ragged {
                    line,
                    expected,
                    found: record.len(),
                });
            }
            for (col, cell) in record.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                    line,
                    col: col + 1,
                    cell: cell.to_owned(),
                })?;
                if !v.is_finite() {
                    return Err(DataError::NonFinite { row: rows, col });
                }
                data.push(v);
            }
            rows += 1;
        }
        let cols = cols.ok_or(DataError::Empty)?;
        let values = Tensor::matrix(rows, cols, data).expect("rectangular");

        let labels = label_path.map(read_labels).transpose()?;
        let mut ds = Self::new(values, labels)?;
        if let Some(n) = names {
            if n.len() == cols {
                ds.channel_names = Some(n);
            }
        }
        Ok(ds)
    }

    /// Writes values as CSV using the shortest decimal form that round-trips
    /// exactly, with a header when channel names are known.
    pub fn save_csv(&self, path: &Path) -> Result<(), DataError> {
        let file = File::create(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        let io = |e: std::io::Error| DataError::Io(e.to_string());
        if let Some(names) = &self.channel_names {
            writeln!(w, "{}", names.join(",")).map_err(io)?;
        }
        for t in 0..self.len() {
            let line: Vec<String> = self.row(t).iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn save_labels(&self, path: &Path) -> Result<(), DataError> {
        let labels = self.labels.as_ref().ok_or(DataError::Unlabeled)?;
        let mut out = String::with_capacity(labels.len() * 2);
        for l in labels {
            out.push(if *l == 1 { '1' } else { '0' });
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| DataError::Io(e.to_string()))
    }
}

fn read_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let cell = trimmed.rsplit(',').next().unwrap_or("").trim();
        match cell.parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => labels.push(v as u8),
            Ok(_) => {
                return Err(DataError::NonNumeric {
                    line: line_no,
                    col: 1,
                    cell: cell.to_owned(),
                })
            }
            Err(_) if i == 0 => continue, // header
            Err(_) => {
                return Err(DataError::NonNumeric {
                    line: line_no,
                    col: 1,
                    cell: cell.to_owned(),
                })
            }
        }
    }
    Ok(labels)
}
