use crate::numerics::Tensor;

use super::{DataError, TimeSeriesDataset};

/// Fixed-length windows cut from a series, with their start offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub windows: Vec<Tensor>,
    pub offsets: Vec<usize>,
    pub window_len: usize,
    /// Length of the source series.
    pub series_len: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Positions covered by the union of windows.
    pub fn covered_len(&self) -> usize {
        self.offsets
            .iter()
            .map(|o| o + self.window_len)
            .max()
            .unwrap_or(0)
    }
}

/// Non-overlapping windows of length `window_len`; the trailing
/// `len % window_len` points are dropped.
pub fn make_windows(ds: &TimeSeriesDataset, window_len: usize) -> Result<WindowSet, DataError> {
    if window_len == 0 {
        return Err(DataError::ZeroWindow);
    }
    if ds.len() < window_len {
        return Err(DataError::TooShort {
            len: ds.len(),
            window: window_len,
        });
    }
    let count = ds.len() / window_len;
    let offsets: Vec<usize> = (0..count).map(|i| i * window_len).collect();
    let windows = offsets
        .iter()
        .map(|&o| ds.slice_rows(o, o + window_len))
        .collect();
    Ok(WindowSet {
        windows,
        offsets,
        window_len,
        series_len: ds.len(),
    })
}

/// Windows for scoring: the non-overlapping set, plus one window aligned to
/// the series end when a remainder exists, so every point gets a score.
pub fn make_detection_windows(ds: &TimeSeriesDataset, window_len: usize) -> Result<WindowSet, DataError> {
    let mut set = make_windows(ds, window_len)?;
    if !ds.len().is_multiple_of(window_len) {
        let o = ds.len() - window_len;
        set.windows.push(ds.slice_rows(o, ds.len()));
        set.offsets.push(o);
    }
    Ok(set)
}
