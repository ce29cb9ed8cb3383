//! Series storage: a little-endian binary container and a CSV import path.
//!
//! Binary layout: the magic `FSTG1\n`, one ASCII header line
//! `N=<int> T=<int> granularity_min=<int> tod0=<int> dow0=<int>\n`, then
//! N·T f64 values, node-major (node 0's full series first).

use super::SeriesDataset;
use crate::ioutil::atomic_write;
use crate::tensor::Tensor;
use crate::{Error, Result};
use std::path::Path;

const MAGIC: &[u8] = b"FSTG1\n";

pub fn save_series(ds: &SeriesDataset, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(MAGIC.len() + 64 + ds.values.numel() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(
        format!(
            "N={} T={} granularity_min={} tod0={} dow0={}\n",
            ds.nodes(),
            ds.len(),
            ds.granularity_minutes,
            ds.tod0,
            ds.dow0
        )
        .as_bytes(),
    );
    for v in &ds.values.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse { offset, msg: msg.into() }
}

pub fn load_series(path: &Path) -> Result<SeriesDataset> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(parse_err(0, "missing FSTG1 magic"));
    }
    let header_start = MAGIC.len();
    let rel_end = bytes[header_start..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_err(header_start, "unterminated header line"))?;
    let header_end = header_start + rel_end;
    let header = std::str::from_utf8(&bytes[header_start..header_end])
        .map_err(|_| parse_err(header_start, "header is not ASCII"))?;

    let mut fields = [None::<usize>; 5];
    let names = ["N", "T", "granularity_min", "tod0", "dow0"];
    for part in header.split_whitespace() {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| parse_err(header_start, format!("malformed header field '{part}'")))?;
        let slot = names
            .iter()
            .position(|&n| n == key)
            .ok_or_else(|| parse_err(header_start, format!("unknown header field '{key}'")))?;
        let parsed = value
            .parse::<usize>()
            .map_err(|_| parse_err(header_start, format!("invalid value for '{key}'")))?;
        fields[slot] = Some(parsed);
    }
    let take = |i: usize| {
        fields[i].ok_or_else(|| parse_err(header_start, format!("header missing '{}'", names[i])))
    };
    let (n, t, gran, tod0, dow0) = (take(0)?, take(1)?, take(2)?, take(3)?, take(4)?);

    let data_start = header_end + 1;
    let expect = n
        .checked_mul(t)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| parse_err(header_start, "value count overflows"))?;
    let avail = bytes.len() - data_start;
    if avail < expect {
        return Err(parse_err(
            data_start + avail - avail % 8,
            format!("header declares {} values but file holds {}", n * t, avail / 8),
        ));
    }
    if avail > expect {
        return Err(parse_err(data_start + expect, format!("{} trailing bytes", avail - expect)));
    }
    let mut data = Vec::with_capacity(n * t);
    for i in 0..n * t {
        let off = data_start + i * 8;
        let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        if !v.is_finite() {
            return Err(parse_err(off, format!("non-finite value at index {i}")));
        }
        data.push(v);
    }
    SeriesDataset::new(Tensor::from_vec(vec![n, t], data)?, gran, tod0, dow0)
}

/// CSV import: a header row of node ids, then one row per time step with a
/// value column per node. Sampling metadata is not part of the file and
/// must be supplied.
pub fn series_from_csv(
    path: &Path,
    granularity_minutes: usize,
    tod0: usize,
    dow0: usize,
) -> Result<SeriesDataset> {
    let text = std::fs::read_to_string(path)?;
    let mut offset = 0usize;
    let mut lines = Vec::new(); // (byte offset, line)
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_end_matches(['\n', '\r']);
        if !trimmed.trim().is_empty() {
            lines.push((offset, trimmed));
        }
        offset += line.len();
    }
    if lines.is_empty() {
        return Err(parse_err(0, "empty csv"));
    }
    let n = lines[0].1.split(',').count();
    let steps = lines.len() - 1;
    if steps == 0 {
        return Err(parse_err(text.len(), "csv has a header but no data rows"));
    }
    // time-major rows transposed into node-major storage
    let mut data = vec![0.0f64; n * steps];
    for (step, &(line_off, line)) in lines[1..].iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n {
            return Err(parse_err(
                line_off,
                format!("row {} has {} columns, header has {n}", step + 1, cells.len()),
            ));
        }
        for (node, cell) in cells.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(line_off, format!("bad number '{cell}' in row {}", step + 1)))?;
            data[node * steps + step] = v;
        }
    }
    SeriesDataset::new(Tensor::from_vec(vec![n, steps], data)?, granularity_minutes, tod0, dow0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_ds() -> SeriesDataset {
        SeriesDataset::new(
            Tensor::from_vec(vec![2, 5], vec![1.5, -2.0, 0.25, 3.0, 9.0, 0.0, 7.5, -1.0, 2.0, 4.5])
                .unwrap(),
            15,
            3,
            2,
        )
        .unwrap()
    }

    #[test]
    fn binary_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.fstg");
        let p2 = dir.path().join("b.fstg");
        let ds = sample_ds();
        save_series(&ds, &p1).unwrap();
        let loaded = load_series(&p1).unwrap();
        assert_eq!(loaded.values.shape, vec![2, 5]);
        assert_eq!(loaded.values.data, ds.values.data);
        assert_eq!(loaded.tod0, 3);
        assert_eq!(loaded.dow0, 2);
        save_series(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn shortfall_is_reported_at_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.fstg");
        let ds = sample_ds();
        save_series(&ds, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 8); // drop the 10th value
        std::fs::write(&p, &bytes).unwrap();
        match load_series(&p).unwrap_err() {
            Error::Parse { offset, msg } => {
                assert_eq!(offset, bytes.len());
                assert!(msg.contains("10") && msg.contains('9'), "{msg}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn bad_magic_and_nan_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.fstg");
        std::fs::write(&p, b"NOPE!\x0arest").unwrap();
        assert!(matches!(load_series(&p), Err(Error::Parse { offset: 0, .. })));

        let ds = sample_ds();
        save_series(&ds, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let tail = bytes.len() - 16;
        bytes[tail..tail + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        match load_series(&p).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, tail),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn csv_import_transposes_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data.csv");
        std::fs::write(&p, "s0,s1\n1.0,10.0\n2.0,20.0\n3.0,30.0\n").unwrap();
        let ds = series_from_csv(&p, 60, 0, 0).unwrap();
        assert_eq!(ds.values.shape, vec![2, 3]);
        assert_eq!(ds.values.data, vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0]);
        assert_eq!(ds.steps_per_day(), 24);

        std::fs::write(&p, "s0,s1\n1.0\n").unwrap();
        assert!(series_from_csv(&p, 60, 0, 0).is_err());
        std::fs::write(&p, "s0,s1\n1.0,oops\n").unwrap();
        assert!(series_from_csv(&p, 60, 0, 0).is_err());
    }
}
