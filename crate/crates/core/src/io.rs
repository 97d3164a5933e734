//! File formats.
//!
//! Binary trace (`.pnrt`), all fields little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PNRT"
//! 4       4     u32 version = 1
//! 8       8     f64 sample_rate (Hz)
//! 16      8     f64 start_time (s)
//! 24      8     u64 count
//! 32      8·n   f64 samples (mV)
//! ```
//!
//! CSV traces have a header row and two columns, `time_s,mV`, on a uniform
//! time grid. Kernel CSVs start with a `# sample_rate_hz=… normalization=…`
//! line followed by a `tap` header and one tap per line.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::discrimination::DetectionEvent;
use crate::error::{Error, Result};
use crate::filtering::{FilterKernel, Normalization};
use crate::signal_model::Trace;

pub const TRACE_MAGIC: &[u8; 4] = b"PNRT";
pub const TRACE_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn bad(path: &Path, offset: u64, reason: impl Into<String>) -> Error {
    Error::BadFormat {
        path: path.to_path_buf(),
        offset,
        reason: reason.into(),
    }
}

pub fn encode_trace(trace: &Trace) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * trace.len());
    out.extend_from_slice(TRACE_MAGIC);
    out.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    out.extend_from_slice(&trace.sample_rate().to_le_bytes());
    out.extend_from_slice(&trace.start_time().to_le_bytes());
    out.extend_from_slice(&(trace.len() as u64).to_le_bytes());
    for v in trace.samples() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a binary trace; `path` only labels errors.
pub fn decode_trace(bytes: &[u8], path: &Path) -> Result<Trace> {
    if bytes.len() < 4 || &bytes[..4] != TRACE_MAGIC {
        return Err(bad(path, 0, "missing PNRT magic"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(bad(path, bytes.len() as u64, "truncated header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != TRACE_VERSION {
        return Err(bad(path, 4, format!("unsupported version {version}")));
    }
    let sample_rate = f64_at(8);
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(bad(path, 8, "sample rate must be positive"));
    }
    let start_time = f64_at(16);
    if !start_time.is_finite() {
        return Err(bad(path, 16, "start time must be finite"));
    }
    let count = u64_at(24);
    let expected = (count as usize)
        .checked_mul(8)
        .and_then(|n| n.checked_add(HEADER_LEN));
    if count == 0 {
        return Err(bad(path, 24, "sample count is zero"));
    }
    match expected {
        Some(n) if n == bytes.len() => {}
        _ => {
            return Err(bad(
                path,
                bytes.len() as u64,
                format!("expected {count} samples, file length disagrees"),
            ))
        }
    }
    let mut samples = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let o = HEADER_LEN + 8 * i;
        let v = f64_at(o);
        if !v.is_finite() {
            return Err(bad(path, o as u64, "non-finite sample"));
        }
        samples.push(v);
    }
    Trace::new(sample_rate, start_time, samples).map_err(|e| bad(path, 0, e.to_string()))
}

pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    fs::write(path, encode_trace(trace)).map_err(io_err(path))
}

/// Reads a binary trace, or a CSV trace when the magic is absent and the
/// extension is `.csv`.
pub fn read_trace(path: &Path) -> Result<Trace> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    parse_trace(&bytes, path)
}

/// [`read_trace`] on bytes already in memory; `path` picks the format and
/// labels errors.
pub fn parse_trace(bytes: &[u8], path: &Path) -> Result<Trace> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv && !bytes.starts_with(TRACE_MAGIC) {
        parse_trace_csv(bytes, path)
    } else {
        decode_trace(bytes, path)
    }
}

pub fn write_trace_csv(path: &Path, trace: &Trace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["time_s", "mV"]).map_err(|e| csv_err(path, e))?;
    for (i, v) in trace.samples().iter().enumerate() {
        w.write_record([trace.time_at(i).to_string(), v.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map(|p| p.byte()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => bad(path, offset, format!("{other:?}")),
    }
}

fn parse_trace_csv(bytes: &[u8], path: &Path) -> Result<Trace> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let offset = rec.position().map(|p| p.byte()).unwrap_or(0);
        if rec.len() < 2 {
            return Err(bad(path, offset, "expected two columns: time_s, mV"));
        }
        let t: f64 = rec[0]
            .parse()
            .map_err(|_| bad(path, offset, format!("bad time `{}`", &rec[0])))?;
        let v: f64 = rec[1]
            .parse()
            .map_err(|_| bad(path, offset, format!("bad value `{}`", &rec[1])))?;
        times.push(t);
        values.push(v);
    }
    if times.len() < 2 {
        return Err(bad(path, bytes.len() as u64, "need at least two samples"));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(bad(path, 0, "time column must increase"));
    }
    for (i, t) in times.iter().enumerate() {
        let expected = times[0] + i as f64 * dt;
        if (t - expected).abs() > 1e-3 * dt {
            return Err(bad(path, 0, format!("non-uniform time grid at row {}", i + 1)));
        }
    }
    Trace::new(1.0 / dt, times[0], values).map_err(|e| bad(path, 0, e.to_string()))
}

pub fn write_kernel_csv(path: &Path, kernel: &FilterKernel) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    writeln!(
        f,
        "# sample_rate_hz={} normalization={}",
        kernel.sample_rate(),
        kernel.normalization().as_str()
    )
    .and_then(|_| writeln!(f, "tap"))
    .map_err(io_err(path))?;
    for t in kernel.taps() {
        writeln!(f, "{t}").map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

pub fn read_kernel_csv(path: &Path) -> Result<FilterKernel> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(io_err(path))?
        .ok_or_else(|| bad(path, 0, "empty kernel file"))?;
    let meta = header
        .strip_prefix('#')
        .ok_or_else(|| bad(path, 0, "missing `# sample_rate_hz=… normalization=…` header"))?;
    let mut sample_rate = None;
    let mut normalization = None;
    for field in meta.split_whitespace() {
        match field.split_once('=') {
            Some(("sample_rate_hz", v)) => sample_rate = v.parse::<f64>().ok(),
            Some(("normalization", v)) => normalization = Normalization::parse(v),
            _ => {}
        }
    }
    let sample_rate = sample_rate.ok_or_else(|| bad(path, 0, "missing sample_rate_hz"))?;
    let normalization = normalization.ok_or_else(|| bad(path, 0, "missing normalization"))?;
    let mut offset = header.len() as u64 + 1;
    let mut taps = Vec::new();
    for line in lines {
        let line = line.map_err(io_err(path))?;
        let s = line.trim();
        if !s.is_empty() && s != "tap" {
            taps.push(
                s.parse::<f64>()
                    .map_err(|_| bad(path, offset, format!("bad tap `{s}`")))?,
            );
        }
        offset += line.len() as u64 + 1;
    }
    // stored taps are already normalized; keep them bit-exact
    let kernel = FilterKernel::new(taps, sample_rate, Normalization::Raw)
        .map_err(|e| bad(path, 0, e.to_string()))?;
    Ok(kernel.with_normalization_label(normalization))
}

/// Events CSV with columns `peak_mV,time_s,assigned_n` (empty when
/// unassigned).
pub fn write_events_csv<W: Write>(out: W, events: &[DetectionEvent]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["peak_mV", "time_s", "assigned_n"])?;
    for e in events {
        w.write_record([
            e.peak_amplitude.to_string(),
            e.peak_time.to_string(),
            e.assigned_n.map(|n| n.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_layout() {
        let tr = Trace::new(5e9, -1e-9, vec![1.0, -2.5]).unwrap();
        let b = encode_trace(&tr);
        assert_eq!(b.len(), 48);
        assert_eq!(&b[..4], b"PNRT");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(b[8..16].try_into().unwrap()), 5e9);
        assert_eq!(f64::from_le_bytes(b[16..24].try_into().unwrap()), -1e-9);
        assert_eq!(u64::from_le_bytes(b[24..32].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(b[40..48].try_into().unwrap()), -2.5);
        assert_eq!(decode_trace(&b, Path::new("x")).unwrap(), tr);
    }

    #[test]
    fn corrupt_inputs() {
        let tr = Trace::new(5e9, 0.0, vec![1.0; 4]).unwrap();
        let mut b = encode_trace(&tr);
        let p = Path::new("t.pnrt");
        assert!(matches!(
            decode_trace(&b[..40], p),
            Err(Error::BadFormat { offset: 40, .. })
        ));
        b[4] = 9;
        assert!(matches!(
            decode_trace(&b, p),
            Err(Error::BadFormat { offset: 4, .. })
        ));
        b[0] = b'X';
        match decode_trace(&b, p) {
            Err(Error::BadFormat { path, offset: 0, .. }) => assert_eq!(path, p),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let tr = Trace::new(5e9, 2e-9, vec![0.5, 1.5, -0.25, 3.0]).unwrap();
        write_trace_csv(&p, &tr).unwrap();
        let back = read_trace(&p).unwrap();
        assert_eq!(back.samples(), tr.samples());
        assert!((back.sample_rate() - 5e9).abs() / 5e9 < 1e-9);
        assert!((back.start_time() - 2e-9).abs() < 1e-21);
    }

    #[test]
    fn kernel_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.csv");
        let k = FilterKernel::new(vec![0.1, 0.7, -0.3], 5e9, Normalization::UnitEnergy).unwrap();
        write_kernel_csv(&p, &k).unwrap();
        assert_eq!(read_kernel_csv(&p).unwrap(), k);
    }

    #[test]
    fn events_csv_columns() {
        let mut buf = Vec::new();
        let ev = [
            DetectionEvent {
                peak_amplitude: 1.5,
                peak_time: 2e-9,
                assigned_n: Some(2),
            },
            DetectionEvent {
                peak_amplitude: 0.5,
                peak_time: 3e-9,
                assigned_n: None,
            },
        ];
        write_events_csv(&mut buf, &ev).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "peak_mV,time_s,assigned_n\n1.5,0.000000002,2\n0.5,0.000000003,\n");
    }
}
