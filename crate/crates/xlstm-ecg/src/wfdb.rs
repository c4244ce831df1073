//! WFDB header (`.hea`) parsing and format-16 signal (`.dat`) decoding and
//! encoding.
//!
//! Only format 16 is supported: interleaved little-endian signed 16-bit
//! samples, one file shared by every signal of the record. Physical values
//! are `(digital − baseline) / gain`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{read_file, write_file, AppError};

/// Digital value WFDB reserves for missing samples.
pub const INVALID_SAMPLE: i16 = i16::MIN;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WfdbError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unsupported format '{format}' (only format 16 is supported)")]
    UnsupportedFormat { line: usize, format: String },
    #[error("signal data truncated: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("{0}")]
    Layout(String),
}

impl From<WfdbError> for AppError {
    fn from(e: WfdbError) -> Self {
        AppError::Data(e.to_string())
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> WfdbError {
    WfdbError::Parse { line, msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub file_name: String,
    pub format: u16,
    /// ADC units per physical unit.
    pub adc_gain: f64,
    pub baseline: i32,
    pub units: String,
    pub adc_resolution: u32,
    pub adc_zero: i32,
    pub initial_value: i32,
    /// Sum of all samples modulo 2¹⁶, as a signed 16-bit value.
    pub checksum: Option<i16>,
    pub block_size: u32,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WfdbHeader {
    pub record_name: String,
    pub n_signals: usize,
    pub sample_rate: f64,
    pub n_samples: usize,
    pub signals: Vec<SignalSpec>,
}

impl WfdbHeader {
    /// The single data file holding every signal.
    pub fn data_file(&self) -> Result<&str, WfdbError> {
        let first = &self.signals[0].file_name;
        if self.signals.iter().any(|s| &s.file_name != first) {
            return Err(WfdbError::Layout(format!(
                "record {} spreads its signals over several files",
                self.record_name
            )));
        }
        Ok(first)
    }

    pub fn gains(&self) -> Vec<f64> {
        self.signals.iter().map(|s| s.adc_gain).collect()
    }
}

/// Parses a `.hea` header. Lines starting with `#` and blank lines are
/// skipped; line numbers in errors are 1-based.
pub fn parse_wfdb_header(text: &[u8]) -> Result<WfdbHeader, WfdbError> {
    let text = std::str::from_utf8(text).map_err(|e| parse_err(0, format!("header is not UTF-8: {e}")))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (line_no, record_line) = lines.next().ok_or_else(|| parse_err(0, "empty header"))?;
    let fields: Vec<&str> = record_line.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(parse_err(
            line_no,
            "record line needs name, signal count, sampling frequency and sample count",
        ));
    }
    // the name may carry a segment count as "name/segments"
    if fields[0].contains('/') {
        return Err(parse_err(line_no, "multi-segment records are not supported"));
    }
    let record_name = fields[0].to_string();
    let n_signals: usize = fields[1]
        .parse()
        .map_err(|_| parse_err(line_no, format!("invalid signal count '{}'", fields[1])))?;
    if n_signals == 0 {
        return Err(parse_err(line_no, "record has no signals"));
    }
    // "fs[/counter_freq[(base_counter)]]"
    let fs_text = fields[2].split('/').next().unwrap_or_default();
    let sample_rate: f64 = fs_text
        .parse()
        .ok()
        .filter(|f: &f64| *f > 0.0 && f.is_finite())
        .ok_or_else(|| parse_err(line_no, format!("invalid sampling frequency '{}'", fields[2])))?;
    let n_samples: usize = fields[3]
        .parse()
        .map_err(|_| parse_err(line_no, format!("invalid sample count '{}'", fields[3])))?;

    let mut signals = Vec::with_capacity(n_signals);
    for _ in 0..n_signals {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| parse_err(0, format!("header declares {n_signals} signals but lists {}", signals.len())))?;
        signals.push(parse_signal_line(line_no, line)?);
    }
    Ok(WfdbHeader {
        record_name,
        n_signals,
        sample_rate,
        n_samples,
        signals,
    })
}

fn parse_signal_line(line_no: usize, line: &str) -> Result<SignalSpec, WfdbError> {
    let mut parts = line.splitn(9, char::is_whitespace).filter(|s| !s.is_empty());
    let file_name = parts.next().ok_or_else(|| parse_err(line_no, "missing file name"))?;
    let format_text = parts.next().ok_or_else(|| parse_err(line_no, "missing format"))?;
    let digits: String = format_text.chars().take_while(char::is_ascii_digit).collect();
    if digits != "16" || digits.len() != format_text.len() {
        return Err(WfdbError::UnsupportedFormat {
            line: line_no,
            format: format_text.to_string(),
        });
    }

    let rest: Vec<&str> = line.split_whitespace().skip(2).collect();
    let (adc_gain, baseline, units) = match rest.first() {
        Some(g) => parse_gain(line_no, g)?,
        None => (200.0, None, "mV".to_string()),
    };
    let int_field = |idx: usize, name: &str, default: i64| -> Result<i64, WfdbError> {
        match rest.get(idx) {
            Some(t) => t
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid {name} '{t}'"))),
            None => Ok(default),
        }
    };
    let adc_resolution = int_field(1, "ADC resolution", 16)?;
    let adc_zero = int_field(2, "ADC zero", 0)?;
    let initial_value = int_field(3, "initial value", 0)?;
    let checksum = match rest.get(4) {
        Some(t) => Some(
            t.parse::<i64>()
                .map_err(|_| parse_err(line_no, format!("invalid checksum '{t}'")))? as i16,
        ),
        None => None,
    };
    let block_size = int_field(5, "block size", 0)?;
    let description = rest.get(6..).map(|d| d.join(" ")).unwrap_or_default();

    let to_i32 = |v: i64, name: &str| {
        i32::try_from(v).map_err(|_| parse_err(line_no, format!("{name} {v} out of range")))
    };
    Ok(SignalSpec {
        file_name: file_name.to_string(),
        format: 16,
        adc_gain,
        baseline: match baseline {
            Some(b) => b,
            None => to_i32(adc_zero, "ADC zero")?,
        },
        units,
        adc_resolution: u32::try_from(adc_resolution)
            .map_err(|_| parse_err(line_no, format!("ADC resolution {adc_resolution} out of range")))?,
        adc_zero: to_i32(adc_zero, "ADC zero")?,
        initial_value: to_i32(initial_value, "initial value")?,
        checksum,
        block_size: u32::try_from(block_size)
            .map_err(|_| parse_err(line_no, format!("block size {block_size} out of range")))?,
        description,
    })
}

/// `gain[(baseline)][/units]`
fn parse_gain(line_no: usize, text: &str) -> Result<(f64, Option<i32>, String), WfdbError> {
    let (value, units) = match text.split_once('/') {
        Some((v, u)) => (v, u.to_string()),
        None => (text, "mV".to_string()),
    };
    let (gain_text, baseline) = match value.split_once('(') {
        Some((g, b)) => {
            let b = b
                .strip_suffix(')')
                .ok_or_else(|| parse_err(line_no, format!("unclosed baseline in '{text}'")))?;
            let b: i32 = b
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid baseline '{b}'")))?;
            (g, Some(b))
        }
        None => (value, None),
    };
    let gain: f64 = gain_text
        .parse()
        .map_err(|_| parse_err(line_no, format!("invalid ADC gain '{gain_text}'")))?;
    if gain == 0.0 || !gain.is_finite() {
        return Err(parse_err(line_no, format!("ADC gain must be finite and non-zero, got '{gain_text}'")));
    }
    Ok((gain, baseline, units))
}

/// Decodes interleaved format-16 samples into a row-major
/// `n_samples × n_signals` matrix of physical values.
pub fn read_wfdb_signal(header: &WfdbHeader, raw: &[u8]) -> Result<Vec<f64>, WfdbError> {
    let expected = 2 * header.n_samples * header.n_signals;
    if raw.len() != expected {
        return Err(WfdbError::Truncated {
            expected,
            got: raw.len(),
        });
    }
    let specs = &header.signals;
    Ok(raw
        .chunks_exact(2)
        .enumerate()
        .map(|(i, b)| {
            let s = &specs[i % header.n_signals];
            let digital = i16::from_le_bytes([b[0], b[1]]);
            (f64::from(digital) - f64::from(s.baseline)) / s.adc_gain
        })
        .collect())
}

/// Encodes a row-major `n_samples × n_signals` matrix as format-16 bytes,
/// rounding to the nearest ADC step. Values outside the 16-bit range are
/// clipped; `INVALID_SAMPLE` is never produced.
pub fn encode_format16(header: &WfdbHeader, samples: &[f64]) -> Result<Vec<u8>, WfdbError> {
    let n = header.n_signals;
    if samples.len() != header.n_samples * n {
        return Err(WfdbError::Layout(format!(
            "expected {} values for {} samples × {n} signals, got {}",
            header.n_samples * n,
            header.n_samples,
            samples.len()
        )));
    }
    let mut out = Vec::with_capacity(samples.len() * 2);
    for (i, &v) in samples.iter().enumerate() {
        out.extend_from_slice(&to_digital(&header.signals[i % n], v).to_le_bytes());
    }
    Ok(out)
}

fn to_digital(spec: &SignalSpec, value: f64) -> i16 {
    let d = (value * spec.adc_gain).round() + f64::from(spec.baseline);
    d.clamp(f64::from(i16::MIN) + 1.0, f64::from(i16::MAX)) as i16
}

/// Builds a header for `samples` and fills in per-signal initial values and
/// checksums.
pub fn header_for(
    record_name: &str,
    sample_rate: f64,
    n_signals: usize,
    samples: &[f64],
    gain: f64,
    lead_names: &[&str],
) -> WfdbHeader {
    let n_samples = samples.len() / n_signals.max(1);
    let signals = (0..n_signals)
        .map(|j| {
            let mut spec = SignalSpec {
                file_name: format!("{record_name}.dat"),
                format: 16,
                adc_gain: gain,
                baseline: 0,
                units: "mV".to_string(),
                adc_resolution: 16,
                adc_zero: 0,
                initial_value: 0,
                checksum: None,
                block_size: 0,
                description: lead_names.get(j).map_or_else(|| format!("sig{j}"), |s| s.to_string()),
            };
            let digital: Vec<i16> = samples.iter().skip(j).step_by(n_signals).map(|&v| to_digital(&spec, v)).collect();
            spec.initial_value = digital.first().copied().map_or(0, i32::from);
            spec.checksum = Some(digital.iter().fold(0i16, |acc, &d| acc.wrapping_add(d)));
            spec
        })
        .collect();
    WfdbHeader {
        record_name: record_name.to_string(),
        n_signals,
        sample_rate,
        n_samples,
        signals,
    }
}

pub fn write_wfdb_header(header: &WfdbHeader) -> String {
    let mut out = format!(
        "{} {} {} {}\n",
        header.record_name, header.n_signals, header.sample_rate, header.n_samples
    );
    for s in &header.signals {
        let _ = write!(
            out,
            "{} 16 {}({})/{} {} {} {} {} {}",
            s.file_name,
            s.adc_gain,
            s.baseline,
            s.units,
            s.adc_resolution,
            s.adc_zero,
            s.initial_value,
            s.checksum.unwrap_or(0),
            s.block_size
        );
        if !s.description.is_empty() {
            out.push(' ');
            out.push_str(&s.description);
        }
        out.push('\n');
    }
    out
}

/// A decoded record: header plus `n_samples × n_signals` physical values.
#[derive(Debug, Clone, PartialEq)]
pub struct WfdbRecord {
    pub header: WfdbHeader,
    pub samples: Vec<f64>,
}

/// Reads `<base>.hea` and the data file it names (resolved next to it).
pub fn read_record(base: &Path) -> crate::error::Result<WfdbRecord> {
    let hea = with_extension(base, "hea");
    let header = parse_wfdb_header(&read_file(&hea)?)
        .map_err(|e| AppError::data(format!("{}: {e}", hea.display())))?;
    let dat = base.with_file_name(header.data_file()?);
    let raw = read_file(&dat)?;
    let samples = read_wfdb_signal(&header, &raw).map_err(|e| AppError::data(format!("{}: {e}", dat.display())))?;
    Ok(WfdbRecord { header, samples })
}

/// Writes `<base>.hea` and `<base>.dat`.
pub fn write_record(base: &Path, header: &WfdbHeader, samples: &[f64]) -> crate::error::Result<()> {
    let bytes = encode_format16(header, samples)?;
    write_file(&base.with_file_name(header.data_file()?), bytes)?;
    write_file(&with_extension(base, "hea"), write_wfdb_header(header))
}

fn with_extension(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}
