//! File formats for sequences, spectra, histograms and formulas.
//!
//! A sequence file is either a JSON array of numbers, a JSON object
//! `{"group": "cyclic", "n": N, "values": [...]}` (or `"cube"` with `"d"`),
//! or newline-delimited decimal floats (blank lines and `#` comments are
//! skipped). Bare arrays and float lists are cyclic unless a sidecar file
//! `<path>.group.json` holding `{"group": ..., "n"|"d": ...}` says otherwise.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::marginals::{CubeHistogram, WDnf};
use crate::transforms::{Group, RealSequence, Spectrum};

#[derive(Deserialize)]
struct TaggedSequence {
    #[serde(flatten)]
    group: Group,
    values: Vec<f64>,
}

/// Parses sequence text. `group` applies to untagged inputs and must agree
/// with a tagged one.
pub fn parse_sequence(text: &str, group: Option<Group>) -> Result<RealSequence> {
    let trimmed = text.trim_start();
    let seq = if trimmed.starts_with('{') {
        let tagged: TaggedSequence = serde_json::from_str(text)?;
        if let Some(g) = group {
            if g != tagged.group {
                return Err(Error::GroupMismatch(g, tagged.group));
            }
        }
        RealSequence::new(tagged.values, tagged.group)?
    } else {
        let values = if trimmed.starts_with('[') {
            serde_json::from_str::<Vec<f64>>(text)?
        } else {
            parse_float_lines(text)?
        };
        let group = group.unwrap_or(Group::cyclic(values.len()));
        RealSequence::new(values, group)?
    };
    Ok(seq)
}

fn parse_float_lines(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i, line.trim()))
        .filter(|(_, line)| !line.is_empty() && !line.starts_with('#'))
        .map(|(i, line)| {
            line.parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {}: `{line}` is not a number", i + 1)))
        })
        .collect()
}

/// Reads a whole file, naming it in any error.
pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".group.json");
    PathBuf::from(name)
}

/// Reads a sequence file, consulting its sidecar when present.
pub fn read_sequence(path: &Path) -> Result<RealSequence> {
    let text = read_file(path)?;
    let sidecar = sidecar_path(path);
    let group = if sidecar.exists() {
        Some(serde_json::from_str::<Group>(&read_file(&sidecar)?)?)
    } else {
        None
    };
    parse_sequence(&text, group)
}

pub fn read_wdnf(path: &Path) -> Result<WDnf> {
    parse_wdnf(&read_file(path)?)
}

pub fn parse_wdnf(text: &str) -> Result<WDnf> {
    Ok(serde_json::from_str(text)?)
}

/// Parses a histogram: a dense JSON array of `2^d` counts, or a list of
/// `["bits", count]` pairs (or `{"bits": ..., "count": ...}` objects), in
/// which case `d` is the bitstring length unless given.
pub fn parse_histogram(text: &str, d: Option<u32>) -> Result<CubeHistogram> {
    let items: Vec<Value> = serde_json::from_str(text)?;
    if items.iter().all(Value::is_number) {
        let counts: Vec<f64> = items.iter().filter_map(Value::as_f64).collect();
        let hist = CubeHistogram::from_dense(counts)?;
        if let Some(d) = d {
            if hist.d() != d {
                return Err(Error::validation(format!(
                    "histogram has {} entries, expected 2^{d}",
                    hist.counts().len()
                )));
            }
        }
        return Ok(hist);
    }
    let pairs = items
        .iter()
        .map(|item| {
            let (bits, count) = match item {
                Value::Array(pair) if pair.len() == 2 => (&pair[0], &pair[1]),
                Value::Object(map) => (
                    map.get("bits").unwrap_or(&Value::Null),
                    map.get("count").unwrap_or(&Value::Null),
                ),
                _ => (&Value::Null, &Value::Null),
            };
            match (bits.as_str(), count.as_f64()) {
                (Some(b), Some(c)) => Ok((b.to_string(), c)),
                _ => Err(Error::Parse(format!("bad histogram entry {item}"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let d = match (d, pairs.first()) {
        (Some(d), _) => d,
        (None, Some((bits, _))) => bits.len() as u32,
        (None, None) => return Err(Error::validation("empty histogram needs an explicit d")),
    };
    CubeHistogram::from_pairs(d, &pairs)
}

pub fn read_histogram(path: &Path, d: Option<u32>) -> Result<CubeHistogram> {
    parse_histogram(&read_file(path)?, d)
}

/// JSON form of a spectrum: the group plus separate real and imaginary
/// parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumJson {
    #[serde(flatten)]
    pub group: Group,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<&Spectrum> for SpectrumJson {
    fn from(s: &Spectrum) -> Self {
        Self {
            group: s.group(),
            re: s.coeffs().iter().map(|c| c.re).collect(),
            im: s.coeffs().iter().map(|c| c.im).collect(),
        }
    }
}
