//! Observation files and labeled dataset manifests.
//!
//! Observations are stored one channel per file, either as CSV (one grid row
//! per line) or as binary 8-bit PGM (`P5`) with value `round(255 y)`.
//! A manifest is a JSON array of entries pointing at those files.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rdsim::{Observation, ObservationMeta, SimError, SystemParams};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Observation(#[from] SimError),
}

impl IoError {
    fn format(path: &Path, msg: impl Into<String>) -> Self {
        IoError::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "+",
            Label::Negative => "-",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "+" => Ok(Label::Positive),
            "-" => Ok(Label::Negative),
            other => Err(format!("label must be '+' or '-', got '{other}'")),
        }
    }
}

/// One observation in a dataset manifest. `path` holds the first channel;
/// further channels, if any, are listed in `channels`. Relative paths
/// resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<SystemParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channels: Vec<PathBuf>,
    /// Free-form origin note, e.g. the session iteration that produced it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Pgm,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Format::Csv),
            "pgm" => Some(Format::Pgm),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Pgm => "pgm",
        }
    }
}

/// Reads a square grid of values from one CSV or PGM file.
pub fn read_channel(path: &Path) -> Result<(usize, Vec<f64>), IoError> {
    match Format::from_path(path) {
        Some(Format::Csv) => read_csv(path),
        Some(Format::Pgm) => read_pgm(path),
        None => Err(IoError::format(path, "expected a .csv or .pgm file")),
    }
}

fn read_csv(path: &Path) -> Result<(usize, Vec<f64>), IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| IoError::format(path, e.to_string()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| IoError::format(path, format!("line {}: '{field}' is not a number", rows + 1)))?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 || values.len() != rows * rows {
        return Err(IoError::format(
            path,
            format!("{} values in {rows} rows is not a square grid", values.len()),
        ));
    }
    Ok((rows, values))
}

fn read_pgm(path: &Path) -> Result<(usize, Vec<f64>), IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::file(path, e))?;
    let mut pos = 0;
    let mut header = Vec::with_capacity(4);
    while header.len() < 4 {
        // Skip whitespace and comments between header tokens.
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(IoError::format(path, "truncated PGM header"));
        }
        header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if header[0] != "P5" {
        return Err(IoError::format(path, format!("unsupported PGM magic '{}'", header[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| IoError::format(path, format!("bad PGM header field '{s}'")))
    };
    let (w, h, maxval) = (num(&header[1])?, num(&header[2])?, num(&header[3])?);
    if w != h || maxval == 0 || maxval > 255 {
        return Err(IoError::format(
            path,
            format!("need a square 8-bit PGM, got {w}x{h} maxval {maxval}"),
        ));
    }
    let data = bytes
        .get(pos..pos + w * h)
        .ok_or_else(|| IoError::format(path, "truncated PGM data"))?;
    Ok((w, data.iter().map(|b| *b as f64 / maxval as f64).collect()))
}

pub fn write_csv(path: &Path, side: usize, values: &[f64]) -> Result<(), IoError> {
    let mut out = String::with_capacity(values.len() * 10);
    for row in values.chunks(side) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_pgm(path: &Path, side: usize, values: &[f64]) -> Result<(), IoError> {
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| to_gray(*v)));
    write_atomic(path, &out)
}

/// `round(255 y)` for `y` in `[0, 1]`.
pub fn to_gray(y: f64) -> u8 {
    (255.0 * y.clamp(0.0, 1.0)).round() as u8
}

/// Writes via a sibling temp file and rename, so readers never see a
/// partially written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| IoError::file(&tmp, e))?;
    f.write_all(contents).map_err(|e| IoError::file(&tmp, e))?;
    f.sync_all().map_err(|e| IoError::file(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| IoError::file(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| IoError::format(path, e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::format(path, e.to_string()))
}

/// Loads an observation whose channels are the given files, in order.
pub fn read_observation(paths: &[PathBuf]) -> Result<Observation, IoError> {
    let mut side = 0;
    let mut values = Vec::new();
    for (c, path) in paths.iter().enumerate() {
        let (s, v) = read_channel(path)?;
        if c > 0 && s != side {
            return Err(IoError::format(path, format!("channel side {s} differs from {side}")));
        }
        side = s;
        values.extend(v);
    }
    if paths.is_empty() {
        return Err(IoError::Observation(SimError::Usage(
            "observation has no channel files".into(),
        )));
    }
    Observation::new(side, paths.len(), values).map_err(|e| match e {
        SimError::Usage(msg) => IoError::format(&paths[0], msg),
        other => other.into(),
    })
}

/// Writes each channel of `obs` to `stem.cN.ext` (or `stem.ext` for a
/// single channel); returns the written paths in channel order.
pub fn write_observation(stem: &Path, obs: &Observation, format: Format) -> Result<Vec<PathBuf>, IoError> {
    let mut paths = Vec::with_capacity(obs.channels());
    for c in 0..obs.channels() {
        let path = if obs.channels() == 1 {
            stem.with_extension(format.extension())
        } else {
            stem.with_extension(format!("c{c}.{}", format.extension()))
        };
        match format {
            Format::Csv => write_csv(&path, obs.side(), obs.channel(c))?,
            Format::Pgm => write_pgm(&path, obs.side(), obs.channel(c))?,
        }
        paths.push(path);
    }
    Ok(paths)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, IoError> {
    read_json(path)
}

/// Makes every path in `entries` absolute relative to `base`.
pub fn resolve_entries(entries: &mut [ManifestEntry], base: &Path) {
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    for e in entries {
        fix(&mut e.path);
        e.channels.iter_mut().for_each(fix);
    }
}

/// Reads a manifest and every observation it lists.
pub fn load_dataset(manifest: &Path) -> Result<Vec<(Observation, Label)>, IoError> {
    let mut entries = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    resolve_entries(&mut entries, base);
    entries.iter().map(|e| Ok((load_entry(e)?, e.label))).collect()
}

pub fn load_entry(entry: &ManifestEntry) -> Result<Observation, IoError> {
    let mut paths = vec![entry.path.clone()];
    paths.extend(entry.channels.iter().cloned());
    let mut obs = read_observation(&paths)?;
    obs.meta = ObservationMeta {
        params: entry.params.clone(),
        seed: entry.seed,
        t_bar: None,
    };
    Ok(obs)
}

/// Writes observations as CSV files under `dir` and returns manifest entries
/// with paths relative to `dir`.
pub fn write_dataset(
    dir: &Path,
    prefix: &str,
    observations: &[Observation],
    label: Label,
) -> Result<Vec<ManifestEntry>, IoError> {
    let mut entries = Vec::with_capacity(observations.len());
    for (n, obs) in observations.iter().enumerate() {
        let name = format!("{prefix}{n:05}");
        let written = write_observation(&dir.join(&name), obs, Format::Csv)?;
        let rel = |p: &PathBuf| p.strip_prefix(dir).map(Path::to_path_buf).unwrap_or_else(|_| p.clone());
        entries.push(ManifestEntry {
            path: rel(&written[0]),
            label,
            params: obs.meta.params.clone(),
            seed: obs.meta.seed,
            channels: written[1..].iter().map(rel).collect(),
            provenance: None,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Observation {
        Observation::from_fn(4, |i, j| (i * 4 + j) as f64 / 15.0)
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let obs = sample();
        let paths = write_observation(&dir.path().join("a"), &obs, Format::Csv).unwrap();
        let back = read_observation(&paths).unwrap();
        assert_eq!(back.values(), obs.values());
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let obs = sample();
        let paths = write_observation(&dir.path().join("a"), &obs, Format::Pgm).unwrap();
        let raw = fs::read(&paths[0]).unwrap();
        assert!(raw.starts_with(b"P5\n4 4\n255\n"));
        assert_eq!(raw[raw.len() - 16..][5], to_gray(obs.values()[5]));
        let back = read_observation(&paths).unwrap();
        for (a, b) in back.values().iter().zip(obs.values()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn rejects_non_square_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "0,1,0\n1,0,1\n").unwrap();
        assert!(matches!(read_channel(&p), Err(IoError::Format { .. })));
        fs::write(&p, "0,x\n1,0\n").unwrap();
        assert!(matches!(read_channel(&p), Err(IoError::Format { .. })));
    }

    #[test]
    fn manifest_round_trip_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let entries = write_dataset(dir.path(), "pos", &[sample(), sample()], Label::Positive).unwrap();
        assert_eq!(entries[1].path, PathBuf::from("pos00001.csv"));
        let manifest = dir.path().join("m.json");
        write_json(&manifest, &entries).unwrap();
        let text = fs::read_to_string(&manifest).unwrap();
        assert!(text.contains("\"label\": \"+\""));
        let data = load_dataset(&manifest).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data[0].1, Label::Positive);
        assert_eq!(data[0].0.values(), sample().values());
    }

    #[test]
    fn multi_channel_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = sample().values().to_vec();
        v.extend(sample().values().iter().map(|x| 1.0 - x));
        let obs = Observation::new(4, 2, v).unwrap();
        let paths = write_observation(&dir.path().join("m"), &obs, Format::Csv).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths[1].to_string_lossy().ends_with("m.c1.csv"));
        assert_eq!(read_observation(&paths).unwrap(), obs);
    }
}
