//! On-disk dataset format: line-delimited JSON streams plus a hashed
//! manifest.
//!
//! Numeric fields are written with shortest-round-trip formatting and parsed
//! exactly, so a write-then-read cycle reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HarnessError, SimConfig};
use crate::sim::{SimRun, TruthState};
use crate::types::{ImuSample, RadarScan};

/// Bumped on any breaking change to the file layout or record schemas.
pub const DATASET_FORMAT_VERSION: u32 = 1;

const IMU_FILE: &str = "imu.jsonl";
const RADAR_FILE: &str = "radar.jsonl";
const TRUTH_FILE: &str = "truth.jsonl";
const MANIFEST_FILE: &str = "manifest.json";

/// Dataset metadata: the generating configuration and a SHA-256 digest of
/// every data file in the directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub sim: SimConfig,
    /// File name → lowercase hex SHA-256 of the file's bytes.
    pub files: BTreeMap<String, String>,
}

/// A fully loaded and verified dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub imu: Vec<ImuSample>,
    pub radar: Vec<RadarScan>,
    pub truth: Vec<TruthState>,
}

/// One element of the time-merged sensor stream.
#[derive(Clone, Copy, Debug)]
pub enum Event<'a> {
    Imu(&'a ImuSample),
    Radar(&'a RadarScan),
}

impl Event<'_> {
    pub fn t(&self) -> f64 {
        match self {
            Event::Imu(s) => s.t,
            Event::Radar(s) => s.t,
        }
    }
}

/// Merged iterator over both sensor streams in timestamp order, IMU first on
/// ties (a scan stamped at an IMU instant sees that sample already applied).
pub struct Events<'a> {
    imu: &'a [ImuSample],
    radar: &'a [RadarScan],
    i: usize,
    j: usize,
}

impl<'a> Iterator for Events<'a> {
    type Item = Event<'a>;

    fn next(&mut self) -> Option<Event<'a>> {
        let take_imu = match (self.imu.get(self.i), self.radar.get(self.j)) {
            (Some(s), Some(r)) => s.t <= r.t,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => return None,
        };
        if take_imu {
            self.i += 1;
            Some(Event::Imu(&self.imu[self.i - 1]))
        } else {
            self.j += 1;
            Some(Event::Radar(&self.radar[self.j - 1]))
        }
    }
}

impl Dataset {
    pub fn events(&self) -> Events<'_> {
        Events {
            imu: &self.imu,
            radar: &self.radar,
            i: 0,
            j: 0,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serializes one record per line and returns the file's hash.
pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<String, HarnessError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, &out)?;
    Ok(sha256_hex(out.as_bytes()))
}

pub(crate) fn parse_jsonl<T: DeserializeOwned>(name: &str, text: &str) -> Result<Vec<T>, HarnessError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line).map_err(|source| HarnessError::CorruptRecord {
                file: name.into(),
                line: k + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

fn check_monotone(name: &str, times: impl Iterator<Item = f64>) -> Result<(), HarnessError> {
    let mut prev = f64::NEG_INFINITY;
    for (k, t) in times.enumerate() {
        if !(t > prev) {
            return Err(HarnessError::NonMonotoneTime {
                file: name.into(),
                line: k + 1,
            });
        }
        prev = t;
    }
    Ok(())
}

/// Writes one simulated run as a dataset directory and returns its manifest.
pub fn write_dataset(
    dir: &Path,
    sim: &SimConfig,
    run: &SimRun,
    truth: &[TruthState],
) -> Result<DatasetManifest, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut files = BTreeMap::new();
    files.insert(
        IMU_FILE.to_string(),
        write_jsonl(&dir.join(IMU_FILE), &run.imu)?,
    );
    files.insert(
        RADAR_FILE.to_string(),
        write_jsonl(&dir.join(RADAR_FILE), &run.radar)?,
    );
    files.insert(
        TRUTH_FILE.to_string(),
        write_jsonl(&dir.join(TRUTH_FILE), truth)?,
    );
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        sim: sim.clone(),
        files,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

fn read_verified(dir: &Path, manifest: &DatasetManifest, name: &str) -> Result<String, HarnessError> {
    let expected = manifest
        .files
        .get(name)
        .ok_or_else(|| HarnessError::MissingFile(format!("{name} (no manifest entry)")))?;
    let bytes = fs::read(dir.join(name)).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            HarnessError::MissingFile(name.into())
        } else {
            HarnessError::Io(e)
        }
    })?;
    if &sha256_hex(&bytes) != expected {
        return Err(HarnessError::HashMismatch { file: name.into() });
    }
    String::from_utf8(bytes)
        .map_err(|_| HarnessError::HashMismatch { file: name.into() })
}

/// Loads a dataset directory, verifying the format version, every file hash,
/// record syntax, and per-stream time monotonicity.
pub fn load_dataset(dir: &Path) -> Result<Dataset, HarnessError> {
    let manifest_text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            HarnessError::MissingFile(MANIFEST_FILE.into())
        } else {
            HarnessError::Io(e)
        }
    })?;
    let manifest: DatasetManifest = serde_json::from_str(&manifest_text)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(HarnessError::VersionMismatch {
            found: manifest.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    // Verify every hashed file, including any beyond the three streams.
    let mut contents: BTreeMap<String, String> = BTreeMap::new();
    for name in manifest.files.keys() {
        contents.insert(name.clone(), read_verified(dir, &manifest, name)?);
    }
    let text = |name: &str| -> Result<&String, HarnessError> {
        contents
            .get(name)
            .ok_or_else(|| HarnessError::MissingFile(format!("{name} (no manifest entry)")))
    };
    let imu: Vec<ImuSample> = parse_jsonl(IMU_FILE, text(IMU_FILE)?)?;
    let radar: Vec<RadarScan> = parse_jsonl(RADAR_FILE, text(RADAR_FILE)?)?;
    let truth: Vec<TruthState> = parse_jsonl(TRUTH_FILE, text(TRUTH_FILE)?)?;
    check_monotone(IMU_FILE, imu.iter().map(|s| s.t))?;
    check_monotone(RADAR_FILE, radar.iter().map(|s| s.t))?;
    check_monotone(TRUTH_FILE, truth.iter().map(|s| s.t))?;
    Ok(Dataset {
        manifest,
        imu,
        radar,
        truth,
    })
}
