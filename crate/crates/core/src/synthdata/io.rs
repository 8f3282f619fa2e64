//! Dataset directory: `manifest.json` plus one CSV per trial.
//!
//! Trial files carry a `ch1,...,ch8` header and one row per sample. Values are
//! written in scientific notation with 17 significant digits, which
//! round-trips every `f64` exactly.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, MotionInfo};
use crate::error::{Error, Result};
use crate::signal::{RawRecording, CHANNELS};

pub const MANIFEST_FILE: &str = "manifest.json";
const TRIAL_DIR: &str = "trials";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sampling_rate_hz: u32,
    pub channels: usize,
    pub motions: Vec<ManifestMotion>,
    pub trials: Vec<ManifestTrial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMotion {
    pub id: u32,
    pub name: String,
    pub target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTrial {
    pub file: String,
    pub motion_id: u32,
    pub repetition: u32,
}

pub fn trial_file_name(motion_id: u32, repetition: u32) -> String {
    format!("{TRIAL_DIR}/m{motion_id:02}_r{repetition:02}.csv")
}

pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join(TRIAL_DIR))?;
    let mut trials = Vec::with_capacity(dataset.recordings.len());
    for rec in &dataset.recordings {
        let file = trial_file_name(rec.motion_id, rec.repetition);
        write_trial(&dir.join(&file), rec)?;
        trials.push(ManifestTrial { file, motion_id: rec.motion_id, repetition: rec.repetition });
    }
    let manifest = Manifest {
        sampling_rate_hz: dataset.sampling_rate_hz,
        channels: CHANNELS,
        motions: dataset
            .motions
            .iter()
            .map(|m| ManifestMotion { id: m.id, name: m.name.clone(), target: m.target })
            .collect(),
        trials,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

fn write_trial(path: &Path, rec: &RawRecording) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (1..=CHANNELS).map(|c| format!("ch{c}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in &rec.samples {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{v:.16e}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Manifest { path: path.clone(), msg: e.to_string() })?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest { path: path.clone(), msg: e.to_string() })?;
    if manifest.channels != CHANNELS {
        return Err(Error::ChannelMismatch { path, expected: CHANNELS, found: manifest.channels });
    }
    if manifest.sampling_rate_hz == 0 {
        return Err(Error::Manifest { path, msg: "sampling_rate_hz must be positive".into() });
    }
    Ok(manifest)
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let motions: Vec<MotionInfo> =
        manifest.motions.iter().map(|m| MotionInfo { id: m.id, name: m.name.clone(), target: m.target }).collect();
    let fs_hz = manifest.sampling_rate_hz as f64;
    let mut recordings = Vec::with_capacity(manifest.trials.len());
    for t in &manifest.trials {
        let motion = motions.iter().find(|m| m.id == t.motion_id).ok_or_else(|| Error::Manifest {
            path: manifest_path.clone(),
            msg: format!("trial {} references unknown motion {}", t.file, t.motion_id),
        })?;
        let path = dir.join(&t.file);
        if !path.is_file() {
            return Err(Error::MissingTrialFile(path));
        }
        let samples = read_trial(&path)?;
        recordings.push(RawRecording::new(samples, fs_hz, t.motion_id, t.repetition, motion.target)?);
    }
    Ok(Dataset { sampling_rate_hz: manifest.sampling_rate_hz, motions, recordings })
}

pub fn read_trial(path: &Path) -> Result<Vec<[f64; CHANNELS]>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let header_len = reader.headers()?.len();
    if header_len != CHANNELS {
        return Err(Error::ChannelMismatch { path: path.to_path_buf(), expected: CHANNELS, found: header_len });
    }
    let parse_err = |line: u64, msg: String| Error::Parse { path: PathBuf::from(path), line, msg };
    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != CHANNELS {
            return Err(parse_err(line, format!("expected {CHANNELS} columns, found {}", record.len())));
        }
        let mut row = [0.0; CHANNELS];
        for (dst, field) in row.iter_mut().zip(record.iter()) {
            *dst = field.trim().parse().map_err(|_| parse_err(line, format!("invalid number {field:?}")))?;
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, SynthConfig};

    fn tiny() -> Dataset {
        generate(&SynthConfig { n_target: 2, n_novel: 1, reps: 5, trial_seconds: 0.3, seed: 4, ..Default::default() })
            .unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = tiny();
        write_dataset(&d, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn missing_file_named() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&tiny(), dir.path()).unwrap();
        let victim = dir.path().join(trial_file_name(1, 3));
        fs::remove_file(&victim).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::MissingTrialFile(p) if p == &victim));
        assert!(err.to_string().contains("m01_r03.csv"));
    }

    #[test]
    fn short_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&tiny(), dir.path()).unwrap();
        let f = dir.path().join(trial_file_name(0, 0));
        let text = fs::read_to_string(&f).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        // drop one column from the fourth data row (file line 5)
        let cut = lines[4].rfind(',').unwrap();
        lines[4].truncate(cut);
        fs::write(&f, lines.join("\n") + "\n").unwrap();
        match read_dataset(dir.path()).unwrap_err() {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 5);
                assert!(msg.contains("7"), "{msg}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Manifest { .. })));
        fs::write(dir.path().join(MANIFEST_FILE), "{ not json").unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Manifest { .. })));
        let m = r#"{"sampling_rate_hz": 1000, "channels": 7, "motions": [], "trials": []}"#;
        fs::write(dir.path().join(MANIFEST_FILE), m).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::ChannelMismatch { found: 7, .. })));
    }

    #[test]
    fn header_channel_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&tiny(), dir.path()).unwrap();
        let f = dir.path().join(trial_file_name(0, 1));
        fs::write(&f, "ch1,ch2\n1,2\n").unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::ChannelMismatch { found: 2, .. })));
    }
}
