//! Synthetic EMG-like datasets and the on-disk dataset directory format.
//!
//! Every channel of a synthetic trial is amplitude-modulated white noise:
//! `x[t][ch] = profile[class][ch] * n1 + noise_floor * n2` with `n1`, `n2`
//! independent standard normals drawn from [`crate::rng::Rng`]. Draw order is
//! fixed: all class profiles first (row by row, resampling a row until it is at
//! least [`MIN_PROFILE_GAP`] from every earlier row), then for each class, each
//! repetition, each time step, each channel: `n1` then `n2`.

mod io;

pub use io::{read_dataset, read_manifest, trial_file_name, write_dataset, Manifest, ManifestMotion, ManifestTrial, MANIFEST_FILE};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::signal::{RawRecording, CHANNELS};

pub const MIN_PROFILE_GAP: f64 = 0.5;
pub const MAX_PROFILE_RESAMPLES: usize = 1000;
pub const PROFILE_RANGE: (f64, f64) = (0.2, 2.0);

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_target: usize,
    pub n_novel: usize,
    pub reps: usize,
    pub trial_seconds: f64,
    pub sampling_rate_hz: u32,
    /// One row of 8 channel amplitudes per class, targets first. Drawn from
    /// the seed when `None`.
    pub amplitude_profiles: Option<Vec<[f64; CHANNELS]>>,
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_target: 6,
            n_novel: 8,
            reps: 15,
            trial_seconds: 2.0,
            sampling_rate_hz: 1000,
            amplitude_profiles: None,
            noise_floor: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_target < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 target classes, got {}", self.n_target)));
        }
        if self.reps < 5 {
            return Err(Error::InvalidConfig(format!("need at least 5 repetitions, got {}", self.reps)));
        }
        if !(self.trial_seconds > 0.0) || self.sampling_rate_hz == 0 {
            return Err(Error::InvalidConfig("trial length and sampling rate must be positive".into()));
        }
        if !(self.noise_floor >= 0.0) {
            return Err(Error::InvalidConfig("noise floor must be non-negative".into()));
        }
        if let Some(p) = &self.amplitude_profiles {
            if p.len() != self.n_target + self.n_novel {
                return Err(Error::InvalidConfig(format!(
                    "expected {} amplitude profiles, got {}",
                    self.n_target + self.n_novel,
                    p.len()
                )));
            }
            if p.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidConfig("amplitude profiles must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.n_target + self.n_novel
    }

    pub fn samples_per_trial(&self) -> usize {
        (self.trial_seconds * self.sampling_rate_hz as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionInfo {
    pub id: u32,
    pub name: String,
    pub target: bool,
}

/// Recordings plus motion metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sampling_rate_hz: u32,
    pub motions: Vec<MotionInfo>,
    pub recordings: Vec<RawRecording>,
}

impl Dataset {
    pub fn motion(&self, id: u32) -> Option<&MotionInfo> {
        self.motions.iter().find(|m| m.id == id)
    }

    /// Target motion ids, ascending; class label `i` is the `i`-th entry.
    pub fn target_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.motions.iter().filter(|m| m.target).map(|m| m.id).collect();
        ids.sort_unstable();
        ids
    }

    pub fn novel_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.motions.iter().filter(|m| !m.target).map(|m| m.id).collect();
        ids.sort_unstable();
        ids
    }

    /// Keeps only the listed motions.
    pub fn subset(&self, motion_ids: &[u32]) -> Dataset {
        Dataset {
            sampling_rate_hz: self.sampling_rate_hz,
            motions: self.motions.iter().filter(|m| motion_ids.contains(&m.id)).cloned().collect(),
            recordings: self.recordings.iter().filter(|r| motion_ids.contains(&r.motion_id)).cloned().collect(),
        }
    }
}

fn draw_profiles(rng: &mut Rng, classes: usize, min_gap: f64) -> Result<Vec<[f64; CHANNELS]>> {
    let mut out: Vec<[f64; CHANNELS]> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut accepted = None;
        for _ in 0..MAX_PROFILE_RESAMPLES {
            let mut row = [0.0; CHANNELS];
            row.iter_mut().for_each(|v| *v = rng.uniform_range(PROFILE_RANGE.0, PROFILE_RANGE.1));
            let far = out.iter().all(|p| {
                p.iter().zip(&row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= min_gap
            });
            if far {
                accepted = Some(row);
                break;
            }
        }
        out.push(accepted.ok_or(Error::ProfilesNotDistinct(MAX_PROFILE_RESAMPLES))?);
    }
    Ok(out)
}

fn check_profiles_distinct(profiles: &[[f64; CHANNELS]]) -> Result<()> {
    for i in 0..profiles.len() {
        for j in 0..i {
            let gap: f64 = profiles[i].iter().zip(&profiles[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if gap < MIN_PROFILE_GAP {
                return Err(Error::InvalidConfig(format!("profiles {j} and {i} are only {gap:.3} apart")));
            }
        }
    }
    Ok(())
}

/// Profiles actually used for `cfg` (given or drawn).
pub fn amplitude_profiles(cfg: &SynthConfig) -> Result<Vec<[f64; CHANNELS]>> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    profiles_with(cfg, &mut rng)
}

fn profiles_with(cfg: &SynthConfig, rng: &mut Rng) -> Result<Vec<[f64; CHANNELS]>> {
    match &cfg.amplitude_profiles {
        Some(p) => {
            check_profiles_distinct(p)?;
            Ok(p.clone())
        }
        None => draw_profiles(rng, cfg.classes(), MIN_PROFILE_GAP),
    }
}

/// Motion ids are `0..n_target` for targets (named `T1..`) followed by the
/// novel motions (named `N1..`); repetitions are numbered from 0.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let profiles = profiles_with(cfg, &mut rng)?;
    let n = cfg.samples_per_trial();
    let fs = cfg.sampling_rate_hz as f64;
    let mut motions = Vec::with_capacity(cfg.classes());
    let mut recordings = Vec::with_capacity(cfg.classes() * cfg.reps);
    for (c, profile) in profiles.iter().enumerate() {
        let target = c < cfg.n_target;
        let name = if target { format!("T{}", c + 1) } else { format!("N{}", c - cfg.n_target + 1) };
        motions.push(MotionInfo { id: c as u32, name, target });
        for rep in 0..cfg.reps {
            let samples = (0..n)
                .map(|_| {
                    let mut row = [0.0; CHANNELS];
                    for (v, amp) in row.iter_mut().zip(profile) {
                        let signal = rng.normal();
                        let floor = rng.normal();
                        *v = amp * signal + cfg.noise_floor * floor;
                    }
                    row
                })
                .collect();
            recordings.push(RawRecording::new(samples, fs, c as u32, rep as u32, target)?);
        }
    }
    Ok(Dataset { sampling_rate_hz: cfg.sampling_rate_hz, motions, recordings })
}
