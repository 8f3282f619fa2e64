//! Windowing and per-window feature maps.
//!
//! Each analysis window yields an 8x10 map: one row per channel, columns are
//! the four time-domain features (MAV, WL, ZC, SSC) followed by six log-moment
//! spectral descriptors built from the signal and its first two differences.

use crate::error::{Error, Result};

pub const CHANNELS: usize = 8;
pub const TD_FEATURES: usize = 4;
pub const SPECTRAL_FEATURES: usize = 6;
pub const FEATURES: usize = TD_FEATURES + SPECTRAL_FEATURES;
/// Side length of the upsampled square map.
pub const UPSAMPLED_SIDE: usize = 80;
pub const FLAT_LEN: usize = CHANNELS * FEATURES;

/// Guard added inside every logarithm and denominator of the spectral descriptors.
pub const SPECTRAL_EPS: f64 = 1e-12;

/// One multichannel trial.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    /// Row-major samples, one `[f64; 8]` row per time step.
    pub samples: Vec<[f64; CHANNELS]>,
    pub sampling_rate_hz: f64,
    pub motion_id: u32,
    pub repetition: u32,
    pub is_target: bool,
}

impl RawRecording {
    pub fn new(
        samples: Vec<[f64; CHANNELS]>,
        sampling_rate_hz: f64,
        motion_id: u32,
        repetition: u32,
        is_target: bool,
    ) -> Result<Self> {
        if !(sampling_rate_hz > 0.0 && sampling_rate_hz.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sampling rate must be positive, got {sampling_rate_hz}"
            )));
        }
        Ok(Self { samples, sampling_rate_hz, motion_id, repetition, is_target })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    pub window_ms: f64,
    pub step_ms: f64,
    pub zc_threshold: f64,
    pub ssc_threshold: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { window_ms: 240.0, step_ms: 80.0, zc_threshold: 0.0, ssc_threshold: 0.0 }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_ms > 0.0) || !(self.step_ms > 0.0) {
            return Err(Error::InvalidConfig("window and step must be positive".into()));
        }
        if self.step_ms > self.window_ms {
            return Err(Error::InvalidConfig("step must not exceed window length".into()));
        }
        if !self.zc_threshold.is_finite() || !self.ssc_threshold.is_finite() {
            return Err(Error::InvalidConfig("thresholds must be finite".into()));
        }
        Ok(())
    }

    /// Window and hop lengths in samples at `fs`.
    pub fn lengths(&self, fs: f64) -> (usize, usize) {
        let w = (self.window_ms * fs / 1000.0).round() as usize;
        let h = (self.step_ms * fs / 1000.0).round() as usize;
        (w, h)
    }
}

/// Where a feature map came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WindowSource {
    pub motion_id: u32,
    pub repetition: u32,
    pub window_index: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    /// `values[channel][feature]`.
    pub values: [[f64; FEATURES]; CHANNELS],
    pub source: WindowSource,
}

impl FeatureMap {
    pub fn zeros() -> Self {
        Self { values: [[0.0; FEATURES]; CHANNELS], source: WindowSource::default() }
    }

    /// Row-major concatenation of the channel rows.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn from_flat(flat: &[f64], source: WindowSource) -> Result<Self> {
        if flat.len() != FLAT_LEN {
            return Err(Error::DimensionMismatch { expected: FLAT_LEN, actual: flat.len() });
        }
        let mut values = [[0.0; FEATURES]; CHANNELS];
        for (row, chunk) in values.iter_mut().zip(flat.chunks_exact(FEATURES)) {
            row.copy_from_slice(chunk);
        }
        Ok(Self { values, source })
    }

    pub fn upsample(&self) -> UpsampledMap {
        upsample_nearest(self)
    }
}

/// 80x80 nearest-neighbour enlargement of a [`FeatureMap`], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsampledMap {
    pub values: Vec<f64>,
}

impl UpsampledMap {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * UPSAMPLED_SIDE + c]
    }
}

/// Splits a recording into overlapping windows without padding.
pub fn segment<'a>(rec: &'a RawRecording, cfg: &WindowConfig) -> Result<Vec<&'a [[f64; CHANNELS]]>> {
    cfg.validate()?;
    let (w, h) = cfg.lengths(rec.sampling_rate_hz);
    if w == 0 || h == 0 {
        return Err(Error::InvalidConfig("window or step rounds to zero samples".into()));
    }
    let n = rec.samples.len();
    if n < w {
        return Err(Error::RecordingTooShort { samples: n, window: w });
    }
    let count = (n - w) / h + 1;
    Ok((0..count).map(|i| &rec.samples[i * h..i * h + w]).collect())
}

fn check_finite(ch: &[f64]) -> Result<()> {
    match ch.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::InvalidSample { index }),
        None => Ok(()),
    }
}

fn check_len(ch: &[f64]) -> Result<()> {
    if ch.len() < 3 {
        return Err(Error::InvalidConfig(format!("need at least 3 samples, got {}", ch.len())));
    }
    Ok(())
}

/// MAV, WL, ZC and SSC of one channel.
pub fn td_features(ch: &[f64], cfg: &WindowConfig) -> Result<[f64; TD_FEATURES]> {
    check_len(ch)?;
    check_finite(ch)?;
    let n = ch.len();
    let mav = ch.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
    let mut wl = 0.0;
    let mut zc = 0usize;
    for pair in ch.windows(2) {
        let d = (pair[1] - pair[0]).abs();
        wl += d;
        if pair[0] * pair[1] < 0.0 && d > cfg.zc_threshold {
            zc += 1;
        }
    }
    let ssc = ch
        .windows(3)
        .filter(|t| (t[1] - t[0]) * (t[1] - t[2]) > cfg.ssc_threshold)
        .count();
    Ok([mav, wl, zc as f64, ssc as f64])
}

/// Six log-moment descriptors from the zeroth, second and fourth spectral
/// moments, estimated in the time domain from the signal and its first and
/// second differences.
pub fn psd_descriptors(ch: &[f64]) -> Result<[f64; SPECTRAL_FEATURES]> {
    check_len(ch)?;
    check_finite(ch)?;
    let eps = SPECTRAL_EPS;
    let m0: f64 = ch.iter().map(|x| x * x).sum();
    let mut m2 = 0.0;
    let mut abs_d1 = 0.0;
    for p in ch.windows(2) {
        let d = p[1] - p[0];
        m2 += d * d;
        abs_d1 += d.abs();
    }
    let mut m4 = 0.0;
    let mut abs_d2 = 0.0;
    for t in ch.windows(3) {
        let d = t[2] - 2.0 * t[1] + t[0];
        m4 += d * d;
        abs_d2 += d.abs();
    }
    Ok([
        (m0 + eps).ln(),
        (m2 + eps).ln(),
        (m4 + eps).ln(),
        (m0 / ((m2 * m4).sqrt() + eps) + eps).ln(),
        (m2 / ((m0 * m4).sqrt() + eps) + eps).ln(),
        (abs_d1 / (abs_d2 + eps) + eps).ln(),
    ])
}

/// Feature map of one `[W x 8]` window.
pub fn feature_map(window: &[[f64; CHANNELS]], cfg: &WindowConfig) -> Result<FeatureMap> {
    let mut map = FeatureMap::zeros();
    let mut column = vec![0.0; window.len()];
    for (c, row) in map.values.iter_mut().enumerate() {
        for (dst, sample) in column.iter_mut().zip(window) {
            *dst = sample[c];
        }
        let td = td_features(&column, cfg)?;
        let sp = psd_descriptors(&column)?;
        row[..TD_FEATURES].copy_from_slice(&td);
        row[TD_FEATURES..].copy_from_slice(&sp);
    }
    Ok(map)
}

/// Segments a recording and computes one tagged feature map per window.
pub fn recording_feature_maps(rec: &RawRecording, cfg: &WindowConfig) -> Result<Vec<FeatureMap>> {
    segment(rec, cfg)?
        .into_iter()
        .enumerate()
        .map(|(i, w)| {
            let mut m = feature_map(w, cfg)?;
            m.source = WindowSource {
                motion_id: rec.motion_id,
                repetition: rec.repetition,
                window_index: i as u32,
            };
            Ok(m)
        })
        .collect()
}

pub fn upsample_nearest(m: &FeatureMap) -> UpsampledMap {
    let side = UPSAMPLED_SIDE;
    let mut values = Vec::with_capacity(side * side);
    for r in 0..side {
        let row = &m.values[r * CHANNELS / side];
        values.extend((0..side).map(|c| row[c * FEATURES / side]));
    }
    UpsampledMap { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn recording(n: usize, fs: f64) -> RawRecording {
        let samples = (0..n).map(|i| [i as f64; CHANNELS]).collect();
        RawRecording::new(samples, fs, 0, 0, true).unwrap()
    }

    #[test]
    fn default_trial_gives_23_windows() {
        let rec = recording(2000, 1000.0);
        let w = segment(&rec, &WindowConfig::default()).unwrap();
        assert_eq!(w.len(), 23);
        assert_eq!(w[1][0][0], 80.0);
        assert!(w.iter().all(|b| b.len() == 240));
    }

    #[test]
    fn exact_window_length_gives_one() {
        assert_eq!(segment(&recording(240, 1000.0), &WindowConfig::default()).unwrap().len(), 1);
    }

    #[test]
    fn short_recording_rejected() {
        let err = segment(&recording(239, 1000.0), &WindowConfig::default()).unwrap_err();
        assert!(err.to_string().contains("recording too short"));
    }

    #[test]
    fn window_config_validation() {
        let bad = WindowConfig { step_ms: 300.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = WindowConfig { window_ms: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn td_alternating() {
        let f = td_features(&[1.0, -1.0, 1.0, -1.0], &WindowConfig::default()).unwrap();
        assert_eq!(f, [1.0, 6.0, 3.0, 2.0]);
    }

    #[test]
    fn td_zero() {
        let f = td_features(&[0.0; 10], &WindowConfig::default()).unwrap();
        assert_eq!(f, [0.0; 4]);
    }

    #[test]
    fn non_finite_rejected() {
        let err = td_features(&[0.0, f64::NAN, 1.0], &WindowConfig::default()).unwrap_err();
        assert!(err.to_string().contains("invalid sample"));
        assert!(psd_descriptors(&[0.0, 1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn psd_zero_vector() {
        let f = psd_descriptors(&[0.0; 16]).unwrap();
        let le = SPECTRAL_EPS.ln();
        assert_eq!(&f[..3], &[le, le, le]);
        assert!(f.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn psd_constant_vector() {
        let c = 3.0;
        let f = psd_descriptors(&[c; 4]).unwrap();
        assert_eq!(f[0], (4.0 * c * c + SPECTRAL_EPS).ln());
        assert_eq!(f[1], SPECTRAL_EPS.ln());
        assert_eq!(f[2], SPECTRAL_EPS.ln());
    }

    // Independent definitional loops over index arithmetic.
    fn td_oracle(x: &[f64], zc_t: f64, ssc_t: f64) -> [f64; 4] {
        let n = x.len();
        let mut mav = 0.0;
        for i in 0..n {
            mav += x[i].abs();
        }
        mav /= n as f64;
        let (mut wl, mut zc, mut ssc) = (0.0, 0.0, 0.0);
        for i in 0..n - 1 {
            wl += (x[i + 1] - x[i]).abs();
            let sign_change = (x[i] > 0.0 && x[i + 1] < 0.0) || (x[i] < 0.0 && x[i + 1] > 0.0);
            if sign_change && (x[i + 1] - x[i]).abs() > zc_t {
                zc += 1.0;
            }
        }
        for i in 1..n - 1 {
            if (x[i] - x[i - 1]) * (x[i] - x[i + 1]) > ssc_t {
                ssc += 1.0;
            }
        }
        [mav, wl, zc, ssc]
    }

    fn psd_oracle(x: &[f64]) -> [f64; 6] {
        let n = x.len();
        let eps = 1e-12;
        let d1: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
        let d2: Vec<f64> = (0..n - 2).map(|i| d1[i + 1] - d1[i]).collect();
        let m0: f64 = x.iter().map(|v| v.powi(2)).sum();
        let m2: f64 = d1.iter().map(|v| v.powi(2)).sum();
        let m4: f64 = d2.iter().map(|v| v.powi(2)).sum();
        let s1: f64 = d1.iter().map(|v| v.abs()).sum();
        let s2: f64 = d2.iter().map(|v| v.abs()).sum();
        [
            (m0 + eps).ln(),
            (m2 + eps).ln(),
            (m4 + eps).ln(),
            (m0 / ((m2 * m4).sqrt() + eps) + eps).ln(),
            (m2 / ((m0 * m4).sqrt() + eps) + eps).ln(),
            (s1 / (s2 + eps) + eps).ln(),
        ]
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn features_match_definitional_loops_on_random_windows() {
        let mut rng = Rng::new(11);
        for trial in 0..1000 {
            let n = 3 + rng.below(300);
            let amp = rng.uniform_range(0.01, 5.0);
            let x: Vec<f64> = (0..n).map(|_| amp * rng.normal()).collect();
            let cfg = WindowConfig {
                zc_threshold: if trial % 2 == 0 { 0.0 } else { 0.1 },
                ssc_threshold: if trial % 3 == 0 { 0.0 } else { 0.05 },
                ..Default::default()
            };
            let td = td_features(&x, &cfg).unwrap();
            let td_ref = td_oracle(&x, cfg.zc_threshold, cfg.ssc_threshold);
            let sp = psd_descriptors(&x).unwrap();
            let sp_ref = psd_oracle(&x);
            for (a, b) in td.iter().zip(&td_ref).chain(sp.iter().zip(&sp_ref)) {
                assert!(rel_close(*a, *b, 1e-12), "trial {trial}: {a} vs {b}");
            }
        }
    }

    fn random_window(rng: &mut Rng, len: usize) -> Vec<[f64; CHANNELS]> {
        (0..len)
            .map(|_| {
                let mut row = [0.0; CHANNELS];
                row.iter_mut().for_each(|v| *v = rng.normal());
                row
            })
            .collect()
    }

    #[test]
    fn zero_window_map() {
        let window = vec![[0.0; CHANNELS]; 240];
        let m = feature_map(&window, &WindowConfig::default()).unwrap();
        let le = SPECTRAL_EPS.ln();
        for row in &m.values {
            assert_eq!(&row[..4], &[0.0; 4]);
            assert_eq!(&row[4..7], &[le, le, le]);
            assert!(row.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn scaled_channel_scales_mav_and_wl() {
        let mut rng = Rng::new(5);
        let mut window = random_window(&mut rng, 240);
        for row in window.iter_mut() {
            row[3] = 2.5 * row[1];
        }
        let m = feature_map(&window, &WindowConfig::default()).unwrap();
        assert!(rel_close(m.values[3][0], 2.5 * m.values[1][0], 1e-12));
        assert!(rel_close(m.values[3][1], 2.5 * m.values[1][1], 1e-12));
        // rows recomputed independently
        let ch3: Vec<f64> = window.iter().map(|r| r[3]).collect();
        let ref3 = td_oracle(&ch3, 0.0, 0.0);
        assert!(rel_close(m.values[3][0], ref3[0], 1e-12));
        assert!(rel_close(m.values[3][1], ref3[1], 1e-12));
    }

    #[test]
    fn feature_map_is_deterministic() {
        let mut rng = Rng::new(9);
        let window = random_window(&mut rng, 240);
        let a = feature_map(&window, &WindowConfig::default()).unwrap();
        let b = feature_map(&window, &WindowConfig::default()).unwrap();
        for (ra, rb) in a.values.iter().zip(&b.values) {
            for (x, y) in ra.iter().zip(rb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn upsample_single_nonzero() {
        let mut m = FeatureMap::zeros();
        m.values[0][0] = 1.0;
        let u = upsample_nearest(&m);
        assert_eq!(u.values.iter().filter(|&&v| v != 0.0).count(), 80);
        for r in 0..UPSAMPLED_SIDE {
            for c in 0..UPSAMPLED_SIDE {
                assert_eq!(u.get(r, c) != 0.0, r < 10 && c < 8, "({r},{c})");
            }
        }
    }

    #[test]
    fn upsample_constant() {
        let mut m = FeatureMap::zeros();
        m.values.iter_mut().flatten().for_each(|v| *v = 4.25);
        assert!(upsample_nearest(&m).values.iter().all(|&v| v == 4.25));
    }

    #[test]
    fn flatten_layout() {
        let mut m = FeatureMap::zeros();
        m.values[0][0] = 5.0;
        m.values[1][0] = 7.0;
        let f = m.flatten();
        assert_eq!(f.len(), 80);
        assert_eq!(f[0], 5.0);
        assert_eq!(f[10], 7.0);
        assert_eq!(FeatureMap::from_flat(&f, m.source).unwrap(), m);
    }

    proptest! {
        #[test]
        fn window_count_formula(n in 1usize..5000, w in 1usize..600, h_frac in 0.01f64..1.0) {
            let h = ((w as f64 * h_frac).round() as usize).max(1);
            prop_assume!(n >= w);
            let fs = 1000.0;
            let cfg = WindowConfig { window_ms: w as f64, step_ms: h as f64, ..Default::default() };
            let rec = recording(n, fs);
            let blocks = segment(&rec, &cfg).unwrap();
            prop_assert_eq!(blocks.len(), (n - w) / h + 1);
            for (i, b) in blocks.iter().enumerate() {
                prop_assert_eq!(b.len(), w);
                prop_assert_eq!(b[0][0], (i * h) as f64);
            }
        }

        #[test]
        fn upsample_preserves_multiset(vals in proptest::collection::vec(-1e3f64..1e3, FLAT_LEN)) {
            let m = FeatureMap::from_flat(&vals, WindowSource::default()).unwrap();
            let mut out = upsample_nearest(&m).values;
            let mut expected: Vec<f64> = vals.iter().flat_map(|&v| std::iter::repeat_n(v, 80)).collect();
            out.sort_by(f64::total_cmp);
            expected.sort_by(f64::total_cmp);
            prop_assert_eq!(out, expected);
        }

        #[test]
        fn features_finite_for_finite_input(x in proptest::collection::vec(-1e6f64..1e6, 3..200)) {
            let td = td_features(&x, &WindowConfig::default()).unwrap();
            let sp = psd_descriptors(&x).unwrap();
            prop_assert!(td.iter().chain(sp.iter()).all(|v| v.is_finite()));
        }
    }
}
