//! Nearest-prototype classification with distance-threshold rejection.

use crate::error::{Error, Result};
use crate::extractors::ExtractorModel;
use crate::signal::FeatureMap;
use crate::spdmetric::{self, MetricKind};

/// Smallest calibration set accepted by [`calibrate_threshold`].
pub const MIN_CALIBRATION: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionOutcome {
    Target { label: usize, distance: f64 },
    Novel { nearest_label: usize, distance: f64 },
}

impl DetectionOutcome {
    pub fn is_novel(&self) -> bool {
        matches!(self, DetectionOutcome::Novel { .. })
    }

    pub fn label(&self) -> usize {
        match *self {
            DetectionOutcome::Target { label, .. } | DetectionOutcome::Novel { nearest_label: label, .. } => label,
        }
    }

    pub fn distance(&self) -> f64 {
        match *self {
            DetectionOutcome::Target { distance, .. } | DetectionOutcome::Novel { distance, .. } => distance,
        }
    }

    /// Target when `distance <= threshold`, Novel otherwise.
    pub fn classify(label: usize, distance: f64, threshold: f64) -> Self {
        if distance <= threshold {
            DetectionOutcome::Target { label, distance }
        } else {
            DetectionOutcome::Novel { nearest_label: label, distance }
        }
    }
}

/// `argmin_i D(f, m_i)` with ties going to the smallest index.
pub fn nearest_prototype(f: &[f64], prototypes: &[Vec<f64>], metric: MetricKind) -> Result<(usize, f64)> {
    nearest_by(prototypes.len(), |i| spdmetric::distance(metric, f, &prototypes[i]))
}

/// Nearest of `k` prototypes under an arbitrary distance callback.
pub fn nearest_by(k: usize, mut dist: impl FnMut(usize) -> Result<f64>) -> Result<(usize, f64)> {
    if k == 0 {
        return Err(Error::EmptyPrototypes);
    }
    let mut best = (0, dist(0)?);
    for i in 1..k {
        let d = dist(i)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

/// Threshold accepting the smallest fraction `>= tpr_goal` of calibration
/// distances: the `ceil(tpr_goal * N)`-th smallest value.
pub fn calibrate_threshold(target_distances: &[f64], tpr_goal: f64) -> Result<f64> {
    if !(tpr_goal > 0.0 && tpr_goal < 1.0) {
        return Err(Error::InvalidConfig(format!("tpr goal must be in (0, 1), got {tpr_goal}")));
    }
    let n = target_distances.len();
    if n < MIN_CALIBRATION {
        return Err(Error::InsufficientCalibration { got: n, need: MIN_CALIBRATION });
    }
    if target_distances.iter().any(|d| d.is_nan()) {
        return Err(Error::InvalidConfig("NaN calibration distance".into()));
    }
    let mut sorted = target_distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    // guard against 0.9 * 10 = 9.000000000000002
    let rank = ((tpr_goal * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

/// Fraction of distances at or below `threshold`.
pub fn acceptance_rate(distances: &[f64], threshold: f64) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    distances.iter().filter(|&&d| d <= threshold).count() as f64 / distances.len() as f64
}

/// An extractor, a metric and a rejection threshold.
#[derive(Debug, Clone)]
pub struct Detector {
    pub extractor: ExtractorModel,
    pub metric: MetricKind,
    pub prototypes: Vec<Vec<f64>>,
    pub threshold: f64,
}

impl Detector {
    pub fn new(extractor: ExtractorModel, metric: MetricKind, threshold: f64) -> Result<Self> {
        extractor.check_metric(metric)?;
        if !threshold.is_finite() {
            return Err(Error::InvalidConfig("threshold must be finite".into()));
        }
        let prototypes = extractor.prototypes();
        Ok(Self { extractor, metric, prototypes, threshold })
    }

    /// Nearest prototype of an already-extracted feature vector.
    pub fn nearest(&self, f: &[f64]) -> Result<(usize, f64)> {
        nearest_by(self.prototypes.len(), |i| self.extractor.distance(self.metric, f, &self.prototypes[i], i))
    }

    pub fn detect_features(&self, f: &[f64]) -> Result<DetectionOutcome> {
        let (label, distance) = self.nearest(f)?;
        Ok(DetectionOutcome::classify(label, distance, self.threshold))
    }

    pub fn detect(&self, map: &FeatureMap) -> Result<DetectionOutcome> {
        self.detect_features(&self.extractor.extract(map))
    }

    pub fn detect_all(&self, maps: &[FeatureMap]) -> Result<Vec<DetectionOutcome>> {
        self.extractor.extract_all(maps).iter().map(|f| self.detect_features(f)).collect()
    }

    /// Sets the threshold from target-class calibration maps.
    pub fn calibrate(&mut self, target_maps: &[FeatureMap], tpr_goal: f64) -> Result<f64> {
        let distances = self
            .extractor
            .extract_all(target_maps)
            .iter()
            .map(|f| self.nearest(f).map(|(_, d)| d))
            .collect::<Result<Vec<_>>>()?;
        self.threshold = calibrate_threshold(&distances, tpr_goal)?;
        Ok(self.threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractors::LdaModel;
    use crate::rng::Rng;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    #[test]
    fn exact_prototype_hit() {
        let protos = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 3.0]];
        assert_eq!(nearest_prototype(&[0.0, 3.0], &protos, MetricKind::Ed).unwrap(), (2, 0.0));
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let protos = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert_eq!(nearest_prototype(&[0.0, 0.0], &protos, MetricKind::Ed).unwrap().0, 0);
    }

    #[test]
    fn empty_prototypes_rejected() {
        assert!(matches!(nearest_prototype(&[0.0], &[], MetricKind::Ed), Err(Error::EmptyPrototypes)));
    }

    #[test]
    fn random_matches_exhaustive_scan() {
        let mut rng = Rng::new(5);
        for metric in [MetricKind::Ed, MetricKind::Sled] {
            for _ in 0..200 {
                let protos: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| rng.normal()).collect()).collect();
                let f: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, p) in protos.iter().enumerate() {
                    let d = match metric {
                        MetricKind::Ed => spdmetric::ed_squared(&f, p).unwrap().sqrt(),
                        _ => spdmetric::sled_squared(&f, p).unwrap().sqrt(),
                    };
                    if d < best_d {
                        best = i;
                        best_d = d;
                    }
                }
                let (label, d) = nearest_prototype(&f, &protos, metric).unwrap();
                assert_eq!(label, best);
                assert_eq!(d, best_d);
            }
        }
    }

    #[test]
    fn calibration_examples() {
        let d: Vec<f64> = (1..=10).map(f64::from).collect();
        let t = calibrate_threshold(&d, 0.9).unwrap();
        assert_eq!(t, 9.0);
        assert_eq!(acceptance_rate(&d, t), 0.9);
        let t = calibrate_threshold(&d, 0.85).unwrap();
        assert_eq!(t, 9.0);
        let same = vec![2.5; 12];
        let t = calibrate_threshold(&same, 0.9).unwrap();
        assert_eq!(t, 2.5);
        assert_eq!(acceptance_rate(&same, t), 1.0);
    }

    #[test]
    fn calibration_needs_data() {
        let err = calibrate_threshold(&[1.0; 9], 0.9).unwrap_err();
        assert!(err.to_string().contains("insufficient calibration data"));
        assert!(calibrate_threshold(&[1.0; 20], 1.0).is_err());
    }

    fn toy_detector(threshold: f64) -> Detector {
        let lda = LdaModel::from_parts(
            vec![0.0; 80],
            DMatrix::from_fn(80, 2, |i, j| if i == j { 1.0 } else { 0.0 }),
            vec![vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0]],
            vec![DMatrix::identity(2, 2); 3],
            0.0,
        );
        Detector::new(ExtractorModel::Lda(lda), MetricKind::Ed, threshold).unwrap()
    }

    fn map_at(x: f64, y: f64) -> FeatureMap {
        let mut m = FeatureMap::zeros();
        m.values[0][0] = x;
        m.values[0][1] = y;
        m
    }

    #[test]
    fn detect_at_prototype_is_target() {
        let det = toy_detector(0.5);
        assert_eq!(det.detect(&map_at(5.0, 0.0)).unwrap(), DetectionOutcome::Target { label: 1, distance: 0.0 });
    }

    #[test]
    fn negative_threshold_rejects_everything() {
        let det = toy_detector(-1.0);
        for (x, y) in [(0.0, 0.0), (5.0, 0.0), (2.0, 2.0)] {
            assert!(det.detect(&map_at(x, y)).unwrap().is_novel());
        }
    }

    #[test]
    fn calibrated_outlier_is_novel() {
        let mut rng = Rng::new(3);
        let mut det = toy_detector(0.0);
        let calib: Vec<FeatureMap> = (0..60)
            .map(|i| {
                let c = [(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)][i % 3];
                map_at(c.0 + 0.3 * rng.normal(), c.1 + 0.3 * rng.normal())
            })
            .collect();
        let t = det.calibrate(&calib, 0.9).unwrap();
        assert!(t > 0.0 && t < 2.0);
        assert!(det.detect(&map_at(-20.0, 30.0)).unwrap().is_novel());
    }

    #[test]
    fn md_requires_lda() {
        let det = toy_detector(1.0);
        assert!(Detector::new(det.extractor.clone(), MetricKind::Md, 1.0).is_ok());
    }

    proptest! {
        #[test]
        fn raising_threshold_never_rejects_more(
            dists in proptest::collection::vec(0.0f64..10.0, 1..50),
            t1 in -1.0f64..10.0,
            dt in 0.0f64..5.0,
        ) {
            for &d in &dists {
                let lo = DetectionOutcome::classify(0, d, t1);
                let hi = DetectionOutcome::classify(0, d, t1 + dt);
                prop_assert!(!( !lo.is_novel() && hi.is_novel()));
            }
        }

        #[test]
        fn calibrated_tpr_bounds(
            dists in proptest::collection::vec(0.0f64..100.0, 10..300),
            goal in 0.05f64..0.95,
        ) {
            let t = calibrate_threshold(&dists, goal).unwrap();
            let n = dists.len() as f64;
            let rate = acceptance_rate(&dists, t);
            prop_assert!(rate >= goal - 1e-12);
            // ties can only push coverage above the bound when values repeat
            let distinct = { let mut s = dists.clone(); s.sort_by(f64::total_cmp); s.dedup(); s.len() == dists.len() };
            if distinct {
                prop_assert!(rate <= goal + 1.0 / n + 1e-12);
            }
        }

        #[test]
        fn labels_invariant_under_squared_distance(seed in 0u64..500) {
            let mut rng = Rng::new(seed);
            let protos: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
            let f: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let (a, _) = nearest_prototype(&f, &protos, MetricKind::Sled).unwrap();
            let (b, _) = nearest_by(4, |i| spdmetric::sled_squared(&f, &protos[i])).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
