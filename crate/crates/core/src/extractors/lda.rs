//! Fisher LDA extractor with class-mean prototypes and per-class covariances.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Within-class scatter shrinkage, relative to its mean diagonal.
pub const SCATTER_SHRINKAGE: f64 = 1e-3;
/// Per-class covariance shrinkage, relative to its mean diagonal.
pub const COVARIANCE_SHRINKAGE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LdaModel {
    /// Training mean subtracted before projection.
    pub center: Vec<f64>,
    /// `input_dim x (k-1)`.
    pub projection: DMatrix<f64>,
    /// Prototypes: mean of projected training vectors per class.
    pub class_means: Vec<Vec<f64>>,
    /// Shrunk covariances in the projected space.
    pub class_covariances: Vec<DMatrix<f64>>,
    pub shrinkage: f64,
    factors: Vec<Option<Cholesky<f64, Dyn>>>,
}

impl LdaModel {
    pub fn fit(features: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidConfig(format!("LDA needs at least 2 classes, got {classes}")));
        }
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: features.len(), actual: labels.len() });
        }
        if features.len() < 2 * classes {
            return Err(Error::InvalidConfig(format!(
                "LDA needs at least {} samples, got {}",
                2 * classes,
                features.len()
            )));
        }
        let dim = features[0].len();
        if let Some(bad) = features.iter().find(|f| f.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, actual: bad.len() });
        }
        let mut counts = vec![0usize; classes];
        let mut sums = vec![DVector::<f64>::zeros(dim); classes];
        for (f, &y) in features.iter().zip(labels) {
            if y >= classes {
                return Err(Error::LabelOutOfRange { label: y, classes });
            }
            counts[y] += 1;
            sums[y] += DVector::from_column_slice(f);
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(c));
        }
        let means: Vec<DVector<f64>> = sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect();
        let n_total = features.len() as f64;
        let global = sums.iter().fold(DVector::zeros(dim), |acc, s| acc + s) / n_total;

        let mut sw = DMatrix::<f64>::zeros(dim, dim);
        for (f, &y) in features.iter().zip(labels) {
            let d = DVector::from_column_slice(f) - &means[y];
            sw.syger(1.0, &d, &d, 1.0);
        }
        let mut sb = DMatrix::<f64>::zeros(dim, dim);
        for (m, &n) in means.iter().zip(&counts) {
            let d = m - &global;
            sb.syger(n as f64, &d, &d, 1.0);
        }
        sw.fill_upper_triangle_with_lower_triangle();
        sb.fill_upper_triangle_with_lower_triangle();
        let ridge = SCATTER_SHRINKAGE * sw.trace() / dim as f64;
        for i in 0..dim {
            sw[(i, i)] += ridge;
        }
        let chol = Cholesky::new(sw)
            .ok_or_else(|| Error::DegenerateScatter("within-class scatter not positive definite".into()))?;
        // whitened between-class scatter L^-1 Sb L^-T
        let l = chol.l();
        let half = l
            .solve_lower_triangular(&sb)
            .ok_or_else(|| Error::DegenerateScatter("singular scatter factor".into()))?;
        let mut whitened = l
            .solve_lower_triangular(&half.transpose())
            .ok_or_else(|| Error::DegenerateScatter("singular scatter factor".into()))?;
        whitened = (&whitened + whitened.transpose()) * 0.5;
        let eig = SymmetricEigen::new(whitened);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let out_dim = classes - 1;
        let lt = l.transpose();
        let mut projection = DMatrix::<f64>::zeros(dim, out_dim);
        for (j, &idx) in order.iter().take(out_dim).enumerate() {
            let u = eig.eigenvectors.column(idx).into_owned();
            let mut w = lt
                .solve_upper_triangular(&u)
                .ok_or_else(|| Error::DegenerateScatter("singular scatter factor".into()))?;
            // fix the sign so the largest-magnitude entry is positive
            let imax = w.iamax();
            if w[imax] < 0.0 {
                w.neg_mut();
            }
            projection.set_column(j, &w);
        }

        let center: Vec<f64> = global.iter().copied().collect();
        let mut model = Self {
            center,
            projection,
            class_means: Vec::new(),
            class_covariances: Vec::new(),
            shrinkage: SCATTER_SHRINKAGE,
            factors: Vec::new(),
        };
        let projected: Vec<Vec<f64>> = features.iter().map(|f| model.project(f)).collect();
        let mut pmeans = vec![vec![0.0; out_dim]; classes];
        for (z, &y) in projected.iter().zip(labels) {
            pmeans[y].iter_mut().zip(z).for_each(|(a, v)| *a += v);
        }
        for (m, &n) in pmeans.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|v| *v /= n as f64);
        }
        let mut covs = vec![DMatrix::<f64>::zeros(out_dim, out_dim); classes];
        for (z, &y) in projected.iter().zip(labels) {
            let d = DVector::from_iterator(out_dim, z.iter().zip(&pmeans[y]).map(|(a, b)| a - b));
            covs[y].syger(1.0, &d, &d, 1.0);
        }
        for (c, &n) in covs.iter_mut().zip(&counts) {
            c.fill_upper_triangle_with_lower_triangle();
            *c /= (n.max(2) - 1) as f64;
            let ridge = COVARIANCE_SHRINKAGE * c.trace() / out_dim as f64;
            for i in 0..out_dim {
                c[(i, i)] += ridge;
            }
        }
        model.class_means = pmeans;
        model.set_covariances(covs);
        Ok(model)
    }

    pub(crate) fn from_parts(
        center: Vec<f64>,
        projection: DMatrix<f64>,
        class_means: Vec<Vec<f64>>,
        class_covariances: Vec<DMatrix<f64>>,
        shrinkage: f64,
    ) -> Self {
        let mut m = Self { center, projection, class_means, class_covariances: Vec::new(), shrinkage, factors: Vec::new() };
        m.set_covariances(class_covariances);
        m
    }

    /// Replaces the per-class covariances and refreshes their factorizations.
    pub fn set_covariances(&mut self, covs: Vec<DMatrix<f64>>) {
        self.factors = covs.iter().map(|c| Cholesky::new(c.clone())).collect();
        self.class_covariances = covs;
    }

    pub fn classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn input_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.ncols()
    }

    /// `W^T (x - center)`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let (dim, out) = (self.input_dim(), self.output_dim());
        let mut z = vec![0.0; out];
        for i in 0..dim {
            let d = x[i] - self.center[i];
            for (j, zj) in z.iter_mut().enumerate() {
                *zj += self.projection[(i, j)] * d;
            }
        }
        z
    }

    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        self.class_means.clone()
    }

    /// `(x - m_i)^T Sigma_i^-1 (x - m_i)` in the projected space.
    pub fn mahalanobis_squared(&self, x: &[f64], class: usize) -> Result<f64> {
        if class >= self.classes() {
            return Err(Error::LabelOutOfRange { label: class, classes: self.classes() });
        }
        if x.len() != self.output_dim() {
            return Err(Error::DimensionMismatch { expected: self.output_dim(), actual: x.len() });
        }
        let chol = self.factors[class].as_ref().ok_or(Error::SingularCovariance(class))?;
        let d = DVector::from_iterator(x.len(), x.iter().zip(&self.class_means[class]).map(|(a, b)| a - b));
        let y = chol.l().solve_lower_triangular(&d).ok_or(Error::SingularCovariance(class))?;
        Ok(y.norm_squared().max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn blobs(rng: &mut Rng, centers: &[Vec<f64>], per_class: usize, spread: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (c, mu) in centers.iter().enumerate() {
            for _ in 0..per_class {
                xs.push(mu.iter().map(|m| m + spread * rng.normal()).collect());
                ys.push(c);
            }
        }
        (xs, ys)
    }

    fn nearest(model: &LdaModel, z: &[f64]) -> usize {
        let d: Vec<f64> =
            model.class_means.iter().map(|m| m.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum()).collect();
        (0..d.len()).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap()
    }

    #[test]
    fn separable_two_class() {
        let mut rng = Rng::new(1);
        let centers = vec![vec![0.0; 6], vec![3.0, -1.0, 0.0, 2.0, 0.0, 1.0]];
        let (xs, ys) = blobs(&mut rng, &centers, 40, 0.3);
        let m = LdaModel::fit(&xs, &ys, 2).unwrap();
        assert_eq!(m.output_dim(), 1);
        assert!((m.class_means[0][0] - m.class_means[1][0]).abs() > 1.0);
        let acc = xs.iter().zip(&ys).filter(|(x, &y)| nearest(&m, &m.project(x)) == y).count();
        assert_eq!(acc, xs.len());
    }

    #[test]
    fn row_permutation_invariant() {
        let mut rng = Rng::new(2);
        let centers = vec![vec![0.0; 5], vec![2.0, 0.0, 1.0, 0.0, -1.0], vec![-1.0, 2.0, 0.0, 1.0, 0.0]];
        let (xs, ys) = blobs(&mut rng, &centers, 20, 0.5);
        let a = LdaModel::fit(&xs, &ys, 3).unwrap();
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        rng.shuffle(&mut idx);
        let xs2: Vec<Vec<f64>> = idx.iter().map(|&i| xs[i].clone()).collect();
        let ys2: Vec<usize> = idx.iter().map(|&i| ys[i]).collect();
        let b = LdaModel::fit(&xs2, &ys2, 3).unwrap();
        assert!((&a.projection - &b.projection).amax() < 1e-9);
        for (ma, mb) in a.class_means.iter().zip(&b.class_means) {
            for (x, y) in ma.iter().zip(mb) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        for (ca, cb) in a.class_covariances.iter().zip(&b.class_covariances) {
            assert!((ca - cb).amax() < 1e-9);
        }
    }

    #[test]
    fn shared_mean_does_not_crash() {
        let mut rng = Rng::new(3);
        let centers = vec![vec![1.0; 4], vec![1.0; 4], vec![1.0; 4]];
        let (xs, ys) = blobs(&mut rng, &centers, 15, 1.0);
        let m = LdaModel::fit(&xs, &ys, 3).unwrap();
        assert!(m.projection.iter().all(|v| v.is_finite()));
        assert!(m.mahalanobis_squared(&m.project(&xs[0]), 0).unwrap().is_finite());
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let xs = vec![vec![1.0, 2.0]; 4];
        let err = LdaModel::fit(&xs, &[0, 0, 1, 1], 2).unwrap_err();
        assert!(matches!(err, Error::DegenerateScatter(_)));
    }

    #[test]
    fn prototype_is_projected_class_mean() {
        let mut rng = Rng::new(4);
        let centers = vec![vec![0.0; 3], vec![1.0, 1.0, 0.0], vec![0.0, 2.0, 2.0]];
        let (xs, ys) = blobs(&mut rng, &centers, 10, 0.4);
        let m = LdaModel::fit(&xs, &ys, 3).unwrap();
        for c in 0..3 {
            let members: Vec<Vec<f64>> =
                xs.iter().zip(&ys).filter(|(_, &y)| y == c).map(|(x, _)| m.project(x)).collect();
            for j in 0..2 {
                let mean = members.iter().map(|z| z[j]).sum::<f64>() / members.len() as f64;
                assert!((mean - m.class_means[c][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn identical_members_give_projected_point() {
        // class 0 is a single repeated vector plus one class with spread
        let mut rng = Rng::new(5);
        let v = vec![1.0, -2.0, 0.5];
        let mut xs = vec![v.clone(); 5];
        let mut ys = vec![0; 5];
        for _ in 0..10 {
            xs.push(vec![3.0 + rng.normal(), rng.normal(), rng.normal()]);
            ys.push(1);
        }
        let m = LdaModel::fit(&xs, &ys, 2).unwrap();
        let p = m.project(&v);
        assert!((p[0] - m.class_means[0][0]).abs() < 1e-12);
        // midpoint of two members
        let mut xs2 = vec![vec![0.0, 0.0, 0.0], vec![2.0, 2.0, 2.0]];
        let mut ys2 = vec![0, 0];
        for _ in 0..6 {
            xs2.push(vec![5.0 + rng.normal(), rng.normal(), rng.normal()]);
            ys2.push(1);
        }
        let m2 = LdaModel::fit(&xs2, &ys2, 2).unwrap();
        let mid = m2.project(&[1.0, 1.0, 1.0]);
        assert!((mid[0] - m2.class_means[0][0]).abs() < 1e-10);
    }

    fn handmade(cov: DMatrix<f64>, mean: Vec<f64>) -> LdaModel {
        LdaModel::from_parts(vec![0.0; 2], DMatrix::identity(2, 2), vec![mean], vec![cov], 0.0)
    }

    #[test]
    fn mahalanobis_examples() {
        let m = handmade(DMatrix::identity(2, 2), vec![0.0, 0.0]);
        assert_eq!(m.mahalanobis_squared(&[0.0, 0.0], 0).unwrap(), 0.0);
        assert!((m.mahalanobis_squared(&[3.0, 4.0], 0).unwrap() - 25.0).abs() < 1e-12);
        let m = handmade(DMatrix::from_diagonal(&nalgebra::dvector![4.0, 1.0]), vec![1.0, 1.0]);
        assert!((m.mahalanobis_squared(&[3.0, 2.0], 0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_identity_equals_ed() {
        let mut rng = Rng::new(9);
        let mean = vec![rng.normal(), rng.normal()];
        let m = handmade(DMatrix::identity(2, 2), mean.clone());
        for _ in 0..100 {
            let x = vec![3.0 * rng.normal(), 3.0 * rng.normal()];
            let ed = crate::spdmetric::ed_squared(&x, &mean).unwrap();
            assert!((m.mahalanobis_squared(&x, 0).unwrap() - ed).abs() <= 1e-12 * ed.max(1.0));
        }
    }

    #[test]
    fn singular_covariance_errors() {
        let m = handmade(DMatrix::zeros(2, 2), vec![0.0, 0.0]);
        assert!(matches!(m.mahalanobis_squared(&[1.0, 0.0], 0), Err(Error::SingularCovariance(0))));
    }
}
