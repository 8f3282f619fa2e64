//! Convolutional prototype network.
//!
//! Three valid (unpadded) convolutions with ReLU, one max-pool and a fully
//! connected layer map a square single-channel image to a `d`-vector. The
//! network and its `k` prototypes are trained jointly on a distance-softmax
//! cross-entropy plus a weighted prototype loss.
//!
//! Activations are kept in `C x B x H x W` order so that every convolution over
//! a whole batch is one GEMM against an im2col buffer.

use crate::error::{Error, Result};
use crate::gemm::{gemm, Op};
use crate::rng::Rng;
use crate::signal::{FeatureMap, FLAT_LEN, UPSAMPLED_SIDE};
use crate::spdmetric::{sled_squared_grad_acc, MetricKind};

use super::TrainConfig;

/// Layer inventory. `Default` is the full-size network on 80x80 inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpnArchitecture {
    pub input_side: usize,
    pub channels: [usize; 3],
    pub kernels: [usize; 3],
    pub strides: [usize; 3],
    pub pool: usize,
    pub feature_dim: usize,
}

impl Default for CpnArchitecture {
    fn default() -> Self {
        Self {
            input_side: UPSAMPLED_SIDE,
            channels: [8, 16, 32],
            kernels: [5, 5, 3],
            strides: [2, 2, 2],
            pool: 2,
            feature_dim: 16,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvShape {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    side_in: usize,
    side_out: usize,
}

impl ConvShape {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn pixels_in(&self) -> usize {
        self.side_in * self.side_in
    }
    fn pixels_out(&self) -> usize {
        self.side_out * self.side_out
    }
}

impl CpnArchitecture {
    fn conv_shapes(&self) -> Result<[ConvShape; 3]> {
        let mut side = self.input_side;
        let mut cin = 1;
        let mut shapes = [ConvShape { cin: 0, cout: 0, k: 0, stride: 0, side_in: 0, side_out: 0 }; 3];
        for (i, s) in shapes.iter_mut().enumerate() {
            let (k, stride, cout) = (self.kernels[i], self.strides[i], self.channels[i]);
            if k == 0 || stride == 0 || cout == 0 || side < k {
                return Err(Error::InvalidConfig(format!("conv layer {} does not fit a {side}x{side} input", i + 1)));
            }
            let side_out = (side - k) / stride + 1;
            *s = ConvShape { cin, cout, k, stride, side_in: side, side_out };
            side = side_out;
            cin = cout;
        }
        Ok(shapes)
    }

    fn pooled_side(&self) -> Result<usize> {
        let side = self.conv_shapes()?[2].side_out;
        if self.pool == 0 || side < self.pool {
            return Err(Error::InvalidConfig("max-pool larger than last feature map".into()));
        }
        Ok(side / self.pool)
    }

    /// Length of the flattened max-pool output feeding the FC layer.
    pub fn fc_inputs(&self) -> Result<usize> {
        let p = self.pooled_side()?;
        Ok(self.channels[2] * p * p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature dimension must be positive".into()));
        }
        self.fc_inputs().map(|_| ())
    }
}

/// Offsets of each parameter block inside the flat parameter vector, in
/// declaration order: conv weights/biases, FC weights/bias, prototypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    conv_w: [(usize, usize); 3],
    conv_b: [(usize, usize); 3],
    fc_w: (usize, usize),
    fc_b: (usize, usize),
    protos: (usize, usize),
    total: usize,
}

impl Layout {
    fn new(arch: &CpnArchitecture, classes: usize) -> Result<Self> {
        let shapes = arch.conv_shapes()?;
        let mut at = 0;
        let mut take = |n: usize| {
            let r = (at, n);
            at += n;
            r
        };
        let mut conv_w = [(0, 0); 3];
        let mut conv_b = [(0, 0); 3];
        for i in 0..3 {
            conv_w[i] = take(shapes[i].cout * shapes[i].patch());
            conv_b[i] = take(shapes[i].cout);
        }
        let fc_in = arch.fc_inputs()?;
        let fc_w = take(arch.feature_dim * fc_in);
        let fc_b = take(arch.feature_dim);
        let protos = take(classes * arch.feature_dim);
        Ok(Self { conv_w, conv_b, fc_w, fc_b, protos, total: at })
    }
}

fn block(v: &[f64], (o, n): (usize, usize)) -> &[f64] {
    &v[o..o + n]
}

fn block_mut(v: &mut [f64], (o, n): (usize, usize)) -> &mut [f64] {
    &mut v[o..o + n]
}

/// Per-cell standardisation of the 8x10 feature map, fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputScaler {
    pub fn fit(maps: &[FeatureMap]) -> Self {
        let n = maps.len().max(1) as f64;
        let mut mean = vec![0.0; FLAT_LEN];
        for m in maps {
            for (acc, v) in mean.iter_mut().zip(m.values.iter().flatten()) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        let mut var = vec![0.0; FLAT_LEN];
        for m in maps {
            for ((acc, v), mu) in var.iter_mut().zip(m.values.iter().flatten()).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Self { mean, std }
    }

    pub fn apply(&self, map: &FeatureMap) -> FeatureMap {
        let mut out = map.clone();
        for ((v, mu), sd) in out.values.iter_mut().flatten().zip(&self.mean).zip(&self.std) {
            *v = (*v - mu) / sd;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CpnModel {
    arch: CpnArchitecture,
    classes: usize,
    metric: MetricKind,
    ce_distance_power: u8,
    scaler: Option<InputScaler>,
    layout: Layout,
    params: Vec<f64>,
}

/// Mean loss and running training accuracy of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct CpnTraining {
    pub model: CpnModel,
    pub history: Vec<EpochStats>,
    /// Nearest-prototype accuracy of the final model on the training set.
    pub final_accuracy: f64,
}

struct ConvCache {
    cols: Vec<f64>,
    /// post-ReLU activations, `C x B x P`
    act: Vec<f64>,
}

/// Standard deviation of freshly drawn prototypes.
///
/// SLED grows only like `|a|^4` near the origin, so prototypes drawn much
/// closer to zero than the feature scale leave the softmax almost uniform and
/// the small learning rate cannot pull them out within the epoch budget.
pub const DEFAULT_PROTOTYPE_SCALE: f64 = 1.0;

struct ForwardCache {
    batch: usize,
    convs: Vec<ConvCache>,
    pool_argmax: Vec<usize>,
    /// FC input, `F x B`
    fc_in: Vec<f64>,
    /// features, `d x B`
    features: Vec<f64>,
}

impl CpnModel {
    /// Fresh model: He-normal conv/FC weights, zero biases, prototypes
    /// `DEFAULT_PROTOTYPE_SCALE * N(0, 1)`.
    pub fn new(arch: CpnArchitecture, classes: usize, metric: MetricKind, seed: u64) -> Result<Self> {
        Self::with_prototype_scale(arch, classes, metric, seed, DEFAULT_PROTOTYPE_SCALE)
    }

    /// As [`CpnModel::new`] with prototypes drawn from `prototype_scale * N(0, 1)`.
    pub fn with_prototype_scale(
        arch: CpnArchitecture,
        classes: usize,
        metric: MetricKind,
        seed: u64,
        prototype_scale: f64,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 classes, got {classes}")));
        }
        if metric == MetricKind::Md {
            return Err(Error::IncompatibleMetric { metric: "MD", extractor: "CPN" });
        }
        arch.validate()?;
        let layout = Layout::new(&arch, classes)?;
        let shapes = arch.conv_shapes()?;
        let mut rng = Rng::new(seed);
        let mut params = vec![0.0; layout.total];
        for i in 0..3 {
            let std = (2.0 / shapes[i].patch() as f64).sqrt();
            block_mut(&mut params, layout.conv_w[i]).iter_mut().for_each(|w| *w = std * rng.normal());
        }
        let std = (2.0 / arch.fc_inputs()? as f64).sqrt();
        block_mut(&mut params, layout.fc_w).iter_mut().for_each(|w| *w = std * rng.normal());
        block_mut(&mut params, layout.protos).iter_mut().for_each(|w| *w = prototype_scale * rng.normal());
        Ok(Self { arch, classes, metric, ce_distance_power: 1, scaler: None, layout, params })
    }

    pub(crate) fn from_parts(
        arch: CpnArchitecture,
        classes: usize,
        metric: MetricKind,
        ce_distance_power: u8,
        scaler: Option<InputScaler>,
        params: Vec<f64>,
    ) -> Result<Self> {
        let layout = Layout::new(&arch, classes)?;
        if params.len() != layout.total {
            return Err(Error::DimensionMismatch { expected: layout.total, actual: params.len() });
        }
        Ok(Self { arch, classes, metric, ce_distance_power, scaler, layout, params })
    }

    /// Length of the flat parameter vector for `arch` with `classes` prototypes.
    pub fn param_count(arch: &CpnArchitecture, classes: usize) -> Result<usize> {
        Ok(Layout::new(arch, classes)?.total)
    }

    pub fn architecture(&self) -> &CpnArchitecture {
        &self.arch
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn metric(&self) -> MetricKind {
        self.metric
    }

    pub fn ce_distance_power(&self) -> u8 {
        self.ce_distance_power
    }

    pub fn set_ce_distance_power(&mut self, p: u8) -> Result<()> {
        if !matches!(p, 1 | 2) {
            return Err(Error::InvalidConfig("ce distance power must be 1 or 2".into()));
        }
        self.ce_distance_power = p;
        Ok(())
    }

    pub fn scaler(&self) -> Option<&InputScaler> {
        self.scaler.as_ref()
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim
    }

    /// Flat parameter vector in declaration order.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn zero_biases(&mut self) {
        for i in 0..3 {
            block_mut(&mut self.params, self.layout.conv_b[i]).fill(0.0);
        }
        block_mut(&mut self.params, self.layout.fc_b).fill(0.0);
    }

    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        block(&self.params, self.layout.protos).chunks(self.arch.feature_dim).map(<[f64]>::to_vec).collect()
    }

    fn input_len(&self) -> usize {
        self.arch.input_side * self.arch.input_side
    }

    /// Network output for one square image.
    pub fn forward(&self, image: &[f64]) -> Result<Vec<f64>> {
        if image.len() != self.input_len() {
            return Err(Error::DimensionMismatch { expected: self.input_len(), actual: image.len() });
        }
        Ok(self.forward_batch(&[image]).pop().unwrap_or_default())
    }

    /// Outputs for a batch of images, each of length `input_side^2`.
    pub fn forward_batch(&self, images: &[&[f64]]) -> Vec<Vec<f64>> {
        // one sample at a time keeps the im2col buffers in cache
        images.iter().map(|img| self.forward_cached(std::slice::from_ref(img)).features).collect()
    }

    /// Image fed to the network for a feature map: optional standardisation,
    /// then nearest upsampling.
    pub fn prepare(&self, map: &FeatureMap) -> Vec<f64> {
        match &self.scaler {
            Some(s) => s.apply(map).upsample().values,
            None => map.upsample().values,
        }
    }

    pub fn extract(&self, map: &FeatureMap) -> Vec<f64> {
        let img = self.prepare(map);
        self.forward_batch(&[&img]).pop().unwrap_or_default()
    }

    pub fn extract_all(&self, maps: &[FeatureMap]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(maps.len());
        for chunk in maps.chunks(64) {
            let imgs: Vec<Vec<f64>> = chunk.iter().map(|m| self.prepare(m)).collect();
            let refs: Vec<&[f64]> = imgs.iter().map(Vec::as_slice).collect();
            out.extend(self.forward_batch(&refs));
        }
        out
    }

    fn forward_cached(&self, images: &[&[f64]]) -> ForwardCache {
        let shapes = self.arch.conv_shapes().expect("validated architecture");
        let b = images.len();
        // single input channel: C x B x P is just the images back to back
        let mut x: Vec<f64> = Vec::with_capacity(b * self.input_len());
        for img in images {
            assert_eq!(img.len(), self.input_len(), "input image size");
            x.extend_from_slice(img);
        }
        let mut convs: Vec<ConvCache> = Vec::with_capacity(3);
        for (i, s) in shapes.iter().enumerate() {
            let cols = im2col(if i == 0 { &x } else { &convs[i - 1].act }, s, b);
            let n = b * s.pixels_out();
            let mut act = vec![0.0; s.cout * n];
            gemm(s.cout, s.patch(), n, 1.0, block(&self.params, self.layout.conv_w[i]), Op::N, &cols, Op::N, 0.0, &mut act);
            let bias = block(&self.params, self.layout.conv_b[i]);
            for (row, &bv) in act.chunks_mut(n).zip(bias) {
                row.iter_mut().for_each(|v| *v = (*v + bv).max(0.0));
            }
            convs.push(ConvCache { cols, act });
        }
        let last = shapes[2];
        let (pooled, pool_argmax) = maxpool(&convs[2].act, last.cout, b, last.side_out, self.arch.pool);
        let ps = last.side_out / self.arch.pool;
        let pp = ps * ps;
        let f_in = last.cout * pp;
        let mut fc_in = vec![0.0; f_in * b];
        for c in 0..last.cout {
            for s in 0..b {
                for p in 0..pp {
                    fc_in[(c * pp + p) * b + s] = pooled[c * b * pp + s * pp + p];
                }
            }
        }
        let d = self.arch.feature_dim;
        let mut features = vec![0.0; d * b];
        gemm(d, f_in, b, 1.0, block(&self.params, self.layout.fc_w), Op::N, &fc_in, Op::N, 0.0, &mut features);
        for (row, &bv) in features.chunks_mut(b).zip(block(&self.params, self.layout.fc_b)) {
            row.iter_mut().for_each(|v| *v += bv);
        }
        ForwardCache { batch: b, convs, pool_argmax, fc_in, features }
    }

    /// Backpropagates `d_features` (`d x B`) and accumulates into `grad`.
    fn backward(&self, cache: &ForwardCache, d_features: &[f64], grad: &mut [f64]) {
        let shapes = self.arch.conv_shapes().expect("validated architecture");
        let b = cache.batch;
        let d = self.arch.feature_dim;
        let f_in = cache.fc_in.len() / b;
        gemm(d, b, f_in, 1.0, d_features, Op::N, &cache.fc_in, Op::T, 1.0, block_mut(grad, self.layout.fc_w));
        for (g, row) in block_mut(grad, self.layout.fc_b).iter_mut().zip(d_features.chunks(b)) {
            *g += row.iter().sum::<f64>();
        }
        let mut d_fc_in = vec![0.0; f_in * b];
        gemm(f_in, d, b, 1.0, block(&self.params, self.layout.fc_w), Op::T, d_features, Op::N, 0.0, &mut d_fc_in);

        let last = shapes[2];
        let ps = last.side_out / self.arch.pool;
        let pp = ps * ps;
        let mut d_act = vec![0.0; last.cout * b * last.pixels_out()];
        for c in 0..last.cout {
            for s in 0..b {
                for p in 0..pp {
                    let pooled_idx = c * b * pp + s * pp + p;
                    d_act[cache.pool_argmax[pooled_idx]] += d_fc_in[(c * pp + p) * b + s];
                }
            }
        }

        for i in (0..3).rev() {
            let s = &shapes[i];
            let n = b * s.pixels_out();
            let conv = &cache.convs[i];
            // ReLU mask
            for (g, &a) in d_act.iter_mut().zip(&conv.act) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            gemm(s.cout, n, s.patch(), 1.0, &d_act, Op::N, &conv.cols, Op::T, 1.0, block_mut(grad, self.layout.conv_w[i]));
            for (g, row) in block_mut(grad, self.layout.conv_b[i]).iter_mut().zip(d_act.chunks(n)) {
                *g += row.iter().sum::<f64>();
            }
            if i == 0 {
                break;
            }
            let mut d_cols = vec![0.0; s.patch() * n];
            gemm(s.patch(), s.cout, n, 1.0, block(&self.params, self.layout.conv_w[i]), Op::T, &d_act, Op::N, 0.0, &mut d_cols);
            d_act = col2im(&d_cols, s, b);
        }
    }

    /// Mean loss over the batch columns of `features`; when `grad` is given,
    /// accumulates `grad_scale` times d(summed loss)/d(prototypes) into it and
    /// returns the matching d/d(features).
    fn loss_and_feature_grad(
        &self,
        features: &[f64],
        batch: usize,
        labels: &[usize],
        lambda_loss: f64,
        grad: Option<&mut [f64]>,
        grad_scale: f64,
    ) -> (f64, Vec<f64>, usize) {
        let d = self.arch.feature_dim;
        let k = self.classes;
        let protos = block(&self.params, self.layout.protos);
        let mut d_feat = vec![0.0; d * batch];
        let mut d_protos = vec![0.0; k * d];
        let want_grad = grad.is_some();
        let mut total = 0.0;
        let mut correct = 0;
        let mut f = vec![0.0; d];
        let mut gf = vec![0.0; d];
        let mut sq = vec![0.0; k];
        for s in 0..batch {
            for j in 0..d {
                f[j] = features[j * batch + s];
            }
            let y = labels[s];
            for (c, m) in protos.chunks(d).enumerate() {
                sq[c] = self.squared_distance(&f, m);
            }
            let dist: Vec<f64> = sq.iter().map(|&v| self.ce_distance(v)).collect();
            let p = super::prototype_probabilities(&dist);
            let pred = argmin(&dist);
            if pred == y {
                correct += 1;
            }
            total += -p[y].max(f64::MIN_POSITIVE).ln() + lambda_loss * sq[y];
            if !want_grad {
                continue;
            }
            gf.fill(0.0);
            for c in 0..k {
                let indicator = if c == y { 1.0 } else { 0.0 };
                let mut coef = (indicator - p[c]) * self.ce_distance_slope(sq[c]);
                if c == y {
                    coef += lambda_loss;
                }
                if coef == 0.0 {
                    continue;
                }
                let m = &protos[c * d..(c + 1) * d];
                let gm = &mut d_protos[c * d..(c + 1) * d];
                self.squared_distance_grad(&f, m, coef * grad_scale, &mut gf, gm);
            }
            for j in 0..d {
                d_feat[j * batch + s] = gf[j];
            }
        }
        if let Some(g) = grad {
            for (acc, v) in block_mut(g, self.layout.protos).iter_mut().zip(&d_protos) {
                *acc += v;
            }
        }
        (total / batch as f64, d_feat, correct)
    }

    fn squared_distance(&self, f: &[f64], m: &[f64]) -> f64 {
        match self.metric {
            MetricKind::Ed => f.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum(),
            _ => crate::spdmetric::sled_squared(f, m).expect("equal lengths"),
        }
    }

    fn squared_distance_grad(&self, f: &[f64], m: &[f64], scale: f64, gf: &mut [f64], gm: &mut [f64]) {
        match self.metric {
            MetricKind::Ed => {
                for j in 0..f.len() {
                    let g = 2.0 * scale * (f[j] - m[j]);
                    gf[j] += g;
                    gm[j] -= g;
                }
            }
            _ => {
                sled_squared_grad_acc(f, m, scale, gf, gm);
            }
        }
    }

    fn ce_distance(&self, sq: f64) -> f64 {
        if self.ce_distance_power == 2 {
            sq
        } else {
            sq.max(0.0).sqrt()
        }
    }

    fn ce_distance_slope(&self, sq: f64) -> f64 {
        if self.ce_distance_power == 2 {
            1.0
        } else {
            0.5 / sq.max(1e-24).sqrt()
        }
    }

    /// Mean batch loss: cross-entropy over the distance softmax plus
    /// `lambda_loss` times the squared distance to the labelled prototype.
    pub fn loss(&self, images: &[&[f64]], labels: &[usize], lambda_loss: f64) -> Result<f64> {
        self.check_labels(labels, images.len())?;
        let cache = self.forward_cached(images);
        let inv_b = 1.0 / cache.batch as f64;
        Ok(self.loss_and_feature_grad(&cache.features, cache.batch, labels, lambda_loss, None, inv_b).0)
    }

    /// Loss and its gradient with respect to the flat parameter vector.
    pub fn loss_and_grad(&self, images: &[&[f64]], labels: &[usize], lambda_loss: f64) -> Result<(f64, Vec<f64>)> {
        self.check_labels(labels, images.len())?;
        let mut grad = vec![0.0; self.params.len()];
        let (loss, _) = self.accumulate_grad(images, labels, lambda_loss, &mut grad);
        Ok((loss, grad))
    }

    fn accumulate_grad(&self, images: &[&[f64]], labels: &[usize], lambda_loss: f64, grad: &mut [f64]) -> (f64, usize) {
        let inv_b = 1.0 / images.len() as f64;
        let (mut loss, mut correct) = (0.0, 0);
        for (img, y) in images.iter().zip(labels) {
            let cache = self.forward_cached(std::slice::from_ref(img));
            let (l, d_feat, c) = self.loss_and_feature_grad(
                &cache.features,
                1,
                std::slice::from_ref(y),
                lambda_loss,
                Some(&mut *grad),
                inv_b,
            );
            self.backward(&cache, &d_feat, grad);
            loss += l * inv_b;
            correct += c;
        }
        (loss, correct)
    }

    fn check_labels(&self, labels: &[usize], n: usize) -> Result<()> {
        if labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: labels.len() });
        }
        if n == 0 {
            return Err(Error::EmptyInput("batch"));
        }
        match labels.iter().find(|&&l| l >= self.classes) {
            Some(&label) => Err(Error::LabelOutOfRange { label, classes: self.classes }),
            None => Ok(()),
        }
    }

    /// Trains on feature maps: fits the input scaler (if enabled), upsamples and
    /// runs [`CpnModel::train_images`].
    pub fn train_on_maps(
        maps: &[FeatureMap],
        labels: &[usize],
        classes: usize,
        metric: MetricKind,
        arch: CpnArchitecture,
        cfg: &TrainConfig,
    ) -> Result<CpnTraining> {
        if arch.input_side != UPSAMPLED_SIDE {
            return Err(Error::InvalidConfig("feature-map training needs an 80x80 input layer".into()));
        }
        let scaler = cfg.standardize.then(|| InputScaler::fit(maps));
        let images: Vec<Vec<f64>> = maps
            .iter()
            .map(|m| match &scaler {
                Some(s) => s.apply(m).upsample().values,
                None => m.upsample().values,
            })
            .collect();
        let mut out = Self::train_images(&images, labels, classes, metric, arch, cfg)?;
        out.model.scaler = scaler;
        Ok(out)
    }

    /// Adam over shuffled mini-batches with a step learning-rate schedule.
    /// Deterministic for a given `cfg.seed`.
    pub fn train_images(
        images: &[Vec<f64>],
        labels: &[usize],
        classes: usize,
        metric: MetricKind,
        arch: CpnArchitecture,
        cfg: &TrainConfig,
    ) -> Result<CpnTraining> {
        cfg.validate()?;
        if images.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: images.len(), actual: labels.len() });
        }
        let mut counts = vec![0usize; classes];
        for &l in labels {
            if l >= classes {
                return Err(Error::LabelOutOfRange { label: l, classes });
            }
            counts[l] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(c));
        }
        let mut model = CpnModel::with_prototype_scale(arch, classes, metric, cfg.seed, cfg.prototype_init_scale)?;
        model.ce_distance_power = cfg.ce_distance_power;
        let side = arch.input_side * arch.input_side;
        if let Some(img) = images.iter().find(|i| i.len() != side) {
            return Err(Error::DimensionMismatch { expected: side, actual: img.len() });
        }

        let mut rng = Rng::new(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
        let mut adam = Adam::new(model.params.len(), cfg);
        let mut order: Vec<usize> = (0..images.len()).collect();
        let mut grad = vec![0.0; model.params.len()];
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            rng.shuffle(&mut order);
            let lr = cfg.lr_at_epoch(epoch);
            let (mut loss_sum, mut correct) = (0.0, 0usize);
            for batch in order.chunks(cfg.batch_size) {
                let imgs: Vec<&[f64]> = batch.iter().map(|&i| images[i].as_slice()).collect();
                let labs: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                grad.fill(0.0);
                let (loss, c) = model.accumulate_grad(&imgs, &labs, cfg.lambda_loss, &mut grad);
                loss_sum += loss * batch.len() as f64;
                correct += c;
                adam.step(&mut model.params, &grad, lr);
            }
            let n = images.len() as f64;
            history.push(EpochStats { mean_loss: loss_sum / n, accuracy: correct as f64 / n });
        }
        let final_accuracy = model.accuracy_on(images, labels);
        Ok(CpnTraining { model, history, final_accuracy })
    }

    /// Nearest-prototype accuracy on a labelled image set.
    pub fn accuracy_on(&self, images: &[Vec<f64>], labels: &[usize]) -> f64 {
        if images.is_empty() {
            return 0.0;
        }
        let protos = self.prototypes();
        let mut correct = 0;
        for (chunk, labs) in images.chunks(64).zip(labels.chunks(64)) {
            let refs: Vec<&[f64]> = chunk.iter().map(Vec::as_slice).collect();
            for (f, &y) in self.forward_batch(&refs).iter().zip(labs) {
                let d: Vec<f64> = protos.iter().map(|m| self.squared_distance(f, m)).collect();
                if argmin(&d) == y {
                    correct += 1;
                }
            }
        }
        correct as f64 / images.len() as f64
    }
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.adam_eps }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// `x` is `Cin x B x H x W`; returns `(Cin*k*k) x (B*Ho*Wo)`.
fn im2col(x: &[f64], s: &ConvShape, b: usize) -> Vec<f64> {
    let (k, st, wi, wo) = (s.k, s.stride, s.side_in, s.side_out);
    let n = b * s.pixels_out();
    let mut cols = vec![0.0; s.patch() * n];
    for c in 0..s.cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for bi in 0..b {
                    let src = &x[(c * b + bi) * s.pixels_in()..];
                    let out = &mut dst[bi * s.pixels_out()..(bi + 1) * s.pixels_out()];
                    for oy in 0..wo {
                        let src_row = &src[(oy * st + ky) * wi + kx..];
                        for ox in 0..wo {
                            out[oy * wo + ox] = src_row[ox * st];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: &[f64], s: &ConvShape, b: usize) -> Vec<f64> {
    let (k, st, wi, wo) = (s.k, s.stride, s.side_in, s.side_out);
    let n = b * s.pixels_out();
    let mut x = vec![0.0; s.cin * b * s.pixels_in()];
    for c in 0..s.cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for bi in 0..b {
                    let dst = &mut x[(c * b + bi) * s.pixels_in()..(c * b + bi + 1) * s.pixels_in()];
                    let inp = &src[bi * s.pixels_out()..];
                    for oy in 0..wo {
                        for ox in 0..wo {
                            dst[(oy * st + ky) * wi + kx + ox * st] += inp[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Non-overlapping `pool x pool` max-pool over `C x B x side x side`; returns
/// pooled values and the flat input index of each maximum (first on ties).
fn maxpool(x: &[f64], channels: usize, b: usize, side: usize, pool: usize) -> (Vec<f64>, Vec<usize>) {
    let ps = side / pool;
    let mut out = Vec::with_capacity(channels * b * ps * ps);
    let mut arg = Vec::with_capacity(channels * b * ps * ps);
    for plane in 0..channels * b {
        let base = plane * side * side;
        for oy in 0..ps {
            for ox in 0..ps {
                let mut best = base + (oy * pool) * side + ox * pool;
                for dy in 0..pool {
                    for dx in 0..pool {
                        let idx = base + (oy * pool + dy) * side + ox * pool + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}
