//! Little-endian binary model files.
//!
//! ```text
//! CPN1 | u32 metric | u32 ce_power | u32 input_side | u32 channels[3] | u32 kernels[3]
//!      | u32 strides[3] | u32 pool | u32 feature_dim | u32 classes | u32 scaler_len
//!      | f64 scaler_mean[scaler_len] | f64 scaler_std[scaler_len] | f64 params[..]
//! LDA1 | u32 metric | u32 input_dim | u32 classes
//!      | f64 shrinkage | f64 center[input_dim] | f64 projection[input_dim x (k-1)] (row-major)
//!      | f64 class_means[k x (k-1)] | f64 covariances[k x (k-1) x (k-1)] (row-major)
//! ```
//! Metric codes: 0 = SLED, 1 = ED, 2 = MD. CPN parameters follow declaration
//! order: conv1 weights, conv1 bias, conv2 weights, conv2 bias, conv3 weights,
//! conv3 bias, FC weights, FC bias, prototypes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::{CpnArchitecture, CpnModel, ExtractorModel, InputScaler, LdaModel};
use crate::error::{Error, Result};
use crate::spdmetric::MetricKind;

const CPN_MAGIC: &[u8; 4] = b"CPN1";
const LDA_MAGIC: &[u8; 4] = b"LDA1";

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::ModelFormat(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64s(w: &mut impl Write, vals: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b).map_err(truncated)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::ModelFormat("truncated model file".into())
    } else {
        Error::Io(e)
    }
}

pub fn write_model(w: &mut impl Write, model: &ExtractorModel, metric: MetricKind) -> Result<()> {
    model.check_metric(metric)?;
    match model {
        ExtractorModel::Cpn(m) => {
            w.write_all(CPN_MAGIC)?;
            put_u32(w, metric.code() as usize)?;
            put_u32(w, m.ce_distance_power() as usize)?;
            let a = m.architecture();
            put_u32(w, a.input_side)?;
            for v in a.channels.iter().chain(&a.kernels).chain(&a.strides) {
                put_u32(w, *v)?;
            }
            put_u32(w, a.pool)?;
            put_u32(w, a.feature_dim)?;
            put_u32(w, m.classes())?;
            match m.scaler() {
                Some(s) => {
                    put_u32(w, s.mean.len())?;
                    put_f64s(w, s.mean.iter().copied())?;
                    put_f64s(w, s.std.iter().copied())?;
                }
                None => put_u32(w, 0)?,
            }
            put_f64s(w, m.params().iter().copied())?;
        }
        ExtractorModel::Lda(m) => {
            w.write_all(LDA_MAGIC)?;
            put_u32(w, metric.code() as usize)?;
            put_u32(w, m.input_dim())?;
            put_u32(w, m.classes())?;
            put_f64s(w, [m.shrinkage])?;
            put_f64s(w, m.center.iter().copied())?;
            put_f64s(w, m.projection.transpose().iter().copied())?;
            put_f64s(w, m.class_means.iter().flatten().copied())?;
            for c in &m.class_covariances {
                put_f64s(w, c.transpose().iter().copied())?;
            }
        }
    }
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<(ExtractorModel, MetricKind)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    let metric = MetricKind::from_code(get_u32(r)? as u32)?;
    let model = match &magic {
        CPN_MAGIC => {
            let ce_power = get_u32(r)?;
            let input_side = get_u32(r)?;
            let mut dims = [0usize; 9];
            for d in dims.iter_mut() {
                *d = get_u32(r)?;
            }
            let pool = get_u32(r)?;
            let feature_dim = get_u32(r)?;
            let classes = get_u32(r)?;
            let arch = CpnArchitecture {
                input_side,
                channels: [dims[0], dims[1], dims[2]],
                kernels: [dims[3], dims[4], dims[5]],
                strides: [dims[6], dims[7], dims[8]],
                pool,
                feature_dim,
            };
            arch.validate()?;
            let scaler_len = get_u32(r)?;
            let scaler = if scaler_len > 0 {
                let mean = get_f64s(r, scaler_len)?;
                let std = get_f64s(r, scaler_len)?;
                Some(InputScaler { mean, std })
            } else {
                None
            };
            if classes < 2 {
                return Err(Error::ModelFormat(format!("bad class count {classes}")));
            }
            let params = get_f64s(r, CpnModel::param_count(&arch, classes)?)?;
            let ce_power = u8::try_from(ce_power).map_err(|_| Error::ModelFormat("bad ce power".into()))?;
            ExtractorModel::Cpn(CpnModel::from_parts(arch, classes, metric, ce_power, scaler, params)?)
        }
        LDA_MAGIC => {
            let dim = get_u32(r)?;
            let classes = get_u32(r)?;
            if classes < 2 || dim == 0 {
                return Err(Error::ModelFormat(format!("bad LDA dimensions {dim}x{classes}")));
            }
            let out = classes - 1;
            let shrinkage = get_f64s(r, 1)?[0];
            let center = get_f64s(r, dim)?;
            let projection = DMatrix::from_row_slice(dim, out, &get_f64s(r, dim * out)?);
            let means = get_f64s(r, classes * out)?;
            let class_means = means.chunks(out).map(<[f64]>::to_vec).collect();
            let mut covs = Vec::with_capacity(classes);
            for _ in 0..classes {
                covs.push(DMatrix::from_row_slice(out, out, &get_f64s(r, out * out)?));
            }
            ExtractorModel::Lda(LdaModel::from_parts(center, projection, class_means, covs, shrinkage))
        }
        other => return Err(Error::ModelFormat(format!("unknown magic {:?}", String::from_utf8_lossy(other)))),
    };
    model.check_metric(metric)?;
    Ok((model, metric))
}

pub fn save_model(path: impl AsRef<Path>, model: &ExtractorModel, metric: MetricKind) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model, metric)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ExtractorModel, MetricKind)> {
    read_model(&mut BufReader::new(File::open(path)?))
}
