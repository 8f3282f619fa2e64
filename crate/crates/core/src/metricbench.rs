//! Wall-clock comparison of closed-form SLED against eigendecomposition LED.

use std::hint::black_box;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::spdmetric::{led_squared, lift, sled_squared, LiftParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricTiming {
    pub n: usize,
    /// Median nanoseconds per `sled_squared` call.
    pub sled_ns: f64,
    /// Median nanoseconds per lift + lift + `led_squared`.
    pub led_ns: f64,
    /// `led_ns / sled_ns`.
    pub speedup: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Times both distances on fresh random vector pairs for each dimension.
///
/// SLED calls are too short for a single clock reading, so each of the `reps`
/// samples averages a batch of calls sized to take roughly 20 microseconds.
pub fn bench_metric(dims: &[usize], reps: usize, seed: u64) -> Result<Vec<MetricTiming>> {
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be positive".into()));
    }
    if let Some(&n) = dims.iter().find(|&&n| n == 0) {
        return Err(Error::InvalidConfig(format!("dimension {n} is not positive")));
    }
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(dims.len());
    for &n in dims {
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..reps)
            .map(|_| ((0..n).map(|_| rng.normal()).collect(), (0..n).map(|_| rng.normal()).collect()))
            .collect();
        let batch = (20_000 / (4 * n).max(1)).max(1);

        let mut sled = Vec::with_capacity(reps);
        for (a, b) in &pairs {
            let start = Instant::now();
            for _ in 0..batch {
                black_box(sled_squared(black_box(a), black_box(b))?);
            }
            sled.push(start.elapsed().as_nanos() as f64 / batch as f64);
        }

        let mut led = Vec::with_capacity(reps);
        for (a, b) in &pairs {
            let start = Instant::now();
            let x = lift(black_box(a), LiftParams::default());
            let y = lift(black_box(b), LiftParams::default());
            black_box(led_squared(&x, &y)?);
            led.push(start.elapsed().as_nanos() as f64);
        }

        let (sled_ns, led_ns) = (median(sled), median(led));
        out.push(MetricTiming { n, sled_ns, led_ns, speedup: led_ns / sled_ns });
    }
    Ok(out)
}
