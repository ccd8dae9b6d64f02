//! Wall-time measurement of the memory read.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::reader::{read, stack_memory};
use crate::tensor::Tensor;

pub const WARMUPS: usize = 3;
pub const DEFAULT_REPEATS: usize = 20;

/// Feature shape `C x H x W` of one memory frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FeatureShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    #[serde(flatten)]
    pub shape: FeatureShape,
    pub t: usize,
    pub repeats: usize,
    pub median_ms: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median read time per `(shape, T)` over `repeats` runs after
/// [`WARMUPS`] untimed ones. Rows come sorted by shape order, then `T`.
pub fn bench_read(shapes: &[FeatureShape], t_list: &[usize], repeats: usize) -> Result<Vec<BenchRow>> {
    if repeats == 0 {
        return Err(Error::invalid("bench needs at least one repeat"));
    }
    if t_list.contains(&0) {
        return Err(Error::invalid("memory size T must be >= 1"));
    }
    let mut ts = t_list.to_vec();
    ts.sort_unstable();
    ts.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rows = Vec::new();
    for &shape in shapes {
        if shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::invalid(format!("empty feature shape {shape:?}")));
        }
        let dims = [shape.c, shape.h, shape.w];
        let query = Tensor::<f32>::from_fn(&dims, |_| rng.gen_range(-1.0..1.0));
        for &t in &ts {
            let frames: Vec<Tensor<f32>> = (0..t).map(|_| Tensor::from_fn(&dims, |_| rng.gen_range(-1.0..1.0))).collect();
            let refs: Vec<_> = frames.iter().enumerate().map(|(i, f)| (f, i + 1)).collect();
            let mem = stack_memory(&refs)?;
            let mut times = Vec::with_capacity(repeats);
            for k in 0..WARMUPS + repeats {
                let start = Instant::now();
                std::hint::black_box(read(&mem, &query)?);
                if k >= WARMUPS {
                    times.push(start.elapsed().as_secs_f64() * 1e3);
                }
            }
            rows.push(BenchRow {
                shape,
                t,
                repeats,
                median_ms: median(times),
            });
        }
    }
    Ok(rows)
}

/// `true` when, for every shape, time strictly increases with `T`.
pub fn strictly_increasing_in_t(rows: &[BenchRow]) -> bool {
    rows.windows(2)
        .filter(|w| w[0].shape == w[1].shape)
        .all(|w| w[1].median_ms > w[0].median_ms)
}

pub fn write_bench_csv(out: &mut impl Write, rows: &[BenchRow]) -> Result<()> {
    writeln!(out, "c,h,w,t,repeats,median_ms")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.shape.c, r.shape.h, r.shape.w, r.t, r.repeats, r.median_ms)?;
    }
    Ok(())
}
