use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// Picks `count` sorted frame indices of a `len`-frame sequence with
/// `max - min <= max_gap`. The last index is the query frame, the others are
/// memory frames. A single-frame source yields `count` copies of frame 0
/// (each copy is augmented independently downstream); windows shorter than
/// `count` are sampled with replacement.
pub fn sample_training_frames(len: usize, count: usize, max_gap: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if count < 2 {
        return Err(Error::invalid(format!(
            "training samples need at least 2 frames (memory + query), got {count}"
        )));
    }
    if len == 0 {
        return Err(Error::invalid("cannot sample from an empty sequence"));
    }
    if len == 1 {
        return Ok(vec![0; count]);
    }
    let span = max_gap.min(len - 1);
    let lo = rng.gen_range(0..=len - 1 - span);
    let window = span + 1;
    let mut idx: Vec<usize> = if window >= count {
        sample(rng, window, count).into_iter().map(|i| lo + i).collect()
    } else {
        (0..count).map(|_| lo + rng.gen_range(0..window)).collect()
    };
    idx.sort_unstable();
    Ok(idx)
}
