//! Row-major binary run-length coding. Runs alternate between unset and set
//! pixels and always start with an unset run, which may be empty.

use super::{Result, SceneIoError};

pub fn rle_encode(bits: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len: u32 = 0;
    for &b in bits {
        if b != current {
            runs.push(len);
            current = b;
            len = 0;
        }
        len += 1;
    }
    if len > 0 || runs.is_empty() {
        runs.push(len);
    }
    runs
}

/// Decodes `runs`, which must cover exactly `expected_len` pixels.
pub fn rle_decode(runs: &[u32], expected_len: usize) -> Result<Vec<bool>> {
    let total: u64 = runs.iter().map(|&r| r as u64).sum();
    if total != expected_len as u64 {
        return Err(SceneIoError::CorruptRle(format!("runs cover {total} pixels, image has {expected_len}")));
    }
    let mut bits = Vec::with_capacity(expected_len);
    for (k, &r) in runs.iter().enumerate() {
        bits.extend(std::iter::repeat_n(k % 2 == 1, r as usize));
    }
    Ok(bits)
}
