use rand::Rng;
use rand_distr::Poisson;
use rayon::prelude::*;

use super::stream::TokenStream;
use super::vocab::PAD_ID;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

/// Mean number of PAD tokens between packed admissions.
pub const DEFAULT_PAD_MEAN: f64 = 7.0;

/// `n` gap lengths drawn from Poisson(`mean`); `mean = 0` gives zeros.
pub fn poisson_gaps(n: usize, mean: f64, seed: u64) -> Result<Vec<usize>> {
    if !(mean >= 0.0 && mean.is_finite()) {
        return Err(Error::invalid(format!("invalid PAD mean {mean}")));
    }
    if mean == 0.0 {
        return Ok(vec![0; n]);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = SplitMix64::new(seed);
    Ok((0..n).map(|_| rng.sample(dist) as usize).collect())
}

/// Concatenates streams with the given PAD runs between consecutive streams
/// and cuts fixed-length blocks; the last block is PAD-filled.
pub fn pack_with_gaps(streams: &[TokenStream], gaps: &[usize], block_len: usize) -> Result<Vec<Vec<u32>>> {
    if block_len == 0 {
        return Err(Error::invalid("block length must be positive"));
    }
    if streams.len() > 1 && gaps.len() < streams.len() - 1 {
        return Err(Error::invalid(format!(
            "{} gaps for {} streams",
            gaps.len(),
            streams.len()
        )));
    }
    let mut flat: Vec<u32> = Vec::new();
    for (i, s) in streams.iter().enumerate() {
        if i > 0 {
            flat.extend(std::iter::repeat_n(PAD_ID, gaps[i - 1]));
        }
        flat.extend_from_slice(&s.tokens);
    }
    Ok(flat
        .chunks(block_len)
        .map(|c| {
            let mut block = c.to_vec();
            block.resize(block_len, PAD_ID);
            block
        })
        .collect())
}

/// Packs streams into `block_len` blocks with Poisson(`pad_mean`) PAD gaps.
pub fn pack(streams: &[TokenStream], block_len: usize, pad_mean: f64, seed: u64) -> Result<Vec<Vec<u32>>> {
    let gaps = poisson_gaps(streams.len().saturating_sub(1), pad_mean, seed)?;
    pack_with_gaps(streams, &gaps, block_len)
}

/// Packs shards independently, shard `i` seeded from `(seed, i)`.
pub fn pack_shards(
    shards: &[Vec<TokenStream>],
    block_len: usize,
    pad_mean: f64,
    seed: u64,
) -> Result<Vec<Vec<Vec<u32>>>> {
    shards
        .par_iter()
        .enumerate()
        .map(|(i, s)| pack(s, block_len, pad_mean, derive_seed(seed, i as u64)))
        .collect()
}
