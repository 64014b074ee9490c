use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::rng::rng_for;

const PERM_STREAM: u64 = 0x9E4;

/// Mean increase of `loss` over `repeats` random permutations of each
/// column of `x`. Larger means more important.
pub fn permutation_importance<F>(loss: F, x: &Matrix, repeats: usize, seed: u64) -> Result<Vec<f64>>
where
    F: Fn(&Matrix) -> Result<f64> + Sync,
{
    if repeats == 0 {
        return Err(Error::invalid(
            "permutation importance needs at least one repeat",
        ));
    }
    let baseline = loss(x)?;
    (0..x.cols())
        .into_par_iter()
        .map(|f| {
            let col = x.column(f);
            let mut total = 0.0;
            for r in 0..repeats {
                let mut rng = rng_for(seed, &[PERM_STREAM, f as u64, r as u64]);
                let mut perm = col.clone();
                perm.shuffle(&mut rng);
                let mut xp = x.clone();
                for (i, v) in perm.into_iter().enumerate() {
                    xp.set(i, f, v);
                }
                total += loss(&xp)? - baseline;
            }
            Ok(total / repeats as f64)
        })
        .collect()
}
