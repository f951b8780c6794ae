//! Latin hypercube sampling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// `n` points in `[0,1)^dims` with exactly one coordinate per axis in each
/// of the `n` strata, jittered uniformly within the stratum.
pub fn lhs_points(n: usize, dims: usize, seed: u64) -> Vec<Vec<f64>> {
    lhs_with(n, dims, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub(crate) fn lhs_with<R: Rng>(n: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dims]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..dims {
        perm.shuffle(rng);
        for (p, &s) in pts.iter_mut().zip(&perm) {
            p[d] = (s as f64 + rng.gen::<f64>()) / n as f64;
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_per_quartile() {
        let mut xs: Vec<f64> = lhs_points(4, 1, 3).into_iter().map(|p| p[0]).collect();
        xs.sort_by(f64::total_cmp);
        for (i, x) in xs.iter().enumerate() {
            assert!(*x >= i as f64 / 4.0 && *x < (i + 1) as f64 / 4.0);
        }
    }

    #[test]
    fn marginals_are_flat_and_seeded() {
        let p = lhs_points(50, 3, 11);
        for d in 0..3 {
            let mut bins = [0; 50];
            for x in &p {
                bins[(x[d] * 50.0) as usize] += 1;
            }
            assert!(bins.iter().all(|&b| b == 1));
        }
        assert_eq!(p, lhs_points(50, 3, 11));
        assert_ne!(p, lhs_points(50, 3, 12));
    }
}
