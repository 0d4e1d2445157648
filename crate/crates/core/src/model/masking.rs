use ndarray::Array2;
use rand::Rng;

use crate::Real;

/// Zeroes `count` independently placed spans of `block_len` consecutive
/// frames. Returns the masked matrix and a per-frame masked flag.
pub fn mask_blocks<T: Real>(
    frames: &Array2<T>,
    rng: &mut impl Rng,
    block_len: usize,
    count: usize,
) -> (Array2<T>, Vec<bool>) {
    let total = frames.nrows();
    let mut masked = vec![false; total];
    let mut out = frames.clone();
    if total == 0 || block_len == 0 {
        return (out, masked);
    }
    let len = block_len.min(total);
    for _ in 0..count {
        let start = rng.random_range(0..=total - len);
        for flag in &mut masked[start..start + len] {
            *flag = true;
        }
    }
    for (row, &m) in out.rows_mut().into_iter().zip(&masked) {
        if m {
            let mut row = row;
            row.fill(T::zero());
        }
    }
    (out, masked)
}

/// Probability that frame `pos` is masked, by enumerating start positions.
pub fn masked_probability(total: usize, block_len: usize, count: usize, pos: usize) -> f64 {
    let len = block_len.min(total);
    let starts = total - len + 1;
    let covering = (0..starts).filter(|&s| pos >= s && pos < s + len).count();
    let single = covering as f64 / starts as f64;
    1.0 - (1.0 - single).powi(count as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_count_is_identity() {
        let f = Array2::from_elem((10, 3), 1.5f64);
        let (out, m) = mask_blocks(&f, &mut rng::seeded(0), 4, 0);
        assert_eq!(out, f);
        assert!(m.iter().all(|&v| !v));
    }

    #[test]
    fn oversized_block_clears_everything() {
        let f = Array2::from_elem((10, 3), 1.5f64);
        let (out, _) = mask_blocks(&f, &mut rng::seeded(0), 32, 1);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn marginal_frequency_matches_enumeration() {
        let f = Array2::from_elem((100, 1), 1.0f64);
        let mut r = rng::seeded(17);
        let draws = 10_000;
        let mut hits = vec![0usize; 100];
        for _ in 0..draws {
            let (_, m) = mask_blocks(&f, &mut r, 32, 2);
            for (h, v) in hits.iter_mut().zip(m) {
                *h += v as usize;
            }
        }
        for (pos, &h) in hits.iter().enumerate() {
            let p = masked_probability(100, 32, 2, pos);
            let sd = (draws as f64 * p * (1.0 - p)).sqrt().max(1e-9);
            assert!(((h as f64) - draws as f64 * p).abs() <= 3.0 * sd, "pos {pos}: {h} vs {}", draws as f64 * p);
        }
    }
}
