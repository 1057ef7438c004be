//! Small statistics helpers: normal sampling through the inverse CDF (so all
//! randomness flows through our seeded generators), summary statistics and
//! rank correlation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

fn unit_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Standard normal draw via inverse-CDF of a uniform.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random_range(1e-12..1.0 - 1e-12);
    unit_normal().inverse_cdf(u)
}

/// Draw from a Gaussian `N(mean, std^2)` truncated to `[lo, hi]`, by inverse
/// CDF on the restricted probability mass. Degenerate inputs fall back to the
/// clamped mean.
pub fn truncated_normal(mean: f64, std_dev: f64, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
    if !(lo < hi) || std_dev <= 0.0 {
        return mean.clamp(lo.min(hi), hi.max(lo));
    }
    let n = unit_normal();
    let a = n.cdf((lo - mean) / std_dev);
    let b = n.cdf((hi - mean) / std_dev);
    if b - a < 1e-300 {
        return mean.clamp(lo, hi);
    }
    let u: f64 = rng.random_range(0.0..1.0);
    let p = (a + u * (b - a)).clamp(1e-15, 1.0 - 1e-15);
    (mean + std_dev * n.inverse_cdf(p)).clamp(lo, hi)
}

/// Truncated-Gaussian log density factor (unnormalized): `-(x-mean)^2/(2 std^2)`.
pub fn gaussian_exponent(x: f64, mean: f64, std_dev: f64) -> f64 {
    let z = (x - mean) / std_dev;
    -0.5 * z * z
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator); 0 for fewer than 2 points.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Standard error of the mean.
pub fn std_err(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    std_dev(xs) / (xs.len() as f64).sqrt()
}

/// Ranks with ties averaged, 1-based, larger value = rank 1 (descending).
pub fn descending_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation of two paired samples; `None` when undefined
/// (fewer than 2 points or a constant sample).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = descending_ranks(xs);
    let ry = descending_ranks(ys);
    let mx = mean(&rx);
    let my = mean(&ry);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..rx.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx <= 0.0 || vy <= 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{chacha, stream};

    #[test]
    fn truncated_draws_stay_in_range_and_center() {
        let mut rng = chacha(1, &[stream::EVAL]);
        let mut sum = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let x = truncated_normal(5.0, 1.0, 4.5, 5.5, &mut rng);
            assert!((4.5..=5.5).contains(&x));
            sum += x;
        }
        let m = sum / n as f64;
        // symmetric truncation keeps the mean at the center
        assert!((m - 5.0).abs() < 3.0 * 0.3 / (n as f64).sqrt(), "mean {m}");
    }

    #[test]
    fn zero_width_noise_returns_mean() {
        let mut rng = chacha(2, &[stream::EVAL]);
        assert_eq!(truncated_normal(3.0, 0.0, 2.0, 4.0, &mut rng), 3.0);
    }

    #[test]
    fn spearman_of_inverted_ranks_is_minus_one() {
        let rho = spearman(&[1.0, 2.0], &[5.0, 3.0]).unwrap();
        assert!((rho + 1.0).abs() < 1e-12);
        let rho = spearman(&[3.0, 2.0, 1.0], &[10.0, 20.0, 30.0]).unwrap();
        assert!((rho + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_degenerate_cases_are_undefined() {
        assert!(spearman(&[1.0], &[2.0]).is_none());
        assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_none());
    }

    #[test]
    fn ranks_average_ties() {
        let r = descending_ranks(&[3.0, 1.0, 3.0]);
        assert_eq!(r, vec![1.5, 3.0, 1.5]);
    }
}
