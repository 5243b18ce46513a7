use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales to unit length; the zero vector is returned unchanged.
pub fn unit(a: &[f64]) -> Vec<f64> {
    let n = norm(a);
    if n > 0.0 {
        a.iter().map(|x| x / n).collect()
    } else {
        a.to_vec()
    }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d > 0.0 {
        dot(a, b) / d
    } else {
        0.0
    }
}

/// Mean of equally sized vectors, summed in slice order.
pub fn mean<'a>(vectors: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        n += 1;
    }
    if n > 0 {
        for a in &mut acc {
            *a /= n as f64;
        }
    }
    acc
}

/// Deterministic unit vector for a key with no embedding: the key's SHA-256
/// digest seeds a ChaCha stream of uniform components.
pub fn fallback_vector(key: &str, dim: usize) -> Vec<f64> {
    let seed: [u8; 32] = Sha256::digest(key.as_bytes()).into();
    let mut rng = ChaCha8Rng::from_seed(seed);
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    unit(&v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fallback_is_stable_unit() {
        let a = fallback_vector("matrix decomposition", 16);
        let b = fallback_vector("matrix decomposition", 16);
        assert_eq!(a, b);
        assert!((norm(&a) - 1.0).abs() < 1e-12);
        assert_ne!(a, fallback_vector("linear algebra", 16));
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0, 0.0], &[2.0, 0.0]), 1.0);
        assert_eq!(cosine(&[0.0, 0.0], &[2.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }
}
