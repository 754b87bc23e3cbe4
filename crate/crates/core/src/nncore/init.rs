use super::tensor::Scalar;
use rand::RngExt;
use rand_pcg::Pcg32;

/// `n` draws from U(−√(6/fan_in), √(6/fan_in)).
pub fn kaiming_uniform<T: Scalar>(fan_in: usize, n: usize, rng: &mut Pcg32) -> Vec<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    (0..n)
        .map(|_| T::of((rng.random::<f64>() * 2.0 - 1.0) * bound))
        .collect()
}

/// `n` draws from U(lo, hi).
pub fn uniform<T: Scalar>(lo: f64, hi: f64, n: usize, rng: &mut Pcg32) -> Vec<T> {
    (0..n)
        .map(|_| T::of(lo + (hi - lo) * rng.random::<f64>()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn kaiming_bound_respected() {
        let mut rng = Pcg32::seed_from_u64(3);
        let v: Vec<f64> = kaiming_uniform(24, 10_000, &mut rng);
        let bound = 0.5;
        assert!(v.iter().all(|x| x.abs() <= bound));
        assert!(v.iter().any(|x| x.abs() > 0.45));
    }
}
