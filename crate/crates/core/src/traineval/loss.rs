use super::{Result, TrainError};
use crate::nncore::{Scalar, Tensor};
use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};
use rand_pcg::Pcg32;

/// A mixed batch with both label vectors and the mixing weight.
#[derive(Debug, Clone)]
pub struct MixupBatch<T> {
    pub images: Tensor<T>,
    pub labels_a: Vec<usize>,
    pub labels_b: Vec<usize>,
    pub lambda: f64,
}

/// `λ·x + (1−λ)·x[perm]` with the matching label pair.
pub fn mix_with<T: Scalar>(images: &Tensor<T>, labels: &[usize], lambda: f64, perm: &[usize]) -> Result<MixupBatch<T>> {
    let n = images.shape()[0];
    if labels.len() != n || perm.len() != n {
        return Err(TrainError::Data("mixup batch, labels and permutation differ in length".into()));
    }
    let per = images.numel() / n.max(1);
    let (l, r) = (T::of(lambda), T::of(1.0 - lambda));
    let src = images.data();
    let mut out = Vec::with_capacity(src.len());
    for (s, &p) in perm.iter().enumerate() {
        let a = &src[s * per..(s + 1) * per];
        let b = &src[p * per..(p + 1) * per];
        out.extend(a.iter().zip(b).map(|(&u, &v)| l * u + r * v));
    }
    Ok(MixupBatch {
        images: Tensor::from_vec(images.shape(), out)?,
        labels_a: labels.to_vec(),
        labels_b: perm.iter().map(|&p| labels[p]).collect(),
        lambda,
    })
}

/// Mixup with `λ ~ Beta(α, α)` and a seeded in-batch permutation.
pub fn mixup<T: Scalar>(images: &Tensor<T>, labels: &[usize], alpha: f64, rng: &mut Pcg32) -> Result<MixupBatch<T>> {
    let n = images.shape()[0];
    if n < 2 {
        return Err(TrainError::Data("mixup needs a batch of at least 2".into()));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| TrainError::Config(format!("mixup alpha {alpha}: {e}")))?;
    let lambda = beta.sample(rng);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    mix_with(images, labels, lambda, &perm)
}

/// Label-smoothed cross-entropy of one row against class `target`.
pub fn smooth_ce_row(logits: &[f64], target: usize, smoothing: f64) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let k = logits.len() as f64;
    logits
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let t = smoothing / k + if i == target { 1.0 - smoothing } else { 0.0 };
            -t * (z - lse)
        })
        .sum()
}

/// Batch mean of the smoothed cross-entropy, weighted per target set, and its
/// gradient with respect to the logits. `targets` pairs label vectors with
/// their weights, which lets one pass serve a mixup batch.
pub fn weighted_smooth_ce<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[(&[usize], f64)],
    smoothing: f64,
) -> Result<(f64, Tensor<T>)> {
    let (n, k) = logits.dims2()?;
    let mut loss = 0.0;
    let mut grad = vec![T::zero(); n * k];
    let inv_n = 1.0 / n as f64;
    let mut row = vec![0.0; k];
    for s in 0..n {
        for (r, v) in row.iter_mut().zip(&logits.data()[s * k..(s + 1) * k]) {
            *r = v.to_f64_lossy();
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Data(format!("non-finite logits in row {s}")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        for &(labels, w) in targets {
            let y = labels[s];
            if y >= k {
                return Err(TrainError::Data(format!("label {y} outside {k} classes")));
            }
            loss += w * inv_n * smooth_ce_row(&row, y, smoothing);
            for (i, g) in grad[s * k..(s + 1) * k].iter_mut().enumerate() {
                let p = (row[i] - max).exp() / denom;
                let t = smoothing / k as f64 + if i == y { 1.0 - smoothing } else { 0.0 };
                *g += T::of(w * inv_n * (p - t));
            }
        }
    }
    Ok((loss, Tensor::from_vec(&[n, k], grad)?))
}

/// Mean smoothed cross-entropy against a single label vector.
pub fn smooth_ce<T: Scalar>(logits: &Tensor<T>, labels: &[usize], smoothing: f64) -> Result<(f64, Tensor<T>)> {
    weighted_smooth_ce(logits, &[(labels, 1.0)], smoothing)
}

#[derive(Debug, Clone)]
pub struct LossParts<T> {
    pub data_term: f64,
    pub regularizer: f64,
    pub total: f64,
    pub grad_logits: Tensor<T>,
}

/// `λ_mix·CE(y_a) + (1−λ_mix)·CE(y_b) + λ_reg·l1`.
pub fn total_loss<T: Scalar>(
    logits: &Tensor<T>,
    labels_a: &[usize],
    labels_b: &[usize],
    lambda_mix: f64,
    smoothing: f64,
    lambda_reg: f64,
    spline_l1: f64,
) -> Result<LossParts<T>> {
    let (data_term, grad_logits) =
        weighted_smooth_ce(logits, &[(labels_a, lambda_mix), (labels_b, 1.0 - lambda_mix)], smoothing)?;
    let regularizer = lambda_reg * spline_l1;
    Ok(LossParts {
        data_term,
        regularizer,
        total: data_term + regularizer,
        grad_logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn uniform_logits_give_log_k() {
        assert!((smooth_ce_row(&[0.3; 7], 2, 0.0) - 7f64.ln()).abs() < 1e-12);
        assert!((smooth_ce_row(&[0.3; 7], 2, 0.1) - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_limit_goes_to_zero() {
        let mut z = [0.0; 7];
        z[4] = 200.0;
        assert!(smooth_ce_row(&z, 4, 0.0) < 1e-12);
    }

    #[test]
    fn mixup_endpoints() {
        let x = Tensor::<f32>::from_vec(&[2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = mix_with(&x, &[0, 1], 1.0, &[1, 0]).unwrap();
        assert_eq!(m.images, x);
        assert_eq!(m.labels_b, vec![1, 0]);
        let same = Tensor::<f32>::from_vec(&[2, 1, 1, 1], vec![5.0, 5.0]).unwrap();
        assert_eq!(mix_with(&same, &[0, 1], 0.5, &[1, 0]).unwrap().images, same);
    }

    #[test]
    fn mixup_is_seeded() {
        let x = Tensor::<f32>::from_vec(&[4, 1, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = mixup(&x, &[0, 1, 2, 3], 1.0, &mut Pcg32::seed_from_u64(3)).unwrap();
        let b = mixup(&x, &[0, 1, 2, 3], 1.0, &mut Pcg32::seed_from_u64(3)).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.lambda, b.lambda);
        assert!((0.0..=1.0).contains(&a.lambda));
        assert!(mixup(&x.clone().reshape(&[1, 4, 1, 1]).unwrap(), &[0], 1.0, &mut Pcg32::seed_from_u64(0)).is_err());
    }

    #[test]
    fn regularizer_is_additive() {
        let z = Tensor::<f64>::from_vec(&[1, 7], vec![0.1, 0.5, -0.3, 0.0, 1.0, 0.2, 0.3]).unwrap();
        let a = total_loss(&z, &[3], &[5], 1.0, 0.1, 0.0, 0.0).unwrap();
        let b = total_loss(&z, &[3], &[5], 1.0, 0.1, 1e-5, 3.5).unwrap();
        assert!((b.regularizer - 3.5e-5).abs() < 1e-19);
        assert!((b.total - a.total - 3.5e-5).abs() < 1e-15);
        let (ce, _) = smooth_ce(&z, &[3], 0.1).unwrap();
        assert!((a.total - ce).abs() < 1e-15);
    }
}
