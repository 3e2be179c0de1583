//! Elementary vector math shared by the kernels.

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

pub fn euclidean_distance<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    check_dim(a.len(), b.len())?;
    Ok(squared_distance_unchecked(a, b).sqrt())
}

#[inline]
pub(crate) fn squared_distance_unchecked<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

#[inline]
pub(crate) fn distance_unchecked<T: Real>(a: &[T], b: &[T]) -> T {
    squared_distance_unchecked(a, b).sqrt()
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Component-wise mean of equal-length vectors. Caller guarantees non-empty.
pub(crate) fn mean_of<'a, T: Real, I>(vectors: I, dim: usize) -> Vec<T>
where
    I: IntoIterator<Item = &'a [T]>,
{
    let mut acc = vec![T::zero(); dim];
    let mut n = 0usize;
    for v in vectors {
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        n += 1;
    }
    let n = T::from_count(n.max(1));
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Natural-log Shannon entropy with `0 ln 0 = 0`.
pub fn shannon_entropy<T: Real>(p: &[T]) -> Result<T> {
    if p.is_empty() {
        return Err(Error::EmptyInput("probability vector"));
    }
    if let Some(bad) = p.iter().find(|x| !(**x >= T::zero())) {
        return Err(Error::InvalidProbability(format!("entry {bad} is negative")));
    }
    let total: T = p.iter().copied().sum();
    if (total - T::one()).abs() > T::sum_tolerance() {
        return Err(Error::InvalidProbability(format!("entries sum to {total}")));
    }
    Ok(entropy_unchecked(p))
}

pub(crate) fn entropy_unchecked<T: Real>(p: &[T]) -> T {
    let h: T = p
        .iter()
        .filter(|&&x| x > T::zero())
        .map(|&x| -x * x.ln())
        .sum();
    h.max(T::zero())
}

/// Numerically stable softmax.
pub(crate) fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |m, x| m.max(x));
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let max = values
        .iter()
        .copied()
        .fold(T::neg_infinity(), |m, x| m.max(x));
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = values.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}
