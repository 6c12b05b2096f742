use crate::error::{Error, Result};
use crate::scalar::Real;

/// Min-norm convex combination of two task gradients.
///
/// Returns `(l1, l2)` with `l1 + l2 = 1` minimizing `|l1 g1 + l2 g2|`:
/// `l1 = clip((g2 - g1) . g2 / |g1 - g2|^2, 0, 1)`. Equal nonzero gradients give
/// `(0.5, 0.5)`.
pub fn mgda_two_task<T: Real>(g1: &[T], g2: &[T]) -> Result<(T, T)> {
    if g1.len() != g2.len() {
        return Err(Error::DimensionMismatch {
            what: "task gradients",
            expected: g1.len(),
            found: g2.len(),
        });
    }
    let zero = T::zero();
    if g1.iter().chain(g2).all(|v| *v == zero) {
        return Err(Error::VanishedGradients);
    }
    let (mut num, mut den) = (zero, zero);
    for (&a, &b) in g1.iter().zip(g2) {
        let d = a - b;
        num += -d * b;
        den += d * d;
    }
    if den == zero {
        let half = T::lit(0.5);
        return Ok((half, half));
    }
    let l1 = (num / den).max(zero).min(T::one());
    Ok((l1, T::one() - l1))
}

/// `l1 g1 + l2 g2`.
pub fn combine_gradients<T: Real>(g1: &[T], g2: &[T], (l1, l2): (T, T)) -> Vec<T> {
    g1.iter().zip(g2).map(|(&a, &b)| l1 * a + l2 * b).collect()
}

pub fn l2_norm<T: Real>(g: &[T]) -> T {
    g.iter().map(|&v| v * v).sum::<T>().sqrt()
}
