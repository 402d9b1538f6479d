//! Cosine similarity helpers, generic over the scalar type.

use crate::scalar::Scalar;

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Cosine similarity in `[-1, 1]`; zero vectors give 0.
pub fn cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == S::zero() || nb == S::zero() {
        return S::zero();
    }
    (dot(a, b) / (na * nb)).max(-S::one()).min(S::one())
}

/// Cosine rescaled to `[0, 1]` via `(x + 1) / 2`.
pub fn mapped_cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    (cosine(a, b) + S::one()) / S::of(2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn extremes() {
        let u = [0.6f64, 0.8];
        let v = [-0.6f64, -0.8];
        assert_eq!(mapped_cosine(&u, &u), 1.0);
        assert_eq!(mapped_cosine(&u, &v), 0.0);
        assert_eq!(mapped_cosine(&[1.0f32, 0.0], &[0.0, 1.0]), 0.5);
    }

    proptest! {
        #[test]
        fn mapped_cosine_in_unit_interval(a in prop::collection::vec(-1.0f64..1.0, 8),
                                          b in prop::collection::vec(-1.0f64..1.0, 8)) {
            let m = mapped_cosine(&a, &b);
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }
}
