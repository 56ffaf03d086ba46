use nalgebra::{Matrix3, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{aabb_of, Box9};

/// Monte Carlo IoU estimate by uniform sampling inside the axis-aligned bound of `a ∪ b`.
///
/// Membership uses only the boxes' half-space tests, independent of the clipping path.
pub fn mc_iou_oracle(a: &Box9, b: &Box9, n: usize, seed: u64) -> f64 {
    assert!(n >= 1, "sample count must be positive");
    let corners: Vec<Point3<f64>> = a.corners().into_iter().chain(b.corners()).collect();
    let (lo, hi) = aabb_of(corners.iter());
    let (frame_a, frame_b) = (LocalFrame::new(a), LocalFrame::new(b));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut in_a, mut in_b, mut both) = (0u64, 0u64, 0u64);
    for _ in 0..n {
        let p = Point3::new(
            rng.random_range(lo.x..=hi.x),
            rng.random_range(lo.y..=hi.y),
            rng.random_range(lo.z..=hi.z),
        );
        let (ia, ib) = (frame_a.contains(&p), frame_b.contains(&p));
        in_a += ia as u64;
        in_b += ib as u64;
        both += (ia && ib) as u64;
    }
    let union = in_a + in_b - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

/// Precomputed world-to-box transform; same test as [`Box9::contains`].
struct LocalFrame {
    inverse: Matrix3<f64>,
    center: Vector3<f64>,
    half: Vector3<f64>,
}

impl LocalFrame {
    fn new(b: &Box9) -> Self {
        Self {
            inverse: b.rotation_matrix().transpose(),
            center: b.center(),
            half: b.size() * 0.5,
        }
    }

    fn contains(&self, p: &Point3<f64>) -> bool {
        let local = self.inverse * (p.coords - self.center);
        local.x.abs() <= self.half.x && local.y.abs() <= self.half.y && local.z.abs() <= self.half.z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_cubes_are_exact() {
        let a = Box9::axis_aligned([0.0; 3], [1.0; 3]).unwrap();
        assert_eq!(mc_iou_oracle(&a, &a, 1_000_000, 3), 1.0);
    }

    #[test]
    fn disjoint_is_zero() {
        let a = Box9::axis_aligned([0.0; 3], [1.0; 3]).unwrap();
        let b = Box9::axis_aligned([3.0, 0.0, 0.0], [1.0; 3]).unwrap();
        assert_eq!(mc_iou_oracle(&a, &b, 100_000, 3), 0.0);
    }

    #[test]
    fn half_offset_within_binomial_bound() {
        let a = Box9::axis_aligned([0.0; 3], [1.0; 3]).unwrap();
        let b = Box9::axis_aligned([0.5, 0.0, 0.0], [1.0; 3]).unwrap();
        let est = mc_iou_oracle(&a, &b, 2_000_000, 17);
        assert!((est - 1.0 / 3.0).abs() <= 0.005, "{est}");
    }

    #[test]
    fn deterministic_per_seed() {
        let a = Box9::new([0.0; 3], [1.0, 2.0, 0.5], [0.3, 0.1, 0.0]).unwrap();
        let b = Box9::new([0.2, 0.1, 0.0], [1.0, 1.0, 1.0], [-0.3, 0.0, 0.2]).unwrap();
        assert_eq!(mc_iou_oracle(&a, &b, 10_000, 9), mc_iou_oracle(&a, &b, 10_000, 9));
    }
}
