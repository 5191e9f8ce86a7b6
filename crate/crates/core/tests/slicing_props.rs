use mantour::slicing::expected_slice_count;
use mantour::{slice_distances, ProjectionMatrix, SliceSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn shape() -> impl Strategy<Value = (usize, usize)> {
    (3usize..=8).prop_flat_map(|p| (Just(p), 1usize..=3.min(p - 1)))
}

fn setup(p: usize, d: usize, seed: u64) -> (ProjectionMatrix, DMatrix<f64>, Vec<f64>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = ProjectionMatrix::random(p, d, &mut rng).unwrap();
    let x = DMatrix::from_fn(40, p, |_, _| rng.random_range(-3.0..3.0));
    let c = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    (a, x, c, rng)
}

/// |(I - A Aᵀ)(x - c)| straight from the matrix formula.
fn oracle_distances(x: &DMatrix<f64>, a: &ProjectionMatrix, c: &[f64]) -> Vec<f64> {
    let m = a.matrix();
    let perp = DMatrix::identity(m.nrows(), m.nrows()) - m * m.transpose();
    let c = DVector::from_column_slice(c);
    x.row_iter()
        .map(|r| (&perp * (r.transpose() - &c)).norm())
        .collect()
}

fn uniform_ball(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let g: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = rng.random::<f64>().powf(1.0 / p as f64);
        for j in 0..p {
            x[(i, j)] = g[j] / norm * r;
        }
    }
    x
}

proptest! {
    #[test]
    fn distances_match_matrix_formula((p, d) in shape(), seed in any::<u64>()) {
        let (a, x, c, _) = setup(p, d, seed);
        let res = slice_distances(&x, &a, &SliceSpec::new(c.clone(), 1.0).unwrap()).unwrap();
        for (v, o) in res.distances.iter().zip(oracle_distances(&x, &a, &c)) {
            prop_assert!((v - o).abs() < 1e-12);
        }
    }

    #[test]
    fn in_plane_rotation_leaves_distances((p, d) in shape(), seed in any::<u64>(), angle in -3.2f64..3.2) {
        let (a, x, c, _) = setup(p, d, seed);
        let mut q = DMatrix::identity(d, d);
        if d >= 2 {
            let (s, co) = angle.sin_cos();
            q[(0, 0)] = co;
            q[(0, 1)] = -s;
            q[(1, 0)] = s;
            q[(1, 1)] = co;
        } else {
            q[(0, 0)] = -1.0;
        }
        let spec = SliceSpec::new(c, 1.0).unwrap();
        let before = slice_distances(&x, &a, &spec).unwrap();
        let after = slice_distances(&x, &a.rotate_in_plane(&q).unwrap(), &spec).unwrap();
        for (u, v) in before.distances.iter().zip(&after.distances) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn in_plane_center_shift_leaves_distances((p, d) in shape(), seed in any::<u64>()) {
        let (a, x, c, mut rng) = setup(p, d, seed);
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let shift = a.matrix() * DVector::from_vec(w);
        let moved: Vec<f64> = c.iter().zip(shift.iter()).map(|(u, v)| u + v).collect();
        let before = slice_distances(&x, &a, &SliceSpec::new(c, 1.0).unwrap()).unwrap();
        let after = slice_distances(&x, &a, &SliceSpec::new(moved, 1.0).unwrap()).unwrap();
        for (u, v) in before.distances.iter().zip(&after.distances) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn in_plane_points_have_zero_distance((p, d) in shape(), seed in any::<u64>()) {
        let (a, _, c, mut rng) = setup(p, d, seed);
        let x = DMatrix::from_fn(20, p, |i, j| {
            c[j] + (0..d).map(|k| a.matrix()[(j, k)] * ((i * 7 + k * 3) as f64 / 5.0 - 2.0)).sum::<f64>()
        });
        let res = slice_distances(&x, &a, &SliceSpec::new(c, rng.random_range(0.1..1.0)).unwrap()).unwrap();
        prop_assert!(res.distances.iter().all(|&v| v < 1e-12));
        prop_assert!(res.mask.iter().all(|&m| m));
    }

    #[test]
    fn thicker_slices_contain_thinner((p, d) in shape(), seed in any::<u64>(), h in 0.1f64..3.0, dh in 0.0f64..2.0) {
        let (a, x, c, _) = setup(p, d, seed);
        let thin = slice_distances(&x, &a, &SliceSpec::new(c.clone(), h).unwrap()).unwrap();
        let thick = slice_distances(&x, &a, &SliceSpec::new(c, h + dh).unwrap()).unwrap();
        prop_assert!(thin.mask.iter().zip(&thick.mask).all(|(t, k)| !t || *k));
    }
}

#[test]
fn uniform_ball_counts_agree_with_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 20_000;
    for p in [3, 5] {
        let x = uniform_ball(&mut rng, n, p);
        let a = ProjectionMatrix::random(p, 2, &mut rng).unwrap();
        for ratio in [0.2, 0.5] {
            let res = slice_distances(&x, &a, &SliceSpec::centered(p, ratio).unwrap()).unwrap();
            let expected = expected_slice_count(ratio, p, 1.0, n as f64).unwrap();
            let q = expected / n as f64;
            let sd = (n as f64 * q * (1.0 - q)).sqrt();
            let z = (res.count() as f64 - expected) / sd;
            assert!(z.abs() < 3.0, "p={p} h/R={ratio} z={z}");
        }
    }
}
