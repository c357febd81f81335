mod common;

use common::rng;
use mixtrack::features::{
    jacobian_field, jacobian_stats, read_displacement_field, read_voxel_mask, tumor_volume,
    write_displacement_field, write_voxel_mask, DisplacementField, Grid, JacobianMode, VoxelMask,
};
use rand::seq::SliceRandom;
use rand::Rng;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn random_mask_volume_is_count_times_voxel_volume() {
    for seed in 0..5 {
        let mut r = rng(seed);
        let spacing = [r.random_range(0.3..2.0), r.random_range(0.3..2.0), r.random_range(0.3..2.0)];
        let grid = Grid::new([32, 32, 32], spacing).unwrap();
        let voxels: Vec<bool> = (0..grid.len()).map(|_| r.random_bool(0.3)).collect();
        let mut count = 0usize;
        for k in 0..32 {
            for j in 0..32 {
                for i in 0..32 {
                    count += voxels[i + 32 * (j + 32 * k)] as usize;
                }
            }
        }
        let mask = VoxelMask::new(grid, voxels.clone()).unwrap();
        let expect = count as f64 * (spacing[0] * spacing[1] * spacing[2]);
        assert_eq!(tumor_volume(&mask), expect);

        let mut shuffled = voxels;
        shuffled.shuffle(&mut r);
        assert_eq!(tumor_volume(&VoxelMask::new(grid, shuffled).unwrap()), expect);
    }
}

#[test]
fn zero_field_gives_identity_stats() {
    let grid = Grid::new([5, 6, 7], [0.8, 1.0, 1.3]).unwrap();
    let field = DisplacementField::zeros(grid);
    let mask = VoxelMask::from_fn(grid, |i, j, k| (i + j + k) % 2 == 0);
    let s = jacobian_stats(&field, &mask, JacobianMode::Determinant).unwrap();
    assert_eq!((s.mean, s.variance, s.skewness, s.kurtosis), (1.0, 0.0, 0.0, 0.0));
}

/// Smooth field built from a few random plane waves.
struct Waves(Vec<([f64; 3], f64, [f64; 3])>);

impl Waves {
    fn new(seed: u64) -> Self {
        let mut r = rng(seed);
        Waves(
            (0..3)
                .map(|_| {
                    let k = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
                    let amp = [r.random_range(-0.3..0.3), r.random_range(-0.3..0.3), r.random_range(-0.3..0.3)];
                    (k, r.random_range(0.0..6.0), amp)
                })
                .collect(),
        )
    }

    fn eval(&self, x: [f64; 3]) -> [f64; 3] {
        let mut u = [0.0; 3];
        for (k, phase, amp) in &self.0 {
            let s = (k[0] * x[0] + k[1] * x[1] + k[2] * x[2] + phase).sin();
            for c in 0..3 {
                u[c] += amp[c] * s;
            }
        }
        u
    }
}

#[test]
fn interior_jacobian_matches_fourth_order_oracle() {
    let h = [1e-4, 1.5e-4, 0.8e-4];
    let grid = Grid::new([6, 6, 6], h).unwrap();
    for seed in 0..4 {
        let waves = Waves::new(seed);
        let field = DisplacementField::from_fn(grid, |x| waves.eval(x)).unwrap();
        let jac = jacobian_field(&field).unwrap();
        for idx in 0..grid.len() {
            if grid.on_boundary(idx) {
                continue;
            }
            let x = grid.position(idx);
            for axis in 0..3 {
                let at = |m: f64| {
                    let mut p = x;
                    p[axis] += m * h[axis];
                    waves.eval(p)
                };
                let (m2, m1, p1, p2) = (at(-2.0), at(-1.0), at(1.0), at(2.0));
                for c in 0..3 {
                    let d = (m2[c] - 8.0 * m1[c] + 8.0 * p1[c] - p2[c]) / (12.0 * h[axis]);
                    let oracle = if c == axis { 1.0 + d } else { d };
                    let got = jac[idx][(c, axis)];
                    assert!(
                        (got - oracle).abs() <= 1e-6 * oracle.abs().max(1e-2),
                        "seed {seed} voxel {idx} entry ({c},{axis}): {got} vs {oracle}"
                    );
                }
            }
        }
    }
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Brute force: own central differences, cofactor determinant, textbook moments.
fn oracle_stats(field: &DisplacementField, mask: &VoxelMask) -> [f64; 4] {
    let g = field.grid();
    let [nx, ny, _] = g.dims;
    let u = field.vectors();
    let at = |i: usize, j: usize, k: usize| u[i + nx * (j + ny * k)];
    let mut dets = Vec::new();
    for (idx, &m) in mask.voxels().iter().enumerate() {
        if !m {
            continue;
        }
        let [i, j, k] = g.coords(idx);
        let nbrs = [
            (at(i + 1, j, k), at(i - 1, j, k)),
            (at(i, j + 1, k), at(i, j - 1, k)),
            (at(i, j, k + 1), at(i, j, k - 1)),
        ];
        let mut jm = [[0.0; 3]; 3];
        for (axis, (p, q)) in nbrs.iter().enumerate() {
            for c in 0..3 {
                jm[c][axis] = (p[c] - q[c]) / (2.0 * g.spacing[axis]) + if c == axis { 1.0 } else { 0.0 };
            }
        }
        dets.push(det3(jm));
    }
    let n = dets.len() as f64;
    let mean = dets.iter().sum::<f64>() / n;
    let c = |p: i32| dets.iter().map(|d| (d - mean).powi(p)).sum::<f64>() / n;
    let (m2, m3, m4) = (c(2), c(3), c(4));
    [mean, m2, m3 / m2.powf(1.5), m4 / (m2 * m2)]
}

#[test]
fn determinant_moments_match_brute_force() {
    let grid = Grid::new([18, 18, 18], [0.9, 1.1, 1.0]).unwrap();
    let mask = VoxelMask::from_fn(grid, |i, j, k| [i, j, k].iter().all(|&c| (1..17).contains(&c)));
    assert_eq!(mask.count(), 16 * 16 * 16);
    for seed in 0..3 {
        let mut r = rng(100 + seed);
        let vectors: Vec<[f64; 3]> = (0..grid.len())
            .map(|_| [r.random_range(-0.2..0.2), r.random_range(-0.2..0.2), r.random_range(-0.2..0.2)])
            .collect();
        let field = DisplacementField::new(grid, vectors).unwrap();
        let s = jacobian_stats(&field, &mask, JacobianMode::Determinant).unwrap();
        let o = oracle_stats(&field, &mask);
        for (got, want) in [s.mean, s.variance, s.skewness, s.kurtosis].iter().zip(o) {
            assert!(rel(*got, want) < 1e-12, "{got} vs {want}");
        }
    }
}

#[test]
fn affine_field_has_constant_determinant() {
    let grid = Grid::new([7, 8, 9], [0.5, 1.25, 2.0]).unwrap();
    let interior = VoxelMask::from_fn(grid, |i, j, k| i > 0 && j > 0 && k > 0 && i < 6 && j < 7 && k < 8);
    for seed in 0..10 {
        let mut r = rng(200 + seed);
        let a: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| r.random_range(-0.4..0.4)));
        let field = DisplacementField::from_fn(grid, |x| {
            std::array::from_fn(|c| a[c][0] * x[0] + a[c][1] * x[1] + a[c][2] * x[2])
        })
        .unwrap();
        let want = det3(std::array::from_fn(|i| std::array::from_fn(|j| a[i][j] + (i == j) as u8 as f64)));
        let s = jacobian_stats(&field, &interior, JacobianMode::Determinant).unwrap();
        assert!(rel(s.mean, want) < 1e-12, "{} vs {want}", s.mean);
        assert_eq!((s.variance, s.skewness, s.kurtosis), (0.0, 0.0, 0.0));

        // One-sided differences are exact for affine fields too.
        let all = VoxelMask::from_fn(grid, |_, _, _| true);
        let s = jacobian_stats(&field, &all, JacobianMode::Determinant).unwrap();
        assert!(rel(s.mean, want) < 1e-12);
    }
}

#[test]
fn stats_errors() {
    let grid = Grid::new([4, 4, 4], [1.0; 3]).unwrap();
    let field = DisplacementField::zeros(grid);
    let empty = VoxelMask::from_fn(grid, |_, _, _| false);
    assert_eq!(jacobian_stats(&field, &empty, JacobianMode::Determinant).unwrap_err().kind(), "EmptyMaskError");
    let other = VoxelMask::from_fn(Grid::new([4, 4, 5], [1.0; 3]).unwrap(), |_, _, _| true);
    assert_eq!(jacobian_stats(&field, &other, JacobianMode::Determinant).unwrap_err().kind(), "MismatchError");
    let flat = Grid::new([4, 4, 1], [1.0; 3]).unwrap();
    let err = jacobian_field(&DisplacementField::zeros(flat)).unwrap_err();
    assert_eq!(err.kind(), "DimensionError");
}

#[test]
fn binary_files_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::new([5, 4, 3], [0.7, 0.9, 2.5]).unwrap();
    let mut r = rng(7);
    let vectors: Vec<[f64; 3]> = (0..grid.len())
        .map(|_| std::array::from_fn(|_| r.random_range(-3.0f32..3.0) as f64))
        .collect();
    let field = DisplacementField::new(grid, vectors).unwrap();
    let mask = VoxelMask::from_fn(grid, |i, j, k| (i * j + k) % 3 == 0);

    let fp = dir.path().join("u.dfld");
    let mp = dir.path().join("m.msk");
    write_displacement_field(&fp, &field).unwrap();
    write_voxel_mask(&mp, &mask).unwrap();
    assert_eq!(read_displacement_field(&fp).unwrap(), field);
    assert_eq!(read_voxel_mask(&mp).unwrap(), mask);
    assert_eq!(std::fs::metadata(&fp).unwrap().len(), 44 + 60 * 12);
    assert_eq!(std::fs::metadata(&mp).unwrap().len(), 44 + 60);
}
