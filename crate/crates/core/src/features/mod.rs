//! Tumor features from volumetric inputs: voxel-mask volume and moments of
//! the deformation Jacobian over the tumor region.

mod io;
mod jacobian;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    decode_displacement_field, decode_voxel_mask, encode_displacement_field, encode_voxel_mask,
    read_displacement_field, read_voxel_mask, write_displacement_field, write_voxel_mask,
    DFLD_MAGIC, FORMAT_VERSION, MASK_MAGIC,
};
pub use jacobian::{jacobian_field, jacobian_stats, moments, JacobianMode, JacobianStats};

/// Voxel grid geometry shared by masks and displacement fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    /// Voxel edge lengths in mm.
    pub spacing: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Dimension(format!("grid dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Validation(format!(
                "voxel spacing must be positive and finite, got {spacing:?}"
            )));
        }
        dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::Dimension(format!("grid {dims:?} is too large")))?;
        Ok(Self { dims, spacing })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// Linear index, x fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Physical position of a voxel in mm, origin at voxel (0, 0, 0).
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        [
            c[0] as f64 * self.spacing[0],
            c[1] as f64 * self.spacing[1],
            c[2] as f64 * self.spacing[2],
        ]
    }

    pub fn on_boundary(&self, idx: usize) -> bool {
        let c = self.coords(idx);
        (0..3).any(|a| c[a] == 0 || c[a] + 1 == self.dims[a])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMask {
    grid: Grid,
    voxels: Vec<bool>,
}

impl VoxelMask {
    pub fn new(grid: Grid, voxels: Vec<bool>) -> Result<Self> {
        if voxels.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "mask has {} voxels, grid {:?} needs {}",
                voxels.len(),
                grid.dims,
                grid.len()
            )));
        }
        Ok(Self { grid, voxels })
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let voxels = (0..grid.len())
            .map(|idx| {
                let [i, j, k] = grid.coords(idx);
                f(i, j, k)
            })
            .collect();
        Self { grid, voxels }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn voxels(&self) -> &[bool] {
        &self.voxels
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v).count()
    }

    /// True when any tumor voxel lies on a grid face, where the Jacobian
    /// falls back to one-sided differences.
    pub fn touches_boundary(&self) -> bool {
        self.voxels
            .iter()
            .enumerate()
            .any(|(idx, &v)| v && self.grid.on_boundary(idx))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    grid: Grid,
    vectors: Vec<[f64; 3]>,
}

impl DisplacementField {
    pub fn new(grid: Grid, vectors: Vec<[f64; 3]>) -> Result<Self> {
        if vectors.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "field has {} vectors, grid {:?} needs {}",
                vectors.len(),
                grid.dims,
                grid.len()
            )));
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("displacement components must be finite".into()));
        }
        Ok(Self { grid, vectors })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            vectors: vec![[0.0; 3]; grid.len()],
            grid,
        }
    }

    /// Samples `u` at every voxel's physical position.
    pub fn from_fn(grid: Grid, mut u: impl FnMut([f64; 3]) -> [f64; 3]) -> Result<Self> {
        let vectors = (0..grid.len()).map(|idx| u(grid.position(idx))).collect();
        Self::new(grid, vectors)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }
}

/// Tumor volume in mm³: number of tumor voxels times the voxel volume.
pub fn tumor_volume(mask: &VoxelMask) -> f64 {
    mask.count() as f64 * mask.grid.voxel_volume()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_spacing_volume() {
        let grid = Grid::new([10, 10, 10], [1.0; 3]).unwrap();
        let mask = VoxelMask::from_fn(grid, |_, _, k| k == 3);
        assert_eq!(tumor_volume(&mask), 100.0);
    }

    #[test]
    fn half_mm_volume() {
        let grid = Grid::new([4, 4, 4], [0.5; 3]).unwrap();
        let mask = VoxelMask::from_fn(grid, |i, j, k| i < 2 && j < 2 && k < 2);
        assert_eq!(tumor_volume(&mask), 1.0);
    }

    #[test]
    fn empty_mask_has_zero_volume() {
        let grid = Grid::new([3, 3, 3], [1.0, 2.0, 3.0]).unwrap();
        assert_eq!(tumor_volume(&VoxelMask::from_fn(grid, |_, _, _| false)), 0.0);
    }

    #[test]
    fn grid_validation() {
        assert!(matches!(Grid::new([0, 1, 1], [1.0; 3]), Err(Error::Dimension(_))));
        assert!(Grid::new([1, 1, 1], [1.0, 0.0, 1.0]).is_err());
        assert!(Grid::new([usize::MAX, 2, 2], [1.0; 3]).is_err());
        let g = Grid::new([2, 2, 2], [1.0; 3]).unwrap();
        assert!(VoxelMask::new(g, vec![true; 7]).is_err());
        assert!(DisplacementField::new(g, vec![[0.0; 3]; 7]).is_err());
        assert!(DisplacementField::new(g, vec![[f64::NAN, 0.0, 0.0]; 8]).is_err());
    }

    #[test]
    fn index_coords_roundtrip() {
        let g = Grid::new([3, 4, 5], [1.0; 3]).unwrap();
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
    }

    #[test]
    fn boundary_detection() {
        let g = Grid::new([5, 5, 5], [1.0; 3]).unwrap();
        let inner = VoxelMask::from_fn(g, |i, j, k| i == 2 && j == 2 && k == 2);
        assert!(!inner.touches_boundary());
        let edge = VoxelMask::from_fn(g, |i, _, _| i == 0);
        assert!(edge.touches_boundary());
    }
}
