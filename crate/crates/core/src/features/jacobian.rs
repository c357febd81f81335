use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DisplacementField, VoxelMask};
use crate::error::{Error, Result};

/// Which scalar sample the Jacobian moments are taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// `det(I + ∇u)` per masked voxel (local volume change).
    #[default]
    Determinant,
    /// The nine raw entries of `∇u` per masked voxel, pooled.
    GradientEntries,
}

/// Population moments of a scalar sample. Kurtosis is raw (normal → 3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianStats {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

/// Per-voxel Jacobian `I + ∇u` of the map `x ↦ x + u(x)`.
///
/// Central differences in the interior, first-order one-sided differences on
/// boundary faces; denominators use the physical spacing.
pub fn jacobian_field(field: &DisplacementField) -> Result<Vec<Matrix3<f64>>> {
    let grid = *field.grid();
    if grid.dims.iter().any(|&d| d < 2) {
        return Err(Error::Dimension(format!(
            "finite differences need every dim >= 2, got {:?}",
            grid.dims
        )));
    }
    let u = field.vectors();
    let strides = [1, grid.dims[0], grid.dims[0] * grid.dims[1]];

    Ok((0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let c = grid.coords(idx);
            let mut j = Matrix3::identity();
            for axis in 0..3 {
                let n = grid.dims[axis];
                let s = strides[axis];
                let h = grid.spacing[axis];
                let (lo, hi, denom) = if c[axis] == 0 {
                    (idx, idx + s, h)
                } else if c[axis] + 1 == n {
                    (idx - s, idx, h)
                } else {
                    (idx - s, idx + s, 2.0 * h)
                };
                for comp in 0..3 {
                    j[(comp, axis)] += (u[hi][comp] - u[lo][comp]) / denom;
                }
            }
            j
        })
        .collect())
}

/// Moments of the Jacobian sample over the masked voxels.
pub fn jacobian_stats(
    field: &DisplacementField,
    mask: &VoxelMask,
    mode: JacobianMode,
) -> Result<JacobianStats> {
    if field.grid() != mask.grid() {
        return Err(Error::Mismatch(format!(
            "field grid {:?} / {:?} differs from mask grid {:?} / {:?}",
            field.grid().dims,
            field.grid().spacing,
            mask.grid().dims,
            mask.grid().spacing
        )));
    }
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let jac = jacobian_field(field)?;
    let masked = jac
        .iter()
        .zip(mask.voxels())
        .filter_map(|(j, &m)| m.then_some(j));
    let sample: Vec<f64> = match mode {
        JacobianMode::Determinant => masked.map(|j| j.determinant()).collect(),
        JacobianMode::GradientEntries => masked
            .flat_map(|j| {
                let g = j - Matrix3::identity();
                g.iter().copied().collect::<Vec<_>>()
            })
            .collect(),
    };
    // Difference quotients carry rounding of order eps * |u| / h; a spread
    // below that is noise, not deformation.
    let umax = field
        .vectors()
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0_f64, |a, c| a.max(c.abs()));
    let hmin = field.grid().spacing.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = match mode {
        JacobianMode::Determinant => (1.0 + umax / hmin).powi(2),
        JacobianMode::GradientEntries => 1.0,
    };
    Ok(moments_with_floor(&sample, 64.0 * f64::EPSILON * scale * umax / hmin))
}

/// Two-pass population moments in fixed summation order.
///
/// A sample whose spread is at rounding level is reported as degenerate:
/// variance, skewness and kurtosis all 0.
pub fn moments(sample: &[f64]) -> JacobianStats {
    moments_with_floor(sample, 0.0)
}

/// As [`moments`], also treating any spread up to `floor` as degenerate.
fn moments_with_floor(sample: &[f64], floor: f64) -> JacobianStats {
    assert!(!sample.is_empty(), "moments of an empty sample");
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;

    let (lo, hi, amax) = sample.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, 0.0_f64),
        |(lo, hi, a), &x| (lo.min(x), hi.max(x), a.max(x.abs())),
    );
    if hi - lo <= (8.0 * f64::EPSILON * amax).max(floor) {
        return JacobianStats {
            mean,
            variance: 0.0,
            skewness: 0.0,
            kurtosis: 0.0,
        };
    }

    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in sample {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    JacobianStats {
        mean,
        variance: m2,
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2),
    }
}
