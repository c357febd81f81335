use nalgebra::{DMatrix, DVector};

use super::spec::ModelSpec;
use crate::cohort::{Cohort, Feature, FeatureSeries};

/// One patient's response vector with fixed and random design matrices.
#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub id: String,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Block {
    pub fn from_series(id: impl Into<String>, series: &FeatureSeries, spec: &ModelSpec) -> Self {
        let n = series.len();
        let p = spec.n_fixed();
        let q = spec.n_random();
        let mut x = DMatrix::zeros(n, p);
        let mut z = DMatrix::zeros(n, q);
        for (r, obs) in series.observations().iter().enumerate() {
            let row = spec.design_row(obs.time);
            for (c, v) in row.iter().enumerate() {
                x[(r, c)] = *v;
            }
            for (c, t) in spec.random_terms.iter().enumerate() {
                z[(r, c)] = row[t.column()];
            }
        }
        Block {
            id: id.into(),
            x,
            z,
            y: DVector::from_iterator(n, series.values()),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }
}

/// Blocks for every patient holding at least one observation of `feature`.
pub(crate) fn blocks(cohort: &Cohort, feature: Feature, spec: &ModelSpec) -> Vec<Block> {
    cohort
        .patients()
        .iter()
        .filter_map(|p| {
            p.series(feature)
                .map(|s| Block::from_series(p.patient_id.clone(), s, spec))
        })
        .collect()
}

pub(crate) fn stack(blocks: &[Block]) -> (DMatrix<f64>, DVector<f64>) {
    let n: usize = blocks.iter().map(Block::len).sum();
    let p = blocks.first().map_or(0, |b| b.x.ncols());
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut row = 0;
    for b in blocks {
        x.rows_mut(row, b.len()).copy_from(&b.x);
        y.rows_mut(row, b.len()).copy_from(&b.y);
        row += b.len();
    }
    (x, y)
}
