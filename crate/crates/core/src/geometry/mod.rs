//! Parametric sedan body: 19 unit-interval design variables drive 26 control points,
//! whose pairwise distances form the 325-dimensional kernel feature space.

mod mapping;
mod mesh;
mod normalization;

pub use mapping::{MAPPING_VERSION, Axis, ControlMapping, Driver, PointDef, SmoothingRule, SmoothingTerm};
pub use mesh::{tessellate, Mesh, PATCHES_PER_BODY};
pub use normalization::{
    fit_normalization, fit_normalization_from, NormalizationStats, DEFAULT_SAMPLE_SIZE, DEFAULT_SEED,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_DESIGN_VARS: usize = 19;
pub const N_CONTROL_POINTS: usize = 26;
pub const N_FEATURES: usize = N_CONTROL_POINTS * (N_CONTROL_POINTS - 1) / 2;

pub type Point3 = [f64; 3];

/// A point in the unit hypercube `[0,1]^19`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DesignVector([f64; N_DESIGN_VARS]);

impl DesignVector {
    pub fn new(values: [f64; N_DESIGN_VARS]) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(v) {
                return Err(Error::domain(format!(
                    "design variable x{} = {v} is outside [0, 1]",
                    i + 1
                )));
            }
        }
        Ok(DesignVector(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; N_DESIGN_VARS] = values.try_into().map_err(|_| {
            Error::domain(format!(
                "design vector must have {N_DESIGN_VARS} entries, got {}",
                values.len()
            ))
        })?;
        Self::new(arr)
    }

    /// Every coordinate set to `v`, clamped into the box.
    pub fn uniform(v: f64) -> Self {
        DesignVector([v.clamp(0.0, 1.0); N_DESIGN_VARS])
    }

    /// Clamps arbitrary coordinates into the box.
    pub fn clamped(values: &[f64]) -> Self {
        let mut out = [0.0; N_DESIGN_VARS];
        for (o, v) in out.iter_mut().zip(values) {
            *o = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.5 };
        }
        DesignVector(out)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn values(&self) -> &[f64; N_DESIGN_VARS] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for DesignVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        DesignVector::from_slice(&v)
    }
}

impl From<DesignVector> for Vec<f64> {
    fn from(d: DesignVector) -> Self {
        d.0.to_vec()
    }
}

/// The 26 decoded control points: 8 on the symmetry plane, then 9 left-side points,
/// then their 9 right-side mirrors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPointSet {
    pub points: Vec<Point3>,
}

impl ControlPointSet {
    pub fn get(&self, i: usize) -> Point3 {
        self.points[i]
    }

    /// Index of the mirror image of point `i`.
    pub fn mirror_index(i: usize) -> usize {
        let c = mapping::N_CENTER;
        let s = mapping::N_SIDE;
        if i < c {
            i
        } else if i < c + s {
            i + s
        } else {
            i - s
        }
    }
}

/// Decodes a design into control points using the built-in mapping table.
pub fn decode_controls(design: &DesignVector) -> ControlPointSet {
    ControlMapping::builtin().decode(design.as_slice())
}

/// Feature vector: Euclidean distances for every pair `i < j`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn features_from_points(points: &[Point3]) -> FeatureVector {
    let n = points.len();
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (points[i], points[j]);
            let dx = a[0] - b[0];
            let dy = a[1] - b[1];
            let dz = a[2] - b[2];
            d.push((dx * dx + dy * dy + dz * dz).sqrt());
        }
    }
    FeatureVector(d)
}

pub fn features(design: &DesignVector) -> FeatureVector {
    features_from_points(&decode_controls(design).points)
}

/// Offset of pair `(i, j)` with `i < j` in the canonical feature order.
pub fn pair_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}
