//! Slices: points whose orthogonal distance from the projection plane
//! through a center point falls below a thickness.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TourError};
use crate::linalg::ProjectionMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    center: Vec<f64>,
    thickness: f64,
}

impl SliceSpec {
    pub fn new(center: Vec<f64>, thickness: f64) -> Result<Self> {
        if !(thickness > 0.0) || !thickness.is_finite() {
            return Err(TourError::InvalidSlice(format!(
                "thickness must be positive and finite, got {thickness}"
            )));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(TourError::InvalidSlice("center must be finite".into()));
        }
        Ok(SliceSpec { center, thickness })
    }

    /// Slice through the origin.
    pub fn centered(p: usize, thickness: f64) -> Result<Self> {
        Self::new(vec![0.0; p], thickness)
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn thickness(&self) -> f64 {
        self.thickness
    }

    pub fn p(&self) -> usize {
        self.center.len()
    }

    pub fn with_thickness(&self, thickness: f64) -> Result<Self> {
        Self::new(self.center.clone(), thickness)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceResult {
    pub distances: Vec<f64>,
    pub mask: Vec<bool>,
}

impl SliceResult {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Distance of each row of `data` from the plane spanned by `a` through
/// `spec.center`: the norm of the part of `x − c` orthogonal to every
/// column of `a`. A point is inside when its distance is strictly below
/// the thickness.
pub fn slice_distances(
    data: &DMatrix<f64>,
    a: &ProjectionMatrix,
    spec: &SliceSpec,
) -> Result<SliceResult> {
    let p = a.p();
    if data.ncols() != p {
        return Err(TourError::DimensionMismatch {
            what: "data columns",
            expected: p,
            actual: data.ncols(),
        });
    }
    if spec.p() != p {
        return Err(TourError::DimensionMismatch {
            what: "slice center length",
            expected: p,
            actual: spec.p(),
        });
    }
    let center = DVector::from_column_slice(&spec.center);
    let columns: Vec<DVector<f64>> = (0..a.d()).map(|k| a.column(k)).collect();
    let mut distances = Vec::with_capacity(data.nrows());
    for row in data.row_iter() {
        let mut offset = row.transpose() - &center;
        for col in &columns {
            let along = col.dot(&offset);
            offset.axpy(-along, col, 1.0);
        }
        distances.push(offset.norm());
    }
    let mask = distances.iter().map(|&v| v < spec.thickness).collect();
    Ok(SliceResult { distances, mask })
}

/// Expected number of points in a slice of thickness `h` through the center
/// of `n` points uniform in a `p`-ball of radius `r`:
/// `n/2 · (h/r)^(p−2) · (p − (p−2)(h/r)²)`.
pub fn expected_slice_count(h: f64, p: usize, r: f64, n: f64) -> Result<f64> {
    if p < 2 {
        return Err(TourError::DomainError(format!("need p >= 2, got {p}")));
    }
    if !(h > 0.0) || !(r > 0.0) || h > r {
        return Err(TourError::DomainError(format!(
            "need 0 < h <= R, got h = {h}, R = {r}"
        )));
    }
    if !(n >= 0.0) {
        return Err(TourError::DomainError(format!("need N >= 0, got {n}")));
    }
    let ratio = h / r;
    let pf = p as f64;
    Ok(n / 2.0 * ratio.powi(p as i32 - 2) * (pf - (pf - 2.0) * ratio * ratio))
}

/// Copy of `spec` with center coordinate `axis` (0-based) set to `value`.
pub fn shift_center(spec: &SliceSpec, axis: usize, value: f64) -> Result<SliceSpec> {
    if axis >= spec.p() {
        return Err(TourError::VariableOutOfRange {
            index: axis,
            p: spec.p(),
        });
    }
    let mut center = spec.center.clone();
    center[axis] = value;
    SliceSpec::new(center, spec.thickness)
}

/// Center sweep along `axis`: the offset from the starting center goes
/// 0 → +extent → 0 → −extent → 0 in four linear legs of `steps` frames
/// each, `4·steps + 1` specs in total.
pub fn manual_slice_path(
    spec: &SliceSpec,
    axis: usize,
    extent: f64,
    steps: usize,
) -> Result<Vec<SliceSpec>> {
    if axis >= spec.p() {
        return Err(TourError::VariableOutOfRange {
            index: axis,
            p: spec.p(),
        });
    }
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(TourError::DomainError(format!(
            "extent must be positive, got {extent}"
        )));
    }
    if steps == 0 {
        return Err(TourError::DomainError("steps must be >= 1".into()));
    }
    let start = spec.center[axis];
    let ramp = |i: usize| extent * (i as f64 / steps as f64);
    let mut offsets = Vec::with_capacity(4 * steps + 1);
    offsets.extend((0..steps).map(ramp));
    offsets.extend((0..steps).map(|i| ramp(steps - i)));
    offsets.extend((0..steps).map(|i| -ramp(i)));
    offsets.extend((0..steps).map(|i| -ramp(steps - i)));
    offsets.push(0.0);

    offsets
        .into_iter()
        .map(|off| {
            if off == 0.0 {
                Ok(spec.clone())
            } else {
                shift_center(spec, axis, start + off)
            }
        })
        .collect()
}

/// Star-plot position of a slice center: each coordinate mapped from the
/// data range of its variable onto [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterGuide {
    pub radial: Vec<f64>,
}

pub fn center_guide_coords(
    spec: &SliceSpec,
    data_min: &[f64],
    data_max: &[f64],
) -> Result<CenterGuide> {
    let p = spec.p();
    for (what, len) in [("data_min length", data_min.len()), ("data_max length", data_max.len())] {
        if len != p {
            return Err(TourError::DimensionMismatch {
                what,
                expected: p,
                actual: len,
            });
        }
    }
    let mut radial = Vec::with_capacity(p);
    for j in 0..p {
        let (lo, hi) = (data_min[j], data_max[j]);
        if !(hi > lo) {
            return Err(TourError::DegenerateRange { index: j, value: lo });
        }
        radial.push(((spec.center[j] - lo) / (hi - lo)).clamp(0.0, 1.0));
    }
    Ok(CenterGuide { radial })
}
