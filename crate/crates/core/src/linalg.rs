//! Orthonormal projection bases and the Gram-Schmidt machinery behind them.
//!
//! A [`ProjectionMatrix`] is a `p x d` matrix with orthonormal columns; row
//! `j` holds the contribution of variable `j` to each of the `d` display
//! axes. A [`Basis`] is a full `p x p` orthogonal matrix whose leading
//! columns extend a projection.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TourError};

/// Tolerance for every orthonormality audit.
pub const ORTHO_TOL: f64 = 1e-10;

/// Residual norm below which Gram-Schmidt reports rank deficiency.
pub const RANK_TOL: f64 = 1e-12;

/// Residual below which a completion candidate is discarded. Normalising a
/// smaller residual would amplify rounding past `ORTHO_TOL`.
pub(crate) const CANDIDATE_TOL: f64 = 1e-6;

const MAX_RANDOM_ATTEMPTS: usize = 8;

/// Largest absolute entry of `MᵀM − I`.
pub fn orthonormality_error(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    let mut worst = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let expected = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - expected).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ProjectionMatrix(DMatrix<f64>);

impl ProjectionMatrix {
    /// Validates shape and orthonormality of `m`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_shape(m.nrows(), m.ncols())?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(TourError::NotOrthonormal {
                deviation: f64::INFINITY,
            });
        }
        let deviation = orthonormality_error(&m);
        if deviation >= ORTHO_TOL {
            return Err(TourError::NotOrthonormal { deviation });
        }
        Ok(ProjectionMatrix(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(TourError::DimensionMismatch {
                what: "projection row length",
                expected: d,
                actual: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(p, d, |i, j| rows[i][j]))
    }

    /// Skips the audit. Callers guarantee orthonormality by construction.
    pub(crate) fn from_orthonormal(m: DMatrix<f64>) -> Self {
        debug_assert!(orthonormality_error(&m) < ORTHO_TOL);
        ProjectionMatrix(m)
    }

    /// The first `d` coordinate axes, `[e1 .. ed]`.
    pub fn axes(p: usize, d: usize) -> Result<Self> {
        check_shape(p, d)?;
        Ok(ProjectionMatrix(DMatrix::identity(p, d)))
    }

    /// Random orthonormal projection: uniform entries in (-1, 1), then
    /// Gram-Schmidt.
    pub fn random(p: usize, d: usize, rng: &mut dyn RngCore) -> Result<Self> {
        check_shape(p, d)?;
        let mut last = None;
        for _ in 0..MAX_RANDOM_ATTEMPTS {
            let m = DMatrix::from_fn(p, d, |_, _| rng.random_range(-1.0..1.0));
            match gram_schmidt(&m, None) {
                Ok(pm) => return Ok(pm),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    pub fn d(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn row(&self, var: usize) -> Vec<f64> {
        self.0.row(var).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.p()).map(|i| self.row(i)).collect()
    }

    pub fn column(&self, k: usize) -> DVector<f64> {
        self.0.column(k).into_owned()
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.0)
    }

    /// `self · q` for an orthogonal `d x d` matrix `q`: same span, rotated
    /// in-plane coordinates.
    pub fn rotate_in_plane(&self, q: &DMatrix<f64>) -> Result<Self> {
        if q.nrows() != self.d() || q.ncols() != self.d() {
            return Err(TourError::DimensionMismatch {
                what: "in-plane rotation",
                expected: self.d(),
                actual: q.nrows(),
            });
        }
        Self::new(&self.0 * q)
    }
}

impl TryFrom<Vec<Vec<f64>>> for ProjectionMatrix {
    type Error = TourError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<ProjectionMatrix> for Vec<Vec<f64>> {
    fn from(pm: ProjectionMatrix) -> Self {
        pm.rows()
    }
}

fn check_shape(p: usize, d: usize) -> Result<()> {
    if p < 2 || d == 0 || d >= p {
        return Err(TourError::InvalidShape { p, d });
    }
    Ok(())
}

/// Full orthogonal `p x p` basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis(DMatrix<f64>);

impl Basis {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(TourError::DimensionMismatch {
                what: "basis columns",
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        let deviation = orthonormality_error(&m);
        if !(deviation < ORTHO_TOL) {
            return Err(TourError::NotOrthonormal { deviation });
        }
        Ok(Basis(m))
    }

    pub(crate) fn from_orthonormal(m: DMatrix<f64>) -> Self {
        debug_assert!(orthonormality_error(&m) < ORTHO_TOL);
        Basis(m)
    }

    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Leading `d` columns as a projection.
    pub fn projection(&self, d: usize) -> Result<ProjectionMatrix> {
        check_shape(self.p(), d)?;
        Ok(ProjectionMatrix::from_orthonormal(
            self.0.columns(0, d).into_owned(),
        ))
    }
}

/// Modified Gram-Schmidt over the columns of `m`.
///
/// `order` gives the sequence in which columns are orthogonalised; each
/// result column stays in its original position. With the default order the
/// first column keeps its direction.
pub fn gram_schmidt(m: &DMatrix<f64>, order: Option<&[usize]>) -> Result<ProjectionMatrix> {
    check_shape(m.nrows(), m.ncols())?;
    Ok(ProjectionMatrix::from_orthonormal(orthonormalize_columns(
        m, order,
    )?))
}

pub(crate) fn orthonormalize_columns(
    m: &DMatrix<f64>,
    order: Option<&[usize]>,
) -> Result<DMatrix<f64>> {
    let d = m.ncols();
    let default: Vec<usize> = (0..d).collect();
    let order = order.unwrap_or(&default);
    let mut seen = vec![false; d];
    if order.len() != d || order.iter().any(|&k| k >= d || std::mem::replace(&mut seen[k], true)) {
        return Err(TourError::DomainError(format!(
            "column order {order:?} is not a permutation of 0..{d}"
        )));
    }

    let mut out = m.clone();
    for (step, &k) in order.iter().enumerate() {
        let mut v = m.column(k).into_owned();
        for &prev in &order[..step] {
            let q = out.column(prev);
            let c = q.dot(&v);
            v.axpy(-c, &q, 1.0);
        }
        let norm = v.norm();
        if !(norm >= RANK_TOL) {
            return Err(TourError::RankDeficient {
                column: k,
                residual: norm,
            });
        }
        out.set_column(k, &(v / norm));
    }
    Ok(out)
}

/// Removes from `v` its components along every (unit) vector in `basis`,
/// two sweeps of modified Gram-Schmidt. Returns the residual norm.
pub(crate) fn orthogonalize_against(v: &mut DVector<f64>, basis: &[DVector<f64>]) -> f64 {
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(v);
            v.axpy(-c, q, 1.0);
        }
    }
    v.norm()
}

/// Grows `fixed` (orthonormal) to `target` vectors using `candidates` in
/// order; degenerate candidates are skipped.
pub(crate) fn extend_orthonormal(
    mut fixed: Vec<DVector<f64>>,
    candidates: impl IntoIterator<Item = DVector<f64>>,
    target: usize,
) -> Option<Vec<DVector<f64>>> {
    for mut c in candidates {
        if fixed.len() >= target {
            break;
        }
        let scale = c.norm();
        if !(scale > 0.0) || !scale.is_finite() {
            continue;
        }
        let residual = orthogonalize_against(&mut c, &fixed);
        if residual > CANDIDATE_TOL * scale.max(1.0) {
            fixed.push(c / residual);
        }
    }
    (fixed.len() >= target).then_some(fixed)
}

pub(crate) fn unit_vector(p: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(p);
    e[i] = 1.0;
    e
}

/// Rows of `data` projected onto `a`: `data · A`.
pub fn project(data: &DMatrix<f64>, a: &ProjectionMatrix) -> Result<DMatrix<f64>> {
    if data.ncols() != a.p() {
        return Err(TourError::DimensionMismatch {
            what: "data columns",
            expected: a.p(),
            actual: data.ncols(),
        });
    }
    Ok(data * a.matrix())
}

/// How the orthogonal complement of a projection is chosen.
pub enum Fill<'a> {
    /// Uniform draws in (-1, 1), orthogonalised.
    Random(&'a mut dyn RngCore),
    /// Reuse the complement of a previous basis, changing it as little as
    /// Gram-Schmidt allows.
    Retain(&'a Basis),
}

/// Completes `a` to a full orthogonal basis. The first `d` columns of the
/// result are copied from `a` unchanged.
pub fn complete_basis(a: &ProjectionMatrix, fill: Fill<'_>) -> Result<Basis> {
    let (p, d) = (a.p(), a.d());
    let fixed: Vec<DVector<f64>> = (0..d).map(|k| a.column(k)).collect();
    let columns = match fill {
        Fill::Random(rng) => {
            let mut found = None;
            for _ in 0..MAX_RANDOM_ATTEMPTS {
                let draws: Vec<DVector<f64>> = (d..p)
                    .map(|_| DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0)))
                    .collect();
                // every draw must survive, otherwise redraw the lot
                let mut cols = fixed.clone();
                let mut ok = true;
                for mut c in draws {
                    let scale = c.norm();
                    let residual = orthogonalize_against(&mut c, &cols);
                    if residual <= CANDIDATE_TOL * scale.max(1.0) {
                        ok = false;
                        break;
                    }
                    cols.push(c / residual);
                }
                if ok {
                    found = Some(cols);
                    break;
                }
            }
            found.ok_or(TourError::RankDeficient {
                column: d,
                residual: 0.0,
            })?
        }
        Fill::Retain(prev) => {
            if prev.p() != p {
                return Err(TourError::DimensionMismatch {
                    what: "previous basis dimension",
                    expected: p,
                    actual: prev.p(),
                });
            }
            let previous = (d..p).map(|k| prev.matrix().column(k).into_owned());
            let axes = (0..p).map(|i| unit_vector(p, i));
            extend_orthonormal(fixed, previous.chain(axes), p).ok_or(
                TourError::RankDeficient {
                    column: d,
                    residual: 0.0,
                },
            )?
        }
    };
    Ok(Basis::from_orthonormal(DMatrix::from_columns(&columns)))
}
