//! Manual control of one variable's contribution to a projection.
//!
//! Every update takes the current projection `A` and a [`ManualRequest`]
//! naming a variable `m` and the coefficients requested for row `m`, and
//! returns a new orthonormal projection. The methods differ in how the
//! other rows absorb the change:
//!
//! * [`update_simple`] replaces row `m` and re-orthonormalises with
//!   Gram-Schmidt. Row `m` ends close to, not exactly at, the request.
//! * [`update_exact_zeroed`] orthonormalises with row `m` removed and then
//!   rescales the remaining rows around the stored request.
//! * [`update_exact_completion`] completes the projection to a full basis
//!   and runs Gram-Schmidt over its rows, starting from row `m`.
//! * [`update_exact_rotation`] rotates within the projection plane so the
//!   first in-plane direction carries all of variable `m`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TourError};
use crate::linalg::{
    complete_basis, extend_orthonormal, gram_schmidt, orthogonalize_against, unit_vector, Basis,
    Fill, ProjectionMatrix, CANDIDATE_TOL, RANK_TOL,
};

/// Requests with norm at or above this are rejected by the zeroed update.
pub const ZEROED_MAX_NORM: f64 = 1.0 - 1e-6;

/// Smallest target norm that still defines a direction for the rotation
/// update.
pub const ROTATION_MIN_NORM: f64 = 1e-8;

const MAX_RANDOM_ATTEMPTS: usize = 8;

/// Requested coefficients for row `var` (0-based) of the projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ManualRequest {
    var: usize,
    target: Vec<f64>,
}

impl ManualRequest {
    /// Targets outside the unit ball are scaled back onto the unit sphere.
    pub fn new(var: usize, mut target: Vec<f64>) -> Self {
        let norm = target.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1.0 {
            target.iter_mut().for_each(|v| *v /= norm);
        }
        ManualRequest { var, target }
    }

    pub fn var(&self) -> usize {
        self.var
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn norm(&self) -> f64 {
        self.target.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check(&self, a: &ProjectionMatrix) -> Result<()> {
        if self.var >= a.p() {
            return Err(TourError::VariableOutOfRange {
                index: self.var,
                p: a.p(),
            });
        }
        if self.target.len() != a.d() {
            return Err(TourError::DimensionMismatch {
                what: "target length",
                expected: a.d(),
                actual: self.target.len(),
            });
        }
        if self.target.iter().any(|v| !v.is_finite()) {
            return Err(TourError::DomainError("target must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMethod {
    Simple,
    ExactZeroed,
    ExactCompletionRandom,
    ExactCompletionContinuous,
    ExactRotation,
}

impl UpdateMethod {
    pub const ALL: [UpdateMethod; 5] = [
        UpdateMethod::Simple,
        UpdateMethod::ExactZeroed,
        UpdateMethod::ExactCompletionRandom,
        UpdateMethod::ExactCompletionContinuous,
        UpdateMethod::ExactRotation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UpdateMethod::Simple => "simple",
            UpdateMethod::ExactZeroed => "exact_zeroed",
            UpdateMethod::ExactCompletionRandom => "exact_completion_random",
            UpdateMethod::ExactCompletionContinuous => "exact_completion_continuous",
            UpdateMethod::ExactRotation => "exact_rotation",
        }
    }

    /// Whether row `m` of the result equals the request.
    pub fn is_exact(self) -> bool {
        self != UpdateMethod::Simple
    }
}

impl fmt::Display for UpdateMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UpdateMethod {
    type Err = TourError;

    fn from_str(s: &str) -> Result<Self> {
        UpdateMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| TourError::DomainError(format!("unknown update method '{s}'")))
    }
}

fn with_row(a: &ProjectionMatrix, var: usize, row: &[f64]) -> DMatrix<f64> {
    let mut m = a.matrix().clone();
    for (k, &v) in row.iter().enumerate() {
        m[(var, k)] = v;
    }
    m
}

/// Replace row `m`, then Gram-Schmidt.
pub fn update_simple(a: &ProjectionMatrix, req: &ManualRequest) -> Result<ProjectionMatrix> {
    req.check(a)?;
    gram_schmidt(&with_row(a, req.var, &req.target), None)
}

/// Orthonormal directions spanning the columns of `a` with row `var`
/// zeroed, one per column and in column order.
///
/// A column that vanishes (or falls into the span of earlier ones) is
/// replaced by a coordinate direction other than `var`. If every column
/// vanishes nothing of the old projection survives, and the update is
/// rejected.
fn zeroed_directions(a: &ProjectionMatrix, var: usize) -> Result<Vec<DVector<f64>>> {
    let (p, d) = (a.p(), a.d());
    let mut kept: Vec<Option<DVector<f64>>> = Vec::with_capacity(d);
    let mut accepted: Vec<DVector<f64>> = Vec::with_capacity(d);
    let mut largest = 0.0f64;
    for k in 0..d {
        let mut v = a.column(k);
        v[var] = 0.0;
        let residual = orthogonalize_against(&mut v, &accepted);
        largest = largest.max(residual);
        if residual >= CANDIDATE_TOL {
            let q = v / residual;
            accepted.push(q.clone());
            kept.push(Some(q));
        } else {
            kept.push(None);
        }
    }
    if accepted.is_empty() {
        return Err(TourError::RankDeficient {
            column: 0,
            residual: largest,
        });
    }

    let mut directions = Vec::with_capacity(d);
    let mut fixed = accepted;
    let axes = (0..p).filter(|&i| i != var).map(|i| unit_vector(p, i));
    let mut spare = Vec::new();
    if fixed.len() < d {
        let grown = extend_orthonormal(fixed.clone(), axes, d).ok_or(TourError::RankDeficient {
            column: d - 1,
            residual: 0.0,
        })?;
        spare = grown[fixed.len()..].to_vec();
        fixed = grown;
    }
    let mut spare = spare.into_iter();
    for slot in kept {
        match slot {
            Some(q) => directions.push(q),
            None => directions.push(spare.next().expect("one spare per vanished column")),
        }
    }
    debug_assert_eq!(directions.len(), fixed.len());
    Ok(directions)
}

/// Exact update that orthonormalises with row `m` removed.
///
/// After Gram-Schmidt on the zeroed matrix gives directions `r_1..r_d`
/// (rows other than `m`), column `k` is rebuilt as
///
/// ```text
/// c_k = α_k r_k − t_k / (1 − Σ_{j<k} t_j²) · Σ_{j<k} t_j c_j
/// α_k = sqrt((1 − Σ_{j≤k} t_j²) / (1 − Σ_{j<k} t_j²))
/// ```
///
/// with `t` the request placed in row `m`. This is the unique sequential
/// correction that makes the full columns orthonormal while keeping each
/// column in the span of the directions before it. For `d = 1` it reduces
/// to rescaling the other rows.
pub fn update_exact_zeroed(a: &ProjectionMatrix, req: &ManualRequest) -> Result<ProjectionMatrix> {
    req.check(a)?;
    let norm = req.norm();
    if norm >= ZEROED_MAX_NORM {
        return Err(TourError::TargetTooLarge { norm });
    }
    let (p, d, var) = (a.p(), a.d(), req.var);
    let t = &req.target;
    let directions = zeroed_directions(a, var)?;

    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(d);
    let mut used = 0.0;
    for k in 0..d {
        let remaining = 1.0 - used;
        let alpha = ((remaining - t[k] * t[k]) / remaining).max(0.0).sqrt();
        let mut c = &directions[k] * alpha;
        let coupling = -t[k] / remaining;
        for (j, prev) in columns.iter().enumerate() {
            // prev[var] is overwritten below, so only the other rows count
            c.axpy(coupling * t[j], prev, 1.0);
        }
        c[var] = 0.0;
        columns.push(c);
        used += t[k] * t[k];
    }
    for (k, c) in columns.iter_mut().enumerate() {
        c[var] = t[k];
    }
    let out = DMatrix::from_columns(&columns);
    debug_assert_eq!(out.nrows(), p);
    ProjectionMatrix::new(out)
}

/// The zeroed update with the literal constant correction
/// `a_j2 + t1·t2/(p−1)` (d = 2 only), for comparison with
/// [`update_exact_zeroed`]. The result is generally not orthonormal; see
/// [`cross_column_residual`].
pub fn update_zeroed_literal(a: &ProjectionMatrix, req: &ManualRequest) -> Result<DMatrix<f64>> {
    req.check(a)?;
    if a.d() != 2 {
        return Err(TourError::DomainError(
            "the literal correction is defined for d = 2 only".into(),
        ));
    }
    let (p, var) = (a.p(), req.var);
    let t = &req.target;
    let mut zeroed = a.matrix().clone();
    zeroed.row_mut(var).fill(0.0);
    let mut m = gram_schmidt_any(&zeroed)?;
    m[(var, 0)] = t[0];
    m[(var, 1)] = t[1];
    let shift = t[0] * t[1] / (p as f64 - 1.0);
    for j in (0..p).filter(|&j| j != var) {
        m[(j, 1)] += shift;
    }
    Ok(m)
}

fn gram_schmidt_any(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    crate::linalg::orthonormalize_columns(m, None)
}

/// Dot product of the first two columns.
pub fn cross_column_residual(m: &DMatrix<f64>) -> f64 {
    m.column(0).dot(&m.column(1))
}

/// How the rows outside the projection are filled before row-wise
/// Gram-Schmidt.
pub enum CompletionMode<'a> {
    /// Fresh uniform draws in (-1, 1).
    Random(&'a mut dyn RngCore),
    /// Values carried over from the previous basis.
    Continuous,
}

/// Exact update through a completed `p x p` basis.
///
/// Row `m` of the basis becomes `(t, sqrt(1 − |t|²)·u, …)` where `u` is a
/// unit vector in the complement columns: the first complement axis in
/// random mode, the previous row-`m` complement direction in continuous
/// mode. The remaining rows keep their projection coefficients and get
/// random or carried-over complement values. Gram-Schmidt over the rows,
/// starting from row `m`, then yields an orthogonal basis whose row `m` is
/// untouched.
pub fn update_exact_completion(
    a: &ProjectionMatrix,
    req: &ManualRequest,
    prev: Option<&Basis>,
    mode: CompletionMode<'_>,
) -> Result<(ProjectionMatrix, Basis)> {
    req.check(a)?;
    let (p, d, var) = (a.p(), a.d(), req.var);
    let t = &req.target;
    let rest_norm = (1.0 - req.norm().powi(2)).max(0.0).sqrt();

    match mode {
        CompletionMode::Random(rng) => {
            let mut row_m = vec![0.0; p];
            row_m[..d].copy_from_slice(t);
            row_m[d] = rest_norm;
            let mut last = None;
            for _ in 0..MAX_RANDOM_ATTEMPTS {
                let mut seed = DMatrix::zeros(p, p);
                for i in 0..p {
                    for j in 0..p {
                        seed[(i, j)] = if i == var {
                            row_m[j]
                        } else if j < d {
                            a.matrix()[(i, j)]
                        } else {
                            rng.random_range(-1.0..1.0)
                        };
                    }
                }
                match orthonormalize_rows_from(&seed, var) {
                    Ok(o) => return finish_completion(o, d),
                    Err(e) => last = Some(e),
                }
            }
            Err(last.expect("at least one attempt"))
        }
        CompletionMode::Continuous => {
            let prev = prev.ok_or(TourError::MissingPrevBasis)?;
            let aligned = complete_basis(a, Fill::Retain(prev))?;
            let o = aligned.matrix();
            let mut seed = o.clone();
            let tail: DVector<f64> = o.row(var).columns(d, p - d).transpose();
            let tail_norm = tail.norm();
            for (k, &v) in t.iter().enumerate() {
                seed[(var, k)] = v;
            }
            for j in d..p {
                seed[(var, j)] = if tail_norm > RANK_TOL {
                    rest_norm * tail[j - d] / tail_norm
                } else if j == d {
                    rest_norm
                } else {
                    0.0
                };
            }
            finish_completion(orthonormalize_rows_from(&seed, var)?, d)
        }
    }
}

fn finish_completion(o: DMatrix<f64>, d: usize) -> Result<(ProjectionMatrix, Basis)> {
    let basis = Basis::new(o)?;
    let projection = ProjectionMatrix::new(basis.matrix().columns(0, d).into_owned())?;
    Ok((projection, basis))
}

/// Gram-Schmidt over rows: row `first` is taken as is, then the other rows
/// in index order.
fn orthonormalize_rows_from(seed: &DMatrix<f64>, first: usize) -> Result<DMatrix<f64>> {
    let p = seed.nrows();
    let lead: DVector<f64> = seed.row(first).transpose();
    let mut accepted = vec![lead];
    let mut out = seed.clone();
    for i in (0..p).filter(|&i| i != first) {
        let mut v: DVector<f64> = seed.row(i).transpose();
        let residual = orthogonalize_against(&mut v, &accepted);
        if residual < CANDIDATE_TOL {
            return Err(TourError::RankDeficient {
                column: i,
                residual,
            });
        }
        let v = v / residual;
        out.set_row(i, &v.transpose());
        accepted.push(v);
    }
    Ok(out)
}

/// Exact update by rotation within the projection plane.
///
/// An orthogonal `d x d` matrix `Q` whose first column is `t/|t|` turns row
/// `m` into `(|t|, 0, …, 0)`. In that frame the first column is rescaled
/// over the other rows to unit norm, the remaining columns are
/// orthonormalised over the other rows (their row-`m` entry is zero), and
/// the frame is rotated back. Row `m` keeps both the direction and the
/// length of the request.
pub fn update_exact_rotation(a: &ProjectionMatrix, req: &ManualRequest) -> Result<ProjectionMatrix> {
    req.check(a)?;
    let norm = req.norm();
    if norm < ROTATION_MIN_NORM {
        return Err(TourError::DegenerateTarget { norm });
    }
    let (p, d, var) = (a.p(), a.d(), req.var);
    let t = DVector::from_column_slice(&req.target);
    let u = &t / norm;
    let q_cols = extend_orthonormal(vec![u], (0..d).map(|i| unit_vector(d, i)), d)
        .expect("coordinate axes complete any unit vector");
    let q = DMatrix::from_columns(&q_cols);

    let rotated = a.matrix() * &q;
    let rest_len = (1.0 - norm * norm).max(0.0).sqrt();
    let axes = || (0..p).filter(move |&i| i != var).map(move |i| unit_vector(p, i));

    let mut directions: Vec<DVector<f64>> = Vec::with_capacity(d);
    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(d);
    for k in 0..d {
        let mut v = rotated.column(k).into_owned();
        v[var] = 0.0;
        let scale = v.norm();
        let residual = orthogonalize_against(&mut v, &directions);
        let dir = if residual >= CANDIDATE_TOL * scale.clamp(RANK_TOL, 1.0) {
            v / residual
        } else if k == 0 && rest_len == 0.0 {
            // the request takes the whole column; its other rows are zero
            DVector::zeros(p)
        } else {
            let grown = extend_orthonormal(directions.clone(), axes(), directions.len() + 1)
                .ok_or(TourError::RankDeficient {
                    column: k,
                    residual,
                })?;
            grown.last().expect("grown by one").clone()
        };
        let mut c = if k == 0 { &dir * rest_len } else { dir.clone() };
        if dir.norm() > 0.0 {
            directions.push(dir);
        }
        c[var] = if k == 0 { norm } else { 0.0 };
        columns.push(c);
    }
    let mut out = DMatrix::from_columns(&columns) * q.transpose();
    for k in 0..d {
        out[(var, k)] = req.target[k];
    }
    ProjectionMatrix::new(out)
}

/// An ordered sequence of projections produced by a path generator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TourPath {
    pub frames: Vec<ProjectionMatrix>,
    pub generator: String,
    pub params: BTreeMap<String, serde_json::Value>,
}

/// Dispatches requests to one of the update methods and owns the state
/// some of them need: the seeded generator for random completion and the
/// basis carried between continuous-completion calls.
///
/// A failed update leaves the updater untouched.
#[derive(Debug, Clone)]
pub struct Updater {
    method: UpdateMethod,
    rng: ChaCha8Rng,
    basis: Option<Basis>,
}

impl Updater {
    pub fn new(method: UpdateMethod, seed: u64) -> Self {
        Updater {
            method,
            rng: ChaCha8Rng::seed_from_u64(seed),
            basis: None,
        }
    }

    pub fn method(&self) -> UpdateMethod {
        self.method
    }

    pub fn set_method(&mut self, method: UpdateMethod) {
        self.method = method;
    }

    pub fn basis(&self) -> Option<&Basis> {
        self.basis.as_ref()
    }

    /// Forget the cached basis, e.g. after a projection import.
    pub fn reset_basis(&mut self) {
        self.basis = None;
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn apply(&mut self, a: &ProjectionMatrix, req: &ManualRequest) -> Result<ProjectionMatrix> {
        match self.method {
            UpdateMethod::Simple => update_simple(a, req),
            UpdateMethod::ExactZeroed => update_exact_zeroed(a, req),
            UpdateMethod::ExactRotation => update_exact_rotation(a, req),
            UpdateMethod::ExactCompletionRandom => {
                let mut rng = self.rng.clone();
                let (pm, basis) =
                    update_exact_completion(a, req, None, CompletionMode::Random(&mut rng))?;
                self.rng = rng;
                self.basis = Some(basis);
                Ok(pm)
            }
            UpdateMethod::ExactCompletionContinuous => {
                let mut rng = self.rng.clone();
                let prev = match &self.basis {
                    Some(b) if b.p() == a.p() => b.clone(),
                    _ => complete_basis(a, Fill::Random(&mut rng))?,
                };
                let (pm, basis) =
                    update_exact_completion(a, req, Some(&prev), CompletionMode::Continuous)?;
                self.rng = rng;
                self.basis = Some(basis);
                Ok(pm)
            }
        }
    }
}

/// Radial tour with the zeroed update: row `var` shrinks linearly to zero
/// and grows back. `steps` frames per leg, endpoints shared, so the path
/// has `2·steps − 1` frames.
pub fn radial_tour_path(a: &ProjectionMatrix, var: usize, steps: usize) -> Result<TourPath> {
    radial_tour_path_with(a, var, steps, &mut Updater::new(UpdateMethod::ExactZeroed, 0))
}

/// Radial tour driven by any updater. Each frame is computed from the one
/// before it; frames whose target equals the starting row reuse `a`.
pub fn radial_tour_path_with(
    a: &ProjectionMatrix,
    var: usize,
    steps: usize,
    updater: &mut Updater,
) -> Result<TourPath> {
    if steps < 2 {
        return Err(TourError::DomainError("radial tour needs steps >= 2".into()));
    }
    if var >= a.p() {
        return Err(TourError::VariableOutOfRange { index: var, p: a.p() });
    }
    let start = a.row(var);
    let legs = steps - 1;
    let scales = (0..=legs)
        .map(|i| (legs - i) as f64 / legs as f64)
        .chain((1..=legs).map(|i| i as f64 / legs as f64));

    let mut frames: Vec<ProjectionMatrix> = Vec::with_capacity(2 * steps - 1);
    for scale in scales {
        if scale == 1.0 {
            frames.push(a.clone());
            continue;
        }
        let target: Vec<f64> = if scale == 0.0 {
            vec![0.0; a.d()]
        } else {
            start.iter().map(|v| v * scale).collect()
        };
        let current = frames.last().expect("path starts at a");
        let next = updater.apply(current, &ManualRequest::new(var, target))?;
        frames.push(next);
    }

    let mut params = BTreeMap::new();
    params.insert("var".into(), serde_json::json!(var));
    params.insert("steps".into(), serde_json::json!(steps));
    params.insert("method".into(), serde_json::json!(updater.method().as_str()));
    Ok(TourPath {
        frames,
        generator: "radial".into(),
        params,
    })
}
