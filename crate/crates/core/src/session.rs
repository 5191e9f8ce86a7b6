//! Live tour state and the line-oriented JSON protocol a viewer speaks.
//!
//! One [`Session`] owns the data, any classifier grids, the current
//! projection and slice. Messages are applied strictly in order; a message
//! that fails leaves the session exactly as it was and yields a recoverable
//! error reply.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{ClassifierGrid, DataSet};
use crate::error::{Result, TourError};
use crate::linalg::{project, ProjectionMatrix};
use crate::manual::{ManualRequest, UpdateMethod, Updater};
use crate::slicing::{center_guide_coords, expected_slice_count, slice_distances, CenterGuide, SliceSpec};

/// Name of the raw data among the selectable sources.
pub const DATA_SOURCE: &str = "data";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    Projection,
    Slice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplaySettings {
    pub point_size: f64,
    pub zoom: f64,
    pub show_matrix: bool,
    pub show_projection_overlay: bool,
    pub show_outside_points: bool,
}

impl Default for DisplaySettings {
    fn default() -> Self {
        DisplaySettings {
            point_size: 3.0,
            zoom: 1.0,
            show_matrix: false,
            show_projection_overlay: false,
            show_outside_points: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub d: usize,
    pub seed: u64,
    pub method: UpdateMethod,
    pub h_min: f64,
    pub h_max: f64,
    /// Starting thickness; `None` picks the thickness expected to hold
    /// [`SessionConfig::target_fraction`] of uniform-ball data.
    pub thickness: Option<f64>,
    pub target_fraction: f64,
    /// Starting projection; random from `seed` when absent.
    pub projection: Option<ProjectionMatrix>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            d: 2,
            seed: 0,
            method: UpdateMethod::Simple,
            h_min: 0.01,
            h_max: 10.0,
            thickness: None,
            target_fraction: 0.1,
            projection: None,
        }
    }
}

/// Thickness `h` with `expected_slice_count(h, p, radius, 1) = fraction`.
pub fn suggest_thickness(p: usize, radius: f64, fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(TourError::DomainError(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    if p == 2 {
        return Ok(radius);
    }
    // the expected fraction is increasing in h on (0, R]
    let (mut lo, mut hi) = (0.0, radius);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if expected_slice_count(mid, p, radius, 1.0)? < fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Inbound protocol messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum Message {
    /// `m` is 1-based; when absent the axis nearest `target` is used.
    DragAxis {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m: Option<usize>,
        target: Vec<f64>,
    },
    SetMethod {
        method: UpdateMethod,
    },
    SetThickness {
        h: f64,
    },
    SetCenter {
        c: Vec<f64>,
    },
    SetView {
        mode: ViewMode,
    },
    SetDisplay {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        point_size: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        zoom: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        show_matrix: Option<bool>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        show_projection_overlay: Option<bool>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        show_outside_points: Option<bool>,
    },
    SelectSource {
        name: String,
    },
    ExportProjection,
    ImportProjection {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
    },
    /// Re-send the current frame.
    GetFrame,
}

const MESSAGE_TAGS: [&str; 10] = [
    "drag_axis",
    "set_method",
    "set_thickness",
    "set_center",
    "set_view",
    "set_display",
    "select_source",
    "export_projection",
    "import_projection",
    "get_frame",
];

impl Message {
    /// Parses one protocol line. Unknown fields are ignored; an unknown
    /// `t` is reported as `unknown_message`.
    pub fn parse(line: &str) -> std::result::Result<Message, Reply> {
        let value: Value = serde_json::from_str(line)
            .map_err(|e| Reply::error_code("bad_json", e.to_string(), true))?;
        let tag = value.get("t").and_then(Value::as_str).unwrap_or_default();
        if !MESSAGE_TAGS.contains(&tag) {
            return Err(Reply::error_code(
                "unknown_message",
                format!("unknown message type '{tag}'"),
                true,
            ));
        }
        serde_json::from_value(value)
            .map_err(|e| Reply::error_code("invalid_message", e.to_string(), true))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppliedParams {
    pub method: UpdateMethod,
    /// 1-based variable moved by the last drag.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    pub thickness: f64,
    pub center: Vec<f64>,
    pub view: ViewMode,
    pub source: String,
    pub display: DisplaySettings,
}

/// One renderable state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TourFrame {
    pub coords: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
    pub axes: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    pub guide: CenterGuide,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<usize>>,
    pub applied_params: AppliedParams,
}

/// Outbound protocol messages.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum Reply {
    Frame(TourFrame),
    Ack {
        #[serde(skip_serializing_if = "Option::is_none")]
        applied: Option<Value>,
    },
    Projection {
        text: String,
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
    },
    Error {
        code: String,
        message: String,
        recoverable: bool,
    },
}

impl Reply {
    fn error_code(code: &str, message: String, recoverable: bool) -> Reply {
        Reply::Error {
            code: code.to_owned(),
            message,
            recoverable,
        }
    }

    fn from_error(e: &TourError) -> Reply {
        Reply::error_code(e.code(), e.to_string(), true)
    }

    pub fn is_error(&self) -> bool {
        matches!(self, Reply::Error { .. })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("replies contain only finite numbers")
    }
}

/// Variable whose axis endpoint (row of `a`) is nearest `cursor`, after
/// clamping the cursor to the unit disk. Ties go to the lowest index.
pub fn select_axis(a: &ProjectionMatrix, cursor: &[f64]) -> Result<usize> {
    if cursor.len() != a.d() {
        return Err(TourError::DimensionMismatch {
            what: "cursor length",
            expected: a.d(),
            actual: cursor.len(),
        });
    }
    let norm = cursor.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = if norm > 1.0 { 1.0 / norm } else { 1.0 };
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (j, row) in a.matrix().row_iter().enumerate() {
        let dist: f64 = row
            .iter()
            .zip(cursor)
            .map(|(r, c)| (r - c * scale).powi(2))
            .sum();
        if dist < best_dist {
            best = j;
            best_dist = dist;
        }
    }
    Ok(best)
}

/// One row per line, entries in 17-significant-digit scientific notation.
pub fn export_projection_text(a: &ProjectionMatrix) -> String {
    let mut out = String::new();
    for row in a.matrix().row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

/// Inverse of [`export_projection_text`]; also accepts commas. The result
/// is audited for orthonormality.
pub fn parse_projection_text(text: &str) -> Result<ProjectionMatrix> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .enumerate()
            .map(|(j, t)| {
                t.parse::<f64>().map_err(|_| TourError::ParseError {
                    row: i + 1,
                    column: j + 1,
                    message: format!("'{t}' is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    ProjectionMatrix::from_rows(&rows)
}

#[derive(Debug, Clone)]
pub struct Session {
    dataset: DataSet,
    grids: BTreeMap<String, ClassifierGrid>,
    source: String,
    projection: ProjectionMatrix,
    slice: SliceSpec,
    view: ViewMode,
    display: DisplaySettings,
    updater: Updater,
    h_range: (f64, f64),
    data_min: Vec<f64>,
    data_max: Vec<f64>,
    last_var: Option<usize>,
}

impl Session {
    pub fn new(dataset: DataSet, config: SessionConfig) -> Result<Self> {
        let p = dataset.p();
        let mut updater = Updater::new(config.method, config.seed);
        let projection = match config.projection {
            Some(a) if a.p() != p => {
                return Err(TourError::DimensionMismatch {
                    what: "initial projection rows",
                    expected: p,
                    actual: a.p(),
                })
            }
            Some(a) => a,
            None => ProjectionMatrix::random(p, config.d, updater.rng_mut())?,
        };
        if !(config.h_min > 0.0 && config.h_min <= config.h_max) {
            return Err(TourError::InvalidSlice(format!(
                "bad thickness range [{}, {}]",
                config.h_min, config.h_max
            )));
        }
        let data_min = dataset.column_min();
        let data_max = dataset.column_max();
        let thickness = match config.thickness {
            Some(h) => h,
            None => {
                let mean: Vec<f64> = dataset.values.row_mean().iter().copied().collect();
                let radius = dataset
                    .values
                    .row_iter()
                    .map(|r| {
                        r.iter()
                            .zip(&mean)
                            .map(|(x, m)| (x - m).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .fold(0.0, f64::max);
                suggest_thickness(p, radius.max(f64::MIN_POSITIVE), config.target_fraction)?
            }
        };
        let thickness = thickness.clamp(config.h_min, config.h_max);
        let slice = SliceSpec::centered(p, thickness)?;
        Ok(Session {
            dataset,
            grids: BTreeMap::new(),
            source: DATA_SOURCE.into(),
            projection,
            slice,
            view: ViewMode::Projection,
            display: DisplaySettings::default(),
            updater,
            h_range: (config.h_min, config.h_max),
            data_min,
            data_max,
            last_var: None,
        })
    }

    pub fn add_grid(&mut self, name: impl Into<String>, grid: ClassifierGrid) -> Result<()> {
        let name = name.into();
        if name == DATA_SOURCE {
            return Err(TourError::DomainError(format!("'{DATA_SOURCE}' is reserved")));
        }
        if grid.points.ncols() != self.dataset.p() {
            return Err(TourError::DimensionMismatch {
                what: "grid dimension",
                expected: self.dataset.p(),
                actual: grid.points.ncols(),
            });
        }
        self.grids.insert(name, grid);
        Ok(())
    }

    pub fn projection(&self) -> &ProjectionMatrix {
        &self.projection
    }

    pub fn slice(&self) -> &SliceSpec {
        &self.slice
    }

    pub fn view(&self) -> ViewMode {
        self.view
    }

    pub fn method(&self) -> UpdateMethod {
        self.updater.method()
    }

    pub fn display(&self) -> &DisplaySettings {
        &self.display
    }

    pub fn dataset(&self) -> &DataSet {
        &self.dataset
    }

    /// Parses and applies one protocol line, returning the JSON reply.
    pub fn handle_line(&mut self, line: &str) -> Reply {
        match Message::parse(line) {
            Ok(msg) => self.handle_message(&msg),
            Err(reply) => reply,
        }
    }

    pub fn handle_message(&mut self, msg: &Message) -> Reply {
        match self.apply(msg) {
            Ok(reply) => reply,
            Err(e) => Reply::from_error(&e),
        }
    }

    fn apply(&mut self, msg: &Message) -> Result<Reply> {
        match msg {
            Message::DragAxis { m, target } => {
                let var = match m {
                    Some(0) => {
                        return Err(TourError::VariableOutOfRange {
                            index: 0,
                            p: self.dataset.p(),
                        })
                    }
                    Some(m) => m - 1,
                    None => select_axis(&self.projection, target)?,
                };
                let req = ManualRequest::new(var, target.clone());
                let next = self.updater.apply(&self.projection, &req)?;
                self.projection = next;
                self.last_var = Some(var);
                self.frame().map(Reply::Frame)
            }
            Message::SetMethod { method } => {
                self.updater.set_method(*method);
                Ok(Reply::Ack {
                    applied: Some(json!({ "method": method })),
                })
            }
            Message::SetThickness { h } => {
                if !h.is_finite() {
                    return Err(TourError::InvalidSlice(format!("thickness {h}")));
                }
                let applied = h.clamp(self.h_range.0, self.h_range.1);
                self.slice = self.slice.with_thickness(applied)?;
                Ok(Reply::Ack {
                    applied: Some(json!({ "h": applied })),
                })
            }
            Message::SetCenter { c } => {
                if c.len() != self.dataset.p() {
                    return Err(TourError::DimensionMismatch {
                        what: "center length",
                        expected: self.dataset.p(),
                        actual: c.len(),
                    });
                }
                let next = SliceSpec::new(c.clone(), self.slice.thickness())?;
                let frame = self.frame_for(&self.projection, &next)?;
                self.slice = next;
                Ok(Reply::Frame(frame))
            }
            Message::SetView { mode } => {
                self.view = *mode;
                self.frame().map(Reply::Frame)
            }
            Message::SetDisplay {
                point_size,
                zoom,
                show_matrix,
                show_projection_overlay,
                show_outside_points,
            } => {
                let mut next = self.display.clone();
                if let Some(v) = point_size {
                    if !(*v > 0.0) || !v.is_finite() {
                        return Err(TourError::DomainError("point_size must be > 0".into()));
                    }
                    next.point_size = *v;
                }
                if let Some(v) = zoom {
                    if !(*v > 0.0) || !v.is_finite() {
                        return Err(TourError::DomainError("zoom must be > 0".into()));
                    }
                    next.zoom = *v;
                }
                if let Some(v) = show_matrix {
                    next.show_matrix = *v;
                }
                if let Some(v) = show_projection_overlay {
                    next.show_projection_overlay = *v;
                }
                if let Some(v) = show_outside_points {
                    next.show_outside_points = *v;
                }
                self.display = next;
                Ok(Reply::Ack {
                    applied: Some(serde_json::to_value(&self.display).expect("plain struct")),
                })
            }
            Message::SelectSource { name } => {
                if name != DATA_SOURCE && !self.grids.contains_key(name) {
                    return Err(TourError::UnknownSource(name.clone()));
                }
                self.source = name.clone();
                self.frame().map(Reply::Frame)
            }
            Message::ExportProjection => Ok(Reply::Projection {
                text: export_projection_text(&self.projection),
                a: self.projection.rows(),
            }),
            Message::ImportProjection { a } => {
                let next = ProjectionMatrix::from_rows(a)?;
                if next.p() != self.dataset.p() {
                    return Err(TourError::DimensionMismatch {
                        what: "imported projection rows",
                        expected: self.dataset.p(),
                        actual: next.p(),
                    });
                }
                self.projection = next;
                self.updater.reset_basis();
                self.frame().map(Reply::Frame)
            }
            Message::GetFrame => self.frame().map(Reply::Frame),
        }
    }

    fn source_points(&self) -> (&DMatrix<f64>, Option<Vec<usize>>) {
        match self.grids.get(&self.source) {
            Some(grid) => (&grid.points, Some(grid.group_index())),
            None => (&self.dataset.values, self.dataset.group_index.clone()),
        }
    }

    pub fn frame(&self) -> Result<TourFrame> {
        self.frame_for(&self.projection, &self.slice)
    }

    fn frame_for(&self, a: &ProjectionMatrix, slice: &SliceSpec) -> Result<TourFrame> {
        let (points, groups) = self.source_points();
        let projected = project(points, a)?;
        let coords = projected
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        let mask = match self.view {
            ViewMode::Projection => vec![true; points.nrows()],
            ViewMode::Slice => slice_distances(points, a, slice)?.mask,
        };
        let axes = a.rows();
        Ok(TourFrame {
            coords,
            mask,
            matrix: self.display.show_matrix.then(|| axes.clone()),
            axes,
            guide: center_guide_coords(slice, &self.data_min, &self.data_max)?,
            groups,
            applied_params: AppliedParams {
                method: self.updater.method(),
                m: self.last_var.map(|v| v + 1),
                thickness: slice.thickness(),
                center: slice.center().to_vec(),
                view: self.view,
                source: self.source.clone(),
                display: self.display.clone(),
            },
        })
    }
}
