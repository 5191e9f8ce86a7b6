//! Batch commands behind the `mantour` binary.
//!
//! Every command that writes files also writes `manifest.json` next to
//! them. The manifest holds the full [`RunConfig`]; `mantour rerun` reads it
//! back and repeats the run.

use std::fs::{self, File};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mantour::data::{
    ingest_csv, ingest_predictions, standardize, write_predictions, CsvSchema, GridSpec,
    PredictionMeta,
};
use mantour::manual::radial_tour_path_with;
use mantour::session::parse_projection_text;
use mantour::slicing::{expected_slice_count, manual_slice_path};
use mantour::{
    project, slice_distances, ClassifierGrid, DataSet, ProjectionMatrix, Reply, Result, Session,
    SessionConfig, SliceSpec, TourError, UpdateMethod, Updater,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "mantour", version, about = "Manual and slice tours of multivariate data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Shrink one variable's axis to zero and back, one CSV per frame.
    Radial(RadialArgs),
    /// Move the slice center along one variable: out, back, other side, back.
    SliceSweep(SweepArgs),
    /// Compare in-slice counts of uniform ball samples with the expected count.
    CountExperiment(CountArgs),
    /// Write a classifier prediction grid.
    Grid(GridArgs),
    /// Feed a file of protocol messages to a session and save every frame.
    Replay(ReplayArgs),
    /// Run a session over stdin/stdout, one JSON message per line.
    Serve(SessionArgs),
    /// Repeat the run recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// CSV with a header row. A trailing text column is read as class labels.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub label_column: Option<String>,
    /// Scale every variable to mean 0 and standard deviation 1.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ProjectionArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Projection dimension when the start is drawn at random.
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Starting projection as exported by a session (one row per line).
    #[arg(long)]
    pub projection: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RadialArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub start: ProjectionArgs,
    /// Variable to rotate out, 1-based.
    #[arg(long)]
    pub m: usize,
    /// Frames per leg; the path has 2*steps - 1 frames.
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[arg(long, default_value_t = UpdateMethod::ExactZeroed)]
    pub method: UpdateMethod,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub start: ProjectionArgs,
    /// Variable whose center coordinate moves, 1-based.
    #[arg(long)]
    pub axis: usize,
    #[arg(long)]
    pub extent: f64,
    /// Frames per leg; the sweep has 4*steps + 1 frames.
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Slice thickness.
    #[arg(long)]
    pub height: f64,
    /// Starting center, comma separated. Defaults to the origin for
    /// standardized data and to the column means otherwise.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub center: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CountArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [3, 4, 5])]
    pub p: Vec<usize>,
    /// Thickness over ball radius.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.3, 0.5])]
    pub ratios: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridModel {
    Lda,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GridArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 20)]
    pub per_axis: usize,
    #[arg(long, default_value_t = mantour::data::DEFAULT_GRID_MARGIN)]
    pub margin: f64,
    #[arg(long, value_enum, default_value_t = GridModel::Lda)]
    pub model: GridModel,
    /// Re-emit an external prediction file in the canonical format instead
    /// of fitting a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SessionArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub start: ProjectionArgs,
    #[arg(long, default_value_t = UpdateMethod::Simple)]
    pub method: UpdateMethod,
    /// Starting slice thickness; chosen from the data radius when absent.
    #[arg(long)]
    pub height: Option<f64>,
    /// External prediction file, offered as a source named after the file.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Add an LDA grid source named "lda" with this many points per axis.
    #[arg(long)]
    pub lda_grid: Option<usize>,
    #[arg(long, default_value_t = mantour::data::DEFAULT_GRID_MARGIN)]
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    /// One protocol message per line.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Output location; defaults to `rerun/` beside the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What a manifest records about a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: String,
    pub seed: Option<u64>,
    pub run: Command,
}

impl Command {
    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Radial(a) => Some(a.start.seed),
            Command::SliceSweep(a) => Some(a.start.seed),
            Command::CountExperiment(a) => Some(a.seed),
            Command::Grid(_) => None,
            Command::Replay(a) => Some(a.session.start.seed),
            Command::Serve(a) => Some(a.start.seed),
            Command::Rerun(_) => None,
        }
    }

    /// Input paths are recorded absolute so a manifest can be rerun from
    /// any working directory.
    fn absolutize_inputs(&mut self) -> Result<()> {
        fn abs(path: &mut PathBuf) -> Result<()> {
            *path = std::path::absolute(&*path)?;
            Ok(())
        }
        fn session(a: &mut SessionArgs) -> Result<()> {
            abs(&mut a.data.data)?;
            a.start.projection.as_mut().map(abs).transpose()?;
            a.predictions.as_mut().map(abs).transpose()?;
            Ok(())
        }
        match self {
            Command::Radial(a) => {
                abs(&mut a.data.data)?;
                a.start.projection.as_mut().map(abs).transpose()?;
            }
            Command::SliceSweep(a) => {
                abs(&mut a.data.data)?;
                a.start.projection.as_mut().map(abs).transpose()?;
            }
            Command::Grid(a) => {
                abs(&mut a.data.data)?;
                a.predictions.as_mut().map(abs).transpose()?;
            }
            Command::Replay(a) => {
                session(&mut a.session)?;
                abs(&mut a.log)?;
            }
            Command::Serve(a) => session(a)?,
            Command::CountExperiment(_) | Command::Rerun(_) => {}
        }
        Ok(())
    }

    fn set_out(&mut self, out: PathBuf) -> Result<()> {
        match self {
            Command::Radial(a) => a.out = out,
            Command::SliceSweep(a) => a.out = out,
            Command::CountExperiment(a) => a.out = Some(out),
            Command::Grid(a) => a.out = out,
            Command::Replay(a) => a.out = out,
            Command::Serve(_) | Command::Rerun(_) => {
                return Err(TourError::DomainError("manifest does not describe a batch run".into()))
            }
        }
        Ok(())
    }
}

/// 1 for file-system failures, 2 for everything the user can fix.
pub fn exit_code(e: &TourError) -> u8 {
    match e {
        TourError::Io(_) => 1,
        _ => 2,
    }
}

pub fn run(mut command: Command) -> Result<()> {
    command.absolutize_inputs()?;
    match &command {
        Command::Radial(a) => cmd_radial(a),
        Command::SliceSweep(a) => cmd_slice_sweep(a),
        Command::CountExperiment(a) => cmd_count_experiment(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Rerun(a) => cmd_rerun(a),
    }
}

pub fn load_data(args: &DataArgs) -> Result<DataSet> {
    let schema = CsvSchema {
        label_column: args.label_column.clone(),
        ..CsvSchema::default()
    };
    let ds = ingest_csv(&args.data, &schema)?;
    if args.standardize {
        standardize(&ds)
    } else {
        Ok(ds)
    }
}

fn start_projection(p: usize, args: &ProjectionArgs) -> Result<ProjectionMatrix> {
    match &args.projection {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| TourError::Io(format!("{}: {e}", path.display())))?;
            let a = parse_projection_text(&text)?;
            if a.p() != p {
                return Err(TourError::DimensionMismatch {
                    what: "projection rows",
                    expected: p,
                    actual: a.p(),
                });
            }
            Ok(a)
        }
        None => ProjectionMatrix::random(p, args.d, &mut ChaCha8Rng::seed_from_u64(args.seed)),
    }
}

fn zero_based(index: usize, p: usize) -> Result<usize> {
    if index == 0 || index > p {
        return Err(TourError::VariableOutOfRange { index, p });
    }
    Ok(index - 1)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| TourError::Io(format!("{}: {e}", dir.display())))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| TourError::Io(format!("{}: {e}", path.display())))
}

/// Projected coordinates `P1..Pd`, then the slice mask and group index when
/// given.
fn write_frame_csv(
    path: &Path,
    coords: &DMatrix<f64>,
    mask: Option<&[bool]>,
    groups: Option<&[usize]>,
) -> Result<()> {
    let mut out = create_file(path)?;
    let mut header: Vec<String> = (1..=coords.ncols()).map(|k| format!("P{k}")).collect();
    if mask.is_some() {
        header.push("in_slice".into());
    }
    if groups.is_some() {
        header.push("group".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for (i, row) in coords.row_iter().enumerate() {
        let mut fields: Vec<String> = row.iter().map(f64::to_string).collect();
        if let Some(mask) = mask {
            fields.push(u8::from(mask[i]).to_string());
        }
        if let Some(groups) = groups {
            fields.push(groups[i].to_string());
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut out = create_file(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| TourError::Io(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn write_manifest(dir: &Path, run: Command, summary: Value) -> Result<()> {
    let config = RunConfig {
        version: env!("CARGO_PKG_VERSION").into(),
        seed: run.seed(),
        run,
    };
    let mut manifest = serde_json::to_value(&config).expect("config is plain data");
    manifest["summary"] = summary;
    write_json(&dir.join(MANIFEST), &manifest)
}

fn cmd_radial(args: &RadialArgs) -> Result<()> {
    let ds = load_data(&args.data)?;
    let a = start_projection(ds.p(), &args.start)?;
    let var = zero_based(args.m, ds.p())?;
    let mut updater = Updater::new(args.method, args.start.seed);
    let path = radial_tour_path_with(&a, var, args.steps, &mut updater)?;

    create_dir(&args.out)?;
    let mut frames = Vec::with_capacity(path.frames.len());
    for (i, frame) in path.frames.iter().enumerate() {
        let name = format!("frame_{i:04}.csv");
        let coords = project(&ds.values, frame)?;
        write_frame_csv(&args.out.join(&name), &coords, None, ds.group_index.as_deref())?;
        frames.push(json!({ "file": name, "A": frame.rows() }));
    }
    println!("wrote {} frames to {}", frames.len(), args.out.display());
    write_manifest(
        &args.out,
        Command::Radial(args.clone()),
        json!({ "generator": path.generator, "params": path.params, "frames": frames }),
    )
}

fn cmd_slice_sweep(args: &SweepArgs) -> Result<()> {
    let ds = load_data(&args.data)?;
    let p = ds.p();
    let a = start_projection(p, &args.start)?;
    let axis = zero_based(args.axis, p)?;
    let center = match &args.center {
        Some(c) => c.clone(),
        None if args.data.standardize => vec![0.0; p],
        None => ds.values.row_mean().iter().copied().collect(),
    };
    if center.len() != p {
        return Err(TourError::DimensionMismatch {
            what: "center length",
            expected: p,
            actual: center.len(),
        });
    }
    let specs = manual_slice_path(&SliceSpec::new(center, args.height)?, axis, args.extent, args.steps)?;
    let coords = project(&ds.values, &a)?;

    create_dir(&args.out)?;
    let mut frames = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let res = slice_distances(&ds.values, &a, spec)?;
        let name = format!("frame_{i:04}.csv");
        write_frame_csv(&args.out.join(&name), &coords, Some(&res.mask), ds.group_index.as_deref())?;
        println!("{name}\tc[{}]={}\tin_slice={}", args.axis, spec.center()[axis], res.count());
        frames.push(json!({
            "file": name,
            "center": spec.center(),
            "thickness": spec.thickness(),
            "count": res.count(),
        }));
    }
    write_manifest(
        &args.out,
        Command::SliceSweep(args.clone()),
        json!({ "A": a.rows(), "n": ds.n(), "frames": frames }),
    )
}

/// One cell of the count experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountRow {
    pub p: usize,
    pub ratio: f64,
    pub n: usize,
    pub expected: f64,
    pub empirical: usize,
    /// Binomial standard deviation of the count.
    pub sd: f64,
    /// `None` when `sd` is zero.
    pub z: Option<f64>,
}

/// `n` points uniform in the unit `p`-ball: Gaussian directions with radii
/// `U^(1/p)`.
pub fn uniform_ball(rng: &mut impl Rng, n: usize, p: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, p);
    let mut g = vec![0.0; p];
    for i in 0..n {
        for v in g.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = rng.random::<f64>().powf(1.0 / p as f64);
        for j in 0..p {
            x[(i, j)] = g[j] / norm * r;
        }
    }
    x
}

/// In-slice counts of 2-d slices through the center of the unit ball
/// against the expected count, one row per `(p, ratio)`.
pub fn count_experiment(ps: &[usize], ratios: &[f64], n: usize, seed: u64) -> Result<Vec<CountRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &p in ps {
        let x = uniform_ball(&mut rng, n, p);
        // for p = 2 the plane is the whole space and nothing is outside it
        let a = if p > 2 {
            Some(ProjectionMatrix::random(p, 2, &mut rng)?)
        } else {
            None
        };
        for &ratio in ratios {
            let expected = expected_slice_count(ratio, p, 1.0, n as f64)?;
            let empirical = match &a {
                Some(a) => slice_distances(&x, a, &SliceSpec::centered(p, ratio)?)?.count(),
                None => n,
            };
            let q = expected / n as f64;
            let sd = (n as f64 * q * (1.0 - q)).max(0.0).sqrt();
            let diff = empirical as f64 - expected;
            let z = if sd > 0.0 {
                Some(diff / sd)
            } else if diff == 0.0 {
                Some(0.0)
            } else {
                None
            };
            rows.push(CountRow { p, ratio, n, expected, empirical, sd, z });
        }
    }
    Ok(rows)
}

fn cmd_count_experiment(args: &CountArgs) -> Result<()> {
    let rows = count_experiment(&args.p, &args.ratios, args.n, args.seed)?;
    let mut table = String::from("p,ratio,n,expected,empirical,sd,z\n");
    for r in &rows {
        let z = r.z.map_or_else(|| "NA".into(), |z| format!("{z:.4}"));
        table.push_str(&format!(
            "{},{},{},{:.3},{},{:.3},{}\n",
            r.p, r.ratio, r.n, r.expected, r.empirical, r.sd, z
        ));
    }
    print!("{table}");
    if let Some(out) = &args.out {
        create_dir(out)?;
        fs::write(out.join("report.csv"), &table)
            .map_err(|e| TourError::Io(format!("{}: {e}", out.display())))?;
        write_manifest(out, Command::CountExperiment(args.clone()), json!({ "rows": rows }))?;
    }
    Ok(())
}

fn cmd_grid(args: &GridArgs) -> Result<()> {
    let ds = load_data(&args.data)?;
    let grid = match &args.predictions {
        Some(path) => ingest_predictions(path, &ds)?,
        None => match args.model {
            GridModel::Lda => ClassifierGrid::from_lda(
                &ds,
                &GridSpec {
                    per_axis: args.per_axis,
                    margin: args.margin,
                    ..GridSpec::default()
                },
            )?,
        },
    };
    create_dir(&args.out)?;
    let mut out = create_file(&args.out.join("predictions.csv"))?;
    write_predictions(&mut out, &grid, &PredictionMeta::for_dataset(&ds, grid.classes.clone()))?;
    out.flush()?;

    let mut counts = vec![0usize; grid.classes.len()];
    for &k in &grid.predicted {
        counts[k] += 1;
    }
    let per_class: serde_json::Map<String, Value> = grid
        .classes
        .iter()
        .zip(&counts)
        .map(|(c, n)| (c.clone(), json!(n)))
        .collect();
    println!("wrote {} predictions to {}", grid.len(), args.out.display());
    write_manifest(
        &args.out,
        Command::Grid(args.clone()),
        json!({ "points": grid.len(), "classes": per_class, "source": grid.source, "warnings": grid.warnings }),
    )
}

pub fn build_session(args: &SessionArgs) -> Result<Session> {
    let ds = load_data(&args.data)?;
    let projection = match &args.start.projection {
        Some(_) => Some(start_projection(ds.p(), &args.start)?),
        None => None,
    };
    let config = SessionConfig {
        d: args.start.d,
        seed: args.start.seed,
        method: args.method,
        thickness: args.height,
        projection,
        ..SessionConfig::default()
    };
    let mut session = Session::new(ds.clone(), config)?;
    if let Some(per_axis) = args.lda_grid {
        let spec = GridSpec {
            per_axis,
            margin: args.margin,
            ..GridSpec::default()
        };
        session.add_grid("lda", ClassifierGrid::from_lda(&ds, &spec)?)?;
    }
    if let Some(path) = &args.predictions {
        let name = path
            .file_stem()
            .map_or("external".into(), |s| s.to_string_lossy().into_owned());
        session.add_grid(name, ingest_predictions(path, &ds)?)?;
    }
    Ok(session)
}

fn cmd_replay(args: &ReplayArgs) -> Result<()> {
    let mut session = build_session(&args.session)?;
    let log = fs::read_to_string(&args.log)
        .map_err(|e| TourError::Io(format!("{}: {e}", args.log.display())))?;
    create_dir(&args.out)?;
    let mut replies = create_file(&args.out.join("replies.jsonl"))?;
    let mut frame_no = 0;
    let mut errors = 0;
    let save_frame = |reply: &Reply, frame_no: &mut usize| -> Result<()> {
        if let Reply::Frame(frame) = reply {
            write_json(&args.out.join(format!("frame_{frame_no:04}.json")), frame)?;
            *frame_no += 1;
        }
        Ok(())
    };
    save_frame(&Reply::Frame(session.frame()?), &mut frame_no)?;
    let mut messages = 0;
    for line in log.lines().filter(|l| !l.trim().is_empty()) {
        let reply = session.handle_line(line);
        writeln!(replies, "{}", reply.to_json())?;
        errors += usize::from(reply.is_error());
        save_frame(&reply, &mut frame_no)?;
        messages += 1;
    }
    replies.flush()?;
    println!("{messages} messages, {frame_no} frames, {errors} errors");
    write_manifest(
        &args.out,
        Command::Replay(args.clone()),
        json!({ "messages": messages, "frames": frame_no, "errors": errors, "final_A": session.projection().rows() }),
    )
}

/// Serves one session: the initial frame first, then one reply per
/// non-blank input line.
pub fn serve(session: &mut Session, input: impl BufRead, mut output: impl Write) -> Result<()> {
    writeln!(output, "{}", Reply::Frame(session.frame()?).to_json())?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(output, "{}", session.handle_line(&line).to_json())?;
        output.flush()?;
    }
    Ok(())
}

fn cmd_serve(args: &SessionArgs) -> Result<()> {
    let mut session = build_session(args)?;
    serve(&mut session, io::stdin().lock(), io::stdout().lock())
}

fn cmd_rerun(args: &RerunArgs) -> Result<()> {
    let text = fs::read_to_string(&args.manifest)
        .map_err(|e| TourError::Io(format!("{}: {e}", args.manifest.display())))?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| TourError::DomainError(format!("bad manifest: {e}")))?;
    let out = match &args.out {
        Some(out) => out.clone(),
        None => args
            .manifest
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("rerun"),
    };
    let mut command = config.run;
    command.set_out(out)?;
    run(command)
}
