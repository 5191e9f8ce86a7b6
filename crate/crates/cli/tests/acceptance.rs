//! Acceptance checks. Prints one PASS/FAIL line per check and exits
//! non-zero if any check fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use mantour::data::fit_lda;
use mantour::linalg::orthonormality_error;
use mantour::manual::{
    cross_column_residual, update_exact_completion, update_exact_rotation, update_exact_zeroed,
    update_zeroed_literal, CompletionMode, ZEROED_MAX_NORM,
};
use mantour::{
    slice_distances, LdaModel, ManualRequest, ProjectionMatrix, SliceSpec, UpdateMethod, Updater,
};
use mantour_cli::{load_data, DataArgs};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mantour"))
}

fn penguins_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/penguins.csv")
}

fn mantour(args: &[&str]) -> Result<(), String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn matrix(v: &Value) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone()).unwrap();
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

fn target(rng: &mut ChaCha8Rng, d: usize, max_norm: f64) -> Vec<f64> {
    loop {
        let t: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < max_norm {
            return t;
        }
    }
}

fn random_case(rng: &mut ChaCha8Rng) -> (ProjectionMatrix, usize) {
    let p = rng.random_range(3..=10);
    let d = rng.random_range(1..=3usize.min(p - 1));
    (ProjectionMatrix::random(p, d, rng).unwrap(), rng.random_range(0..p))
}

fn orthonormality_fuzz() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut committed, mut rejected, mut violations, mut worst) = (0, 0, 0, 0.0f64);
    for i in 0..10_000 {
        let method = UpdateMethod::ALL[i % 5];
        let (a, m) = random_case(&mut rng);
        let mut updater = Updater::new(method, i as u64);
        let mut current = a;
        // a short drag so the stateful methods see their own output
        for _ in 0..2 {
            let t = target(&mut rng, current.d(), 1.0);
            match updater.apply(&current, &ManualRequest::new(m, t)) {
                Ok(next) => {
                    let err = orthonormality_error(next.matrix());
                    worst = worst.max(err);
                    violations += usize::from(err >= 1e-10);
                    committed += 1;
                    current = next;
                }
                Err(_) => rejected += 1,
            }
        }
    }
    let elapsed = start.elapsed();
    Check {
        name: "orthonormality fuzz",
        pass: violations == 0 && elapsed < Duration::from_secs(30),
        detail: format!(
            "{committed} committed, {rejected} rejected, {violations} violations, max |AtA-I| {worst:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    }
}

fn exact_position() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = [0.0f64; 4];
    let mut failures = 0;
    for i in 0..1000 {
        let (a, m) = random_case(&mut rng);
        let t = target(&mut rng, a.d(), ZEROED_MAX_NORM);
        let req = ManualRequest::new(m, t.clone());
        let mut cont = Updater::new(UpdateMethod::ExactCompletionContinuous, i);
        let outs = [
            update_exact_zeroed(&a, &req),
            update_exact_completion(&a, &req, None, CompletionMode::Random(&mut rng)).map(|r| r.0),
            cont.apply(&a, &req),
            update_exact_rotation(&a, &req),
        ];
        for (k, out) in outs.into_iter().enumerate() {
            match out {
                Ok(b) => {
                    let err = b.row(m).iter().zip(&t).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                    worst[k] = worst[k].max(err);
                }
                Err(_) => failures += 1,
            }
        }
    }
    Check {
        name: "exact-position contract",
        pass: failures == 0 && worst.iter().all(|&w| w < 1e-10),
        detail: format!(
            "1000 cases; max row error zeroed {:.1e}, completion random {:.1e}, completion continuous {:.1e}, rotation {:.1e}; {failures} rejections",
            worst[0], worst[1], worst[2], worst[3]
        ),
    }
}

fn zeroed_correction() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut corrected = 0.0f64;
    let mut literal = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let p = rng.random_range(3..=10);
        let a = ProjectionMatrix::random(p, 2, &mut rng).unwrap();
        let m = rng.random_range(0..p);
        let req = ManualRequest::new(m, target(&mut rng, 2, ZEROED_MAX_NORM));
        let out = update_exact_zeroed(&a, &req).unwrap();
        corrected = corrected.max(cross_column_residual(out.matrix()).abs());
        literal.push(cross_column_residual(&update_zeroed_literal(&a, &req).unwrap()).abs());
    }
    literal.sort_by(f64::total_cmp);
    Check {
        name: "zeroed column correction",
        pass: corrected < 1e-10,
        detail: format!(
            "corrected max |a1.a2| {corrected:.1e}; literal formula |a1.a2| median {:.2e}, p95 {:.2e}, max {:.2e}",
            literal[500], literal[950], literal[999]
        ),
    }
}

fn slice_count_formula() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let run = mantour(&[
        "count-experiment", "--p", "3,4,5", "--ratios", "0.1,0.3,0.5", "--n", "100000",
        "--seed", "2024", "--out", dir.path().to_str().unwrap(),
    ]);
    let elapsed = start.elapsed();
    if let Err(e) = run {
        return Check { name: "slice count formula", pass: false, detail: e };
    }
    let rows = manifest(dir.path())["summary"]["rows"].as_array().unwrap().clone();
    let zs: Vec<f64> = rows.iter().map(|r| r["z"].as_f64().unwrap_or(f64::INFINITY)).collect();
    let worst = zs.iter().fold(0.0f64, |w, z| w.max(z.abs()));

    let anchors = tempfile::tempdir().unwrap();
    let anchor_run = mantour(&[
        "count-experiment", "--p", "2,3,4,5", "--ratios", "0.1,0.5,1", "--n", "10000",
        "--out", anchors.path().to_str().unwrap(),
    ]);
    let anchor_ok = anchor_run.is_ok()
        && manifest(anchors.path())["summary"]["rows"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|r| r["p"] == 2 || r["ratio"] == 1.0)
            .all(|r| r["empirical"] == 10000 && r["expected"] == 10000.0);
    Check {
        name: "slice count formula",
        pass: rows.len() == 9 && worst < 3.0 && anchor_ok && elapsed < Duration::from_secs(60),
        detail: format!(
            "9 cells at N=1e5, max |z| {worst:.2}; anchors h=R and p=2 exact: {anchor_ok}; {:.2}s",
            elapsed.as_secs_f64()
        ),
    }
}

fn plane_rotation(d: usize, angle: f64) -> DMatrix<f64> {
    let mut q = DMatrix::identity(d, d);
    if d == 1 {
        q[(0, 0)] = -1.0;
    } else {
        let (s, c) = angle.sin_cos();
        q[(0, 0)] = c;
        q[(0, 1)] = -s;
        q[(1, 0)] = s;
        q[(1, 1)] = c;
    }
    q
}

fn slice_invariances() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut rot, mut shift, mut plane) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (a, _) = random_case(&mut rng);
        let (p, d) = (a.p(), a.d());
        let x = DMatrix::from_fn(50, p, |_, _| rng.random_range(-3.0..3.0));
        let c: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = SliceSpec::new(c.clone(), 1.0).unwrap();
        let base = slice_distances(&x, &a, &spec).unwrap().distances;

        let q = plane_rotation(d, rng.random_range(-3.2..3.2));
        let turned = slice_distances(&x, &a.rotate_in_plane(&q).unwrap(), &spec).unwrap().distances;
        rot = base.iter().zip(&turned).fold(rot, |w, (u, v)| w.max((u - v).abs()));

        let w = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let moved = DVector::from_vec(c.clone()) + a.matrix() * w;
        let spec2 = SliceSpec::new(moved.iter().copied().collect(), 1.0).unwrap();
        let shifted = slice_distances(&x, &a, &spec2).unwrap().distances;
        shift = base.iter().zip(&shifted).fold(shift, |w, (u, v)| w.max((u - v).abs()));

        let coef = DMatrix::from_fn(20, d, |_, _| rng.random_range(-3.0..3.0));
        let center = DMatrix::from_fn(20, p, |_, j| c[j]);
        let on_plane = center + coef * a.matrix().transpose();
        let v = slice_distances(&on_plane, &a, &spec).unwrap().distances;
        plane = v.iter().fold(plane, |w, &x| w.max(x));
    }
    Check {
        name: "slice distance invariances",
        pass: rot < 1e-9 && shift < 1e-9 && plane < 1e-12,
        detail: format!(
            "1000 cases; in-plane rotation {rot:.1e}, in-plane center shift {shift:.1e}, max v for in-plane points {plane:.1e}"
        ),
    }
}

fn read_frame(path: &Path) -> DMatrix<f64> {
    let text = fs::read_to_string(path).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(2).map(|v| v.parse().unwrap()).collect())
        .collect();
    DMatrix::from_fn(rows.len(), 2, |i, j| rows[i][j])
}

fn radial_tour() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let original = penguins_path();
    let text = fs::read_to_string(&original).unwrap();
    let mut lines = text.lines();
    let mut perturbed = format!("{}\n", lines.next().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for line in lines {
        let mut f: Vec<String> = line.split(',').map(String::from).collect();
        let bd: f64 = f[1].parse().unwrap();
        f[1] = (bd * rng.random_range(0.5..1.5) + rng.random_range(-3.0..3.0)).to_string();
        perturbed.push_str(&f.join(","));
        perturbed.push('\n');
    }
    let alt = dir.path().join("perturbed.csv");
    fs::write(&alt, perturbed).unwrap();

    let mut details = Vec::new();
    let mut pass = true;
    for method in ["exact_zeroed", "exact_completion_continuous", "simple"] {
        let mut mids = Vec::new();
        for (tag, data) in [("orig", &original), ("alt", &alt)] {
            let out = dir.path().join(format!("{method}_{tag}"));
            if let Err(e) = mantour(&[
                "radial", "--data", data.to_str().unwrap(), "--standardize", "--m", "2", "--steps", "11",
                "--seed", "7", "--method", method, "--out", out.to_str().unwrap(),
            ]) {
                return Check { name: "radial tour", pass: false, detail: e };
            }
            let frames = manifest(&out)["summary"]["frames"].as_array().unwrap().clone();
            let first = matrix(&frames[0]["A"]);
            let last = matrix(&frames[frames.len() - 1]["A"]);
            let mid_a = matrix(&frames[frames.len() / 2]["A"]);
            let ends = (first - last).amax();
            let mid_row = mid_a.row(1).amax();
            pass &= frames.len() == 21 && ends < 1e-8 && mid_row == 0.0;
            if tag == "orig" {
                details.push(format!("{method}: |first-last| {ends:.1e}, midpoint row {mid_row:e}"));
            }
            mids.push(read_frame(&out.join(format!("frame_{:04}.csv", frames.len() / 2))));
        }
        let diff = (&mids[0] - &mids[1]).amax();
        pass &= diff < 1e-12;
        details.push(format!("{method}: midpoint change under bd perturbation {diff:.1e}"));
    }
    Check { name: "radial tour", pass, detail: details.join("; ") }
}

fn slice_sweep() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let steps = 5;
    if let Err(e) = mantour(&[
        "slice-sweep", "--data", penguins_path().to_str().unwrap(), "--standardize", "--axis", "2",
        "--extent", "1.5", "--steps", &steps.to_string(), "--height", "1.5",
        "--out", dir.path().to_str().unwrap(),
    ]) {
        return Check { name: "manual slice sweep", pass: false, detail: e };
    }
    let frames = manifest(dir.path())["summary"]["frames"].as_array().unwrap().clone();
    let knots: Vec<f64> = (0..5).map(|k| frames[k * steps]["center"][1].as_f64().unwrap()).collect();
    let others_fixed = frames
        .iter()
        .all(|f| [0, 2, 3].iter().all(|&j| f["center"][j].as_f64() == Some(0.0)));
    let thickness_fixed = frames.iter().all(|f| f["thickness"].as_f64() == Some(1.5));
    let counts: Vec<u64> = (0..5).map(|k| frames[k * steps]["count"].as_u64().unwrap()).collect();
    Check {
        name: "manual slice sweep",
        pass: frames.len() == 4 * steps + 1
            && knots == [0.0, 1.5, 0.0, -1.5, 0.0]
            && others_fixed
            && thickness_fixed,
        detail: format!("knots {knots:?}, thickness constant {thickness_fixed}, in-slice counts at knots {counts:?}"),
    }
}

fn lda_properties() -> Check {
    let ds = load_data(&DataArgs {
        data: penguins_path(),
        label_column: None,
        standardize: true,
    })
    .unwrap();
    let model = fit_lda(&ds).unwrap();
    let predict = |x: &[f64]| model.predict(&DMatrix::from_row_slice(1, 4, x)).unwrap()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let lo = ds.column_min();
    let hi = ds.column_max();
    let point = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..4).map(|j| rng.random_range(lo[j] - 1.0..hi[j] + 1.0)).collect()
    };

    let mut violations = 0;
    let mut crossings = 0;
    let mut worst_gap = 0.0f64;
    for _ in 0..500 {
        let (u, v) = (point(&mut rng), point(&mut rng));
        let at = |s: f64| -> Vec<f64> { u.iter().zip(&v).map(|(a, b)| a + s * (b - a)).collect() };
        let labels: Vec<usize> = (0..=200).map(|i| predict(&at(i as f64 / 200.0))).collect();
        let mut seen: Vec<usize> = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            if seen.last() != Some(&l) {
                if seen.contains(&l) {
                    violations += 1;
                }
                seen.push(l);
                if i > 0 {
                    // bisect the switch and compare the two class scores there
                    let (mut a, mut b) = ((i - 1) as f64 / 200.0, i as f64 / 200.0);
                    let left = labels[i - 1];
                    for _ in 0..100 {
                        let mid = 0.5 * (a + b);
                        if predict(&at(mid)) == left {
                            a = mid;
                        } else {
                            b = mid;
                        }
                    }
                    let gap = score_gap(&model, &at(a), left, predict(&at(b)));
                    worst_gap = worst_gap.max(gap);
                    crossings += 1;
                }
            }
        }
    }
    Check {
        name: "LDA convexity and linear boundaries",
        pass: violations == 0 && crossings > 0 && worst_gap < 1e-8,
        detail: format!(
            "500 segments, {violations} convexity violations; {crossings} boundary points, max |score_k - score_j| {worst_gap:.1e}"
        ),
    }
}

fn score_gap(model: &LdaModel, x: &[f64], k: usize, j: usize) -> f64 {
    let (wk, bk) = model.discriminant(k);
    let (wj, bj) = model.discriminant(j);
    let x = DVector::from_column_slice(x);
    ((wk - wj).dot(&x) + bk - bj).abs()
}

fn replay_determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let methods = UpdateMethod::ALL;
    let mut log = String::new();
    for i in 0..400 {
        let line = match i % 8 {
            0 => format!(r#"{{"t":"set_method","method":"{}"}}"#, methods[rng.random_range(0..5)]),
            1 => format!(r#"{{"t":"set_thickness","h":{}}}"#, rng.random_range(0.1..2.0)),
            2 => format!(
                r#"{{"t":"set_center","c":[0,{},0,{}]}}"#,
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.0..1.0)
            ),
            3 => r#"{"t":"set_view","mode":"slice"}"#.to_string(),
            _ => format!(
                r#"{{"t":"drag_axis","m":{},"target":[{},{}]}}"#,
                rng.random_range(1..=4),
                rng.random_range(-0.7..0.7),
                rng.random_range(-0.7..0.7)
            ),
        };
        log.push_str(&line);
        log.push('\n');
    }
    let log_path = dir.path().join("log.jsonl");
    fs::write(&log_path, log).unwrap();
    let mut runs = Vec::new();
    for tag in ["a", "b"] {
        let out = dir.path().join(tag);
        if let Err(e) = mantour(&[
            "replay", "--data", penguins_path().to_str().unwrap(), "--standardize", "--seed", "99",
            "--log", log_path.to_str().unwrap(), "--out", out.to_str().unwrap(),
        ]) {
            return Check { name: "deterministic replay", pass: false, detail: e };
        }
        runs.push(out);
    }
    let list = |dir: &Path| -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "manifest.json")
            .collect();
        v.sort();
        v
    };
    let (a, b) = (list(&runs[0]), list(&runs[1]));
    let identical = a.len() == b.len()
        && a.iter().zip(&b).all(|(x, y)| {
            x.file_name() == y.file_name() && fs::read(x).unwrap() == fs::read(y).unwrap()
        });
    Check {
        name: "deterministic replay",
        pass: identical && a.len() > 300,
        detail: format!("400 messages, {} output files, bit-identical: {identical}", a.len()),
    }
}

fn main() {
    let checks: [fn() -> Check; 9] = [
        orthonormality_fuzz,
        exact_position,
        zeroed_correction,
        slice_count_formula,
        slice_invariances,
        radial_tour,
        slice_sweep,
        lda_properties,
        replay_determinism,
    ];
    let mut failed = 0;
    for check in checks {
        let c = check();
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.pass);
    }
    println!("acceptance: {} of {} checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
