//! VTK snapshots, per-step iteration tables and solver comparison tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::driver::{IterationRecord, RunReport};
use crate::mesh::GridMesh;
use crate::schemes::{StateTriple, Strategy};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed VTK file, line {line}: {msg}")]
    Vtk { line: usize, msg: String },
}

pub const SCALAR_NAMES: [&str; 3] = ["pressure_head", "water_content", "concentration"];

fn write_file(path: &Path, text: &str) -> Result<(), OutputError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| OutputError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `dir/snapshot_00042.vtk`
pub fn snapshot_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("snapshot_{step:05}.vtk"))
}

/// Legacy ASCII VTK structured grid with the three fields as point scalars.
pub fn vtk_snapshot(mesh: &GridMesh, state: &StateTriple) -> String {
    let n = mesh.num_nodes();
    assert_eq!(state.len(), n, "state does not live on this mesh");
    let mut out = String::with_capacity(64 * n);
    out.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(out, "porflow t={}", state.time);
    out.push_str("ASCII\nDATASET STRUCTURED_GRID\n");
    let _ = writeln!(out, "DIMENSIONS {} {} 1", mesh.nx + 1, mesh.ny + 1);
    let _ = writeln!(out, "POINTS {n} double");
    for p in &mesh.nodes {
        let _ = writeln!(out, "{} {} 0", p[0], p[1]);
    }
    let _ = writeln!(out, "POINT_DATA {n}");
    for (name, values) in SCALAR_NAMES.iter().zip(state.fields()) {
        let _ = writeln!(out, "SCALARS {name} double 1");
        out.push_str("LOOKUP_TABLE default\n");
        for v in values {
            let _ = writeln!(out, "{v}");
        }
    }
    out
}

pub fn write_vtk_snapshot(mesh: &GridMesh, state: &StateTriple, path: &Path) -> Result<(), OutputError> {
    write_file(path, &vtk_snapshot(mesh, state))
}

/// What a structurally valid snapshot declares.
#[derive(Debug, Clone, PartialEq)]
pub struct VtkSummary {
    pub dimensions: [usize; 3],
    pub points: Vec<[f64; 3]>,
    pub scalars: Vec<(String, Vec<f64>)>,
}

impl VtkSummary {
    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        self.scalars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

/// Checks section order and that declared counts match the data, and
/// returns the parsed content.
pub fn validate_vtk(text: &str) -> Result<VtkSummary, OutputError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| {
        lines
            .by_ref()
            .find(|(_, l)| !l.is_empty())
            .ok_or_else(|| OutputError::Vtk {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            })
    };
    let bad = |line: usize, msg: String| OutputError::Vtk { line, msg };

    let (ln, l) = next("header")?;
    if !l.starts_with("# vtk DataFile Version") {
        return Err(bad(ln, format!("bad header `{l}`")));
    }
    next("title")?;
    let (ln, l) = next("format")?;
    if l != "ASCII" {
        return Err(bad(ln, format!("expected ASCII, got `{l}`")));
    }
    let (ln, l) = next("dataset")?;
    if l != "DATASET STRUCTURED_GRID" {
        return Err(bad(ln, format!("expected DATASET STRUCTURED_GRID, got `{l}`")));
    }

    let (ln, l) = next("DIMENSIONS")?;
    let dims: Vec<usize> = match l.strip_prefix("DIMENSIONS") {
        Some(rest) => rest
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(ln, format!("bad dimension `{t}`"))))
            .collect::<Result<_, _>>()?,
        None => return Err(bad(ln, format!("expected DIMENSIONS, got `{l}`"))),
    };
    if dims.len() != 3 || dims.contains(&0) {
        return Err(bad(ln, "DIMENSIONS needs three positive integers".into()));
    }
    let expected = dims[0] * dims[1] * dims[2];

    let (ln, l) = next("POINTS")?;
    let parts: Vec<&str> = l.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "POINTS" {
        return Err(bad(ln, format!("expected `POINTS <n> <type>`, got `{l}`")));
    }
    let np: usize = parts[1].parse().map_err(|_| bad(ln, "bad point count".into()))?;
    if np != expected {
        return Err(bad(ln, format!("{np} points for dimensions {dims:?}")));
    }
    let mut coords = Vec::with_capacity(3 * np);
    while coords.len() < 3 * np {
        let (ln, l) = next("point coordinates")?;
        for t in l.split_whitespace() {
            coords.push(t.parse::<f64>().map_err(|_| bad(ln, format!("bad coordinate `{t}`")))?);
        }
    }
    if coords.len() != 3 * np {
        return Err(bad(0, format!("{} coordinates for {np} points", coords.len())));
    }
    let points = coords.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();

    let (ln, l) = next("POINT_DATA")?;
    match l.strip_prefix("POINT_DATA").map(|r| r.trim().parse::<usize>()) {
        Some(Ok(k)) if k == np => {}
        _ => return Err(bad(ln, format!("expected `POINT_DATA {np}`, got `{l}`"))),
    }

    let mut scalars = Vec::new();
    while let Some((ln, l)) = lines.by_ref().find(|(_, l)| !l.is_empty()) {
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() < 3 || parts[0] != "SCALARS" {
            return Err(bad(ln, format!("expected SCALARS, got `{l}`")));
        }
        if parts.len() == 4 && parts[3] != "1" {
            return Err(bad(ln, "only one component per scalar is supported".into()));
        }
        let name = parts[1].to_string();
        let (ln2, l2) = lines
            .by_ref()
            .find(|(_, l)| !l.is_empty())
            .ok_or_else(|| bad(ln, "missing LOOKUP_TABLE".into()))?;
        if !l2.starts_with("LOOKUP_TABLE") {
            return Err(bad(ln2, format!("expected LOOKUP_TABLE, got `{l2}`")));
        }
        let mut values = Vec::with_capacity(np);
        while values.len() < np {
            let (ln, l) = lines
                .by_ref()
                .find(|(_, l)| !l.is_empty())
                .ok_or_else(|| bad(ln, format!("scalar `{name}` has fewer than {np} values")))?;
            for t in l.split_whitespace() {
                values.push(t.parse::<f64>().map_err(|_| bad(ln, format!("bad value `{t}` in `{name}`")))?);
            }
        }
        if values.len() != np {
            return Err(bad(ln, format!("scalar `{name}` has {} values for {np} points", values.len())));
        }
        scalars.push((name, values));
    }
    Ok(VtkSummary {
        dimensions: [dims[0], dims[1], dims[2]],
        points,
        scalars,
    })
}

pub const CSV_HEADER: &str = "step,time,scheme,iterations,converged,norm_psi,norm_theta,norm_c";

/// One row per recorded (sub)step and a `TOTAL` footer with the iteration sum.
pub fn iteration_csv(records: &[IterationRecord], strategy: Strategy) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:e},{:e},{:e}",
            r.step,
            r.time,
            r.scheme_label(strategy),
            r.iterations,
            r.converged,
            r.final_norms[0],
            r.final_norms[1],
            r.final_norms[2]
        );
    }
    let total: usize = records.iter().map(|r| r.iterations).sum();
    let _ = writeln!(out, "TOTAL,,,{total},,,,");
    out
}

pub fn write_iteration_csv(records: &[IterationRecord], strategy: Strategy, path: &Path) -> Result<(), OutputError> {
    write_file(path, &iteration_csv(records, strategy))
}

/// Result of one strategy on one `(dx, dt)` cell of a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareCell {
    pub strategy: Strategy,
    pub dx: f64,
    pub dt: f64,
    pub converged: bool,
    pub total_iterations: usize,
    pub steps_completed: usize,
    pub failed_step: Option<usize>,
    pub wall_time: f64,
}

impl CompareCell {
    pub fn from_report(report: &RunReport, dx: f64) -> Self {
        Self {
            strategy: report.strategy,
            dx,
            dt: report.grid.dt,
            converged: report.converged,
            total_iterations: report.total_iterations(),
            steps_completed: report.steps_completed(),
            failed_step: report.failed_step,
            wall_time: report.wall_time.as_secs_f64(),
        }
    }

    /// `1/20` style label for cell sizes and steps that are unit fractions.
    pub fn fraction(v: f64) -> String {
        let inv = 1.0 / v;
        if (inv - inv.round()).abs() < 1e-9 {
            format!("1/{}", inv.round() as u64)
        } else {
            format!("{v}")
        }
    }
}

pub const SUMMARY_HEADER: &str = "strategy,dx,dt,converged,total_iterations,steps_completed,failed_step,wall_time_s";

pub fn summary_csv(cells: &[CompareCell]) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:.3}",
            c.strategy,
            c.dx,
            c.dt,
            c.converged,
            c.total_iterations,
            c.steps_completed,
            c.failed_step.map(|s| s.to_string()).unwrap_or_default(),
            c.wall_time
        );
    }
    out
}

/// Human-readable matrix: one line per strategy and step size, one column
/// per cell size; failed cells show `FAIL@<step>`.
pub fn summary_table(cells: &[CompareCell]) -> String {
    let mut dxs: Vec<f64> = Vec::new();
    let mut rows: Vec<(Strategy, f64)> = Vec::new();
    for c in cells {
        if !dxs.contains(&c.dx) {
            dxs.push(c.dx);
        }
        if !rows.contains(&(c.strategy, c.dt)) {
            rows.push((c.strategy, c.dt));
        }
    }
    dxs.sort_by(|a, b| b.total_cmp(a));
    let mut out = String::new();
    let _ = write!(out, "{:<16} {:>7}", "strategy", "dt");
    for dx in &dxs {
        let _ = write!(out, " {:>12}", format!("dx={}", CompareCell::fraction(*dx)));
    }
    out.push('\n');
    for (s, dt) in rows {
        let _ = write!(out, "{:<16} {:>7}", s.name(), CompareCell::fraction(dt));
        for dx in &dxs {
            let cell = cells.iter().find(|c| c.strategy == s && c.dt == dt && c.dx == *dx);
            let text = match cell {
                Some(c) if c.converged => c.total_iterations.to_string(),
                Some(c) => format!("FAIL@{}", c.failed_step.unwrap_or(0)),
                None => "-".into(),
            };
            let _ = write!(out, " {text:>12}");
        }
        out.push('\n');
    }
    out
}
