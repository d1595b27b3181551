//! CSV emission and re-ingestion. All files: comma separator, '.' decimal,
//! header row, UTF-8. Floats are written in shortest round-trip form, so
//! re-reads are bit-exact and identical runs produce byte-identical files.

use std::path::Path;
use std::sync::Arc;

use bsde_fpi::{AdaptedProcess, ConvergenceRow, CrossRow, LatticeSpace, Solution};

use crate::commands::StudyRow;
use crate::Failure;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, Failure> {
    csv::Writer::from_path(path).map_err(|e| io_err(path, e))
}

/// One row per node: level, node_index, Y_1..Y_d′, M_1..M_d′, V_1..V_d′.
pub fn write_solution(path: &Path, sol: &Solution) -> Result<usize, Failure> {
    let dim = sol.y.dim();
    let mut w = writer(path)?;
    let mut header = vec!["level".to_string(), "node_index".to_string()];
    for tag in ["Y", "M", "V"] {
        for j in 1..=dim {
            header.push(format!("{tag}_{j}"));
        }
    }
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    let space = sol.y.space();
    let m = sol.m.process();
    let mut rows = 0usize;
    for k in sol.y.start_level()..=sol.y.end_level() {
        for n in 0..space.nodes_at(k) {
            let mut rec = vec![k.to_string(), n.to_string()];
            for p in [&sol.y, m, &sol.v] {
                for j in 0..dim {
                    rec.push(fmt_f64(p.value(k, n, j)));
                }
            }
            w.write_record(&rec).map_err(|e| io_err(path, e))?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(rows)
}

/// Per-level, per-component min/max/mean of Y, M, V: the large-tree summary.
pub fn write_solution_aggregates(path: &Path, sol: &Solution) -> Result<usize, Failure> {
    let dim = sol.y.dim();
    let mut w = writer(path)?;
    let mut header = vec!["level".to_string(), "component".to_string(), "nodes".to_string()];
    for tag in ["Y", "M", "V"] {
        for stat in ["min", "max", "mean"] {
            header.push(format!("{tag}_{stat}"));
        }
    }
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    let space = sol.y.space();
    let m = sol.m.process();
    let mut rows = 0usize;
    for k in sol.y.start_level()..=sol.y.end_level() {
        let nodes = space.nodes_at(k);
        for j in 0..dim {
            let mut rec = vec![k.to_string(), (j + 1).to_string(), nodes.to_string()];
            for p in [&sol.y, m, &sol.v] {
                let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
                for n in 0..nodes {
                    let v = p.value(k, n, j);
                    lo = lo.min(v);
                    hi = hi.max(v);
                    sum += v;
                }
                rec.push(fmt_f64(lo));
                rec.push(fmt_f64(hi));
                rec.push(fmt_f64(sum / nodes as f64));
            }
            w.write_record(&rec).map_err(|e| io_err(path, e))?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(rows)
}

pub fn write_convergence(path: &Path, rows: &[ConvergenceRow]) -> Result<(), Failure> {
    let mut w = writer(path)?;
    w.write_record(["window", "iteration", "increment_norm", "contraction_ratio"])
        .map_err(|e| io_err(path, e))?;
    for row in rows {
        let ratio = row.contraction_ratio.map(fmt_f64).unwrap_or_default();
        w.write_record([
            row.window.to_string(),
            row.iteration.to_string(),
            fmt_f64(row.increment_norm),
            ratio,
        ])
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Node geometry dump: level, node_index, parent_index, B_1..B_d, path
/// probability (root row has an empty parent field).
pub fn write_lattice(path: &Path, space: &LatticeSpace) -> Result<usize, Failure> {
    let d = space.d();
    let mut w = writer(path)?;
    let mut header =
        vec!["level".to_string(), "node_index".to_string(), "parent_index".to_string()];
    for i in 1..=d {
        header.push(format!("B_{i}"));
    }
    header.push("prob_of_path".to_string());
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    let steps = space.grid().steps();
    let mut rows = 0usize;
    for k in 0..=steps {
        let prob = fmt_f64(space.node_prob(k));
        for n in 0..space.nodes_at(k) {
            let parent = if k == 0 { String::new() } else { space.parent(n).to_string() };
            let mut rec = vec![k.to_string(), n.to_string(), parent];
            for i in 0..d {
                rec.push(fmt_f64(space.driver_value(k, n, i)));
            }
            rec.push(prob.clone());
            w.write_record(&rec).map_err(|e| io_err(path, e))?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(rows)
}

pub fn write_cross_rows(path: &Path, rows: &[CrossRow]) -> Result<(), Failure> {
    let mut w = writer(path)?;
    w.write_record(["t", "x", "u_pde", "y_lattice", "abs_err"]).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record([
            fmt_f64(r.t),
            fmt_f64(r.x),
            fmt_f64(r.u_pde),
            fmt_f64(r.y_lattice),
            fmt_f64(r.abs_err),
        ])
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_study(path: &Path, rows: &[StudyRow]) -> Result<(), Failure> {
    let mut w = writer(path)?;
    w.write_record(["K", "dt", "y0", "error", "runtime_ms", "method"])
        .map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record([
            r.steps.to_string(),
            fmt_f64(r.dt),
            fmt_f64(r.y0),
            r.error.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.runtime_ms),
            r.method.to_string(),
        ])
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Re-read a full solution file into (Y, M, V) processes over the whole grid.
/// Any structural defect (wrong columns, missing or duplicated nodes, values
/// that do not parse) is a malformed-input failure.
pub fn read_solution(
    path: &Path,
    space: &Arc<LatticeSpace>,
    dim: usize,
) -> Result<(AdaptedProcess, AdaptedProcess, AdaptedProcess), Failure> {
    let malformed = |msg: String| Failure::Config(format!("{}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let cols = 2 + 3 * dim;
    {
        let headers = rdr.headers().map_err(|e| io_err(path, e))?;
        if headers.len() != cols {
            return Err(malformed(format!(
                "expected {cols} columns for dimension {dim}, found {}",
                headers.len()
            )));
        }
    }
    let end = space.grid().steps();
    let mut values: Vec<Vec<f64>> =
        (0..=end).map(|k| vec![0.0; space.nodes_at(k) * 3 * dim]).collect();
    let mut seen: Vec<Vec<bool>> = (0..=end).map(|k| vec![false; space.nodes_at(k)]).collect();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        if rec.len() != cols {
            return Err(malformed(format!("row with {} fields, expected {cols}", rec.len())));
        }
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let level: usize = field(0)
            .parse()
            .map_err(|_| malformed(format!("bad level {:?}", field(0))))?;
        if level > end {
            return Err(malformed(format!("level {level} beyond the grid ({end})")));
        }
        let node: usize = field(1)
            .parse()
            .map_err(|_| malformed(format!("bad node index {:?}", field(1))))?;
        if node >= space.nodes_at(level) {
            return Err(malformed(format!("node {node} out of range at level {level}")));
        }
        if std::mem::replace(&mut seen[level][node], true) {
            return Err(malformed(format!("duplicate row for level {level}, node {node}")));
        }
        for j in 0..3 * dim {
            let raw = field(2 + j);
            let v: f64 =
                raw.parse().map_err(|_| malformed(format!("bad value {raw:?}")))?;
            if !v.is_finite() {
                return Err(malformed(format!("non-finite value {raw:?}")));
            }
            values[level][node * 3 * dim + j] = v;
        }
    }
    for (k, lev) in seen.iter().enumerate() {
        if let Some(n) = lev.iter().position(|s| !s) {
            return Err(malformed(format!("missing row for level {k}, node {n}")));
        }
    }
    let pick = |offset: usize| {
        AdaptedProcess::from_fn(space, dim, 0, end, |k, n, out| {
            let base = n * 3 * dim + offset * dim;
            out.copy_from_slice(&values[k][base..base + dim]);
        })
    };
    Ok((pick(0), pick(1), pick(2)))
}
