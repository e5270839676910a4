//! Plain-text parameter checkpoints.
//!
//! ```text
//! sparse-accel checkpoint v1
//! kind facnet
//! layers 4
//! m 32
//! n 16
//! mu 1
//! tensor layer1.a 32 32
//! <row-major values, one row per line>
//! ...
//! ```
//!
//! Tensors follow the fixed order of [`NetParams::tensors`]. Values are written in
//! shortest round-trip form, so a save/load cycle is lossless.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{
    FacnetLayer, FacnetParams, LfistaLayer, LfistaParams, LinearParams, ListaLayer, ListaParams, NetKind, NetParams,
};
use crate::error::{Error, Result};
use crate::io::write_atomic;

const MAGIC: &str = "sparse-accel checkpoint v1";

/// `(rows, cols)` of every tensor, matching the order of [`NetParams::tensors`].
fn shapes(kind: NetKind, depth: usize, m: usize, n: usize) -> Vec<(usize, usize)> {
    let per_layer: Vec<(usize, usize)> = match kind {
        NetKind::Lista => vec![(m, m), (m, n), (m, 1)],
        NetKind::Lfista => vec![(m, m), (m, m), (m, n), (m, 1)],
        NetKind::Facnet => vec![(m, m), (m, 1)],
        NetKind::Linear => return vec![(m, n)],
    };
    (0..depth).flat_map(|_| per_layer.clone()).collect()
}

fn dims(params: &NetParams) -> (usize, usize) {
    match params {
        NetParams::Lista(p) => (p.layers[0].w_e.nrows(), p.layers[0].w_e.ncols()),
        NetParams::Lfista(p) => (p.layers[0].w_e.nrows(), p.layers[0].w_e.ncols()),
        NetParams::Facnet(p) => (p.layers[0].a.nrows(), 0),
        NetParams::Linear(p) => (p.a0.nrows(), p.a0.ncols()),
    }
}

/// Serializes parameters. `n` is recorded for FacNet too, which does not store it.
pub fn write_checkpoint(params: &NetParams, n: usize) -> String {
    let (m, n_own) = dims(params);
    let n = if params.kind() == NetKind::Facnet { n } else { n_own };
    let mu = match params {
        NetParams::Facnet(p) => p.mu,
        _ => 0.0,
    };
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "kind {}", params.kind());
    let _ = writeln!(out, "layers {}", params.depth());
    let _ = writeln!(out, "m {m}");
    let _ = writeln!(out, "n {n}");
    let _ = writeln!(out, "mu {mu:e}");
    let shapes = shapes(params.kind(), params.depth(), m, n);
    for ((name, data), (rows, cols)) in params.tensors().into_iter().zip(shapes) {
        let _ = writeln!(out, "tensor {name} {rows} {cols}");
        // Column-major storage; rows are written one per line.
        for i in 0..rows {
            let row: Vec<String> = (0..cols).map(|j| format!("{:e}", data[i + j * rows])).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, params: &NetParams, n: usize) -> Result<()> {
    write_atomic(path, write_checkpoint(params, n).as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<NetParams> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    parse_checkpoint(&text).map_err(|msg| Error::Parse {
        path: path.to_path_buf(),
        msg,
    })
}

fn header<'a, T: std::str::FromStr>(
    lines: &mut impl Iterator<Item = &'a str>,
    key: &str,
) -> std::result::Result<T, String> {
    let line = lines.next().ok_or_else(|| format!("missing `{key}` line"))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(format!("expected `{key}`, found `{line}`"));
    }
    parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("bad value in `{line}`"))
}

pub fn parse_checkpoint(text: &str) -> std::result::Result<NetParams, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(l) if l.trim() == MAGIC => {}
        Some(l) => return Err(format!("unsupported checkpoint header `{l}`")),
        None => return Err("empty checkpoint".into()),
    }
    let kind_name: String = header(&mut lines, "kind")?;
    let kind = NetKind::parse(&kind_name).ok_or_else(|| format!("unknown kind `{kind_name}`"))?;
    let depth: usize = header(&mut lines, "layers")?;
    let m: usize = header(&mut lines, "m")?;
    let n: usize = header(&mut lines, "n")?;
    let mu: f64 = header(&mut lines, "mu")?;
    let mut tensors = Vec::new();
    for (rows, cols) in shapes(kind, depth, m, n) {
        let head = lines.next().ok_or("missing tensor header")?;
        let parts: Vec<&str> = head.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" || parts[2].parse() != Ok(rows) || parts[3].parse() != Ok(cols) {
            return Err(format!("expected a {rows}x{cols} tensor, found `{head}`"));
        }
        let mut mat = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| format!("tensor {} is truncated", parts[1]))?;
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| format!("bad number `{v}`: {e}")))
                .collect::<std::result::Result<_, _>>()?;
            if values.len() != cols {
                return Err(format!(
                    "tensor {} row {i} has {} values, expected {cols}",
                    parts[1],
                    values.len()
                ));
            }
            for (j, v) in values.into_iter().enumerate() {
                mat[(i, j)] = v;
            }
        }
        tensors.push(mat);
    }
    if let Some(extra) = lines.next() {
        return Err(format!("unexpected trailing content `{extra}`"));
    }
    let mut it = tensors.into_iter();
    let mut next = || it.next().expect("shape list matches tensor count");
    let col = |m: DMatrix<f64>| DVector::from_column_slice(m.as_slice());
    Ok(match kind {
        NetKind::Lista => NetParams::Lista(ListaParams {
            layers: (0..depth)
                .map(|_| ListaLayer {
                    w_g: next(),
                    w_e: next(),
                    theta: col(next()),
                })
                .collect(),
        }),
        NetKind::Lfista => NetParams::Lfista(LfistaParams {
            layers: (0..depth)
                .map(|_| LfistaLayer {
                    w_g: next(),
                    w_m: next(),
                    w_e: next(),
                    theta: col(next()),
                })
                .collect(),
        }),
        NetKind::Facnet => NetParams::Facnet(FacnetParams {
            layers: (0..depth)
                .map(|_| FacnetLayer {
                    a: next(),
                    s: col(next()),
                })
                .collect(),
            mu,
        }),
        NetKind::Linear => NetParams::Linear(LinearParams { a0: next() }),
    })
}
