//! File helpers: atomic writes and the dictionary text format.
//!
//! Dictionary files look like
//!
//! ```text
//! sparse-accel dictionary v1
//! n 16
//! m 32
//! kind adversarial
//! seed 7
//! zeta 0.03125 0.25 ...
//! <n lines of m values>
//! ```
//!
//! The `zeta` line is present but empty for Gaussian dictionaries. Values use the
//! shortest round-trip float form.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::generate::{DictKind, Dictionary};

const DICT_MAGIC: &str = "sparse-accel dictionary v1";

/// Writes to a sibling temporary file, syncs it, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn write_dictionary(dict: &Dictionary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{DICT_MAGIC}");
    let _ = writeln!(out, "n {}", dict.n());
    let _ = writeln!(out, "m {}", dict.m());
    let _ = writeln!(out, "kind {}", dict.kind.as_str());
    let _ = writeln!(out, "seed {}", dict.seed);
    out.push_str("zeta");
    for z in &dict.zeta {
        let _ = write!(out, " {z:e}");
    }
    out.push('\n');
    for i in 0..dict.n() {
        let row: Vec<String> = (0..dict.m()).map(|j| format!("{:e}", dict.d[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn save_dictionary(path: &Path, dict: &Dictionary) -> Result<()> {
    write_atomic(path, write_dictionary(dict).as_bytes())
}

pub fn load_dictionary(path: &Path) -> Result<Dictionary> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    parse_dictionary(&text).map_err(|msg| Error::Parse {
        path: path.to_path_buf(),
        msg,
    })
}

fn field<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> std::result::Result<&'a str, String> {
    let line = lines.next().ok_or_else(|| format!("missing `{key}` line"))?;
    let rest = line
        .strip_prefix(key)
        .filter(|r| r.is_empty() || r.starts_with(' '))
        .ok_or_else(|| format!("expected `{key}`, found `{line}`"))?;
    Ok(rest.trim())
}

fn parse_floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split_whitespace()
        .map(|v| v.parse::<f64>().map_err(|e| format!("bad number `{v}`: {e}")))
        .collect()
}

pub fn parse_dictionary(text: &str) -> std::result::Result<Dictionary, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(DICT_MAGIC) {
        return Err("missing dictionary header".into());
    }
    let parse_usize = |s: &str, key: &str| s.parse::<usize>().map_err(|e| format!("bad {key}: {e}"));
    let n = parse_usize(field(&mut lines, "n")?, "n")?;
    let m = parse_usize(field(&mut lines, "m")?, "m")?;
    let kind_name = field(&mut lines, "kind")?;
    let kind = DictKind::parse(kind_name).ok_or_else(|| format!("unknown dictionary kind `{kind_name}`"))?;
    let seed = field(&mut lines, "seed")?
        .parse::<u64>()
        .map_err(|e| format!("bad seed: {e}"))?;
    let zeta = parse_floats(field(&mut lines, "zeta")?)?;
    let mut d = DMatrix::zeros(n, m);
    for i in 0..n {
        let row = parse_floats(lines.next().ok_or("dictionary matrix is truncated")?)?;
        if row.len() != m {
            return Err(format!("row {i} has {} values, expected {m}", row.len()));
        }
        for (j, v) in row.into_iter().enumerate() {
            d[(i, j)] = v;
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err("unexpected trailing content".into());
    }
    Ok(Dictionary { d, kind, seed, zeta })
}
