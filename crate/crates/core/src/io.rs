//! On-disk formats.
//!
//! A data set directory holds `U.csv`, `F.csv` (header `c1..cp`, then one
//! row per observation) and `dataset.json` with the basis settings and provenance.
//! A kernel cache is a text file: a `# provenance: {json}` line followed by
//! `[K]` and `[K_L]` sections of whitespace-separated rows.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::basis::{BasisSpec, BasisSystem, DataSet};
use crate::error::{Error, Result};
use crate::kernel::{KernelMatrices, KernelProvenance};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes to a sibling temporary file, syncs, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp: PathBuf = dir.join(format!(
        ".{name}.tmp-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Header `c1,…,cp` then comma-separated rows; shortest round-trip float
/// formatting.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let header: Vec<String> = (1..=m.ncols()).map(|k| format!("c{k}")).collect();
    let mut out = header.join(",");
    out.push('\n');
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// A line none of whose cells is a number.
fn is_header(line: &str) -> bool {
    line.split(',').all(|c| c.trim().parse::<f64>().is_err())
}

pub fn matrix_from_csv(text: &str, what: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if rows.is_empty() && is_header(line) {
            continue;
        }
        let row = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { line: i as u64 + 1, message: format!("{what}: {e}") })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: i as u64 + 1,
                    message: format!("{what}: expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyData(format!("{what} has no rows")));
    }
    let cols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub p: usize,
    pub basis: BasisSpec,
    pub basis_id: String,
    pub provenance: Value,
}

pub fn write_dataset(dir: &Path, data: &DataSet, basis: &BasisSpec, provenance: Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("U.csv"), matrix_to_csv(data.u()).as_bytes())?;
    write_atomic(&dir.join("F.csv"), matrix_to_csv(data.f()).as_bytes())?;
    let meta = DatasetMeta {
        n: data.n(),
        p: data.p(),
        basis: basis.clone(),
        basis_id: format!("{:016x}", data.basis_id()),
        provenance,
    };
    write_json_atomic(&dir.join("dataset.json"), &meta)
}

/// Reads a data set directory and rebuilds its basis.
pub fn read_dataset(dir: &Path) -> Result<(DataSet, BasisSystem, DatasetMeta)> {
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join("dataset.json"))?)?;
    let basis = meta.basis.build()?;
    let u = matrix_from_csv(&fs::read_to_string(dir.join("U.csv"))?, "U.csv")?;
    let f = matrix_from_csv(&fs::read_to_string(dir.join("F.csv"))?, "F.csv")?;
    if u.shape() != (meta.n, meta.p) || f.shape() != (meta.n, meta.p) {
        return Err(Error::Parse {
            line: 0,
            message: format!("U is {:?}, F is {:?}, metadata says {}x{}", u.shape(), f.shape(), meta.n, meta.p),
        });
    }
    let data = DataSet::new(&basis, u, f)?;
    Ok((data, basis, meta))
}

fn section(out: &mut String, name: &str, m: &DMatrix<f64>) {
    out.push_str(&format!("[{name}]\n"));
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
}

pub fn kernel_to_string(km: &KernelMatrices) -> Result<String> {
    let mut out = format!("# provenance: {}\n", serde_json::to_string(&km.provenance)?);
    section(&mut out, "K", &km.k);
    section(&mut out, "K_L", &km.k_l);
    Ok(out)
}

pub fn write_kernel(path: &Path, km: &KernelMatrices) -> Result<()> {
    write_atomic(path, kernel_to_string(km)?.as_bytes())
}

/// Parses a kernel cache and checks it was built for `basis`.
pub fn kernel_from_str(text: &str, basis: &BasisSystem) -> Result<KernelMatrices> {
    let mut lines = text.lines().enumerate();
    let provenance: KernelProvenance = match lines.next() {
        Some((_, l)) if l.starts_with("# provenance: ") => serde_json::from_str(&l["# provenance: ".len()..])?,
        _ => return Err(Error::Parse { line: 1, message: "missing provenance header".into() }),
    };
    if provenance.basis_id != basis.id() {
        return Err(Error::BasisMismatch { expected: basis.id(), found: provenance.basis_id });
    }
    let dim = provenance.p * provenance.p;
    let mut k: Option<DMatrix<f64>> = None;
    let mut k_l: Option<DMatrix<f64>> = None;
    let mut current: Option<(&str, Vec<f64>)> = None;
    let finish = |cur: Option<(&str, Vec<f64>)>, k: &mut Option<DMatrix<f64>>, k_l: &mut Option<DMatrix<f64>>| -> Result<()> {
        if let Some((name, vals)) = cur {
            if vals.len() != dim * dim {
                return Err(Error::Parse { line: 0, message: format!("section [{name}] has {} entries, expected {}", vals.len(), dim * dim) });
            }
            let m = DMatrix::from_row_slice(dim, dim, &vals);
            if name == "K" {
                *k = Some(m);
            } else {
                *k_l = Some(m);
            }
        }
        Ok(())
    };
    for (i, line) in lines {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        match t {
            "[K]" | "[K_L]" => {
                finish(current.take(), &mut k, &mut k_l)?;
                current = Some((if t == "[K]" { "K" } else { "K_L" }, Vec::with_capacity(dim * dim)));
            }
            _ => {
                let Some((_, vals)) = current.as_mut() else {
                    return Err(Error::Parse { line: i as u64 + 1, message: "data before any section".into() });
                };
                for tok in t.split_whitespace() {
                    vals.push(tok.parse::<f64>().map_err(|e| Error::Parse { line: i as u64 + 1, message: e.to_string() })?);
                }
            }
        }
    }
    finish(current.take(), &mut k, &mut k_l)?;
    match (k, k_l) {
        (Some(k), Some(k_l)) => Ok(KernelMatrices { k, k_l, factors: None, provenance }),
        _ => Err(Error::Parse { line: 0, message: "kernel file needs both [K] and [K_L] sections".into() }),
    }
}

pub fn read_kernel(path: &Path, basis: &BasisSystem) -> Result<KernelMatrices> {
    kernel_from_str(&fs::read_to_string(path)?, basis)
}
