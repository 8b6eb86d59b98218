//! Binary cache of diagonalization results, keyed by the exact model and
//! interaction spec (seed included). The cache stores full f64 bits, so a
//! hit is indistinguishable from a fresh computation.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use faer::{c64, Mat};

use crate::ensembles::{InteractionMatrix, MatrixData};
use crate::error::{Error, Result};
use crate::harness::manifest::sha256_hex;
use crate::model::BareModel;
use crate::spectral::{diagonalize, DressedSystem};

const MAGIC: &[u8; 4] = b"EQC1";

/// Cache directory from the `EMBEDQ_CACHE` environment variable, if set.
pub fn cache_dir_from_env() -> Option<PathBuf> {
    std::env::var_os("EMBEDQ_CACHE").map(PathBuf::from)
}

fn cache_key(model: &BareModel, w: &InteractionMatrix) -> Result<String> {
    let spec_hash = w.spec().hash()?;
    Ok(sha256_hex(format!("{}:{}", model.content_hash(), spec_hash).as_bytes()))
}

/// Diagonalize through the cache: load on a hit, compute and store on a
/// miss. An unreadable cache entry is recomputed and rewritten, never
/// trusted.
pub fn diagonalize_cached(
    model: &Arc<BareModel>,
    w: &InteractionMatrix,
    cache_dir: Option<&Path>,
) -> Result<DressedSystem> {
    let Some(dir) = cache_dir else {
        return diagonalize(model, w);
    };
    let path = dir.join(format!("{}.evd", cache_key(model, w)?));
    if path.exists() {
        match read_entry(&path, model, w) {
            Ok(ds) => return Ok(ds),
            Err(e) => log::warn!("ignoring unreadable cache entry {path:?}: {e}"),
        }
    }
    let ds = diagonalize(model, w)?;
    if let Err(e) = write_entry(&path, &ds) {
        log::warn!("could not write cache entry {path:?}: {e}");
    }
    Ok(ds)
}

fn write_entry(path: &Path, ds: &DressedSystem) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("evd.tmp");
    {
        let mut out = BufWriter::new(std::fs::File::create(&tmp)?);
        out.write_all(MAGIC)?;
        out.write_all(&[ds.overlaps().is_complex() as u8])?;
        out.write_all(&(ds.dim() as u64).to_le_bytes())?;
        for &l in ds.lambdas() {
            out.write_all(&l.to_le_bytes())?;
        }
        let n = ds.dim();
        match ds.overlaps() {
            MatrixData::Real(o) => {
                for i in 0..n {
                    for j in 0..n {
                        out.write_all(&o[(i, j)].to_le_bytes())?;
                    }
                }
            }
            MatrixData::Complex(o) => {
                for i in 0..n {
                    for j in 0..n {
                        out.write_all(&o[(i, j)].re.to_le_bytes())?;
                        out.write_all(&o[(i, j)].im.to_le_bytes())?;
                    }
                }
            }
        }
        out.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_entry(path: &Path, model: &Arc<BareModel>, w: &InteractionMatrix) -> Result<DressedSystem> {
    let mut input = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::invalid("not a diagonalization cache entry"));
    }
    let mut flag = [0u8; 1];
    input.read_exact(&mut flag)?;
    let complex = flag[0] != 0;
    let mut dim_bytes = [0u8; 8];
    input.read_exact(&mut dim_bytes)?;
    let n = u64::from_le_bytes(dim_bytes) as usize;
    if n != model.dim() {
        return Err(Error::InconsistentInput(format!(
            "cache entry has dimension {n}, model has {}",
            model.dim()
        )));
    }
    if complex != w.data().is_complex() {
        return Err(Error::InconsistentInput("cache entry field type mismatch".into()));
    }
    let mut lambdas = Vec::with_capacity(n);
    for _ in 0..n {
        lambdas.push(read_f64(&mut input)?);
    }
    let overlaps = if complex {
        let mut o = Mat::<c64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let re = read_f64(&mut input)?;
                let im = read_f64(&mut input)?;
                o[(i, j)] = c64::new(re, im);
            }
        }
        MatrixData::Complex(o)
    } else {
        let mut o = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                o[(i, j)] = read_f64(&mut input)?;
            }
        }
        MatrixData::Real(o)
    };
    DressedSystem::from_raw_parts(lambdas, overlaps, model.clone(), w.spec().clone())
}
