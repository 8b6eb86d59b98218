//! Bare spectra of the system and environment, the composite bare
//! Hamiltonian data, and density-of-states estimators.
//!
//! Energies are dimensionless (`hbar = 1`). The composite bare basis is
//! ordered system-major, `n = s * dim_env + e`, which makes the partial
//! trace over the environment a contiguous reshape.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{linspace, normal_pdf, normal_quantile, trapezoid};

/// Eigenvalues of the system Hamiltonian, sorted ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpectrum {
    levels: Vec<f64>,
}

impl SystemSpectrum {
    pub fn new(mut levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("system spectrum must be non-empty"));
        }
        if levels.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("system spectrum contains non-finite energy"));
        }
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(SystemSpectrum { levels })
    }

    /// Symmetric two-level system with gap `delta`, levels at `∓delta/2`.
    pub fn two_level(delta: f64) -> Result<Self> {
        if !(delta >= 0.0) {
            return Err(Error::invalid("two-level gap must be non-negative"));
        }
        SystemSpectrum::new(vec![-0.5 * delta, 0.5 * delta])
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }
}

/// Descriptor of the environment density of states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DosModel {
    /// Gaussian DOS with standard deviation `sigma`, centered at zero.
    Gaussian { sigma: f64 },
    /// Explicit list of levels; the descriptor is the spectrum itself.
    Explicit { levels: Vec<f64> },
    /// Levels loaded from a one-column CSV file (header `energy`).
    Csv { path: String },
}

/// How environment levels are generated from the DOS descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvMode {
    /// Deterministic quantiles of the DOS; seed is ignored.
    Quantile,
    /// I.i.d. draws from the DOS, sorted.
    Sampled,
}

/// Eigenvalues of the environment Hamiltonian, sorted ascending, together
/// with the descriptor they were generated from.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentSpectrum {
    levels: Vec<f64>,
    dos_model: DosModel,
}

impl EnvironmentSpectrum {
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    pub fn dos_model(&self) -> &DosModel {
        &self.dos_model
    }
}

/// Build the environment spectrum from its DOS descriptor.
///
/// In `Quantile` mode a Gaussian descriptor yields the deterministic levels
/// `sigma * Phi^-1((k - 1/2) / dim)` for `k = 1..=dim`; in `Sampled` mode the
/// levels are `dim` sorted i.i.d. draws. Explicit descriptors are returned
/// sorted, unchanged.
pub fn build_environment_spectrum(
    dos_model: &DosModel,
    dim: usize,
    mode: EnvMode,
    seed: u64,
) -> Result<EnvironmentSpectrum> {
    if dim < 2 {
        return Err(Error::invalid(format!("environment dim must be >= 2, got {dim}")));
    }
    let levels = match dos_model {
        DosModel::Gaussian { sigma } => {
            if !(*sigma > 0.0) {
                return Err(Error::invalid(format!("Gaussian DOS needs sigma > 0, got {sigma}")));
            }
            match mode {
                EnvMode::Quantile => (1..=dim)
                    .map(|k| sigma * normal_quantile((k as f64 - 0.5) / dim as f64))
                    .collect(),
                EnvMode::Sampled => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let dist = rand_distr::Normal::new(0.0, *sigma)
                        .map_err(|e| Error::invalid(e.to_string()))?;
                    let mut levels: Vec<f64> = (0..dim).map(|_| dist.sample(&mut rng)).collect();
                    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    levels
                }
            }
        }
        DosModel::Explicit { levels } => {
            if levels.len() != dim {
                return Err(Error::invalid(format!(
                    "explicit DOS has {} levels but dim = {dim}",
                    levels.len()
                )));
            }
            let mut levels = levels.clone();
            levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
            levels
        }
        DosModel::Csv { path } => {
            let levels = read_levels_csv(Path::new(path))?;
            if levels.len() != dim {
                return Err(Error::invalid(format!(
                    "CSV spectrum {path} has {} levels but dim = {dim}",
                    levels.len()
                )));
            }
            let mut levels = levels;
            levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
            levels
        }
    };
    if levels.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("environment spectrum contains non-finite energy"));
    }
    Ok(EnvironmentSpectrum { levels, dos_model: dos_model.clone() })
}

/// The composite bare model: both spectra plus the direct-sum energies
/// `eps_n = eps_s + eps_e` in system-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct BareModel {
    sys: SystemSpectrum,
    env: EnvironmentSpectrum,
    bare_energies: Vec<f64>,
}

impl BareModel {
    pub fn sys(&self) -> &SystemSpectrum {
        &self.sys
    }

    pub fn env(&self) -> &EnvironmentSpectrum {
        &self.env
    }

    /// Composite bare energies in system-major order.
    pub fn bare_energies(&self) -> &[f64] {
        &self.bare_energies
    }

    /// Total Hilbert-space dimension `dim_sys * dim_env`.
    pub fn dim(&self) -> usize {
        self.bare_energies.len()
    }

    pub fn dim_sys(&self) -> usize {
        self.sys.dim()
    }

    pub fn dim_env(&self) -> usize {
        self.env.dim()
    }

    /// Composite index for system level `s` and environment level `e`.
    pub fn fuse_index(&self, s: usize, e: usize) -> usize {
        debug_assert!(s < self.dim_sys() && e < self.dim_env());
        s * self.dim_env() + e
    }

    /// Inverse of [`fuse_index`](Self::fuse_index): `n -> (s, e)`.
    pub fn split_index(&self, n: usize) -> (usize, usize) {
        debug_assert!(n < self.dim());
        (n / self.dim_env(), n % self.dim_env())
    }

    /// Hash of the exact level content, used as a cache key component.
    /// Serialization is shortest-round-trip, so equal spectra hash equally
    /// and any bit-level change re-keys.
    pub fn content_hash(&self) -> String {
        let doc = serde_json::json!({
            "sys": self.sys.levels(),
            "env": self.env.levels(),
        });
        crate::harness::manifest::sha256_hex(doc.to_string().as_bytes())
    }
}

/// Assemble the composite bare model from the two spectra.
pub fn build_bare_model(sys: SystemSpectrum, env: EnvironmentSpectrum) -> BareModel {
    let de = env.dim();
    let mut bare = Vec::with_capacity(sys.dim() * de);
    for &es in sys.levels() {
        for &ee in env.levels() {
            bare.push(es + ee);
        }
    }
    BareModel { sys, env, bare_energies: bare }
}

/// Gaussian-kernel density estimate on a fixed grid, scaled so that its
/// integral equals the number of levels (states per unit energy).
#[derive(Clone, Debug)]
pub struct DosEstimate {
    grid: Vec<f64>,
    values: Vec<f64>,
    bandwidth: f64,
}

impl DosEstimate {
    /// Rebuild an estimate from stored grid data (e.g. a CSV emitted by an
    /// earlier run). The grid must be strictly increasing.
    pub fn from_parts(grid: Vec<f64>, values: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::invalid("DOS grid and values must match and have >= 2 points"));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("DOS grid must be strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("DOS values must be finite and nonnegative"));
        }
        if !(bandwidth > 0.0) {
            return Err(Error::invalid("DOS bandwidth must be positive"));
        }
        Ok(DosEstimate { grid, values, bandwidth })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Density at `at`, by linear interpolation on the grid.
    pub fn eval(&self, at: f64) -> Result<f64> {
        let g = &self.grid;
        if at < g[0] || at > g[g.len() - 1] {
            return Err(Error::OutOfSupport(format!(
                "energy {at} outside DOS grid [{}, {}]",
                g[0],
                g[g.len() - 1]
            )));
        }
        let j = match g.binary_search_by(|x| x.partial_cmp(&at).unwrap()) {
            Ok(j) => return Ok(self.values[j]),
            Err(j) => j,
        };
        let (x0, x1) = (g[j - 1], g[j]);
        let t = (at - x0) / (x1 - x0);
        Ok(self.values[j - 1] * (1.0 - t) + self.values[j] * t)
    }

    /// Trapezoid integral of the estimate over its grid.
    pub fn total(&self) -> f64 {
        trapezoid(&self.grid, &self.values)
    }
}

/// Gaussian-kernel DOS estimate of `levels` on `grid`.
pub fn estimate_dos(levels: &[f64], grid: &[f64], bandwidth: f64) -> Result<DosEstimate> {
    if levels.len() < 2 {
        return Err(Error::invalid(format!(
            "DOS estimation needs at least 2 levels, got {}",
            levels.len()
        )));
    }
    if grid.len() < 2 {
        return Err(Error::invalid("DOS grid needs at least 2 points"));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let inv_h = 1.0 / bandwidth;
    let values = grid
        .iter()
        .map(|&x| levels.iter().map(|&l| normal_pdf((x - l) * inv_h) * inv_h).sum())
        .collect();
    Ok(DosEstimate { grid: grid.to_vec(), values, bandwidth })
}

/// Rough mean level spacing near the spectrum center, from the middle fifth
/// of the sorted levels. Used to pick the default KDE bandwidth.
pub fn central_level_spacing(levels: &[f64]) -> f64 {
    let n = levels.len();
    if n < 2 {
        return 1.0;
    }
    let mut sorted = levels.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = (n as f64 * 0.4) as usize;
    let hi = ((n as f64 * 0.6) as usize).min(n - 1).max(lo + 1);
    (sorted[hi] - sorted[lo]).abs().max(f64::MIN_POSITIVE) / (hi - lo) as f64
}

/// DOS estimate with the default bandwidth (5x the central level spacing)
/// on a grid padded by four bandwidths beyond the spectrum ends.
pub fn estimate_dos_auto(levels: &[f64]) -> Result<DosEstimate> {
    if levels.len() < 2 {
        return Err(Error::invalid("DOS estimation needs at least 2 levels"));
    }
    let h = 5.0 * central_level_spacing(levels);
    let lo = levels.iter().cloned().fold(f64::INFINITY, f64::min) - 4.0 * h;
    let hi = levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 4.0 * h;
    let span = hi - lo;
    // Resolve the kernel: at least 8 grid points per bandwidth.
    let n = ((span / h * 8.0).ceil() as usize + 1).clamp(201, 20_001);
    estimate_dos(levels, &linspace(lo, hi, n), h)
}

/// Mean level spacing `D = 1 / rho(at)`.
pub fn mean_level_spacing(dos: &DosEstimate, at: f64) -> Result<f64> {
    let rho = dos.eval(at)?;
    if !(rho > 0.0) {
        return Err(Error::OutOfSupport(format!("density vanishes at {at}")));
    }
    Ok(1.0 / rho)
}

/// Write a spectrum as CSV: header `energy`, one level per line.
pub fn write_levels_csv(path: &Path, levels: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "energy\r\n")?;
    for &x in levels {
        write!(f, "{}\r\n", crate::harness::csvio::fmt_g17(x))?;
    }
    Ok(())
}

/// Read a spectrum written by [`write_levels_csv`].
pub fn read_levels_csv(path: &Path) -> Result<Vec<f64>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if i == 0 {
            if line != "energy" {
                return Err(Error::invalid(format!(
                    "spectrum CSV must start with header `energy`, got `{line}`"
                )));
            }
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|e| Error::invalid(format!("bad energy on line {}: {e}", i + 1)))?;
        out.push(v);
    }
    Ok(out)
}
