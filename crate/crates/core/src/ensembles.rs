//! Random interaction ensembles.
//!
//! Interactions are sampled with a fixed spectrum variance:
//! `Tr(W W†)/N = sigma_w²` independent of the dimension, with `Tr(W) = 0`.
//! Gaussian ensembles (GOE, banded) are trace-centered and rescaled post
//! hoc so the normalization holds exactly rather than only in expectation;
//! rotated ensembles (RRM) carry it exactly through their fixed spectrum.
//!
//! Sampling is a pure function of the [`InteractionSpec`]: every RNG draw
//! comes from a counter-based stream keyed by the matrix row, so results do
//! not depend on fill or thread order.

use std::io::{Read, Write};
use std::path::Path;

use faer::{c64, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BareModel;
use crate::numeric::argsort;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    Goe,
    Wbrm,
    Rrm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationGroup {
    Orthogonal,
    Unitary,
}

/// Full description of one interaction draw. Hashable; two equal specs
/// produce bit-identical matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub kind: EnsembleKind,
    pub sigma_w: f64,
    /// Half-width of the coupling band in energy-ordered index units
    /// (banded ensemble only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_half_width: Option<usize>,
    /// Fixed interaction spectrum (rotated ensemble only); defaults to the
    /// bimodal `±sigma_w` spectrum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rrm_spectrum: Option<Vec<f64>>,
    /// Rotation group for the rotated ensemble; defaults to orthogonal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_group: Option<RotationGroup>,
    pub seed: u64,
}

impl InteractionSpec {
    pub fn goe(sigma_w: f64, seed: u64) -> Self {
        InteractionSpec {
            kind: EnsembleKind::Goe,
            sigma_w,
            band_half_width: None,
            rrm_spectrum: None,
            rotation_group: None,
            seed,
        }
    }

    pub fn wbrm(sigma_w: f64, band_half_width: usize, seed: u64) -> Self {
        InteractionSpec {
            kind: EnsembleKind::Wbrm,
            band_half_width: Some(band_half_width),
            ..Self::goe(sigma_w, seed)
        }
    }

    pub fn rrm(sigma_w: f64, group: RotationGroup, seed: u64) -> Self {
        InteractionSpec {
            kind: EnsembleKind::Rrm,
            rotation_group: Some(group),
            ..Self::goe(sigma_w, seed)
        }
    }

    /// Same spec with a different seed; used by sweep drivers.
    pub fn with_seed(&self, seed: u64) -> Self {
        InteractionSpec { seed, ..self.clone() }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !self.sigma_w.is_finite() || self.sigma_w < 0.0 {
            return Err(Error::invalid(format!(
                "sigma_w must be finite and non-negative, got {}",
                self.sigma_w
            )));
        }
        match self.kind {
            EnsembleKind::Goe => {
                if self.band_half_width.is_some()
                    || self.rrm_spectrum.is_some()
                    || self.rotation_group.is_some()
                {
                    return Err(Error::invalid(
                        "goe takes no band_half_width/rrm_spectrum/rotation_group",
                    ));
                }
            }
            EnsembleKind::Wbrm => {
                let b = self
                    .band_half_width
                    .ok_or_else(|| Error::invalid("wbrm requires band_half_width"))?;
                if b < 1 {
                    return Err(Error::invalid("band_half_width must be >= 1"));
                }
                if self.rrm_spectrum.is_some() || self.rotation_group.is_some() {
                    return Err(Error::invalid("wbrm takes no rrm_spectrum/rotation_group"));
                }
            }
            EnsembleKind::Rrm => {
                if self.band_half_width.is_some() {
                    return Err(Error::invalid("rrm takes no band_half_width"));
                }
                if let Some(q) = &self.rrm_spectrum {
                    if q.len() != n {
                        return Err(Error::invalid(format!(
                            "rrm_spectrum has {} entries but N = {n}",
                            q.len()
                        )));
                    }
                    if q.iter().any(|x| !x.is_finite()) {
                        return Err(Error::invalid("rrm_spectrum contains non-finite value"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Stable content hash of this descriptor (canonical JSON, SHA-256).
    pub fn hash(&self) -> Result<String> {
        crate::harness::manifest::hash_config(self)
    }

    /// Sample the interaction matrix described by this descriptor for `bare`.
    pub fn sample(&self, bare: &BareModel) -> Result<InteractionMatrix> {
        let n = bare.dim();
        self.validate(n)?;
        match self.kind {
            EnsembleKind::Goe => sample_goe(n, self.sigma_w, self.seed),
            EnsembleKind::Wbrm => sample_wbrm(
                bare.bare_energies(),
                self.sigma_w,
                self.band_half_width.expect("validated"),
                self.seed,
            ),
            EnsembleKind::Rrm => {
                let q = match &self.rrm_spectrum {
                    Some(q) => q.clone(),
                    None => bimodal_spectrum(n, self.sigma_w),
                };
                let group = self.rotation_group.unwrap_or(RotationGroup::Orthogonal);
                let mut m = sample_rrm(&q, group, self.seed)?;
                m.spec = self.clone();
                Ok(m)
            }
        }
    }
}

/// The default rotated-ensemble spectrum: half the levels at `+sigma_w`,
/// half at `-sigma_w` (one extra level pinned at 0 when `n` is odd, keeping
/// the spectrum exactly centered).
pub fn bimodal_spectrum(n: usize, sigma_w: f64) -> Vec<f64> {
    let half = n / 2;
    let mut q = vec![sigma_w; half];
    if n % 2 == 1 {
        q.push(0.0);
    }
    q.extend(std::iter::repeat(-sigma_w).take(half));
    q
}

/// Dense Hermitian matrix storage; real symmetric for orthogonal classes.
#[derive(Clone, Debug)]
pub enum MatrixData {
    Real(Mat<f64>),
    Complex(Mat<c64>),
}

impl MatrixData {
    pub fn dim(&self) -> usize {
        match self {
            MatrixData::Real(m) => m.nrows(),
            MatrixData::Complex(m) => m.nrows(),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, MatrixData::Complex(_))
    }

    /// Entry as a complex number regardless of storage.
    pub fn get(&self, i: usize, j: usize) -> c64 {
        match self {
            MatrixData::Real(m) => c64::new(m[(i, j)], 0.0),
            MatrixData::Complex(m) => m[(i, j)],
        }
    }

    pub fn trace(&self) -> c64 {
        let n = self.dim();
        (0..n).map(|i| self.get(i, i)).sum()
    }

    /// `Tr(M M†) = Σ |m_ij|²` (squared Frobenius norm).
    pub fn frobenius_sq(&self) -> f64 {
        match self {
            MatrixData::Real(m) => {
                let (r, c) = (m.nrows(), m.ncols());
                let mut s = 0.0;
                for j in 0..c {
                    for i in 0..r {
                        s += m[(i, j)] * m[(i, j)];
                    }
                }
                s
            }
            MatrixData::Complex(m) => {
                let (r, c) = (m.nrows(), m.ncols());
                let mut s = 0.0;
                for j in 0..c {
                    for i in 0..r {
                        s += m[(i, j)].norm_sqr();
                    }
                }
                s
            }
        }
    }

    /// `max_ij |M_ij - conj(M_ji)|`, the Hermiticity defect.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                let d = (self.get(i, j) - self.get(j, i).conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }
}

/// A sampled interaction Hamiltonian together with the [`InteractionSpec`]
/// that produced it.
#[derive(Clone, Debug)]
pub struct InteractionMatrix {
    data: MatrixData,
    spec: InteractionSpec,
}

impl InteractionMatrix {
    /// Crate-internal constructor for explicitly built matrices in
    /// closed-form tests. The caller vouches for the invariants.
    #[cfg(test)]
    pub(crate) fn from_parts(data: MatrixData, spec: InteractionSpec) -> Self {
        InteractionMatrix { data, spec }
    }

    pub fn data(&self) -> &MatrixData {
        &self.data
    }

    pub fn spec(&self) -> &InteractionSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// `Tr(W W†)/N`, the spectrum variance the ensembles normalize.
    pub fn spectrum_variance(&self) -> f64 {
        self.data.frobenius_sq() / self.dim() as f64
    }

    /// Binary debug dump: magic, storage flag, N, spec hash, row-major
    /// little-endian f64 entries (re,im interleaved when complex).
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(MAGIC)?;
        let flag: u8 = if self.data.is_complex() { 1 } else { 0 };
        f.write_all(&[flag])?;
        f.write_all(&(self.dim() as u64).to_le_bytes())?;
        let hash = self.spec.hash()?;
        debug_assert_eq!(hash.len(), 64);
        f.write_all(hash.as_bytes())?;
        let n = self.dim();
        for i in 0..n {
            for j in 0..n {
                let v = self.data.get(i, j);
                f.write_all(&v.re.to_le_bytes())?;
                if flag == 1 {
                    f.write_all(&v.im.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }
}

const MAGIC: &[u8; 4] = b"EQW1";

/// A matrix read back from [`InteractionMatrix::write_binary`]; the
/// originating [`InteractionSpec`] is only available as its hash.
pub struct BinaryDump {
    pub data: MatrixData,
    pub spec_hash: String,
}

pub fn read_binary_dump(path: &Path) -> Result<BinaryDump> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::invalid(format!("{}: not an interaction dump", path.display())));
    }
    let mut flag = [0u8; 1];
    f.read_exact(&mut flag)?;
    let mut nb = [0u8; 8];
    f.read_exact(&mut nb)?;
    let n = u64::from_le_bytes(nb) as usize;
    let mut hash = [0u8; 64];
    f.read_exact(&mut hash)?;
    let spec_hash = String::from_utf8(hash.to_vec())
        .map_err(|_| Error::invalid("corrupt spec hash in dump"))?;
    let mut buf = [0u8; 8];
    let mut read_f64 = |f: &mut dyn Read| -> Result<f64> {
        f.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    };
    let data = if flag[0] == 1 {
        let mut m = Mat::<c64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let re = read_f64(&mut f)?;
                let im = read_f64(&mut f)?;
                m[(i, j)] = c64::new(re, im);
            }
        }
        MatrixData::Complex(m)
    } else {
        let mut m = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = read_f64(&mut f)?;
            }
        }
        MatrixData::Real(m)
    };
    Ok(BinaryDump { data, spec_hash })
}

/// Per-row RNG stream: draws for row `r` are independent of every other row.
fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

/// Center the trace and rescale so `Tr(W²)/n = sigma_w²` exactly.
fn center_and_rescale(m: &mut Mat<f64>, sigma_w: f64) -> Result<()> {
    let n = m.nrows();
    let mean = (0..n).map(|i| m[(i, i)]).sum::<f64>() / n as f64;
    for i in 0..n {
        m[(i, i)] -= mean;
    }
    if sigma_w == 0.0 {
        for j in 0..n {
            for i in 0..n {
                m[(i, j)] = 0.0;
            }
        }
        return Ok(());
    }
    let mut fro_sq = 0.0;
    for j in 0..n {
        for i in 0..n {
            fro_sq += m[(i, j)] * m[(i, j)];
        }
    }
    let var = fro_sq / n as f64;
    if !(var > 0.0) {
        return Err(Error::NumericalFailure(
            "interaction draw collapsed to zero; cannot normalize".into(),
        ));
    }
    let scale = sigma_w / var.sqrt();
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] *= scale;
        }
    }
    Ok(())
}

/// Sample a GOE interaction: independent Gaussians, off-diagonal variance
/// `sigma_w²/n`, diagonal variance `2 sigma_w²/n`, then centered and
/// rescaled to the exact normalization.
pub fn sample_goe(n: usize, sigma_w: f64, seed: u64) -> Result<InteractionMatrix> {
    sample_banded(n, None, sigma_w, None, seed, InteractionSpec::goe(sigma_w, seed))
}

/// Sample a banded interaction: in the energy-ordered bare basis, entry
/// (n,m) is Gaussian iff `|rank(n) - rank(m)| <= b`, else exactly zero.
/// A full band (`b >= N`) degenerates to the GOE draw for the same seed.
pub fn sample_wbrm(
    bare_energies: &[f64],
    sigma_w: f64,
    band_half_width: usize,
    seed: u64,
) -> Result<InteractionMatrix> {
    let n = bare_energies.len();
    let spec = InteractionSpec::wbrm(sigma_w, band_half_width, seed);
    if band_half_width >= n {
        log::warn!(
            "band_half_width {band_half_width} >= N = {n}: banded ensemble degenerates to GOE"
        );
        return sample_banded(n, None, sigma_w, None, seed, spec);
    }
    // rank[idx] = position of bare state idx in energy order.
    let order = argsort(bare_energies);
    let mut rank = vec![0usize; n];
    for (r, &idx) in order.iter().enumerate() {
        rank[idx] = r;
    }
    sample_banded(n, Some(&rank), sigma_w, Some(band_half_width), seed, spec)
}

/// Shared Gaussian sampler for the full and banded ensembles. Draws only
/// structurally nonzero entries, in fixed (row, column) order, from the
/// row's own RNG stream.
fn sample_banded(
    n: usize,
    rank: Option<&[usize]>,
    sigma_w: f64,
    band_half_width: Option<usize>,
    seed: u64,
    spec: InteractionSpec,
) -> Result<InteractionMatrix> {
    if n < 2 {
        return Err(Error::invalid(format!("interaction dimension must be >= 2, got {n}")));
    }
    let off_std = (sigma_w * sigma_w / n as f64).sqrt();
    let diag_std = std::f64::consts::SQRT_2 * off_std;
    let mut m = Mat::<f64>::zeros(n, n);
    for r in 0..n {
        let mut rng = row_rng(seed, r);
        for c in r..n {
            let in_band = match (rank, band_half_width) {
                (Some(rank), Some(b)) => rank[r].abs_diff(rank[c]) <= b,
                _ => true,
            };
            if !in_band {
                continue;
            }
            let g: f64 = rng.sample(StandardNormal);
            let v = if c == r { diag_std * g } else { off_std * g };
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
    center_and_rescale(&mut m, sigma_w)?;
    Ok(InteractionMatrix { data: MatrixData::Real(m), spec })
}

/// Sample a Haar-distributed rotation via QR of a Ginibre matrix with the
/// R-diagonal phase correction.
pub fn sample_haar_rotation(n: usize, group: RotationGroup, seed: u64) -> Result<MatrixData> {
    if n < 1 {
        return Err(Error::invalid("rotation dimension must be >= 1"));
    }
    match group {
        RotationGroup::Orthogonal => {
            let mut g = Mat::<f64>::zeros(n, n);
            for r in 0..n {
                let mut rng = row_rng(seed, r);
                for c in 0..n {
                    g[(r, c)] = rng.sample(StandardNormal);
                }
            }
            let qr = g.qr();
            let mut q = qr.compute_Q();
            let r = qr.R();
            // Fix the gauge: make the R diagonal positive so Q is Haar.
            for j in 0..n {
                if r[(j, j)] < 0.0 {
                    for i in 0..n {
                        q[(i, j)] = -q[(i, j)];
                    }
                }
            }
            Ok(MatrixData::Real(q))
        }
        RotationGroup::Unitary => {
            let mut g = Mat::<c64>::zeros(n, n);
            for r in 0..n {
                let mut rng = row_rng(seed, r);
                for c in 0..n {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    g[(r, c)] = c64::new(re, im);
                }
            }
            let qr = g.qr();
            let mut q = qr.compute_Q();
            let r = qr.R();
            for j in 0..n {
                let d = r[(j, j)];
                let a = d.norm();
                // Zero diagonal has probability 0; keep the column as-is then.
                if a > 0.0 {
                    let phase = d / a;
                    for i in 0..n {
                        q[(i, j)] *= phase.conj();
                    }
                }
            }
            Ok(MatrixData::Complex(q))
        }
    }
}

/// Sample a rotated-spectrum interaction `W = U diag(Q) U†` with Haar `U`.
/// The spectrum must be centered; an uncentered spectrum is recentered with
/// a warning. `sigma_w` of the resulting spec is `sqrt(mean(Q²))`.
pub fn sample_rrm(spectrum: &[f64], group: RotationGroup, seed: u64) -> Result<InteractionMatrix> {
    let n = spectrum.len();
    if n < 2 {
        return Err(Error::invalid(format!("rrm spectrum must have >= 2 entries, got {n}")));
    }
    if spectrum.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("rrm spectrum contains non-finite value"));
    }
    let mut q_spec = spectrum.to_vec();
    let mean = crate::numeric::mean(&q_spec);
    let scale = q_spec.iter().fold(1.0f64, |a, &x| a.max(x.abs()));
    if mean.abs() > 1e-12 * scale {
        log::warn!("rrm spectrum mean {mean:.3e} is not zero; recentering");
        for x in &mut q_spec {
            *x -= mean;
        }
    }
    let sigma_w = (q_spec.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    let u = sample_haar_rotation(n, group, seed)?;
    let data = match u {
        MatrixData::Real(u) => {
            // W = (U diag(q)) Uᵀ, symmetrized to kill rounding skew.
            let mut uq = u.clone();
            for j in 0..n {
                for i in 0..n {
                    uq[(i, j)] *= q_spec[j];
                }
            }
            let w = &uq * u.transpose();
            let mut sym = Mat::<f64>::zeros(n, n);
            for j in 0..n {
                for i in 0..n {
                    sym[(i, j)] = 0.5 * (w[(i, j)] + w[(j, i)]);
                }
            }
            MatrixData::Real(sym)
        }
        MatrixData::Complex(u) => {
            let mut uq = u.clone();
            for j in 0..n {
                for i in 0..n {
                    uq[(i, j)] *= q_spec[j];
                }
            }
            let w = &uq * u.adjoint();
            let mut herm = Mat::<c64>::zeros(n, n);
            for j in 0..n {
                for i in 0..n {
                    herm[(i, j)] = 0.5 * (w[(i, j)] + w[(j, i)].conj());
                }
            }
            MatrixData::Complex(herm)
        }
    };
    let mut spec = InteractionSpec::rrm(sigma_w, group, seed);
    spec.rrm_spectrum = Some(spectrum.to_vec());
    Ok(InteractionMatrix { data, spec })
}
