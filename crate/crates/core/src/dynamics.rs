//! Exact time evolution of embedded states via the dressed eigenbasis.
//!
//! Propagation is purely spectral: amplitudes are rotated into the
//! eigenbasis once, advanced by phases `exp(-i lambda t)`, and rotated
//! back. No time stepping is ever involved, so a point at `t = 1e5` costs
//! the same as one at `t = 1`.

use std::collections::{BTreeMap, BTreeSet};

use faer::{c64, Mat, Side};
use serde::{Deserialize, Serialize};

use crate::ensembles::MatrixData;
use crate::error::{Error, Result};
use crate::numeric::{mean, sample_std};
use crate::spectral::DressedSystem;

/// Initial density matrix in the bare product basis: a mixture of bare
/// states plus optional off-diagonal terms `alpha |m><p| + h.c.`.
#[derive(Clone, Debug)]
pub struct InitialState {
    weights: Vec<(usize, f64)>,
    off_diagonal: Vec<(usize, usize, c64)>,
}

impl InitialState {
    /// The pure bare state `|m><m|`.
    pub fn pure(m: usize) -> Self {
        InitialState { weights: vec![(m, 1.0)], off_diagonal: Vec::new() }
    }

    /// A statistical mixture of bare states. Weights must be nonnegative
    /// and sum to 1; duplicate indices are merged.
    pub fn mixture(weights: &[(usize, f64)]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("mixture needs at least one weight"));
        }
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for &(n, w) in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!("weight {w} of state {n} is not in [0, 1]")));
            }
            *merged.entry(n).or_insert(0.0) += w;
        }
        let total: f64 = merged.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, expected 1")));
        }
        Ok(InitialState { weights: merged.into_iter().collect(), off_diagonal: Vec::new() })
    }

    /// The pure superposition `sum_k a_k |m_k>` as a density matrix.
    /// The amplitudes must be normalized and the indices distinct.
    pub fn superposition(amplitudes: &[(usize, c64)]) -> Result<Self> {
        if amplitudes.len() < 2 {
            return Err(Error::invalid("superposition needs at least two components"));
        }
        let mut seen = BTreeSet::new();
        let mut norm = 0.0;
        for &(n, a) in amplitudes {
            if !seen.insert(n) {
                return Err(Error::invalid(format!("state {n} appears twice in superposition")));
            }
            if !a.re.is_finite() || !a.im.is_finite() {
                return Err(Error::invalid("superposition amplitude is not finite"));
            }
            norm += a.norm_sqr();
        }
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("superposition norm is {norm}, expected 1")));
        }
        let weights = amplitudes.iter().map(|&(n, a)| (n, a.norm_sqr())).collect();
        let mut off_diagonal = Vec::new();
        for (k, &(m, am)) in amplitudes.iter().enumerate() {
            for &(p, ap) in &amplitudes[k + 1..] {
                off_diagonal.push(canonical_term(m, p, am * ap.conj()));
            }
        }
        Ok(InitialState { weights, off_diagonal })
    }

    /// Add the coherence `alpha |m><p| + conj(alpha) |p><m|`. Both states
    /// need diagonal weight: `|alpha| <= sqrt(w_m w_p)` keeps the density
    /// matrix positive.
    pub fn with_off_diagonal(mut self, m: usize, p: usize, alpha: c64) -> Result<Self> {
        if m == p {
            return Err(Error::invalid("off-diagonal term needs two distinct states"));
        }
        if !alpha.re.is_finite() || !alpha.im.is_finite() {
            return Err(Error::invalid("off-diagonal amplitude is not finite"));
        }
        let weight_of = |n: usize| {
            self.weights.iter().find(|&&(k, _)| k == n).map(|&(_, w)| w).unwrap_or(0.0)
        };
        let bound = (weight_of(m) * weight_of(p)).sqrt();
        if alpha.norm() > bound * (1.0 + 1e-9) {
            return Err(Error::invalid(format!(
                "off-diagonal amplitude {} exceeds the positivity bound {bound}",
                alpha.norm()
            )));
        }
        self.off_diagonal.push(canonical_term(m, p, alpha));
        Ok(self)
    }

    pub fn weights(&self) -> &[(usize, f64)] {
        &self.weights
    }

    pub fn off_diagonal(&self) -> &[(usize, usize, c64)] {
        &self.off_diagonal
    }

    fn validate_for(&self, dim: usize) -> Result<()> {
        for &(n, _) in &self.weights {
            if n >= dim {
                return Err(Error::invalid(format!("initial state index {n} out of range")));
            }
        }
        for &(m, p, _) in &self.off_diagonal {
            if m >= dim || p >= dim {
                return Err(Error::invalid(format!(
                    "off-diagonal indices ({m}, {p}) out of range"
                )));
            }
        }
        Ok(())
    }

    /// Bare indices whose amplitude trajectories the evolution needs.
    fn needed_indices(&self) -> BTreeSet<usize> {
        let mut set: BTreeSet<usize> =
            self.weights.iter().filter(|&&(_, w)| w > 0.0).map(|&(n, _)| n).collect();
        for &(m, p, _) in &self.off_diagonal {
            set.insert(m);
            set.insert(p);
        }
        set
    }
}

/// Terms are stored with `m < p`; swapping the sides conjugates alpha.
fn canonical_term(m: usize, p: usize, alpha: c64) -> (usize, usize, c64) {
    if m <= p {
        (m, p, alpha)
    } else {
        (p, m, alpha.conj())
    }
}

/// Density matrix of the embedded system after tracing out the
/// environment. Validated on construction: Hermitian, unit trace,
/// positive semidefinite up to rounding.
#[derive(Clone, Debug)]
pub struct ReducedState {
    mat: Mat<c64>,
}

impl ReducedState {
    pub fn new(mat: Mat<c64>) -> Result<Self> {
        let d = mat.nrows();
        if d == 0 || mat.ncols() != d {
            return Err(Error::invalid("reduced state must be square and nonempty"));
        }
        let mut herm: f64 = 0.0;
        for j in 0..d {
            for i in 0..d {
                herm = herm.max((mat[(i, j)] - mat[(j, i)].conj()).norm());
            }
        }
        if herm > 1e-10 {
            return Err(Error::invalid(format!("reduced state hermiticity defect {herm:.3e}")));
        }
        let trace: c64 = (0..d).map(|i| mat[(i, i)]).sum();
        if (trace - c64::new(1.0, 0.0)).norm() > 1e-10 {
            return Err(Error::invalid(format!("reduced state trace {trace} differs from 1")));
        }
        let evd = mat
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::NumericalFailure(format!("reduced-state eigensolve: {e:?}")))?;
        for i in 0..d {
            let ev = evd.S()[i].re;
            if ev < -1e-10 {
                return Err(Error::invalid(format!("reduced state has eigenvalue {ev:.3e}")));
            }
        }
        Ok(ReducedState { mat })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &Mat<c64> {
        &self.mat
    }

    pub fn get(&self, s: usize, s2: usize) -> c64 {
        self.mat[(s, s2)]
    }

    /// Diagonal occupations, one per system level.
    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|s| self.mat[(s, s)].re).collect()
    }

    pub fn coherence(&self, s: usize, s2: usize) -> c64 {
        self.mat[(s, s2)]
    }
}

/// Reduced states sampled on a time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<ReducedState>,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[ReducedState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim_sys(&self) -> usize {
        self.states[0].dim()
    }

    /// Population of system level `s` over time.
    pub fn population_series(&self, s: usize) -> Vec<f64> {
        self.states.iter().map(|r| r.get(s, s).re).collect()
    }

    /// Coherence `rho[s][s2]` over time.
    pub fn coherence_series(&self, s: usize, s2: usize) -> Vec<c64> {
        self.states.iter().map(|r| r.get(s, s2)).collect()
    }

    /// Indices of sample times inside `[window.0, window.1]`.
    pub fn window_indices(&self, window: (f64, f64)) -> Vec<usize> {
        (0..self.times.len())
            .filter(|&k| self.times[k] >= window.0 && self.times[k] <= window.1)
            .collect()
    }
}

fn validate_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::invalid("time grid is empty"));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("time grid contains a non-finite value"));
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("time grid must be strictly increasing"));
    }
    Ok(())
}

/// Bare-basis amplitudes of the evolved bare state `m` at all sample
/// times: column `k` holds `<phi_n| exp(-iHt_k) |phi_m>` over `n`.
pub(crate) fn amplitude_trajectory(ds: &DressedSystem, m: usize, times: &[f64]) -> Mat<c64> {
    let n = ds.dim();
    let nt = times.len();
    let lambdas = ds.lambdas();
    match ds.overlaps() {
        MatrixData::Real(o) => {
            // c_i = O[m][i]; split the phases into two real products.
            let mut c_re = Mat::<f64>::zeros(n, nt);
            let mut c_im = Mat::<f64>::zeros(n, nt);
            for (k, &t) in times.iter().enumerate() {
                for i in 0..n {
                    let (s, c) = (lambdas[i] * t).sin_cos();
                    let w = o[(m, i)];
                    c_re[(i, k)] = w * c;
                    c_im[(i, k)] = -w * s;
                }
            }
            let a_re = o * &c_re;
            let a_im = o * &c_im;
            Mat::from_fn(n, nt, |r, k| c64::new(a_re[(r, k)], a_im[(r, k)]))
        }
        MatrixData::Complex(o) => {
            let mut c = Mat::<c64>::zeros(n, nt);
            for (k, &t) in times.iter().enumerate() {
                for i in 0..n {
                    let (s, cc) = (lambdas[i] * t).sin_cos();
                    c[(i, k)] = o[(m, i)].conj() * c64::new(cc, -s);
                }
            }
            o * &c
        }
    }
}

/// `X[s][s2] = sum_e A[fuse(s,e)][k] conj(B[fuse(s2,e)][k])`: the partial
/// trace over the environment of `|A_k><B_k|`.
fn partial_trace_outer(
    a: &Mat<c64>,
    b: &Mat<c64>,
    k: usize,
    dim_s: usize,
    dim_e: usize,
) -> Mat<c64> {
    Mat::from_fn(dim_s, dim_s, |s, s2| {
        let mut z = c64::new(0.0, 0.0);
        for e in 0..dim_e {
            z += a[(s * dim_e + e, k)] * b[(s2 * dim_e + e, k)].conj();
        }
        z
    })
}

/// Copy the upper triangle onto the lower one so hermiticity holds to the
/// last bit, and strip rounding dust off the diagonal's imaginary part.
fn hermitize(mat: &mut Mat<c64>) {
    let d = mat.nrows();
    for s in 0..d {
        mat[(s, s)] = c64::new(mat[(s, s)].re, 0.0);
        for s2 in (s + 1)..d {
            mat[(s2, s)] = mat[(s, s2)].conj();
        }
    }
}

/// Evolve a general initial state and trace out the environment at each
/// sample time.
pub fn evolve_mixed(
    ds: &DressedSystem,
    initial: &InitialState,
    times: &[f64],
) -> Result<Trajectory> {
    validate_times(times)?;
    initial.validate_for(ds.dim())?;
    let dim_s = ds.model().dim_sys();
    let dim_e = ds.model().dim_env();
    let amps: BTreeMap<usize, Mat<c64>> = initial
        .needed_indices()
        .into_iter()
        .map(|n| (n, amplitude_trajectory(ds, n, times)))
        .collect();
    let mut states = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let mut rho = Mat::<c64>::zeros(dim_s, dim_s);
        for &(n, w) in initial.weights() {
            if w == 0.0 {
                continue;
            }
            let a = &amps[&n];
            let x = partial_trace_outer(a, a, k, dim_s, dim_e);
            for s in 0..dim_s {
                for s2 in s..dim_s {
                    rho[(s, s2)] += w * x[(s, s2)];
                }
            }
        }
        for &(m, p, alpha) in initial.off_diagonal() {
            let x = partial_trace_outer(&amps[&m], &amps[&p], k, dim_s, dim_e);
            for s in 0..dim_s {
                for s2 in s..dim_s {
                    // alpha X + (alpha X)^dagger, upper triangle only.
                    rho[(s, s2)] += alpha * x[(s, s2)] + (alpha * x[(s2, s)]).conj();
                }
            }
        }
        hermitize(&mut rho);
        states.push(ReducedState::new(rho)?);
    }
    Ok(Trajectory { times: times.to_vec(), states })
}

/// Evolve the pure bare state `|m>`.
pub fn evolve_pure(ds: &DressedSystem, m: usize, times: &[f64]) -> Result<Trajectory> {
    evolve_mixed(ds, &InitialState::pure(m), times)
}

/// Infinite-time average of the evolved state: the initial density matrix
/// dephased in the dressed eigenbasis, then traced over the environment.
/// Requires a nondegenerate dressed spectrum.
pub fn diagonal_ensemble(ds: &DressedSystem, initial: &InitialState) -> Result<ReducedState> {
    initial.validate_for(ds.dim())?;
    let span = ds.span();
    let gap = ds.min_gap();
    if !(gap > 1e-12 * span) {
        return Err(Error::DegenerateSpectrum(format!(
            "smallest dressed gap {gap:.3e} vs span {span:.3e}; the time average is ill-defined"
        )));
    }
    let n = ds.dim();
    let dim_s = ds.model().dim_sys();
    let dim_e = ds.model().dim_env();
    let mut rho = Mat::<c64>::zeros(dim_s, dim_s);
    for i in 0..n {
        // w_i = <psi_i| rho(0) |psi_i>, nonnegative for any valid rho(0).
        let mut w_i = 0.0;
        for &(m, w) in initial.weights() {
            w_i += w * ds.weight(m, i);
        }
        for &(m, p, alpha) in initial.off_diagonal() {
            w_i += 2.0 * (alpha * ds.overlap(m, i).conj() * ds.overlap(p, i)).re;
        }
        if w_i == 0.0 {
            continue;
        }
        for s in 0..dim_s {
            for s2 in s..dim_s {
                let mut z = c64::new(0.0, 0.0);
                for e in 0..dim_e {
                    z += ds.overlap(s * dim_e + e, i) * ds.overlap(s2 * dim_e + e, i).conj();
                }
                rho[(s, s2)] += w_i * z;
            }
        }
    }
    hermitize(&mut rho);
    ReducedState::new(rho)
}

/// Windowed time statistics of a trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FluctuationReport {
    pub window: (f64, f64),
    pub n_samples: usize,
    pub mean_populations: Vec<f64>,
    /// Temporal standard deviation of each population over the window.
    pub population_stds: Vec<f64>,
}

/// Average the reduced state over the sample times inside `window` and
/// report how much the populations still fluctuate there.
pub fn long_time_average(
    traj: &Trajectory,
    window: (f64, f64),
) -> Result<(ReducedState, FluctuationReport)> {
    if !(window.0 < window.1) {
        return Err(Error::invalid("window must satisfy lo < hi"));
    }
    let idx = traj.window_indices(window);
    if idx.len() < 2 {
        return Err(Error::invalid(format!(
            "window [{}, {}] covers {} sample times, need at least 2",
            window.0,
            window.1,
            idx.len()
        )));
    }
    let d = traj.dim_sys();
    let mut acc = Mat::<c64>::zeros(d, d);
    for &k in &idx {
        let m = traj.states[k].matrix();
        for j in 0..d {
            for i in 0..d {
                acc[(i, j)] += m[(i, j)];
            }
        }
    }
    let inv = 1.0 / idx.len() as f64;
    for j in 0..d {
        for i in 0..d {
            acc[(i, j)] *= inv;
        }
    }
    let mean_state = ReducedState::new(acc)?;
    let mut mean_populations = Vec::with_capacity(d);
    let mut population_stds = Vec::with_capacity(d);
    for s in 0..d {
        let series: Vec<f64> = idx.iter().map(|&k| traj.states[k].get(s, s).re).collect();
        mean_populations.push(mean(&series));
        population_stds.push(sample_std(&series));
    }
    let report = FluctuationReport {
        window,
        n_samples: idx.len(),
        mean_populations,
        population_stds,
    };
    Ok((mean_state, report))
}

/// Time series of one reduced coherence and its long-time remnant.
#[derive(Clone, Debug)]
pub struct CoherenceDecay {
    pub times: Vec<f64>,
    /// `|rho_s[pair](t)|` at each sample time.
    pub magnitudes: Vec<f64>,
    pub window: (f64, f64),
    /// Magnitude of the window-averaged complex coherence. Averaging
    /// before taking the modulus is what distinguishes true dephasing
    /// from a rotating but persistent coherence.
    pub long_time_average: f64,
}

/// Track the reduced coherence between system levels `pair.0` and
/// `pair.1` along the evolution of `initial`.
pub fn coherence_decay(
    ds: &DressedSystem,
    initial: &InitialState,
    pair: (usize, usize),
    times: &[f64],
    window: (f64, f64),
) -> Result<CoherenceDecay> {
    let dim_s = ds.model().dim_sys();
    if pair.0 == pair.1 || pair.0 >= dim_s || pair.1 >= dim_s {
        return Err(Error::invalid(format!(
            "coherence pair {pair:?} is not a pair of distinct system levels"
        )));
    }
    let traj = evolve_mixed(ds, initial, times)?;
    let series = traj.coherence_series(pair.0, pair.1);
    let idx = traj.window_indices(window);
    if idx.len() < 2 {
        return Err(Error::invalid("window covers fewer than 2 sample times"));
    }
    let mut acc = c64::new(0.0, 0.0);
    for &k in &idx {
        acc += series[k];
    }
    let long_time_average = (acc / idx.len() as f64).norm();
    Ok(CoherenceDecay {
        times: traj.times,
        magnitudes: series.iter().map(|z| z.norm()).collect(),
        window,
        long_time_average,
    })
}
