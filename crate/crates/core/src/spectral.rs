//! Diagonalization of the dressed Hamiltonian and overlap statistics.
//!
//! The dressed Hamiltonian is `H = diag(bare energies) + W`. Because the
//! bare part is diagonal in the computational basis, the overlap
//! `<phi_n|psi_i>` between bare state `n` and dressed eigenvector `i` is
//! literally component `n` of eigenvector `i`; the whole eigenvector matrix
//! doubles as the overlap matrix.

use std::sync::Arc;

use faer::{c64, Mat, Side};

use crate::ensembles::{InteractionMatrix, InteractionSpec, MatrixData};
use crate::error::{Error, Result};
use crate::model::{BareModel, DosEstimate};
use crate::numeric::{golden_section_min, sample_std};
use crate::theory::{ShapeFunction, ShapeKind};

/// Eigenvalues and overlaps of one dressed realization.
#[derive(Clone, Debug)]
pub struct DressedSystem {
    lambdas: Vec<f64>,
    overlaps: MatrixData,
    model: Arc<BareModel>,
    spec: InteractionSpec,
}

impl DressedSystem {
    pub(crate) fn from_raw_parts(
        lambdas: Vec<f64>,
        overlaps: MatrixData,
        model: Arc<BareModel>,
        spec: InteractionSpec,
    ) -> Result<Self> {
        if lambdas.len() != model.dim() || overlaps.dim() != model.dim() {
            return Err(Error::InconsistentInput(format!(
                "dressed data of dimension {} for a model of dimension {}",
                lambdas.len(),
                model.dim()
            )));
        }
        Ok(DressedSystem { lambdas, overlaps, model, spec })
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    /// Dressed eigenvalues, ascending.
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Overlap matrix: entry (n, i) is `<phi_n|psi_i>`.
    pub fn overlaps(&self) -> &MatrixData {
        &self.overlaps
    }

    pub fn model(&self) -> &Arc<BareModel> {
        &self.model
    }

    pub fn spec(&self) -> &InteractionSpec {
        &self.spec
    }

    pub fn overlap(&self, n: usize, i: usize) -> c64 {
        self.overlaps.get(n, i)
    }

    /// `|<phi_n|psi_i>|^2`.
    pub fn weight(&self, n: usize, i: usize) -> f64 {
        self.overlaps.get(n, i).norm_sqr()
    }

    /// All weights of bare state `n`: a probability vector over `i`.
    pub fn row_weights(&self, n: usize) -> Vec<f64> {
        let dim = self.dim();
        match &self.overlaps {
            MatrixData::Real(o) => (0..dim).map(|i| o[(n, i)] * o[(n, i)]).collect(),
            MatrixData::Complex(o) => (0..dim).map(|i| o[(n, i)].norm_sqr()).collect(),
        }
    }

    /// The full weight matrix `q[n][i] = |<phi_n|psi_i>|^2`.
    pub fn weight_matrix(&self) -> Mat<f64> {
        let dim = self.dim();
        match &self.overlaps {
            MatrixData::Real(o) => Mat::from_fn(dim, dim, |n, i| o[(n, i)] * o[(n, i)]),
            MatrixData::Complex(o) => Mat::from_fn(dim, dim, |n, i| o[(n, i)].norm_sqr()),
        }
    }

    /// Smallest gap between consecutive dressed eigenvalues.
    pub fn min_gap(&self) -> f64 {
        self.lambdas.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// Spectral span `lambda_max - lambda_min`.
    pub fn span(&self) -> f64 {
        if self.lambdas.is_empty() {
            return 0.0;
        }
        self.lambdas[self.lambdas.len() - 1] - self.lambdas[0]
    }
}

fn models_match(a: &Arc<BareModel>, b: &Arc<BareModel>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// Specs must agree on everything but the seed for runs to be pooled.
fn specs_match(a: &InteractionSpec, b: &InteractionSpec) -> bool {
    a.with_seed(0) == b.with_seed(0)
}

/// Diagonalize the dressed Hamiltonian `H = diag(bare) + W`.
///
/// Eigenvalues come out ascending. Each eigenvector's phase is fixed so its
/// largest-magnitude component is real positive; all moments downstream use
/// squared magnitudes, so the convention only stabilizes serialized output.
pub fn diagonalize(model: &Arc<BareModel>, w: &InteractionMatrix) -> Result<DressedSystem> {
    let n = model.dim();
    if w.dim() != n {
        return Err(Error::InconsistentInput(format!(
            "interaction is {}-dimensional but the model is {n}-dimensional",
            w.dim()
        )));
    }
    let bare = model.bare_energies();
    let fail = |e: faer::linalg::evd::EvdError| {
        Error::NumericalFailure(format!(
            "eigensolver did not converge ({e:?}) for interaction spec {}",
            crate::harness::manifest::canonical_json(w.spec()).unwrap_or_default()
        ))
    };
    let (mut lambdas, mut overlaps): (Vec<f64>, MatrixData) = match w.data() {
        MatrixData::Real(m) => {
            let mut h = m.clone();
            for i in 0..n {
                h[(i, i)] += bare[i];
            }
            let evd = h.self_adjoint_eigen(Side::Lower).map_err(fail)?;
            let lambdas: Vec<f64> = (0..n).map(|i| evd.S()[i]).collect();
            (lambdas, MatrixData::Real(evd.U().to_owned()))
        }
        MatrixData::Complex(m) => {
            let mut h = m.clone();
            for i in 0..n {
                h[(i, i)] += c64::new(bare[i], 0.0);
            }
            let evd = h.self_adjoint_eigen(Side::Lower).map_err(fail)?;
            let lambdas: Vec<f64> = (0..n).map(|i| evd.S()[i].re).collect();
            (lambdas, MatrixData::Complex(evd.U().to_owned()))
        }
    };
    sort_ascending(&mut lambdas, &mut overlaps);
    fix_phases(&mut overlaps);
    DressedSystem::from_raw_parts(lambdas, overlaps, model.clone(), w.spec().clone())
}

/// The solver returns eigenvalues in nondecreasing order; re-sort
/// defensively in case of ties resolved out of order.
fn sort_ascending(lambdas: &mut [f64], overlaps: &mut MatrixData) {
    if lambdas.windows(2).all(|w| w[0] <= w[1]) {
        return;
    }
    let perm = crate::numeric::argsort(lambdas);
    let sorted: Vec<f64> = perm.iter().map(|&i| lambdas[i]).collect();
    lambdas.copy_from_slice(&sorted);
    let n = lambdas.len();
    match overlaps {
        MatrixData::Real(o) => {
            let src = o.clone();
            for (dst, &s) in perm.iter().enumerate() {
                for r in 0..n {
                    o[(r, dst)] = src[(r, s)];
                }
            }
        }
        MatrixData::Complex(o) => {
            let src = o.clone();
            for (dst, &s) in perm.iter().enumerate() {
                for r in 0..n {
                    o[(r, dst)] = src[(r, s)];
                }
            }
        }
    }
}

fn fix_phases(overlaps: &mut MatrixData) {
    let n = overlaps.dim();
    match overlaps {
        MatrixData::Real(o) => {
            for i in 0..n {
                let mut k = 0;
                let mut best = -1.0;
                for r in 0..n {
                    let a = o[(r, i)].abs();
                    if a > best {
                        best = a;
                        k = r;
                    }
                }
                if o[(k, i)] < 0.0 {
                    for r in 0..n {
                        o[(r, i)] = -o[(r, i)];
                    }
                }
            }
        }
        MatrixData::Complex(o) => {
            for i in 0..n {
                let mut k = 0;
                let mut best = -1.0;
                for r in 0..n {
                    let a = o[(r, i)].norm_sqr();
                    if a > best {
                        best = a;
                        k = r;
                    }
                }
                let v = o[(k, i)];
                let a = v.norm();
                if a > 0.0 {
                    let phase = (v / a).conj();
                    for r in 0..n {
                        o[(r, i)] *= phase;
                    }
                }
            }
        }
    }
}

/// Generalized golden-rule width `Gamma = pi sigma_w^2 rho / n`.
pub fn fgr_width(sigma_w: f64, rho_at: f64, n: usize) -> f64 {
    assert!(sigma_w >= 0.0 && rho_at > 0.0 && n >= 1, "fgr_width inputs out of range");
    std::f64::consts::PI * sigma_w * sigma_w * rho_at / n as f64
}

/// Least-squares fit of the binned LDOS curve.
#[derive(Clone, Copy, Debug)]
pub struct LdosFit {
    pub kind: ShapeKind,
    /// HWHM for a Lorentzian, standard deviation for a Gaussian.
    pub width: f64,
    /// RMS residual of the winning shape on the binned density.
    pub residual: f64,
    /// RMS residual of the rejected shape.
    pub alt_residual: f64,
    /// Curve too narrow for the bin resolution (e.g. the zero-coupling
    /// point mass); the width is not meaningful below one bin.
    pub degenerate: bool,
}

/// Aggregated local density of states around one bare state.
#[derive(Clone, Debug)]
pub struct LdosCurve {
    center: f64,
    /// Raw pooled points: (energy offset from the state's own energy,
    /// overlap weight). Each pooled row contributes total weight 1.
    points: Vec<(f64, f64)>,
    rows_pooled: usize,
    /// Binned density: (offset bin center, density). Integrates to ~1.
    bins: Vec<(f64, f64)>,
    fit: LdosFit,
}

impl LdosCurve {
    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn rows_pooled(&self) -> usize {
        self.rows_pooled
    }

    pub fn bins(&self) -> &[(f64, f64)] {
        &self.bins
    }

    pub fn fit(&self) -> &LdosFit {
        &self.fit
    }
}

/// Streaming LDOS aggregator: add one diagonalized realization at a time,
/// so whole ensembles never need to live in memory together.
pub struct LdosAccumulator {
    model: Arc<BareModel>,
    center: f64,
    bundle: Vec<usize>,
    d_center: f64,
    points: Vec<(f64, f64)>,
    rows_pooled: usize,
    spec0: Option<InteractionSpec>,
}

impl LdosAccumulator {
    /// `n` is the target bare index; states within `bundle_half_width`
    /// mean level spacings of its energy are pooled after recentering.
    pub fn new(
        model: Arc<BareModel>,
        n: usize,
        bundle_half_width: usize,
        dos_total: &DosEstimate,
    ) -> Result<Self> {
        let energies = model.bare_energies();
        if n >= energies.len() {
            return Err(Error::invalid(format!("bare index {n} out of range")));
        }
        let center = energies[n];
        let d_center = crate::model::mean_level_spacing(dos_total, center)?;
        let half = bundle_half_width as f64 * d_center;
        let mut bundle: Vec<usize> =
            (0..energies.len()).filter(|&k| (energies[k] - center).abs() <= half).collect();
        if !bundle.contains(&n) {
            bundle.push(n);
        }
        bundle.sort_unstable();
        Ok(LdosAccumulator {
            model,
            center,
            bundle,
            d_center,
            points: Vec::new(),
            rows_pooled: 0,
            spec0: None,
        })
    }

    /// Bare indices pooled into the curve.
    pub fn bundle(&self) -> &[usize] {
        &self.bundle
    }

    pub fn add_run(&mut self, ds: &DressedSystem) -> Result<()> {
        if !models_match(&self.model, ds.model()) {
            return Err(Error::InconsistentInput(
                "realization was diagonalized for a different bare model".into(),
            ));
        }
        match &self.spec0 {
            None => self.spec0 = Some(ds.spec().clone()),
            Some(s0) if specs_match(s0, ds.spec()) => {}
            Some(_) => {
                return Err(Error::InconsistentInput(
                    "realizations mix interaction specs; pool seeds of one spec only".into(),
                ))
            }
        }
        let energies = self.model.bare_energies();
        let dim = ds.dim();
        self.points.reserve(self.bundle.len() * dim);
        for &row in &self.bundle {
            let eps_row = energies[row];
            let weights = ds.row_weights(row);
            for i in 0..dim {
                self.points.push((ds.lambdas()[i] - eps_row, weights[i]));
            }
            self.rows_pooled += 1;
        }
        Ok(())
    }

    /// Bin the pooled points and fit both line shapes.
    pub fn finish(self) -> Result<LdosCurve> {
        if self.rows_pooled == 0 {
            return Err(Error::invalid("no realizations were added to the LDOS"));
        }
        let spec = self.spec0.expect("rows_pooled > 0 implies a spec");
        // Bin width: the level spacing, or a tenth of the golden-rule
        // width if that is coarser.
        let gamma_fgr = if spec.sigma_w > 0.0 {
            fgr_width(spec.sigma_w, 1.0 / self.d_center, self.model.dim())
        } else {
            0.0
        };
        let bin_width = self.d_center.max(gamma_fgr / 10.0);
        let (bins, degenerate_span) = bin_points(&self.points, self.rows_pooled, bin_width);
        let fit = if degenerate_span {
            LdosFit {
                kind: ShapeKind::Lorentzian,
                width: 0.0,
                residual: 0.0,
                alt_residual: 0.0,
                degenerate: true,
            }
        } else {
            fit_line_shape(&bins, bin_width)
        };
        Ok(LdosCurve {
            center: self.center,
            points: self.points,
            rows_pooled: self.rows_pooled,
            bins,
            fit,
        })
    }
}

/// Histogram of weighted points as a density (unit integral per pooled
/// row). Returns the bins and whether the support was too narrow to bin.
fn bin_points(points: &[(f64, f64)], rows: usize, width: f64) -> (Vec<(f64, f64)>, bool) {
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > width * 1e-9) {
        return (vec![(0.5 * (lo + hi), 1.0 / width)], true);
    }
    let mut width = width;
    let mut count = ((hi - lo) / width).ceil() as usize + 1;
    const MAX_BINS: usize = 200_000;
    if count > MAX_BINS {
        width = (hi - lo) / (MAX_BINS - 1) as f64;
        count = MAX_BINS;
        log::warn!("LDOS bin width below resolution; widened to {width:.3e}");
    }
    let mut mass = vec![0.0f64; count];
    for &(x, w) in points {
        let k = (((x - lo) / width) as usize).min(count - 1);
        mass[k] += w;
    }
    let norm = 1.0 / (rows as f64 * width);
    let bins = mass
        .iter()
        .enumerate()
        .map(|(k, &m)| (lo + (k as f64 + 0.5) * width, m * norm))
        .collect();
    (bins, false)
}

/// Fit a unit-normalized Lorentzian and Gaussian to the binned density by
/// least squares over the width; keep the shape with the lower residual.
fn fit_line_shape(bins: &[(f64, f64)], resolution: f64) -> LdosFit {
    let span = bins[bins.len() - 1].0 - bins[0].0;
    let w_lo = (resolution / 10.0).max(span * 1e-12);
    let w_hi = span.max(w_lo * 10.0);
    let rms = |shape: ShapeFunction| -> f64 {
        let mut ss = 0.0;
        for &(x, d) in bins {
            let r = d - shape.eval(x);
            ss += r * r;
        }
        (ss / bins.len() as f64).sqrt()
    };
    let mut best: Option<LdosFit> = None;
    let mut residuals = [0.0f64; 2];
    for (slot, kind) in [ShapeKind::Lorentzian, ShapeKind::Gaussian].into_iter().enumerate() {
        let objective = |ln_w: f64| {
            let shape = ShapeFunction::new(kind, ln_w.exp()).expect("positive width");
            rms(shape)
        };
        let ln_w = golden_section_min(objective, w_lo.ln(), w_hi.ln(), 1e-7);
        let width = ln_w.exp();
        let residual = objective(ln_w);
        residuals[slot] = residual;
        let candidate = LdosFit {
            kind,
            width,
            residual,
            alt_residual: 0.0,
            degenerate: width <= resolution,
        };
        best = match best {
            Some(b) if b.residual <= residual => Some(b),
            _ => Some(candidate),
        };
    }
    let mut fit = best.expect("two candidate shapes");
    fit.alt_residual = if fit.kind == ShapeKind::Lorentzian { residuals[1] } else { residuals[0] };
    fit
}

/// LDOS of bare state `n` aggregated over an ensemble of realizations.
pub fn ldos(
    runs: &[DressedSystem],
    n: usize,
    bundle_half_width: usize,
    dos_total: &DosEstimate,
) -> Result<LdosCurve> {
    let first = runs.first().ok_or_else(|| Error::invalid("LDOS needs at least one run"))?;
    let mut acc = LdosAccumulator::new(first.model().clone(), n, bundle_half_width, dos_total)?;
    for ds in runs {
        acc.add_run(ds)?;
    }
    acc.finish()
}

/// Ensemble-averaged transition probabilities between bare states.
#[derive(Clone, Debug)]
pub struct TransitionMatrix {
    entries: Mat<f64>,
    n_realizations: usize,
}

impl TransitionMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_realizations(&self) -> usize {
        self.n_realizations
    }

    /// `p[m][n]`: probability of ending in `n` having started in `m`.
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.entries[(m, n)]
    }

    pub fn row(&self, m: usize) -> Vec<f64> {
        (0..self.dim()).map(|n| self.entries[(m, n)]).collect()
    }

    pub fn row_sum(&self, m: usize) -> f64 {
        (0..self.dim()).map(|n| self.entries[(m, n)]).sum()
    }
}

/// Streaming aggregator for [`TransitionMatrix`].
pub struct TransitionAccumulator {
    model: Arc<BareModel>,
    sum: Mat<f64>,
    count: usize,
    spec0: Option<InteractionSpec>,
}

impl TransitionAccumulator {
    pub fn new(model: Arc<BareModel>) -> Self {
        let n = model.dim();
        TransitionAccumulator { model, sum: Mat::zeros(n, n), count: 0, spec0: None }
    }

    pub fn add_run(&mut self, ds: &DressedSystem) -> Result<()> {
        if !models_match(&self.model, ds.model()) {
            return Err(Error::InconsistentInput(
                "realization was diagonalized for a different bare model".into(),
            ));
        }
        match &self.spec0 {
            None => self.spec0 = Some(ds.spec().clone()),
            Some(s0) if specs_match(s0, ds.spec()) => {}
            Some(_) => {
                return Err(Error::InconsistentInput(
                    "realizations mix interaction specs; pool seeds of one spec only".into(),
                ))
            }
        }
        let p = single_run_transition(ds);
        let n = self.model.dim();
        for j in 0..n {
            for i in 0..n {
                self.sum[(i, j)] += p[(i, j)];
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<TransitionMatrix> {
        if self.count == 0 {
            return Err(Error::invalid("transition matrix needs at least one run"));
        }
        let inv = 1.0 / self.count as f64;
        let n = self.sum.nrows();
        let mut entries = self.sum;
        for j in 0..n {
            for i in 0..n {
                entries[(i, j)] *= inv;
            }
        }
        Ok(TransitionMatrix { entries, n_realizations: self.count })
    }
}

/// One realization's exact transition matrix: `p = q qᵀ` with
/// `q[n][i] = |<phi_n|psi_i>|²`. The upper triangle is mirrored so symmetry
/// holds term by term, not just statistically.
fn single_run_transition(ds: &DressedSystem) -> Mat<f64> {
    let q = ds.weight_matrix();
    let mut p = &q * q.transpose();
    let n = p.nrows();
    for m in 0..n {
        for k in (m + 1)..n {
            p[(k, m)] = p[(m, k)];
        }
    }
    p
}

/// Ensemble average of the per-run transition matrices.
pub fn transition_matrix(runs: &[DressedSystem]) -> Result<TransitionMatrix> {
    let first = runs.first().ok_or_else(|| Error::invalid("no runs provided"))?;
    let mut acc = TransitionAccumulator::new(first.model().clone());
    for ds in runs {
        acc.add_run(ds)?;
    }
    acc.finish()
}

/// Single transition probability without forming the full matrix:
/// `p[m][n] = sum_i |O[m][i]|² |O[n][i]|²`, averaged over runs.
pub fn transition_entry(runs: &[DressedSystem], m: usize, n: usize) -> Result<f64> {
    if runs.is_empty() {
        return Err(Error::invalid("no runs provided"));
    }
    let mut total = 0.0;
    for ds in runs {
        let wm = ds.row_weights(m);
        let wn = ds.row_weights(n);
        total += wm.iter().zip(&wn).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(total / runs.len() as f64)
}

/// One full row `p[m][.]` averaged over runs, via a matrix-vector product
/// per run instead of the N^2 matrix.
pub fn transition_row(runs: &[DressedSystem], m: usize) -> Result<Vec<f64>> {
    let first = runs.first().ok_or_else(|| Error::invalid("no runs provided"))?;
    let dim = first.dim();
    if m >= dim {
        return Err(Error::invalid(format!("bare index {m} out of range")));
    }
    let mut row = vec![0.0f64; dim];
    for ds in runs {
        if !models_match(first.model(), ds.model()) {
            return Err(Error::InconsistentInput("runs mix bare models".into()));
        }
        let wm = ds.row_weights(m);
        match ds.overlaps() {
            MatrixData::Real(o) => {
                for i in 0..dim {
                    let w = wm[i];
                    for n in 0..dim {
                        row[n] += w * o[(n, i)] * o[(n, i)];
                    }
                }
            }
            MatrixData::Complex(o) => {
                for i in 0..dim {
                    let w = wm[i];
                    for n in 0..dim {
                        row[n] += w * o[(n, i)].norm_sqr();
                    }
                }
            }
        }
    }
    let inv = 1.0 / runs.len() as f64;
    for v in &mut row {
        *v *= inv;
    }
    Ok(row)
}

/// Effective number of dressed states participating in bare state `n`.
pub fn purity(tm: &TransitionMatrix, n: usize) -> Result<f64> {
    if n >= tm.dim() {
        return Err(Error::invalid(format!("bare index {n} out of range")));
    }
    let p = tm.get(n, n);
    if !(p > 0.0) {
        return Err(Error::NumericalFailure(format!(
            "return probability of state {n} is {p}; purity undefined"
        )));
    }
    Ok(1.0 / p)
}

/// Statistics of one overlap fourth moment `sum_i E[O_ni O*_mi O_pi O*_qi]`.
#[derive(Clone, Copy, Debug)]
pub struct TupleMoment {
    pub tuple: [usize; 4],
    pub mean: f64,
    pub std_error: f64,
    /// Whether the index pattern survives ensemble averaging: (n = m and
    /// p = q) or (n = q and m = p) always, plus (n = p and m = q) when
    /// the overlaps are real, since without conjugation phases the third
    /// pairing contributes too (it is the transition probability itself).
    pub allowed: bool,
    /// `|mean| <= 4 standard errors`.
    pub consistent_with_zero: bool,
}

#[derive(Clone, Debug)]
pub struct FourthMomentReport {
    pub n_runs: usize,
    pub tuples: Vec<TupleMoment>,
}

/// Estimate overlap fourth moments for the given index 4-tuples and test
/// them against the selection rules.
pub fn fourth_moment_checks(
    runs: &[DressedSystem],
    tuples: &[[usize; 4]],
) -> Result<FourthMomentReport> {
    if runs.len() < 20 {
        return Err(Error::invalid(format!(
            "fourth-moment statistics need >= 20 runs, got {}",
            runs.len()
        )));
    }
    let first = &runs[0];
    for ds in runs {
        if !models_match(first.model(), ds.model()) {
            return Err(Error::InconsistentInput("runs mix bare models".into()));
        }
    }
    let dim = first.dim();
    let real_overlaps = !first.overlaps().is_complex();
    let mut report = Vec::with_capacity(tuples.len());
    for &tuple in tuples {
        let [n, m, p, q] = tuple;
        if tuple.iter().any(|&k| k >= dim) {
            return Err(Error::invalid(format!("tuple {tuple:?} out of range for dim {dim}")));
        }
        let values: Vec<f64> = runs
            .iter()
            .map(|ds| {
                (0..dim)
                    .map(|i| {
                        (ds.overlap(n, i) * ds.overlap(m, i).conj() * ds.overlap(p, i)
                            * ds.overlap(q, i).conj())
                        .re
                    })
                    .sum()
            })
            .collect();
        let mean = crate::numeric::mean(&values);
        let std_error = sample_std(&values) / (values.len() as f64).sqrt();
        let allowed =
            (n == m && p == q) || (n == q && m == p) || (real_overlaps && n == p && m == q);
        let consistent_with_zero =
            if std_error > 0.0 { mean.abs() <= 4.0 * std_error } else { mean == 0.0 };
        report.push(TupleMoment { tuple, mean, std_error, allowed, consistent_with_zero });
    }
    Ok(FourthMomentReport { n_runs: runs.len(), tuples: report })
}
