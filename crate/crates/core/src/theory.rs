//! Analytic predictions for transition kernels and equilibrium occupations.
//!
//! The chain implemented here: a hybridization line shape `f` of width
//! Gamma (LDOS), its self-convolution `g` of width Gamma' (the pair
//! transition kernel), and the stationary occupation of each system level
//! obtained by integrating `g` against the environment density of states.
//! In the narrow-kernel limit the occupations reduce to a ratio of local
//! densities of states; in the wide-kernel limit they become uniform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BareModel, DosEstimate, SystemSpectrum};
use crate::numeric::trapezoid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Lorentzian,
    Gaussian,
}

/// Unit-normalized line shape. `width` is the half-width at half-maximum
/// for a Lorentzian and the standard deviation for a Gaussian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeFunction {
    kind: ShapeKind,
    width: f64,
}

impl ShapeFunction {
    pub fn new(kind: ShapeKind, width: f64) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::invalid(format!("shape width must be positive, got {width}")));
        }
        Ok(ShapeFunction { kind, width })
    }

    pub fn lorentzian(gamma: f64) -> Result<Self> {
        Self::new(ShapeKind::Lorentzian, gamma)
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(ShapeKind::Gaussian, sigma)
    }

    pub fn kind(&self) -> ShapeKind {
        self.kind
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Density at `x`; integrates to 1 over the real line.
    pub fn eval(&self, x: f64) -> f64 {
        let w = self.width;
        match self.kind {
            ShapeKind::Lorentzian => w / (std::f64::consts::PI * (x * x + w * w)),
            ShapeKind::Gaussian => {
                (-0.5 * x * x / (w * w)).exp() / (w * (2.0 * std::f64::consts::PI).sqrt())
            }
        }
    }
}

/// The pair transition kernel `g = f * f` in closed form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionKernelAnalytic {
    g: ShapeFunction,
}

impl TransitionKernelAnalytic {
    pub fn new(g: ShapeFunction) -> Self {
        TransitionKernelAnalytic { g }
    }

    pub fn g(&self) -> &ShapeFunction {
        &self.g
    }

    pub fn gamma_prime(&self) -> f64 {
        self.g.width
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.g.eval(x)
    }
}

/// Self-convolution width rules: a Lorentzian of HWHM Gamma convolved with
/// itself is a Lorentzian of HWHM 2 Gamma; a Gaussian of std Gamma gives a
/// Gaussian of std sqrt(2) Gamma.
pub fn self_convolve(f: &ShapeFunction) -> TransitionKernelAnalytic {
    let width = match f.kind {
        ShapeKind::Lorentzian => 2.0 * f.width,
        ShapeKind::Gaussian => std::f64::consts::SQRT_2 * f.width,
    };
    TransitionKernelAnalytic::new(ShapeFunction { kind: f.kind, width })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeLabel {
    LocalMicrocanonical,
    Crossover,
    Global,
}

/// Predicted stationary occupation of the system levels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquilibriumPrediction {
    /// System levels, ascending (same order as `SystemSpectrum::levels`).
    pub levels: Vec<f64>,
    /// Probabilities per level, renormalized to sum to 1 exactly.
    pub probs: Vec<f64>,
    /// The normalizing integral before renormalization.
    pub partition_value: f64,
    /// `1 - sum(raw probabilities)`: the quadrature/renormalization defect.
    pub normalization_defect: f64,
    /// Kernel width the prediction used, when one was involved.
    pub gamma_prime: Option<f64>,
    pub regime: Option<RegimeLabel>,
}

impl EquilibriumPrediction {
    fn renormalized(
        levels: Vec<f64>,
        raw: Vec<f64>,
        partition_value: f64,
        gamma_prime: Option<f64>,
        regime: Option<RegimeLabel>,
    ) -> Result<Self> {
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "equilibrium weights sum to {total}; cannot normalize"
            )));
        }
        let probs = raw.iter().map(|&p| p / total).collect();
        Ok(EquilibriumPrediction {
            levels,
            probs,
            partition_value,
            normalization_defect: 1.0 - total,
            gamma_prime,
            regime,
        })
    }

    /// Probability of the level closest to `eps_s`.
    pub fn prob_at(&self, eps_s: f64) -> f64 {
        let (k, _) = self
            .levels
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - eps_s).abs().partial_cmp(&(b.1 - eps_s).abs()).unwrap())
            .expect("prediction has at least one level");
        self.probs[k]
    }
}

/// Regime thresholds: the kernel is "narrow" relative to the temperature
/// scale when `Gamma' < kT/5` and "wide" when `Gamma' > kT`.
pub fn classify_regime(gamma_prime: f64, k_t: f64) -> RegimeLabel {
    if gamma_prime < k_t / 5.0 {
        RegimeLabel::LocalMicrocanonical
    } else if gamma_prime > k_t {
        RegimeLabel::Global
    } else {
        RegimeLabel::Crossover
    }
}

/// `∫ rho(eps) g(center - eps) d eps` by trapezoid on a grid fine enough to
/// resolve the kernel (step <= width/20), interpolating the DOS estimate.
pub fn kernel_dos_integral(
    dos: &DosEstimate,
    g: &ShapeFunction,
    center: f64,
) -> Result<f64> {
    let grid = dos.grid();
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    let native = (hi - lo) / (grid.len() - 1) as f64;
    let mut step = native.min(g.width / 20.0);
    // Bound the work for pathologically narrow kernels.
    const MAX_POINTS: usize = 4_000_000;
    let span = hi - lo;
    if span / step > MAX_POINTS as f64 {
        step = span / MAX_POINTS as f64;
        log::warn!(
            "kernel width {:.3e} below quadrature resolution; clamping step to {step:.3e}",
            g.width
        );
    }
    let n = (span / step).ceil() as usize + 1;
    let xs = crate::numeric::linspace(lo, hi, n.max(2));
    let ys: Vec<f64> = xs.iter().map(|&x| dos.eval(x).unwrap_or(0.0) * g.eval(center - x)).collect();
    Ok(trapezoid(&xs, &ys))
}

/// Continuous approximation of the average transition probability
/// `m -> n`: the kernel value at the energy difference over its
/// DOS-weighted normalizer. Warns when the kernel is too narrow for the
/// continuous approximation (`Gamma' < 3 D`).
pub fn predict_transition(
    bare: &BareModel,
    g: &TransitionKernelAnalytic,
    m: usize,
    n: usize,
    dos_total: &DosEstimate,
) -> Result<f64> {
    let energies = bare.bare_energies();
    if m >= energies.len() || n >= energies.len() {
        return Err(Error::invalid(format!("bare index out of range: m={m}, n={n}")));
    }
    let eps_m = energies[m];
    if let Ok(rho) = dos_total.eval(eps_m) {
        if rho > 0.0 && g.gamma_prime() < 3.0 / rho {
            log::warn!(
                "kernel width {:.3e} < 3 levels spacings {:.3e}: continuous approximation invalid",
                g.gamma_prime(),
                1.0 / rho
            );
        }
    }
    let den = kernel_dos_integral(dos_total, g.g(), eps_m)?;
    if !(den > 0.0) {
        return Err(Error::NumericalFailure("transition normalizer vanished".into()));
    }
    Ok(g.eval(eps_m - energies[n]) / den)
}

/// Full predicted transition row `m -> n` for every bare state `n`,
/// sharing the single DOS-weighted normalizer across the row.
pub fn predict_transition_row(
    bare: &BareModel,
    g: &TransitionKernelAnalytic,
    m: usize,
    dos_total: &DosEstimate,
) -> Result<Vec<f64>> {
    let energies = bare.bare_energies();
    let eps_m = energies
        .get(m)
        .copied()
        .ok_or_else(|| Error::invalid(format!("bare index {m} out of range")))?;
    let den = kernel_dos_integral(dos_total, g.g(), eps_m)?;
    if !(den > 0.0) {
        return Err(Error::NumericalFailure("transition normalizer vanished".into()));
    }
    Ok(energies.iter().map(|&eps_n| g.eval(eps_m - eps_n) / den).collect())
}

/// Stationary occupation of each system level for initial bare state `m`:
/// numerator `∫ rho_e(e) g(eps_m - eps_s - e) de`, shared denominator
/// `∫ rho_total(eps) g(eps_m - eps) d eps`. The result is renormalized and
/// the pre-normalization defect reported.
pub fn predict_equilibrium(
    bare: &BareModel,
    g: &TransitionKernelAnalytic,
    m: usize,
    dos_env: &DosEstimate,
    dos_total: &DosEstimate,
) -> Result<EquilibriumPrediction> {
    let eps_m = bare
        .bare_energies()
        .get(m)
        .copied()
        .ok_or_else(|| Error::invalid(format!("bare index {m} out of range")))?;
    let levels = bare.sys().levels().to_vec();
    let den = kernel_dos_integral(dos_total, g.g(), eps_m)?;
    if !(den > 0.0) {
        return Err(Error::NumericalFailure("partition integral vanished".into()));
    }
    let raw: Vec<f64> = levels
        .iter()
        .map(|&eps_s| kernel_dos_integral(dos_env, g.g(), eps_m - eps_s).map(|v| v / den))
        .collect::<Result<_>>()?;
    let regime = regime_for(dos_env, eps_m, &levels, g.gamma_prime());
    EquilibriumPrediction::renormalized(levels, raw, den, Some(g.gamma_prime()), regime)
}

/// Regime of a prediction: compare the kernel width against the local
/// temperature scale `kT = 1/max |beta|` probed at the exposed environment
/// energies.
fn regime_for(
    dos_env: &DosEstimate,
    eps_m: f64,
    levels: &[f64],
    gamma_prime: f64,
) -> Option<RegimeLabel> {
    let mut max_beta: f64 = 0.0;
    let mut any = false;
    for &eps_s in levels {
        if let Ok(beta) = local_temperature(dos_env, eps_m - eps_s) {
            max_beta = max_beta.max(beta.abs());
            any = true;
        }
    }
    if !any {
        return None;
    }
    if max_beta == 0.0 {
        return Some(RegimeLabel::LocalMicrocanonical);
    }
    Some(classify_regime(gamma_prime, 1.0 / max_beta))
}

/// Narrow-kernel limit: occupations proportional to the environment DOS at
/// the released energy, `p(eps_s) ∝ rho_e(eps_m - eps_s)`.
pub fn predict_local_microcanonical(
    bare: &BareModel,
    m: usize,
    dos_env: &DosEstimate,
    dos_total: &DosEstimate,
) -> Result<EquilibriumPrediction> {
    let eps_m = bare
        .bare_energies()
        .get(m)
        .copied()
        .ok_or_else(|| Error::invalid(format!("bare index {m} out of range")))?;
    let levels = bare.sys().levels().to_vec();
    let rho_total = dos_total.eval(eps_m)?;
    if !(rho_total > 0.0) {
        return Err(Error::OutOfSupport(format!("total DOS vanishes at {eps_m}")));
    }
    let raw: Vec<f64> =
        levels.iter().map(|&eps_s| dos_env.eval(eps_m - eps_s).unwrap_or(0.0) / rho_total).collect();
    if raw.iter().all(|&p| p == 0.0) {
        return Err(Error::OutOfSupport(format!(
            "no system level leaves eps_m = {eps_m} inside the environment spectrum"
        )));
    }
    EquilibriumPrediction::renormalized(
        levels,
        raw,
        rho_total,
        None,
        Some(RegimeLabel::LocalMicrocanonical),
    )
}

/// Boltzmann weights at inverse temperature `beta` (k = 1), max-shifted
/// against overflow.
pub fn predict_canonical(sys: &SystemSpectrum, beta: f64) -> Result<EquilibriumPrediction> {
    if !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be finite, got {beta}")));
    }
    let levels = sys.levels().to_vec();
    let shift = levels.iter().map(|&e| -beta * e).fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = levels.iter().map(|&e| (-beta * e - shift).exp()).collect();
    let z = shifted.iter().sum::<f64>() * shift.exp();
    let mut pred = EquilibriumPrediction::renormalized(levels, shifted, z, None, None)?;
    // The shifted weights already sum to their own normalizer; there is no
    // quadrature here, so no defect to report.
    pred.normalization_defect = 0.0;
    Ok(pred)
}

/// Inverse temperature `beta = d ln rho_e / d eps` by central difference
/// with step equal to the DOS bandwidth.
pub fn local_temperature(dos_env: &DosEstimate, at: f64) -> Result<f64> {
    let h = dos_env.bandwidth();
    let lo = dos_env.eval(at - h)?;
    let hi = dos_env.eval(at + h)?;
    if !(lo > 0.0) || !(hi > 0.0) {
        return Err(Error::OutOfSupport(format!(
            "environment DOS not positive around {at} (stencil step {h})"
        )));
    }
    Ok((hi.ln() - lo.ln()) / (2.0 * h))
}

/// Voigt profile: convolution of a unit Gaussian (std `sigma`) and a unit
/// Lorentzian (HWHM `gamma`) evaluated at `x` by trapezoid quadrature on
/// `[x - 8 sigma - 40 gamma, x + 8 sigma + 40 gamma]` with step
/// `min(sigma, gamma)/20`. Degenerate width ratios fall back to the single
/// surviving shape.
pub fn voigt_profile(sigma: f64, gamma: f64, x: f64) -> Result<f64> {
    voigt_profile_with_step(sigma, gamma, x, None)
}

/// As [`voigt_profile`] but with an explicit step override; used by
/// refinement checks.
pub fn voigt_profile_with_step(
    sigma: f64,
    gamma: f64,
    x: f64,
    step: Option<f64>,
) -> Result<f64> {
    if sigma < 0.0 || gamma < 0.0 || !sigma.is_finite() || !gamma.is_finite() {
        return Err(Error::invalid(format!("voigt widths must be >= 0, got ({sigma}, {gamma})")));
    }
    if sigma == 0.0 && gamma == 0.0 {
        return Err(Error::invalid("voigt profile needs at least one positive width"));
    }
    // One width negligible against the other: the convolution is the wider
    // shape to well below the quadrature tolerance.
    const NEGLIGIBLE: f64 = 1e-7;
    if gamma <= NEGLIGIBLE * sigma {
        return Ok(ShapeFunction::gaussian(sigma)?.eval(x));
    }
    if sigma <= NEGLIGIBLE * gamma {
        return Ok(ShapeFunction::lorentzian(gamma)?.eval(x));
    }
    let lorentz = ShapeFunction::lorentzian(gamma)?;
    let gauss = ShapeFunction::gaussian(sigma)?;
    let half = 8.0 * sigma + 40.0 * gamma;
    let step = step.unwrap_or_else(|| sigma.min(gamma) / 20.0);
    let n = ((2.0 * half / step).ceil() as usize + 1).max(3);
    let xs = crate::numeric::linspace(x - half, x + half, n);
    let ys: Vec<f64> = xs.iter().map(|&u| lorentz.eval(u) * gauss.eval(x - u)).collect();
    Ok(trapezoid(&xs, &ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        build_bare_model, build_environment_spectrum, estimate_dos_auto, DosModel, EnvMode,
    };
    use crate::numeric::linspace;

    fn embedded_qubit_bare(dim_env: usize) -> BareModel {
        let sys = SystemSpectrum::two_level(2.0).unwrap();
        let env = build_environment_spectrum(
            &DosModel::Gaussian { sigma: 1.0 },
            dim_env,
            EnvMode::Quantile,
            0,
        )
        .unwrap();
        build_bare_model(sys, env)
    }

    /// Bare index of the initial state: system excited, environment at the
    /// level closest to zero energy.
    fn excited_mid_index(bare: &BareModel) -> usize {
        let env = bare.env().levels();
        let e_mid = (0..env.len()).min_by(|&a, &b| {
            env[a].abs().partial_cmp(&env[b].abs()).unwrap()
        }).unwrap();
        bare.fuse_index(1, e_mid)
    }

    #[test]
    fn shape_functions_are_unit_normalized() {
        for f in [ShapeFunction::lorentzian(0.15).unwrap(), ShapeFunction::gaussian(0.4).unwrap()]
        {
            let xs = linspace(-400.0, 400.0, 2_000_001);
            let ys: Vec<f64> = xs.iter().map(|&x| f.eval(x)).collect();
            let total = trapezoid(&xs, &ys);
            assert!((total - 1.0).abs() < 1e-3, "{:?}: {total}", f.kind());
        }
    }

    #[test]
    fn lorentzian_width_is_half_width_at_half_maximum() {
        let f = ShapeFunction::lorentzian(0.3).unwrap();
        assert!((f.eval(0.3) - 0.5 * f.eval(0.0)).abs() < 1e-15);
    }

    #[test]
    fn self_convolve_width_rules_exact() {
        let l = self_convolve(&ShapeFunction::lorentzian(0.1).unwrap());
        assert_eq!(l.g().kind(), ShapeKind::Lorentzian);
        assert_eq!(l.gamma_prime(), 0.2);
        let g = self_convolve(&ShapeFunction::gaussian(0.1).unwrap());
        assert_eq!(g.g().kind(), ShapeKind::Gaussian);
        assert_eq!(g.gamma_prime(), 0.1 * std::f64::consts::SQRT_2);
    }

    /// Independent check of the closed-form self-convolutions: direct
    /// trapezoid convolution on a wide, fine grid.
    #[test]
    fn self_convolve_matches_numerical_convolution() {
        for f in [ShapeFunction::lorentzian(0.1).unwrap(), ShapeFunction::gaussian(0.1).unwrap()]
        {
            let g = self_convolve(&f);
            let half = 200.0 * f.width();
            let n = (2.0 * half / (f.width() / 50.0)) as usize + 1;
            let us = linspace(-half, half, n);
            let mut worst: f64 = 0.0;
            for &x in linspace(-2.0, 2.0, 161).iter() {
                let ys: Vec<f64> = us.iter().map(|&u| f.eval(u) * f.eval(x - u)).collect();
                let direct = trapezoid(&us, &ys);
                worst = worst.max((direct - g.eval(x)).abs());
            }
            assert!(worst < 1e-6, "{:?}: sup error {worst}", f.kind());
        }
    }

    #[test]
    fn voigt_gaussian_limit() {
        let g = ShapeFunction::gaussian(1.0).unwrap();
        for &x in &[0.0, 0.7, 2.5] {
            let v0 = voigt_profile(1.0, 0.0, x).unwrap();
            let v_small = voigt_profile(1.0, 1e-9, x).unwrap();
            assert!((v0 - g.eval(x)).abs() < 1e-4);
            assert!((v_small - g.eval(x)).abs() < 1e-4);
        }
    }

    #[test]
    fn voigt_lorentzian_limit() {
        let l = ShapeFunction::lorentzian(0.5).unwrap();
        for &x in &[0.0, 0.3, 4.0] {
            let v0 = voigt_profile(0.0, 0.5, x).unwrap();
            let v_small = voigt_profile(1e-9, 0.5, x).unwrap();
            assert!((v0 - l.eval(x)).abs() < 1e-4);
            assert!((v_small - l.eval(x)).abs() < 1e-4);
        }
    }

    #[test]
    fn voigt_self_refinement() {
        let coarse = voigt_profile(1.0, 0.5, 0.0).unwrap();
        let fine = voigt_profile_with_step(1.0, 0.5, 0.0, Some(0.5 / 200.0)).unwrap();
        assert!((coarse - fine).abs() < 1e-5, "coarse {coarse} vs fine {fine}");
    }

    #[test]
    fn voigt_unit_normalization_with_tail_correction() {
        let (sigma, gamma) = (1.0, 0.5);
        let half = 8.0 * sigma + 40.0 * gamma;
        let xs = linspace(-half, half, 8001);
        let ys: Vec<f64> =
            xs.iter().map(|&x| voigt_profile(sigma, gamma, x).unwrap()).collect();
        let inside = trapezoid(&xs, &ys);
        // Beyond the window the profile is Lorentzian-tailed; add that mass.
        let tail = 1.0 - (2.0 / std::f64::consts::PI) * (half / gamma).atan();
        let total = inside + tail;
        assert!((total - 1.0).abs() < 1e-4, "total {total}");
    }

    #[test]
    fn voigt_rejects_double_zero() {
        assert!(voigt_profile(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn local_temperature_gaussian_dos() {
        let env = build_environment_spectrum(
            &DosModel::Gaussian { sigma: 1.0 },
            4096,
            EnvMode::Quantile,
            0,
        )
        .unwrap();
        let dos = estimate_dos_auto(env.levels()).unwrap();
        assert!(local_temperature(&dos, 0.0).unwrap().abs() < 0.01);
        for &at in &[0.8, -0.8, 1.5] {
            let beta = local_temperature(&dos, at).unwrap();
            let expect = -at; // d ln rho / d eps of a unit Gaussian
            assert!(
                (beta - expect).abs() / expect.abs() < 0.05,
                "beta({at}) = {beta}, want {expect}"
            );
        }
    }

    /// Exponential DOS on a finite band: quantile levels of
    /// `rho(e) ∝ exp(beta e)` on [0, L].
    fn exponential_levels(beta: f64, band: f64, dim: usize) -> Vec<f64> {
        (1..=dim)
            .map(|k| {
                let u = (k as f64 - 0.5) / dim as f64;
                (1.0 + u * ((beta * band).exp() - 1.0)).ln() / beta
            })
            .collect()
    }

    #[test]
    fn local_temperature_exponential_dos() {
        let levels = exponential_levels(1.0, 4.0, 4096);
        let dos = estimate_dos_auto(&levels).unwrap();
        for &at in &[1.5, 2.0, 2.5] {
            let beta = local_temperature(&dos, at).unwrap();
            assert!((beta - 1.0).abs() < 0.05, "beta({at}) = {beta}");
        }
    }

    #[test]
    fn canonical_closed_forms() {
        let sys = SystemSpectrum::two_level(2.0).unwrap();
        let flat = predict_canonical(&sys, 0.0).unwrap();
        assert!((flat.probs[0] - 0.5).abs() < 1e-15);
        assert!((flat.probs[1] - 0.5).abs() < 1e-15);
        let p = predict_canonical(&sys, 1.0).unwrap();
        let upper = 1.0 / (1.0 + (2.0f64).exp());
        assert!((p.probs[1] - upper).abs() < 1e-14, "{} vs {upper}", p.probs[1]);
        // Extreme beta must not overflow the weights.
        let cold = predict_canonical(&sys, 2000.0).unwrap();
        assert!((cold.probs[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_matches_local_microcanonical_on_exponential_dos() {
        // On an exponential environment DOS the released-energy ratio is a
        // Boltzmann factor, so the two predictions must agree.
        let beta = 1.0;
        let levels = exponential_levels(beta, 4.0, 4096);
        let sys = SystemSpectrum::new(vec![-0.25, 0.25]).unwrap();
        let env = build_environment_spectrum(
            &DosModel::Explicit { levels: levels.clone() },
            4096,
            EnvMode::Quantile,
            0,
        )
        .unwrap();
        let bare = build_bare_model(sys.clone(), env);
        let dos_env = estimate_dos_auto(bare.env().levels()).unwrap();
        let dos_total = estimate_dos_auto(bare.bare_energies()).unwrap();
        // Initial state: upper system level, environment mid-band.
        let e_mid = bare.env().levels().iter().position(|&e| e > 2.0).unwrap();
        let m = bare.fuse_index(1, e_mid);
        let micro = predict_local_microcanonical(&bare, m, &dos_env, &dos_total).unwrap();
        let beta_fit = local_temperature(&dos_env, bare.bare_energies()[m] - 0.25).unwrap();
        let canonical = predict_canonical(&sys, beta_fit).unwrap();
        for (a, b) in micro.probs.iter().zip(&canonical.probs) {
            assert!((a - b).abs() / b < 0.01, "micro {a} vs canonical {b}");
        }
    }

    #[test]
    fn local_microcanonical_embedded_qubit_value() {
        let bare = embedded_qubit_bare(1024);
        let dos_env = estimate_dos_auto(bare.env().levels()).unwrap();
        let dos_total = estimate_dos_auto(bare.bare_energies()).unwrap();
        let m = excited_mid_index(&bare);
        let pred = predict_local_microcanonical(&bare, m, &dos_env, &dos_total).unwrap();
        // Staying excited releases ~0 into the environment; de-exciting
        // releases the gap. The upper-level weight is 1/(1 + e^{-2}).
        let expect = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((pred.prob_at(1.0) - expect).abs() < 0.01, "{} vs {expect}", pred.prob_at(1.0));
        assert_eq!(pred.regime, Some(RegimeLabel::LocalMicrocanonical));
    }

    #[test]
    fn local_microcanonical_degenerate_system_is_equiprobable() {
        let sys = SystemSpectrum::new(vec![0.0, 0.0]).unwrap();
        let env = build_environment_spectrum(
            &DosModel::Gaussian { sigma: 1.0 },
            512,
            EnvMode::Quantile,
            0,
        )
        .unwrap();
        let bare = build_bare_model(sys, env);
        let dos_env = estimate_dos_auto(bare.env().levels()).unwrap();
        let dos_total = estimate_dos_auto(bare.bare_energies()).unwrap();
        let pred = predict_local_microcanonical(&bare, 100, &dos_env, &dos_total).unwrap();
        assert!((pred.probs[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn local_microcanonical_closed_form_vs_kernel_estimate() {
        let bare = embedded_qubit_bare(2048);
        let dos_env = estimate_dos_auto(bare.env().levels()).unwrap();
        let dos_total = estimate_dos_auto(bare.bare_energies()).unwrap();
        let m = excited_mid_index(&bare);
        let pred = predict_local_microcanonical(&bare, m, &dos_env, &dos_total).unwrap();
        // Closed form from the generating Gaussian density.
        let phi = |x: f64| (-0.5 * x * x).exp();
        let expect_upper = phi(0.0) / (phi(0.0) + phi(2.0));
        assert!(
            (pred.prob_at(1.0) - expect_upper).abs() / expect_upper < 0.02,
            "{} vs {expect_upper}",
            pred.prob_at(1.0)
        );
    }

    #[test]
    fn local_microcanonical_out_of_support_errors() {
        let bare = embedded_qubit_bare(256);
        // Environment DOS estimated only on [2.5, 4]: both released
        // energies (~0 and ~2) fall outside its support.
        let dos_env = crate::model::estimate_dos(
            bare.env().levels(),
            &linspace(2.5, 4.0, 301),
            0.05,
        )
        .unwrap();
        let dos_total = estimate_dos_auto(bare.bare_energies()).unwrap();
        let m = excited_mid_index(&bare);
        assert!(matches!(
            predict_local_microcanonical(&bare, m, &dos_env, &dos_total),
            Err(Error::OutOfSupport(_))
        ));
    }

    #[test]
    fn equilibrium_narrow_kernel_reduces_to_local_microcanonical() {
        let bare = embedded_qubit_bare(1024);
        let dos_env = estimate_dos_auto(bare.env().levels()).unwrap();
        let dos_total = estimate_dos_auto(bare.bare_energies()).unwrap();
        let m = excited_mid_index(&bare);
        let micro = predict_local_microcanonical(&bare, m, &dos_env, &dos_total).unwrap();
        let g = TransitionKernelAnalytic::new(ShapeFunction::gaussian(1e-3).unwrap());
        let pred = predict_equilibrium(&bare, &g, m, &dos_env, &dos_total).unwrap();
        let sup = pred
            .probs
            .iter()
            .zip(&micro.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(sup < 1e-3, "sup distance {sup}");
        assert_eq!(pred.regime, Some(RegimeLabel::LocalMicrocanonical));
    }

    #[test]
    fn equilibrium_wide_kernel_is_uniform() {
        let bare = embedded_qubit_bare(512);
        let dos_env = estimate_dos_auto(bare.env().levels()).unwrap();
        let dos_total = estimate_dos_auto(bare.bare_energies()).unwrap();
        let m = excited_mid_index(&bare);
        let g = TransitionKernelAnalytic::new(ShapeFunction::lorentzian(1e3).unwrap());
        let pred = predict_equilibrium(&bare, &g, m, &dos_env, &dos_total).unwrap();
        for &p in &pred.probs {
            assert!((p - 0.5).abs() < 1e-3, "p = {p}");
        }
        assert_eq!(pred.regime, Some(RegimeLabel::Global));
    }

    #[test]
    fn equilibrium_probabilities_sum_to_one_and_report_defect() {
        let bare = embedded_qubit_bare(512);
        let dos_env = estimate_dos_auto(bare.env().levels()).unwrap();
        let dos_total = estimate_dos_auto(bare.bare_energies()).unwrap();
        let m = excited_mid_index(&bare);
        let g = TransitionKernelAnalytic::new(ShapeFunction::lorentzian(0.2).unwrap());
        let pred = predict_equilibrium(&bare, &g, m, &dos_env, &dos_total).unwrap();
        assert!((pred.probs.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(pred.normalization_defect.abs() < 0.05, "defect {}", pred.normalization_defect);
        assert!(pred.partition_value > 0.0);
    }

    #[test]
    fn equilibrium_contrast_is_monotone_in_kernel_width() {
        let bare = embedded_qubit_bare(512);
        let dos_env = estimate_dos_auto(bare.env().levels()).unwrap();
        let dos_total = estimate_dos_auto(bare.bare_energies()).unwrap();
        let m = excited_mid_index(&bare);
        let mut last = f64::INFINITY;
        for k in 0..9 {
            let gp = 0.01 * (10.0f64).powf(k as f64 * 0.375); // 0.01 .. ~10
            let g = TransitionKernelAnalytic::new(ShapeFunction::lorentzian(gp).unwrap());
            let pred = predict_equilibrium(&bare, &g, m, &dos_env, &dos_total).unwrap();
            let contrast = (pred.prob_at(1.0) - 0.5).abs();
            assert!(contrast <= last + 1e-9, "contrast rose at gamma' = {gp}");
            last = contrast;
        }
    }

    #[test]
    fn transition_prediction_peaks_on_resonance_and_sums_to_one() {
        let bare = embedded_qubit_bare(1024);
        let dos_total = estimate_dos_auto(bare.bare_energies()).unwrap();
        let m = excited_mid_index(&bare);
        let g = TransitionKernelAnalytic::new(ShapeFunction::lorentzian(0.1).unwrap());
        let den = kernel_dos_integral(&dos_total, g.g(), bare.bare_energies()[m]).unwrap();
        let p_self = predict_transition(&bare, &g, m, m, &dos_total).unwrap();
        assert!((p_self - g.eval(0.0) / den).abs() < 1e-15);
        let mut total = 0.0;
        let mut max_p = 0.0f64;
        for n in 0..bare.dim() {
            let p = g.eval(bare.bare_energies()[m] - bare.bare_energies()[n]) / den;
            total += p;
            max_p = max_p.max(p);
        }
        assert!((total - 1.0).abs() < 1e-3, "sum {total}");
        assert!((max_p - p_self).abs() < 1e-15, "peak is not at the initial state");
    }

    #[test]
    fn flat_environment_gives_equiprobable_bulk() {
        let sys = SystemSpectrum::two_level(2.0).unwrap();
        let levels: Vec<f64> = linspace(-50.0, 50.0, 2048);
        let env = build_environment_spectrum(
            &DosModel::Explicit { levels: levels.clone() },
            2048,
            EnvMode::Quantile,
            0,
        )
        .unwrap();
        let bare = build_bare_model(sys, env);
        let dos_env = estimate_dos_auto(bare.env().levels()).unwrap();
        let dos_total = estimate_dos_auto(bare.bare_energies()).unwrap();
        let m = bare.fuse_index(1, 1024); // deep in the bulk
        let g = TransitionKernelAnalytic::new(ShapeFunction::lorentzian(0.5).unwrap());
        let pred = predict_equilibrium(&bare, &g, m, &dos_env, &dos_total).unwrap();
        assert!((pred.prob_at(1.0) - 0.5).abs() < 2e-3, "{}", pred.prob_at(1.0));
    }

    #[test]
    fn classify_regime_thresholds() {
        assert_eq!(classify_regime(0.1, 1.0), RegimeLabel::LocalMicrocanonical);
        assert_eq!(classify_regime(0.5, 1.0), RegimeLabel::Crossover);
        assert_eq!(classify_regime(1.5, 1.0), RegimeLabel::Global);
    }
}
