//! Experiment configuration: one JSON document drives a whole run.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ensembles::{bimodal_spectrum, EnsembleKind, InteractionSpec, RotationGroup};
use crate::error::{Error, Result};
use crate::model::{
    build_bare_model, build_environment_spectrum, BareModel, DosModel, EnvMode, SystemSpectrum,
};
use crate::numeric::linspace;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub interaction: InteractionBlock,
    #[serde(default)]
    pub initial: InitialBlock,
    #[serde(default)]
    pub sweep: SweepBlock,
    #[serde(default)]
    pub dynamics: DynamicsBlock,
    #[serde(default)]
    pub ldos: LdosBlock,
    #[serde(default)]
    pub transitions: TransitionsBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub system: SystemBlock,
    pub environment: EnvironmentBlock,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub levels: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentBlock {
    pub dos: DosModel,
    #[serde(default = "default_env_dim")]
    pub dim: usize,
    #[serde(default = "default_env_mode")]
    pub mode: EnvMode,
    #[serde(default)]
    pub seed: u64,
}

fn default_env_dim() -> usize {
    1024
}

fn default_env_mode() -> EnvMode {
    EnvMode::Quantile
}

/// The interaction ensemble minus the seed; seeds come from the sweep
/// block so one config describes the whole ensemble.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionBlock {
    pub kind: EnsembleKind,
    pub sigma_w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_half_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rrm_spectrum: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_group: Option<RotationGroup>,
}

impl InteractionBlock {
    /// Concrete sampling spec for one sweep cell. `dim` sizes the default
    /// random-rotation spectrum when none is given explicitly.
    pub fn to_spec(&self, sigma_w: f64, seed: u64, dim: usize) -> Result<InteractionSpec> {
        let spec = match self.kind {
            EnsembleKind::Goe => InteractionSpec::goe(sigma_w, seed),
            EnsembleKind::Wbrm => {
                let b = self.band_half_width.ok_or_else(|| {
                    Error::config("interaction.band_half_width", "required for banded matrices")
                })?;
                InteractionSpec::wbrm(sigma_w, b, seed)
            }
            EnsembleKind::Rrm => {
                // Materialize the spectrum so the `InteractionSpec` (and
                // hence the cache key) pins the exact matrix ensemble.
                let q = match &self.rrm_spectrum {
                    Some(q) => q.clone(),
                    None => bimodal_spectrum(dim, sigma_w),
                };
                let group = self.rotation_group.unwrap_or(RotationGroup::Orthogonal);
                let mut spec = InteractionSpec::rrm(sigma_w, group, seed);
                spec.rrm_spectrum = Some(q);
                spec
            }
        };
        spec.validate(dim)?;
        Ok(spec)
    }
}

/// Which bare product state the evolution starts from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    /// System level index (0 = lowest).
    pub sys_level: usize,
    /// The environment level nearest this energy completes the product.
    pub env_energy: f64,
}

impl Default for InitialBlock {
    fn default() -> Self {
        InitialBlock { sys_level: 1, env_energy: 0.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default = "default_sigma_w_grid")]
    pub sigma_w_grid: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        SweepBlock {
            sigma_w_grid: default_sigma_w_grid(),
            seeds: default_seeds(),
            dims: default_dims(),
        }
    }
}

/// 16 logarithmic points covering the weak-to-strong crossover.
fn default_sigma_w_grid() -> Vec<f64> {
    linspace(0.02f64.ln(), 2.0f64.ln(), 16).into_iter().map(f64::exp).collect()
}

fn default_seeds() -> Vec<u64> {
    (0..8).collect()
}

fn default_dims() -> Vec<usize> {
    vec![256, 512, 1024]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsBlock {
    pub t_max: f64,
    pub n_times: usize,
    /// Plateau window `[lo, hi]` for long-time statistics.
    pub window: (f64, f64),
}

impl Default for DynamicsBlock {
    fn default() -> Self {
        DynamicsBlock { t_max: 200.0, n_times: 400, window: (100.0, 200.0) }
    }
}

impl DynamicsBlock {
    pub fn time_grid(&self) -> Vec<f64> {
        linspace(0.0, self.t_max, self.n_times)
    }
}

/// A bare product state, either by explicit composite index or by system
/// level plus target environment energy (nearest level wins).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSelector {
    Index { index: usize },
    Level { sys_level: usize, #[serde(default)] env_energy: f64 },
}

impl StateSelector {
    pub fn resolve(&self, model: &BareModel) -> Result<usize> {
        match *self {
            StateSelector::Index { index } => {
                if index >= model.dim() {
                    return Err(Error::invalid(format!(
                        "bare index {index} out of range for dimension {}",
                        model.dim()
                    )));
                }
                Ok(index)
            }
            StateSelector::Level { sys_level, env_energy } => {
                resolve_product_state(model, sys_level, env_energy)
            }
        }
    }
}

/// Composite index of `|sys_level> x |env level nearest env_energy>`.
pub fn resolve_product_state(model: &BareModel, sys_level: usize, env_energy: f64) -> Result<usize> {
    if sys_level >= model.dim_sys() {
        return Err(Error::invalid(format!(
            "system level {sys_level} out of range for {} levels",
            model.dim_sys()
        )));
    }
    let env = model.env().levels();
    let e = (0..env.len())
        .min_by(|&a, &b| {
            (env[a] - env_energy).abs().partial_cmp(&(env[b] - env_energy).abs()).unwrap()
        })
        .expect("environment has at least one level");
    Ok(model.fuse_index(sys_level, e))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdosBlock {
    #[serde(default = "default_targets")]
    pub targets: Vec<StateSelector>,
    /// Pool bare states within this many mean level spacings.
    #[serde(default = "default_bundle_half_width")]
    pub bundle_half_width: usize,
}

impl Default for LdosBlock {
    fn default() -> Self {
        LdosBlock { targets: default_targets(), bundle_half_width: default_bundle_half_width() }
    }
}

fn default_targets() -> Vec<StateSelector> {
    vec![StateSelector::Level { sys_level: 1, env_energy: 0.0 }]
}

fn default_bundle_half_width() -> usize {
    4
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionsBlock {
    #[serde(default = "default_targets")]
    pub rows: Vec<StateSelector>,
    /// Largest composite dimension the command accepts.
    #[serde(default = "default_transitions_cap")]
    pub cap: usize,
}

impl Default for TransitionsBlock {
    fn default() -> Self {
        TransitionsBlock { rows: default_targets(), cap: default_transitions_cap() }
    }
}

fn default_transitions_cap() -> usize {
    2048
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// Default output directory; the CLI `--out` flag overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { directory: None, formats: default_formats() }
    }
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "svg".into()]
}

impl OutputBlock {
    pub fn wants_svg(&self) -> bool {
        self.formats.iter().any(|f| f == "svg")
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<document>", format!("cannot read {path:?}: {e}")))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::config("<document>", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Semantic validation beyond the schema; errors carry the JSON path.
    pub fn validate(&self) -> Result<()> {
        let levels = &self.model.system.levels;
        if levels.is_empty() {
            return Err(Error::config("model.system.levels", "must be non-empty"));
        }
        if levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::config("model.system.levels", "levels must be finite"));
        }
        if self.model.environment.dim < 2 {
            return Err(Error::config("model.environment.dim", "needs at least 2 levels"));
        }
        if !(self.interaction.sigma_w >= 0.0) {
            return Err(Error::config("interaction.sigma_w", "must be >= 0"));
        }
        if self.interaction.kind != EnsembleKind::Rrm && self.interaction.rrm_spectrum.is_some() {
            return Err(Error::config(
                "interaction.rrm_spectrum",
                "only meaningful for kind = rrm",
            ));
        }
        if self.sweep.sigma_w_grid.is_empty() {
            return Err(Error::config("sweep.sigma_w_grid", "must be non-empty"));
        }
        if self.sweep.sigma_w_grid.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("sweep.sigma_w_grid", "entries must be >= 0"));
        }
        if self.sweep.sigma_w_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("sweep.sigma_w_grid", "must be strictly increasing"));
        }
        if self.sweep.seeds.is_empty() {
            return Err(Error::config("sweep.seeds", "must be non-empty"));
        }
        let mut seeds = self.sweep.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.sweep.seeds.len() {
            return Err(Error::config("sweep.seeds", "seeds must be distinct"));
        }
        if self.sweep.dims.iter().any(|&d| d < 2) {
            return Err(Error::config("sweep.dims", "every dimension needs >= 2 levels"));
        }
        if self.sweep.dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("sweep.dims", "must be strictly increasing"));
        }
        if self.dynamics.n_times < 2 {
            return Err(Error::config("dynamics.n_times", "needs at least 2 sample times"));
        }
        if !(self.dynamics.t_max > 0.0) {
            return Err(Error::config("dynamics.t_max", "must be positive"));
        }
        let (lo, hi) = self.dynamics.window;
        if !(0.0 <= lo && lo < hi && hi <= self.dynamics.t_max) {
            return Err(Error::config(
                "dynamics.window",
                "needs 0 <= lo < hi <= t_max",
            ));
        }
        if self.initial.sys_level >= levels.len() {
            return Err(Error::config(
                "initial.sys_level",
                format!("level {} out of range for {} levels", self.initial.sys_level, levels.len()),
            ));
        }
        if self.ldos.targets.is_empty() {
            return Err(Error::config("ldos.targets", "must be non-empty"));
        }
        if self.transitions.rows.is_empty() {
            return Err(Error::config("transitions.rows", "must be non-empty"));
        }
        if self.transitions.cap < 2 {
            return Err(Error::config("transitions.cap", "must be >= 2"));
        }
        if self.output.formats.is_empty() {
            return Err(Error::config("output.formats", "must be non-empty"));
        }
        for f in &self.output.formats {
            if f != "csv" && f != "svg" {
                return Err(Error::config(
                    "output.formats",
                    format!("unknown format {f:?}; known: csv, svg"),
                ));
            }
        }
        if !self.output.formats.iter().any(|f| f == "csv") {
            return Err(Error::config(
                "output.formats",
                "csv is required; svg is presentation-only",
            ));
        }
        Ok(())
    }

    /// Build the bare model, optionally overriding the environment size.
    pub fn build_model(&self, dim_env_override: Option<usize>) -> Result<Arc<BareModel>> {
        let sys = SystemSpectrum::new(self.model.system.levels.clone())?;
        let env = build_environment_spectrum(
            &self.model.environment.dos,
            dim_env_override.unwrap_or(self.model.environment.dim),
            self.model.environment.mode,
            self.model.environment.seed,
        )?;
        Ok(Arc::new(build_bare_model(sys, env)))
    }

    /// Composite index of the configured initial product state.
    pub fn initial_index(&self, model: &BareModel) -> Result<usize> {
        resolve_product_state(model, self.initial.sys_level, self.initial.env_energy)
    }
}
