//! Drivers behind the `embedq` subcommands.
//!
//! Each driver loads one effective configuration, runs a seeded ensemble,
//! and writes CSV tables, JSON sidecars, optional SVG plots, and a
//! manifest into the output directory.
//!
//! Failure policy: configuration problems abort before any file is
//! written; a numerical failure in one realization is recorded in the
//! manifest, excluded from aggregates, and never stops the remaining
//! cells. Aggregation always runs in fixed (outer grid, seed) order, so
//! the emitted bytes are independent of the worker-pool size.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve_pure, long_time_average, FluctuationReport, Trajectory};
use crate::ensembles::EnsembleKind;
use crate::error::{Error, Result};
use crate::harness::cache::diagonalize_cached;
use crate::harness::config::ExperimentConfig;
use crate::harness::csvio::create_csv;
use crate::harness::manifest::{RunManifest, StageClock};
use crate::harness::svg::{Chart, Series};
use crate::model::{estimate_dos_auto, BareModel, DosEstimate};
use crate::numeric::{mean, sample_std};
use crate::spectral::{fgr_width, transition_row, DressedSystem, LdosAccumulator, LdosFit};
use crate::theory::{
    predict_equilibrium, predict_local_microcanonical, predict_transition_row, self_convolve,
    ShapeFunction, ShapeKind,
};

/// Everything a command needs besides the configuration document itself.
pub struct CommandContext {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
    /// Size of the seed worker pool (recorded in the manifest; results do
    /// not depend on it).
    pub threads: usize,
    pub cache_dir: Option<PathBuf>,
    /// Run at the published environment dimension instead of desk scale.
    pub paper_scale: bool,
}

/// Environment dimension used by `--paper-scale`.
pub const PAPER_SCALE_DIM_ENV: usize = 4096;

impl CommandContext {
    /// The configuration actually executed: `--paper-scale` bumps the
    /// environment dimension, everything else is taken verbatim. The
    /// manifest embeds this effective form, so a rerun from the manifest
    /// alone needs no extra flags.
    pub fn effective_config(&self) -> ExperimentConfig {
        let mut config = self.config.clone();
        if self.paper_scale {
            config.model.environment.dim = PAPER_SCALE_DIM_ENV;
        }
        config
    }
}

/// How the seeded cells of a command fared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommandOutcome {
    pub total_cells: usize,
    pub failed_cells: usize,
}

impl CommandOutcome {
    /// Process exit code: 0 when everything succeeded, 4 when some cells
    /// failed but aggregates were still produced, 3 when nothing usable
    /// came out.
    pub fn exit_code(&self) -> u8 {
        if self.failed_cells == 0 {
            0
        } else if self.failed_cells < self.total_cells {
            4
        } else {
            3
        }
    }
}

/// Serializable density-of-states estimate. Stored next to every
/// prediction so the predicted columns can be recomputed offline from the
/// output directory alone.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DosArtifact {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub bandwidth: f64,
}

impl From<&DosEstimate> for DosArtifact {
    fn from(dos: &DosEstimate) -> Self {
        DosArtifact {
            grid: dos.grid().to_vec(),
            values: dos.values().to_vec(),
            bandwidth: dos.bandwidth(),
        }
    }
}

impl DosArtifact {
    pub fn into_estimate(self) -> Result<DosEstimate> {
        DosEstimate::from_parts(self.grid, self.values, self.bandwidth)
    }
}

/// Sample and diagonalize one realization, through the cache when enabled.
fn realize(
    ctx: &CommandContext,
    config: &ExperimentConfig,
    model: &Arc<BareModel>,
    sigma_w: f64,
    seed: u64,
) -> Result<DressedSystem> {
    let spec = config.interaction.to_spec(sigma_w, seed, model.dim())?;
    let w = spec.sample(model)?;
    diagonalize_cached(model, &w, ctx.cache_dir.as_deref())
}

/// Run `f` over the seeds on the global pool; the result vector keeps the
/// configured seed order regardless of scheduling.
fn par_seed_map<T, F>(seeds: &[u64], f: F) -> Vec<(u64, Result<T>)>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    seeds.par_iter().map(|&seed| (seed, f(seed))).collect()
}

fn write_json<T: Serialize>(
    dir: &Path,
    name: &str,
    value: &T,
    manifest: &mut RunManifest,
) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(dir.join(name), text)?;
    manifest.record_output(name);
    Ok(())
}

fn write_svg(dir: &Path, name: &str, chart: &Chart, manifest: &mut RunManifest) -> Result<()> {
    std::fs::write(dir.join(name), chart.render())?;
    manifest.record_output(name);
    Ok(())
}

/// Distinct system-level pairs `(s, s2)` with `s < s2`, row-major order;
/// fixes the coherence column layout of trajectory tables.
fn coherence_pairs(dim_s: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for s in 0..dim_s {
        for s2 in (s + 1)..dim_s {
            pairs.push((s, s2));
        }
    }
    pairs
}

fn shape_name(kind: ShapeKind) -> &'static str {
    match kind {
        ShapeKind::Lorentzian => "Lorentzian",
        ShapeKind::Gaussian => "Gaussian",
    }
}

/// JSON sidecars store unavailable numbers as `null`, never NaN (which
/// does not survive a JSON round trip); CSV keeps the NaN convention.
fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn or_nan(x: Option<f64>) -> f64 {
    x.unwrap_or(f64::NAN)
}

// ---------------------------------------------------------------------------
// dynamics
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedFluctuations {
    pub seed: u64,
    pub report: FluctuationReport,
}

/// `fluctuations.json`: per-seed window statistics plus their across-seed
/// spread.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DynamicsSidecar {
    pub window: (f64, f64),
    pub initial_index: usize,
    pub sys_level: usize,
    pub n_seeds_ok: usize,
    pub per_seed: Vec<SeedFluctuations>,
    /// Mean over seeds of each window-averaged population.
    pub seed_mean_populations: Vec<f64>,
    /// Across-seed sample standard deviation of the window averages.
    pub across_seed_std: Vec<f64>,
}

/// Evolve the configured initial product state for every seed; write
/// per-seed and seed-averaged trajectory tables, the fluctuation sidecar,
/// and a population plot.
pub fn cmd_dynamics(ctx: &CommandContext) -> Result<CommandOutcome> {
    let config = ctx.effective_config();
    let model = config.build_model(None)?;
    let m = config.initial_index(&model)?;

    std::fs::create_dir_all(&ctx.out_dir)?;
    let mut clock = StageClock::new();
    let mut manifest = RunManifest::new("dynamics", &config, &config.sweep.seeds)?;
    manifest.pool_size = ctx.threads;

    let times = config.dynamics.time_grid();
    let window = config.dynamics.window;
    let sys_level = config.initial.sys_level;
    let dim_s = model.dim_sys();
    let pairs = coherence_pairs(dim_s);
    clock.lap("setup");

    let results = par_seed_map(&config.sweep.seeds, |seed| {
        let ds = realize(ctx, &config, &model, config.interaction.sigma_w, seed)?;
        let traj = evolve_pure(&ds, m, &times)?;
        let (_, report) = long_time_average(&traj, window)?;
        Ok((traj, report))
    });
    clock.lap("ensemble");

    let total_cells = results.len();
    let mut ok: Vec<(u64, Trajectory, FluctuationReport)> = Vec::new();
    for (seed, result) in results {
        match result {
            Ok((traj, report)) => ok.push((seed, traj, report)),
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                manifest.record_failure(seed, &e);
            }
        }
    }

    let mut header: Vec<String> = vec!["t".into()];
    for s in 0..dim_s {
        header.push(format!("p_{s}"));
    }
    for &(s, s2) in &pairs {
        header.push(format!("coh_{s}{s2}"));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();

    for (seed, traj, _) in &ok {
        let name = format!("trajectory_seed_{seed}.csv");
        let mut csv = create_csv(&ctx.out_dir.join(&name), &header_refs)?;
        for (k, &t) in traj.times().iter().enumerate() {
            let state = &traj.states()[k];
            let mut row = Vec::with_capacity(header.len());
            row.push(t);
            row.extend(state.populations());
            for &(s, s2) in &pairs {
                row.push(state.get(s, s2).norm());
            }
            csv.write_floats(&row)?;
        }
        csv.finish()?;
        manifest.record_output(name);
    }

    if !ok.is_empty() {
        let inv = 1.0 / ok.len() as f64;
        let mut csv = create_csv(&ctx.out_dir.join("trajectory_mean.csv"), &header_refs)?;
        for (k, &t) in times.iter().enumerate() {
            let mut row = Vec::with_capacity(header.len());
            row.push(t);
            for s in 0..dim_s {
                let v: f64 = ok.iter().map(|(_, traj, _)| traj.states()[k].get(s, s).re).sum();
                row.push(v * inv);
            }
            for &(s, s2) in &pairs {
                let v: f64 = ok.iter().map(|(_, traj, _)| traj.states()[k].get(s, s2).norm()).sum();
                row.push(v * inv);
            }
            csv.write_floats(&row)?;
        }
        csv.finish()?;
        manifest.record_output("trajectory_mean.csv");

        let mut seed_mean_populations = Vec::with_capacity(dim_s);
        let mut across_seed_std = Vec::with_capacity(dim_s);
        for s in 0..dim_s {
            let means: Vec<f64> = ok.iter().map(|(_, _, r)| r.mean_populations[s]).collect();
            seed_mean_populations.push(mean(&means));
            across_seed_std.push(sample_std(&means));
        }
        let sidecar = DynamicsSidecar {
            window,
            initial_index: m,
            sys_level,
            n_seeds_ok: ok.len(),
            per_seed: ok
                .iter()
                .map(|(seed, _, report)| SeedFluctuations { seed: *seed, report: report.clone() })
                .collect(),
            seed_mean_populations,
            across_seed_std,
        };
        write_json(&ctx.out_dir, "fluctuations.json", &sidecar, &mut manifest)?;

        if config.output.wants_svg() {
            let mut chart = Chart::new(
                format!("Reduced population of system level {sys_level}"),
                "t",
                format!("P_{sys_level}"),
            );
            for (seed, traj, _) in &ok {
                let pts: Vec<(f64, f64)> =
                    times.iter().copied().zip(traj.population_series(sys_level)).collect();
                chart = chart.with_series(Series::line(format!("seed {seed}"), pts));
            }
            let mean_pts: Vec<(f64, f64)> = times
                .iter()
                .enumerate()
                .map(|(k, &t)| {
                    let v: f64 =
                        ok.iter().map(|(_, traj, _)| traj.states()[k].get(sys_level, sys_level).re).sum();
                    (t, v / ok.len() as f64)
                })
                .collect();
            chart = chart.with_series(Series::dashed("seed mean", mean_pts));
            write_svg(&ctx.out_dir, "dynamics.svg", &chart, &mut manifest)?;
        }
    }
    clock.lap("write");

    manifest.wall_clock_seconds = clock.into_stages();
    manifest.write(&ctx.out_dir)?;
    Ok(CommandOutcome { total_cells, failed_cells: total_cells - ok.len() })
}

// ---------------------------------------------------------------------------
// crossover
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SeedPlateau {
    pub seed: u64,
    pub plateau: f64,
}

/// One strength cell of `crossover_fits.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossoverFitEntry {
    pub sigma_w: f64,
    pub n_seeds: usize,
    pub plateaus: Vec<SeedPlateau>,
    pub fit_kind: ShapeKind,
    pub fit_width: Option<f64>,
    pub fit_residual: f64,
    pub fit_alt_residual: f64,
    pub fit_degenerate: bool,
    pub gamma_prime_fit: Option<f64>,
    pub gamma_fgr: f64,
    pub gamma_prime_fgr: Option<f64>,
    pub p1_kernel_fit: Option<f64>,
    pub p1_kernel_fgr: Option<f64>,
}

/// `crossover_fits.json`: per-strength fits and predictions, plus the
/// fixed quantities every prediction shares.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossoverSidecar {
    pub initial_index: usize,
    pub eps_m: f64,
    pub sys_level: usize,
    pub dim_total: usize,
    pub rho_total_at_m: f64,
    pub p1_local: f64,
    pub p1_global: f64,
    pub entries: Vec<CrossoverFitEntry>,
}

struct CrossoverRow {
    sigma_w: f64,
    n_seeds: usize,
    p1_mean: f64,
    p1_std: f64,
    fit: LdosFit,
    gamma_prime_fit: f64,
    gamma_fgr: f64,
    gamma_prime_fgr: f64,
    p1_kernel_fit: f64,
    p1_kernel_fgr: f64,
    kernel_defect_fit: f64,
}

/// Equilibrium prediction for one kernel shape; NaN columns when the
/// prediction is unavailable (degenerate fit or zero coupling).
fn equilibrium_p1(
    model: &Arc<BareModel>,
    kind: ShapeKind,
    width: f64,
    m: usize,
    sys_level: usize,
    dos_env: &DosEstimate,
    dos_total: &DosEstimate,
) -> (f64, f64, f64) {
    let f = match ShapeFunction::new(kind, width) {
        Ok(f) => f,
        Err(_) => return (f64::NAN, f64::NAN, f64::NAN),
    };
    let g = self_convolve(&f);
    match predict_equilibrium(model, &g, m, dos_env, dos_total) {
        Ok(pred) => (g.gamma_prime(), pred.probs[sys_level], pred.normalization_defect),
        Err(e) => {
            log::warn!("equilibrium prediction failed for width {width:.3e}: {e}");
            (g.gamma_prime(), f64::NAN, f64::NAN)
        }
    }
}

/// Sweep the interaction strength: seed-averaged plateau populations with
/// across-seed error bars, the kernel prediction from both the fitted and
/// the golden-rule width, and the two limiting ensembles, all in one
/// table/plot.
pub fn cmd_crossover(ctx: &CommandContext) -> Result<CommandOutcome> {
    let config = ctx.effective_config();
    if config.sweep.sigma_w_grid.len() < 3 {
        // A degenerate grid still runs (useful for smoke tests); it just
        // cannot show a crossover.
        log::warn!(
            "sigma_w grid has {} point(s); the crossover needs >= 3 to be meaningful",
            config.sweep.sigma_w_grid.len()
        );
    }
    if config.interaction.kind == EnsembleKind::Rrm && config.interaction.rrm_spectrum.is_some() {
        return Err(Error::config(
            "interaction.rrm_spectrum",
            "a strength sweep must derive the rotated spectrum from each sigma_w; \
             drop the explicit spectrum",
        ));
    }
    let model = config.build_model(None)?;
    let m = config.initial_index(&model)?;

    std::fs::create_dir_all(&ctx.out_dir)?;
    let mut clock = StageClock::new();
    let mut manifest = RunManifest::new("crossover", &config, &config.sweep.seeds)?;
    manifest.pool_size = ctx.threads;

    let n_total = model.dim();
    let eps_m = model.bare_energies()[m];
    let sys_level = config.initial.sys_level;
    let times = config.dynamics.time_grid();
    let window = config.dynamics.window;

    let dos_env = estimate_dos_auto(model.env().levels())?;
    let dos_total = estimate_dos_auto(model.bare_energies())?;
    write_json(&ctx.out_dir, "dos_env.json", &DosArtifact::from(&dos_env), &mut manifest)?;
    write_json(&ctx.out_dir, "dos_total.json", &DosArtifact::from(&dos_total), &mut manifest)?;

    let p1_local = predict_local_microcanonical(&model, m, &dos_env, &dos_total)?.probs[sys_level];
    let p1_global = 1.0 / model.dim_sys() as f64;
    let rho_total_at_m = dos_total.eval(eps_m)?;
    clock.lap("setup");

    let mut rows: Vec<CrossoverRow> = Vec::new();
    let mut entries: Vec<CrossoverFitEntry> = Vec::new();
    let mut total_cells = 0usize;
    let mut failed_cells = 0usize;

    for &sigma_w in &config.sweep.sigma_w_grid {
        let results = par_seed_map(&config.sweep.seeds, |seed| {
            let ds = realize(ctx, &config, &model, sigma_w, seed)?;
            let traj = evolve_pure(&ds, m, &times)?;
            let (_, report) = long_time_average(&traj, window)?;
            Ok((report.mean_populations[sys_level], ds))
        });
        total_cells += results.len();

        let mut acc =
            LdosAccumulator::new(model.clone(), m, config.ldos.bundle_half_width, &dos_total)?;
        let mut plateaus: Vec<SeedPlateau> = Vec::new();
        for (seed, result) in results {
            match result {
                Ok((plateau, ds)) => {
                    acc.add_run(&ds)?;
                    plateaus.push(SeedPlateau { seed, plateau });
                }
                Err(e) => {
                    failed_cells += 1;
                    log::error!("sigma_w {sigma_w}, seed {seed} failed: {e}");
                    manifest.record_failure(seed, format!("sigma_w {sigma_w}: {e}"));
                }
            }
        }
        if plateaus.is_empty() {
            log::error!("sigma_w {sigma_w}: no realization succeeded; row skipped");
            continue;
        }
        let fit = *acc.finish()?.fit();
        let values: Vec<f64> = plateaus.iter().map(|p| p.plateau).collect();

        let gamma_fgr = fgr_width(sigma_w, rho_total_at_m, n_total);
        let (gamma_prime_fit, p1_kernel_fit, kernel_defect_fit) = if fit.degenerate {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            equilibrium_p1(&model, fit.kind, fit.width, m, sys_level, &dos_env, &dos_total)
        };
        let (gamma_prime_fgr, p1_kernel_fgr, _) = equilibrium_p1(
            &model,
            ShapeKind::Lorentzian,
            gamma_fgr,
            m,
            sys_level,
            &dos_env,
            &dos_total,
        );

        rows.push(CrossoverRow {
            sigma_w,
            n_seeds: plateaus.len(),
            p1_mean: mean(&values),
            p1_std: sample_std(&values),
            fit,
            gamma_prime_fit,
            gamma_fgr,
            gamma_prime_fgr,
            p1_kernel_fit,
            p1_kernel_fgr,
            kernel_defect_fit,
        });
        entries.push(CrossoverFitEntry {
            sigma_w,
            n_seeds: plateaus.len(),
            plateaus,
            fit_kind: fit.kind,
            fit_width: if fit.degenerate { None } else { finite(fit.width) },
            fit_residual: fit.residual,
            fit_alt_residual: fit.alt_residual,
            fit_degenerate: fit.degenerate,
            gamma_prime_fit: finite(gamma_prime_fit),
            gamma_fgr,
            gamma_prime_fgr: finite(gamma_prime_fgr),
            p1_kernel_fit: finite(p1_kernel_fit),
            p1_kernel_fgr: finite(p1_kernel_fgr),
        });
    }
    clock.lap("ensemble");

    let mut csv = create_csv(
        &ctx.out_dir.join("crossover.csv"),
        &[
            "sigma_w",
            "n_seeds",
            "p1_mean",
            "p1_std",
            "fit_lorentzian",
            "gamma_fit",
            "gamma_prime_fit",
            "gamma_fgr",
            "gamma_prime_fgr",
            "p1_kernel_fit",
            "p1_kernel_fgr",
            "p1_local",
            "p1_global",
            "kernel_defect_fit",
        ],
    )?;
    for row in &rows {
        csv.write_floats(&[
            row.sigma_w,
            row.n_seeds as f64,
            row.p1_mean,
            row.p1_std,
            (row.fit.kind == ShapeKind::Lorentzian) as u8 as f64,
            if row.fit.degenerate { f64::NAN } else { row.fit.width },
            row.gamma_prime_fit,
            row.gamma_fgr,
            row.gamma_prime_fgr,
            row.p1_kernel_fit,
            row.p1_kernel_fgr,
            p1_local,
            p1_global,
            row.kernel_defect_fit,
        ])?;
    }
    csv.finish()?;
    manifest.record_output("crossover.csv");

    let sidecar = CrossoverSidecar {
        initial_index: m,
        eps_m,
        sys_level,
        dim_total: n_total,
        rho_total_at_m,
        p1_local,
        p1_global,
        entries,
    };
    write_json(&ctx.out_dir, "crossover_fits.json", &sidecar, &mut manifest)?;

    if config.output.wants_svg() && !rows.is_empty() {
        let grid_lo = rows.first().map(|r| r.sigma_w).unwrap_or(1.0);
        let grid_hi = rows.last().map(|r| r.sigma_w).unwrap_or(1.0);
        let empirical: Vec<(f64, f64)> = rows.iter().map(|r| (r.sigma_w, r.p1_mean)).collect();
        let errors: Vec<f64> = rows.iter().map(|r| r.p1_std).collect();
        let pred_fit: Vec<(f64, f64)> = rows.iter().map(|r| (r.sigma_w, r.p1_kernel_fit)).collect();
        let pred_fgr: Vec<(f64, f64)> = rows.iter().map(|r| (r.sigma_w, r.p1_kernel_fgr)).collect();
        let chart = Chart::new(
            format!("Plateau population of system level {sys_level} vs interaction strength"),
            "sigma_w",
            format!("P_{sys_level}"),
        )
        .log_x()
        .with_series(Series::points("measured plateau", empirical).with_errors(errors))
        .with_series(Series::line("kernel prediction (fitted width)", pred_fit))
        .with_series(Series::dashed("kernel prediction (golden-rule width)", pred_fgr))
        .with_series(Series::dashed(
            "local microcanonical",
            vec![(grid_lo, p1_local), (grid_hi, p1_local)],
        ))
        .with_series(Series::dashed(
            "global equiprobability",
            vec![(grid_lo, p1_global), (grid_hi, p1_global)],
        ));
        write_svg(&ctx.out_dir, "crossover.svg", &chart, &mut manifest)?;
    }
    clock.lap("write");

    manifest.wall_clock_seconds = clock.into_stages();
    manifest.write(&ctx.out_dir)?;
    Ok(CommandOutcome { total_cells, failed_cells })
}

// ---------------------------------------------------------------------------
// ldos
// ---------------------------------------------------------------------------

/// One target of `ldos_fits.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LdosFitEntry {
    pub target_index: usize,
    pub bare_index: usize,
    pub center: f64,
    pub bundle_size: usize,
    pub rows_pooled: usize,
    pub fit_kind: ShapeKind,
    pub fit_width: Option<f64>,
    pub fit_residual: f64,
    pub fit_alt_residual: f64,
    pub fit_degenerate: bool,
    pub gamma_fgr: f64,
    pub width_over_fgr: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LdosSidecar {
    pub sigma_w: f64,
    pub n_seeds_ok: usize,
    pub entries: Vec<LdosFitEntry>,
}

/// Pool the local density of states around each configured bare state
/// over all seeds, fit both candidate shapes, and compare the winning
/// width against the golden-rule value.
pub fn cmd_ldos(ctx: &CommandContext) -> Result<CommandOutcome> {
    let config = ctx.effective_config();
    let model = config.build_model(None)?;
    let targets: Vec<usize> =
        config.ldos.targets.iter().map(|t| t.resolve(&model)).collect::<Result<_>>()?;

    std::fs::create_dir_all(&ctx.out_dir)?;
    let mut clock = StageClock::new();
    let mut manifest = RunManifest::new("ldos", &config, &config.sweep.seeds)?;
    manifest.pool_size = ctx.threads;

    let dos_total = estimate_dos_auto(model.bare_energies())?;
    let sigma_w = config.interaction.sigma_w;
    let n_total = model.dim();
    clock.lap("setup");

    let results =
        par_seed_map(&config.sweep.seeds, |seed| realize(ctx, &config, &model, sigma_w, seed));
    let total_cells = results.len();
    let mut runs: Vec<DressedSystem> = Vec::new();
    for (seed, result) in results {
        match result {
            Ok(ds) => runs.push(ds),
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                manifest.record_failure(seed, &e);
            }
        }
    }
    clock.lap("ensemble");

    if runs.is_empty() {
        manifest.wall_clock_seconds = clock.into_stages();
        manifest.write(&ctx.out_dir)?;
        return Ok(CommandOutcome { total_cells, failed_cells: total_cells });
    }

    let mut entries: Vec<LdosFitEntry> = Vec::new();
    for (k, &target) in targets.iter().enumerate() {
        let mut acc =
            LdosAccumulator::new(model.clone(), target, config.ldos.bundle_half_width, &dos_total)?;
        let bundle_size = acc.bundle().len();
        for ds in &runs {
            acc.add_run(ds)?;
        }
        let curve = acc.finish()?;
        let fit = *curve.fit();
        let gamma_fgr = fgr_width(sigma_w, dos_total.eval(curve.center())?, n_total);
        let width_over_fgr =
            (gamma_fgr > 0.0 && !fit.degenerate).then(|| fit.width / gamma_fgr);
        let shape =
            if fit.degenerate { None } else { ShapeFunction::new(fit.kind, fit.width).ok() };

        let name = format!("ldos_target_{k}.csv");
        let mut csv =
            create_csv(&ctx.out_dir.join(&name), &["offset", "density", "fit_density"])?;
        for &(x, d) in curve.bins() {
            let fitted = shape.as_ref().map_or(f64::NAN, |s| s.eval(x));
            csv.write_floats(&[x, d, fitted])?;
        }
        csv.finish()?;
        manifest.record_output(name);

        if config.output.wants_svg() {
            let mut chart = Chart::new(
                format!("Overlap density around bare state {target}"),
                "energy offset",
                "density",
            )
            .with_series(Series::points("binned density", curve.bins().to_vec()));
            if let Some(s) = &shape {
                let fitted: Vec<(f64, f64)> =
                    curve.bins().iter().map(|&(x, _)| (x, s.eval(x))).collect();
                chart = chart
                    .with_series(Series::line(format!("{} fit", shape_name(fit.kind)), fitted));
            }
            write_svg(&ctx.out_dir, &format!("ldos_target_{k}.svg"), &chart, &mut manifest)?;
        }

        entries.push(LdosFitEntry {
            target_index: k,
            bare_index: target,
            center: curve.center(),
            bundle_size,
            rows_pooled: curve.rows_pooled(),
            fit_kind: fit.kind,
            fit_width: (!fit.degenerate).then_some(fit.width),
            fit_residual: fit.residual,
            fit_alt_residual: fit.alt_residual,
            fit_degenerate: fit.degenerate,
            gamma_fgr,
            width_over_fgr,
        });
    }

    let mut csv = create_csv(
        &ctx.out_dir.join("ldos_summary.csv"),
        &[
            "target_index",
            "center",
            "fit_lorentzian",
            "width",
            "gamma_fgr",
            "width_over_fgr",
            "residual",
            "alt_residual",
            "degenerate",
        ],
    )?;
    for e in &entries {
        csv.write_floats(&[
            e.target_index as f64,
            e.center,
            (e.fit_kind == ShapeKind::Lorentzian) as u8 as f64,
            or_nan(e.fit_width),
            e.gamma_fgr,
            or_nan(e.width_over_fgr),
            e.fit_residual,
            e.fit_alt_residual,
            e.fit_degenerate as u8 as f64,
        ])?;
    }
    csv.finish()?;
    manifest.record_output("ldos_summary.csv");

    let sidecar = LdosSidecar { sigma_w, n_seeds_ok: runs.len(), entries };
    write_json(&ctx.out_dir, "ldos_fits.json", &sidecar, &mut manifest)?;
    clock.lap("write");

    manifest.wall_clock_seconds = clock.into_stages();
    manifest.write(&ctx.out_dir)?;
    Ok(CommandOutcome { total_cells, failed_cells: total_cells - runs.len() })
}

// ---------------------------------------------------------------------------
// typicality
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TypicalityRow {
    pub dim_env: usize,
    pub dim_total: usize,
    pub n_seeds: usize,
    pub p1_mean: f64,
    pub p1_std: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TypicalitySidecar {
    pub sigma_w: f64,
    pub sys_level: usize,
    pub rows: Vec<TypicalityRow>,
    /// Whether the across-seed std strictly decreases with dimension.
    pub monotone_decreasing: bool,
}

/// Measure how the across-seed spread of the plateau population shrinks
/// as the environment grows, at fixed interaction strength.
pub fn cmd_typicality(ctx: &CommandContext) -> Result<CommandOutcome> {
    let config = ctx.effective_config();
    if config.sweep.dims.len() < 2 {
        return Err(Error::config(
            "sweep.dims",
            "the scaling needs at least 2 environment dimensions",
        ));
    }
    if config.sweep.seeds.len() < 8 {
        return Err(Error::config(
            "sweep.seeds",
            format!(
                "a spread over {} seed(s) is meaningless; give at least 8",
                config.sweep.seeds.len()
            ),
        ));
    }

    std::fs::create_dir_all(&ctx.out_dir)?;
    let mut clock = StageClock::new();
    let mut manifest = RunManifest::new("typicality", &config, &config.sweep.seeds)?;
    manifest.pool_size = ctx.threads;

    let sigma_w = config.interaction.sigma_w;
    let sys_level = config.initial.sys_level;
    let times = config.dynamics.time_grid();
    let window = config.dynamics.window;
    clock.lap("setup");

    let mut rows: Vec<TypicalityRow> = Vec::new();
    let mut total_cells = 0usize;
    let mut failed_cells = 0usize;
    for &dim in &config.sweep.dims {
        let model = config.build_model(Some(dim))?;
        let m = config.initial_index(&model)?;
        let results = par_seed_map(&config.sweep.seeds, |seed| {
            let ds = realize(ctx, &config, &model, sigma_w, seed)?;
            let traj = evolve_pure(&ds, m, &times)?;
            let (_, report) = long_time_average(&traj, window)?;
            Ok(report.mean_populations[sys_level])
        });
        total_cells += results.len();
        let mut plateaus: Vec<f64> = Vec::new();
        for (seed, result) in results {
            match result {
                Ok(p) => plateaus.push(p),
                Err(e) => {
                    failed_cells += 1;
                    log::error!("dim {dim}, seed {seed} failed: {e}");
                    manifest.record_failure(seed, format!("dim {dim}: {e}"));
                }
            }
        }
        if plateaus.len() < 2 {
            log::error!("dim {dim}: fewer than 2 realizations succeeded; row skipped");
            continue;
        }
        rows.push(TypicalityRow {
            dim_env: dim,
            dim_total: model.dim(),
            n_seeds: plateaus.len(),
            p1_mean: mean(&plateaus),
            p1_std: sample_std(&plateaus),
        });
    }
    clock.lap("ensemble");

    let mut csv = create_csv(
        &ctx.out_dir.join("typicality.csv"),
        &["dim_env", "dim_total", "n_seeds", "p1_mean", "p1_std"],
    )?;
    for row in &rows {
        csv.write_floats(&[
            row.dim_env as f64,
            row.dim_total as f64,
            row.n_seeds as f64,
            row.p1_mean,
            row.p1_std,
        ])?;
    }
    csv.finish()?;
    manifest.record_output("typicality.csv");

    let monotone_decreasing =
        rows.len() >= 2 && rows.windows(2).all(|w| w[0].p1_std > w[1].p1_std);
    let sidecar = TypicalitySidecar { sigma_w, sys_level, rows: rows.clone(), monotone_decreasing };
    write_json(&ctx.out_dir, "typicality.json", &sidecar, &mut manifest)?;

    if config.output.wants_svg() && !rows.is_empty() {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.dim_env as f64, r.p1_std)).collect();
        let chart = Chart::new(
            "Across-seed spread of the plateau population",
            "environment dimension",
            "std of plateau",
        )
        .log_x()
        .with_series(Series::line("measured spread", pts));
        write_svg(&ctx.out_dir, "typicality.svg", &chart, &mut manifest)?;
    }
    clock.lap("write");

    manifest.wall_clock_seconds = clock.into_stages();
    manifest.write(&ctx.out_dir)?;
    Ok(CommandOutcome { total_cells, failed_cells })
}

// ---------------------------------------------------------------------------
// transitions
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransitionRowSummary {
    pub m: usize,
    pub eps_m: f64,
    pub row_sum: f64,
    pub n_seeds: usize,
    pub gamma_prime: Option<f64>,
    /// Half-width of the central comparison window (3 kernel widths).
    pub central_half_width: Option<f64>,
    pub central_max_rel_err: Option<f64>,
    pub central_mean_rel_err: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransitionsSidecar {
    pub sigma_w: f64,
    pub n_seeds_ok: usize,
    pub rows: Vec<TransitionRowSummary>,
}

/// Ensemble-averaged transition probabilities out of selected bare
/// states, against the kernel prediction with a relative-error summary on
/// the central window.
pub fn cmd_transitions(ctx: &CommandContext) -> Result<CommandOutcome> {
    let config = ctx.effective_config();
    let model = config.build_model(None)?;
    let n_total = model.dim();
    if n_total > config.transitions.cap {
        return Err(Error::config(
            "transitions.cap",
            format!(
                "composite dimension {n_total} exceeds the cap {}; lower \
                 model.environment.dim or raise transitions.cap (memory and time \
                 grow as the dimension squared)",
                config.transitions.cap
            ),
        ));
    }
    let mut row_targets: Vec<usize> =
        config.transitions.rows.iter().map(|t| t.resolve(&model)).collect::<Result<_>>()?;
    let mut seen = std::collections::BTreeSet::new();
    row_targets.retain(|&m| seen.insert(m));

    std::fs::create_dir_all(&ctx.out_dir)?;
    let mut clock = StageClock::new();
    let mut manifest = RunManifest::new("transitions", &config, &config.sweep.seeds)?;
    manifest.pool_size = ctx.threads;

    let dos_total = estimate_dos_auto(model.bare_energies())?;
    let sigma_w = config.interaction.sigma_w;
    clock.lap("setup");

    let results =
        par_seed_map(&config.sweep.seeds, |seed| realize(ctx, &config, &model, sigma_w, seed));
    let total_cells = results.len();
    let mut runs: Vec<DressedSystem> = Vec::new();
    for (seed, result) in results {
        match result {
            Ok(ds) => runs.push(ds),
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                manifest.record_failure(seed, &e);
            }
        }
    }
    clock.lap("ensemble");

    if runs.is_empty() {
        manifest.wall_clock_seconds = clock.into_stages();
        manifest.write(&ctx.out_dir)?;
        return Ok(CommandOutcome { total_cells, failed_cells: total_cells });
    }

    let energies = model.bare_energies();
    let mut summaries: Vec<TransitionRowSummary> = Vec::new();
    for &m in &row_targets {
        let emp = transition_row(&runs, m)?;
        let row_sum: f64 = emp.iter().sum();

        let mut acc =
            LdosAccumulator::new(model.clone(), m, config.ldos.bundle_half_width, &dos_total)?;
        for ds in &runs {
            acc.add_run(ds)?;
        }
        let fit = *acc.finish()?.fit();
        let (gamma_prime, pred) = if fit.degenerate {
            (f64::NAN, vec![f64::NAN; n_total])
        } else {
            match ShapeFunction::new(fit.kind, fit.width) {
                Ok(f) => {
                    let g = self_convolve(&f);
                    match predict_transition_row(&model, &g, m, &dos_total) {
                        Ok(p) => (g.gamma_prime(), p),
                        Err(e) => {
                            log::warn!("transition prediction for row {m} failed: {e}");
                            (g.gamma_prime(), vec![f64::NAN; n_total])
                        }
                    }
                }
                Err(_) => (f64::NAN, vec![f64::NAN; n_total]),
            }
        };

        let eps_m = energies[m];
        let half = 3.0 * gamma_prime;
        let name = format!("transitions_row_{m}.csv");
        let mut csv = create_csv(
            &ctx.out_dir.join(&name),
            &["n", "eps_n", "p_emp", "p_pred", "rel_err", "central"],
        )?;
        let mut central_errs: Vec<f64> = Vec::new();
        for n in 0..n_total {
            let central = (energies[n] - eps_m).abs() <= half;
            let rel = if pred[n].is_finite() && pred[n] > 0.0 {
                (emp[n] - pred[n]).abs() / pred[n]
            } else {
                f64::NAN
            };
            if central && rel.is_finite() {
                central_errs.push(rel);
            }
            csv.write_floats(&[
                n as f64,
                energies[n],
                emp[n],
                pred[n],
                rel,
                central as u8 as f64,
            ])?;
        }
        csv.finish()?;
        manifest.record_output(name);

        if config.output.wants_svg() {
            let emp_pts: Vec<(f64, f64)> =
                (0..n_total).map(|n| (energies[n], emp[n])).collect();
            let pred_pts: Vec<(f64, f64)> =
                (0..n_total).map(|n| (energies[n], pred[n])).collect();
            let chart = Chart::new(
                format!("Average transition probability out of bare state {m}"),
                "eps_n",
                "probability",
            )
            .with_series(Series::points("measured", emp_pts))
            .with_series(Series::line("kernel prediction", pred_pts));
            write_svg(&ctx.out_dir, &format!("transitions_row_{m}.svg"), &chart, &mut manifest)?;
        }

        let (central_max, central_mean) = if central_errs.is_empty() {
            (None, None)
        } else {
            (
                Some(central_errs.iter().copied().fold(0.0, f64::max)),
                Some(mean(&central_errs)),
            )
        };
        summaries.push(TransitionRowSummary {
            m,
            eps_m,
            row_sum,
            n_seeds: runs.len(),
            gamma_prime: finite(gamma_prime),
            central_half_width: finite(half),
            central_max_rel_err: central_max,
            central_mean_rel_err: central_mean,
        });
    }

    let mut csv = create_csv(
        &ctx.out_dir.join("transitions_summary.csv"),
        &[
            "m",
            "eps_m",
            "row_sum",
            "n_seeds",
            "gamma_prime",
            "central_half_width",
            "central_max_rel_err",
            "central_mean_rel_err",
        ],
    )?;
    for s in &summaries {
        csv.write_floats(&[
            s.m as f64,
            s.eps_m,
            s.row_sum,
            s.n_seeds as f64,
            or_nan(s.gamma_prime),
            or_nan(s.central_half_width),
            or_nan(s.central_max_rel_err),
            or_nan(s.central_mean_rel_err),
        ])?;
    }
    csv.finish()?;
    manifest.record_output("transitions_summary.csv");

    let sidecar = TransitionsSidecar { sigma_w, n_seeds_ok: runs.len(), rows: summaries };
    write_json(&ctx.out_dir, "transitions.json", &sidecar, &mut manifest)?;
    clock.lap("write");

    manifest.wall_clock_seconds = clock.into_stages();
    manifest.write(&ctx.out_dir)?;
    Ok(CommandOutcome { total_cells, failed_cells: total_cells - runs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_exit_codes_cover_the_three_cases() {
        assert_eq!(CommandOutcome { total_cells: 8, failed_cells: 0 }.exit_code(), 0);
        assert_eq!(CommandOutcome { total_cells: 8, failed_cells: 3 }.exit_code(), 4);
        assert_eq!(CommandOutcome { total_cells: 8, failed_cells: 8 }.exit_code(), 3);
    }

    #[test]
    fn paper_scale_bumps_only_the_environment_dimension() {
        let config = ExperimentConfig::from_json(
            r#"{
                "model": {
                    "system": {"levels": [-1.0, 1.0]},
                    "environment": {"dos": {"kind": "gaussian", "sigma": 1.0}, "dim": 64}
                },
                "interaction": {"kind": "goe", "sigma_w": 0.3}
            }"#,
        )
        .unwrap();
        let mut ctx = CommandContext {
            config,
            out_dir: std::path::PathBuf::from("unused"),
            threads: 1,
            cache_dir: None,
            paper_scale: false,
        };
        assert_eq!(ctx.effective_config().model.environment.dim, 64);
        ctx.paper_scale = true;
        let effective = ctx.effective_config();
        assert_eq!(effective.model.environment.dim, PAPER_SCALE_DIM_ENV);
        assert_eq!(effective.interaction.sigma_w, ctx.config.interaction.sigma_w);
    }

    #[test]
    fn dos_artifact_round_trips_the_estimate() {
        let levels: Vec<f64> = crate::numeric::linspace(-2.0, 2.0, 64);
        let dos = estimate_dos_auto(&levels).unwrap();
        let artifact = DosArtifact::from(&dos);
        let text = serde_json::to_string(&artifact).unwrap();
        let back: DosArtifact = serde_json::from_str(&text).unwrap();
        let rebuilt = back.into_estimate().unwrap();
        for &x in &[-1.5, -0.3, 0.0, 0.9, 1.8] {
            assert_eq!(dos.eval(x).unwrap(), rebuilt.eval(x).unwrap());
        }
    }

    #[test]
    fn coherence_pairs_are_upper_triangle_in_order() {
        assert_eq!(coherence_pairs(2), vec![(0, 1)]);
        assert_eq!(coherence_pairs(3), vec![(0, 1), (0, 2), (1, 2)]);
        assert!(coherence_pairs(1).is_empty());
    }
}
