//! Pipe imaging: a probe of one coil pair and a sensor ring moves along the pipe;
//! each stop is a small recovery on the voxels around it, and the stops are
//! fused by log-odds merging.
//!
//! Measurements come from the same linearised model used for recovery, so a
//! good image here shows self-consistency and nothing about real data.

use std::fmt::Write as _;

use bitrec_core::eddy::{
    assemble_phi, build_sensitivity, coil_spectrum_grid, merge_logodds, sensor_spectrum_grid, CoilLoop, CoilQuadrature,
    CoilSpec, EddyError, ModeTable, PipeModel, SensorSpec, Sensitivity, VoxelGrid, VoxelImage, LOGIT_LIMIT, MU0,
};
use bitrec_core::eddy::sensitivity::{estimate_logit, logit};
use bitrec_core::model::{iou, Channel, InitialPrecision, MeasurementSet, ModelError};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::recover::{recover, Algorithm, RecoverError, Settings};

pub const INVERSE_CRIME_NOTE: &str = "synthetic measurements are generated by the same linearised forward model used \
for recovery (inverse crime); image quality here is a self-consistency check, not evidence about measured data";

#[derive(Debug, thiserror::Error)]
pub enum PipeError {
    #[error(transparent)]
    Eddy(#[from] EddyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("recovery failed at probe position {position}: {source}")]
    Recover { position: usize, source: RecoverError },
    #[error("invalid pipe configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub radius: f64,
    pub z: f64,
    #[serde(default = "unit")]
    pub ampere_turns: f64,
    #[serde(default = "unit")]
    pub sign: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorRing {
    pub count: usize,
    pub rho: f64,
    pub z: f64,
    /// Sensing axis in (ρ, φ, z) components.
    pub axis: [f64; 3],
}

/// Voxels seen by the probe at one stop, centred on it axially.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub layers: usize,
    pub n_phi: usize,
    pub n_z: usize,
    pub dz: f64,
    /// Midpoint samples per voxel axis in the sensitivity integrals.
    pub subdivision: usize,
}

/// Voxel `(layer, φ-bin, z-bin)` of the full-length map.
pub type VoxelCoord = [usize; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipeConfig {
    pub rho1: f64,
    pub rho2: f64,
    pub sigma: f64,
    pub mu_r: f64,
    pub frequencies: Vec<f64>,
    pub nu_max: usize,
    pub kappa_max: f64,
    pub kappa_samples: usize,
    pub coil: Vec<LoopConfig>,
    pub sensors: SensorRing,
    pub window: WindowConfig,
    /// Axial distance between probe stops; a multiple of `window.dz`.
    pub probe_step: f64,
    pub probe_positions: usize,
    /// Vacated voxels of the full map.
    pub defects: Vec<VoxelCoord>,
    pub algorithm: Algorithm,
    /// Per-channel SNR in dB; `None` for noiseless data.
    pub snr_db: Option<f64>,
    pub prior: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for PipeConfig {
    fn default() -> Self {
        let m = PipeModel::default();
        Self {
            rho1: m.rho1,
            rho2: m.rho2,
            sigma: m.sigma2,
            mu_r: m.mu_r2,
            frequencies: vec![1000.0, 2000.0, 4000.0, 16000.0],
            nu_max: m.nu_max,
            kappa_max: m.kappa_max,
            kappa_samples: m.kappa_samples,
            coil: vec![
                LoopConfig { radius: 8e-3, z: -2e-3, ampere_turns: 1.0, sign: 1.0 },
                LoopConfig { radius: 8e-3, z: 2e-3, ampere_turns: 1.0, sign: 1.0 },
            ],
            sensors: SensorRing { count: 10, rho: 9.5e-3, z: 0.0, axis: [0.0, 1.0, 0.0] },
            window: WindowConfig { layers: 4, n_phi: 36, n_z: 6, dz: 2e-3, subdivision: 2 },
            probe_step: 4e-3,
            probe_positions: 4,
            defects: vec![[0, 9, 4]],
            algorithm: Algorithm::Convex,
            snr_db: None,
            prior: 0.5,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl PipeConfig {
    pub fn model(&self, hz: f64) -> PipeModel {
        PipeModel {
            rho1: self.rho1,
            rho2: self.rho2,
            sigma2: self.sigma,
            mu_r2: self.mu_r,
            nu_max: self.nu_max,
            kappa_max: self.kappa_max,
            kappa_samples: self.kappa_samples,
            ..PipeModel::default()
        }
        .with_frequency(hz)
    }

    pub fn coil_spec(&self) -> CoilSpec {
        CoilSpec {
            loops: self
                .coil
                .iter()
                .map(|l| CoilLoop { radius: l.radius, z: l.z, ampere_turns: l.ampere_turns, sign: l.sign })
                .collect(),
        }
    }

    pub fn sensor_specs(&self) -> Vec<SensorSpec> {
        let s = &self.sensors;
        SensorSpec::ring(s.count, s.rho, s.z, s.axis)
    }

    /// Axial bins between successive probe stops.
    pub fn step_bins(&self) -> usize {
        (self.probe_step / self.window.dz).round() as usize
    }

    /// Voxel grid around a probe at `z = 0`.
    pub fn window_grid(&self) -> VoxelGrid {
        let w = &self.window;
        VoxelGrid::uniform(&self.model(1.0), w.layers, w.n_phi, -0.5 * w.dz * w.n_z as f64, w.dz, w.n_z)
    }

    /// Grid covering every stop; stop `p` sits at `z = p · probe_step`.
    pub fn full_grid(&self) -> VoxelGrid {
        let w = &self.window;
        let n_z = w.n_z + (self.probe_positions - 1) * self.step_bins();
        VoxelGrid::uniform(&self.model(1.0), w.layers, w.n_phi, -0.5 * w.dz * w.n_z as f64, w.dz, n_z)
    }

    pub fn validate(&self) -> Result<(), PipeError> {
        let bad = |s: &str| Err(PipeError::Config(s.to_owned()));
        if self.frequencies.is_empty() || self.frequencies.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return bad("frequencies must be positive and at least one given");
        }
        let w = &self.window;
        if w.layers == 0 || w.n_phi == 0 || w.n_z == 0 || w.subdivision == 0 || !(w.dz > 0.0) {
            return bad("window needs at least one voxel and positive dz");
        }
        if self.probe_positions == 0 || !(self.probe_step >= 0.0) {
            return bad("probe_positions must be at least 1 and probe_step nonnegative");
        }
        let bins = self.probe_step / w.dz;
        if (bins - bins.round()).abs() > 1e-9 {
            return bad("probe_step must be a whole number of axial bins");
        }
        if self.sensors.count == 0 {
            return bad("sensor ring is empty");
        }
        if !(self.prior > 0.0 && self.prior < 1.0) || !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("prior and threshold must lie in (0, 1)");
        }
        let full = self.full_grid();
        for d in &self.defects {
            if d[0] >= full.layers() || d[1] >= full.n_phi || d[2] >= full.n_z() {
                return Err(PipeError::Config(format!("defect {d:?} lies outside the {}x{}x{} map", full.layers(), full.n_phi, full.n_z())));
            }
        }
        let probe = self.model(self.frequencies[0]);
        probe.validate()?;
        self.coil_spec().validate(&probe)?;
        for s in self.sensor_specs() {
            s.validate(&probe)?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides; see [`crate::overrides::apply`].
    pub fn apply_overrides(&mut self, pairs: &[(String, String)]) -> Result<(), PipeError> {
        *self = crate::overrides::apply(&*self, pairs).map_err(PipeError::Config)?;
        Ok(())
    }
}

/// Probe response for one window: `2 × frequencies` real channels, column `j`
/// belonging to window voxel `j`.
#[derive(Debug, Clone)]
pub struct ProbeOperator {
    pub grid: VoxelGrid,
    pub channels: Vec<DMatrix<f64>>,
    /// Common factor divided out of every channel.
    pub scale: f64,
    pub truncation_ratio: f64,
}

/// Sensitivities of the window voxels at every frequency, one mode table each.
pub fn probe_sensitivities(cfg: &PipeConfig) -> Result<(VoxelGrid, Vec<Sensitivity>), PipeError> {
    cfg.validate()?;
    let grid = cfg.window_grid();
    let coil = cfg.coil_spec();
    let sensors = cfg.sensor_specs();
    let sens = cfg
        .frequencies
        .par_iter()
        .map(|&hz| -> Result<Sensitivity, EddyError> {
            let model = cfg.model(hz);
            let table = ModeTable::new(&model)?;
            if !table.skipped.is_empty() {
                log::debug!("{hz} Hz: {} ill-conditioned modes left out", table.skipped.len());
            }
            let c = coil_spectrum_grid(&model, &coil, &CoilQuadrature::default())?;
            let s = sensors.iter().map(|s| sensor_spectrum_grid(&model, s)).collect::<Result<Vec<_>, _>>()?;
            build_sensitivity(&table, &c, &s, &grid, cfg.window.subdivision)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((grid, sens))
}

pub fn probe_operator(cfg: &PipeConfig) -> Result<ProbeOperator, PipeError> {
    let (grid, sens) = probe_sensitivities(cfg)?;
    let n = grid.len();
    let sigma = vec![cfg.sigma; n];
    let mu = vec![MU0 * cfg.mu_r; n];
    let mut channels = assemble_phi(&sens, &sigma, &mu)?;
    let count: usize = channels.iter().map(|c| c.len()).sum();
    let energy: f64 = channels.iter().map(|c| c.norm_squared()).sum();
    let scale = (energy / count as f64).sqrt();
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(PipeError::Config("probe response vanishes".into()));
    }
    for c in &mut channels {
        *c /= scale;
    }
    let truncation_ratio = sens.iter().map(|s| s.truncation_ratio).fold(0.0, f64::max);
    Ok(ProbeOperator { grid, channels, scale, truncation_ratio })
}

/// Binary defect map of the full grid.
pub fn defect_map(cfg: &PipeConfig) -> Vec<bool> {
    let full = cfg.full_grid();
    let mut x = vec![false; full.len()];
    for d in &cfg.defects {
        x[full.index(d[0], d[1], d[2])] = true;
    }
    x
}

/// Full-grid index of each window voxel at stop `p`.
fn window_indices(cfg: &PipeConfig, p: usize) -> Vec<usize> {
    let (win, full) = (cfg.window_grid(), cfg.full_grid());
    let offset = p * cfg.step_bins();
    (0..win.len())
        .map(|j| {
            let (r, f, q) = win.coords(j);
            full.index(r, f, q + offset)
        })
        .collect()
}

/// Channels of stop `p`: window slice of the truth, optional white noise.
pub fn synthesize(cfg: &PipeConfig, op: &ProbeOperator, truth: &[bool], p: usize) -> Result<MeasurementSet, PipeError> {
    let idx = window_indices(cfg, p);
    let x = DVector::from_iterator(idx.len(), idx.iter().map(|&i| f64::from(u8::from(truth[i]))));
    let mut chans = Vec::with_capacity(op.channels.len());
    for (l, phi) in op.channels.iter().enumerate() {
        let mut y = phi * &x;
        if let Some(snr) = cfg.snr_db {
            // Noise variance from the mean column energy, so empty windows are noisy too.
            let var = phi.norm_squared() / phi.len() as f64 / 10f64.powf(snr / 10.0);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((p as u64) << 16) | l as u64);
            for v in y.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v += g * var.sqrt();
            }
        }
        chans.push(Channel::new(phi.clone(), y));
    }
    Ok(MeasurementSet::new(chans)?)
}

pub fn settings(cfg: &PipeConfig) -> Settings {
    let mut st = Settings::default();
    st.priors.threshold = cfg.threshold;
    match cfg.snr_db {
        None => {
            st.priors.beta0 = InitialPrecision::Fixed(1.0);
            st.convex.epsilon_override = Some(0.0);
        }
        Some(_) => st.priors.beta0 = InitialPrecision::FromData,
    }
    st
}

/// One stop's image on the full grid: window voxels carry the estimate's
/// log-odds and the rest the prior.
#[derive(Debug, Clone)]
pub struct StopResult {
    pub image: VoxelImage,
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn recover_stop(cfg: &PipeConfig, op: &ProbeOperator, truth: &[bool], p: usize) -> Result<StopResult, PipeError> {
    let ms = synthesize(cfg, op, truth, p)?;
    let ms = if cfg.algorithm.multi_channel() { ms } else { stack_channels(&ms)? };
    let r = recover(&ms, cfg.algorithm, &settings(cfg)).map_err(|source| PipeError::Recover { position: p, source })?;
    let full = cfg.full_grid();
    let mut image = VoxelImage::uniform(full, cfg.prior, cfg.sigma, MU0 * cfg.mu_r);
    for (&i, &x) in window_indices(cfg, p).iter().zip(&r.x) {
        image.logodds[i] = estimate_logit(x);
    }
    Ok(StopResult { image, x: r.x, iterations: r.iterations, converged: r.converged })
}

/// Single-channel algorithms see all channels as one tall system.
fn stack_channels(ms: &MeasurementSet) -> Result<MeasurementSet, PipeError> {
    let (m, n, l) = (ms.m(), ms.n(), ms.l());
    let phi = DMatrix::from_fn(m * l, n, |i, j| ms.channels()[i / m].phi()[(i % m, j)]);
    let y = DVector::from_fn(m * l, |i, _| ms.channels()[i / m].y()[i % m]);
    Ok(MeasurementSet::single(phi, y)?)
}

#[derive(Debug, Clone)]
pub struct PipeImage {
    pub merged: VoxelImage,
    pub stops: Vec<StopResult>,
    pub truth: Vec<bool>,
    pub truncation_ratio: f64,
    pub scale: f64,
}

impl PipeImage {
    pub fn binary(&self, threshold: f64) -> Vec<bool> {
        self.merged.probabilities().iter().map(|&p| p > threshold).collect()
    }

    pub fn iou(&self, threshold: f64) -> f64 {
        iou(&self.binary(threshold), &self.truth).expect("same grid")
    }
}

/// Merges stop images in the given order.
pub fn merge_stops(cfg: &PipeConfig, stops: &[&VoxelImage]) -> Result<VoxelImage, PipeError> {
    let images: Vec<VoxelImage> = stops.iter().map(|&s| s.clone()).collect();
    let priors = vec![cfg.prior; cfg.full_grid().len()];
    Ok(merge_logodds(&images, &priors, LOGIT_LIMIT)?)
}

pub fn image_pipe(cfg: &PipeConfig) -> Result<PipeImage, PipeError> {
    let op = probe_operator(cfg)?;
    image_with_operator(cfg, &op)
}

/// Runs every stop against a precomputed probe operator.
pub fn image_with_operator(cfg: &PipeConfig, op: &ProbeOperator) -> Result<PipeImage, PipeError> {
    let truth = defect_map(cfg);
    let stops = (0..cfg.probe_positions)
        .into_par_iter()
        .map(|p| recover_stop(cfg, op, &truth, p))
        .collect::<Result<Vec<_>, _>>()?;
    let merged = merge_stops(cfg, &stops.iter().map(|s| &s.image).collect::<Vec<_>>())?;
    Ok(PipeImage { merged, stops, truth, truncation_ratio: op.truncation_ratio, scale: op.scale })
}

pub const IMAGE_CSV_HEADER: &str = "voxel,layer,phi_bin,z_bin,logodds,p";

pub fn image_csv(image: &VoxelImage) -> String {
    let mut s = String::from(IMAGE_CSV_HEADER);
    s.push('\n');
    for (j, &l) in image.logodds.iter().enumerate() {
        let (r, p, q) = image.grid.coords(j);
        let _ = writeln!(s, "{j},{r},{p},{q},{l},{}", bitrec_core::eddy::sensitivity::sigmoid(l));
    }
    s
}

/// Unrolled-cylinder heat map of one layer: z across, φ down, white to black in p.
pub fn layer_svg(image: &VoxelImage, layer: usize) -> String {
    let g = &image.grid;
    let cell = 14.0;
    let (pad, w, h) = (40.0, g.n_z() as f64 * cell, g.n_phi as f64 * cell);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}">"#,
        w + 2.0 * pad,
        h + 2.0 * pad
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (r0, r1) = (g.rho_edges[layer], g.rho_edges[layer + 1]);
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="20" font-size="12">layer {layer}: rho {:.3} to {:.3} mm</text>"#,
        r0 * 1e3,
        r1 * 1e3
    );
    for p in 0..g.n_phi {
        for q in 0..g.n_z() {
            let prob = bitrec_core::eddy::sensitivity::sigmoid(image.logodds[g.index(layer, p, q)]);
            let shade = (255.0 * (1.0 - prob)).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},{shade})"/>"#,
                pad + q as f64 * cell,
                pad + p as f64 * cell
            );
        }
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">z bin</text>"#, pad + w / 2.0, h + pad + 20.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" transform="rotate(-90 14 {})">phi bin</text>"#,
        pad + h / 2.0,
        pad + h / 2.0
    );
    s.push_str("</svg>\n");
    s
}

pub fn metadata(cfg: &PipeConfig, img: &PipeImage, threads: usize) -> serde_json::Value {
    serde_json::json!({
        "config": cfg,
        "seed": cfg.seed,
        "threads": threads,
        "version": env!("CARGO_PKG_VERSION"),
        "inverse_crime": INVERSE_CRIME_NOTE,
        "material": "conductivity is a configured aluminium-class value, not a measured one",
        "noise": "white Gaussian per channel with variance mean(Phi_l^2) / 10^(snr/10)",
        "normalisation": "every channel is divided by the rms entry over all channels",
        "voxel_logit": "logit(clamp(x, 1e-6, 1 - 1e-6)); voxels outside a stop's window keep the prior",
        "logit_limit": LOGIT_LIMIT,
        "scale": img.scale,
        "truncation_ratio": img.truncation_ratio,
        "iou": img.iou(cfg.threshold),
        "prior_logit": logit(cfg.prior),
    })
}
