//! Synthetic experiment harness: random instances, trial sweeps, IoU statistics,
//! and CSV/SVG/JSON emission.

use std::fmt::Write as _;
use std::time::Instant;

use bitrec_core::model::{iou, Channel, InitialPrecision, MeasurementSet};
use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::recover::{recover, Algorithm, Settings};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    M,
    SparsityS,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::M => "m",
            Self::SparsityS => "sparsity_s",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Beta0Rule {
    /// `M / ‖y‖²` per channel.
    FromData,
    /// One value for all channels from the mean requested SNR:
    /// `M (1 + 10^(snr/10)) / ‖y‖²` averaged over channels.
    NominalSnr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Beta0Spec {
    Fixed(f64),
    Rule(Beta0Rule),
}

/// Optional overrides of the algorithm defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub d: Option<f64>,
    /// Defaults to 1 for noiseless experiments and `nominal-snr` otherwise.
    pub beta0: Option<Beta0Spec>,
    pub epsilon_c: Option<f64>,
    pub threshold: Option<f64>,
    /// Split Bregman weight relative to `‖Φᵀy‖∞` (default 0.1).
    pub lambda_rel: Option<f64>,
    pub bregman_mu: Option<f64>,
    pub sbl_prune_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub n: usize,
    pub m: usize,
    #[serde(default = "one")]
    pub l_channels: usize,
    pub sparsity_s: usize,
    #[serde(default)]
    pub snr_db: Option<Vec<f64>>,
    pub trials: usize,
    pub seed: u64,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub overrides: Overrides,
}

fn one() -> usize {
    1
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |s: &str| Err(BenchError::InvalidSpec(s.to_owned()));
        if self.n == 0 || self.m == 0 || self.l_channels == 0 || self.trials == 0 {
            return bad("n, m, l_channels and trials must be at least 1");
        }
        if self.sparsity_s > self.n {
            return bad("sparsity_s exceeds n");
        }
        if self.trials >= 1 << 24 || self.l_channels >= 1 << 16 {
            return bad("trials must be below 2^24 and l_channels below 2^16");
        }
        if let Some(snr) = &self.snr_db {
            if snr.len() != self.l_channels {
                return bad("snr_db must list one value per channel");
            }
            if snr.iter().any(|v| !v.is_finite()) {
                return bad("snr_db values must be finite");
            }
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms selected");
        }
        if self.l_channels > 1 {
            if let Some(a) = self.algorithms.iter().find(|a| !a.multi_channel()) {
                return Err(BenchError::InvalidSpec(format!("{a} supports a single channel only")));
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return bad("sweep has no values");
            }
            for &v in &sw.values {
                let (m, s) = match sw.param {
                    SweepParam::M => (v, self.sparsity_s),
                    SweepParam::SparsityS => (self.m, v),
                };
                if m == 0 || s > self.n {
                    return bad("sweep value out of range");
                }
            }
        }
        Ok(())
    }

    /// The spec with the swept parameter set to `value` and the sweep removed.
    pub fn at(&self, value: usize) -> Self {
        let mut s = self.clone();
        if let Some(sw) = &self.sweep {
            match sw.param {
                SweepParam::M => s.m = value,
                SweepParam::SparsityS => s.sparsity_s = value,
            }
        }
        s.sweep = None;
        s
    }

    fn points(&self) -> (SweepParam, Vec<usize>) {
        match &self.sweep {
            Some(sw) => (sw.param, sw.values.clone()),
            None => (SweepParam::M, vec![self.m]),
        }
    }
}

const PURPOSE_SUPPORT: u64 = 0;
const PURPOSE_PHI: u64 = 1;
const PURPOSE_NOISE: u64 = 2;

/// Independent stream for each (trial, channel, purpose) under the spec's seed.
fn stream(seed: u64, trial: usize, channel: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((trial as u64) << 40) | ((channel as u64) << 8) | purpose);
    rng
}

/// Random instance for `trial`. Φ is filled row by row, so instances that differ
/// only in M share their leading rows.
pub fn generate_instance(spec: &ExperimentSpec, trial: usize) -> (MeasurementSet, Vec<bool>) {
    let (n, m) = (spec.n, spec.m);
    let mut x_true = vec![false; n];
    let mut rng = stream(spec.seed, trial, 0, PURPOSE_SUPPORT);
    for j in index::sample(&mut rng, n, spec.sparsity_s) {
        x_true[j] = true;
    }
    let xv = DVector::from_iterator(n, x_true.iter().map(|&b| f64::from(u8::from(b))));
    let mut channels = Vec::with_capacity(spec.l_channels);
    for l in 0..spec.l_channels {
        let mut rng = stream(spec.seed, trial, l, PURPOSE_PHI);
        let data: Vec<f64> = (0..m * n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let phi = DMatrix::from_row_slice(m, n, &data);
        let mut y = &phi * &xv;
        if let Some(snr) = &spec.snr_db {
            let mut rng = stream(spec.seed, trial, l, PURPOSE_NOISE);
            let noise: DVector<f64> = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
            let signal = y.norm_squared();
            let raw = noise.norm_squared();
            if signal > 0.0 && raw > 0.0 {
                let scale = (signal / raw / 10f64.powf(snr[l] / 10.0)).sqrt();
                y += noise * scale;
            }
        }
        channels.push(Channel::new(phi, y));
    }
    let ms = MeasurementSet::new(channels).expect("generated instance is well formed");
    (ms, x_true)
}

/// Algorithm settings for one instance of `spec`.
pub fn settings_for(spec: &ExperimentSpec, ms: &MeasurementSet) -> Settings {
    let o = &spec.overrides;
    let mut st = Settings::default();
    let p = &mut st.priors;
    p.a = o.a.unwrap_or(p.a);
    p.b = o.b.unwrap_or(p.b);
    p.c = o.c.unwrap_or(p.c);
    p.d = o.d.unwrap_or(p.d);
    p.epsilon_c = o.epsilon_c.unwrap_or(p.epsilon_c);
    p.threshold = o.threshold.unwrap_or(p.threshold);
    let rule = o.beta0.unwrap_or(match spec.snr_db {
        None => Beta0Spec::Fixed(1.0),
        Some(_) => Beta0Spec::Rule(Beta0Rule::NominalSnr),
    });
    p.beta0 = match rule {
        Beta0Spec::Fixed(v) => InitialPrecision::Fixed(v),
        Beta0Spec::Rule(Beta0Rule::FromData) => InitialPrecision::FromData,
        Beta0Spec::Rule(Beta0Rule::NominalSnr) => InitialPrecision::Fixed(nominal_precision(spec, ms)),
    };
    if spec.snr_db.is_none() {
        // Noiseless data: the residual ball collapses to the affine set.
        st.convex.epsilon_override = Some(0.0);
    }
    if let Some(mu) = o.bregman_mu {
        st.baseline.bregman_mu = Some(mu);
    }
    if let Some(t) = o.sbl_prune_tol {
        st.baseline.sbl_prune_tol = t;
    }
    if ms.l() == 1 {
        let ch = &ms.channels()[0];
        let lam = bitrec_core::baselines::default_lambda(ch.phi(), ch.y()) * o.lambda_rel.unwrap_or(0.1) / 0.1;
        st.baseline.lambda_reg = (lam > 0.0).then_some(lam);
    }
    st
}

fn nominal_precision(spec: &ExperimentSpec, ms: &MeasurementSet) -> f64 {
    let Some(snr) = &spec.snr_db else { return 1.0 };
    let mean_snr = snr.iter().sum::<f64>() / snr.len() as f64;
    let ratio = 10f64.powf(mean_snr / 10.0);
    let m = ms.m() as f64;
    let per: Vec<f64> = ms
        .channels()
        .iter()
        .map(|c| c.y().norm_squared())
        .filter(|&e| e > 0.0)
        .map(|e| m * (1.0 + ratio) / e)
        .collect();
    if per.is_empty() {
        1.0
    } else {
        per.iter().sum::<f64>() / per.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sweep_param: &'static str,
    pub value: usize,
    pub algorithm: Algorithm,
    pub trials: usize,
    pub mean_iou: f64,
    pub std_iou: f64,
    pub mean_runtime_ms: Option<f64>,
    pub failures: usize,
}

impl SweepRow {
    /// Standard error of the mean IoU.
    pub fn std_error(&self) -> f64 {
        let ok = self.trials - self.failures;
        if ok == 0 {
            0.0
        } else {
            self.std_iou / (ok as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record wall-clock time per recovery. Off by default so output bytes depend
    /// only on the spec.
    pub timing: bool,
}

struct TrialOutcome {
    iou: Option<f64>,
    millis: f64,
}

pub fn run_sweep(spec: &ExperimentSpec, opts: RunOptions) -> Result<SweepResult, BenchError> {
    spec.validate()?;
    let (param, values) = spec.points();
    let jobs: Vec<(usize, usize)> = (0..values.len()).flat_map(|v| (0..spec.trials).map(move |t| (v, t))).collect();
    let outcomes: Vec<Vec<TrialOutcome>> = jobs
        .par_iter()
        .map(|&(v, t)| {
            let local = spec.at(values[v]);
            let (ms, x_true) = generate_instance(&local, t);
            let st = settings_for(&local, &ms);
            spec.algorithms
                .iter()
                .map(|&algo| {
                    let start = opts.timing.then(Instant::now);
                    let res = recover(&ms, algo, &st);
                    let millis = start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3);
                    match res {
                        Ok(r) => TrialOutcome { iou: iou(&r.binary, &x_true).ok(), millis },
                        Err(e) => {
                            log::debug!("{algo} failed on trial {t} at {}={}: {e}", param.name(), values[v]);
                            TrialOutcome { iou: None, millis }
                        }
                    }
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    for (v, &value) in values.iter().enumerate() {
        let block = &outcomes[v * spec.trials..(v + 1) * spec.trials];
        for (k, &algo) in spec.algorithms.iter().enumerate() {
            let scores: Vec<f64> = block.iter().filter_map(|o| o[k].iou).collect();
            let failures = spec.trials - scores.len();
            let (mean, std) = mean_std(&scores);
            let mean_runtime_ms =
                opts.timing.then(|| block.iter().map(|o| o[k].millis).sum::<f64>() / spec.trials as f64);
            rows.push(SweepRow {
                sweep_param: param.name(),
                value,
                algorithm: algo,
                trials: spec.trials,
                mean_iou: mean,
                std_iou: std,
                mean_runtime_ms,
                failures,
            });
        }
    }
    Ok(SweepResult { rows })
}

/// Mean and sample standard deviation (0 for fewer than two values).
fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub const CSV_HEADER: &str = "sweep_param,value,algorithm,trials,mean_iou,std_iou,mean_runtime_ms,failures";

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let rt = r.mean_runtime_ms.map(|v| format!("{v:.3}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.sweep_param, r.value, r.algorithm, r.trials, r.mean_iou, r.std_iou, rt, r.failures
            );
        }
        s
    }

    pub fn row(&self, value: usize, algo: Algorithm) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value && r.algorithm == algo)
    }

    /// Line chart of mean IoU against the swept value, one polyline per algorithm.
    pub fn to_svg(&self, n: usize) -> String {
        let (w, h, pad) = (640.0, 400.0, 50.0);
        let xs: Vec<f64> = self.rows.iter().map(|r| r.value as f64 / n as f64).collect();
        let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let px = |x: f64| pad + (x - lo) / span * (w - 2.0 * pad);
        let py = |y: f64| h - pad - y * (h - 2.0 * pad);
        let param = self.rows.first().map_or("m", |r| r.sweep_param);
        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}">"#);
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<path d="M{pad} {} L{pad} {} L{} {}" stroke="black" fill="none"/>"#,
            pad,
            h - pad,
            w - pad,
            h - pad
        );
        for k in 0..=4 {
            let y = k as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{y:.2}</text>"#, pad - 6.0, py(y) + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{param} / N</text>"#, w / 2.0, h - 12.0);
        let _ = writeln!(s, r#"<text x="14" y="{}" font-size="12" transform="rotate(-90 14 {})">mean IoU</text>"#, h / 2.0, h / 2.0);
        let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
        let mut algos: Vec<Algorithm> = Vec::new();
        for r in &self.rows {
            if !algos.contains(&r.algorithm) {
                algos.push(r.algorithm);
            }
        }
        for (k, algo) in algos.iter().enumerate() {
            let color = colors[k % colors.len()];
            let pts: Vec<String> = self
                .rows
                .iter()
                .filter(|r| r.algorithm == *algo)
                .map(|r| format!("{:.2},{:.2}", px(r.value as f64 / n as f64), py(r.mean_iou)))
                .collect();
            let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="2"/>"#, pts.join(" "));
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="12" fill="{color}">{algo}</text>"#,
                w - pad - 90.0,
                pad + 16.0 * k as f64
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Run metadata written next to the CSV.
pub fn metadata(spec: &ExperimentSpec, threads: usize) -> serde_json::Value {
    serde_json::json!({
        "spec": spec,
        "seed": spec.seed,
        "threads": threads,
        "version": env!("CARGO_PKG_VERSION"),
        "git_describe": option_env!("BITREC_GIT_DESCRIBE").unwrap_or("unknown"),
        "snr_convention": "noise rescaled per realisation so that the realised SNR equals the target exactly",
        "thresholding": "every continuous output, including the baselines, is thresholded at the configured threshold (default 0.5) before IoU",
        "noiseless_convex": "the residual ball radius is 0 when no SNR is given",
        "beta0_default": "1 for noiseless experiments, nominal-snr otherwise",
    })
}
