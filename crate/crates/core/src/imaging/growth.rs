use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::{measure_turbidity, GrayImage, Roi};
use super::ImagingError;

/// Logistic-with-lag parameters: rate `r` in 1/h, capacity `k`, lag in h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    pub r: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub lag: f64,
}

/// `K / (1 + exp(-r (t - lag) + 2))` with `t` in hours. The midpoint sits
/// `2 / r` after the lag, where the tangent at the midpoint crosses zero.
pub fn logistic_with_lag(p: &GrowthParams, t_h: f64) -> f64 {
    p.k / (1.0 + (-p.r * (t_h - p.lag) + 2.0).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrowthFitConfig {
    pub min_samples: usize,
    pub min_span_h: f64,
    /// Largest accepted RMS residual relative to the curve scale.
    pub max_relative_rmse: f64,
    /// Fitted `K` below this fraction of the curve scale is reported as no growth.
    pub no_growth_fraction: f64,
    pub simplex_tol: f64,
    pub max_iterations: usize,
}

impl Default for GrowthFitConfig {
    fn default() -> Self {
        Self {
            min_samples: 6,
            min_span_h: 2.0,
            max_relative_rmse: 0.2,
            no_growth_fraction: 0.01,
            simplex_tol: 1e-8,
            max_iterations: 5000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub params: GrowthParams,
    /// Sum of squared residuals.
    pub residual: f64,
    pub no_growth: bool,
}

/// Nelder–Mead minimisation from `x0` with initial edge lengths `step`.
/// Stops when every vertex lies within `tol` of the best one and the
/// function values agree within `tol`, or after `max_iter` iterations.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], step: &[f64], tol: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step[i];
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect() };
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].clone();
        let spread = simplex
            .iter()
            .map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= tol && (simplex[n].1 - best.1).abs() <= tol {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v.0[j]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].clone();
        let xr = lerp(&centroid, &worst.0, -1.0);
        let fr = f(&xr);
        if fr < best.1 {
            let xe = lerp(&centroid, &worst.0, -2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = lerp(&centroid, &xr, 0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = lerp(&centroid, &worst.0, 0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                for v in simplex.iter_mut().skip(1) {
                    v.0 = lerp(&best.0, &v.0, 0.5);
                    v.1 = f(&v.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

fn sse(samples: &[(f64, f64)], p: &GrowthParams) -> f64 {
    samples.iter().map(|&(t, y)| (logistic_with_lag(p, t / 60.0) - y).powi(2)).sum()
}

/// Least-squares `K` for fixed `r` and lag.
fn best_k(samples: &[(f64, f64)], r: f64, lag: f64) -> f64 {
    let unit = GrowthParams { r, k: 1.0, lag };
    let (mut fy, mut ff) = (0.0, 0.0);
    for &(t, y) in samples {
        let s = logistic_with_lag(&unit, t / 60.0);
        fy += s * y;
        ff += s * s;
    }
    if ff > 0.0 {
        (fy / ff).max(0.0)
    } else {
        0.0
    }
}

/// Fit the logistic-with-lag curve to `(t_min, intensity)` samples: a grid
/// over rate and lag (with the optimal `K` for each) seeds a Nelder–Mead
/// search over `(ln r, ln K, lag)`.
pub fn fit_growth(samples: &[(f64, f64)], cfg: &GrowthFitConfig) -> Result<GrowthFit, ImagingError> {
    if samples.len() < cfg.min_samples {
        return Err(ImagingError::InsufficientSamples(format!(
            "{} samples; at least {} are required",
            samples.len(),
            cfg.min_samples
        )));
    }
    if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(ImagingError::InsufficientSamples("sample times must increase strictly".into()));
    }
    let span_h = (samples[samples.len() - 1].0 - samples[0].0) / 60.0;
    if span_h < cfg.min_span_h {
        return Err(ImagingError::InsufficientSamples(format!(
            "samples span {span_h} h; at least {} h is required",
            cfg.min_span_h
        )));
    }
    let scale = samples.iter().map(|s| s.1.abs()).fold(0.0, f64::max);
    let t_end_h = samples[samples.len() - 1].0 / 60.0;

    let mut seed = GrowthParams { r: 1.0, k: 0.0, lag: 0.0 };
    let mut seed_sse = f64::INFINITY;
    for i in 0..=24 {
        let r = 0.05 * 10f64.powf(i as f64 / 12.0);
        for j in 0..=40 {
            let lag = t_end_h * j as f64 / 40.0;
            let k = best_k(samples, r, lag);
            let p = GrowthParams { r, k, lag };
            let e = sse(samples, &p);
            if e < seed_sse {
                (seed, seed_sse) = (p, e);
            }
        }
    }
    if scale == 0.0 || seed.k < cfg.no_growth_fraction * scale {
        return Ok(GrowthFit {
            params: seed,
            residual: seed_sse,
            no_growth: true,
        });
    }

    // The search runs over unclamped lags so that a lag near zero does not
    // sit on a flat region; a negative optimum is clamped afterwards.
    let unpack = |x: &[f64]| GrowthParams {
        r: x[0].exp(),
        k: x[1].exp(),
        lag: x[2],
    };
    let objective = |x: &[f64]| sse(samples, &unpack(x));
    let x0 = [seed.r.ln(), seed.k.ln(), seed.lag];
    let (x, mut residual) = nelder_mead(objective, &x0, &[0.1, 0.1, 0.1 * t_end_h.max(1.0)], cfg.simplex_tol, cfg.max_iterations);
    let mut params = unpack(&x);
    if params.lag < 0.0 {
        params.lag = 0.0;
        residual = sse(samples, &params);
    }
    let rel_rmse = (residual / samples.len() as f64).sqrt() / scale;
    if !(rel_rmse <= cfg.max_relative_rmse) {
        return Err(ImagingError::FitDiverged {
            residual: rel_rmse,
            ceiling: cfg.max_relative_rmse,
        });
    }
    Ok(GrowthFit {
        params,
        residual,
        no_growth: params.k < cfg.no_growth_fraction * scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyFlag {
    pub colony: usize,
    /// Fitted lag minus the flagging threshold, in hours.
    pub lag_excess: f64,
    pub flagged: bool,
}

/// Flag colonies whose lag exceeds the control mean by more than three
/// sample standard deviations and whose capacity reaches 1% of the mean
/// control capacity. Returns one entry per colony.
pub fn detect_persister_latency(colonies: &[GrowthParams], controls: &[GrowthParams]) -> Result<Vec<LatencyFlag>, ImagingError> {
    if controls.len() < 3 {
        return Err(ImagingError::InsufficientControls(controls.len()));
    }
    let n = controls.len() as f64;
    let mean = controls.iter().map(|c| c.lag).sum::<f64>() / n;
    let sd = (controls.iter().map(|c| (c.lag - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let threshold = mean + 3.0 * sd;
    let k_floor = 0.01 * controls.iter().map(|c| c.k).sum::<f64>() / n;
    Ok(colonies
        .iter()
        .enumerate()
        .map(|(colony, c)| LatencyFlag {
            colony,
            lag_excess: c.lag - threshold,
            flagged: c.lag > threshold && c.k >= k_floor,
        })
        .collect())
}

/// Layout and kinetics of a synthetic scanner run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchSpec {
    pub plates: usize,
    pub colonies_per_plate: usize,
    /// Reference colonies grown without drug, used as the lag baseline.
    pub controls: usize,
    pub scan_period_min: f64,
    pub duration_min: f64,
    pub lag_mean_h: f64,
    /// Standard deviation of the (uniform) lag spread.
    pub lag_sigma_h: f64,
    /// The single persister colony lags this many sigmas behind the mean.
    pub outlier_sigmas: f64,
    pub r_range: (f64, f64),
    pub k_range: (f64, f64),
    pub pixel_noise: f64,
    /// Side of the square cell holding one colony, in pixels.
    pub cell_px: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            plates: 6,
            colonies_per_plate: 20,
            controls: 24,
            scan_period_min: 20.0,
            duration_min: 720.0,
            lag_mean_h: 2.0,
            lag_sigma_h: 0.1,
            outlier_sigmas: 5.0,
            r_range: (0.8, 1.2),
            k_range: (0.6, 1.0),
            pixel_noise: 0.01,
            cell_px: 8,
        }
    }
}

const BACKGROUND: f64 = 0.05;
const GAIN: f64 = 0.8;
const GRID_COLS: usize = 5;

/// Time-lapse scans of one plate with the colony regions known.
#[derive(Debug, Clone)]
pub struct PlateScan {
    pub frames: Vec<(f64, GrayImage)>,
    pub rois: Vec<Roi>,
}

impl PlateScan {
    /// Background-subtracted turbidity series of every colony.
    pub fn curves(&self) -> Result<Vec<Vec<(f64, f64)>>, ImagingError> {
        self.rois
            .iter()
            .map(|&roi| {
                self.frames
                    .iter()
                    .map(|(t, img)| Ok((*t, (measure_turbidity(img, roi)? - BACKGROUND) / GAIN)))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBatch {
    pub plates: Vec<PlateScan>,
    pub reference: PlateScan,
    pub truth: Vec<Vec<GrowthParams>>,
    /// `(plate, colony)` of the persister colony.
    pub outlier: (usize, usize),
}

fn render_plate<R: Rng>(params: &[GrowthParams], spec: &BatchSpec, rng: &mut R) -> PlateScan {
    let rows = params.len().div_ceil(GRID_COLS).max(1);
    let (w, h) = (GRID_COLS * spec.cell_px, rows * spec.cell_px);
    let rois: Vec<Roi> = (0..params.len())
        .map(|i| Roi {
            x: (i % GRID_COLS) * spec.cell_px + 1,
            y: (i / GRID_COLS) * spec.cell_px + 1,
            width: spec.cell_px - 2,
            height: spec.cell_px - 2,
        })
        .collect();
    let noise = Normal::new(0.0, spec.pixel_noise).expect("finite noise");
    let scans = (spec.duration_min / spec.scan_period_min).floor() as usize;
    let frames = (0..=scans)
        .map(|s| {
            let t = s as f64 * spec.scan_period_min;
            let mut pixels = vec![BACKGROUND; w * h];
            for (p, roi) in params.iter().zip(&rois) {
                let v = BACKGROUND + GAIN * logistic_with_lag(p, t / 60.0);
                for y in roi.y..roi.y + roi.height {
                    pixels[y * w + roi.x..y * w + roi.x + roi.width].fill(v);
                }
            }
            for px in &mut pixels {
                *px += noise.sample(rng);
            }
            (t, GrayImage::new(w, h, pixels).expect("size matches"))
        })
        .collect();
    PlateScan { frames, rois }
}

/// Plates of colonies with lags spread uniformly within `±√3 σ` of the mean
/// and one colony lagging `outlier_sigmas · σ` behind.
pub fn synthetic_batch(spec: &BatchSpec, seed: u64) -> SyntheticBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 3f64.sqrt() * spec.lag_sigma_h;
    let draw = |rng: &mut ChaCha8Rng| GrowthParams {
        r: rng.random_range(spec.r_range.0..=spec.r_range.1),
        k: rng.random_range(spec.k_range.0..=spec.k_range.1),
        lag: spec.lag_mean_h + rng.random_range(-half..=half),
    };
    let mut truth: Vec<Vec<GrowthParams>> = (0..spec.plates)
        .map(|_| (0..spec.colonies_per_plate).map(|_| draw(&mut rng)).collect())
        .collect();
    let outlier = (rng.random_range(0..spec.plates), rng.random_range(0..spec.colonies_per_plate));
    truth[outlier.0][outlier.1].lag = spec.lag_mean_h + spec.outlier_sigmas * spec.lag_sigma_h;
    let controls: Vec<GrowthParams> = (0..spec.controls).map(|_| draw(&mut rng)).collect();
    let plates = truth.iter().map(|t| render_plate(t, spec, &mut rng)).collect();
    let reference = render_plate(&controls, spec, &mut rng);
    SyntheticBatch {
        plates,
        reference,
        truth,
        outlier,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColonyRecord {
    pub plate: usize,
    pub colony: usize,
    pub r: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub lag: f64,
    pub flagged: bool,
}

impl SyntheticBatch {
    /// Fit every colony and the reference plate, then flag late growers.
    pub fn process(&self, cfg: &GrowthFitConfig) -> Result<Vec<ColonyRecord>, ImagingError> {
        let fit_all = |scan: &PlateScan| -> Result<Vec<GrowthParams>, ImagingError> {
            scan.curves()?.iter().map(|c| Ok(fit_growth(c, cfg)?.params)).collect()
        };
        let controls = fit_all(&self.reference)?;
        let mut records = Vec::new();
        for (plate, scan) in self.plates.iter().enumerate() {
            let fits = fit_all(scan)?;
            let flags = detect_persister_latency(&fits, &controls)?;
            records.extend(fits.iter().zip(flags).map(|(p, f)| ColonyRecord {
                plate,
                colony: f.colony,
                r: p.r,
                k: p.k,
                lag: p.lag,
                flagged: f.flagged,
            }));
        }
        Ok(records)
    }
}

pub fn write_colony_csv<W: Write>(records: &[ColonyRecord], writer: W) -> Result<(), ImagingError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r).map_err(|e| ImagingError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| ImagingError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(p: &GrowthParams, n: usize, dt_min: f64) -> Vec<(f64, f64)> {
        (0..n).map(|i| {
            let t = i as f64 * dt_min;
            (t, logistic_with_lag(p, t / 60.0))
        }).collect()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        ((a - b) / b).abs() <= rel
    }

    #[test]
    fn noiseless_round_trip() {
        let truth = GrowthParams { r: 0.8, k: 1.0, lag: 1.0 };
        let fit = fit_growth(&sample(&truth, 37, 20.0), &GrowthFitConfig::default()).unwrap();
        let p = fit.params;
        assert!(close(p.r, 0.8, 0.05) && close(p.k, 1.0, 0.05) && close(p.lag, 1.0, 0.05), "{p:?}");
        assert!(!fit.no_growth);
    }

    #[test]
    fn one_percent_noise_keeps_rate_within_ten_percent() {
        let truth = GrowthParams { r: 0.8, k: 1.0, lag: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let noisy: Vec<_> = sample(&truth, 37, 20.0).into_iter().map(|(t, y)| (t, y + noise.sample(&mut rng))).collect();
        let fit = fit_growth(&noisy, &GrowthFitConfig::default()).unwrap();
        assert!(close(fit.params.r, 0.8, 0.10), "{:?}", fit.params);
    }

    #[test]
    fn zero_curve_is_no_growth() {
        let flat: Vec<_> = (0..10).map(|i| (i as f64 * 30.0, 0.0)).collect();
        assert!(fit_growth(&flat, &GrowthFitConfig::default()).unwrap().no_growth);
    }

    #[test]
    fn sample_preconditions() {
        let cfg = GrowthFitConfig::default();
        let few: Vec<_> = (0..5).map(|i| (i as f64 * 60.0, 0.1)).collect();
        assert!(matches!(fit_growth(&few, &cfg), Err(ImagingError::InsufficientSamples(_))));
        let short: Vec<_> = (0..8).map(|i| (i as f64 * 10.0, 0.1)).collect();
        assert!(matches!(fit_growth(&short, &cfg), Err(ImagingError::InsufficientSamples(_))));
    }

    #[test]
    fn garbage_diverges() {
        let zigzag: Vec<_> = (0..20).map(|i| (i as f64 * 30.0, if i % 2 == 0 { 1.0 } else { 0.0 })).collect();
        assert!(matches!(
            fit_growth(&zigzag, &GrowthFitConfig::default()),
            Err(ImagingError::FitDiverged { .. })
        ));
    }

    fn p(lag: f64, k: f64) -> GrowthParams {
        GrowthParams { r: 1.0, k, lag }
    }

    #[test]
    fn latency_rules() {
        let controls = vec![p(2.0, 1.0), p(2.1, 1.0), p(1.9, 1.0), p(2.0, 1.0)];
        let flags = detect_persister_latency(&[p(2.0, 1.0), p(2.5, 0.9), p(9.0, 0.001)], &controls).unwrap();
        let flagged: Vec<usize> = flags.iter().filter(|f| f.flagged).map(|f| f.colony).collect();
        assert_eq!(flagged, vec![1]);
        let same = vec![p(2.0, 1.0); 3];
        assert!(detect_persister_latency(&same, &same).unwrap().iter().all(|f| !f.flagged));
        assert_eq!(
            detect_persister_latency(&same, &same[..2]),
            Err(ImagingError::InsufficientControls(2))
        );
    }

    #[test]
    fn batch_flags_only_the_outlier() {
        let spec = BatchSpec::default();
        let batch = synthetic_batch(&spec, 1);
        let records = batch.process(&GrowthFitConfig::default()).unwrap();
        assert_eq!(records.len(), 120);
        let flagged: Vec<_> = records.iter().filter(|r| r.flagged).map(|r| (r.plate, r.colony)).collect();
        assert_eq!(flagged, vec![batch.outlier]);
        let mut buf = Vec::new();
        write_colony_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("plate,colony,r,K,lag,flagged\n"));
        assert_eq!(text.lines().count(), 121);
    }
}
