use serde::{Deserialize, Serialize};

use super::BioassayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resilience {
    Susceptible,
    Resistant,
    Tolerant,
    Persistent,
}

/// Decision thresholds. Survival values are percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub resistant_survival_pct: f64,
    /// Half-time of the susceptible reference kill curve.
    pub reference_half_time_min: f64,
    pub tolerance_factor: f64,
    pub persistence_slope_ratio: f64,
    pub persistence_plateau_pct: f64,
    pub min_span_min: f64,
    pub max_sampling_min: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            resistant_survival_pct: 80.0,
            reference_half_time_min: 30.0,
            tolerance_factor: 2.0,
            persistence_slope_ratio: 5.0,
            persistence_plateau_pct: 0.1,
            min_span_min: 180.0,
            max_sampling_min: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub t_min: f64,
    pub survival_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DosePoint {
    pub conc: f64,
    pub survival_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub resilience: Resilience,
    pub end_survival_pct: f64,
    /// Survival at the highest dose of the ladder (the series end when no ladder is given).
    pub max_dose_survival_pct: f64,
    /// Minutes until survival first halves; `None` when it never does.
    pub half_time_min: Option<f64>,
    /// First-hour over last-hour log-kill slope.
    pub slope_ratio: f64,
}

const LOG_FLOOR: f64 = 1e-12;

fn ln_at(series: &[SurvivalPoint], t: f64) -> f64 {
    let ln = |s: f64| s.max(LOG_FLOOR).ln();
    let i = series.partition_point(|p| p.t_min < t);
    if i == 0 {
        return ln(series[0].survival_pct);
    }
    if i >= series.len() {
        return ln(series[series.len() - 1].survival_pct);
    }
    let (a, b) = (series[i - 1], series[i]);
    let w = (t - a.t_min) / (b.t_min - a.t_min);
    (1.0 - w) * ln(a.survival_pct) + w * ln(b.survival_pct)
}

fn half_time(series: &[SurvivalPoint]) -> Option<f64> {
    let half = 0.5 * series[0].survival_pct;
    series.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        (b.survival_pct <= half).then(|| {
            let span = a.survival_pct - b.survival_pct;
            let frac = if span > 0.0 {
                ((a.survival_pct - half) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
            a.t_min + frac * (b.t_min - a.t_min) - series[0].t_min
        })
    })
}

/// Classify a step-exposure survival series, checking in order Resistant,
/// Tolerant, Persistent and falling back to Susceptible.
pub fn classify_resilience(
    series: &[SurvivalPoint],
    ladder: &[DosePoint],
    cfg: &ClassifierConfig,
) -> Result<Classification, BioassayError> {
    let insufficient = |why: String| Err(BioassayError::InsufficientSeries(why));
    if series.len() < 2 {
        return insufficient(format!("{} samples", series.len()));
    }
    for w in series.windows(2) {
        let gap = w[1].t_min - w[0].t_min;
        if !(gap > 0.0) {
            return insufficient("sample times must increase".into());
        }
        if gap > cfg.max_sampling_min + 1e-9 {
            return insufficient(format!("sampling gap {gap} min exceeds {} min", cfg.max_sampling_min));
        }
    }
    let t0 = series[0].t_min;
    let t_end = series[series.len() - 1].t_min;
    if t_end - t0 < cfg.min_span_min - 1e-9 {
        return insufficient(format!("series spans {} min", t_end - t0));
    }
    let end = series[series.len() - 1].survival_pct;
    let max_dose_survival = ladder
        .iter()
        .max_by(|a, b| a.conc.total_cmp(&b.conc))
        .map_or(end, |p| p.survival_pct);
    let half = half_time(series);
    let first = ln_at(series, t0 + 60.0) - ln_at(series, t0);
    let last = ln_at(series, t_end) - ln_at(series, t_end - 60.0);
    let slope_ratio = if first >= 0.0 {
        0.0
    } else if last >= 0.0 {
        f64::INFINITY
    } else {
        first / last
    };
    let resilience = if max_dose_survival >= cfg.resistant_survival_pct {
        Resilience::Resistant
    } else if half.is_none_or(|h| h > cfg.tolerance_factor * cfg.reference_half_time_min)
        && end < cfg.resistant_survival_pct
    {
        Resilience::Tolerant
    } else if slope_ratio >= cfg.persistence_slope_ratio && end >= cfg.persistence_plateau_pct {
        Resilience::Persistent
    } else {
        Resilience::Susceptible
    };
    Ok(Classification {
        resilience,
        end_survival_pct: end,
        max_dose_survival_pct: max_dose_survival,
        half_time_min: half,
        slope_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(f: impl Fn(f64) -> f64) -> Vec<SurvivalPoint> {
        (0..=24)
            .map(|i| {
                let t = 20.0 * i as f64;
                SurvivalPoint {
                    t_min: t,
                    survival_pct: f(t / 60.0),
                }
            })
            .collect()
    }

    #[test]
    fn flat_series_is_resistant() {
        let c = classify_resilience(&series(|_| 100.0), &[], &ClassifierConfig::default()).unwrap();
        assert_eq!(c.resilience, Resilience::Resistant);
    }

    #[test]
    fn constant_decay_is_susceptible() {
        let s = series(|h| 100.0 * (-2.0 * h).exp());
        let c = classify_resilience(&s, &[], &ClassifierConfig::default()).unwrap();
        assert_eq!(c.resilience, Resilience::Susceptible);
        assert!((c.slope_ratio - 1.0).abs() < 1e-9);
    }

    #[test]
    fn slow_decay_is_tolerant() {
        let s = series(|h| 100.0 * (-0.5 * h).exp());
        let c = classify_resilience(&s, &[], &ClassifierConfig::default()).unwrap();
        assert_eq!(c.resilience, Resilience::Tolerant);
    }

    #[test]
    fn biphasic_decay_with_plateau_is_persistent() {
        let s = series(|h| 99.0 * (-2.5 * h).exp() + 1.0 * (-0.05 * h).exp());
        let c = classify_resilience(&s, &[], &ClassifierConfig::default()).unwrap();
        assert_eq!(c.resilience, Resilience::Persistent);
    }

    #[test]
    fn ladder_overrides_series_end_for_resistance() {
        let s = series(|h| 100.0 * (-2.0 * h).exp());
        let ladder = [
            DosePoint { conc: 4.0, survival_pct: 10.0 },
            DosePoint { conc: 64.0, survival_pct: 90.0 },
            DosePoint { conc: 16.0, survival_pct: 20.0 },
        ];
        let c = classify_resilience(&s, &ladder, &ClassifierConfig::default()).unwrap();
        assert_eq!(c.resilience, Resilience::Resistant);
    }

    #[test]
    fn short_or_sparse_series_rejected() {
        let cfg = ClassifierConfig::default();
        let short: Vec<_> = series(|_| 50.0).into_iter().take(9).collect();
        assert!(matches!(
            classify_resilience(&short, &[], &cfg),
            Err(BioassayError::InsufficientSeries(_))
        ));
        let sparse: Vec<_> = series(|_| 50.0).into_iter().step_by(2).collect();
        assert!(matches!(
            classify_resilience(&sparse, &[], &cfg),
            Err(BioassayError::InsufficientSeries(_))
        ));
    }
}
