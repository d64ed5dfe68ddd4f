use serde::Serialize;

use super::{RunError, RunOutput};
use crate::bioassay::{
    classify_resilience, survival_percent, Classification, ClassifierConfig, PadCulture, SeriesRow,
    SurvivalPoint,
};
use crate::protocol::CLOCK_SLACK_MIN;

/// Time-kill curve: live density relative to the last reading taken at or
/// before `exposure_min`, with times measured from that reading.
pub fn time_kill_series<'a>(
    rows: impl IntoIterator<Item = &'a SeriesRow>,
    exposure_min: Option<f64>,
) -> Vec<SurvivalPoint> {
    let rows: Vec<&SeriesRow> = rows.into_iter().collect();
    if rows.is_empty() {
        return Vec::new();
    }
    let start = exposure_min
        .map(|t| rows.iter().rposition(|r| r.t_min <= t + CLOCK_SLACK_MIN).unwrap_or(0))
        .unwrap_or(0);
    let r0 = rows[start];
    let n0 = r0.n_normal + r0.n_persister;
    rows[start..]
        .iter()
        .map(|r| SurvivalPoint {
            t_min: r.t_min - r0.t_min,
            survival_pct: if n0 > 0.0 {
                100.0 * (r.n_normal + r.n_persister) / n0
            } else {
                0.0
            },
        })
        .collect()
}

/// Earliest reading time from which the control exceeds the treated pad by
/// at least `threshold` at every later reading. Series are paired by index.
pub fn detection_time(control: &[&SeriesRow], treated: &[&SeriesRow], threshold: f64) -> Option<f64> {
    let n = control.len().min(treated.len());
    let mut first = None;
    for i in (0..n).rev() {
        if control[i].intensity - treated[i].intensity >= threshold {
            first = Some(treated[i].t_min);
        } else {
            break;
        }
    }
    first
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PadSummary {
    pub pad: String,
    pub strain: String,
    pub drugs: Vec<String>,
    /// Drug-free pad of the same strain used as the reference.
    pub control: Option<String>,
    pub exposure_start_min: Option<f64>,
    pub classification: Option<Classification>,
    pub survival_vs_control_pct: Option<f64>,
    pub detection_min: Option<f64>,
}

fn culture_of(row: &SeriesRow) -> PadCulture {
    PadCulture::new(row.n_normal, row.n_persister)
}

/// Classify every imaged pad that received drug and compare it with a
/// drug-free pad of the same strain. Separation counts once it reaches
/// `2 * noise_sigma`.
pub fn summarize(
    out: &RunOutput,
    classifier: &ClassifierConfig,
    noise_sigma: f64,
) -> Result<Vec<PadSummary>, RunError> {
    let imaged: Vec<&String> = out
        .pad_strains
        .keys()
        .filter(|p| out.rows_for(p).next().is_some())
        .collect();
    let control_for = |strain: &str| {
        imaged
            .iter()
            .find(|p| out.pad_strains[p.as_str()] == strain && out.drugs_for(p).is_empty())
            .map(|p| p.to_string())
    };
    let mut summaries = Vec::new();
    for pad in &imaged {
        let strain = out.pad_strains[pad.as_str()].clone();
        let drugs: Vec<String> = out.drugs_for(pad).into_iter().collect();
        let rows: Vec<&SeriesRow> = out.rows_for(pad).collect();
        let mut s = PadSummary {
            pad: pad.to_string(),
            strain: strain.clone(),
            drugs,
            control: None,
            exposure_start_min: out.exposure_start(pad),
            classification: None,
            survival_vs_control_pct: None,
            detection_min: None,
        };
        if !s.drugs.is_empty() {
            let series = time_kill_series(rows.iter().copied(), s.exposure_start_min);
            s.classification = Some(classify_resilience(&series, &[], classifier)?);
            s.control = control_for(&strain);
            if let Some(c) = &s.control {
                let crow: Vec<&SeriesRow> = out.rows_for(c).collect();
                if let (Some(t), Some(k)) = (rows.last(), crow.last()) {
                    s.survival_vs_control_pct = Some(survival_percent(&culture_of(t), &culture_of(k)));
                }
                s.detection_min = detection_time(&crow, &rows, 2.0 * noise_sigma);
            }
        }
        summaries.push(s);
    }
    Ok(summaries)
}
