use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::BioassayError;

/// Hill-type kill rate `k(c) = kmax * c^n / (c^n + EC50^n)` in 1/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseResponse {
    pub kmax: f64,
    pub ec50: f64,
    pub hill_n: f64,
}

impl DoseResponse {
    pub fn new(kmax: f64, ec50: f64, hill_n: f64) -> Self {
        Self { kmax, ec50, hill_n }
    }

    pub fn kill_rate(&self, conc: f64) -> f64 {
        if conc <= 0.0 {
            return 0.0;
        }
        if conc.is_infinite() {
            return self.kmax;
        }
        // Divide through by c^n so very large concentrations do not overflow.
        self.kmax / (1.0 + (self.ec50 / conc).powf(self.hill_n))
    }

    pub fn validate(&self) -> Result<(), BioassayError> {
        if !(self.kmax >= 0.0 && self.ec50 > 0.0 && self.hill_n > 0.0)
            || !(self.kmax.is_finite() && self.ec50.is_finite() && self.hill_n.is_finite())
        {
            return Err(BioassayError::InvalidStrain(format!(
                "dose response needs kmax >= 0, EC50 > 0, n > 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

fn default_inoculum() -> f64 {
    1e3
}

fn default_persister_kill() -> f64 {
    1.0
}

/// Resilience phenotype as a parameter set. Rates are per hour, densities per µL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strain {
    pub id: String,
    #[serde(rename = "growth_rate_per_h")]
    pub growth_rate: f64,
    #[serde(rename = "capacity_per_uL")]
    pub capacity: f64,
    #[serde(default)]
    pub dose_response: BTreeMap<String, DoseResponse>,
    #[serde(default)]
    pub persister_fraction: f64,
    #[serde(rename = "switch_to_persister_per_h", default)]
    pub switch_to_persister: f64,
    #[serde(rename = "switch_to_normal_per_h", default)]
    pub switch_to_normal: f64,
    #[serde(default = "default_persister_kill")]
    pub persister_kill_factor: f64,
    pub gfp_per_cell: f64,
    /// Seeding density used when a pad is inoculated.
    #[serde(rename = "inoculum_per_uL", default = "default_inoculum")]
    pub inoculum: f64,
}

impl Strain {
    /// A strain with no persisters and no drug response; add curves with [`Strain::with_drug`].
    pub fn new(id: impl Into<String>, growth_rate: f64, capacity: f64, gfp_per_cell: f64) -> Self {
        Self {
            id: id.into(),
            growth_rate,
            capacity,
            dose_response: BTreeMap::new(),
            persister_fraction: 0.0,
            switch_to_persister: 0.0,
            switch_to_normal: 0.0,
            persister_kill_factor: 1.0,
            gfp_per_cell,
            inoculum: default_inoculum(),
        }
    }

    pub fn with_drug(mut self, drug: impl Into<String>, dr: DoseResponse) -> Self {
        self.dose_response.insert(drug.into(), dr);
        self
    }

    pub fn with_persisters(mut self, p0: f64, to_persister: f64, to_normal: f64, kill_factor: f64) -> Self {
        self.persister_fraction = p0;
        self.switch_to_persister = to_persister;
        self.switch_to_normal = to_normal;
        self.persister_kill_factor = kill_factor;
        self
    }

    pub fn with_inoculum(mut self, density: f64) -> Self {
        self.inoculum = density;
        self
    }

    /// Combined kill rate: the strongest single drug wins.
    pub fn kill_rate(&self, concs: &BTreeMap<String, f64>) -> f64 {
        concs
            .iter()
            .filter_map(|(d, &c)| self.dose_response.get(d).map(|dr| dr.kill_rate(c)))
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), BioassayError> {
        let bad = |msg: &str| Err(BioassayError::InvalidStrain(format!("{}: {msg}", self.id)));
        if !(self.growth_rate > 0.0 && self.growth_rate.is_finite()) {
            return bad("growth rate must be positive");
        }
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return bad("capacity must be positive");
        }
        if !(0.0..1.0).contains(&self.persister_fraction) {
            return bad("persister fraction must lie in [0, 1)");
        }
        if !(self.switch_to_persister >= 0.0 && self.switch_to_normal >= 0.0) {
            return bad("switch rates must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.persister_kill_factor) {
            return bad("persister kill factor must lie in [0, 1]");
        }
        if !(self.gfp_per_cell >= 0.0 && self.inoculum >= 0.0) {
            return bad("gfp per cell and inoculum must be non-negative");
        }
        for dr in self.dose_response.values() {
            dr.validate()?;
        }
        Ok(())
    }
}

pub fn load_strains(json: &str) -> Result<Vec<Strain>, BioassayError> {
    let strains: Vec<Strain> =
        serde_json::from_str(json).map_err(|e| BioassayError::InvalidStrain(e.to_string()))?;
    for s in &strains {
        s.validate()?;
    }
    Ok(strains)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub t_min: f64,
    pub intensity: f64,
}

/// Live-cell densities on one pad plus its fluorescence record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PadCulture {
    #[serde(rename = "N_normal")]
    pub n_normal: f64,
    #[serde(rename = "N_persister")]
    pub n_persister: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<Reading>,
}

impl PadCulture {
    pub fn new(n_normal: f64, n_persister: f64) -> Self {
        Self {
            n_normal,
            n_persister,
            history: Vec::new(),
        }
    }

    /// Seed at `density` split by the strain's persister fraction.
    pub fn inoculate(strain: &Strain, density: f64) -> Self {
        let p = strain.persister_fraction;
        Self::new((1.0 - p) * density, p * density)
    }

    pub fn total(&self) -> f64 {
        self.n_normal + self.n_persister
    }
}

/// Right-hand side of the two-compartment model in cells/µL per hour.
pub fn culture_rhs(strain: &Strain, kill: f64, n: f64, p: f64) -> (f64, f64) {
    let growth = strain.growth_rate * n * (1.0 - (n + p) / strain.capacity);
    let dn = growth - kill * n - strain.switch_to_persister * n + strain.switch_to_normal * p;
    let dp = strain.switch_to_persister * n
        - strain.switch_to_normal * p
        - strain.persister_kill_factor * kill * p;
    (dn, dp)
}

/// Longest internal RK4 step in minutes.
pub const MAX_RK4_STEP_MIN: f64 = 0.5;

/// Advance a culture by `dt_min` under constant drug concentrations with
/// fixed-step RK4; densities are clamped at zero after every step.
pub fn step_culture(
    culture: &PadCulture,
    strain: &Strain,
    concs: &BTreeMap<String, f64>,
    dt_min: f64,
) -> Result<PadCulture, BioassayError> {
    if !(dt_min >= 0.0) {
        return Err(BioassayError::NegativeDt(dt_min));
    }
    let mut out = culture.clone();
    if dt_min == 0.0 {
        return Ok(out);
    }
    let kill = strain.kill_rate(concs);
    let steps = (dt_min / MAX_RK4_STEP_MIN - 1e-12).ceil().max(1.0) as usize;
    let h = dt_min / steps as f64 / 60.0;
    let (mut n, mut p) = (culture.n_normal, culture.n_persister);
    let f = |n: f64, p: f64| culture_rhs(strain, kill, n, p);
    for _ in 0..steps {
        let k1 = f(n, p);
        let k2 = f(n + 0.5 * h * k1.0, p + 0.5 * h * k1.1);
        let k3 = f(n + 0.5 * h * k2.0, p + 0.5 * h * k2.1);
        let k4 = f(n + h * k3.0, p + h * k3.1);
        n = (n + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0)).max(0.0);
        p = (p + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1)).max(0.0);
    }
    out.n_normal = n;
    out.n_persister = p;
    Ok(out)
}
