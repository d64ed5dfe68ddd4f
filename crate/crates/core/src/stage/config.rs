use serde::{Deserialize, Serialize};

use super::types::{AnchorKind, Direction, HoldAngles};

/// Physical constants of the stage model. Every number here is a declared
/// default and can be overridden from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    /// Droplets at or above this volume occupy a 2x2 anchor block.
    #[serde(rename = "v_large_uL")]
    pub v_large_ul: f64,
    /// Reference volume at which the effective hold angle equals the symbol hold angle.
    #[serde(rename = "v_ref_uL")]
    pub v_ref_ul: f64,
    pub theta_max_deg: f64,
    pub theta_floor_deg: f64,
    pub cross_hold_deg: f64,
    /// Hold angle of a gate in its open direction.
    pub gate_open_deg: f64,
    /// Hold angle of a gate in the other three directions.
    pub gate_closed_deg: f64,
    pub pad_hold_deg: f64,
    pub t_dispense_min: f64,
    pub t_hop_min: f64,
    #[serde(rename = "evap_droplet_uL_per_min")]
    pub evap_droplet_ul_per_min: f64,
    #[serde(rename = "evap_pad_uL_per_min")]
    pub evap_pad_ul_per_min: f64,
    #[serde(rename = "v_dry_uL")]
    pub v_dry_ul: f64,
    #[serde(rename = "pad_initial_uL")]
    pub pad_initial_ul: f64,
    #[serde(rename = "temperature_C")]
    pub temperature_c: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            v_large_ul: 40.0,
            v_ref_ul: 10.0,
            theta_max_deg: 15.0,
            theta_floor_deg: 1.0,
            cross_hold_deg: 8.0,
            gate_open_deg: 3.0,
            gate_closed_deg: 10.0,
            pad_hold_deg: 90.0,
            t_dispense_min: 0.1,
            t_hop_min: 0.05,
            evap_droplet_ul_per_min: 0.05,
            evap_pad_ul_per_min: 0.1,
            v_dry_ul: 0.5,
            pad_initial_ul: 30.0,
            temperature_c: 36.5,
        }
    }
}

/// Slack on the hop threshold comparison so that a tilt exactly at the
/// effective hold angle moves the droplet despite rounding in the cube root.
pub const HOP_TOLERANCE_DEG: f64 = 1e-9;

impl StageConfig {
    pub fn hold_angles(&self, kind: AnchorKind) -> HoldAngles {
        match kind {
            AnchorKind::Cross => HoldAngles::uniform(self.cross_hold_deg),
            AnchorKind::PadSite => HoldAngles::uniform(self.pad_hold_deg),
            AnchorKind::GateRight => {
                let mut h = HoldAngles::uniform(self.gate_closed_deg);
                h.0[Direction::PosX.index()] = self.gate_open_deg;
                h
            }
            AnchorKind::GateLeft => {
                let mut h = HoldAngles::uniform(self.gate_closed_deg);
                h.0[Direction::NegX.index()] = self.gate_open_deg;
                h
            }
        }
    }

    /// Effective hold angle for a droplet of `volume_ul` pinned on `kind`.
    pub fn theta_eff(&self, kind: AnchorKind, dir: Direction, volume_ul: f64) -> f64 {
        let hold = self.hold_angles(kind).get(dir);
        let scaled = hold * (self.v_ref_ul / volume_ul).cbrt();
        scaled.clamp(self.theta_floor_deg, 90.0)
    }

    pub fn hops(&self, kind: AnchorKind, dir: Direction, volume_ul: f64, magnitude_deg: f64) -> bool {
        magnitude_deg >= self.theta_eff(kind, dir, volume_ul) - HOP_TOLERANCE_DEG
    }

    pub fn is_large(&self, volume_ul: f64) -> bool {
        volume_ul >= self.v_large_ul
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("v_large_uL", self.v_large_ul),
            ("v_ref_uL", self.v_ref_ul),
            ("theta_max_deg", self.theta_max_deg),
            ("theta_floor_deg", self.theta_floor_deg),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        let non_negative = [
            ("t_dispense_min", self.t_dispense_min),
            ("t_hop_min", self.t_hop_min),
            ("evap_droplet_uL_per_min", self.evap_droplet_ul_per_min),
            ("evap_pad_uL_per_min", self.evap_pad_ul_per_min),
            ("v_dry_uL", self.v_dry_ul),
            ("pad_initial_uL", self.pad_initial_ul),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.theta_max_deg > 90.0 {
            return Err("theta_max_deg must not exceed 90".into());
        }
        if !(36.0..=37.0).contains(&self.temperature_c) {
            return Err(format!(
                "temperature_C must lie in [36, 37], got {}",
                self.temperature_c
            ));
        }
        for kind in [
            AnchorKind::Cross,
            AnchorKind::GateRight,
            AnchorKind::GateLeft,
            AnchorKind::PadSite,
        ] {
            self.hold_angles(kind)
                .validate(kind)
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}
