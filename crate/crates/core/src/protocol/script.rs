use std::fmt;

use serde::{Deserialize, Serialize};

use crate::stage::{Axis, Contents, GridPos, TiltCommand};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Statement {
    Duration {
        minutes: f64,
    },
    Drugs {
        names: Vec<String>,
    },
    Pad {
        name: String,
        at: GridPos,
    },
    /// Contents used for dilution and replenishment droplets.
    Diluent {
        contents: Contents,
    },
    Dispense {
        #[serde(rename = "volume_uL")]
        volume_ul: f64,
        contents: Contents,
        at: GridPos,
        label: String,
    },
    Route {
        droplet: String,
        to: GridPos,
    },
    Dilute {
        droplet: String,
        drug: String,
        target: f64,
        tol_pct: f64,
        max_steps: usize,
    },
    Deliver {
        droplet: String,
        pad: String,
    },
    Replenish {
        pads: Vec<String>,
        period_min: f64,
        #[serde(rename = "volume_uL")]
        volume_ul: f64,
    },
    Wait {
        minutes: f64,
    },
    Image {
        pads: Vec<String>,
        period_min: Option<f64>,
    },
    Tilt {
        cmd: TiltCommand,
    },
}

pub const DEFAULT_MAX_DILUTION_STEPS: usize = 4;

fn write_contents(f: &mut fmt::Formatter<'_>, c: &Contents) -> fmt::Result {
    for (drug, conc) in &c.solutes {
        write!(f, " {drug}:{conc}")?;
    }
    if c.media_fraction != 0.0 {
        write!(f, " media:{}", c.media_fraction)?;
    }
    for (strain, n) in &c.cells {
        write!(f, " cells.{strain}:{n}")?;
    }
    Ok(())
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Duration { minutes } => write!(f, "DURATION {minutes}min"),
            Statement::Drugs { names } => write!(f, "DRUGS {}", names.join(", ")),
            Statement::Pad { name, at } => write!(f, "PAD {name} AT {at}"),
            Statement::Diluent { contents } => {
                f.write_str("DILUENT")?;
                write_contents(f, contents)
            }
            Statement::Dispense {
                volume_ul,
                contents,
                at,
                label,
            } => {
                write!(f, "DISPENSE {volume_ul}uL")?;
                write_contents(f, contents)?;
                write!(f, " AT {at} AS {label}")
            }
            Statement::Route { droplet, to } => write!(f, "ROUTE {droplet} TO {to}"),
            Statement::Dilute {
                droplet,
                drug,
                target,
                tol_pct,
                max_steps,
            } => write!(f, "DILUTE {droplet} {drug} TO {target} TOL {tol_pct}% MAX {max_steps}"),
            Statement::Deliver { droplet, pad } => write!(f, "DELIVER {droplet} TO {pad}"),
            Statement::Replenish {
                pads,
                period_min,
                volume_ul,
            } => write!(
                f,
                "REPLENISH PADS {} EVERY {period_min}min WITH {volume_ul}uL",
                pads.join(",")
            ),
            Statement::Wait { minutes } => write!(f, "WAIT {minutes}min"),
            Statement::Image { pads, period_min } => {
                write!(f, "IMAGE PADS {}", pads.join(","))?;
                if let Some(p) = period_min {
                    write!(f, " EVERY {p}min")?;
                }
                Ok(())
            }
            Statement::Tilt { cmd } => {
                let axis = match cmd.axis {
                    Axis::X => "X",
                    Axis::Y => "Y",
                };
                write!(f, "TILT {axis} {}deg", cmd.angle_deg)
            }
        }
    }
}

/// A parsed protocol. Equality compares statements only, not source lines.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProtocolScript {
    pub statements: Vec<Statement>,
    /// 1-based source line of each statement.
    #[serde(default)]
    pub lines: Vec<usize>,
}

impl PartialEq for ProtocolScript {
    fn eq(&self, other: &Self) -> bool {
        self.statements == other.statements
    }
}

impl ProtocolScript {
    pub fn new(statements: Vec<Statement>) -> Self {
        let lines = (1..=statements.len()).collect();
        Self { statements, lines }
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn line_of(&self, index: usize) -> usize {
        self.lines.get(index).copied().unwrap_or(index + 1)
    }

    pub fn duration_min(&self) -> Option<f64> {
        self.statements.iter().rev().find_map(|s| match s {
            Statement::Duration { minutes } => Some(*minutes),
            _ => None,
        })
    }

    /// Canonical text form; parsing it yields an equal script.
    pub fn print(&self) -> String {
        let mut out = String::new();
        for s in &self.statements {
            out.push_str(&s.to_string());
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for ProtocolScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.print())
    }
}
