use std::collections::BTreeSet;

use thiserror::Error;

use super::script::{ProtocolScript, Statement, DEFAULT_MAX_DILUTION_STEPS};
use crate::stage::{Axis, Contents, GridPos, TiltCommand};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error, expected {expected}")]
    Syntax {
        line: usize,
        col: usize,
        expected: String,
    },
    #[error("{line}:{col}: unknown drug `{name}`")]
    UnknownDrug { line: usize, col: usize, name: String },
    #[error("{line}:{col}: unknown pad `{name}`")]
    UnknownPad { line: usize, col: usize, name: String },
    #[error("{line}:{col}: duplicate id `{name}`")]
    DuplicateId { line: usize, col: usize, name: String },
    #[error("{line}:{col}: unknown droplet `{name}`")]
    UnknownDroplet { line: usize, col: usize, name: String },
}

impl ParseError {
    pub fn position(&self) -> (usize, usize) {
        match self {
            ParseError::Syntax { line, col, .. }
            | ParseError::UnknownDrug { line, col, .. }
            | ParseError::UnknownPad { line, col, .. }
            | ParseError::DuplicateId { line, col, .. }
            | ParseError::UnknownDroplet { line, col, .. } => (*line, *col),
        }
    }
}

#[derive(Debug, Clone)]
struct Tok {
    text: String,
    col: usize,
}

fn tokenize(line: &str) -> Vec<Tok> {
    let mut toks = Vec::new();
    let mut cur = String::new();
    let mut start = 0;
    for (i, ch) in line.chars().enumerate() {
        let col = i + 1;
        if ch == '#' {
            break;
        }
        if ch.is_whitespace() || matches!(ch, '(' | ')' | ',') {
            if !cur.is_empty() {
                toks.push(Tok {
                    text: std::mem::take(&mut cur),
                    col: start,
                });
            }
            if !ch.is_whitespace() {
                toks.push(Tok {
                    text: ch.to_string(),
                    col,
                });
            }
        } else {
            if cur.is_empty() {
                start = col;
            }
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        toks.push(Tok { text: cur, col: start });
    }
    toks
}

struct Cursor {
    toks: Vec<Tok>,
    pos: usize,
    line: usize,
    end_col: usize,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl Cursor {
    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn err<T>(&self, expected: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            line: self.line,
            col: self.col(),
            expected: expected.into(),
        })
    }

    fn peek(&self) -> Option<&str> {
        self.toks.get(self.pos).map(|t| t.text.as_str())
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, kw: &str) -> bool {
        if self.peek() == Some(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat(kw) {
            Ok(())
        } else {
            self.err(format!("`{kw}`"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<Tok, ParseError> {
        match self.peek() {
            Some(t) if is_ident(t) => Ok(self.bump().expect("peeked")),
            _ => self.err(what.to_string()),
        }
    }

    fn ident_list(&mut self, what: &str) -> Result<Vec<Tok>, ParseError> {
        let mut out = vec![self.ident(what)?];
        while self.eat(",") {
            out.push(self.ident(what)?);
        }
        Ok(out)
    }

    /// A number immediately followed by `unit`, e.g. `10uL`.
    fn quantity(&mut self, unit: &str, what: &str) -> Result<f64, ParseError> {
        let value = self
            .peek()
            .and_then(|t| t.strip_suffix(unit))
            .and_then(|n| n.parse::<f64>().ok())
            .filter(|v| v.is_finite());
        match value {
            Some(v) => {
                self.pos += 1;
                Ok(v)
            }
            None => self.err(format!("{what} with unit `{unit}`")),
        }
    }

    fn positive(&mut self, unit: &str, what: &str) -> Result<f64, ParseError> {
        let col = self.col();
        let v = self.quantity(unit, what)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(ParseError::Syntax {
                line: self.line,
                col,
                expected: format!("positive {what}"),
            })
        }
    }

    fn number(&mut self, what: &str) -> Result<f64, ParseError> {
        match self.peek().and_then(|t| t.parse::<f64>().ok()).filter(|v| v.is_finite()) {
            Some(v) => {
                self.pos += 1;
                Ok(v)
            }
            None => self.err(what.to_string()),
        }
    }

    fn integer(&mut self, what: &str) -> Result<i32, ParseError> {
        match self.peek().and_then(|t| t.parse::<i32>().ok()) {
            Some(v) => {
                self.pos += 1;
                Ok(v)
            }
            None => self.err(what.to_string()),
        }
    }

    fn coord(&mut self) -> Result<GridPos, ParseError> {
        if !self.eat("(") {
            return self.err("coordinate `(x,y)`");
        }
        let x = self.integer("integer column")?;
        self.keyword(",")?;
        let y = self.integer("integer row")?;
        self.keyword(")")?;
        Ok(GridPos::new(x, y))
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.pos < self.toks.len() {
            self.err("end of line")
        } else {
            Ok(())
        }
    }
}

#[derive(Default)]
struct Scope {
    drugs: Option<BTreeSet<String>>,
    pads: BTreeSet<String>,
    labels: BTreeSet<String>,
    live: BTreeSet<String>,
    dispensed: usize,
}

impl Scope {
    fn check_drug(&self, line: usize, tok: &Tok) -> Result<(), ParseError> {
        match &self.drugs {
            Some(set) if !set.contains(&tok.text) => Err(ParseError::UnknownDrug {
                line,
                col: tok.col,
                name: tok.text.clone(),
            }),
            _ => Ok(()),
        }
    }

    fn check_pad(&self, line: usize, tok: &Tok) -> Result<(), ParseError> {
        if self.pads.contains(&tok.text) {
            Ok(())
        } else {
            Err(ParseError::UnknownPad {
                line,
                col: tok.col,
                name: tok.text.clone(),
            })
        }
    }

    fn check_droplet(&self, line: usize, tok: &Tok) -> Result<(), ParseError> {
        if self.live.contains(&tok.text) {
            Ok(())
        } else {
            Err(ParseError::UnknownDroplet {
                line,
                col: tok.col,
                name: tok.text.clone(),
            })
        }
    }
}

/// `drug:conc`, `media:fraction` and `cells.<strain>:density` items up to `stop`.
fn contents(c: &mut Cursor, scope: &Scope, stop: Option<&str>) -> Result<Contents, ParseError> {
    let mut out = Contents::default();
    let mut seen = BTreeSet::new();
    while let Some(text) = c.peek() {
        if Some(text) == stop {
            break;
        }
        let tok = c.toks[c.pos].clone();
        let Some((key, value)) = text.split_once(':') else {
            return c.err(match stop {
                Some(s) => format!("`name:value` component or `{s}`"),
                None => "`name:value` component".to_string(),
            });
        };
        let value = match value.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => v,
            _ => return c.err("non-negative component value"),
        };
        if !seen.insert(key.to_string()) {
            return c.err("distinct component names");
        }
        if key == "media" {
            if value > 1.0 {
                return c.err("media fraction in [0, 1]");
            }
            out.media_fraction = value;
        } else if let Some(strain) = key.strip_prefix("cells.") {
            if !is_ident(strain) {
                return c.err("strain name after `cells.`");
            }
            out.cells.insert(strain.to_string(), value);
        } else if is_ident(key) {
            let name = Tok {
                text: key.to_string(),
                col: tok.col,
            };
            scope.check_drug(c.line, &name)?;
            out.solutes.insert(key.to_string(), value);
        } else {
            return c.err("component name");
        }
        c.pos += 1;
    }
    Ok(out)
}

fn statement(c: &mut Cursor, scope: &mut Scope) -> Result<Statement, ParseError> {
    let line = c.line;
    let Some(kw) = c.bump() else {
        return c.err("statement");
    };
    let stmt = match kw.text.as_str() {
        "DURATION" => Statement::Duration {
            minutes: c.positive("min", "duration")?,
        },
        "DRUGS" => {
            let names = c.ident_list("drug name")?;
            let set = scope.drugs.get_or_insert_with(BTreeSet::new);
            for n in &names {
                if !set.insert(n.text.clone()) {
                    return Err(ParseError::DuplicateId {
                        line,
                        col: n.col,
                        name: n.text.clone(),
                    });
                }
            }
            Statement::Drugs {
                names: names.into_iter().map(|t| t.text).collect(),
            }
        }
        "PAD" => {
            let name = c.ident("pad name")?;
            c.keyword("AT")?;
            let at = c.coord()?;
            if !scope.pads.insert(name.text.clone()) {
                return Err(ParseError::DuplicateId {
                    line,
                    col: name.col,
                    name: name.text,
                });
            }
            Statement::Pad { name: name.text, at }
        }
        "DILUENT" => Statement::Diluent {
            contents: contents(c, scope, None)?,
        },
        "DISPENSE" => {
            let volume_ul = c.positive("uL", "volume")?;
            let contents = contents(c, scope, Some("AT"))?;
            c.keyword("AT")?;
            let at = c.coord()?;
            scope.dispensed += 1;
            let label = if c.eat("AS") {
                c.ident("droplet label")?
            } else {
                Tok {
                    text: format!("d{}", scope.dispensed),
                    col: kw.col,
                }
            };
            if !scope.labels.insert(label.text.clone()) {
                return Err(ParseError::DuplicateId {
                    line,
                    col: label.col,
                    name: label.text,
                });
            }
            scope.live.insert(label.text.clone());
            Statement::Dispense {
                volume_ul,
                contents,
                at,
                label: label.text,
            }
        }
        "ROUTE" => {
            let d = c.ident("droplet label")?;
            scope.check_droplet(line, &d)?;
            c.keyword("TO")?;
            Statement::Route {
                droplet: d.text,
                to: c.coord()?,
            }
        }
        "DILUTE" => {
            let d = c.ident("droplet label")?;
            scope.check_droplet(line, &d)?;
            let drug = c.ident("drug name")?;
            scope.check_drug(line, &drug)?;
            c.keyword("TO")?;
            let col = c.col();
            let target = c.number("target concentration")?;
            if !(target > 0.0) {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    expected: "positive target concentration".into(),
                });
            }
            c.keyword("TOL")?;
            let tol_pct = c.positive("%", "tolerance")?;
            let max_steps = if c.eat("MAX") {
                let col = c.col();
                match c.integer("step count")? {
                    n @ 0..=16 => n as usize,
                    _ => {
                        return Err(ParseError::Syntax {
                            line,
                            col,
                            expected: "step count between 0 and 16".into(),
                        })
                    }
                }
            } else {
                DEFAULT_MAX_DILUTION_STEPS
            };
            Statement::Dilute {
                droplet: d.text,
                drug: drug.text,
                target,
                tol_pct,
                max_steps,
            }
        }
        "DELIVER" => {
            let d = c.ident("droplet label")?;
            scope.check_droplet(line, &d)?;
            c.keyword("TO")?;
            let pad = c.ident("pad name")?;
            scope.check_pad(line, &pad)?;
            scope.live.remove(&d.text);
            Statement::Deliver {
                droplet: d.text,
                pad: pad.text,
            }
        }
        "REPLENISH" => {
            c.keyword("PADS")?;
            let pads = c.ident_list("pad name")?;
            for p in &pads {
                scope.check_pad(line, p)?;
            }
            c.keyword("EVERY")?;
            let period_min = c.positive("min", "period")?;
            c.keyword("WITH")?;
            let volume_ul = c.positive("uL", "volume")?;
            Statement::Replenish {
                pads: pads.into_iter().map(|t| t.text).collect(),
                period_min,
                volume_ul,
            }
        }
        "WAIT" => {
            let col = c.col();
            let minutes = c.quantity("min", "duration")?;
            if minutes < 0.0 {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    expected: "non-negative duration".into(),
                });
            }
            Statement::Wait { minutes }
        }
        "IMAGE" => {
            c.keyword("PADS")?;
            let pads = c.ident_list("pad name")?;
            for p in &pads {
                scope.check_pad(line, p)?;
            }
            let period_min = if c.eat("EVERY") {
                Some(c.positive("min", "period")?)
            } else {
                None
            };
            Statement::Image {
                pads: pads.into_iter().map(|t| t.text).collect(),
                period_min,
            }
        }
        "TILT" => {
            let axis = match c.peek() {
                Some("X") => Axis::X,
                Some("Y") => Axis::Y,
                _ => return c.err("axis `X` or `Y`"),
            };
            c.pos += 1;
            let col = c.col();
            let angle = c.quantity("deg", "angle")?;
            if angle == 0.0 {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    expected: "non-zero angle".into(),
                });
            }
            Statement::Tilt {
                cmd: TiltCommand::new(axis, angle),
            }
        }
        _ => {
            c.pos -= 1;
            return c.err(
                "statement keyword (DURATION, DRUGS, PAD, DILUENT, DISPENSE, ROUTE, DILUTE, \
                 DELIVER, REPLENISH, WAIT, IMAGE, TILT)",
            );
        }
    };
    c.finish()?;
    Ok(stmt)
}

/// Parse `.dprot` text. Blank lines and `#` comments are ignored.
pub fn parse_script(text: &str) -> Result<ProtocolScript, ParseError> {
    let mut scope = Scope::default();
    let mut script = ProtocolScript::default();
    for (i, raw) in text.lines().enumerate() {
        let toks = tokenize(raw);
        if toks.is_empty() {
            continue;
        }
        let mut c = Cursor {
            toks,
            pos: 0,
            line: i + 1,
            end_col: raw.split('#').next().unwrap_or("").trim_end().chars().count() + 1,
        };
        let s = statement(&mut c, &mut scope)?;
        script.statements.push(s);
        script.lines.push(i + 1);
    }
    Ok(script)
}
