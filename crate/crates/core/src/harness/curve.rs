//! Leak-probability curves and their CSV form.
//!
//! Header: `n,m,x,r,analytic,empirical,ci_low,ci_high`. Probabilities are
//! plain decimals with ten significant digits; the three empirical columns
//! are left empty when no Monte-Carlo estimate was made.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result};
use crate::threat::{leak_curve, monte_carlo_leak};

pub const HEADER: [&str; 8] = ["n", "m", "x", "r", "analytic", "empirical", "ci_low", "ci_high"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Empirical {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub m: usize,
    pub x: usize,
    pub r: usize,
    pub analytic: f64,
    pub empirical: Option<Empirical>,
}

impl CurvePoint {
    /// The point as it reads back from a CSV file.
    pub fn quantized(&self) -> CurvePoint {
        let q = |v: f64| format_probability(v).parse::<f64>().expect("formatted float");
        CurvePoint {
            analytic: q(self.analytic),
            empirical: self.empirical.map(|e| Empirical {
                estimate: q(e.estimate),
                ci_low: q(e.ci_low),
                ci_high: q(e.ci_high),
            }),
            ..*self
        }
    }
}

/// Ten significant digits, positional notation.
pub fn format_probability(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.9e}");
    let exponent: i32 = sci[sci.find('e').expect("exponent") + 1..]
        .parse()
        .expect("integer exponent");
    let decimals = (9 - exponent).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Analytic curve over `n_min..=n_max`, optionally with a Monte-Carlo
/// estimate per point (`(trials, seed)`; each point gets its own seed).
pub fn curve_points(
    n_min: usize,
    n_max: usize,
    m: usize,
    x: usize,
    r: usize,
    monte_carlo: Option<(u64, u64)>,
) -> Result<Vec<CurvePoint>> {
    leak_curve(n_min, n_max, m, x, r)?
        .into_iter()
        .map(|(n, p)| {
            let empirical = match monte_carlo {
                Some((trials, seed)) => {
                    let est = monte_carlo_leak(n, m, r, x, trials, crate::seed::mix64(seed ^ n as u64))?;
                    Some(Empirical {
                        estimate: est.empirical,
                        ci_low: est.ci_low(),
                        ci_high: est.ci_high(),
                    })
                }
                None => None,
            };
            Ok(CurvePoint {
                n,
                m,
                x,
                r,
                analytic: p.value(),
                empirical,
            })
        })
        .collect()
}

pub fn render_curve(points: &[CurvePoint]) -> Result<String> {
    if points.is_empty() {
        return Err(ConfigError::InvalidParameter("a curve needs at least one point".into()).into());
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER)?;
    for p in points {
        let (e, lo, hi) = match p.empirical {
            Some(e) => (
                format_probability(e.estimate),
                format_probability(e.ci_low),
                format_probability(e.ci_high),
            ),
            None => Default::default(),
        };
        w.write_record([
            p.n.to_string(),
            p.m.to_string(),
            p.x.to_string(),
            p.r.to_string(),
            format_probability(p.analytic),
            e,
            lo,
            hi,
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("ascii csv"))
}

/// Writes the curve. Nothing is created when `points` is empty.
pub fn emit_curve(points: &[CurvePoint], path: &Path) -> Result<()> {
    let text = render_curve(points)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn parse_curve(text: &str) -> Result<Vec<CurvePoint>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != HEADER {
        return Err(Error::CorruptBlock(format!("unexpected curve header {header:?}")));
    }
    let bad = |what: &str| Error::CorruptBlock(format!("bad curve field {what}"));
    reader
        .records()
        .map(|record| {
            let record = record?;
            let int = |i: usize| record[i].parse::<usize>().map_err(|_| bad(&record[i]));
            let float = |i: usize| record[i].parse::<f64>().map_err(|_| bad(&record[i]));
            let empirical = if record[5].is_empty() {
                None
            } else {
                Some(Empirical {
                    estimate: float(5)?,
                    ci_low: float(6)?,
                    ci_high: float(7)?,
                })
            };
            Ok(CurvePoint {
                n: int(0)?,
                m: int(1)?,
                x: int(2)?,
                r: int(3)?,
                analytic: float(4)?,
                empirical,
            })
        })
        .collect()
}

pub fn read_curve(path: &Path) -> Result<Vec<CurvePoint>> {
    parse_curve(&std::fs::read_to_string(path)?)
}
