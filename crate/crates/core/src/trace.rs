//! Run traces and their CSV form.
//!
//! ```text
//! iter,t,f_gap,grad_norm,energy,grad_evals
//! 0,1.0000000000000000e0,...
//! # outcome=budget_exhausted
//! ```
//!
//! Floats are written with 17 significant digits; the energy field is empty
//! for methods without an energy function.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "iter,t,f_gap,grad_norm,energy,grad_evals";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub t: f64,
    pub f_gap: f64,
    pub grad_norm: f64,
    pub energy: Option<f64>,
    pub grad_evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Outcome {
    Converged,
    BudgetExhausted,
    Diverged(usize),
}

impl Outcome {
    pub fn is_diverged(&self) -> bool {
        matches!(self, Outcome::Diverged(_))
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Converged => f.write_str("converged"),
            Outcome::BudgetExhausted => f.write_str("budget_exhausted"),
            Outcome::Diverged(k) => write!(f, "diverged:{k}"),
        }
    }
}

impl std::str::FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "converged" => Ok(Outcome::Converged),
            "budget_exhausted" => Ok(Outcome::BudgetExhausted),
            _ => s
                .strip_prefix("diverged:")
                .and_then(|k| k.parse().ok())
                .map(Outcome::Diverged)
                .ok_or_else(|| Error::InvalidInput(format!("unknown outcome '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub outcome: Outcome,
    /// Step size actually used.
    pub h: f64,
}

impl RunTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn final_gap(&self) -> Option<f64> {
        self.last().map(|r| r.f_gap)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 2));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let energy = r.energy.map(fmt_f64).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iter,
                fmt_f64(r.t),
                fmt_f64(r.f_gap),
                fmt_f64(r.grad_norm),
                energy,
                r.grad_evals
            );
        }
        let _ = writeln!(out, "# outcome={}", self.outcome);
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses the CSV form. The step size is not stored in the file and is
    /// recovered from the first two `t` values when possible.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            Some((_, h)) => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected header '{CSV_HEADER}', got '{h}'"),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "empty trace".into(),
                })
            }
        }
        let mut rows = Vec::new();
        let mut outcome = None;
        for (idx, line) in lines {
            let lineno = idx + 1;
            if let Some(rest) = line.strip_prefix('#') {
                let v = rest.trim().strip_prefix("outcome=").ok_or(Error::Parse {
                    line: lineno,
                    msg: format!("unrecognized comment '{line}'"),
                })?;
                outcome = Some(v.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad outcome '{v}'"),
                })?);
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if outcome.is_some() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "data after outcome line".into(),
                });
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected 6 fields, found {}", f.len()),
                });
            }
            let num = |s: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad number '{s}'"),
                })
            };
            let int = |s: &str| -> Result<usize> {
                s.trim().parse::<usize>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad integer '{s}'"),
                })
            };
            rows.push(TraceRow {
                iter: int(f[0])?,
                t: num(f[1])?,
                f_gap: num(f[2])?,
                grad_norm: num(f[3])?,
                energy: if f[4].trim().is_empty() { None } else { Some(num(f[4])?) },
                grad_evals: int(f[5])?,
            });
        }
        let outcome = outcome.ok_or(Error::Parse {
            line: text.lines().count(),
            msg: "missing '# outcome=' line".into(),
        })?;
        let h = match rows.as_slice() {
            [a, b, ..] if b.iter > a.iter => (b.t - a.t) / (b.iter - a.iter) as f64,
            _ => f64::NAN,
        };
        Ok(RunTrace { rows, outcome, h })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path)?)
    }
}

/// 17 significant digits, round-trip exact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> RunTrace {
        RunTrace {
            rows: vec![
                TraceRow {
                    iter: 0,
                    t: 1.0,
                    f_gap: 5.0,
                    grad_norm: 3.25,
                    energy: Some(12.5),
                    grad_evals: 0,
                },
                TraceRow {
                    iter: 1,
                    t: 1.1,
                    f_gap: 4.0,
                    grad_norm: 2.5,
                    energy: None,
                    grad_evals: 4,
                },
            ],
            outcome: Outcome::Diverged(2),
            h: 0.1,
        }
    }

    #[test]
    fn csv_layout() {
        let text = sample().to_csv();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(
            lines[1],
            "0,1.0000000000000000e0,5.0000000000000000e0,3.2500000000000000e0,1.2500000000000000e1,0"
        );
        assert!(lines[2].contains(",,4"));
        assert_eq!(lines[3], "# outcome=diverged:2");
    }

    #[test]
    fn parse_reports_line_numbers() {
        let bad = format!("{CSV_HEADER}\n0,1,2,3,,0\n1,1,x,3,,0\n# outcome=converged\n");
        assert!(matches!(RunTrace::parse_csv(&bad), Err(Error::Parse { line: 3, .. })));
        let missing = format!("{CSV_HEADER}\n0,1,2,3,,0\n");
        assert!(RunTrace::parse_csv(&missing).is_err());
        assert!(matches!(RunTrace::parse_csv("a,b\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn outcome_strings() {
        for o in [Outcome::Converged, Outcome::BudgetExhausted, Outcome::Diverged(17)] {
            assert_eq!(o.to_string().parse::<Outcome>().unwrap(), o);
        }
        assert!("diverged:".parse::<Outcome>().is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip(gaps in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..20)) {
            let rows: Vec<TraceRow> = gaps.iter().enumerate().map(|(i, &g)| TraceRow {
                iter: i,
                t: 1.0 + i as f64 * 0.1,
                f_gap: g,
                grad_norm: g.abs(),
                energy: if i % 2 == 0 { Some(g * 2.0) } else { None },
                grad_evals: 2 * i,
            }).collect();
            let trace = RunTrace { rows, outcome: Outcome::BudgetExhausted, h: 0.1 };
            let back = RunTrace::parse_csv(&trace.to_csv()).unwrap();
            prop_assert_eq!(back.rows, trace.rows);
            prop_assert_eq!(back.outcome, trace.outcome);
        }
    }
}
