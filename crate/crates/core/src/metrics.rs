//! Task metrics and transfer metrics over a performance matrix.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: pred.len(),
        });
    }
    Ok(())
}

/// Mean per-class Dice coefficient over `classes` minus `exclude`. A class
/// absent from both vectors scores 1.
pub fn dice(pred: &[usize], truth: &[usize], classes: &[usize], exclude: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for &c in classes.iter().filter(|c| !exclude.contains(c)) {
        let (mut inter, mut np, mut nt) = (0usize, 0usize, 0usize);
        for (&p, &t) in pred.iter().zip(truth) {
            np += (p == c) as usize;
            nt += (t == c) as usize;
            inter += (p == c && t == c) as usize;
        }
        total += if np + nt == 0 {
            1.0
        } else {
            2.0 * inter as f64 / (np + nt) as f64
        };
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput("dice class set"));
    }
    Ok(total / n as f64)
}

/// Unweighted mean of per-class F1 over the classes in `classes` that occur
/// in `pred` or `truth`.
pub fn f1_macro(pred: &[usize], truth: &[usize], classes: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for &c in classes {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        if tp + fp + fneg == 0 {
            continue;
        }
        total += 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput("f1 class set"));
    }
    Ok(total / n as f64)
}

/// `a[x][y]`: metric on context `y` after training through context `x`;
/// `baselines[y]`: metric of an untrained model on context `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMatrix {
    a: Vec<Vec<f64>>,
    baselines: Vec<f64>,
}

fn check_unit(v: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} {v} outside [0, 1]")))
    }
}

impl PerformanceMatrix {
    pub fn new(a: Vec<Vec<f64>>, baselines: Vec<f64>) -> Result<Self> {
        let t = a.len();
        if t == 0 {
            return Err(Error::EmptyInput("performance matrix"));
        }
        for row in &a {
            if row.len() != t {
                return Err(Error::DimensionMismatch {
                    expected: t,
                    found: row.len(),
                });
            }
            for &v in row {
                check_unit(v, "matrix entry")?;
            }
        }
        if baselines.len() != t {
            return Err(Error::DimensionMismatch {
                expected: t,
                found: baselines.len(),
            });
        }
        for &v in &baselines {
            check_unit(v, "baseline entry")?;
        }
        Ok(Self { a, baselines })
    }

    pub fn t(&self) -> usize {
        self.a.len()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.a[x][y]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn baselines(&self) -> &[f64] {
        &self.baselines
    }

    /// Mean over contexts of the final row.
    pub fn final_average(&self) -> f64 {
        let last = &self.a[self.t() - 1];
        last.iter().sum::<f64>() / last.len() as f64
    }

    /// CSV: header `trained_through,c0,...`, one row per trained-through
    /// context, then a `baseline` row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (0..self.t()).map(|y| format!("c{y}")).collect();
        writeln!(w, "trained_through,{}", header.join(","))?;
        for (x, row) in self.a.iter().enumerate() {
            writeln!(w, "{x},{}", join(row))?;
        }
        writeln!(w, "baseline,{}", join(&self.baselines))?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut rows = Vec::new();
        let mut baselines = None;
        let mut width = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if width.is_none() {
                if fields[0] != "trained_through" {
                    return Err(err(lineno, "expected header starting with trained_through".into()));
                }
                width = Some(fields.len() - 1);
                continue;
            }
            let w = width.unwrap_or(0);
            if fields.len() - 1 != w {
                return Err(err(lineno, format!("expected {w} values, found {}", fields.len() - 1)));
            }
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| err(lineno, format!("non-numeric value {f:?}"))))
                .collect::<Result<Vec<f64>>>()?;
            if fields[0] == "baseline" {
                baselines = Some(values);
            } else {
                let idx: usize = fields[0]
                    .parse()
                    .map_err(|_| err(lineno, format!("bad row label {:?}", fields[0])))?;
                if idx != rows.len() {
                    return Err(err(lineno, format!("row {idx} out of order")));
                }
                rows.push(values);
            }
        }
        let baselines = baselines.ok_or_else(|| err(0, "missing baseline row".into()))?;
        Self::new(rows, baselines)
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Backward transfer: mean over all but the last context of the final-row
/// score minus the score right after learning that context.
pub fn bwt(m: &PerformanceMatrix) -> Result<f64> {
    let t = m.t();
    if t < 2 {
        return Err(Error::InvalidArgument("bwt needs at least two contexts".into()));
    }
    let s: f64 = (0..t - 1).map(|j| m.a[t - 1][j] - m.a[j][j]).sum();
    Ok(s / (t - 1) as f64)
}

/// Forward transfer: mean over contexts after the first of the score before
/// learning that context minus the untrained score.
pub fn fwt(m: &PerformanceMatrix) -> Result<f64> {
    let t = m.t();
    if t < 2 {
        return Err(Error::InvalidArgument("fwt needs at least two contexts".into()));
    }
    let s: f64 = (1..t).map(|j| m.a[j - 1][j] - m.baselines[j]).sum();
    Ok(s / (t - 1) as f64)
}

/// Mean of task metric, BWT and FWT. Lies in `[-2/3, 1]`.
pub fn il_score(task_metric: f64, bwt: f64, fwt: f64) -> Result<f64> {
    check_unit(task_metric, "task metric")?;
    for (name, v) in [("bwt", bwt), ("fwt", fwt)] {
        if !(-1.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("{name} {v} outside [-1, 1]")));
        }
    }
    Ok((task_metric + bwt + fwt) / 3.0)
}
