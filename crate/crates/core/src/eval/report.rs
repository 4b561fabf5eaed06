//! CSV and JSON artifacts for curves, BD-rates and usage.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::bdrate::{RdCurve, RdPoint};
use crate::eval::curves::UsageTable;

/// `mode,qp,rate_bpp,quality`, one row per point.
pub fn rd_curves_csv(curves: &[RdCurve]) -> String {
    let mut s = String::from("mode,qp,rate_bpp,quality\n");
    for c in curves {
        for p in c.points() {
            writeln!(s, "{},{},{:e},{:e}", c.label, p.qp, p.rate, p.quality).unwrap();
        }
    }
    s
}

fn bad_line(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Eval(format!("line {line}: {msg}"))
}

fn fields(line: &str, n: usize, lineno: usize) -> Result<Vec<&str>> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != n {
        return Err(bad_line(lineno, format!("expected {n} fields, got {}", f.len())));
    }
    Ok(f)
}

fn num<T: std::str::FromStr>(s: &str, lineno: usize) -> Result<T> {
    s.parse().map_err(|_| bad_line(lineno, format!("bad number {s:?}")))
}

/// Inverse of [`rd_curves_csv`]; curves come back validated, in file order.
pub fn parse_rd_curves_csv(text: &str) -> Result<Vec<RdCurve>> {
    let mut groups: Vec<(String, Vec<RdPoint>)> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f = fields(line, 4, n + 1)?;
        let p = RdPoint {
            qp: num(f[1], n + 1)?,
            rate: num(f[2], n + 1)?,
            quality: num(f[3], n + 1)?,
        };
        match groups.last_mut() {
            Some((label, pts)) if label == f[0] => pts.push(p),
            _ => groups.push((f[0].to_string(), vec![p])),
        }
    }
    groups.into_iter().map(|(l, p)| RdCurve::new(l, p)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BdRateEntry {
    pub anchor: String,
    pub test: String,
    /// Percent; negative means the test saves rate.
    pub bd_rate: f64,
}

pub fn bd_rate_json(entries: &[BdRateEntry]) -> String {
    serde_json::to_string_pretty(entries).expect("plain data serializes") + "\n"
}

pub fn parse_bd_rate_json(text: &str) -> Result<Vec<BdRateEntry>> {
    serde_json::from_str(text).map_err(|e| Error::Eval(format!("bd_rate.json: {e}")))
}

/// `qp,filter,fraction`.
pub fn usage_csv(table: &UsageTable) -> String {
    let mut s = String::from("qp,filter,fraction\n");
    for (qp, row) in table.qps.iter().zip(table.fractions()) {
        for (j, f) in row.iter().enumerate() {
            writeln!(s, "{},{j},{f:e}", qp.value()).unwrap();
        }
    }
    s
}

/// Rows of `(qp, fractions)` from [`usage_csv`] output.
pub fn parse_usage_csv(text: &str) -> Result<Vec<(u32, Vec<f64>)>> {
    let mut rows: Vec<(u32, Vec<f64>)> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f = fields(line, 3, n + 1)?;
        let qp: u32 = num(f[0], n + 1)?;
        let j: usize = num(f[1], n + 1)?;
        let v: f64 = num(f[2], n + 1)?;
        match rows.last_mut() {
            Some((q, r)) if *q == qp && r.len() == j => r.push(v),
            _ if j == 0 => rows.push((qp, vec![v])),
            _ => return Err(bad_line(n + 1, "filters out of order")),
        }
    }
    Ok(rows)
}
