//! Bjontegaard delta rate with a least-squares cubic fit.

use crate::error::{Error, Result};

/// One operating point: rate in bits per pixel and quality (higher is better).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    pub qp: u32,
    pub rate: f64,
    pub quality: f64,
}

/// Operating points ordered by increasing QP, so rates strictly decrease.
#[derive(Clone, Debug, PartialEq)]
pub struct RdCurve {
    pub label: String,
    points: Vec<RdPoint>,
}

impl RdCurve {
    pub fn new(label: impl Into<String>, mut points: Vec<RdPoint>) -> Result<Self> {
        let label = label.into();
        if points.len() < 4 {
            return Err(Error::Eval(format!(
                "curve {label} has {} points, a cubic fit needs 4",
                points.len()
            )));
        }
        points.sort_by_key(|p| p.qp);
        for p in &points {
            if !(p.rate > 0.0 && p.rate.is_finite() && p.quality.is_finite()) {
                return Err(Error::Eval(format!(
                    "curve {label} has invalid point rate={} quality={} at qp {}",
                    p.rate, p.quality, p.qp
                )));
            }
        }
        for w in points.windows(2) {
            if w[1].qp == w[0].qp || w[1].rate >= w[0].rate {
                return Err(Error::Eval(format!(
                    "curve {label}: rate {} at qp {} does not drop below {} at qp {}",
                    w[1].rate, w[1].qp, w[0].rate, w[0].qp
                )));
            }
        }
        Ok(Self { label, points })
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    fn quality_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.quality), hi.max(p.quality))
            })
    }
}

/// Least-squares cubic `y = c0 + c1 t + c2 t^2 + c3 t^3`.
fn fit_cubic(t: &[f64], y: &[f64]) -> Result<[f64; 4]> {
    let mut a = [[0.0; 5]; 4];
    for (&ti, &yi) in t.iter().zip(y) {
        let pow = [1.0, ti, ti * ti, ti * ti * ti];
        for r in 0..4 {
            for c in 0..4 {
                a[r][c] += pow[r] * pow[c];
            }
            a[r][4] += pow[r] * yi;
        }
    }
    let scale = a[0][0];
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-12 * scale {
            return Err(Error::Eval("ill-conditioned cubic fit (qualities too close together)".into()));
        }
        a.swap(col, piv);
        for r in col + 1..4 {
            let f = a[r][col] / a[col][col];
            for c in col..5 {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][4] - s) / a[r][r];
    }
    Ok(x)
}

fn integral(p: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let anti = |t: f64| p[0] * t + p[1] * t * t / 2.0 + p[2] * t.powi(3) / 3.0 + p[3] * t.powi(4) / 4.0;
    anti(hi) - anti(lo)
}

/// Average rate change of `test` relative to `anchor` at equal quality, in percent.
/// Negative values mean the test saves rate.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64> {
    let (alo, ahi) = anchor.quality_range();
    let (tlo, thi) = test.quality_range();
    let (lo, hi) = (alo.max(tlo), ahi.min(thi));
    if lo >= hi {
        return Err(Error::Eval(format!(
            "quality ranges of {} [{alo}, {ahi}] and {} [{tlo}, {thi}] do not overlap",
            anchor.label, test.label
        )));
    }
    // fit on a common normalized abscissa so the normal equations stay well scaled
    let (glo, ghi) = (alo.min(tlo), ahi.max(thi));
    let mid = (glo + ghi) / 2.0;
    let half = (ghi - glo) / 2.0;
    let fit = |c: &RdCurve| {
        let t: Vec<f64> = c.points.iter().map(|p| (p.quality - mid) / half).collect();
        let y: Vec<f64> = c.points.iter().map(|p| p.rate.ln()).collect();
        fit_cubic(&t, &y)
    };
    let pa = fit(anchor)?;
    let pt = fit(test)?;
    let (nlo, nhi) = ((lo - mid) / half, (hi - mid) / half);
    let diff = (integral(&pt, nlo, nhi) - integral(&pa, nlo, nhi)) / (nhi - nlo);
    Ok((diff.exp() - 1.0) * 100.0)
}
