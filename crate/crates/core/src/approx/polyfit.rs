//! Offline least-squares fitting of activation polynomials and the
//! versioned coefficient table the passes consume.
//!
//! Fits run on a dense grid over a symmetric interval, iteratively
//! reweighted (Lawson) so the maximum error approaches the minimax fit.
//! The shipped table is produced by the `fit_activation_polys` example and
//! checked in; every entry records the interval and the measured maximum
//! absolute error on it.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_POINTS: usize = 2001;
pub const LAWSON_ITERS: usize = 300;

/// Solve the weighted least-squares polynomial fit via normal equations.
/// The grid is normalized to [-1, 1] for conditioning; coefficients are
/// returned in the original variable, constant term first.
fn weighted_fit(xs: &[f64], ys: &[f64], ws: &[f64], degree: usize, b: f64) -> Vec<f64> {
    let n = degree + 1;
    let mut ata = vec![vec![0.0f64; n]; n];
    let mut atb = vec![0.0f64; n];
    for ((&x, &y), &w) in xs.iter().zip(ys).zip(ws) {
        let u = x / b;
        let mut pow = vec![1.0; n];
        for k in 1..n {
            pow[k] = pow[k - 1] * u;
        }
        for i in 0..n {
            for j in 0..n {
                ata[i][j] += w * pow[i] * pow[j];
            }
            atb[i] += w * pow[i] * y;
        }
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b2| ata[a][col].abs().total_cmp(&ata[b2][col].abs()))
            .unwrap();
        ata.swap(col, pivot);
        atb.swap(col, pivot);
        let d = ata[col][col];
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = ata[row][col] / d;
            let pivot_row = ata[col].clone();
            for (k, pv) in pivot_row.iter().enumerate().skip(col) {
                ata[row][k] -= f * pv;
            }
            atb[row] -= f * atb[col];
        }
    }
    let mut coeffs: Vec<f64> = (0..n).map(|i| atb[i] / ata[i][i]).collect();
    // Back to the unnormalized variable: c_x[k] = c_u[k] / B^k.
    let mut scale = 1.0;
    for c in coeffs.iter_mut() {
        *c /= scale;
        scale *= b;
    }
    coeffs
}

pub fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Lawson iteratively-reweighted least squares on `[-b, b]`.
/// Returns (coefficients, max abs error on the interval).
pub fn fit_poly(f: impl Fn(f64) -> f64, b: f64, degree: usize) -> (Vec<f64>, f64) {
    let xs: Vec<f64> = (0..GRID_POINTS)
        .map(|i| -b + 2.0 * b * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut ws = vec![1.0f64; xs.len()];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..LAWSON_ITERS {
        let coeffs = weighted_fit(&xs, &ys, &ws, degree, b);
        let errs: Vec<f64> = xs.iter().zip(&ys).map(|(&x, &y)| (eval_poly(&coeffs, x) - y).abs()).collect();
        let max_err = errs.iter().copied().fold(0.0, f64::max);
        if best.as_ref().is_none_or(|(_, e)| max_err < *e) {
            best = Some((coeffs, max_err));
        }
        let sum: f64 = ws.iter().zip(&errs).map(|(w, e)| w * e).sum();
        if sum <= 0.0 {
            break;
        }
        for (w, e) in ws.iter_mut().zip(&errs) {
            *w = (*w * e / sum).max(1e-300);
        }
    }
    best.expect("at least one fit iteration")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyEntry {
    pub op: String,
    pub degree: usize,
    /// Symmetric fit interval `[-interval, interval]`; outside it the
    /// piecewise form uses the asymptotes.
    pub interval: f64,
    /// Constant term first.
    pub coefficients: Vec<f64>,
    /// Maximum absolute error of the polynomial against the true function
    /// on the interval (the documented tolerance of the approximation).
    pub max_abs_error: f64,
    /// Maximum absolute error of the asymptote outside the interval.
    pub tail_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyTable {
    pub version: u32,
    pub entries: Vec<PolyEntry>,
}

impl PolyTable {
    pub fn from_json(text: &str) -> Result<PolyTable> {
        serde_json::from_str(text).map_err(|e| Error::parse(&e))
    }

    pub fn get(&self, op: &str, degree: usize) -> Result<&PolyEntry> {
        self.entries
            .iter()
            .find(|e| e.op == op && e.degree == degree)
            .ok_or_else(|| Error::Config(format!("no fitted polynomial for {op} degree {degree}")))
    }

    /// The checked-in table produced by the fitting tool.
    pub fn builtin() -> &'static PolyTable {
        static TABLE: OnceLock<PolyTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            PolyTable::from_json(include_str!("activation_polys.json"))
                .expect("builtin coefficient table parses")
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_polynomial() {
        let (c, err) = fit_poly(|x| 1.0 + 2.0 * x - 0.5 * x * x, 3.0, 2);
        assert!(err < 1e-9, "err {err}");
        assert!((c[0] - 1.0).abs() < 1e-9 && (c[1] - 2.0).abs() < 1e-9 && (c[2] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn builtin_table_parses_and_documents_errors() {
        let t = PolyTable::builtin();
        for op in ["gelu", "silu", "sigmoid"] {
            for degree in [4, 2] {
                let e = t.get(op, degree).unwrap();
                assert_eq!(e.coefficients.len(), degree + 1);
                assert!(e.interval > 0.0 && e.max_abs_error > 0.0);
            }
        }
        // The gelu order-4 fit meets its documented budget.
        assert!(t.get("gelu", 4).unwrap().max_abs_error <= 0.01);
    }
}
