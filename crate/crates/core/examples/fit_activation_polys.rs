//! Offline fitting tool: regenerates the activation polynomial table
//! checked in at `src/approx/activation_polys.json`.
//!
//! For each (op, degree) it scans candidate fit intervals, runs the Lawson
//! iteratively-reweighted least-squares fit, and keeps the interval with the
//! smallest worst-case error (interior fit error vs. asymptote tail error),
//! subject to an optional interior budget.
//!
//! Run with: `cargo run -p mpcc-core --example fit_activation_polys`

use mpcc_core::approx::polyfit::{eval_poly, fit_poly, PolyEntry, PolyTable};

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Asymptote error outside the interval: 0 below, identity (gelu/silu) or 1
/// (sigmoid) above.
fn tail_error(f: &dyn Fn(f64) -> f64, op: &str, b: f64) -> f64 {
    let mut worst: f64 = 0.0;
    let grid = 4000;
    for i in 0..=grid {
        let x = b + 40.0 * i as f64 / grid as f64;
        let above = if op == "sigmoid" { 1.0 } else { x };
        worst = worst.max((f(x) - above).abs());
        worst = worst.max(f(-x).abs());
    }
    worst
}

fn main() {
    type TrueFn = Box<dyn Fn(f64) -> f64>;
    let candidates = [2.0, 2.5, 2.7, 3.0, 3.5, 4.0, 4.5, 5.0, 5.5, 6.0];
    let ops: [(&str, TrueFn); 3] =
        [("gelu", Box::new(gelu)), ("silu", Box::new(silu)), ("sigmoid", Box::new(sigmoid))];

    let mut entries = Vec::new();
    for (op, f) in &ops {
        for degree in [2usize, 4] {
            // The order-4 gelu fit must stay within 0.01 on its interval.
            let budget = if *op == "gelu" && degree == 4 { Some(0.01) } else { None };
            let mut best: Option<(f64, PolyEntry)> = None;
            for &b in &candidates {
                let (coeffs, fit_err) = fit_poly(f.as_ref(), b, degree);
                if budget.is_some_and(|limit| fit_err > limit) {
                    continue;
                }
                let tail = tail_error(f.as_ref(), op, b);
                let score = fit_err.max(tail);
                let entry = PolyEntry {
                    op: op.to_string(),
                    degree,
                    interval: b,
                    coefficients: coeffs,
                    max_abs_error: fit_err,
                    tail_error: tail,
                };
                if best.as_ref().is_none_or(|(s, _)| score < *s) {
                    best = Some((score, entry));
                }
            }
            let (_, entry) = best.expect("at least one candidate interval fits");
            eprintln!(
                "{op} degree {degree}: interval {:.1}, fit err {:.5}, tail err {:.5}",
                entry.interval, entry.max_abs_error, entry.tail_error
            );
            // Round-trip sanity: the stored coefficients evaluate.
            assert!(eval_poly(&entry.coefficients, 0.5).is_finite());
            entries.push(entry);
        }
    }

    entries.sort_by_key(|e| (e.op.clone(), e.degree));
    let table = PolyTable { version: 1, entries };
    let mut json = serde_json::to_string_pretty(&table).unwrap();
    json.push('\n');
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/src/approx/activation_polys.json");
    std::fs::write(path, &json).unwrap();
    eprintln!("wrote {path}");
}
