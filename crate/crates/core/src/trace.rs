//! Per-iteration solver traces.

use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub grad_norm: f64,
    pub cost: f64,
    /// Upload bytes so far, including the data needed to evaluate this row.
    pub cum_upload_bytes: usize,
}

/// CSV with header `iter,grad_norm,cost,cum_upload_bytes`.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("iter,grad_norm,cost,cum_upload_bytes\n");
    for r in rows {
        writeln!(
            out,
            "{},{:e},{:e},{}",
            r.iter, r.grad_norm, r.cost, r.cum_upload_bytes
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let rows = [TraceRow {
            iter: 0,
            grad_norm: 0.5,
            cost: 2.0,
            cum_upload_bytes: 64,
        }];
        assert_eq!(
            trace_csv(&rows),
            "iter,grad_norm,cost,cum_upload_bytes\n0,5e-1,2e0,64\n"
        );
    }
}
