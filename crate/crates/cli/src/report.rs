//! JSON run reports.

use lapra::dd::{CommsLedger, PayloadKind};
use lapra::metrics::RotationRmse;
use lapra::trace::TraceRow;
use serde::Serialize;

#[derive(Serialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub grad_norm: f64,
    pub cost: f64,
    pub cum_upload_bytes: usize,
}

pub fn trace_entries(rows: &[TraceRow]) -> Vec<TraceEntry> {
    rows.iter()
        .map(|r| TraceEntry {
            iter: r.iter,
            grad_norm: r.grad_norm,
            cost: r.cost,
            cum_upload_bytes: r.cum_upload_bytes,
        })
        .collect()
}

#[derive(Serialize)]
pub struct Uploads {
    pub schur: usize,
    pub rhs: usize,
    pub partial_grad: usize,
}

impl Uploads {
    pub fn from_ledger(ledger: &CommsLedger) -> Self {
        Self {
            schur: ledger.bytes_of(PayloadKind::Schur),
            rhs: ledger.bytes_of(PayloadKind::Rhs),
            partial_grad: ledger.bytes_of(PayloadKind::PartialGrad),
        }
    }
}

#[derive(Serialize)]
pub struct RmseReport {
    pub frobenius: f64,
    pub chordal_deg: f64,
    pub geodesic_deg: f64,
}

impl From<RotationRmse> for RmseReport {
    fn from(r: RotationRmse) -> Self {
        Self {
            frobenius: r.frobenius,
            chordal_deg: r.chordal_deg,
            geodesic_deg: r.geodesic_deg,
        }
    }
}

#[derive(Serialize)]
pub struct Metrics {
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub cost: f64,
    /// Equals the last trace row's `cum_upload_bytes`.
    pub total_upload_bytes: usize,
    pub uploads: Uploads,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rotation_rmse: Option<RmseReport>,
    /// Meters, after the rotation alignment and mean removal.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub translation_rmse: Option<f64>,
    /// Seconds.
    pub wall_time: f64,
}

#[derive(Serialize)]
pub struct RunReport<C: Serialize> {
    pub command: &'static str,
    pub config: C,
    pub trace: Vec<TraceEntry>,
    pub metrics: Metrics,
}
