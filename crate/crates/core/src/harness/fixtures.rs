//! The two-client, three-facility example and its reference rows.

use crate::model::Instance;

/// Client latencies to `f1, f2, f3` in milliseconds.
pub const LATENCY_A: [f64; 3] = [40.0, 100.0, 70.0];
pub const LATENCY_B: [f64; 3] = [70.0, 100.0, 40.0];
pub const MU: [f64; 3] = [60.0, 120.0, 60.0];
pub const K: [usize; 3] = [10, 10, 10];
pub const P: usize = 5;

/// One reference row: allocations and average response times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkedRow {
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub y_qp: [usize; 3],
    pub rt_qp: f64,
    pub rt_p: f64,
    pub y_p: [usize; 3],
}

const fn row(la: f64, lb: f64, y_qp: [usize; 3], rt_qp: f64, rt_p: f64, y_p: [usize; 3]) -> WorkedRow {
    WorkedRow { lambda_a: la, lambda_b: lb, y_qp, rt_qp, rt_p, y_p }
}

pub const WORKED_ROWS: [WorkedRow; 14] = [
    row(20.0, 10.0, [3, 0, 2], 56.7, 62.2, [1, 1, 3]),
    row(40.0, 30.0, [3, 0, 2], 57.3, 58.3, [2, 1, 2]),
    row(60.0, 50.0, [3, 0, 2], 58.7, 61.3, [2, 1, 2]),
    row(80.0, 70.0, [3, 0, 2], 61.6, 64.3, [2, 0, 3]),
    row(100.0, 90.0, [3, 0, 2], 68.8, 68.8, [3, 0, 2]),
    row(120.0, 110.0, [3, 0, 2], 79.3, 102.5, [3, 0, 2]),
    row(140.0, 130.0, [5, 0, 0], 96.5, 248.9, [3, 0, 2]),
    row(160.0, 150.0, [0, 2, 3], 97.6, 379.1, [2, 1, 2]),
    row(180.0, 170.0, [3, 2, 0], 107.2, 405.9, [3, 1, 1]),
    row(200.0, 190.0, [0, 3, 2], 111.3, 223.3, [3, 2, 0]),
    row(220.0, 210.0, [0, 4, 1], 116.3, 216.4, [2, 3, 0]),
    row(240.0, 230.0, [0, 5, 0], 112.4, 291.3, [2, 3, 0]),
    row(260.0, 250.0, [0, 5, 0], 115.6, 223.3, [1, 4, 0]),
    row(280.0, 270.0, [0, 5, 0], 124.3, 124.3, [0, 5, 0]),
];

/// The example instance at arrival rates `(lambda_a, lambda_b)`.
pub fn worked_example(lambda_a: f64, lambda_b: f64) -> Instance {
    Instance {
        clients: vec!["a".into(), "b".into()],
        facilities: vec!["f1".into(), "f2".into(), "f3".into()],
        latency: vec![LATENCY_A.to_vec(), LATENCY_B.to_vec()],
        lambda: vec![lambda_a, lambda_b],
        mu: MU.to_vec(),
        k: K.to_vec(),
        p: P,
    }
}

pub fn worked_row(lambda_a: f64, lambda_b: f64) -> Option<WorkedRow> {
    WORKED_ROWS.iter().copied().find(|r| r.lambda_a == lambda_a && r.lambda_b == lambda_b)
}
