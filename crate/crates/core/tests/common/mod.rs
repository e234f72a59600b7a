#![allow(dead_code)]

use qflp::Instance;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number in an M/M/k system from the textbook sums, in log space.
pub fn n_direct(a: f64, k: usize) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    assert!(a < k as f64);
    let mut log_terms = Vec::with_capacity(k);
    let mut lt = 0.0;
    for n in 0..k {
        if n > 0 {
            lt += a.ln() - (n as f64).ln();
        }
        log_terms.push(lt);
    }
    let log_top = lt + a.ln() - (k as f64).ln() + (k as f64).ln() - (k as f64 - a).ln();
    let mx = log_terms.iter().cloned().fold(log_top, f64::max);
    let s: f64 = log_terms.iter().map(|t| (t - mx).exp()).sum();
    let top = (log_top - mx).exp();
    let c = top / (s + top);
    c * a / (k as f64 - a) + a
}

/// Queue length at a facility, zero when idle and infinite past the 0.98 cap.
pub fn facility_cost(load: f64, mu: f64, y: usize) -> f64 {
    if load <= 0.0 {
        return 0.0;
    }
    if y == 0 || load > 0.98 * mu * y as f64 * (1.0 + 1e-9) {
        return f64::INFINITY;
    }
    n_direct(load / mu, y)
}

/// All `y` with `sum y = p` and `y <= caps`.
pub fn compositions(caps: &[usize], p: usize) -> Vec<Vec<usize>> {
    fn go(caps: &[usize], left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == caps.len() {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for v in 0..=caps[cur.len()].min(left) {
            cur.push(v);
            go(caps, left - v, cur, out);
            cur.pop();
        }
    }
    let mut out = vec![];
    go(caps, p, &mut vec![], &mut out);
    out
}

/// Small instance: up to 4 facilities, 5 clients, `k_f <= 8`, total `k <= 30`.
pub fn small_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let nf = rng.gen_range(1..=4);
        let nc = rng.gen_range(1..=5);
        let k: Vec<usize> = (0..nf).map(|_| rng.gen_range(1..=8)).collect();
        if k.iter().sum::<usize>() > 30 {
            continue;
        }
        let mu: Vec<f64> = (0..nf).map(|_| rng.gen_range(5.0..20.0f64).round()).collect();
        let latency: Vec<Vec<f64>> =
            (0..nc).map(|_| (0..nf).map(|_| rng.gen_range(1.0..50.0f64).round()).collect()).collect();
        let p = rng.gen_range(1..=k.iter().sum::<usize>());
        let mut inst = Instance {
            clients: (0..nc).map(|c| format!("c{c}")).collect(),
            facilities: (0..nf).map(|f| format!("f{f}")).collect(),
            latency,
            lambda: vec![1.0; nc],
            mu,
            k,
            p,
        };
        let total = inst.max_capacity() * rng.gen_range(0.2..0.8);
        let w: Vec<f64> = (0..nc).map(|_| rng.gen_range(0.5..1.5)).collect();
        let ws: f64 = w.iter().sum();
        inst.lambda = w.iter().map(|x| total * x / ws).collect();
        if inst.validate().is_ok() {
            return inst;
        }
    }
}
