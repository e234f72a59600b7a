//! M/M/k performance measures via the V recursion.
//!
//! `V(a,1) = 1/a`, `V(a,k) = (k/a)(V(a,k-1) + 1)` stays finite long after the
//! factorial form of Erlang-C overflows.

use crate::scalar::Scalar;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueueError {
    #[error("offered load a={a} outside the steady-state domain for k={k}")]
    Domain { a: f64, k: usize },
    #[error("service rate mu={0} must be positive")]
    ServiceRate(f64),
    #[error("factorial form of Erlang-C overflows at k={k}")]
    Overflow { k: usize },
    #[error("length mismatch: {loads} loads, {counts} counts")]
    LengthMismatch { loads: usize, counts: usize },
}

pub type Result<T> = std::result::Result<T, QueueError>;

/// Arrival rate, per-server service rate and server count of one M/M/k node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueParams<S> {
    pub lambda: S,
    pub mu: S,
    pub k: usize,
}

/// Steady-state measures of an M/M/k node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueMetrics<S> {
    pub ec: S,
    pub n_system: S,
    pub t_system: S,
    pub n_queue: S,
    pub t_queue: S,
}

impl<S: Scalar> QueueParams<S> {
    pub fn new(lambda: S, mu: S, k: usize) -> Result<Self> {
        if !(mu > S::zero()) {
            return Err(QueueError::ServiceRate(mu.to_f64_lossy()));
        }
        let p = Self { lambda, mu, k };
        check_limit(p.offered_load(), k)?;
        Ok(p)
    }

    pub fn offered_load(&self) -> S {
        self.lambda / self.mu
    }

    pub fn utilisation(&self) -> S {
        self.offered_load() / S::of_usize(self.k)
    }

    pub fn metrics(&self) -> Result<QueueMetrics<S>> {
        let a = self.offered_load();
        let ec = if a > S::zero() { erlang_c(a, self.k)? } else { S::zero() };
        let n = n_system(a, self.k)?;
        let t = t_system(self.lambda, self.mu, self.k)?;
        Ok(QueueMetrics {
            ec,
            n_system: n,
            t_system: t,
            n_queue: n - a,
            t_queue: t - S::one() / self.mu,
        })
    }
}

fn domain<S: Scalar>(a: S, k: usize) -> QueueError {
    QueueError::Domain { a: a.to_f64_lossy(), k }
}

/// Strict domain `0 < a < k`.
fn check_open<S: Scalar>(a: S, k: usize) -> Result<()> {
    if k < 1 || !(a > S::zero()) || !(a < S::of_usize(k)) {
        return Err(domain(a, k));
    }
    Ok(())
}

/// Domain `0 <= a < k`, admitting the empty-system limit.
fn check_limit<S: Scalar>(a: S, k: usize) -> Result<()> {
    if k < 1 || !(a >= S::zero()) || !(a < S::of_usize(k)) {
        return Err(domain(a, k));
    }
    Ok(())
}

/// Returns `(V(a,k-1), V(a,k))` with `V(a,0) = 0`.
fn v_pair<S: Scalar>(a: S, k: usize) -> (S, S) {
    let mut prev = S::zero();
    let mut v = S::one() / a;
    for i in 2..=k {
        prev = v;
        v = S::of_usize(i) / a * (v + S::one());
    }
    if k == 0 {
        (S::zero(), S::zero())
    } else {
        (prev, v)
    }
}

/// `V(a,k) = sum_{i<k} k!/i! a^(i-k)`, iteratively.
pub fn v_recursive<S: Scalar>(a: S, k: usize) -> Result<S> {
    if k < 1 || !(a > S::zero()) {
        return Err(domain(a, k));
    }
    Ok(v_pair(a, k).1)
}

/// Element-wise `V` in a single sweep over `1..=max(k)`.
pub fn v_batch<S: Scalar>(a: &[S], k: &[usize]) -> Result<Vec<S>> {
    if a.len() != k.len() {
        return Err(QueueError::LengthMismatch { loads: a.len(), counts: k.len() });
    }
    for (&ai, &ki) in a.iter().zip(k) {
        if ki < 1 || !(ai > S::zero()) {
            return Err(domain(ai, ki));
        }
    }
    let mut r: Vec<S> = a.iter().map(|&ai| S::one() / ai).collect();
    let kmax = k.iter().copied().max().unwrap_or(0);
    for i in 2..=kmax {
        let fi = S::of_usize(i);
        for ((ri, &ai), &ki) in r.iter_mut().zip(a).zip(k) {
            if ki >= i {
                *ri = fi / ai * (*ri + S::one());
            }
        }
    }
    Ok(r)
}

/// Erlang-C queueing probability `k / (k + (k-a) V(a,k))`.
pub fn erlang_c<S: Scalar>(a: S, k: usize) -> Result<S> {
    check_open(a, k)?;
    let kf = S::of_usize(k);
    let v = v_pair(a, k).1;
    Ok(kf / (kf + (kf - a) * v))
}

/// Literal factorial-sum Erlang-C. Reference only; overflows for large `k`.
pub fn erlang_c_direct<S: Scalar>(a: S, k: usize) -> Result<S> {
    check_open(a, k)?;
    let kf = S::of_usize(k);
    let mut fact = S::one();
    let mut pow = S::one();
    let mut sum = S::zero();
    for i in 0..k {
        if i > 0 {
            fact = fact * S::of_usize(i);
            pow = pow * a;
        }
        sum = sum + pow / fact;
    }
    fact = fact * kf;
    pow = pow * a;
    if !fact.is_finite() || !pow.is_finite() || !sum.is_finite() {
        return Err(QueueError::Overflow { k });
    }
    let top = pow / fact * kf / (kf - a);
    let ec = top / (sum + top);
    if !ec.is_finite() {
        return Err(QueueError::Overflow { k });
    }
    Ok(ec)
}

/// Expected number in system; `n_system(0, k) = 0`.
pub fn n_system<S: Scalar>(a: S, k: usize) -> Result<S> {
    check_limit(a, k)?;
    if a == S::zero() {
        return Ok(S::zero());
    }
    let kf = S::of_usize(k);
    let v = v_pair(a, k).1;
    let d = kf - a;
    Ok(a + a * kf / (d * kf + d * d * v))
}

/// Expected time in system in seconds; `1/mu` at `lambda = 0`.
pub fn t_system<S: Scalar>(lambda: S, mu: S, k: usize) -> Result<S> {
    if !(mu > S::zero()) {
        return Err(QueueError::ServiceRate(mu.to_f64_lossy()));
    }
    let a = lambda / mu;
    check_limit(a, k)?;
    if a == S::zero() {
        return Ok(S::one() / mu);
    }
    let ec = erlang_c(a, k)?;
    Ok(ec / (S::of_usize(k) * mu - lambda) + S::one() / mu)
}

pub fn n_queue<S: Scalar>(a: S, k: usize) -> Result<S> {
    Ok(n_system(a, k)? - a)
}

pub fn t_queue<S: Scalar>(lambda: S, mu: S, k: usize) -> Result<S> {
    Ok(t_system(lambda, mu, k)? - S::one() / mu)
}

/// `dN/da` at fixed `k`, from `V(a,k)` and `V(a,k-1)`; equals 1 at `a = 0`.
pub fn dn_da<S: Scalar>(a: S, k: usize) -> Result<S> {
    check_limit(a, k)?;
    if a == S::zero() {
        return Ok(S::one());
    }
    let kf = S::of_usize(k);
    let (vp, v) = v_pair(a, k);
    let d = kf - a;
    let t1 = kf * (kf + S::one()) / (d * d * v + kf * d);
    let t2 = a * kf / (d * d * d * v + d * d * kf);
    let den = v * d + kf;
    let t3 = (vp * kf * kf * d - v * a * kf + kf * kf * kf) / (d * den * den);
    Ok(t1 + S::one() + t2 - t3)
}

/// Quadratic form `v1^2 A + 2 v1 v2 B + v2^2 D` of the mixed Hessian of Erlang-C.
///
/// `A` is the second difference in `k`; `B` and `D` use central differences in `a`.
pub fn nonconvexity_witness<S: Scalar>(a: S, k: usize, v1: S, v2: S) -> Result<S> {
    check_open(a, k)?;
    let h = S::of(1e-6) * a.max(S::one());
    if !(a - h > S::zero()) || !(a + h < S::of_usize(k)) {
        return Err(domain(a, k));
    }
    let ec = |x: S, j: usize| erlang_c(x, j);
    let two = S::of(2.0);
    let big_a = ec(a, k + 2)? - two * ec(a, k + 1)? + ec(a, k)?;
    let diff = |x: S| -> Result<S> { Ok(ec(x, k + 1)? - ec(x, k)?) };
    let big_b = (diff(a + h)? - diff(a - h)?) / (two * h);
    let big_d = (ec(a + h, k)? - two * ec(a, k)? + ec(a - h, k)?) / (h * h);
    Ok(v1 * v1 * big_a + two * v1 * v2 * big_b + v2 * v2 * big_d)
}
