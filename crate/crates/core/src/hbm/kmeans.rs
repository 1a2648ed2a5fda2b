//! Size-constrained k-means on scalar values.
//!
//! The assignment step is a min-cost flow: source → point (cap 1), point →
//! cluster (cap 1, cost = squared distance), cluster → sink split into a
//! lower-bound arc (cap = min size, cost −M) and a slack arc (cap = max − min,
//! cost 0). Successive shortest paths with Dijkstra on reduced costs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    /// Cluster id per value; clusters are numbered by descending centroid.
    pub labels: Vec<usize>,
    pub centroids: Vec<f64>,
    pub sse: f64,
    pub min_size: usize,
    pub max_size: Option<usize>,
}

impl ClusterAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    /// Nearest centroid to `v` (ties to the lower id).
    pub fn nearest(&self, v: f64) -> usize {
        (0..self.k)
            .min_by(|&a, &b| (v - self.centroids[a]).abs().total_cmp(&(v - self.centroids[b]).abs()).then(a.cmp(&b)))
            .unwrap_or(0)
    }
}

#[derive(Clone, Copy)]
struct Edge {
    to: usize,
    rev: usize,
    cap: i64,
    cost: f64,
}

struct Graph {
    adj: Vec<Vec<Edge>>,
}

impl Graph {
    fn new(n: usize) -> Self {
        Self { adj: vec![Vec::new(); n] }
    }

    fn add(&mut self, u: usize, v: usize, cap: i64, cost: f64) {
        let ru = self.adj[v].len();
        let rv = self.adj[u].len();
        self.adj[u].push(Edge { to: v, rev: ru, cap, cost });
        self.adj[v].push(Edge { to: u, rev: rv, cap: 0, cost: -cost });
    }
}

#[derive(PartialEq)]
struct State(f64, usize);

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Optimal bounded assignment of `values` to fixed `centroids`.
pub fn assign_bounded(values: &[f64], centroids: &[f64], min_size: usize, max_size: Option<usize>) -> Result<Vec<usize>> {
    let n = values.len();
    let k = centroids.len();
    check_bounds(n, k, min_size, max_size)?;
    let max = max_size.unwrap_or(n).min(n);
    let (s, t) = (0, n + k + 1);
    let mut g = Graph::new(n + k + 2);
    let mut max_cost: f64 = 0.0;
    for (i, &v) in values.iter().enumerate() {
        g.add(s, 1 + i, 1, 0.0);
        for (j, &c) in centroids.iter().enumerate() {
            let d = (v - c) * (v - c);
            max_cost = max_cost.max(d);
            g.add(1 + i, 1 + n + j, 1, d);
        }
    }
    let big = (max_cost + 1.0) * (n as f64 + 1.0);
    for j in 0..k {
        if min_size > 0 {
            g.add(1 + n + j, t, min_size as i64, -big);
        }
        if max > min_size {
            g.add(1 + n + j, t, (max - min_size) as i64, 0.0);
        }
    }
    // Initial potentials from the layered DAG.
    let nodes = n + k + 2;
    let mut pot = vec![0.0; nodes];
    for j in 0..k {
        pot[1 + n + j] = (0..n)
            .map(|i| (values[i] - centroids[j]).powi(2))
            .fold(f64::INFINITY, f64::min);
    }
    pot[t] = (0..k).map(|j| pot[1 + n + j] - if min_size > 0 { big } else { 0.0 }).fold(f64::INFINITY, f64::min);

    for _ in 0..n {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; nodes];
        dist[s] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(State(0.0, s));
        while let Some(State(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for (ei, e) in g.adj[u].iter().enumerate() {
                if e.cap <= 0 {
                    continue;
                }
                let rc = (e.cost + pot[u] - pot[e.to]).max(0.0);
                let nd = d + rc;
                if nd < dist[e.to] {
                    dist[e.to] = nd;
                    prev[e.to] = Some((u, ei));
                    heap.push(State(nd, e.to));
                }
            }
        }
        if !dist[t].is_finite() {
            return Err(Error::Infeasible("no augmenting path for the size bounds".into()));
        }
        for v in 0..nodes {
            if dist[v].is_finite() {
                pot[v] += dist[v];
            }
        }
        let mut v = t;
        while let Some((u, ei)) = prev[v] {
            let rev = g.adj[u][ei].rev;
            g.adj[u][ei].cap -= 1;
            g.adj[v][rev].cap += 1;
            v = u;
        }
    }
    let mut labels = vec![usize::MAX; n];
    for (i, label) in labels.iter_mut().enumerate() {
        for e in &g.adj[1 + i] {
            if e.to > n && e.to <= n + k && e.cap == 0 {
                *label = e.to - n - 1;
            }
        }
    }
    let mut sizes = vec![0usize; k];
    for &l in &labels {
        sizes[l] += 1;
    }
    if sizes.iter().any(|&c| c < min_size || c > max) {
        return Err(Error::Infeasible("flow did not meet the size bounds".into()));
    }
    Ok(labels)
}

fn check_bounds(n: usize, k: usize, min_size: usize, max_size: Option<usize>) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Infeasible(format!("k = {k} with {n} values")));
    }
    if n < k * min_size {
        return Err(Error::Infeasible(format!("{k} clusters of at least {min_size} need {} values, have {n}", k * min_size)));
    }
    if let Some(m) = max_size {
        if m < min_size || m * k < n {
            return Err(Error::Infeasible(format!("{k} clusters of at most {m} cannot hold {n} values")));
        }
    }
    Ok(())
}

fn sse_of(values: &[f64], labels: &[usize], k: usize) -> (Vec<f64>, f64) {
    let mut sum = vec![0.0; k];
    let mut cnt = vec![0usize; k];
    for (v, &l) in values.iter().zip(labels) {
        sum[l] += v;
        cnt[l] += 1;
    }
    let cents: Vec<f64> = (0..k).map(|j| if cnt[j] > 0 { sum[j] / cnt[j] as f64 } else { f64::NAN }).collect();
    let sse = values.iter().zip(labels).map(|(v, &l)| (v - cents[l]).powi(2)).sum();
    (cents, sse)
}

fn lloyd(values: &[f64], mut centroids: Vec<f64>, min_size: usize, max_size: Option<usize>) -> Result<(Vec<usize>, Vec<f64>, f64)> {
    let k = centroids.len();
    let mut labels: Vec<usize> = Vec::new();
    for _ in 0..200 {
        let new = assign_bounded(values, &centroids, min_size, max_size)?;
        if new == labels {
            break;
        }
        labels = new;
        let (c, _) = sse_of(values, &labels, k);
        for j in 0..k {
            if c[j].is_finite() {
                centroids[j] = c[j];
            }
        }
    }
    let (_, sse) = sse_of(values, &labels, k);
    Ok((labels, centroids, sse))
}

fn kmeans_pp(values: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = values.len();
    let mut c = vec![values[rng.random_range(0..n)]];
    while c.len() < k {
        let d: Vec<f64> = values
            .iter()
            .map(|v| c.iter().map(|x| (v - x).powi(2)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, di) in d.iter().enumerate() {
                if u < *di {
                    idx = i;
                    break;
                }
                u -= di;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        c.push(values[pick]);
    }
    c
}

/// Relabel so cluster 0 has the largest centroid.
fn canonical(values: &[f64], labels: Vec<usize>, centroids: Vec<f64>, sse: f64, min_size: usize, max_size: Option<usize>) -> ClusterAssignment {
    let k = centroids.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centroids[b].total_cmp(&centroids[a]).then(a.cmp(&b)));
    let mut rank = vec![0; k];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r;
    }
    let labels: Vec<usize> = labels.iter().map(|&l| rank[l]).collect();
    let (cents, _) = sse_of(values, &labels, k);
    let centroids = (0..k).map(|r| if cents[r].is_finite() { cents[r] } else { centroids[order[r]] }).collect();
    ClusterAssignment { k, labels, centroids, sse, min_size, max_size }
}

fn best_of(values: &[f64], starts: Vec<Vec<f64>>, min_size: usize, max_size: Option<usize>) -> Result<ClusterAssignment> {
    let runs: Vec<Result<(Vec<usize>, Vec<f64>, f64)>> = starts
        .into_par_iter()
        .map(|c| lloyd(values, c, min_size, max_size))
        .collect();
    let mut best: Option<(Vec<usize>, Vec<f64>, f64)> = None;
    for r in runs {
        let r = r?;
        if best.as_ref().is_none_or(|b| r.2 < b.2) {
            best = Some(r);
        }
    }
    let (l, c, s) = best.expect("at least one restart");
    Ok(canonical(values, l, c, s, min_size, max_size))
}

fn seeded_starts(values: &[f64], k: usize, seed: u64, restarts: usize) -> Vec<Vec<f64>> {
    (0..restarts.max(1))
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            kmeans_pp(values, k, &mut rng)
        })
        .collect()
}

/// Best of `restarts` k-means++ seeded runs by SSE.
pub fn constrained_kmeans(values: &[f64], k: usize, min_size: usize, max_size: Option<usize>, seed: u64, restarts: usize) -> Result<ClusterAssignment> {
    check_bounds(values.len(), k, min_size, max_size)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("values", "non-finite value"));
    }
    best_of(values, seeded_starts(values, k, seed, restarts), min_size, max_size)
}

/// Fits for every k in `ks` (ascending). Each k > first also starts from the
/// previous solution plus the value farthest from its centroid, so SSE cannot
/// increase with k when `min_size` is 1.
pub fn elbow_scan(values: &[f64], ks: &[usize], min_size: usize, max_size: Option<usize>, seed: u64, restarts: usize) -> Result<Vec<ClusterAssignment>> {
    let mut out: Vec<ClusterAssignment> = Vec::new();
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    for k in ks {
        check_bounds(values.len(), k, min_size, max_size)?;
        let mut starts = seeded_starts(values, k, seed, restarts);
        if let Some(prev) = out.last() {
            let mut c = prev.centroids.clone();
            let far = values
                .iter()
                .zip(&prev.labels)
                .max_by(|a, b| (a.0 - prev.centroids[*a.1]).abs().total_cmp(&(b.0 - prev.centroids[*b.1]).abs()))
                .map(|(v, _)| *v)
                .unwrap();
            while c.len() < k {
                c.push(far);
            }
            starts.push(c);
        }
        out.push(best_of(values, starts, min_size, max_size)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_groups() {
        let v = [1.0, 1.0, 1.0, 9.0, 9.0, 9.0];
        let a = constrained_kmeans(&v, 2, 3, None, 1, 4).unwrap();
        assert_eq!(a.sse, 0.0);
        assert_eq!(a.labels, vec![1, 1, 1, 0, 0, 0]);
        assert_eq!(a.centroids, vec![9.0, 1.0]);
    }

    #[test]
    fn bounds_are_enforced() {
        let v = [0.0, 0.1, 0.2, 0.3, 10.0, 10.1];
        let free = constrained_kmeans(&v, 2, 1, None, 0, 4).unwrap();
        assert_eq!(free.sizes(), vec![2, 4]);
        let bounded = constrained_kmeans(&v, 2, 3, Some(3), 0, 4).unwrap();
        assert_eq!(bounded.sizes(), vec![3, 3]);
        assert!(bounded.sse > free.sse);
        assert!(matches!(constrained_kmeans(&v, 2, 4, None, 0, 1), Err(Error::Infeasible(_))));
        assert!(matches!(constrained_kmeans(&v, 2, 1, Some(2), 0, 1), Err(Error::Infeasible(_))));
    }

    #[test]
    fn k_equals_n_gives_zero_sse() {
        let v = [3.0, 1.0, 2.0, 5.0];
        let a = constrained_kmeans(&v, 4, 1, None, 9, 3).unwrap();
        assert!(a.sse.abs() < 1e-15);
    }

    #[test]
    fn elbow_is_monotone() {
        let v: Vec<f64> = (0..40).map(|i| ((i * 37) % 23) as f64 * 0.17 + (i % 4) as f64).collect();
        let scan = elbow_scan(&v, &[1, 2, 3, 4, 5, 6, 7, 8], 1, None, 3, 2).unwrap();
        for w in scan.windows(2) {
            assert!(w[1].sse <= w[0].sse + 1e-12, "{} > {}", w[1].sse, w[0].sse);
        }
    }
}
