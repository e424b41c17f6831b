//! Mutual information between prediction series.
//!
//! Hard class labels use the plug-in contingency-table estimate. Continuous
//! scores use the Kraskov–Stögbauer–Grassberger estimator (algorithm 1) with
//! max-norm neighborhoods. Everything is in nats.

use std::collections::BinaryHeap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Neighbor order used when callers do not pick one.
pub const DEFAULT_K: usize = 3;

/// Relative amplitude of the tie-breaking jitter added to continuous scores.
pub const JITTER_SCALE: f64 = 1e-10;

/// Class labels in `[0, n_classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSeries {
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabelSeries {
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|l| **l >= n_classes) {
            return Err(Error::InvalidInput(format!("label {bad} outside [0, {n_classes})")));
        }
        Ok(Self { labels, n_classes })
    }

    /// Infers the class count as one past the largest label.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(labels, n_classes)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Plug-in entropy of the empirical label distribution.
    pub fn entropy(&self) -> f64 {
        let n = self.labels.len() as f64;
        let mut counts = vec![0usize; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        let mut terms: Vec<f64> = counts
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| {
                let c = c as f64;
                (c / n) * (n / c).ln()
            })
            .collect();
        sorted_sum(&mut terms)
    }
}

/// Finite real-valued scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    scores: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("score {bad} is not finite")));
        }
        Ok(Self { scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

fn sorted_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Digamma function for `x > 0`.
///
/// Shifts the argument above 10 with `ψ(x) = ψ(x + 1) − 1/x`, then applies the
/// asymptotic expansion through the `x^-12` term.
pub fn digamma(x: f64) -> f64 {
    debug_assert!(x > 0.0, "digamma is only used on positive arguments");
    let mut x = x;
    let mut shift = 0.0;
    while x < 10.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let series = inv2
        * (-1.0 / 12.0
            + inv2
                * (1.0 / 120.0
                    + inv2 * (-1.0 / 252.0 + inv2 * (1.0 / 240.0 + inv2 * (-1.0 / 132.0 + inv2 * (691.0 / 32760.0))))));
    shift + x.ln() - 0.5 / x + series
}

/// Contingency-table mutual information between two label series.
///
/// Terms are summed in sorted order, so swapping the arguments gives a
/// bit-identical result.
pub fn discrete_mi(a: &LabelSeries, b: &LabelSeries) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "label series of length {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let (ca, cb) = (a.n_classes, b.n_classes);
    let mut joint = vec![0usize; ca * cb];
    let mut marg_a = vec![0usize; ca];
    let mut marg_b = vec![0usize; cb];
    for (&u, &v) in a.labels.iter().zip(&b.labels) {
        joint[u * cb + v] += 1;
        marg_a[u] += 1;
        marg_b[v] += 1;
    }
    let mut terms = Vec::new();
    for u in 0..ca {
        for v in 0..cb {
            let nuv = joint[u * cb + v];
            if nuv == 0 {
                continue;
            }
            let nuv = nuv as f64;
            let expected = marg_a[u] as f64 * marg_b[v] as f64;
            terms.push((nuv / n) * (nuv * n / expected).ln());
        }
    }
    Ok(sorted_sum(&mut terms).max(0.0))
}

/// KSG (algorithm 1) estimate of `I(X; Y)` for scalar series.
///
/// Both series receive the same seeded uniform jitter sequence, scaled by each
/// series' standard deviation times [`JITTER_SCALE`], so exact ties cannot
/// corrupt neighbor counts and `ksg_mi(x, y) == ksg_mi(y, x)`. The estimate is
/// clamped below at zero.
pub fn ksg_mi(x: &ScoreSeries, y: &ScoreSeries, k: usize, jitter_seed: u64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "score series of length {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidInput("kNN order k must be at least 1".into()));
    }
    let n = x.len();
    if n < k + 2 {
        return Err(Error::InsufficientData { needed: k + 2, got: n });
    }

    let mut rng = seed::rng(jitter_seed);
    let noise: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xs = jittered(&x.scores, &noise);
    let ys = jittered(&y.scores, &noise);

    let eps = kth_neighbor_distances(&xs, &ys, k);
    let sorted_x = sorted(&xs);
    let sorted_y = sorted(&ys);

    let mut acc = 0.0;
    for i in 0..n {
        let nx = count_within(&sorted_x, xs[i], eps[i]);
        let ny = count_within(&sorted_y, ys[i], eps[i]);
        acc += digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0);
    }
    let mi = digamma(k as f64) + digamma(n as f64) - acc / n as f64;
    Ok(mi.max(0.0))
}

/// Mutual information of a bivariate normal with correlation `rho`.
pub fn gaussian_mi_analytic(rho: f64) -> Result<f64> {
    if rho.is_nan() || rho.abs() >= 1.0 {
        return Err(Error::InvalidInput(format!("|rho| must be < 1, got {rho}")));
    }
    Ok(-0.5 * (1.0 - rho * rho).ln())
}

fn jittered(values: &[f64], noise: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let amp = JITTER_SCALE * scale;
    values.iter().zip(noise).map(|(v, u)| v + amp * u).collect()
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Number of entries strictly within `eps` of `center`, excluding the center.
fn count_within(sorted: &[f64], center: f64, eps: f64) -> usize {
    let lo = sorted.partition_point(|v| center - v >= eps);
    let hi = sorted.partition_point(|v| v - center < eps);
    hi - lo - 1
}

struct Dist(f64);

impl PartialEq for Dist {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Max-norm distance from each point to its k-th nearest neighbor.
///
/// Sweeps outward from each point in x-sorted order and stops a direction
/// once the x gap alone exceeds the current k-th distance.
fn kth_neighbor_distances(xs: &[f64], ys: &[f64], k: usize) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));

    let mut eps = vec![0.0; n];
    let mut heap: BinaryHeap<Dist> = BinaryHeap::with_capacity(k + 1);
    for pos in 0..n {
        let i = order[pos];
        heap.clear();
        let (mut left, mut right) = (pos, pos + 1);
        let mut left_open = pos > 0;
        let mut right_open = right < n;
        while left_open || right_open {
            let bound = if heap.len() == k {
                heap.peek().map_or(f64::INFINITY, |d| d.0)
            } else {
                f64::INFINITY
            };
            if left_open {
                let j = order[left - 1];
                let dx = xs[i] - xs[j];
                if dx > bound {
                    left_open = false;
                } else {
                    push_bounded(&mut heap, dx.max((ys[i] - ys[j]).abs()), k);
                    left -= 1;
                    left_open = left > 0;
                }
            }
            let bound = if heap.len() == k {
                heap.peek().map_or(f64::INFINITY, |d| d.0)
            } else {
                f64::INFINITY
            };
            if right_open {
                let j = order[right];
                let dx = xs[j] - xs[i];
                if dx > bound {
                    right_open = false;
                } else {
                    push_bounded(&mut heap, dx.max((ys[i] - ys[j]).abs()), k);
                    right += 1;
                    right_open = right < n;
                }
            }
        }
        eps[i] = heap.peek().map_or(0.0, |d| d.0);
    }
    eps
}

fn push_bounded(heap: &mut BinaryHeap<Dist>, d: f64, k: usize) {
    if heap.len() < k {
        heap.push(Dist(d));
    } else if heap.peek().is_some_and(|top| d < top.0) {
        heap.pop();
        heap.push(Dist(d));
    }
}
