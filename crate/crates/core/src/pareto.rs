//! Dominance, front extraction, normalized distance to the front,
//! Pareto-proximal quality-diversity sampling and hypervolume.
//!
//! All metrics are minimized.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::QorVector;
use crate::rng;

/// `a` dominates `b`: no worse on every metric and strictly better on one.
pub fn dominates(a: &QorVector, b: &QorVector) -> bool {
    dominates_slice(&a.to_array(), &b.to_array())
}

pub fn dominates_slice(a: &[f64], b: &[f64]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strict = true;
        }
    }
    strict
}

/// Indices of the non-dominated entries, in input order. Entries with equal
/// QoR are kept once (first occurrence).
pub fn pareto_front<T>(designs: &[(T, QorVector)]) -> Vec<usize> {
    let qors: Vec<QorVector> = designs.iter().map(|(_, q)| *q).collect();
    pareto_front_qor(&qors)
}

pub fn pareto_front_qor(qors: &[QorVector]) -> Vec<usize> {
    let mut front: Vec<usize> = Vec::new();
    for (i, q) in qors.iter().enumerate() {
        if qors.iter().any(|o| dominates(o, q)) {
            continue;
        }
        if front.iter().any(|&f| qors[f] == *q) {
            continue;
        }
        front.push(i);
    }
    front
}

/// Per-metric extremes over all evaluated designs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationBounds {
    pub f_max: QorVector,
    pub f_min: QorVector,
}

impl NormalizationBounds {
    pub fn from_qors<'a>(qors: impl IntoIterator<Item = &'a QorVector>) -> Option<Self> {
        let mut it = qors.into_iter();
        let first = *it.next()?;
        let (mut lo, mut hi) = (first.to_array(), first.to_array());
        for q in it {
            for (k, v) in q.to_array().into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        Some(NormalizationBounds {
            f_max: QorVector::from_array(hi),
            f_min: QorVector::from_array(lo),
        })
    }

    /// Per-metric range; degenerate metrics report 0.
    pub fn range(&self) -> [f64; 5] {
        let (hi, lo) = (self.f_max.to_array(), self.f_min.to_array());
        std::array::from_fn(|k| hi[k] - lo[k])
    }

    /// Map a QoR into `[0,1]^5`; degenerate metrics map to 0.
    pub fn normalize(&self, q: &QorVector) -> [f64; 5] {
        let (v, lo, r) = (q.to_array(), self.f_min.to_array(), self.range());
        std::array::from_fn(|k| if r[k] > 0.0 { (v[k] - lo[k]) / r[k] } else { 0.0 })
    }

    /// L2 distance between two QoRs in normalized objective space.
    pub fn distance(&self, a: &QorVector, b: &QorVector) -> f64 {
        let (va, vb, r) = (a.to_array(), b.to_array(), self.range());
        (0..5)
            .filter(|&k| r[k] > 0.0)
            .map(|k| ((va[k] - vb[k]) / r[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Normalized Euclidean distance from `p` to the nearest front member.
pub fn pareto_distance(p: &QorVector, front: &[QorVector], bounds: &NormalizationBounds) -> Result<f64> {
    front
        .iter()
        .map(|f| bounds.distance(p, f))
        .min_by(f64::total_cmp)
        .ok_or(Error::EmptyFront)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QdSamplingConfig {
    pub k_near: usize,
    pub epsilon: f64,
}

impl Default for QdSamplingConfig {
    fn default() -> Self {
        QdSamplingConfig { k_near: 8, epsilon: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QdSelection {
    /// Pareto-front members, input order.
    pub front: Vec<usize>,
    /// Near-front picks, in pick order.
    pub near: Vec<usize>,
}

impl QdSelection {
    pub fn all(&self) -> impl Iterator<Item = usize> + '_ {
        self.front.iter().chain(&self.near).copied()
    }

    pub fn len(&self) -> usize {
        self.front.len() + self.near.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Two-tier selection: every front member, then up to `k_near` designs with
/// `d(p) < epsilon` picked greedily to maximize their minimum normalized
/// distance to everything already selected. Ties go to the earlier input.
pub fn qd_sample(qors: &[QorVector], cfg: &QdSamplingConfig, bounds: &NormalizationBounds) -> QdSelection {
    let front = pareto_front_qor(qors);
    if front.is_empty() {
        return QdSelection::default();
    }
    let front_qors: Vec<QorVector> = front.iter().map(|&i| qors[i]).collect();
    let mut ranked: Vec<(usize, f64)> = (0..qors.len())
        .filter(|i| !front.contains(i))
        .map(|i| (i, pareto_distance(&qors[i], &front_qors, bounds).expect("front is non-empty")))
        .filter(|&(_, d)| d < cfg.epsilon)
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut pool: Vec<usize> = ranked.into_iter().map(|(i, _)| i).collect();
    // Keep input order so ties resolve to the earliest design.
    pool.sort_unstable();

    let mut selected: Vec<usize> = front.clone();
    let mut near = Vec::new();
    while near.len() < cfg.k_near && !pool.is_empty() {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &cand) in pool.iter().enumerate() {
            let spread = selected
                .iter()
                .map(|&s| bounds.distance(&qors[cand], &qors[s]))
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, b)| spread > b) {
                best = Some((pos, spread));
            }
        }
        let (pos, _) = best.expect("pool is non-empty");
        let pick = pool.remove(pos);
        selected.push(pick);
        near.push(pick);
    }
    QdSelection { front, near }
}

/// Fronts up to this size use exact inclusion-exclusion in [`hypervolume`].
pub const EXACT_HV_MAX_POINTS: usize = 12;
pub const MC_HV_SAMPLES: usize = 100_000;
pub const MC_HV_SEED: u64 = 0x4856;

fn check_reference(front: &[Vec<f64>], reference: &[f64]) -> Result<()> {
    for (i, p) in front.iter().enumerate() {
        if p.len() != reference.len() || !dominates_slice(p, reference) {
            return Err(Error::ReferenceNotDominated { index: i });
        }
    }
    Ok(())
}

fn box_volume(p: &[f64], reference: &[f64]) -> f64 {
    p.iter().zip(reference).map(|(a, r)| (r - a).max(0.0)).product()
}

/// Dominated hypervolume of `front` bounded by `reference`: exact
/// inclusion-exclusion for up to 12 points, a seeded 10^5-sample Monte-Carlo
/// estimate beyond that.
pub fn hypervolume(front: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
    check_reference(front, reference)?;
    if front.len() <= EXACT_HV_MAX_POINTS {
        hypervolume_inclusion_exclusion(front, reference)
    } else {
        hypervolume_monte_carlo(front, reference, MC_HV_SAMPLES, MC_HV_SEED)
    }
}

/// Exact hypervolume by inclusion-exclusion over all non-empty subsets.
pub fn hypervolume_inclusion_exclusion(front: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
    check_reference(front, reference)?;
    fn recurse(front: &[Vec<f64>], reference: &[f64], start: usize, corner: &[f64], depth: usize, acc: &mut f64) {
        for i in start..front.len() {
            let joined: Vec<f64> = corner.iter().zip(&front[i]).map(|(a, b)| a.max(*b)).collect();
            let vol = box_volume(&joined, reference);
            if vol == 0.0 {
                // Every superset of this subset has an empty intersection too.
                continue;
            }
            *acc += if depth.is_multiple_of(2) { vol } else { -vol };
            recurse(front, reference, i + 1, &joined, depth + 1, acc);
        }
    }
    let mut acc = 0.0;
    let floor = vec![f64::NEG_INFINITY; reference.len()];
    recurse(front, reference, 0, &floor, 0, &mut acc);
    Ok(acc)
}

/// Monte-Carlo hypervolume using the Karp-Luby union estimator: pick a box
/// with probability proportional to its volume, draw a point uniformly in it,
/// and weight by the reciprocal of the number of boxes that cover the point.
pub fn hypervolume_monte_carlo(front: &[Vec<f64>], reference: &[f64], samples: usize, seed: u64) -> Result<f64> {
    check_reference(front, reference)?;
    let vols: Vec<f64> = front.iter().map(|p| box_volume(p, reference)).collect();
    let total: f64 = vols.iter().sum();
    if total == 0.0 || samples == 0 {
        return Ok(0.0);
    }
    let mut rng = rng::rng_from(seed);
    let mut cumulative = Vec::with_capacity(vols.len());
    let mut run = 0.0;
    for v in &vols {
        run += v / total;
        cumulative.push(run);
    }
    let mut x = vec![0.0; reference.len()];
    let mut acc = 0.0;
    for _ in 0..samples {
        let u: f64 = rng.random();
        let b = cumulative.partition_point(|&c| c < u).min(front.len() - 1);
        for (k, xk) in x.iter_mut().enumerate() {
            let lo = front[b][k];
            *xk = lo + rng.random::<f64>() * (reference[k] - lo);
        }
        let covering = front
            .iter()
            .filter(|p| p.iter().zip(&x).all(|(a, xi)| a <= xi))
            .count()
            .max(1);
        acc += 1.0 / covering as f64;
    }
    Ok(total * acc / samples as f64)
}

fn nondominated(points: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut keep: Vec<Vec<f64>> = Vec::with_capacity(points.len());
    'outer: for p in points {
        for q in &keep {
            if q.iter().zip(&p).all(|(a, b)| a <= b) {
                continue 'outer;
            }
        }
        keep.retain(|q| !p.iter().zip(q).all(|(a, b)| a <= b));
        keep.push(p);
    }
    keep
}

/// Exact hypervolume for fronts of any size (WFG exclusive-contribution
/// recursion). Points need not be mutually non-dominated.
pub fn hypervolume_exact(front: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
    check_reference(front, reference)?;
    Ok(wfg(nondominated(front.to_vec()), reference))
}

fn wfg(mut pts: Vec<Vec<f64>>, reference: &[f64]) -> f64 {
    match pts.len() {
        0 => return 0.0,
        1 => return box_volume(&pts[0], reference),
        _ => {}
    }
    pts.sort_by(|a, b| b[0].total_cmp(&a[0]));
    let mut total = 0.0;
    for i in 0..pts.len() {
        let limited: Vec<Vec<f64>> = pts[i + 1..]
            .iter()
            .map(|q| q.iter().zip(&pts[i]).map(|(a, b)| a.max(*b)).collect())
            .collect();
        total += box_volume(&pts[i], reference) - wfg(nondominated(limited), reference);
    }
    total
}

/// Exact hypervolume gained by adding `point` to `front`.
pub fn hypervolume_improvement(front: &[Vec<f64>], point: &[f64], reference: &[f64]) -> f64 {
    let own = box_volume(point, reference);
    if own == 0.0 || front.iter().any(|q| q.iter().zip(point).all(|(a, b)| a <= b)) {
        return 0.0;
    }
    let limited: Vec<Vec<f64>> = front
        .iter()
        .map(|q| q.iter().zip(point).map(|(a, b)| a.max(*b)).collect())
        .filter(|q: &Vec<f64>| box_volume(q, reference) > 0.0)
        .collect();
    (own - wfg(nondominated(limited), reference)).max(0.0)
}
