//! Multi-objective selection: min-max normalization, Pareto dominance, the
//! streaming nondominated sweep, knee-point choice and hypervolume.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of each objective in the five-component vector.
pub const TRK: usize = 0;
pub const SFTY: usize = 1;
pub const RESP: usize = 2;
pub const SMTH: usize = 3;
pub const ENG: usize = 4;

/// Objectives that span the hypervolume: tracking, safety, smoothness.
pub const HV_AXES: [usize; 3] = [TRK, SFTY, SMTH];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedPoint {
    pub config_id: String,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub collided: bool,
    pub seeds_aggregated: usize,
    /// Sample standard deviation of each raw objective over seeds.
    pub raw_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoResult {
    pub frontier: Vec<EvaluatedPoint>,
    pub knee: Option<String>,
    pub hypervolume: f64,
    pub reference_point: Vec<f64>,
}

/// Per-component minimum and maximum over `points`.
pub fn bounds(points: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = points.first().map_or(0, |p| p.len());
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in points {
        for i in 0..d {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    (lo, hi)
}

/// Min-max scaling with given bounds; degenerate components map to 0.
pub fn normalize_with(points: &[Vec<f64>], lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let range = hi[i] - lo[i];
                    if range > 0.0 {
                        ((v - lo[i]) / range).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn normalize(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (lo, hi) = bounds(points);
    normalize_with(points, &lo, &hi)
}

/// `a` is no worse in every component and strictly better in at least one.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(a.len(), b.len()));
    }
    Ok(dominates_unchecked(a, b))
}

fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
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

/// Streaming sweep: each point is dropped if a current member dominates it,
/// otherwise it is added and the members it dominates are removed. Returns
/// indices into `points` in insertion order.
pub fn nondominated_set(points: &[Vec<f64>]) -> Vec<usize> {
    let mut front: Vec<usize> = Vec::new();
    for (k, q) in points.iter().enumerate() {
        let mut dominated = false;
        let mut i = 0;
        while i < front.len() {
            let p = &points[front[i]];
            if dominates_unchecked(p, q) {
                dominated = true;
                break;
            }
            if dominates_unchecked(q, p) {
                front.remove(i);
            } else {
                i += 1;
            }
        }
        if !dominated {
            front.push(k);
        }
    }
    front
}

/// Frontier member closest to the utopia point among collision-free ones.
/// Ties go to the lexicographically smaller vector, then the smaller id.
pub fn knee_point(frontier: &[EvaluatedPoint]) -> Result<String> {
    let norm = |p: &EvaluatedPoint| p.normalized.iter().map(|v| v * v).sum::<f64>().sqrt();
    frontier
        .iter()
        .filter(|p| !p.collided)
        .min_by(|a, b| {
            norm(a)
                .total_cmp(&norm(b))
                .then_with(|| {
                    a.normalized
                        .iter()
                        .zip(&b.normalized)
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .then_with(|| a.config_id.cmp(&b.config_id))
        })
        .map(|p| p.config_id.clone())
        .ok_or(Error::NoAdmissibleOperatingPoint)
}

fn check_reference(points: &[Vec<f64>], r: &[f64]) -> Result<()> {
    for (i, p) in points.iter().enumerate() {
        if p.len() != r.len() {
            return Err(Error::DimensionMismatch(p.len(), r.len()));
        }
        if p.iter().zip(r).any(|(x, ri)| !(x < ri)) {
            return Err(Error::ReferenceNotDominated { index: i });
        }
    }
    Ok(())
}

fn hv2(points: &[[f64; 2]], r: [f64; 2]) -> f64 {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    // Keep the staircase: strictly decreasing y as x increases.
    let mut stair: Vec<[f64; 2]> = Vec::new();
    for p in pts {
        if stair.last().is_none_or(|q| p[1] < q[1]) {
            stair.push(p);
        }
    }
    let mut area = 0.0;
    for (i, p) in stair.iter().enumerate() {
        let next_x = stair.get(i + 1).map_or(r[0], |q| q[0]);
        area += (next_x - p[0]) * (r[1] - p[1]);
    }
    area
}

fn hv3(points: &[Vec<f64>], r: &[f64]) -> f64 {
    let mut pts: Vec<&Vec<f64>> = points.iter().collect();
    pts.sort_by(|a, b| a[2].total_cmp(&b[2]));
    let mut volume = 0.0;
    let mut slice: Vec<[f64; 2]> = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        slice.push([p[0], p[1]]);
        let next_z = pts.get(i + 1).map_or(r[2], |q| q[2]);
        let depth = next_z - p[2];
        if depth > 0.0 {
            volume += hv2(&slice, [r[0], r[1]]) * depth;
        }
    }
    volume
}

/// Lebesgue measure of the union of boxes `[p, r]`. Exact for d <= 3;
/// higher dimensions fall back to Monte-Carlo with a fixed seed.
pub fn hypervolume(points: &[Vec<f64>], r: &[f64]) -> Result<f64> {
    check_reference(points, r)?;
    if points.is_empty() {
        return Ok(0.0);
    }
    Ok(match r.len() {
        1 => r[0] - points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min),
        2 => hv2(&points.iter().map(|p| [p[0], p[1]]).collect::<Vec<_>>(), [r[0], r[1]]),
        3 => hv3(points, r),
        _ => hypervolume_mc(points, r, 1_000_000, 0)?,
    })
}

/// Monte-Carlo estimate over the box spanned by the component-wise minimum
/// of the points and `r`.
pub fn hypervolume_mc(points: &[Vec<f64>], r: &[f64], samples: usize, seed: u64) -> Result<f64> {
    check_reference(points, r)?;
    if points.is_empty() || samples == 0 {
        return Ok(0.0);
    }
    let (lo, _) = bounds(points);
    let box_volume: f64 = lo.iter().zip(r).map(|(a, b)| b - a).product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; r.len()];
    let mut hits = 0usize;
    for _ in 0..samples {
        for i in 0..r.len() {
            x[i] = rng.random_range(lo[i]..r[i]);
        }
        if points.iter().any(|p| p.iter().zip(&x).all(|(a, b)| a <= b)) {
            hits += 1;
        }
    }
    Ok(box_volume * hits as f64 / samples as f64)
}

/// Drops collided points, normalizes the rest with the given bounds (or
/// their own when `None`), and extracts frontier, knee and hypervolume on
/// the tracking/safety/smoothness axes.
pub fn analyze(points: &[EvaluatedPoint], r: &[f64], bounds_override: Option<(&[f64], &[f64])>) -> Result<ParetoResult> {
    let admissible: Vec<&EvaluatedPoint> = points.iter().filter(|p| !p.collided).collect();
    if admissible.is_empty() {
        return Ok(ParetoResult { frontier: Vec::new(), knee: None, hypervolume: 0.0, reference_point: r.to_vec() });
    }
    let raw: Vec<Vec<f64>> = admissible.iter().map(|p| p.raw.clone()).collect();
    let normalized = match bounds_override {
        Some((lo, hi)) => normalize_with(&raw, lo, hi),
        None => normalize(&raw),
    };
    let evaluated: Vec<EvaluatedPoint> = admissible
        .iter()
        .zip(normalized)
        .map(|(p, n)| EvaluatedPoint { normalized: n, ..(*p).clone() })
        .collect();
    let idx = nondominated_set(&evaluated.iter().map(|p| p.normalized.clone()).collect::<Vec<_>>());
    let frontier: Vec<EvaluatedPoint> = idx.iter().map(|&i| evaluated[i].clone()).collect();
    let knee = knee_point(&frontier).ok();
    let projected: Vec<Vec<f64>> = frontier.iter().map(|p| HV_AXES.iter().map(|&a| p.normalized[a]).collect()).collect();
    let hv = hypervolume(&projected, r)?;
    Ok(ParetoResult { frontier, knee, hypervolume: hv, reference_point: r.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(points: &[Vec<f64>]) -> Vec<usize> {
        (0..points.len())
            .filter(|&i| !(0..points.len()).any(|j| j != i && dominates_unchecked(&points[j], &points[i])))
            .collect()
    }

    fn pt(id: &str, n: &[f64], collided: bool) -> EvaluatedPoint {
        EvaluatedPoint {
            config_id: id.into(),
            raw: n.to_vec(),
            normalized: n.to_vec(),
            collided,
            seeds_aggregated: 1,
            raw_std: vec![0.0; n.len()],
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[vec![3.0, 7.0]]), vec![vec![0.0, 0.0]]);
        assert_eq!(normalize(&[vec![1.0], vec![3.0]]), vec![vec![0.0], vec![1.0]]);
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[0.2, 0.3], &[0.4, 0.3]).unwrap());
        assert!(!dominates(&[0.2, 0.3], &[0.2, 0.3]).unwrap());
        assert!(!dominates(&[0.1, 0.9], &[0.9, 0.1]).unwrap());
        assert!(!dominates(&[0.9, 0.1], &[0.1, 0.9]).unwrap());
        assert!(matches!(dominates(&[0.1], &[0.1, 0.2]), Err(Error::DimensionMismatch(1, 2))));
    }

    #[test]
    fn identical_points_all_retained() {
        let pts = vec![vec![0.5, 0.5]; 4];
        assert_eq!(nondominated_set(&pts), vec![0, 1, 2, 3]);
    }

    #[test]
    fn knee_examples() {
        let f = vec![pt("a", &[0.1, 0.9], false), pt("b", &[0.5, 0.5], false), pt("c", &[0.9, 0.1], false)];
        assert_eq!(knee_point(&f).unwrap(), "b");
        assert_eq!(knee_point(&f[..1]).unwrap(), "a");
        let f = vec![pt("a", &[0.1, 0.9], false), pt("b", &[0.5, 0.5], true), pt("c", &[0.9, 0.2], false)];
        assert_eq!(knee_point(&f).unwrap(), "a");
        let f = vec![pt("a", &[0.1, 0.9], true)];
        assert!(matches!(knee_point(&f), Err(Error::NoAdmissibleOperatingPoint)));
    }

    #[test]
    fn hypervolume_examples() {
        assert_eq!(hypervolume(&[vec![0.5, 0.5]], &[1.1, 1.1]).unwrap(), (1.1 - 0.5) * (1.1 - 0.5));
        let base = vec![vec![0.2, 0.6], vec![0.6, 0.2]];
        let h = hypervolume(&base, &[1.1, 1.1]).unwrap();
        let mut more = base.clone();
        more.push(vec![0.7, 0.7]);
        assert_eq!(hypervolume(&more, &[1.1, 1.1]).unwrap(), h);
        assert!(matches!(hypervolume(&[vec![1.2, 0.0]], &[1.1, 1.1]), Err(Error::ReferenceNotDominated { index: 0 })));
    }

    #[test]
    fn hypervolume_3d_box() {
        let h = hypervolume(&[vec![0.1, 0.2, 0.3]], &[1.1, 1.1, 1.1]).unwrap();
        assert!((h - 1.0 * 0.9 * 0.8).abs() < 1e-12);
        // Two boxes overlapping: inclusion-exclusion by hand.
        let h = hypervolume(&[vec![0.1, 0.5, 0.5], vec![0.5, 0.1, 0.5]], &[1.1, 1.1, 1.1]).unwrap();
        let a = 1.0 * 0.6 * 0.6;
        let b = 0.6 * 1.0 * 0.6;
        let both = 0.6 * 0.6 * 0.6;
        assert!((h - (a + b - both)).abs() < 1e-12);
    }

    #[test]
    fn single_config_analysis() {
        let r = analyze(&[pt("only", &[1.0, 2.0, 3.0, 4.0, 5.0], false)], &[1.1, 1.1, 1.1], None).unwrap();
        assert_eq!(r.frontier.len(), 1);
        assert_eq!(r.knee.as_deref(), Some("only"));
    }

    proptest! {
        #[test]
        fn sweep_matches_brute_force(pts in prop::collection::vec(prop::collection::vec(0u8..6, 3), 0..80)) {
            let pts: Vec<Vec<f64>> = pts.into_iter().map(|p| p.into_iter().map(f64::from).collect()).collect();
            let mut got = nondominated_set(&pts);
            got.sort_unstable();
            prop_assert_eq!(got, brute_force(&pts));
        }

        #[test]
        fn frontier_is_permutation_invariant(pts in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2), 1..40), rot in 0usize..40) {
            let n = pts.len();
            let k = rot % n;
            let mut shifted = pts.clone();
            shifted.rotate_left(k);
            let mut a: Vec<Vec<u64>> = nondominated_set(&pts).into_iter().map(|i| pts[i].iter().map(|v| v.to_bits()).collect()).collect();
            let mut b: Vec<Vec<u64>> = nondominated_set(&shifted).into_iter().map(|i| shifted[i].iter().map(|v| v.to_bits()).collect()).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn knee_invariant_under_affine_rescaling(raw in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 5), 2..30),
                                                 scale in prop::collection::vec(0.1f64..10.0, 5),
                                                 shift in prop::collection::vec(-5.0f64..5.0, 5)) {
            let make = |raw: &[Vec<f64>]| -> Vec<EvaluatedPoint> {
                raw.iter().enumerate().map(|(i, r)| EvaluatedPoint {
                    config_id: format!("c{i:03}"), raw: r.clone(), normalized: vec![], collided: false, seeds_aggregated: 1, raw_std: vec![0.0; 5],
                }).collect()
            };
            let scaled: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().enumerate().map(|(i, v)| v * scale[i] + shift[i]).collect()).collect();
            let a = analyze(&make(&raw), &[1.1, 1.1, 1.1], None).unwrap();
            let b = analyze(&make(&scaled), &[1.1, 1.1, 1.1], None).unwrap();
            let ids = |r: &ParetoResult| { let mut v: Vec<_> = r.frontier.iter().map(|p| p.config_id.clone()).collect(); v.sort(); v };
            prop_assert_eq!(ids(&a), ids(&b));
            let (ka, kb) = (a.knee.clone().unwrap(), b.knee.clone().unwrap());
            if ka != kb {
                // Only a floating-point tie may separate them.
                let norm = |r: &ParetoResult, k: &str| r.frontier.iter().find(|p| p.config_id == k).unwrap().normalized.iter().map(|v| v * v).sum::<f64>();
                prop_assert!((norm(&a, &ka) - norm(&a, &kb)).abs() < 1e-9);
            }
        }

        #[test]
        fn hypervolume_monotone(pts in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..20), extra in prop::collection::vec(0.0f64..1.0, 3)) {
            let r = [1.1, 1.1, 1.1];
            let h0 = hypervolume(&pts, &r).unwrap();
            let mut more = pts.clone();
            more.push(extra);
            prop_assert!(hypervolume(&more, &r).unwrap() >= h0 - 1e-12);
        }
    }
}
