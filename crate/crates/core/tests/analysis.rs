use gvcnet::analysis::*;
use gvcnet::numerics::unit_grid;
use gvcnet::pipeline::AdrfCurve;
use proptest::prelude::*;

fn inertia_of(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dim = points[0].len();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
        if members.is_empty() {
            return f64::INFINITY;
        }
        let centre: Vec<f64> = (0..dim).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64).collect();
        total += members.iter().map(|p| p.iter().zip(&centre).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum::<f64>();
    }
    total
}

/// Exhaustive minimum over all labelings into exactly `k` non-empty groups.
fn brute_force(points: &[Vec<f64>], k: usize) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut best = (Vec::new(), f64::INFINITY);
    for code in 0..k.pow(n as u32) {
        let labels: Vec<usize> = (0..n).map(|i| code / k.pow(i as u32) % k).collect();
        let v = inertia_of(points, &labels, k);
        if v < best.1 {
            best = (labels, v);
        }
    }
    best
}

/// Relabels clusters by order of first appearance.
fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

fn banded(offsets: &[f64], noise: &[f64]) -> Vec<Vec<f64>> {
    offsets
        .iter()
        .enumerate()
        .map(|(i, o)| (0..5).map(|j| o + noise[i * 5 + j]).collect())
        .collect()
}

fn curves_from(points: &[Vec<f64>]) -> Vec<AdrfCurve> {
    let grid = unit_grid(points[0].len());
    points
        .iter()
        .enumerate()
        .map(|(i, p)| AdrfCurve { roi: format!("c{i}"), grid: grid.clone(), response: p.clone(), accuracy: 0.5 + 0.01 * i as f64 })
        .collect()
}

#[test]
fn six_curves_in_three_bands_match_brute_force() {
    let noise: Vec<f64> = (0..30).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.004).collect();
    let points = banded(&[0.1, 0.12, 0.5, 0.52, 0.9, 0.88], &noise);
    let km = kmeans(&points, 3, 0, 10).unwrap();
    let (labels, best) = brute_force(&points, 3);
    assert_eq!(canonical(&km.assignments), canonical(&labels));
    assert!((km.inertia - best).abs() < 1e-12);
}

#[test]
fn designed_trends_are_named() {
    let grid = unit_grid(9);
    let mut curves = Vec::new();
    for (i, slope) in [0.3, -0.3, 0.0, 0.25, -0.28, 0.004].iter().enumerate() {
        curves.push(AdrfCurve {
            roi: format!("r{i}"),
            grid: grid.clone(),
            response: grid.iter().map(|t| 0.5 + slope * (t - 0.5)).collect(),
            accuracy: 0.8,
        });
    }
    let km = kmeans_curves(&curves, 3, 1, 10).unwrap();
    let report = cluster_report(&curves, &km, DEFAULT_EPSILON).unwrap();
    let expect = [Trend::Up, Trend::Down, Trend::Unbiased, Trend::Up, Trend::Down, Trend::Unbiased];
    for (i, t) in expect.iter().enumerate() {
        assert_eq!(report.trend_of(&format!("r{i}")), Some(*t));
    }
    let mut labels: Vec<Trend> = report.cluster_labels().into_values().collect();
    labels.sort();
    assert_eq!(labels, Trend::ALL.to_vec());
    for c in &report.clusters {
        assert_eq!(c.members, 2);
        assert_eq!(c.accuracy_mean, 0.8);
    }
}

#[test]
fn report_csvs() {
    let points = vec![vec![0.0, 0.5], vec![0.5, 0.0], vec![0.2, 0.2]];
    let curves = curves_from(&points);
    let km = kmeans_curves(&curves, 3, 0, 1).unwrap();
    let report = cluster_report(&curves, &km, DEFAULT_EPSILON).unwrap();
    let mut a = Vec::new();
    write_assignments_csv(&report, &mut a).unwrap();
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("roi,cluster,trend,accuracy\n"));
    assert_eq!(text.lines().count(), 4);
    let mut c = Vec::new();
    write_centroids_csv(&report, &mut c).unwrap();
    let text = String::from_utf8(c).unwrap();
    assert!(text.starts_with("cluster,trend,t,response\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 2);
}

#[test]
fn mismatched_grids_are_rejected() {
    let mut curves = curves_from(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
    curves[1].grid = vec![0.0, 0.5];
    assert!(kmeans_curves(&curves, 2, 0, 1).is_err());
}

fn point_sets() -> impl Strategy<Value = Vec<Vec<f64>>> {
    dims(1)
}

/// Curves need two grid points for a slope.
fn curve_sets() -> impl Strategy<Value = Vec<Vec<f64>>> {
    dims(2)
}

fn dims(min_dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (3usize..12, min_dim..5).prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), n))
}

proptest! {
    #[test]
    fn lloyd_never_increases_inertia(points in point_sets(), seed in any::<u64>()) {
        let km = kmeans(&points, 3, seed, 1).unwrap();
        for w in km.history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        }
        prop_assert!(km.inertia <= km.history[0] * (1.0 + 1e-12) + 1e-15);
        prop_assert!(km.iterations <= MAX_ITERATIONS);
        let labels: std::collections::BTreeSet<usize> = km.assignments.iter().cloned().collect();
        prop_assert_eq!(labels.len(), 3);
    }

    #[test]
    fn restarts_only_help(points in point_sets(), seed in any::<u64>()) {
        let one = kmeans(&points, 3, seed, 1).unwrap();
        let many = kmeans(&points, 3, seed, 8).unwrap();
        prop_assert!(many.inertia <= one.inertia);
    }

    #[test]
    fn power_of_two_scaling_preserves_the_partition(points in point_sets(), seed in any::<u64>(), e in -3i32..4) {
        let s = 2f64.powi(e);
        let scaled: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|v| v * s).collect()).collect();
        let a = kmeans(&points, 3, seed, 3).unwrap();
        let b = kmeans(&scaled, 3, seed, 3).unwrap();
        prop_assert_eq!(a.assignments, b.assignments);
        prop_assert_eq!(b.inertia, a.inertia * s * s);
    }

    #[test]
    fn translation_preserves_well_separated_partitions(
        noise in prop::collection::vec(-0.02f64..0.02, 30),
        shift in -5.0f64..5.0,
        seed in any::<u64>(),
    ) {
        let points = banded(&[0.0, 0.03, 1.0, 1.02, 2.0, 1.97], &noise);
        let moved: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|v| v + shift).collect()).collect();
        let a = kmeans(&points, 3, seed, 5).unwrap();
        let b = kmeans(&moved, 3, seed, 5).unwrap();
        prop_assert_eq!(canonical(&a.assignments), canonical(&b.assignments));
        prop_assert!((a.inertia - b.inertia).abs() < 1e-9);
        let (labels, _) = brute_force(&points, 3);
        prop_assert_eq!(canonical(&a.assignments), canonical(&labels));
    }

    #[test]
    fn flipping_curves_swaps_up_and_down(points in curve_sets(), seed in any::<u64>()) {
        let flipped: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|v| -v).collect()).collect();
        let a_curves = curves_from(&points);
        let b_curves = curves_from(&flipped);
        let a = kmeans_curves(&a_curves, 3, seed, 3).unwrap();
        let b = kmeans_curves(&b_curves, 3, seed, 3).unwrap();
        prop_assert_eq!(&a.assignments, &b.assignments);
        let ra = cluster_report(&a_curves, &a, DEFAULT_EPSILON).unwrap();
        let rb = cluster_report(&b_curves, &b, DEFAULT_EPSILON).unwrap();
        let swap = |t: Trend| match t {
            Trend::Up => Trend::Down,
            Trend::Down => Trend::Up,
            Trend::Unbiased => Trend::Unbiased,
        };
        for (x, y) in ra.assignments.iter().zip(&rb.assignments) {
            prop_assert_eq!(swap(x.own_trend), y.own_trend);
        }
        for (x, y) in ra.clusters.iter().zip(&rb.clusters) {
            prop_assert_eq!(x.centroid_slope, -y.centroid_slope);
        }
    }

    #[test]
    fn slope_sign_follows_data(a in -2.0f64..2.0, b in -2.0f64..2.0, n in 2usize..40) {
        let grid = unit_grid(n);
        let y: Vec<f64> = grid.iter().map(|t| a + b * t).collect();
        let s = ols_slope(&grid, &y).unwrap();
        prop_assert!((s - b).abs() < 1e-9);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        prop_assert_eq!(ols_slope(&grid, &neg).unwrap(), -s);
        let expect = if b > DEFAULT_EPSILON + 1e-9 { Some(Trend::Up) }
            else if b < -DEFAULT_EPSILON - 1e-9 { Some(Trend::Down) }
            else if b.abs() < DEFAULT_EPSILON - 1e-9 { Some(Trend::Unbiased) }
            else { None };
        if let Some(t) = expect {
            prop_assert_eq!(trend_of_slope(s, DEFAULT_EPSILON), t);
        }
    }

    #[test]
    fn every_roi_is_assigned_once(points in curve_sets(), seed in any::<u64>()) {
        let curves = curves_from(&points);
        let km = kmeans_curves(&curves, 3, seed, 2).unwrap();
        let report = cluster_report(&curves, &km, DEFAULT_EPSILON).unwrap();
        prop_assert_eq!(report.assignments.len(), curves.len());
        prop_assert_eq!(report.clusters.iter().map(|c| c.members).sum::<usize>(), curves.len());
        let present: std::collections::BTreeSet<Trend> = report.assignments.iter().map(|a| a.own_trend).collect();
        if present.len() == 3 {
            let names: std::collections::BTreeSet<Trend> = report.clusters.iter().map(|c| c.trend).collect();
            prop_assert_eq!(names.len(), 3);
        }
    }
}
