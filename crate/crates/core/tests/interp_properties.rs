use gvf4d_core::geom::Vec3;
use gvf4d_core::interp::{adaptive_weights, farthest_point_sampling, interpolate_displacements, knn, StartRule};
use gvf4d_core::SeededRng;
use proptest::prelude::*;

fn dist(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = SeededRng::new(seed);
    (0..n).map(|_| [rng.uniform(), rng.uniform(), rng.uniform()]).collect()
}

fn points(max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 1..max)
}

fn min_pairwise(points: &[Vec3], idx: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            best = best.min(dist(points[i], points[j]));
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_equals_exhaustive_scan(refs in points(512), queries in points(64), k in 1usize..9) {
        let k = k.min(refs.len());
        let r = knn(&queries, &refs, k).unwrap();
        for (qi, q) in queries.iter().enumerate() {
            let mut order: Vec<usize> = (0..refs.len()).collect();
            order.sort_by(|&a, &b| dist(*q, refs[a]).total_cmp(&dist(*q, refs[b])).then(a.cmp(&b)));
            for j in 0..k {
                prop_assert_eq!(r.indices[qi * k + j], order[j]);
                prop_assert!((r.distances[qi * k + j] - dist(*q, refs[order[j]])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interpolation_stays_in_neighbor_hull(
        refs in points(40),
        queries in points(20),
        disp in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 40),
        k in 1usize..6,
    ) {
        let k = k.min(refs.len());
        let dp = &disp[..refs.len()];
        let out = interpolate_displacements(&queries, &refs, dp, k, 7.0).unwrap();
        let nn = knn(&queries, &refs, k).unwrap();
        for (i, o) in out.iter().enumerate() {
            for c in 0..3 {
                let vals = nn.indices[i * k..(i + 1) * k].iter().map(|&j| dp[j][c]);
                let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                prop_assert!(o[c] >= lo - 1e-12 && o[c] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn weights_are_scale_invariant(refs in points(60), queries in points(20), lambda in 0.1f64..10.0) {
        let k = 4.min(refs.len());
        let scale = |p: &[Vec3]| p.iter().map(|v| v.map(|x| x * lambda)).collect::<Vec<_>>();
        let a = adaptive_weights(&knn(&queries, &refs, k).unwrap(), 7.0);
        let b = adaptive_weights(&knn(&scale(&queries), &scale(&refs), k).unwrap(), 7.0);
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            prop_assert!(*wa > 0.0 && *wa <= 1.0);
            if a.radii.iter().all(|&r| r > 1e-6) {
                prop_assert!((wa - wb).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn fps_beats_random_subsets() {
    for seed in 0..5 {
        let pts = cloud(300, seed);
        let l = 12;
        let chosen = farthest_point_sampling(&pts, l, StartRule::First).unwrap();
        let fps_min = min_pairwise(&pts, &chosen);
        let mut rng = SeededRng::new(100 + seed);
        for _ in 0..200 {
            let mut idx: Vec<usize> = (0..pts.len()).collect();
            for i in 0..l {
                let j = i + rng.below(pts.len() - i);
                idx.swap(i, j);
            }
            assert!(fps_min >= min_pairwise(&pts, &idx[..l]));
        }
    }
}

#[test]
fn knn_on_random_clouds_matches_scan_at_full_size() {
    let refs = cloud(512, 7);
    let queries = cloud(512, 8);
    let r = knn(&queries, &refs, 8).unwrap();
    for (qi, q) in queries.iter().enumerate() {
        let mut d: Vec<(f64, usize)> = refs.iter().enumerate().map(|(j, p)| (dist(*q, *p), j)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let got = &r.indices[qi * 8..(qi + 1) * 8];
        assert_eq!(got, d[..8].iter().map(|x| x.1).collect::<Vec<_>>().as_slice());
    }
}
