use cbfl::clustering::{assign, fit_kmeans, fit_kmeans_detailed};
use ndarray::{array, Array2};
use proptest::prelude::*;

#[test]
fn separated_blobs_are_recovered_exactly() {
    let points = array![[0.0, 0.0], [0.0, 2.0], [100.0, 100.0], [102.0, 100.0]];
    for seed in 0..20 {
        let m = fit_kmeans(&points, 2, seed).unwrap();
        let mut centroids: Vec<[f64; 2]> = m.centroids.outer_iter().map(|c| [c[0], c[1]]).collect();
        centroids.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(centroids, vec![[0.0, 1.0], [101.0, 100.0]]);
        assert_eq!(m.inertia, 4.0);
        assert_eq!(assign(&m, points.row(0)).unwrap(), assign(&m, points.row(1)).unwrap());
    }
}

#[test]
fn one_cluster_per_point_has_zero_inertia() {
    let points = Array2::from_shape_fn((12, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 + i as f64 * 0.5);
    let m = fit_kmeans(&points, 12, 4).unwrap();
    assert_eq!(m.inertia, 0.0);
}

fn cloud() -> impl Strategy<Value = (Array2<f64>, usize, u64)> {
    (2usize..40, 1usize..6).prop_flat_map(|(n, dim)| {
        (
            prop::collection::vec(-10.0f64..10.0, n * dim).prop_map(move |v| Array2::from_shape_vec((n, dim), v).unwrap()),
            1..=n,
            any::<u64>(),
        )
    })
}

proptest! {
    #[test]
    fn lloyd_inertia_never_increases((points, k, seed) in cloud()) {
        let fit = fit_kmeans_detailed(&points, k, seed).unwrap();
        for w in fit.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{:?}", fit.inertia_history);
        }
        prop_assert_eq!(fit.labels.len(), points.nrows());
    }
}
