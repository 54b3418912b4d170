//! Brute-force nearest neighbors over a precomputed squared-distance matrix.

/// For every point, the `k` nearest other points ordered by (distance, index).
pub(crate) fn knn(d2: &[f64], n: usize, k: usize) -> Vec<Vec<usize>> {
    debug_assert_eq!(d2.len(), n * n);
    debug_assert!(k < n);
    (0..n)
        .map(|i| {
            let row = &d2[i * n..(i + 1) * n];
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            if k < others.len() {
                others.select_nth_unstable_by(k, |&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
                others.truncate(k);
            }
            others.sort_unstable_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            others
        })
        .collect()
}
