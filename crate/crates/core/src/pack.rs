//! Sort-Tile-Recursive grouping, shared by the QR-tree page grouping (2D,
//! transformed space) and the 3D baseline R-tree.

use std::cmp::Ordering;

/// Smallest `s` with `s^k >= p`.
fn ceil_root(p: usize, k: u32) -> usize {
    let mut s = (p as f64).powf(1.0 / k as f64).floor().max(1.0) as usize;
    while s.saturating_pow(k) < p {
        s += 1;
    }
    s
}

/// Groups item indices `0..n` into runs of at most `cap`, tiling one
/// dimension at a time. `cmp(a, b, dim)` orders items `a` and `b` by their
/// center along `dim`; ties fall back to the index so the result is
/// deterministic. Produces exactly `ceil(n / cap)` groups.
pub fn str_groups<F>(n: usize, dims: usize, cap: usize, cmp: F) -> Vec<Vec<usize>>
where
    F: Fn(usize, usize, usize) -> Ordering,
{
    assert!(cap >= 1 && dims >= 1);
    let mut items: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n.div_ceil(cap));
    tile(&mut items, 0, dims, cap, &cmp, &mut out);
    out
}

fn tile<F>(items: &mut [usize], dim: usize, dims: usize, cap: usize, cmp: &F, out: &mut Vec<Vec<usize>>)
where
    F: Fn(usize, usize, usize) -> Ordering,
{
    if items.is_empty() {
        return;
    }
    items.sort_by(|&a, &b| cmp(a, b, dim).then(a.cmp(&b)));
    let remaining = dims - dim;
    if remaining == 1 || items.len() <= cap {
        out.extend(items.chunks(cap).map(<[usize]>::to_vec));
        return;
    }
    let pages = items.len().div_ceil(cap);
    let slabs = ceil_root(pages, remaining as u32);
    let slab_len = pages.div_ceil(slabs) * cap;
    for slab in items.chunks_mut(slab_len) {
        tile(slab, dim + 1, dims, cap, cmp, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn roots() {
        assert_eq!(ceil_root(1, 2), 1);
        assert_eq!(ceil_root(2, 2), 2);
        assert_eq!(ceil_root(9, 2), 3);
        assert_eq!(ceil_root(10, 2), 4);
        assert_eq!(ceil_root(27, 3), 3);
        assert_eq!(ceil_root(28, 3), 4);
    }

    #[test]
    fn separates_clusters() {
        let pts: [(f64, f64); 4] = [(0.0, 0.0), (10.0, 10.0), (0.5, 0.2), (10.2, 9.9)];
        let g = str_groups(4, 2, 2, |a, b, d| {
            let (pa, pb) = (pts[a], pts[b]);
            if d == 0 {
                pa.0.total_cmp(&pb.0)
            } else {
                pa.1.total_cmp(&pb.1)
            }
        });
        let mut g: Vec<Vec<usize>> = g
            .into_iter()
            .map(|mut x| {
                x.sort();
                x
            })
            .collect();
        g.sort();
        assert_eq!(g, vec![vec![0, 2], vec![1, 3]]);
    }

    proptest! {
        #[test]
        fn partition_with_exact_group_count(keys in prop::collection::vec((0u32..50, 0u32..50, 0u32..50), 0..300), cap in 1usize..9, dims in 1usize..4) {
            let g = str_groups(keys.len(), dims, cap, |a, b, d| {
                let k = |i: usize| [keys[i].0, keys[i].1, keys[i].2][d];
                k(a).cmp(&k(b))
            });
            prop_assert_eq!(g.len(), keys.len().div_ceil(cap));
            let mut all: Vec<usize> = g.iter().flatten().copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..keys.len()).collect::<Vec<_>>());
            prop_assert!(g.iter().all(|x| !x.is_empty() && x.len() <= cap));
        }
    }
}
