//! A small hand-built scene: four users on an 8×8 region, θ = 2, pages of
//! two. The quadtree splits only the lower-right quadrant, which gives seven
//! leaves b1..b7 in z-order with that quadrant's top-right child as b5.

use std::collections::BTreeSet;

use ctq::model::{Dataset, QueryParams, TrajPoint, Trajectory, UserId};
use ctq::qr_index::{Q2rIndex, QrIndex, QrParams};
use ctq::query::trace;
use ctq::spacetime::{Region, SpaceTimeKey};
use ctq::storage::PageId;
use ctq::validate;

const W: u64 = 3600;

/// Time inside bucket t_j (1-based). The first bucket's sample sets the
/// epoch at 0; the rest sit mid-bucket.
fn at(j: u64) -> u64 {
    if j == 1 {
        0
    } else {
        (j - 1) * W + W / 2
    }
}

fn traj(user: u64, pts: &[(f64, f64, u64)]) -> Trajectory {
    Trajectory::new(
        UserId(user),
        pts.iter().map(|&(x, y, j)| TrajPoint::new(x, y, at(j))).collect(),
    )
    .unwrap()
}

fn scene() -> (Dataset, QrIndex) {
    let u1 = traj(1, &[(1.0, 1.0, 1), (4.5, 0.5, 2), (4.5, 2.5, 4)]);
    let u2 = traj(2, &[(1.5, 1.5, 2), (5.0, 1.0, 3)]);
    let u3 = traj(3, &[(6.5, 2.5, 5), (1.0, 5.0, 6)]);
    let u4 = traj(4, &[(5.0, 5.5, 7), (7.0, 3.5, 8)]);
    let d = Dataset::new(vec![u1, u2, u3, u4], 1).unwrap();
    let params = QrParams {
        theta: 2,
        page_capacity: 2,
        bucket_width: W,
        ..QrParams::default()
    };
    let idx = QrIndex::build_in(&d, params, Region::new(0.0, 0.0, 8.0, 8.0).unwrap()).unwrap();
    (d, idx)
}

#[test]
fn seven_leaves_in_z_order() {
    let (_, idx) = scene();
    let b = idx.tree().leaves_z_ordered();
    assert_eq!(b.len(), 7);
    let cell = |i: usize| idx.tree().node(b[i]).region;
    assert_eq!(cell(0), Region::new(0.0, 0.0, 4.0, 4.0).unwrap());
    assert_eq!(cell(1), Region::new(4.0, 0.0, 6.0, 2.0).unwrap());
    assert_eq!(cell(2), Region::new(6.0, 0.0, 8.0, 2.0).unwrap());
    assert_eq!(cell(3), Region::new(4.0, 2.0, 6.0, 4.0).unwrap());
    assert_eq!(cell(4), Region::new(6.0, 2.0, 8.0, 4.0).unwrap());
    assert_eq!(cell(5), Region::new(0.0, 4.0, 4.0, 8.0).unwrap());
    assert_eq!(cell(6), Region::new(4.0, 4.0, 8.0, 8.0).unwrap());
    validate::check_qr(&idx).unwrap();
}

#[test]
fn trajectories_map_to_leaf_bucket_pairs() {
    let (d, idx) = scene();
    let b = idx.tree().leaves_z_ordered();
    let key = |leaf: usize, j: u64| SpaceTimeKey {
        spatial_id: idx.tree().node(b[leaf - 1]).id,
        temporal_id: j - 1,
    };
    let keys = |u: u64| {
        idx.tree()
            .transform(&idx.bucketing(), d.get(UserId(u)).unwrap())
            .unwrap()
    };
    assert_eq!(keys(1), BTreeSet::from([key(1, 1), key(2, 2), key(4, 4)]));
    assert_eq!(keys(2), BTreeSet::from([key(1, 2), key(2, 3)]));
    assert_eq!(keys(3), BTreeSet::from([key(5, 5), key(6, 6)]));
    assert_eq!(keys(4), BTreeSet::from([key(5, 8), key(7, 7)]));
}

#[test]
fn separated_clusters_form_two_pages() {
    let (_, idx) = scene();
    let pages: Vec<Vec<UserId>> = idx
        .assignments()
        .iter()
        .map(|a| {
            let mut m = a.members.clone();
            m.sort();
            m
        })
        .collect();
    assert_eq!(pages, vec![vec![UserId(1), UserId(2)], vec![UserId(3), UserId(4)]]);
}

#[test]
fn b5_registers_r2_from_t5_to_t8() {
    let (_, idx) = scene();
    let b5 = idx.tree().leaves_z_ordered()[4];
    let r2 = PageId(1);
    let reg = idx.registry(b5);
    assert_eq!(reg.len(), 1);
    assert_eq!((reg[0].page_id, reg[0].bucket_min, reg[0].bucket_max), (r2, 4, 7));
    // t6 has no sample in b5, yet the stored range still answers it
    assert_eq!(idx.leaf_lookup(b5, 5), vec![r2]);
    assert_eq!(idx.leaf_lookup(b5, 3), Vec::<PageId>::new());
    assert!(idx.leaf_lookup(idx.tree().leaves_z_ordered()[2], 0).is_empty());
}

#[test]
fn query_through_the_scene() {
    let (_, idx) = scene();
    // meets u3 in b5 at t5, then u4 passes the same spot at t8
    let q = traj(9, &[(6.6, 2.5, 5)]);
    let p = QueryParams::new(1.0, 600, 1).unwrap();
    let r = trace(&idx, &q, &p).unwrap();
    assert_eq!(r.records.len(), 1);
    assert_eq!(r.records[0].user, UserId(3));
    assert_eq!(r.stats.unique_page_reads, 1);
    let r2 = trace(&idx, &q, &QueryParams::new(1.0, 600, 2).unwrap()).unwrap();
    assert_eq!(r2.records.len(), 1, "u4 is at b5 only at t8, far from u3's t5 sample");
}

#[test]
fn q2r_routing_takes_siblings_and_owning_ancestors() {
    let span = Trajectory::new(
        UserId(1),
        vec![TrajPoint::new(0.0, 0.0, 0), TrajPoint::new(100.0, 100.0, 50)],
    )
    .unwrap();
    let small = |u: u64, x: f64, y: f64| {
        Trajectory::new(
            UserId(u),
            vec![TrajPoint::new(x, y, 10), TrajPoint::new(x + 2.0, y + 2.0, 20)],
        )
        .unwrap()
    };
    let d = Dataset::new(
        vec![
            span,
            small(2, 10.0, 10.0),
            small(3, 88.0, 10.0),
            small(4, 10.0, 88.0),
            small(5, 88.0, 88.0),
        ],
        1,
    )
    .unwrap();
    let idx = Q2rIndex::build(&d, 1, QrParams::default()).unwrap();
    validate::check_q2r(&idx, &d).unwrap();
    let root_children = idx.nodes()[0].children.expect("root splits");
    let q = Trajectory::new(
        UserId(9),
        vec![TrajPoint::new(20.0, 20.0, 15), TrajPoint::new(80.0, 20.0, 16)],
    )
    .unwrap();
    let tags: BTreeSet<u32> = idx.route(&q, 2.0).iter().map(|x| x.store().tag()).collect();
    assert_eq!(tags, BTreeSet::from([0, root_children[0], root_children[1]]));

    let far = Trajectory::new(UserId(9), vec![TrajPoint::new(1e6, 1e6, 15)]).unwrap();
    assert!(idx.route(&far, 2.0).is_empty());
    let centre = Trajectory::new(UserId(9), vec![TrajPoint::new(30.0, 30.0, 15)]).unwrap();
    let tags: BTreeSet<u32> = idx.route(&centre, 2.0).iter().map(|x| x.store().tag()).collect();
    assert_eq!(tags, BTreeSet::from([0, root_children[0]]));
}
