//! Full-scan structural checks for built indexes. Each returns the first
//! violation found as a message.

use std::collections::{BTreeMap, HashMap};

use crate::baseline3d::{Box3, RKind, RTree3};
use crate::model::{Dataset, Trajectory, UserId};
use crate::qr_index::{containing_quadrant, Q2rIndex, QrIndex};
use crate::spacetime::{NodeKind, QuadTree};
use crate::storage::PageStore;

pub type Check = Result<(), String>;

/// Capacity, exact tiling of children and one-leaf-per-point.
pub fn check_quadtree(tree: &QuadTree, point_count: usize) -> Check {
    let mut owner = vec![None; point_count];
    for (i, n) in tree.nodes().iter().enumerate() {
        match &n.kind {
            NodeKind::Leaf { points } => {
                if points.len() > tree.capacity && n.id.depth < tree.max_depth {
                    return Err(format!("leaf {i} holds {} > θ points above max depth", points.len()));
                }
                for &p in points {
                    let slot = owner
                        .get_mut(p as usize)
                        .ok_or_else(|| format!("leaf {i} references unknown point {p}"))?;
                    if slot.replace(i).is_some() {
                        return Err(format!("point {p} appears in two leaves"));
                    }
                }
            }
            NodeKind::Internal { children } => {
                for (q, &c) in children.iter().enumerate() {
                    let child = tree.node(c);
                    if child.region != n.region.quadrant(q) {
                        return Err(format!("child {q} of node {i} does not tile its quadrant"));
                    }
                    if child.id.depth != n.id.depth + 1 || child.id.code != (n.id.code << 2 | q as u64) {
                        return Err(format!("child {q} of node {i} has a wrong spatial id"));
                    }
                }
            }
        }
    }
    if let Some(p) = owner.iter().position(Option::is_none) {
        return Err(format!("point {p} is in no leaf"));
    }
    Ok(())
}

/// Each leaf's points must lie in its cell and be located back to it.
pub fn check_leaf_membership(tree: &QuadTree, trajs: &[Trajectory]) -> Check {
    let pts: Vec<_> = trajs.iter().flat_map(|t| t.points()).collect();
    for leaf in tree.leaves() {
        for &p in tree.node(leaf).leaf_points() {
            let p = pts[p as usize];
            let found = tree.locate_leaf(p.x, p.y).map_err(|e| e.to_string())?;
            if found != leaf {
                return Err(format!(
                    "point ({}, {}) stored in leaf {leaf} but locates to {found}",
                    p.x, p.y
                ));
            }
            if !tree.node(leaf).region.contains(p.x, p.y) {
                return Err(format!("point ({}, {}) outside its leaf cell", p.x, p.y));
            }
        }
    }
    Ok(())
}

/// Every stored sample is covered by a registry entry of its leaf for the
/// page holding its trajectory.
pub fn check_registry_completeness(idx: &QrIndex) -> Check {
    let store = idx.store();
    for page in store.page_ids() {
        for t in store.peek_page(page).map_err(|e| e.to_string())? {
            for p in t.points() {
                let leaf = idx.tree().locate_leaf(p.x, p.y).map_err(|e| e.to_string())?;
                let b = idx.bucketing().bucket_of(p.t).map_err(|e| e.to_string())?;
                let covered = idx
                    .registry(leaf)
                    .iter()
                    .any(|e| e.page_id == page && e.bucket_min <= b && b <= e.bucket_max);
                if !covered {
                    return Err(format!(
                        "user {} sample at t={} not registered at leaf {leaf}",
                        t.user, p.t
                    ));
                }
                if !idx.leaf_lookup(leaf, b).contains(&page) {
                    return Err(format!("leaf_lookup misses page {page} at leaf {leaf}, bucket {b}"));
                }
            }
        }
    }
    Ok(())
}

/// Pages decode to whole trajectories; every dataset trajectory is stored
/// exactly once and unchanged.
pub fn check_page_atomicity(stores: &[&PageStore], d: &Dataset) -> Check {
    let mut seen: HashMap<UserId, usize> = HashMap::new();
    for store in stores {
        for page in store.page_ids() {
            for t in store.peek_page(page).map_err(|e| e.to_string())? {
                let orig = d
                    .get(t.user)
                    .ok_or_else(|| format!("page {page} holds unknown user {}", t.user))?;
                if *orig != t {
                    return Err(format!("page {page} holds a fragment of user {}", t.user));
                }
                *seen.entry(t.user).or_default() += 1;
            }
        }
    }
    for t in d.trajectories() {
        match seen.get(&t.user) {
            Some(1) => {}
            Some(n) => return Err(format!("user {} stored {n} times", t.user)),
            None => return Err(format!("user {} not stored", t.user)),
        }
    }
    Ok(())
}

/// Page membership lists agree with page contents and respect capacity.
pub fn check_assignments(idx: &QrIndex) -> Check {
    let cap = idx.params().page_capacity;
    for a in idx.assignments() {
        if a.members.len() > cap || a.members.is_empty() {
            return Err(format!(
                "page {} has {} members (cap {cap})",
                a.page_id,
                a.members.len()
            ));
        }
        let stored: Vec<UserId> = idx
            .store()
            .peek_page(a.page_id)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|t| t.user)
            .collect();
        if stored != a.members {
            return Err(format!("page {} contents differ from its assignment", a.page_id));
        }
    }
    Ok(())
}

/// All QR-level checks on one index.
pub fn check_qr(idx: &QrIndex) -> Check {
    let trajs = idx.store().all_trajectories().map_err(|e| e.to_string())?;
    let points: usize = trajs.iter().map(Trajectory::len).sum();
    check_quadtree(idx.tree(), points)?;
    check_assignments(idx)?;
    check_registry_completeness(idx)?;
    // leaf point lists refer to the build order, which is page order only
    // for the points' owners; membership is re-derived by location instead
    let mut per_leaf: BTreeMap<u32, usize> = BTreeMap::new();
    for t in &trajs {
        for p in t.points() {
            let l = idx.tree().locate_leaf(p.x, p.y).map_err(|e| e.to_string())?;
            *per_leaf.entry(l).or_default() += 1;
        }
    }
    for leaf in idx.tree().leaves() {
        let n = idx.tree().node(leaf).leaf_points().len();
        if per_leaf.get(&leaf).copied().unwrap_or(0) != n {
            return Err(format!("leaf {leaf} point count disagrees with located samples"));
        }
    }
    Ok(())
}

/// Every trajectory is owned by a block that contains its extent while no
/// existing child does, and each owner's QR-tree passes [`check_qr`].
pub fn check_q2r(idx: &Q2rIndex, d: &Dataset) -> Check {
    let mut owners: HashMap<UserId, u32> = HashMap::new();
    for (nid, qr) in idx.owners() {
        check_qr(qr)?;
        let node = &idx.nodes()[nid as usize];
        for a in qr.assignments() {
            for &u in &a.members {
                if owners.insert(u, nid).is_some() {
                    return Err(format!("user {u} owned twice"));
                }
                let t = d.get(u).ok_or_else(|| format!("unknown user {u}"))?;
                let e = t.extent();
                if !(node.region.contains(e.0, e.1) && node.region.contains(e.2, e.3)) {
                    return Err(format!("node {nid} does not contain user {u}"));
                }
                if node.children.is_some() && containing_quadrant(&node.region, e).is_some() {
                    return Err(format!("user {u} fits a child of its owner {nid}"));
                }
            }
        }
    }
    for t in d.trajectories() {
        let want = minimal_container(idx, t);
        match owners.get(&t.user) {
            Some(&o) if o == want => {}
            other => {
                return Err(format!(
                    "user {} owned by {other:?}, minimal container is {want}",
                    t.user
                ))
            }
        }
    }
    let stores: Vec<&PageStore> = idx.owners().map(|(_, q)| q.store()).collect();
    check_page_atomicity(&stores, d)
}

/// Brute-force minimal containment: test every node's closed region and
/// keep the deepest one that holds the whole extent and is reachable
/// through containing ancestors.
pub fn minimal_container(idx: &Q2rIndex, t: &Trajectory) -> u32 {
    let e = t.extent();
    let mut best = 0u32;
    for (i, n) in idx.nodes().iter().enumerate() {
        let inside = n.region.contains(e.0, e.1) && n.region.contains(e.2, e.3);
        if inside && n.id.depth > idx.nodes()[best as usize].id.depth && cell_holds(idx, i as u32, e) {
            best = i as u32;
        }
    }
    best
}

/// Half-open membership: both corners descend to this node from the root.
fn cell_holds(idx: &Q2rIndex, target: u32, e: (f64, f64, f64, f64)) -> bool {
    let walk = |x: f64, y: f64| {
        let mut path = vec![0u32];
        let mut cur = 0u32;
        while let Some(ch) = idx.nodes()[cur as usize].children {
            cur = ch[idx.nodes()[cur as usize].region.quadrant_of(x, y)];
            path.push(cur);
        }
        path
    };
    walk(e.0, e.1).contains(&target) && walk(e.2, e.3).contains(&target)
}

/// Parent boxes contain child boxes; leaf boxes contain their trajectories.
pub fn check_rtree(tree: &RTree3, d: &Dataset) -> Check {
    for (i, n) in tree.nodes().iter().enumerate() {
        match &n.kind {
            RKind::Internal { children } => {
                if children.len() > tree.fanout() {
                    return Err(format!("node {i} exceeds fan-out"));
                }
                for &c in children {
                    if !n.bbox.contains(&tree.nodes()[c as usize].bbox) {
                        return Err(format!("node {i} does not contain child {c}"));
                    }
                }
            }
            RKind::Leaf { page } => {
                let members = tree.store().peek_page(*page).map_err(|e| e.to_string())?;
                if members.len() > tree.page_capacity() {
                    return Err(format!("leaf page {page} over capacity"));
                }
                for t in &members {
                    if !n.bbox.contains(&Box3::of_trajectory(t)) {
                        return Err(format!("leaf {i} box misses user {}", t.user));
                    }
                }
            }
        }
    }
    check_page_atomicity(&[tree.store()], d)
}
