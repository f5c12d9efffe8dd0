//! Discrete location classes: one per qualifying city, or one per k-d tree
//! leaf over the users' ground-truth points.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{BoundingBox, GeoPoint};
use crate::ingest::GroundTruth;

pub const DEFAULT_MIN_USERS: usize = 100;
pub const DEFAULT_MIN_BUCKET: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    City,
    Kdtree,
}

impl LabelMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LabelMode::City => "city",
            LabelMode::Kdtree => "kdtree",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelClass {
    pub label_id: usize,
    pub rep: GeoPoint,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSpace {
    pub mode: LabelMode,
    pub classes: Vec<LabelClass>,
    /// user id → label id, sorted by user id.
    pub assignment: BTreeMap<String, usize>,
    /// Users with a ground truth that did not get a label.
    pub excluded: usize,
}

impl LabelSpace {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn label_of(&self, user_id: &str) -> Option<usize> {
        self.assignment.get(user_id).copied()
    }

    pub fn rep(&self, label: usize) -> GeoPoint {
        self.classes[label].rep
    }

    /// CSV `label_id,mode,rep_lat,rep_lon,count`.
    pub fn write_classes_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "label_id,mode,rep_lat,rep_lon,count")?;
        for c in &self.classes {
            writeln!(
                w,
                "{},{},{},{},{}",
                c.label_id,
                self.mode.as_str(),
                c.rep.lat,
                c.rep.lon,
                c.count
            )?;
        }
        Ok(())
    }

    /// CSV `user_id,label_id`.
    pub fn write_assignment_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "user_id,label_id")?;
        for (u, l) in &self.assignment {
            writeln!(w, "{u},{l}")?;
        }
        Ok(())
    }

    pub fn read_csv<R1: BufRead, R2: BufRead>(classes: R1, assignment: R2) -> Result<Self> {
        let rows = data_rows(classes)?;
        let mut mode = None;
        let mut out = Vec::new();
        for (k, row) in rows.iter().enumerate() {
            let f: Vec<&str> = row.split(',').collect();
            let bad = || Error::Parse(format!("label class row `{row}`"));
            if f.len() != 5 {
                return Err(bad());
            }
            let m = match f[1] {
                "city" => LabelMode::City,
                "kdtree" => LabelMode::Kdtree,
                _ => return Err(bad()),
            };
            if *mode.get_or_insert(m) != m {
                return Err(Error::Parse("mixed label modes".into()));
            }
            let label_id: usize = f[0].parse().map_err(|_| bad())?;
            if label_id != k {
                return Err(Error::Parse(format!("label ids not contiguous at {label_id}")));
            }
            out.push(LabelClass {
                label_id,
                rep: GeoPoint::new(
                    f[2].parse().map_err(|_| bad())?,
                    f[3].parse().map_err(|_| bad())?,
                )?,
                count: f[4].parse().map_err(|_| bad())?,
            });
        }
        let mut map = BTreeMap::new();
        for row in data_rows(assignment)? {
            let (u, l) = row
                .rsplit_once(',')
                .ok_or_else(|| Error::Parse(format!("assignment row `{row}`")))?;
            let l: usize = l
                .parse()
                .map_err(|_| Error::Parse(format!("assignment row `{row}`")))?;
            if l >= out.len() {
                return Err(Error::Parse(format!("assignment to unknown label {l}")));
            }
            map.insert(u.to_string(), l);
        }
        Ok(LabelSpace {
            mode: mode.ok_or_else(|| Error::Parse("no label classes".into()))?,
            classes: out,
            assignment: map,
            excluded: 0,
        })
    }
}

/// Lines after the header, skipping `#` comments.
fn data_rows<R: BufRead>(r: R) -> Result<Vec<String>> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for line in r.lines() {
        let line = line.map_err(|e| Error::io("<csv>", e))?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        rows.push(line);
    }
    Ok(rows)
}

/// One class per city with at least `min_users` users, ordered by geoname
/// id. Users of smaller cities are left unlabeled and counted.
pub fn build_city_labels(truths: &[GroundTruth], min_users: usize) -> Result<LabelSpace> {
    let mut by_city: BTreeMap<u64, Vec<&GroundTruth>> = BTreeMap::new();
    for t in truths {
        by_city.entry(t.city).or_default().push(t);
    }
    let mut classes = Vec::new();
    let mut assignment = BTreeMap::new();
    let mut excluded = 0;
    for members in by_city.values() {
        if members.len() < min_users {
            excluded += members.len();
            continue;
        }
        let label_id = classes.len();
        classes.push(LabelClass {
            label_id,
            rep: members[0].point,
            count: members.len(),
        });
        for t in members {
            assignment.insert(t.user_id.clone(), label_id);
        }
    }
    if classes.is_empty() {
        return Err(Error::Labels(format!(
            "no city has at least {min_users} users ({} users over {} cities)",
            truths.len(),
            by_city.len()
        )));
    }
    if excluded > 0 {
        log::info!("city labels: {excluded} users in cities below {min_users} users left unlabeled");
    }
    Ok(LabelSpace {
        mode: LabelMode::City,
        classes,
        assignment,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitDim {
    Lat,
    Lon,
}

impl SplitDim {
    fn of(&self, p: &GeoPoint) -> f64 {
        match self {
            SplitDim::Lat => p.lat,
            SplitDim::Lon => p.lon,
        }
    }

    fn other(&self) -> Self {
        match self {
            SplitDim::Lat => SplitDim::Lon,
            SplitDim::Lon => SplitDim::Lat,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KdNode {
    Split {
        dim: SplitDim,
        /// Points with coordinate ≤ value go left.
        value: f64,
        left: usize,
        right: usize,
        bbox: BoundingBox,
    },
    Leaf {
        leaf_id: usize,
        bbox: BoundingBox,
        /// Indices into the input point list.
        members: Vec<usize>,
    },
}

/// Median-split k-d tree over lat/lon treated as planar coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct KdTree {
    nodes: Vec<KdNode>,
    n_leaves: usize,
}

impl KdTree {
    pub fn nodes(&self) -> &[KdNode] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn root_bbox(&self) -> BoundingBox {
        match &self.nodes[0] {
            KdNode::Split { bbox, .. } | KdNode::Leaf { bbox, .. } => *bbox,
        }
    }

    /// `(leaf_id, bbox, members)` in leaf-id order.
    pub fn leaves(&self) -> Vec<(usize, BoundingBox, &[usize])> {
        let mut out: Vec<_> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                KdNode::Leaf {
                    leaf_id,
                    bbox,
                    members,
                } => Some((*leaf_id, *bbox, members.as_slice())),
                _ => None,
            })
            .collect();
        out.sort_by_key(|l| l.0);
        out
    }

    /// Leaf whose region contains `p` (points outside the root box fall
    /// into the nearest region along each split).
    pub fn locate(&self, p: &GeoPoint) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                KdNode::Split {
                    dim,
                    value,
                    left,
                    right,
                    ..
                } => at = if dim.of(p) <= *value { *left } else { *right },
                KdNode::Leaf { leaf_id, .. } => return *leaf_id,
            }
        }
    }
}

/// Recursive lower-median split on the wider coordinate (falling back to the
/// other one), stopping when either child would get fewer than `min_bucket`
/// points.
pub fn build_kdtree(points: &[GeoPoint], min_bucket: usize) -> Result<KdTree> {
    if points.is_empty() {
        return Err(Error::Labels("k-d tree needs at least one point".into()));
    }
    if min_bucket == 0 {
        return Err(Error::Labels("min_bucket must be at least 1".into()));
    }
    let mut tree = KdTree {
        nodes: Vec::new(),
        n_leaves: 0,
    };
    let bbox = BoundingBox::from_points(points).expect("nonempty");
    grow(&mut tree, points, (0..points.len()).collect(), bbox, min_bucket);
    Ok(tree)
}

fn try_split(points: &[GeoPoint], members: &[usize], dim: SplitDim, min_bucket: usize) -> Option<(f64, Vec<usize>, Vec<usize>)> {
    let mut sorted = members.to_vec();
    sorted.sort_by(|&a, &b| {
        dim.of(&points[a])
            .total_cmp(&dim.of(&points[b]))
            .then(dim.other().of(&points[a]).total_cmp(&dim.other().of(&points[b])))
            .then(a.cmp(&b))
    });
    let value = dim.of(&points[sorted[(sorted.len() - 1) / 2]]);
    let (left, right): (Vec<usize>, Vec<usize>) = sorted.into_iter().partition(|&i| dim.of(&points[i]) <= value);
    (left.len() >= min_bucket && right.len() >= min_bucket).then_some((value, left, right))
}

fn grow(tree: &mut KdTree, points: &[GeoPoint], members: Vec<usize>, bbox: BoundingBox, min_bucket: usize) -> usize {
    let at = tree.nodes.len();
    let split = if members.len() >= 2 * min_bucket {
        let lat_extent = bbox.max_lat - bbox.min_lat;
        let lon_extent = bbox.max_lon - bbox.min_lon;
        let wider = if lon_extent > lat_extent { SplitDim::Lon } else { SplitDim::Lat };
        try_split(points, &members, wider, min_bucket)
            .map(|s| (wider, s))
            .or_else(|| try_split(points, &members, wider.other(), min_bucket).map(|s| (wider.other(), s)))
    } else {
        None
    };
    let Some((dim, (value, left, right))) = split else {
        let leaf_id = tree.n_leaves;
        tree.n_leaves += 1;
        tree.nodes.push(KdNode::Leaf {
            leaf_id,
            bbox,
            members,
        });
        return at;
    };
    // placeholder, patched once children exist
    tree.nodes.push(KdNode::Leaf {
        leaf_id: usize::MAX,
        bbox,
        members: Vec::new(),
    });
    let (mut lbox, mut rbox) = (bbox, bbox);
    match dim {
        SplitDim::Lat => {
            lbox.max_lat = value;
            rbox.min_lat = value;
        }
        SplitDim::Lon => {
            lbox.max_lon = value;
            rbox.min_lon = value;
        }
    }
    let l = grow(tree, points, left, lbox, min_bucket);
    let r = grow(tree, points, right, rbox, min_bucket);
    tree.nodes[at] = KdNode::Split {
        dim,
        value,
        left: l,
        right: r,
        bbox,
    };
    at
}

fn lower_median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[(values.len() - 1) / 2]
}

/// Componentwise (lower) median of the members.
pub fn representative_point(members: &[GeoPoint]) -> Result<GeoPoint> {
    if members.is_empty() {
        return Err(Error::Labels("representative point of an empty class".into()));
    }
    let mut lats: Vec<f64> = members.iter().map(|p| p.lat).collect();
    let mut lons: Vec<f64> = members.iter().map(|p| p.lon).collect();
    Ok(GeoPoint {
        lat: lower_median(&mut lats),
        lon: lower_median(&mut lons),
    })
}

/// One class per k-d tree leaf over the ground-truth points (sorted by user
/// id first), represented by the median of its members.
pub fn build_kdtree_labels(truths: &[GroundTruth], min_bucket: usize) -> Result<(LabelSpace, KdTree)> {
    let mut sorted: Vec<&GroundTruth> = truths.iter().collect();
    sorted.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    let points: Vec<GeoPoint> = sorted.iter().map(|t| t.point).collect();
    let tree = build_kdtree(&points, min_bucket)?;
    let mut classes = Vec::new();
    let mut assignment = BTreeMap::new();
    for (leaf_id, _, members) in tree.leaves() {
        let pts: Vec<GeoPoint> = members.iter().map(|&i| points[i]).collect();
        classes.push(LabelClass {
            label_id: leaf_id,
            rep: representative_point(&pts)?,
            count: members.len(),
        });
        for &i in members {
            assignment.insert(sorted[i].user_id.clone(), leaf_id);
        }
    }
    Ok((
        LabelSpace {
            mode: LabelMode::Kdtree,
            classes,
            assignment,
            excluded: 0,
        },
        tree,
    ))
}

/// Builds the label space in the requested mode.
pub fn build_labels(truths: &[GroundTruth], mode: LabelMode, min_users: usize, min_bucket: usize) -> Result<LabelSpace> {
    match mode {
        LabelMode::City => build_city_labels(truths, min_users),
        LabelMode::Kdtree => build_kdtree_labels(truths, min_bucket).map(|(ls, _)| ls),
    }
}

/// Ground truths keyed by user id.
pub fn truth_map(truths: &[GroundTruth]) -> HashMap<&str, &GroundTruth> {
    truths.iter().map(|t| (t.user_id.as_str(), t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gt(user: &str, city: u64, lat: f64, lon: f64) -> GroundTruth {
        GroundTruth {
            user_id: user.into(),
            city,
            point: GeoPoint { lat, lon },
        }
    }

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint { lat, lon }
    }

    #[test]
    fn city_labels_at_boundary() {
        let truths: Vec<_> = (0..3).map(|i| gt(&format!("u{i}"), 7, 1.0, 2.0)).collect();
        let ls = build_city_labels(&truths, 3).unwrap();
        assert_eq!(ls.len(), 1);
        assert_eq!(ls.classes[0].count, 3);
        assert_eq!(ls.rep(0), p(1.0, 2.0));
    }

    #[test]
    fn small_cities_are_excluded() {
        let mut truths: Vec<_> = (0..5).map(|i| gt(&format!("a{i}"), 1, 0.0, 0.0)).collect();
        truths.extend((0..2).map(|i| gt(&format!("b{i}"), 2, 5.0, 5.0)));
        let ls = build_city_labels(&truths, 3).unwrap();
        assert_eq!(ls.len(), 1);
        assert_eq!(ls.excluded, 2);
        assert!(ls.label_of("b0").is_none());
        assert_eq!(ls.label_of("a4"), Some(0));
    }

    #[test]
    fn no_qualifying_city_is_fatal() {
        let truths = vec![gt("a", 1, 0.0, 0.0)];
        assert!(matches!(build_city_labels(&truths, 2), Err(Error::Labels(_))));
    }

    #[test]
    fn too_few_points_for_a_split() {
        let pts: Vec<_> = (0..5).map(|i| p(i as f64, 0.0)).collect();
        let t = build_kdtree(&pts, 3).unwrap();
        assert_eq!(t.n_leaves(), 1);
    }

    #[test]
    fn four_points_split_on_longitude() {
        let pts: Vec<_> = (0..4).map(|i| p(0.0, i as f64)).collect();
        let t = build_kdtree(&pts, 2).unwrap();
        assert_eq!(t.n_leaves(), 2);
        match &t.nodes()[0] {
            KdNode::Split { dim, value, .. } => {
                assert_eq!(*dim, SplitDim::Lon);
                assert_eq!(*value, 1.0);
            }
            other => panic!("root is not a split: {other:?}"),
        }
        let leaves = t.leaves();
        assert_eq!(leaves[0].2, &[0, 1]);
        assert_eq!(leaves[1].2, &[2, 3]);
    }

    #[test]
    fn duplicates_may_inflate_a_leaf() {
        let pts = vec![p(1.0, 1.0); 9];
        let t = build_kdtree(&pts, 2).unwrap();
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.leaves()[0].2.len(), 9);
    }

    #[test]
    fn representative_points() {
        assert_eq!(representative_point(&[p(3.0, 4.0)]).unwrap(), p(3.0, 4.0));
        let members = [p(0.0, 0.0), p(0.0, 10.0), p(10.0, 10.0)];
        assert_eq!(representative_point(&members).unwrap(), p(0.0, 10.0));
        assert!(representative_point(&[]).is_err());
    }

    #[test]
    fn kdtree_labels_are_independent_of_input_order() {
        let truths: Vec<_> = (0..40)
            .map(|i| gt(&format!("u{i:02}"), i, (i * 7 % 13) as f64, (i * 5 % 17) as f64))
            .collect();
        let mut reversed = truths.clone();
        reversed.reverse();
        let (a, _) = build_kdtree_labels(&truths, 4).unwrap();
        let (b, _) = build_kdtree_labels(&reversed, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip() {
        let truths: Vec<_> = (0..20)
            .map(|i| gt(&format!("u{i:02}"), i, i as f64 * 0.37, -(i as f64) * 1.1))
            .collect();
        let (ls, _) = build_kdtree_labels(&truths, 3).unwrap();
        let (mut c, mut a) = (Vec::new(), Vec::new());
        ls.write_classes_csv(&mut c).unwrap();
        ls.write_assignment_csv(&mut a).unwrap();
        let back = LabelSpace::read_csv(c.as_slice(), a.as_slice()).unwrap();
        assert_eq!(back, ls);
    }

    proptest! {
        #[test]
        fn leaves_cover_points_and_respect_sizes(
            coords in prop::collection::hash_set((-900i32..900, -1800i32..1800), 1..200),
            min_bucket in 1usize..12,
        ) {
            // distinct integer grid, scaled so no two points share a coordinate value
            let pts: Vec<GeoPoint> = coords
                .iter()
                .enumerate()
                .map(|(k, &(a, b))| p(a as f64 / 10.0 + k as f64 * 1e-7, b as f64 / 10.0 + k as f64 * 1e-7))
                .collect();
            let t = build_kdtree(&pts, min_bucket).unwrap();
            let leaves = t.leaves();
            let mut seen = vec![0; pts.len()];
            for (id, bbox, members) in &leaves {
                if pts.len() >= min_bucket {
                    prop_assert!(members.len() >= min_bucket);
                }
                prop_assert!(members.len() < 2 * min_bucket || leaves.len() == 1 && pts.len() < 2 * min_bucket);
                let pm: Vec<GeoPoint> = members.iter().map(|&i| pts[i]).collect();
                prop_assert!(bbox.contains(&representative_point(&pm).unwrap()));
                for &i in *members {
                    seen[i] += 1;
                    prop_assert_eq!(t.locate(&pts[i]), *id);
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
