//! Movable-part segmentation from K+1 frames and K contact locations.
//!
//! After interaction k only part k moved, so sub-parts of frame k that both
//! moved and touch the contacted sub-part (through a chain of moved
//! neighbours) get label k; every other point inherits its label from the
//! nearest point of frame k−1.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{nearest_in_tree, GeometryError, KdTree, Point3, PointCloud};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentationError {
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubPart {
    pub id: usize,
    pub point_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubPartGraph {
    pub nodes: Vec<SubPart>,
    /// Undirected, stored once with `a < b`, sorted.
    pub edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl SubPartGraph {
    /// Neighbour ids in ascending order.
    pub fn neighbors(&self, id: usize) -> &[usize] {
        &self.adjacency[id]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovedCriterion {
    /// Mean forward chamfer distance above which a sub-part moved, metres.
    pub distance_threshold: f64,
    /// Two-sample Kolmogorov–Smirnov statistic above which it moved.
    pub distribution_statistic_threshold: f64,
}

impl Default for MovedCriterion {
    fn default() -> Self {
        MovedCriterion { distance_threshold: 0.01, distribution_statistic_threshold: 0.4 }
    }
}

impl MovedCriterion {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        if !(self.distance_threshold > 0.0 && self.distribution_statistic_threshold > 0.0) {
            return Err(SegmentationError::InvalidInput("moved-criterion thresholds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub criterion: MovedCriterion,
    /// Region-growing radius for the clustering fallback.
    pub cluster_radius: f64,
    /// Sub-parts closer than this are graph neighbours.
    pub adjacency_radius: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig { criterion: MovedCriterion::default(), cluster_radius: 0.015, adjacency_radius: 0.02 }
    }
}

/// Labels of the final frame, plus every intermediate frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationLabels {
    pub labels: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MovedTest {
    pub moved: bool,
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
}

/// Euclidean region growing; seeds taken in index order.
pub fn cluster_subparts(cloud: &PointCloud, radius: f64) -> Vec<SubPart> {
    let tree = KdTree::new(&cloud.points);
    let mut owner = vec![usize::MAX; cloud.len()];
    let mut out = Vec::new();
    for seed in 0..cloud.len() {
        if owner[seed] != usize::MAX {
            continue;
        }
        let id = out.len();
        owner[seed] = id;
        let mut members = vec![seed];
        let mut queue = VecDeque::from([seed]);
        while let Some(i) = queue.pop_front() {
            for j in tree.within_radius(&cloud.points[i], radius) {
                if owner[j] == usize::MAX {
                    owner[j] = id;
                    members.push(j);
                    queue.push_back(j);
                }
            }
        }
        members.sort_unstable();
        out.push(SubPart { id, point_indices: members });
    }
    out
}

fn owner_table(n: usize, subparts: &[SubPart]) -> Result<Vec<usize>, SegmentationError> {
    let mut owner = vec![usize::MAX; n];
    for (pos, sp) in subparts.iter().enumerate() {
        if sp.id != pos {
            return Err(SegmentationError::InvalidInput(format!("sub-part ids must be 0..n, found {} at {pos}", sp.id)));
        }
        for &i in &sp.point_indices {
            if i >= n {
                return Err(SegmentationError::InvalidInput(format!("sub-part {} index {i} out of range", sp.id)));
            }
            if owner[i] != usize::MAX {
                return Err(SegmentationError::InvalidInput(format!("point {i} belongs to two sub-parts")));
            }
            owner[i] = sp.id;
        }
    }
    if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
        return Err(SegmentationError::InvalidInput(format!("point {i} belongs to no sub-part")));
    }
    Ok(owner)
}

pub fn build_subpart_graph(
    cloud: &PointCloud,
    subparts: &[SubPart],
    adjacency_radius: f64,
) -> Result<SubPartGraph, SegmentationError> {
    let owner = owner_table(cloud.len(), subparts)?;
    let tree = KdTree::new(&cloud.points);
    let mut adjacency = vec![Vec::new(); subparts.len()];
    for (i, p) in cloud.points.iter().enumerate() {
        for j in tree.within_radius(p, adjacency_radius) {
            let (a, b) = (owner[i], owner[j]);
            if a != b && !adjacency[a].contains(&b) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
    }
    let mut edges = Vec::new();
    for (a, list) in adjacency.iter_mut().enumerate() {
        list.sort_unstable();
        edges.extend(list.iter().filter(|&&b| b > a).map(|&b| (a, b)));
    }
    Ok(SubPartGraph { nodes: subparts.to_vec(), edges, adjacency })
}

/// Sub-part holding the point nearest to `contact`; equal distances go to the lowest sub-part id.
pub fn closest_subpart(subparts: &[SubPart], cloud: &PointCloud, contact: &Point3) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for sp in subparts {
        for &i in &sp.point_indices {
            let d = (cloud.points[i] - contact).norm_squared();
            let better = match best {
                None => true,
                Some((bd, bid)) => d < bd || (d == bd && sp.id < bid),
            };
            if better {
                best = Some((d, sp.id));
            }
        }
    }
    best.map(|(_, id)| id)
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn moved_with_trees(part: &[Point3], prev: &KdTree, cur: &KdTree, crit: &MovedCriterion) -> MovedTest {
    let matches = nearest_in_tree(part, prev);
    let forward: Vec<f64> = matches.iter().map(|m| m.1).collect();
    let matched: Vec<Point3> = matches.iter().map(|m| prev.points()[m.0]).collect();
    let backward: Vec<f64> = nearest_in_tree(&matched, cur).into_iter().map(|m| m.1).collect();
    let moved = mean(&forward) > crit.distance_threshold
        || ks_statistic(&forward, &backward) > crit.distribution_statistic_threshold;
    MovedTest { moved, forward, backward }
}

pub fn is_moved(
    part: &PointCloud,
    prev_frame: &PointCloud,
    cur_frame: &PointCloud,
    crit: &MovedCriterion,
) -> Result<MovedTest, SegmentationError> {
    if part.is_empty() || prev_frame.is_empty() || cur_frame.is_empty() {
        return Err(GeometryError::InvalidInput("empty point cloud".into()).into());
    }
    Ok(moved_with_trees(&part.points, &KdTree::new(&prev_frame.points), &KdTree::new(&cur_frame.points), crit))
}

/// Runs the full labelling and returns every frame's labels. `subparts[k]`
/// are the proposals for frame k; `None` falls back to clustering.
pub fn segment_all_frames(
    frames: &[PointCloud],
    subparts: Option<&[Vec<SubPart>]>,
    contacts: &[Point3],
    cfg: &SegmentConfig,
) -> Result<Vec<Vec<u32>>, SegmentationError> {
    cfg.criterion.validate()?;
    if frames.is_empty() || contacts.len() + 1 != frames.len() {
        return Err(SegmentationError::InvalidInput(format!(
            "{} frames need {} contacts, got {}",
            frames.len(),
            frames.len().saturating_sub(1),
            contacts.len()
        )));
    }
    if frames.iter().any(PointCloud::is_empty) {
        return Err(GeometryError::InvalidInput("empty frame".into()).into());
    }
    if let Some(sp) = subparts {
        if sp.len() != frames.len() {
            return Err(SegmentationError::InvalidInput(format!(
                "{} sub-part sets for {} frames",
                sp.len(),
                frames.len()
            )));
        }
    }
    let trees: Vec<KdTree> = frames.iter().map(|f| KdTree::new(&f.points)).collect();
    let mut all = vec![vec![0u32; frames[0].len()]];
    for k in 1..frames.len() {
        let cloud = &frames[k];
        let proposals = match subparts {
            Some(sp) => sp[k].clone(),
            None => cluster_subparts(cloud, cfg.cluster_radius),
        };
        let graph = build_subpart_graph(cloud, &proposals, cfg.adjacency_radius)?;
        let mut in_part = vec![false; proposals.len()];
        if let Some(root) = closest_subpart(&proposals, cloud, &contacts[k - 1]) {
            let mut visited = vec![false; proposals.len()];
            visited[root] = true;
            let mut queue = VecDeque::from([root]);
            while let Some(node) = queue.pop_front() {
                let pts: Vec<Point3> = proposals[node].point_indices.iter().map(|&i| cloud.points[i]).collect();
                // reached only through labelled neighbours, so the predecessor rule holds here
                if !moved_with_trees(&pts, &trees[k - 1], &trees[k], &cfg.criterion).moved {
                    continue;
                }
                in_part[node] = true;
                for &nb in graph.neighbors(node) {
                    if !visited[nb] {
                        visited[nb] = true;
                        queue.push_back(nb);
                    }
                }
            }
        }
        let prev_labels = &all[k - 1];
        let inherited = nearest_in_tree(&cloud.points, &trees[k - 1]);
        let mut labels = vec![0u32; cloud.len()];
        for sp in &proposals {
            for &i in &sp.point_indices {
                labels[i] = if in_part[sp.id] { k as u32 } else { prev_labels[inherited[i].0] };
            }
        }
        all.push(labels);
    }
    Ok(all)
}

pub fn segment_movable_parts(
    frames: &[PointCloud],
    subparts: Option<&[Vec<SubPart>]>,
    contacts: &[Point3],
    cfg: &SegmentConfig,
) -> Result<SegmentationLabels, SegmentationError> {
    let mut frames_out = segment_all_frames(frames, subparts, contacts, cfg)?;
    let labels = frames_out.last().cloned().unwrap_or_default();
    if frames_out.len() == 1 {
        frames_out.clear();
    }
    Ok(SegmentationLabels { labels, frames: frames_out })
}
