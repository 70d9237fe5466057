//! Camera connectivity graphs and balanced breadth-first partitioning.
//!
//! Views become graph vertices; edge weights count feature matches (or
//! shared sparse observations when no match list exists). Partitioning
//! grows one region at a time from a high-connectivity seed in sorted
//! breadth-first waves, then sweeps any remaining views into regions by a
//! median score rule. Every step breaks ties on ascending ids, so a
//! partition is a pure function of the graph.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::scene_io::{derive_covisibility_edges, SparseModel};

/// Undirected weighted graph over view ids.
#[derive(Debug, Clone)]
pub struct ConnectivityGraph {
    ids: Vec<u32>,
    slot_of: BTreeMap<u32, usize>,
    adjacency: Vec<Vec<(usize, u32)>>,
    weighted_degree: Vec<u64>,
}

impl ConnectivityGraph {
    /// Builds the graph from explicit match counts when the model carries
    /// them, otherwise from shared sparse-point observations.
    pub fn build<T: Real>(model: &SparseModel<T>) -> Result<Self> {
        let edges = if model.match_edges.is_empty() {
            derive_covisibility_edges(model)
        } else {
            model.match_edges.clone()
        };
        let mut ids: Vec<u32> = model.views.iter().map(|v| v.id).collect();
        ids.sort_unstable();
        Self::from_edges(ids, &edges)
    }

    /// Builds from a vertex list and `(a, b, weight)` edges. Duplicate
    /// pairs merge by summing; zero-weight edges are dropped.
    pub fn from_edges(ids: Vec<u32>, edges: &[(u32, u32, u32)]) -> Result<Self> {
        let slot_of: BTreeMap<u32, usize> =
            ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        if slot_of.len() != ids.len() {
            return Err(Error::Integrity("duplicate view ids in graph".into()));
        }
        let mut merged: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for &(a, b, w) in edges {
            if w == 0 {
                continue;
            }
            if a == b {
                return Err(Error::Integrity(format!("self edge on view {a}")));
            }
            let (&sa, &sb) = match (slot_of.get(&a), slot_of.get(&b)) {
                (Some(sa), Some(sb)) => (sa, sb),
                _ => {
                    return Err(Error::Integrity(format!(
                        "edge {a}-{b} references a view outside the graph"
                    )))
                }
            };
            *merged.entry((sa.min(sb), sa.max(sb))).or_insert(0) += w as u64;
        }
        let mut adjacency = vec![Vec::new(); ids.len()];
        let mut weighted_degree = vec![0u64; ids.len()];
        for (&(sa, sb), &w) in &merged {
            let w32 = u32::try_from(w).unwrap_or(u32::MAX);
            adjacency[sa].push((sb, w32));
            adjacency[sb].push((sa, w32));
            weighted_degree[sa] += w;
            weighted_degree[sb] += w;
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable_by_key(|&(slot, _)| slot);
        }
        Ok(ConnectivityGraph {
            ids,
            slot_of,
            adjacency,
            weighted_degree,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn view_ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn slot(&self, view_id: u32) -> Option<usize> {
        self.slot_of.get(&view_id).copied()
    }

    pub fn neighbors(&self, slot: usize) -> &[(usize, u32)] {
        &self.adjacency[slot]
    }

    /// Strongest-first neighbor list of a view: weight descending, id
    /// ascending, truncated to `k`.
    pub fn top_neighbors(&self, view_id: u32, k: usize) -> Result<Vec<(u32, u32)>> {
        let slot = self.slot(view_id).ok_or_else(|| {
            Error::Argument(format!("view {view_id} is not part of the graph"))
        })?;
        let mut nbrs: Vec<(u32, u32)> = self.adjacency[slot]
            .iter()
            .map(|&(s, w)| (self.ids[s], w))
            .collect();
        nbrs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        nbrs.truncate(k);
        Ok(nbrs)
    }

    pub fn is_connected(&self) -> bool {
        if self.ids.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.ids.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(s) = stack.pop() {
            for &(nbr, _) in &self.adjacency[s] {
                if !seen[nbr] {
                    seen[nbr] = true;
                    count += 1;
                    stack.push(nbr);
                }
            }
        }
        count == self.ids.len()
    }
}

/// A camera partition plus the point-to-region assignment derived from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPartition {
    /// Ascending view ids per region.
    pub regions: Vec<Vec<u32>>,
    /// Regions that ran out of connected frontier before reaching quota.
    pub frontier_starved: Vec<bool>,
    /// Region indices per sparse point, ascending, at least one each.
    pub point_regions: Vec<Vec<usize>>,
}

impl RegionPartition {
    pub fn region_of_view(&self, view_id: u32) -> Option<usize> {
        self.regions
            .iter()
            .position(|r| r.binary_search(&view_id).is_ok())
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }
}

/// Breadth-first growth phase: every region claims exactly ⌊n/k⌋ views
/// unless its frontier empties first (reported in the flag vector).
///
/// Each region seeds at the unassigned view with the highest weighted
/// degree and grows in breadth-first waves; every wave is the current
/// unassigned frontier ordered by (connection weight into the region
/// descending, id ascending) and is truncated to the remaining quota.
fn grow_cores(graph: &ConnectivityGraph, k: usize) -> Result<(Vec<Vec<usize>>, Vec<bool>)> {
    let n = graph.len();
    if k == 0 {
        return Err(Error::Argument("region count must be positive".into()));
    }
    if k > n {
        return Err(Error::Argument(format!(
            "cannot split {n} views into {k} regions"
        )));
    }

    let mut region_of: Vec<Option<usize>> = vec![None; n];
    let mut regions: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut starved = vec![false; k];
    let quota = n / k;

    for r in 0..k {
        let seed = (0..n)
            .filter(|&s| region_of[s].is_none())
            .max_by(|&a, &b| {
                graph.weighted_degree[a]
                    .cmp(&graph.weighted_degree[b])
                    .then(graph.ids[b].cmp(&graph.ids[a]))
            })
            .expect("k regions of quota >= 1 cannot exhaust the vertices");
        region_of[seed] = Some(r);
        regions[r].push(seed);

        while regions[r].len() < quota {
            // weight of every unassigned view into the region so far
            let mut into: BTreeMap<usize, u64> = BTreeMap::new();
            for &member in &regions[r] {
                for &(nbr, w) in graph.neighbors(member) {
                    if region_of[nbr].is_none() {
                        *into.entry(nbr).or_insert(0) += w as u64;
                    }
                }
            }
            if into.is_empty() {
                starved[r] = true;
                break;
            }
            let mut wave: Vec<(usize, u64)> = into.into_iter().collect();
            wave.sort_by(|a, b| b.1.cmp(&a.1).then(graph.ids[a.0].cmp(&graph.ids[b.0])));
            let take = wave.len().min(quota - regions[r].len());
            for &(slot, _) in &wave[..take] {
                region_of[slot] = Some(r);
                regions[r].push(slot);
            }
        }
    }
    Ok((regions, starved))
}

/// The growth-phase cores as ascending view ids, before any leftover
/// assignment. A `true` flag marks a core whose frontier emptied early.
pub fn bfs_cores(graph: &ConnectivityGraph, k: usize) -> Result<(Vec<Vec<u32>>, Vec<bool>)> {
    let (cores, starved) = grow_cores(graph, k)?;
    let mut out = Vec::with_capacity(cores.len());
    for members in cores {
        let mut ids: Vec<u32> = members.into_iter().map(|s| graph.ids[s]).collect();
        ids.sort_unstable();
        out.push(ids);
    }
    Ok((out, starved))
}

/// Splits the graph into `k` regions of near-equal size: the breadth-first
/// cores of [`bfs_cores`], plus a sweep that hands every view the growth
/// phase could not reach to the smallest region among those whose
/// connection score beats the median score, falling back to the
/// best-connected region, with every tie broken toward smaller size then
/// lower region index. The sweep visits leftovers in ascending id order.
pub fn bfs_segment(graph: &ConnectivityGraph, k: usize) -> Result<(Vec<Vec<u32>>, Vec<bool>)> {
    let n = graph.len();
    let (mut regions, starved) = grow_cores(graph, k)?;
    let mut region_of: Vec<Option<usize>> = vec![None; n];
    for (r, members) in regions.iter().enumerate() {
        for &slot in members {
            region_of[slot] = Some(r);
        }
    }

    // median-score sweep over whatever the waves could not reach
    let leftovers: Vec<usize> = (0..n).filter(|&s| region_of[s].is_none()).collect();
    for slot in leftovers {
        let mut scores = vec![0u64; k];
        for &(nbr, w) in graph.neighbors(slot) {
            if let Some(r) = region_of[nbr] {
                scores[r] += w as u64;
            }
        }
        let mut sorted = scores.clone();
        sorted.sort_unstable();
        // doubled median avoids fractional averaging for even k
        let median2 = if k % 2 == 1 {
            2 * sorted[k / 2]
        } else {
            sorted[k / 2 - 1] + sorted[k / 2]
        };
        let above: Vec<usize> = (0..k).filter(|&r| 2 * scores[r] > median2).collect();
        let chosen = if above.is_empty() {
            (0..k)
                .max_by(|&a, &b| {
                    scores[a]
                        .cmp(&scores[b])
                        .then(regions[b].len().cmp(&regions[a].len()))
                        .then(b.cmp(&a))
                })
                .unwrap()
        } else {
            *above
                .iter()
                .min_by(|&&a, &&b| regions[a].len().cmp(&regions[b].len()).then(a.cmp(&b)))
                .unwrap()
        };
        region_of[slot] = Some(chosen);
        regions[chosen].push(slot);
    }

    let mut out = Vec::with_capacity(k);
    for members in regions {
        let mut ids: Vec<u32> = members.into_iter().map(|s| graph.ids[s]).collect();
        ids.sort_unstable();
        out.push(ids);
    }
    Ok((out, starved))
}

/// Region lists per sparse point: the regions of its observers, or the
/// region of the nearest camera when nothing observes it.
pub fn assign_points<T: Real>(
    model: &SparseModel<T>,
    regions: &[Vec<u32>],
) -> Result<Vec<Vec<usize>>> {
    let mut region_of_view: BTreeMap<u32, usize> = BTreeMap::new();
    for (r, members) in regions.iter().enumerate() {
        for &id in members {
            region_of_view.insert(id, r);
        }
    }
    let centers: Vec<_> = model
        .views
        .iter()
        .map(|v| (v.id, v.camera_center()))
        .collect();

    let mut out = Vec::with_capacity(model.points.len());
    for (pi, point) in model.points.iter().enumerate() {
        let mut rs: Vec<usize> = Vec::new();
        for &obs in &point.observers {
            let r = *region_of_view.get(&obs).ok_or_else(|| {
                Error::Integrity(format!(
                    "point {pi} observed by view {obs} which is in no region"
                ))
            })?;
            if !rs.contains(&r) {
                rs.push(r);
            }
        }
        if rs.is_empty() {
            let (nearest, _) = centers
                .iter()
                .map(|(id, c)| (*id, (c - point.position).norm()))
                .min_by(|a, b| {
                    a.1.partial_cmp(&b.1)
                        .expect("finite camera distances")
                        .then(a.0.cmp(&b.0))
                })
                .ok_or_else(|| Error::Integrity("model has no views".into()))?;
            rs.push(region_of_view[&nearest]);
        }
        rs.sort_unstable();
        out.push(rs);
    }
    Ok(out)
}

/// Builds the graph, partitions the cameras, and assigns the points.
pub fn partition_model<T: Real>(model: &SparseModel<T>, k: usize) -> Result<RegionPartition> {
    let graph = ConnectivityGraph::build(model)?;
    let (regions, frontier_starved) = bfs_segment(&graph, k)?;
    let point_regions = assign_points(model, &regions)?;
    Ok(RegionPartition {
        regions,
        frontier_starved,
        point_regions,
    })
}

/// Text form: a `regions` header, one `region` status line each, one
/// `camera` line per view, one `point` line per sparse point (`-` for a
/// point list placeholder never occurs after assignment but parses back).
pub fn format_partition(p: &RegionPartition) -> String {
    let mut out = String::new();
    out.push_str(&format!("regions {}\n", p.regions.len()));
    for (r, starved) in p.frontier_starved.iter().enumerate() {
        out.push_str(&format!(
            "region {} {}\n",
            r,
            if *starved { "starved" } else { "filled" }
        ));
    }
    for (r, members) in p.regions.iter().enumerate() {
        for &id in members {
            out.push_str(&format!("camera {id} {r}\n"));
        }
    }
    for (pi, rs) in p.point_regions.iter().enumerate() {
        if rs.is_empty() {
            out.push_str(&format!("point {pi} -\n"));
        } else {
            let joined: Vec<String> = rs.iter().map(|r| r.to_string()).collect();
            out.push_str(&format!("point {} {}\n", pi, joined.join(",")));
        }
    }
    out
}

pub fn parse_partition(text: &str) -> Result<RegionPartition> {
    let mut regions: Vec<Vec<u32>> = Vec::new();
    let mut starved: Vec<bool> = Vec::new();
    let mut point_regions: Vec<Vec<usize>> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let tag = parts.next().unwrap();
        let fail = |msg: String| Error::parse(line, msg);
        match tag {
            "regions" => {
                let k: usize = parts
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| fail("regions line needs a count".into()))?;
                regions = vec![Vec::new(); k];
                starved = vec![false; k];
            }
            "region" => {
                let r: usize = parts
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| fail("region line needs an index".into()))?;
                let status = parts
                    .next()
                    .ok_or_else(|| fail("region line needs a status".into()))?;
                if r >= starved.len() {
                    return Err(fail(format!("region {r} out of range")));
                }
                starved[r] = match status {
                    "starved" => true,
                    "filled" => false,
                    other => return Err(fail(format!("unknown region status '{other}'"))),
                };
            }
            "camera" => {
                let id: u32 = parts
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| fail("camera line needs a view id".into()))?;
                let r: usize = parts
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| fail("camera line needs a region".into()))?;
                if r >= regions.len() {
                    return Err(fail(format!("camera {id} references region {r}")));
                }
                regions[r].push(id);
            }
            "point" => {
                let pi: usize = parts
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| fail("point line needs an index".into()))?;
                if pi != point_regions.len() {
                    return Err(fail(format!(
                        "point {pi} out of order, expected {}",
                        point_regions.len()
                    )));
                }
                let spec = parts
                    .next()
                    .ok_or_else(|| fail("point line needs a region list".into()))?;
                let mut rs = Vec::new();
                if spec != "-" {
                    for token in spec.split(',') {
                        let r: usize = token
                            .parse()
                            .map_err(|_| fail(format!("bad region index '{token}'")))?;
                        if r >= regions.len() {
                            return Err(fail(format!("point {pi} references region {r}")));
                        }
                        rs.push(r);
                    }
                }
                point_regions.push(rs);
            }
            other => return Err(fail(format!("unknown record '{other}'"))),
        }
    }
    for members in &mut regions {
        members.sort_unstable();
    }
    Ok(RegionPartition {
        regions,
        frontier_starved: starved,
        point_regions,
    })
}
