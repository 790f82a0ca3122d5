//! Directed periodic square lattice.
//!
//! Vertices are indexed row-major, `v = y * L + x`. Every vertex anchors two
//! edges: the horizontal edge `2v` pointing +x and the vertical edge `2v + 1`
//! pointing +y. The anchor of an edge is its tail vertex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Orientation {
    Horizontal = 0,
    Vertical = 1,
}

impl Orientation {
    pub const ALL: [Orientation; 2] = [Orientation::Horizontal, Orientation::Vertical];

    fn from_index(i: usize) -> Self {
        if i == 0 {
            Orientation::Horizontal
        } else {
            Orientation::Vertical
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub orientation: Orientation,
}

/// An edge seen from a vertex or a plaquette, with its incidence sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignedEdge {
    pub edge: usize,
    pub sign: i8,
}

/// Translation class of an ordered pair of distinct edges.
///
/// `dx`, `dy` is the displacement of edge b's anchor from edge a's anchor,
/// reduced mod L.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairClass {
    pub orient_a: Orientation,
    pub orient_b: Orientation,
    pub dx: usize,
    pub dy: usize,
}

#[derive(Debug, Clone)]
pub struct LatticeGeometry {
    l: usize,
    edges: Vec<Edge>,
    neighbors: Vec<[usize; 4]>,
    vertex_incidence: Vec<[SignedEdge; 4]>,
    plaquette_edges: Vec<[SignedEdge; 4]>,
}

/// Builds the L x L periodic lattice. L = 1 would turn every edge into a self-loop.
pub fn build_lattice(l: usize) -> Result<LatticeGeometry> {
    if l < 2 {
        return Err(Error::InvalidSize(l));
    }
    let v_count = l * l;
    let vid = |x: usize, y: usize| (y % l) * l + (x % l);

    let mut edges = Vec::with_capacity(2 * v_count);
    let mut neighbors = Vec::with_capacity(v_count);
    for y in 0..l {
        for x in 0..l {
            let v = vid(x, y);
            let right = vid(x + 1, y);
            let up = vid(x, y + 1);
            let left = vid(x + l - 1, y);
            let down = vid(x, y + l - 1);
            edges.push(Edge {
                tail: v,
                head: right,
                orientation: Orientation::Horizontal,
            });
            edges.push(Edge {
                tail: v,
                head: up,
                orientation: Orientation::Vertical,
            });
            neighbors.push([right, up, left, down]);
        }
    }

    let signed = |edge, sign| SignedEdge { edge, sign };
    let vertex_incidence = (0..v_count)
        .map(|v| {
            let [_, _, left, down] = neighbors[v];
            [
                signed(2 * v, 1),
                signed(2 * v + 1, 1),
                signed(2 * left, -1),
                signed(2 * down + 1, -1),
            ]
        })
        .collect();

    // Plaquette p sits above and to the right of vertex p. Walking clockwise
    // (y up): up the left side, along the top, down the right side, back along
    // the bottom.
    let plaquette_edges = (0..v_count)
        .map(|p| {
            let [right, up, _, _] = neighbors[p];
            [
                signed(2 * p + 1, 1),
                signed(2 * up, 1),
                signed(2 * right + 1, -1),
                signed(2 * p, -1),
            ]
        })
        .collect();

    Ok(LatticeGeometry {
        l,
        edges,
        neighbors,
        vertex_incidence,
        plaquette_edges,
    })
}

impl LatticeGeometry {
    pub fn size(&self) -> usize {
        self.l
    }

    pub fn vertex_count(&self) -> usize {
        self.l * self.l
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn plaquette_count(&self) -> usize {
        self.plaquette_edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> Edge {
        self.edges[e]
    }

    /// Neighbours of `v` in the order right, up, left, down.
    pub fn neighbors(&self, v: usize) -> &[usize; 4] {
        &self.neighbors[v]
    }

    /// The four edges incident to `v`: +1 outward, -1 inward.
    pub fn vertex_incidence(&self, v: usize) -> &[SignedEdge; 4] {
        &self.vertex_incidence[v]
    }

    /// The four edges of plaquette `p`: +1 clockwise, -1 counterclockwise.
    pub fn plaquette(&self, p: usize) -> &[SignedEdge; 4] {
        &self.plaquette_edges[p]
    }

    pub fn coords(&self, v: usize) -> (usize, usize) {
        (v % self.l, v / self.l)
    }

    pub fn vertex_at(&self, x: usize, y: usize) -> usize {
        (y % self.l) * self.l + (x % self.l)
    }

    /// Edge anchored at vertex `v` with the given orientation.
    pub fn edge_at(&self, v: usize, orientation: Orientation) -> usize {
        2 * v + orientation as usize
    }

    /// Translates an edge by `(tx, ty)` lattice steps.
    pub fn translate_edge(&self, e: usize, tx: usize, ty: usize) -> usize {
        let (x, y) = self.coords(e / 2);
        2 * self.vertex_at(x + tx, y + ty) + e % 2
    }

    pub fn check_edge(&self, e: usize) -> Result<()> {
        if e < self.edges.len() {
            Ok(())
        } else {
            Err(Error::EdgeOutOfRange {
                index: e,
                count: self.edges.len(),
            })
        }
    }

    pub fn pair_class_of(&self, a: usize, b: usize) -> Result<PairClass> {
        self.check_edge(a)?;
        self.check_edge(b)?;
        if a == b {
            return Err(Error::SameEdge(a));
        }
        let l = self.l;
        let (xa, ya) = self.coords(a / 2);
        let (xb, yb) = self.coords(b / 2);
        Ok(PairClass {
            orient_a: self.edges[a].orientation,
            orient_b: self.edges[b].orientation,
            dx: (xb + l - xa) % l,
            dy: (yb + l - ya) % l,
        })
    }

    /// Number of translation classes of ordered distinct edge pairs, `4L² - 2`.
    pub fn pair_class_count(&self) -> usize {
        4 * self.l * self.l - 2
    }

    /// Every class holds exactly L² ordered pairs.
    pub fn pair_class_multiplicity(&self) -> usize {
        self.l * self.l
    }

    /// Dense index in `0..pair_class_count()`.
    pub fn pair_class_index(&self, class: &PairClass) -> usize {
        let l2 = self.l * self.l;
        let raw = (class.orient_a as usize * 2 + class.orient_b as usize) * l2
            + class.dy * self.l
            + class.dx;
        // skip the two same-edge slots: raw 0 (H,H,0,0) and raw 3L² (V,V,0,0)
        debug_assert!(raw != 0 && raw != 3 * l2);
        if raw < 3 * l2 {
            raw - 1
        } else {
            raw - 2
        }
    }

    pub fn pair_class_from_index(&self, index: usize) -> PairClass {
        let l2 = self.l * self.l;
        let raw = if index + 1 < 3 * l2 { index + 1 } else { index + 2 };
        let combo = raw / l2;
        let rem = raw % l2;
        PairClass {
            orient_a: Orientation::from_index(combo / 2),
            orient_b: Orientation::from_index(combo % 2),
            dx: rem % self.l,
            dy: rem / self.l,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(matches!(build_lattice(0), Err(Error::InvalidSize(0))));
        assert!(matches!(build_lattice(1), Err(Error::InvalidSize(1))));
    }

    #[test]
    fn counts() {
        let g = build_lattice(2).unwrap();
        assert_eq!(g.vertex_count(), 4);
        assert_eq!(g.edge_count(), 8);
        assert_eq!(build_lattice(40).unwrap().edge_count(), 3200);
    }

    #[test]
    fn two_out_two_in_per_vertex() {
        let g = build_lattice(3).unwrap();
        for v in 0..g.vertex_count() {
            let inc = g.vertex_incidence(v);
            assert_eq!(inc.iter().filter(|s| s.sign == 1).count(), 2);
            assert_eq!(inc.iter().filter(|s| s.sign == -1).count(), 2);
            for s in inc {
                let e = g.edge(s.edge);
                if s.sign == 1 {
                    assert_eq!(e.tail, v);
                } else {
                    assert_eq!(e.head, v);
                }
            }
        }
    }

    #[test]
    fn every_edge_in_two_stars_and_two_plaquettes() {
        for l in 2..6 {
            let g = build_lattice(l).unwrap();
            let mut stars = vec![0; g.edge_count()];
            let mut plaqs = vec![0; g.edge_count()];
            let mut plaq_sign_sum = vec![0i32; g.edge_count()];
            for v in 0..g.vertex_count() {
                for s in g.vertex_incidence(v) {
                    stars[s.edge] += 1;
                }
            }
            for p in 0..g.plaquette_count() {
                for s in g.plaquette(p) {
                    plaqs[s.edge] += 1;
                    plaq_sign_sum[s.edge] += s.sign as i32;
                }
            }
            assert!(stars.iter().all(|&c| c == 2));
            assert!(plaqs.iter().all(|&c| c == 2));
            // shared edges are traversed in opposite senses by their two plaquettes
            assert!(plaq_sign_sum.iter().all(|&s| s == 0));
        }
    }

    #[test]
    fn plaquette_and_star_overlaps_cancel() {
        // sum over shared edges of (star sign * plaquette sign) must vanish,
        // which is what makes A_v and B_p commute for every d
        for l in 2..6 {
            let g = build_lattice(l).unwrap();
            for v in 0..g.vertex_count() {
                for p in 0..g.plaquette_count() {
                    let mut total = 0i32;
                    for sv in g.vertex_incidence(v) {
                        for sp in g.plaquette(p) {
                            if sv.edge == sp.edge {
                                total += (sv.sign * sp.sign) as i32;
                            }
                        }
                    }
                    assert_eq!(total, 0, "L={l} v={v} p={p}");
                }
            }
        }
    }

    #[test]
    fn plaquette_circulation_of_gradient_vanishes() {
        let g = build_lattice(4).unwrap();
        let n: Vec<i64> = (0..g.vertex_count() as i64).map(|v| (v * 7 + 3) % 11).collect();
        for p in 0..g.plaquette_count() {
            let circ: i64 = g
                .plaquette(p)
                .iter()
                .map(|s| {
                    let e = g.edge(s.edge);
                    s.sign as i64 * (n[e.head] - n[e.tail])
                })
                .sum();
            assert_eq!(circ, 0);
        }
    }

    #[test]
    fn translation_is_an_orientation_preserving_bijection() {
        let g = build_lattice(5).unwrap();
        for (tx, ty) in [(1, 0), (0, 1), (3, 4)] {
            let mut seen = vec![false; g.edge_count()];
            for e in 0..g.edge_count() {
                let t = g.translate_edge(e, tx, ty);
                assert_eq!(g.edge(t).orientation, g.edge(e).orientation);
                assert!(!seen[t]);
                seen[t] = true;
            }
        }
    }

    #[test]
    fn same_edge_pair_is_rejected() {
        let g = build_lattice(3).unwrap();
        assert!(matches!(g.pair_class_of(4, 4), Err(Error::SameEdge(4))));
        assert!(g.pair_class_of(0, 100).is_err());
    }

    #[test]
    fn pair_class_is_translation_invariant() {
        let g = build_lattice(4).unwrap();
        for a in 0..g.edge_count() {
            for b in 0..g.edge_count() {
                if a == b {
                    continue;
                }
                let c = g.pair_class_of(a, b).unwrap();
                let (ta, tb) = (g.translate_edge(a, 1, 0), g.translate_edge(b, 1, 0));
                assert_eq!(g.pair_class_of(ta, tb).unwrap(), c);
            }
        }
    }

    #[test]
    fn pair_classes_partition_ordered_pairs() {
        for l in 2..=8 {
            let g = build_lattice(l).unwrap();
            let n = g.edge_count();
            let mut counts: HashMap<PairClass, usize> = HashMap::new();
            let mut dense = vec![0usize; g.pair_class_count()];
            for a in 0..n {
                for b in 0..n {
                    if a != b {
                        let c = g.pair_class_of(a, b).unwrap();
                        *counts.entry(c).or_default() += 1;
                        let idx = g.pair_class_index(&c);
                        assert_eq!(g.pair_class_from_index(idx), c);
                        dense[idx] += 1;
                    }
                }
            }
            assert_eq!(counts.len(), 4 * l * l - 2);
            assert!(counts.values().all(|&m| m == l * l));
            assert!(dense.iter().all(|&m| m == l * l));
            assert_eq!(counts.values().sum::<usize>(), n * (n - 1));
        }
    }

    #[test]
    fn small_class_counts() {
        assert_eq!(build_lattice(2).unwrap().pair_class_count(), 14);
        let g = build_lattice(3).unwrap();
        assert_eq!(g.pair_class_count() * g.pair_class_multiplicity(), 18 * 17);
    }
}
