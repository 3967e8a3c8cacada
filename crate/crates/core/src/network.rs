//! Root network as a tree of straight segments oriented from the collar
//! towards the tips.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Proximal node.
    pub a: usize,
    /// Distal node.
    pub b: usize,
    pub order: u8,
    pub birth: f64,
    /// Axis (root) the segment belongs to.
    pub axis: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootNetwork {
    pub nodes: Vec<Vec3>,
    pub segs: Vec<Segment>,
    pub collar: usize,
    pub radius: f64,
}

impl RootNetwork {
    pub fn new(collar: Vec3, radius: f64) -> RootNetwork {
        RootNetwork { nodes: vec![collar], segs: Vec::new(), collar: 0, radius }
    }

    pub fn add_node(&mut self, x: Vec3) -> usize {
        self.nodes.push(x);
        self.nodes.len() - 1
    }

    pub fn add_segment(&mut self, a: usize, b: usize, order: u8, birth: f64, axis: usize) -> Result<usize> {
        if a >= self.nodes.len() || b >= self.nodes.len() || a == b {
            return Err(Error::Network(format!("bad segment endpoints {a} -> {b}")));
        }
        if (self.nodes[b] - self.nodes[a]).norm() <= 1e-12 {
            return Err(Error::Network(format!("zero-length segment {a} -> {b}")));
        }
        self.segs.push(Segment { a, b, order, birth, axis });
        Ok(self.segs.len() - 1)
    }

    /// Splits segment `s` at parameter `t` in (0, 1). The proximal part keeps
    /// the id `s`; returns (new node, new distal segment).
    pub fn split_segment(&mut self, s: usize, t: f64) -> Result<(usize, usize)> {
        let seg = self.segs[s].clone();
        let len = self.length(s);
        if !(t * len > 1e-9 && (1.0 - t) * len > 1e-9) {
            return Err(Error::Network(format!("split of segment {s} at t = {t} too close to an end")));
        }
        let x = self.nodes[seg.a] + t * (self.nodes[seg.b] - self.nodes[seg.a]);
        let n = self.add_node(x);
        self.segs[s].b = n;
        self.segs.push(Segment { a: n, ..seg });
        Ok((n, self.segs.len() - 1))
    }

    pub fn length(&self, s: usize) -> f64 {
        (self.nodes[self.segs[s].b] - self.nodes[self.segs[s].a]).norm()
    }

    pub fn total_length(&self) -> f64 {
        (0..self.segs.len()).map(|s| self.length(s)).sum()
    }

    pub fn tangent(&self, s: usize) -> Vec3 {
        (self.nodes[self.segs[s].b] - self.nodes[self.segs[s].a]).normalize()
    }

    /// Segments touching each node, sorted by id.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (i, s) in self.segs.iter().enumerate() {
            adj[s.a].push(i);
            adj[s.b].push(i);
        }
        adj
    }

    /// Incoming segment of every node (`None` for the collar and isolated nodes).
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut p = vec![None; self.nodes.len()];
        for (i, s) in self.segs.iter().enumerate() {
            p[s.b] = Some(i);
        }
        p
    }

    /// Degree-one nodes other than the collar.
    pub fn tips(&self) -> Vec<usize> {
        let adj = self.adjacency();
        (0..self.nodes.len()).filter(|&n| n != self.collar && adj[n].len() == 1).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Network("radius must be positive".into()));
        }
        let mut incoming = vec![0usize; self.nodes.len()];
        for (i, s) in self.segs.iter().enumerate() {
            if s.a >= self.nodes.len() || s.b >= self.nodes.len() || self.length(i) <= 1e-12 {
                return Err(Error::Network(format!("segment {i} is degenerate")));
            }
            incoming[s.b] += 1;
        }
        let adj = self.adjacency();
        for n in 0..self.nodes.len() {
            let want = if n == self.collar { 0 } else { 1 };
            if !adj[n].is_empty() && incoming[n] != want {
                return Err(Error::Network(format!("node {n} has {} incoming segments", incoming[n])));
            }
        }
        if !self.segs.is_empty() && adj[self.collar].len() != 1 {
            return Err(Error::Network("collar must end exactly one segment".into()));
        }
        Ok(())
    }

    /// True when every segment of `old` is covered by a chain of collinear
    /// segments of `self` (growth without remodeling).
    pub fn contains_network(&self, old: &RootNetwork) -> bool {
        if old.nodes.len() > self.nodes.len() || old.collar != self.collar {
            return false;
        }
        if old.nodes.iter().zip(&self.nodes).any(|(a, b)| a != b) {
            return false;
        }
        let parents = self.parents();
        for s in &old.segs {
            let (xa, xb) = (old.nodes[s.a], old.nodes[s.b]);
            let tol = 1e-9 * (1.0 + (xb - xa).norm());
            let mut n = s.b;
            let mut guard = 0;
            while n != s.a {
                let Some(p) = parents[n] else { return false };
                n = self.segs[p].a;
                if point_segment_distance(&self.nodes[n], &xa, &xb) > tol {
                    return false;
                }
                guard += 1;
                if guard > self.segs.len() {
                    return false;
                }
            }
        }
        true
    }
}
