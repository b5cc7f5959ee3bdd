use std::collections::HashMap;
use std::f64::consts::PI;

use rayon::prelude::*;

use super::DomainSpec;
use crate::error::{LumenError, Result};
use crate::numeric::{angle_between, orthonormal_frame, pairwise_sum, spherical_triangle_area, Vec3};

/// Deepest subdivision level accepted by [`SphericalGrid::build`].
pub const MAX_GRID_LEVEL: usize = 9;

/// Recursion depth used to clip boundary triangles.
const CLIP_DEPTH: usize = 5;

/// Vertices with margin above this are treated as lying in the closed domain.
const NODE_MARGIN: f64 = -1e-12;

/// Membership samples per node, on a 4x4 lattice.
pub const CELL_SAMPLES: usize = 16;

const CELL_OFFSETS: [f64; 4] = [-0.375, -0.125, 0.125, 0.375];

const ICO_FACES: [[u32; 3]; 20] = [
    [0, 11, 5],
    [0, 5, 1],
    [0, 1, 7],
    [0, 7, 10],
    [0, 10, 11],
    [1, 5, 9],
    [5, 11, 4],
    [11, 10, 2],
    [10, 7, 6],
    [7, 1, 8],
    [3, 9, 4],
    [3, 4, 2],
    [3, 2, 6],
    [3, 6, 8],
    [3, 8, 9],
    [4, 9, 5],
    [2, 4, 11],
    [6, 2, 10],
    [8, 6, 7],
    [9, 8, 1],
];

fn icosahedron() -> Vec<Vec3> {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    [
        [-1.0, p, 0.0],
        [1.0, p, 0.0],
        [-1.0, -p, 0.0],
        [1.0, -p, 0.0],
        [0.0, -1.0, p],
        [0.0, 1.0, p],
        [0.0, -1.0, -p],
        [0.0, 1.0, -p],
        [p, 0.0, -1.0],
        [p, 0.0, 1.0],
        [-p, 0.0, -1.0],
        [-p, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vec3::new(v[0], v[1], v[2]).normalize())
    .collect()
}

fn face_size(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    angle_between(a, b).max(angle_between(b, c)).max(angle_between(c, a))
}

/// Area fraction of a flat triangle where the linear interpolant of the
/// vertex values is nonnegative.
fn positive_fraction(m: [f64; 3]) -> f64 {
    let pos = m.iter().filter(|&&v| v >= 0.0).count();
    match pos {
        3 => 1.0,
        0 => 0.0,
        1 => {
            let i = m.iter().position(|&v| v >= 0.0).unwrap();
            let a = m[i];
            let (b, c) = (m[(i + 1) % 3], m[(i + 2) % 3]);
            a * a / ((a - b) * (a - c))
        }
        _ => {
            let i = m.iter().position(|&v| v < 0.0).unwrap();
            let n = m[i];
            let (p, q) = (m[(i + 1) % 3], m[(i + 2) % 3]);
            1.0 - n * n / ((n - p) * (n - q))
        }
    }
}

/// Clipped area of a spherical triangle, plus an inside point of the clipped
/// part (the best-margin vertex visited) for orphaned area.
struct Clip {
    area: f64,
    best: (f64, Vec3),
}

fn clip(domain: &DomainSpec, v: [Vec3; 3], m: [f64; 3], depth: usize, out: &mut Clip) {
    for k in 0..3 {
        if m[k] > out.best.0 {
            out.best = (m[k], v[k]);
        }
    }
    let s = face_size(&v[0], &v[1], &v[2]);
    let lo = m[0].min(m[1]).min(m[2]);
    let hi = m[0].max(m[1]).max(m[2]);
    if lo >= s {
        out.area += spherical_triangle_area(&v[0], &v[1], &v[2]);
        return;
    }
    if hi <= -s {
        return;
    }
    if depth == 0 {
        out.area += spherical_triangle_area(&v[0], &v[1], &v[2]) * positive_fraction(m);
        return;
    }
    let mids = [
        (v[0] + v[1]).normalize(),
        (v[1] + v[2]).normalize(),
        (v[2] + v[0]).normalize(),
    ];
    let mm = [domain.margin(&mids[0]), domain.margin(&mids[1]), domain.margin(&mids[2])];
    clip(domain, [v[0], mids[0], mids[2]], [m[0], mm[0], mm[2]], depth - 1, out);
    clip(domain, [mids[0], v[1], mids[1]], [mm[0], m[1], mm[1]], depth - 1, out);
    clip(domain, [mids[2], mids[1], v[2]], [mm[2], mm[1], m[2]], depth - 1, out);
    clip(domain, [mids[0], mids[1], mids[2]], [mm[0], mm[1], mm[2]], depth - 1, out);
}

/// Quadrature on the aperture: restricted vertices of a subdivided
/// icosahedron with lumped spherical-excess weights.
///
/// Vertex nodes nest across levels: every vertex node at level `L` is a node
/// at level `L + 1`. Area cut off the domain by boundary triangles is
/// assigned to the inside vertices of that triangle; triangles with no inside
/// vertex contribute an extra node at the end of the node list.
#[derive(Debug, Clone)]
pub struct SphericalGrid {
    domain: DomainSpec,
    level: usize,
    nodes: Vec<Vec3>,
    weights: Vec<f64>,
    triangles: Vec<[u32; 3]>,
    edges: Vec<[u32; 2]>,
    vertex_nodes: usize,
    cell_samples: Vec<Vec3>,
}

impl SphericalGrid {
    /// Coarsest grid whose expected node count reaches `resolution`.
    pub fn build(domain: &DomainSpec, resolution: usize) -> Result<Self> {
        let fraction = domain.area() / (4.0 * PI);
        let target = resolution.max(1) as f64;
        let mut level = 0;
        while level < MAX_GRID_LEVEL && (10.0 * 4f64.powi(level as i32) + 2.0) * fraction < target {
            level += 1;
        }
        loop {
            let grid = Self::at_level(domain, level)?;
            if grid.len() >= 3 || level == MAX_GRID_LEVEL {
                return if grid.is_empty() {
                    Err(LumenError::invalid("domain contains no quadrature nodes"))
                } else {
                    Ok(grid)
                };
            }
            level += 1;
        }
    }

    /// Grid at an explicit subdivision level.
    pub fn at_level(domain: &DomainSpec, level: usize) -> Result<Self> {
        if level > MAX_GRID_LEVEL {
            return Err(LumenError::invalid(format!(
                "grid level {level} exceeds the maximum {MAX_GRID_LEVEL}"
            )));
        }
        if domain.area() <= 0.0 {
            return Err(LumenError::invalid("domain has zero area"));
        }
        let (verts, faces) = subdivide(domain, level);
        let margins: Vec<f64> = verts.par_iter().map(|v| domain.margin(v)).collect();

        // Per-face clipped areas, computed in parallel and applied in face order.
        let clipped: Vec<(f64, Option<Vec3>)> = faces
            .par_iter()
            .map(|f| {
                let v = [verts[f[0] as usize], verts[f[1] as usize], verts[f[2] as usize]];
                let m = [margins[f[0] as usize], margins[f[1] as usize], margins[f[2] as usize]];
                let mut out = Clip { area: 0.0, best: (f64::NEG_INFINITY, v[0]) };
                clip(domain, v, m, CLIP_DEPTH, &mut out);
                let orphan = m.iter().all(|&x| x < NODE_MARGIN) && out.area > 0.0;
                (out.area, orphan.then_some(out.best.1))
            })
            .collect();

        let mut vertex_weight = vec![0.0; verts.len()];
        let mut extra: Vec<(Vec3, f64)> = Vec::new();
        for (f, (area, orphan)) in faces.iter().zip(&clipped) {
            if *area <= 0.0 {
                continue;
            }
            if let Some(p) = orphan {
                extra.push((*p, *area));
                continue;
            }
            let inside: Vec<usize> = f
                .iter()
                .map(|&i| i as usize)
                .filter(|&i| margins[i] >= NODE_MARGIN)
                .collect();
            let share = area / inside.len() as f64;
            for i in inside {
                vertex_weight[i] += share;
            }
        }

        let mut node_of = vec![u32::MAX; verts.len()];
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for (i, v) in verts.iter().enumerate() {
            if margins[i] >= NODE_MARGIN && vertex_weight[i] > 0.0 {
                node_of[i] = nodes.len() as u32;
                nodes.push(*v);
                weights.push(vertex_weight[i]);
            }
        }
        let vertex_nodes = nodes.len();
        for (p, w) in extra {
            nodes.push(p);
            weights.push(w);
        }

        let mut triangles = Vec::new();
        let mut edges = Vec::new();
        for f in &faces {
            let n = [node_of[f[0] as usize], node_of[f[1] as usize], node_of[f[2] as usize]];
            if n.iter().all(|&k| k != u32::MAX) {
                triangles.push(n);
            }
            for k in 0..3 {
                let (a, b) = (n[k], n[(k + 1) % 3]);
                if a != u32::MAX && b != u32::MAX {
                    edges.push([a.min(b), a.max(b)]);
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();

        let cell_samples = nodes
            .par_iter()
            .zip(&weights)
            .flat_map_iter(|(x, w)| {
                let (u, v) = orthonormal_frame(x);
                let side = w.sqrt();
                CELL_OFFSETS.iter().flat_map(move |&a| {
                    CELL_OFFSETS.iter().map(move |&b| (x + (u * a + v * b) * side).normalize())
                })
            })
            .collect();

        Ok(Self {
            domain: domain.clone(),
            level,
            nodes,
            weights,
            triangles,
            edges,
            vertex_nodes,
            cell_samples,
        })
    }

    /// The next subdivision level of the same domain.
    pub fn refined(&self) -> Result<Self> {
        Self::at_level(&self.domain, self.level + 1)
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Node triples of subdivision triangles lying entirely on nodes,
    /// counter-clockwise seen from outside the sphere.
    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    /// Neighbouring node pairs along subdivision edges.
    pub fn edges(&self) -> &[[u32; 2]] {
        &self.edges
    }

    /// Number of leading nodes that are icosahedral vertices.
    pub fn vertex_node_count(&self) -> usize {
        self.vertex_nodes
    }

    /// [`CELL_SAMPLES`] points per node, node-major, on the tangent square of
    /// area `w_j` around node `j`. A node's weight is split among atoms in
    /// proportion to the samples each one wins.
    pub fn cell_samples(&self) -> &[Vec3] {
        &self.cell_samples
    }

    /// Membership samples of node `j`.
    pub fn samples_of(&self, j: usize) -> &[Vec3] {
        &self.cell_samples[j * CELL_SAMPLES..(j + 1) * CELL_SAMPLES]
    }

    /// Typical angular node spacing at this level.
    pub fn spacing(&self) -> f64 {
        1.1071487177940904 / 2f64.powi(self.level as i32)
    }

    /// Sum of the weights.
    pub fn total_weight(&self) -> f64 {
        pairwise_sum(&self.weights)
    }

    /// `sum_j w_j phi(j, x_j)`, with `phi` evaluated in parallel and reduced
    /// in a fixed order.
    pub fn integrate<F>(&self, phi: F) -> Result<f64>
    where
        F: Fn(usize, &Vec3) -> f64 + Sync,
    {
        let terms: Vec<f64> = self
            .nodes
            .par_iter()
            .enumerate()
            .map(|(j, x)| phi(j, x))
            .collect();
        if let Some((node, &value)) = terms.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(LumenError::Numeric { node, value });
        }
        let weighted: Vec<f64> = terms.iter().zip(&self.weights).map(|(t, w)| t * w).collect();
        Ok(pairwise_sum(&weighted))
    }
}

fn subdivide(domain: &DomainSpec, level: usize) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let mut verts = icosahedron();
    let mut margins: Vec<f64> = verts.iter().map(|v| domain.margin(v)).collect();
    let keep = |verts: &[Vec3], margins: &[f64], f: &[u32; 3]| {
        let hi = f.iter().map(|&i| margins[i as usize]).fold(f64::NEG_INFINITY, f64::max);
        let s = face_size(&verts[f[0] as usize], &verts[f[1] as usize], &verts[f[2] as usize]);
        hi > -1.1 * s
    };
    let mut faces: Vec<[u32; 3]> = ICO_FACES
        .iter()
        .copied()
        .filter(|f| keep(&verts, &margins, f))
        .collect();
    for _ in 0..level {
        let mut cache: HashMap<u64, u32> = HashMap::with_capacity(faces.len() * 2);
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>, margins: &mut Vec<f64>| -> u32 {
            let key = ((a.min(b) as u64) << 32) | a.max(b) as u64;
            *cache.entry(key).or_insert_with(|| {
                let p = (verts[a as usize] + verts[b as usize]).normalize();
                verts.push(p);
                margins.push(domain.margin(&p));
                (verts.len() - 1) as u32
            })
        };
        for f in &faces {
            let [a, b, c] = *f;
            let ab = midpoint(a, b, &mut verts, &mut margins);
            let bc = midpoint(b, c, &mut verts, &mut margins);
            let ca = midpoint(c, a, &mut verts, &mut margins);
            for child in [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]] {
                if keep(&verts, &margins, &child) {
                    next.push(child);
                }
            }
        }
        faces = next;
    }
    (verts, faces)
}
