use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::{Box9, PLANE_TOLERANCE};

/// Convex polytope as a vertex list plus outward-oriented face cycles.
#[derive(Debug, Clone, Default)]
pub struct ConvexPolytope {
    vertices: Vec<Point3<f64>>,
    faces: Vec<Vec<usize>>,
}

// Face cycles for the corner order of `Box9::corners`, counter-clockwise seen from outside.
const BOX_FACES: [[usize; 4]; 6] = [
    [0, 4, 6, 2],
    [1, 3, 7, 5],
    [0, 1, 5, 4],
    [2, 6, 7, 3],
    [0, 2, 3, 1],
    [4, 5, 7, 6],
];

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum VertexKey {
    Kept(usize),
    Cut(usize, usize),
}

impl ConvexPolytope {
    pub fn from_box(b: &Box9) -> Self {
        Self {
            vertices: b.corners().to_vec(),
            faces: BOX_FACES.iter().map(|f| f.to_vec()).collect(),
        }
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[Vec<usize>] {
        &self.faces
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Keeps the part of the polytope with `normal . x <= offset`.
    ///
    /// Vertices within [`PLANE_TOLERANCE`] of the plane are kept as they are and the cut
    /// face is closed with a cap polygon lying on the plane.
    pub fn clip(&self, normal: &Vector3<f64>, offset: f64) -> Self {
        let scale = normal.norm();
        let dist: Vec<f64> = self
            .vertices
            .iter()
            .map(|v| (normal.dot(&v.coords) - offset) / scale)
            .collect();
        if dist.iter().all(|d| *d <= PLANE_TOLERANCE) {
            return self.clone();
        }
        if dist.iter().all(|d| *d >= -PLANE_TOLERANCE) {
            return Self::default();
        }

        let mut vertices = Vec::new();
        let mut index: HashMap<VertexKey, usize> = HashMap::new();
        let mut on_plane: Vec<usize> = Vec::new();
        let mut intern = |key: VertexKey, vertices: &mut Vec<Point3<f64>>, on_plane: &mut Vec<usize>| {
            *index.entry(key).or_insert_with(|| {
                let p = match key {
                    VertexKey::Kept(i) => {
                        if dist[i].abs() <= PLANE_TOLERANCE {
                            on_plane.push(vertices.len());
                        }
                        self.vertices[i]
                    }
                    VertexKey::Cut(i, j) => {
                        let t = dist[i] / (dist[i] - dist[j]);
                        on_plane.push(vertices.len());
                        self.vertices[i] + (self.vertices[j] - self.vertices[i]) * t
                    }
                };
                vertices.push(p);
                vertices.len() - 1
            })
        };

        let inside = |i: usize| dist[i] <= PLANE_TOLERANCE;
        let strictly_inside = |i: usize| dist[i] < -PLANE_TOLERANCE;
        let cut_key = |i: usize, j: usize| VertexKey::Cut(i.min(j), i.max(j));

        let mut faces = Vec::with_capacity(self.faces.len() + 1);
        for face in &self.faces {
            let mut out = Vec::with_capacity(face.len() + 1);
            for (k, &cur) in face.iter().enumerate() {
                let prev = face[(k + face.len() - 1) % face.len()];
                if inside(cur) {
                    if !inside(prev) && strictly_inside(cur) {
                        out.push(intern(cut_key(prev, cur), &mut vertices, &mut on_plane));
                    }
                    out.push(intern(VertexKey::Kept(cur), &mut vertices, &mut on_plane));
                } else if strictly_inside(prev) {
                    out.push(intern(cut_key(prev, cur), &mut vertices, &mut on_plane));
                }
            }
            out.dedup();
            if out.len() > 1 && out.first() == out.last() {
                out.pop();
            }
            if out.len() >= 3 {
                faces.push(out);
            }
        }

        on_plane.sort_unstable();
        on_plane.dedup();
        if on_plane.len() >= 3 {
            faces.push(order_cap(&vertices, on_plane, &(normal / scale)));
        }
        if faces.len() < 4 {
            return Self::default();
        }
        Self { vertices, faces }
    }

    /// Volume from signed tetrahedra fanned out of the vertex centroid.
    pub fn volume(&self) -> f64 {
        if self.faces.is_empty() {
            return 0.0;
        }
        let centroid = self.vertices.iter().map(|v| v.coords).sum::<Vector3<f64>>() / self.vertices.len() as f64;
        let mut six_volume = 0.0;
        for face in &self.faces {
            let a = self.vertices[face[0]].coords - centroid;
            for k in 1..face.len() - 1 {
                let b = self.vertices[face[k]].coords - centroid;
                let c = self.vertices[face[k + 1]].coords - centroid;
                six_volume += a.dot(&b.cross(&c));
            }
        }
        (six_volume / 6.0).max(0.0)
    }
}

/// Orders the cap vertices counter-clockwise around `normal` so the cap faces outward.
fn order_cap(vertices: &[Point3<f64>], cap: Vec<usize>, normal: &Vector3<f64>) -> Vec<usize> {
    let centroid = cap.iter().map(|&i| vertices[i].coords).sum::<Vector3<f64>>() / cap.len() as f64;
    let helper = if normal.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = normal.cross(&helper).normalize();
    let v = normal.cross(&u);
    let mut keyed: Vec<(f64, usize)> = cap
        .into_iter()
        .map(|i| {
            let d = vertices[i].coords - centroid;
            (d.dot(&v).atan2(d.dot(&u)), i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, i)| i).collect()
}
