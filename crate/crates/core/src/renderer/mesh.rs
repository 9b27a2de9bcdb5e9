//! Iso-surface extraction by marching tetrahedra over a regular grid, and OBJ export.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::SdfQuery;
use crate::error::{Error, Result};
use crate::real::{add, cross, dot, scale, sub, Vec3};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// ASCII OBJ with vertices and triangular faces only.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.6} {:.6} {:.6}", v[0], v[1], v[2]);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }
}

/// Cube corner offsets, indexed by bits (x = 1, y = 2, z = 4).
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Six tetrahedra sharing the 0-7 diagonal; neighbouring cubes split their
/// shared faces identically, so the result has no cracks.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Extracts the `iso` level set of `field` on a `resolution`³-cell grid over
/// the cube [-half_extent, half_extent]³. A field without a sign change yields
/// an empty mesh.
pub fn extract_mesh(field: &dyn SdfQuery, half_extent: f64, resolution: usize, iso: f64) -> Result<Mesh> {
    if resolution < 16 {
        return Err(Error::Mesh(format!("grid resolution must be >= 16, got {resolution}")));
    }
    if !(half_extent > 0.0) {
        return Err(Error::Mesh(format!("grid extent must be positive, got {half_extent}")));
    }
    let n = resolution + 1;
    let cell = 2.0 * half_extent / resolution as f64;
    let pos = |i: usize, j: usize, k: usize| [-half_extent + cell * i as f64, -half_extent + cell * j as f64, -half_extent + cell * k as f64];
    let mut points = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                points.push(pos(i, j, k));
            }
        }
    }
    let values: Vec<f64> = field.sdf(&points).into_iter().map(|v| v - iso).collect();
    let id = |i: usize, j: usize, k: usize| i + n * (j + n * k);

    let mut mesh = Mesh::default();
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();
    let mut vertex_on = |a: usize, b: usize, mesh: &mut Mesh| -> usize {
        let key = (a.min(b), a.max(b));
        *edge_vertex.entry(key).or_insert_with(|| {
            let (fa, fb) = (values[a], values[b]);
            let t = fa / (fa - fb);
            mesh.vertices.push(add(points[a], scale(sub(points[b], points[a]), t)));
            mesh.vertices.len() - 1
        })
    };

    for k in 0..resolution {
        for j in 0..resolution {
            for i in 0..resolution {
                let corner: [usize; 8] = CORNERS.map(|c| id(i + c[0], j + c[1], k + c[2]));
                let inside = corner.iter().filter(|&&c| values[c] < 0.0).count();
                if inside == 0 || inside == 8 {
                    continue;
                }
                for tet in TETS {
                    let v = tet.map(|t| corner[t]);
                    let (neg, pos_): (Vec<usize>, Vec<usize>) = v.iter().partition(|&&c| values[c] < 0.0);
                    if neg.is_empty() || pos_.is_empty() {
                        continue;
                    }
                    let outward = sub(centroid(&pos_, &points), centroid(&neg, &points));
                    let mut tris: Vec<[usize; 3]> = Vec::new();
                    match neg.len() {
                        1 => tris.push([
                            vertex_on(neg[0], pos_[0], &mut mesh),
                            vertex_on(neg[0], pos_[1], &mut mesh),
                            vertex_on(neg[0], pos_[2], &mut mesh),
                        ]),
                        3 => tris.push([
                            vertex_on(pos_[0], neg[0], &mut mesh),
                            vertex_on(pos_[0], neg[1], &mut mesh),
                            vertex_on(pos_[0], neg[2], &mut mesh),
                        ]),
                        _ => {
                            let a = vertex_on(neg[0], pos_[0], &mut mesh);
                            let b = vertex_on(neg[0], pos_[1], &mut mesh);
                            let c = vertex_on(neg[1], pos_[1], &mut mesh);
                            let d = vertex_on(neg[1], pos_[0], &mut mesh);
                            tris.push([a, b, c]);
                            tris.push([a, c, d]);
                        }
                    }
                    for mut t in tris {
                        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                            continue;
                        }
                        let [p0, p1, p2] = t.map(|x| mesh.vertices[x]);
                        if dot(cross(sub(p1, p0), sub(p2, p0)), outward) < 0.0 {
                            t.swap(1, 2);
                        }
                        mesh.faces.push(t);
                    }
                }
            }
        }
    }
    Ok(mesh)
}

fn centroid(ids: &[usize], points: &[Vec3]) -> Vec3 {
    let mut c = [0.0; 3];
    for &i in ids {
        c = add(c, points[i]);
    }
    scale(c, 1.0 / ids.len() as f64)
}
