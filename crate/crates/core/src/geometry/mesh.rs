//! Bicubic Bezier body surface and its triangle tessellation.
//!
//! Six cross-section stations run front to back (hood front, hood/windshield join, roof
//! front, roof rear, trunk front, trunk rear). Each station carries a profile of seven
//! control points from the centre line down to the rocker line, split into an upper and a
//! lower cubic. Longitudinal handles are Catmull-Rom style so neighbouring patches share
//! their boundary curves exactly.

use serde::{Deserialize, Serialize};

use super::{ControlPointSet, DesignVector, Point3, decode_controls};
use super::mapping::N_CENTER;

const N_STATIONS: usize = 6;
const PROFILE_LEN: usize = 7;
const ROWS: usize = 2;
const SPANS: usize = N_STATIONS - 1;
pub const PATCHES_PER_BODY: usize = SPANS * ROWS * 2;

const SHOULDER_FRONT: usize = N_CENTER + 6;
const SHOULDER_REAR: usize = N_CENTER + 7;
const ROCKER: usize = N_CENTER + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
    /// Patch index of each face; not part of the wire format.
    #[serde(skip)]
    pub face_patch: Vec<usize>,
}

impl Mesh {
    /// Closed-form vertex and face counts for a resolution.
    pub fn expected_counts(resolution: usize) -> (usize, usize) {
        let side = resolution + 1;
        (
            PATCHES_PER_BODY * side * side,
            PATCHES_PER_BODY * 2 * resolution * resolution,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mesh serializes")
    }

    pub fn triangle_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        let u = sub(b, a);
        let v = sub(c, a);
        let n = cross(u, v);
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(u: Point3, v: Point3) -> Point3 {
    [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ]
}

fn station_profile(cp: &ControlPointSet, k: usize) -> [Point3; PROFILE_LEN] {
    let c = cp.get(k);
    let s = cp.get(N_CENTER + k);
    let t = k as f64 / (N_STATIONS - 1) as f64;
    let sf = cp.get(SHOULDER_FRONT);
    let sr = cp.get(SHOULDER_REAR);
    let shoulder = [s[0], sf[1] + t * (sr[1] - sf[1]), sf[2] + t * (sr[2] - sf[2])];
    let rk = cp.get(ROCKER);
    let rocker = [s[0], rk[1], rk[2]];
    [
        c,
        [c[0], 0.5 * s[1], c[2]],
        s,
        shoulder,
        [shoulder[0], shoulder[1] + 0.01, shoulder[2] - 0.06],
        [rocker[0], rocker[1] + 0.01, rocker[2] + 0.06],
        rocker,
    ]
}

fn bernstein(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t]
}

fn eval_patch(net: &[[Point3; 4]; 4], u: f64, v: f64) -> Point3 {
    let bu = bernstein(u);
    let bv = bernstein(v);
    let mut p = [0.0; 3];
    for (i, wu) in bu.iter().enumerate() {
        for (j, wv) in bv.iter().enumerate() {
            let w = wu * wv;
            for d in 0..3 {
                p[d] += w * net[i][j][d];
            }
        }
    }
    p
}

/// Builds the left-half patch nets, span-major then row.
fn left_nets(cp: &ControlPointSet) -> Vec<[[Point3; 4]; 4]> {
    let profiles: Vec<[Point3; PROFILE_LEN]> = (0..N_STATIONS).map(|k| station_profile(cp, k)).collect();
    let handle = |k: usize, j: usize| -> Point3 {
        let (prev, next, scale) = if k == 0 {
            (profiles[0][j], profiles[1][j], 1.0 / 3.0)
        } else if k == N_STATIONS - 1 {
            (profiles[k - 1][j], profiles[k][j], 1.0 / 3.0)
        } else {
            (profiles[k - 1][j], profiles[k + 1][j], 1.0 / 6.0)
        };
        let d = sub(next, prev);
        [d[0] * scale, d[1] * scale, d[2] * scale]
    };
    let mut nets = Vec::with_capacity(SPANS * ROWS);
    for k in 0..SPANS {
        for row in 0..ROWS {
            let mut net = [[[0.0; 3]; 4]; 4];
            for jj in 0..4 {
                let j = row * 3 + jj;
                let a = profiles[k][j];
                let b = profiles[k + 1][j];
                let ha = handle(k, j);
                let hb = handle(k + 1, j);
                net[0][jj] = a;
                net[1][jj] = [a[0] + ha[0], a[1] + ha[1], a[2] + ha[2]];
                net[2][jj] = [b[0] - hb[0], b[1] - hb[1], b[2] - hb[2]];
                net[3][jj] = b;
            }
            nets.push(net);
        }
    }
    nets
}

/// Tessellates both body halves; each patch becomes an `(r+1)^2` vertex grid.
pub fn tessellate(design: &DesignVector, resolution: usize) -> Mesh {
    let r = resolution.max(2);
    let cp = decode_controls(design);
    let nets = left_nets(&cp);
    let side = r + 1;
    let (nv, nf) = Mesh::expected_counts(r);
    let mut vertices = Vec::with_capacity(nv);
    let mut faces = Vec::with_capacity(nf);
    let mut face_patch = Vec::with_capacity(nf);

    let mut left = Vec::with_capacity(nv / 2);
    for net in &nets {
        for i in 0..side {
            for j in 0..side {
                left.push(eval_patch(net, i as f64 / r as f64, j as f64 / r as f64));
            }
        }
    }
    vertices.extend_from_slice(&left);
    vertices.extend(left.iter().map(|p| [p[0], -p[1], p[2]]));

    for patch in 0..PATCHES_PER_BODY {
        let mirrored = patch >= nets.len();
        let base = patch * side * side;
        for i in 0..r {
            for j in 0..r {
                let a = base + i * side + j;
                let b = a + side;
                let (t1, t2) = if mirrored {
                    ([a, a + 1, b], [a + 1, b + 1, b])
                } else {
                    ([a, b, a + 1], [a + 1, b, b + 1])
                };
                faces.push(t1);
                faces.push(t2);
                face_patch.push(patch);
                face_patch.push(patch);
            }
        }
    }
    Mesh {
        vertices,
        faces,
        face_patch,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_grid_formula() {
        let d = DesignVector::uniform(0.5);
        let m = tessellate(&d, 2);
        assert_eq!((m.vertices.len(), m.faces.len()), Mesh::expected_counts(2));
        assert_eq!(m.vertices.len(), 20 * 9);
        assert_eq!(m.faces.len(), 20 * 8);
        let m4 = tessellate(&d, 4);
        assert_eq!(m4.faces.len(), 4 * m.faces.len());
        for p in 0..PATCHES_PER_BODY {
            let c2 = m.face_patch.iter().filter(|&&q| q == p).count();
            let c4 = m4.face_patch.iter().filter(|&&q| q == p).count();
            assert_eq!(c4, 4 * c2);
        }
    }

    #[test]
    fn faces_are_valid_and_non_degenerate() {
        for v in [0.0, 0.5, 1.0] {
            let m = tessellate(&DesignVector::uniform(v), 8);
            for (f, face) in m.faces.iter().enumerate() {
                assert!(face.iter().all(|&i| i < m.vertices.len()));
                assert!(m.triangle_area(f) > 1e-9, "face {f} degenerate at {v}");
            }
        }
    }

    #[test]
    fn adjacent_patches_share_edges() {
        let r = 6;
        let side = r + 1;
        let m = tessellate(&DesignVector::uniform(0.37), r);
        let at = |patch: usize, i: usize, j: usize| m.vertices[patch * side * side + i * side + j];
        let close = |a: Point3, b: Point3| (0..3).all(|d| (a[d] - b[d]).abs() < 1e-6);
        for k in 0..SPANS {
            let upper = k * ROWS;
            let lower = upper + 1;
            for i in 0..side {
                // upper/lower boundary along the shoulder line
                assert!(close(at(upper, i, r), at(lower, i, 0)));
                // centre line between the two halves
                assert!(close(at(upper, i, 0), at(upper + SPANS * ROWS, i, 0)));
            }
            if k + 1 < SPANS {
                for j in 0..side {
                    assert!(close(at(upper, r, j), at(upper + ROWS, 0, j)));
                    assert!(close(at(lower, r, j), at(lower + ROWS, 0, j)));
                }
            }
        }
    }

    #[test]
    fn right_half_mirrors_left_half() {
        let m = tessellate(&DesignVector::uniform(0.81), 4);
        let half = m.vertices.len() / 2;
        for i in 0..half {
            let (l, r) = (m.vertices[i], m.vertices[half + i]);
            assert!((l[0] - r[0]).abs() < 1e-6 && (l[1] + r[1]).abs() < 1e-6 && (l[2] - r[2]).abs() < 1e-6);
        }
    }

    #[test]
    fn wire_format_has_only_vertices_and_faces() {
        let m = tessellate(&DesignVector::uniform(0.5), 2);
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, vec!["faces", "vertices"]);
    }
}
