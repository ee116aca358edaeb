//! The versioned control-point mapping table.
//!
//! The half body is described by 17 points: 8 on the symmetry plane and 9 on the left
//! side. Right-side points are exact mirrors (`y -> -y`). Each coordinate starts at its
//! point's base value, is then overwritten by at most one design-variable driver
//! (`base + span * x_k`), and finally by smoothing rules that tie non-driven
//! coordinates of join neighbours to already-final coordinates.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{ControlPointSet, Point3, N_CONTROL_POINTS, N_DESIGN_VARS};

pub(crate) const N_CENTER: usize = 8;
pub(crate) const N_SIDE: usize = 9;
const N_HALF: usize = N_CENTER + N_SIDE;

pub const MAPPING_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn idx(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointDef {
    pub name: String,
    pub base: Point3,
    /// Side points are emitted twice: as-is (left) and mirrored (right).
    pub mirrored: bool,
}

/// `point.axis = base + span * x[variable - 1]`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Driver {
    /// 1-based design variable number.
    pub variable: usize,
    pub point: usize,
    pub axis: Axis,
    pub base: f64,
    pub span: f64,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingTerm {
    pub point: usize,
    pub axis: Axis,
    pub weight: f64,
}

/// `point.axis = offset + sum(weight * source.axis)`; sources are final when the rule runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingRule {
    pub point: usize,
    pub axis: Axis,
    pub offset: f64,
    pub terms: Vec<SmoothingTerm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlMapping {
    pub version: u32,
    pub units: String,
    pub points: Vec<PointDef>,
    pub drivers: Vec<Driver>,
    pub smoothing: Vec<SmoothingRule>,
}

// half-model point indices
const HOOD_FRONT: usize = 0;
const HOOD_JOIN: usize = 1;
const ROOF_FRONT: usize = 2;
const ROOF_REAR: usize = 3;
const TRUNK_FRONT: usize = 4;
const TRUNK_REAR: usize = 5;
const BUMPER_REAR: usize = 7;
const S_HOOD_CORNER: usize = 8;
const S_HOOD_JOIN: usize = 9;
const S_ROOF_FRONT: usize = 10;
const S_ROOF_REAR: usize = 11;
const S_TRUNK_FRONT: usize = 12;
const S_TRUNK_REAR: usize = 13;
const S_SHOULDER_FRONT: usize = 14;
const S_SHOULDER_REAR: usize = 15;
const S_ROCKER: usize = 16;

fn term(point: usize, axis: Axis, weight: f64) -> SmoothingTerm {
    SmoothingTerm {
        point,
        axis,
        weight,
    }
}

fn follow(point: usize, axis: Axis, source: usize, offset: f64) -> SmoothingRule {
    SmoothingRule {
        point,
        axis,
        offset,
        terms: vec![term(source, axis, 1.0)],
    }
}

fn average(point: usize, axis: Axis, a: (usize, Axis), b: (usize, Axis), offset: f64) -> SmoothingRule {
    SmoothingRule {
        point,
        axis,
        offset,
        terms: vec![term(a.0, a.1, 0.5), term(b.0, b.1, 0.5)],
    }
}

impl ControlMapping {
    pub fn builtin() -> &'static ControlMapping {
        static TABLE: OnceLock<ControlMapping> = OnceLock::new();
        TABLE.get_or_init(Self::build_default)
    }

    fn build_default() -> ControlMapping {
        use Axis::*;
        let p = |name: &str, base: Point3, mirrored: bool| PointDef {
            name: name.to_string(),
            base,
            mirrored,
        };
        let points = vec![
            p("hood_front_mid", [0.05, 0.0, 0.29], false),
            p("hood_windshield_join_mid", [0.32, 0.0, 0.355], false),
            p("roof_front_mid", [0.47, 0.0, 0.465], false),
            p("roof_back_windshield_join_mid", [0.69, 0.0, 0.445], false),
            p("trunk_front_mid", [0.825, 0.0, 0.34], false),
            p("trunk_rear_mid", [0.97, 0.0, 0.325], false),
            // fixed, so no combination of drivers moves the body rigidly
            p("bumper_front_mid", [0.0, 0.0, 0.10], false),
            p("bumper_rear_mid", [0.98, 0.0, 0.12], false),
            p("hood_front_corner", [0.08, 0.17, 0.27], true),
            p("hood_windshield_join_side", [0.35, 0.15, 0.34], true),
            p("roof_front_side", [0.49, 0.13, 0.445], true),
            p("roof_rear_side", [0.67, 0.13, 0.425], true),
            p("trunk_front_side", [0.835, 0.17, 0.33], true),
            p("trunk_rear_corner", [0.96, 0.17, 0.305], true),
            p("shoulder_front", [0.185, 0.20, 0.275], true),
            p("shoulder_rear", [0.8975, 0.21, 0.285], true),
            p("rocker_mid", [0.57, 0.205, 0.10], true),
        ];
        let d = |variable: usize, point: usize, axis: Axis, base: f64, span: f64, description: &str| Driver {
            variable,
            point,
            axis,
            base,
            span,
            description: description.to_string(),
        };
        let drivers = vec![
            d(1, HOOD_JOIN, X, 0.28, 0.08, "hood/windshield join midpoint, horizontal"),
            d(2, HOOD_JOIN, Z, 0.33, 0.05, "hood/windshield join midpoint, vertical"),
            d(3, ROOF_FRONT, X, 0.44, 0.06, "windshield top midpoint, horizontal"),
            d(4, ROOF_FRONT, Z, 0.44, 0.05, "windshield top midpoint, elevation"),
            d(5, TRUNK_FRONT, X, 0.80, 0.05, "back windshield base midpoint, horizontal"),
            d(6, TRUNK_FRONT, Z, 0.32, 0.04, "back windshield base midpoint, elevation"),
            d(7, ROOF_REAR, X, 0.66, 0.06, "back windshield/roof join midpoint, horizontal"),
            d(8, ROOF_REAR, Z, 0.42, 0.05, "back windshield/roof join midpoint, elevation"),
            d(9, HOOD_FRONT, X, 0.02, 0.06, "hood front midpoint, horizontal"),
            d(10, HOOD_FRONT, Z, 0.26, 0.06, "hood front midpoint, vertical"),
            d(11, TRUNK_REAR, X, 0.95, 0.04, "trunk rear midpoint, horizontal"),
            d(12, TRUNK_REAR, Z, 0.30, 0.05, "trunk rear midpoint, elevation"),
            d(13, S_ROOF_FRONT, Y, 0.11, 0.04, "windshield top corner, lateral"),
            d(14, S_HOOD_JOIN, Y, 0.13, 0.04, "hood/windshield join before driver, lateral"),
            d(15, S_ROOF_REAR, Y, 0.11, 0.04, "roof rear corner, lateral"),
            d(16, S_TRUNK_FRONT, Y, 0.15, 0.04, "back windshield base corner, lateral"),
            d(17, S_TRUNK_REAR, Y, 0.15, 0.04, "trunk rear corner, lateral"),
            d(18, S_SHOULDER_FRONT, Z, 0.25, 0.05, "beltline height"),
            d(19, S_HOOD_CORNER, Y, 0.15, 0.04, "driver-side hood front, outward"),
        ];
        let smoothing = vec![
            follow(BUMPER_REAR, X, TRUNK_REAR, 0.01),
            follow(S_HOOD_CORNER, X, HOOD_FRONT, 0.03),
            follow(S_HOOD_CORNER, Z, HOOD_FRONT, -0.02),
            follow(S_HOOD_JOIN, X, HOOD_JOIN, 0.03),
            follow(S_HOOD_JOIN, Z, HOOD_JOIN, -0.015),
            follow(S_ROOF_FRONT, X, ROOF_FRONT, 0.02),
            follow(S_ROOF_FRONT, Z, ROOF_FRONT, -0.02),
            follow(S_ROOF_REAR, X, ROOF_REAR, -0.02),
            follow(S_ROOF_REAR, Z, ROOF_REAR, -0.02),
            follow(S_TRUNK_FRONT, X, TRUNK_FRONT, 0.01),
            follow(S_TRUNK_FRONT, Z, TRUNK_FRONT, -0.01),
            follow(S_TRUNK_REAR, X, TRUNK_REAR, -0.01),
            follow(S_TRUNK_REAR, Z, TRUNK_REAR, -0.02),
            average(S_SHOULDER_FRONT, X, (HOOD_FRONT, X), (HOOD_JOIN, X), 0.0),
            follow(S_SHOULDER_FRONT, Y, S_HOOD_JOIN, 0.05),
            average(S_SHOULDER_REAR, X, (TRUNK_FRONT, X), (TRUNK_REAR, X), 0.0),
            follow(S_SHOULDER_REAR, Y, S_TRUNK_FRONT, 0.04),
            follow(S_SHOULDER_REAR, Z, S_SHOULDER_FRONT, 0.01),
            average(S_ROCKER, X, (HOOD_JOIN, X), (TRUNK_FRONT, X), 0.0),
            average(S_ROCKER, Y, (S_SHOULDER_FRONT, Y), (S_SHOULDER_REAR, Y), 0.0),
            average(S_ROCKER, Z, (S_SHOULDER_FRONT, Z), (S_SHOULDER_REAR, Z), -0.18),
        ];
        ControlMapping {
            version: MAPPING_VERSION,
            units: "normalized body length (front bumper to rear bumper ~ 1.0)".to_string(),
            points,
            drivers,
            smoothing,
        }
    }

    /// Decodes raw coordinates without range checks; callers validate designs first.
    pub fn decode(&self, x: &[f64]) -> ControlPointSet {
        debug_assert_eq!(x.len(), N_DESIGN_VARS);
        let mut half: Vec<Point3> = self.points.iter().map(|p| p.base).collect();
        for d in &self.drivers {
            half[d.point][d.axis.idx()] = d.base + d.span * x[d.variable - 1];
        }
        for rule in &self.smoothing {
            let v = rule.terms.iter().fold(rule.offset, |acc, t| {
                acc + t.weight * half[t.point][t.axis.idx()]
            });
            half[rule.point][rule.axis.idx()] = v;
        }
        let mut points = Vec::with_capacity(N_CONTROL_POINTS);
        points.extend_from_slice(&half[..N_CENTER]);
        // centre-plane points sit exactly on y = 0
        for p in points.iter_mut() {
            p[1] = 0.0;
        }
        points.extend_from_slice(&half[N_CENTER..N_HALF]);
        for p in &half[N_CENTER..N_HALF] {
            points.push([p[0], -p[1], p[2]]);
        }
        ControlPointSet { points }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("mapping table serializes")
    }

    /// Half-model point names in output order (left side then right side for mirrored points).
    pub fn point_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.points[..N_CENTER].iter().map(|p| p.name.clone()).collect();
        names.extend(self.points[N_CENTER..].iter().map(|p| format!("{}_left", p.name)));
        names.extend(self.points[N_CENTER..].iter().map(|p| format!("{}_right", p.name)));
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_variable_drives_exactly_one_coordinate() {
        let t = ControlMapping::builtin();
        let mut seen = [0usize; N_DESIGN_VARS];
        for d in &t.drivers {
            seen[d.variable - 1] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(t.points.len(), N_HALF);
        assert_eq!(t.point_names().len(), N_CONTROL_POINTS);
    }

    #[test]
    fn smoothing_sources_are_final_when_read() {
        // a rule may only read coordinates that no later rule rewrites
        let t = ControlMapping::builtin();
        for (k, rule) in t.smoothing.iter().enumerate() {
            for src in &rule.terms {
                let rewritten_later = t.smoothing[k + 1..]
                    .iter()
                    .any(|r| r.point == src.point && r.axis == src.axis);
                assert!(!rewritten_later, "rule {k} reads a coordinate rewritten later");
            }
        }
    }

    #[test]
    fn table_round_trips_through_json() {
        let t = ControlMapping::builtin();
        let back: ControlMapping = serde_json::from_str(&t.to_json_pretty()).unwrap();
        assert_eq!(&back, t);
    }
}
