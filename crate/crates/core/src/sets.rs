//! Closed sets with closed-form limiting normal cones.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vector};

/// Endpoint sets: a point, a closed ball or a coordinate box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimpleSet {
    Point { at: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl SimpleSet {
    pub fn point(at: &Vector) -> Self {
        SimpleSet::Point {
            at: at.iter().copied().collect(),
        }
    }

    pub fn ball(center: &Vector, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::invalid(format!("ball radius must be positive, got {radius}")));
        }
        Ok(SimpleSet::Ball {
            center: center.iter().copied().collect(),
            radius,
        })
    }

    pub fn cube(lo: &Vector, hi: &Vector) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
            return Err(Error::invalid("box bounds must satisfy lo <= hi componentwise"));
        }
        Ok(SimpleSet::Box {
            lo: lo.iter().copied().collect(),
            hi: hi.iter().copied().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            SimpleSet::Point { at } => at.len(),
            SimpleSet::Ball { center, .. } => center.len(),
            SimpleSet::Box { lo, .. } => lo.len(),
        }
    }

    /// Euclidean distance from `x` to the set.
    pub fn distance(&self, x: &Vector) -> f64 {
        match self {
            SimpleSet::Point { at } => (x - Vector::from_column_slice(at)).norm(),
            SimpleSet::Ball { center, radius } => {
                ((x - Vector::from_column_slice(center)).norm() - radius).max(0.0)
            }
            SimpleSet::Box { lo, hi } => x
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let d = (lo[i] - v).max(v - hi[i]).max(0.0);
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// A point of the set: the point itself, the ball center or the box midpoint.
    pub fn nominal(&self) -> Vector {
        match self {
            SimpleSet::Point { at } => Vector::from_column_slice(at),
            SimpleSet::Ball { center, .. } => Vector::from_column_slice(center),
            SimpleSet::Box { lo, hi } => {
                Vector::from_iterator(lo.len(), lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)))
            }
        }
    }

    /// Points on the relative boundary used to probe set inclusions.
    pub fn boundary_probes(&self) -> Vec<Vector> {
        match self {
            SimpleSet::Point { at } => vec![Vector::from_column_slice(at)],
            SimpleSet::Ball { center, radius } => {
                let n = center.len();
                let c = Vector::from_column_slice(center);
                let mut out = Vec::new();
                for i in 0..n {
                    for s in [-1.0, 1.0] {
                        let mut d = Vector::zeros(n);
                        d[i] = s;
                        out.push(&c + d * *radius);
                    }
                }
                for i in 0..n {
                    for j in (i + 1)..n {
                        for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                            let mut d = Vector::zeros(n);
                            d[i] = si;
                            d[j] = sj;
                            out.push(&c + d * (*radius / 2f64.sqrt()));
                        }
                    }
                }
                out
            }
            SimpleSet::Box { lo, hi } => {
                let n = lo.len();
                (0..(1usize << n))
                    .map(|mask| {
                        Vector::from_iterator(
                            n,
                            (0..n).map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }),
                        )
                    })
                    .collect()
            }
        }
    }

    /// Distance from `v` to the limiting normal cone `N^L(x)`; `x` must lie in
    /// the set within `set_tol`, and boundary detection uses the same tolerance.
    pub fn normal_cone_distance(&self, x: &Vector, v: &Vector, set_tol: f64) -> Result<f64> {
        let d = self.distance(x);
        if d > set_tol {
            return Err(Error::NotInSet {
                what: "endpoint",
                distance: d,
            });
        }
        Ok(match self {
            // the normal cone to a singleton is the whole space
            SimpleSet::Point { .. } => 0.0,
            SimpleSet::Ball { center, radius } => {
                let r = x - Vector::from_column_slice(center);
                let rn = r.norm();
                if (rn - radius).abs() <= set_tol && rn > 0.0 {
                    let n = r / rn;
                    let along = v.dot(&n).max(0.0);
                    (v - n * along).norm()
                } else {
                    v.norm()
                }
            }
            SimpleSet::Box { lo, hi } => {
                let mut acc = 0.0;
                for i in 0..x.len() {
                    let at_lo = (x[i] - lo[i]).abs() <= set_tol;
                    let at_hi = (x[i] - hi[i]).abs() <= set_tol;
                    let di = match (at_lo, at_hi) {
                        (true, true) => 0.0,
                        (true, false) => v[i].max(0.0),
                        (false, true) => (-v[i]).max(0.0),
                        (false, false) => v[i].abs(),
                    };
                    acc += di * di;
                }
                acc.sqrt()
            }
        })
    }
}

/// Admissible control values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlSet {
    /// Coordinate box `lo ≤ u ≤ hi`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Explicit finite list of control values.
    Finite { values: Vec<Vec<f64>> },
}

impl ControlSet {
    pub fn interval(lo: f64, hi: f64) -> Self {
        ControlSet::Box {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Box { lo, .. } => lo.len(),
            ControlSet::Finite { values } => values.first().map_or(0, Vec::len),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            ControlSet::Box { lo, hi } => {
                lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| !(l <= h))
            }
            ControlSet::Finite { values } => values.is_empty(),
        }
    }

    pub fn contains(&self, u: &Vector, tol: f64) -> bool {
        match self {
            ControlSet::Box { lo, hi } => {
                u.len() == lo.len()
                    && u
                        .iter()
                        .enumerate()
                        .all(|(i, &v)| v >= lo[i] - tol && v <= hi[i] + tol)
            }
            ControlSet::Finite { values } => values.iter().any(|w| {
                w.len() == u.len() && w.iter().zip(u.iter()).all(|(a, b)| (a - b).abs() <= tol)
            }),
        }
    }

    /// Vertices of a box, or the list itself. For dynamics affine in `u`, a
    /// linear functional of `f` attains its maximum over `U` at one of these.
    pub fn extreme_points(&self) -> Vec<Vector> {
        match self {
            ControlSet::Box { lo, hi } => {
                let m = lo.len();
                (0..(1usize << m))
                    .map(|mask| {
                        Vector::from_iterator(
                            m,
                            (0..m).map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }),
                        )
                    })
                    .collect()
            }
            ControlSet::Finite { values } => {
                values.iter().map(|v| Vector::from_column_slice(v)).collect()
            }
        }
    }

    /// Extreme points plus a uniform grid of `per_axis` points per coordinate.
    pub fn samples(&self, per_axis: usize) -> Vec<Vector> {
        let mut out = self.extreme_points();
        if let ControlSet::Box { lo, hi } = self {
            let m = lo.len();
            let k = per_axis.max(2);
            let total = k.pow(m as u32);
            for idx in 0..total {
                let mut rem = idx;
                let u = Vector::from_iterator(
                    m,
                    (0..m).map(|i| {
                        let j = rem % k;
                        rem /= k;
                        lo[i] + (hi[i] - lo[i]) * j as f64 / (k - 1) as f64
                    }),
                );
                out.push(u);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn point_cone_is_whole_space() {
        let s = SimpleSet::point(&v(&[0.0, 3f64.sqrt() / 4.0]));
        let d = s
            .normal_cone_distance(&v(&[0.0, 3f64.sqrt() / 4.0]), &v(&[5.0, -7.0]), 1e-8)
            .unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn ball_boundary_and_interior() {
        let s = SimpleSet::ball(&v(&[0.0, 0.0]), 2.0).unwrap();
        let xb = v(&[2.0, 0.0]);
        assert_eq!(s.normal_cone_distance(&xb, &v(&[3.0, 0.0]), 1e-8).unwrap(), 0.0);
        assert!((s.normal_cone_distance(&xb, &v(&[3.0, 4.0]), 1e-8).unwrap() - 4.0).abs() < 1e-15);
        assert!((s.normal_cone_distance(&xb, &v(&[-3.0, 4.0]), 1e-8).unwrap() - 5.0).abs() < 1e-15);
        let xi = v(&[1.0, 0.0]);
        assert!((s.normal_cone_distance(&xi, &v(&[3.0, 4.0]), 1e-8).unwrap() - 5.0).abs() < 1e-15);
        assert!(matches!(
            s.normal_cone_distance(&v(&[3.0, 0.0]), &v(&[1.0, 0.0]), 1e-8),
            Err(Error::NotInSet { .. })
        ));
    }

    #[test]
    fn box_cone_componentwise() {
        let s = SimpleSet::cube(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).unwrap();
        // at lo in x (cone (-inf, 0]), degenerate in y (cone R)
        let x = v(&[0.0, 0.0]);
        assert_eq!(s.normal_cone_distance(&x, &v(&[-2.0, 9.0]), 1e-8).unwrap(), 0.0);
        assert_eq!(s.normal_cone_distance(&x, &v(&[2.0, 9.0]), 1e-8).unwrap(), 2.0);
        let mid = v(&[0.5, 0.0]);
        assert_eq!(s.normal_cone_distance(&mid, &v(&[-2.0, 9.0]), 1e-8).unwrap(), 2.0);
    }

    #[test]
    fn invalid_descriptors_rejected() {
        assert!(SimpleSet::ball(&v(&[0.0]), 0.0).is_err());
        assert!(SimpleSet::cube(&v(&[1.0]), &v(&[0.0])).is_err());
        assert!(ControlSet::interval(1.0, -1.0).is_empty());
        assert!(ControlSet::Finite { values: vec![] }.is_empty());
    }

    #[test]
    fn interval_extremes() {
        let u = ControlSet::interval(-0.05, 1.0);
        let e = u.extreme_points();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0][0], -0.05);
        assert_eq!(e[1][0], 1.0);
        assert!(u.contains(&v(&[0.3]), 0.0));
        assert!(!u.contains(&v(&[1.1]), 1e-12));
    }
}
