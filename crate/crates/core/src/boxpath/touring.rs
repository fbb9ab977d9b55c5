//! Shortest polyline from `start` to `end` touching a sequence of half-spaces
//! in order.

use nalgebra::DVector;

/// `{ y : ⟨normal, y⟩ ≥ offset }`.
#[derive(Debug, Clone)]
pub struct HalfPlane {
    pub normal: DVector<f64>,
    pub offset: f64,
}

impl HalfPlane {
    pub fn value(&self, y: &DVector<f64>) -> f64 {
        self.normal.dot(y) - self.offset
    }

    pub fn contains(&self, y: &DVector<f64>) -> bool {
        self.value(y) >= 0.0
    }

    pub fn project(&self, y: &DVector<f64>) -> DVector<f64> {
        let v = self.value(y);
        if v >= 0.0 {
            y.clone()
        } else {
            y - &self.normal * (v / self.normal.norm_squared())
        }
    }

    fn reflect(&self, y: &DVector<f64>) -> DVector<f64> {
        y - &self.normal * (2.0 * self.value(y) / self.normal.norm_squared())
    }
}

#[derive(Debug, Clone)]
pub struct Tour {
    pub length: f64,
    pub points: Vec<DVector<f64>>,
    pub sweeps: usize,
}

fn polyline_length(start: &DVector<f64>, points: &[DVector<f64>], end: &DVector<f64>) -> f64 {
    let mut prev = start;
    let mut total = 0.0;
    for p in points {
        total += (p - prev).norm();
        prev = p;
    }
    total + (end - prev).norm()
}

/// Best point of `plane` for the two-neighbour problem
/// `min |z − a| + |z − b|`, preferring the point nearest `current` when the
/// segment `ab` already meets the half-space.
fn best_point(plane: &HalfPlane, a: &DVector<f64>, b: &DVector<f64>, current: &DVector<f64>) -> DVector<f64> {
    let (va, vb) = (plane.value(a), plane.value(b));
    if va >= 0.0 || vb >= 0.0 {
        // Points of the segment inside the half-space form a sub-segment;
        // pick the one closest to the current iterate.
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        if va < 0.0 {
            lo = va / (va - vb);
        } else if vb < 0.0 {
            hi = va / (va - vb);
        }
        let d = b - a;
        let dd = d.norm_squared();
        let t = if dd == 0.0 { 0.0 } else { ((current - a).dot(&d) / dd).clamp(lo, hi) };
        return a + d * t;
    }
    let bb = plane.reflect(b);
    let (fa, fb) = (plane.value(a), plane.value(&bb));
    let t = fa / (fa - fb);
    a + (bb - a) * t
}

/// Block-coordinate descent: each touch point is moved to its exact
/// minimizer given its neighbours, until the length stalls at relative
/// tolerance `tol`.
pub fn tour(start: &DVector<f64>, end: &DVector<f64>, planes: &[HalfPlane], tol: f64, max_sweeps: usize) -> Tour {
    let m = planes.len();
    if m == 0 {
        return Tour {
            length: (end - start).norm(),
            points: Vec::new(),
            sweeps: 0,
        };
    }
    let mut points: Vec<DVector<f64>> = planes
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let t = (k + 1) as f64 / (m + 1) as f64;
            p.project(&(start + (end - start) * t))
        })
        .collect();
    let mut length = polyline_length(start, &points, end);
    let mut sweeps = 0;
    let mut quiet = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        for k in 0..m {
            let a = if k == 0 { start.clone() } else { points[k - 1].clone() };
            let b = if k + 1 == m { end.clone() } else { points[k + 1].clone() };
            points[k] = best_point(&planes[k], &a, &b, &points[k]);
        }
        let next = polyline_length(start, &points, end);
        let change = length - next;
        length = next;
        if change <= tol * next.max(f64::MIN_POSITIVE) {
            quiet += 1;
            if quiet >= 3 {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    Tour { length, points, sweeps }
}
