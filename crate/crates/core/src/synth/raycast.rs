use nalgebra::Vector3;

use super::spec::ShapeKind;

/// World-frame solid at one instant: an axis-aligned box or a sphere.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Solid {
    pub instance_id: u16,
    pub kind: ShapeKind,
    pub center: Vector3<f64>,
    pub half: Vector3<f64>,
    pub color: [u8; 3],
}

/// Ray parameter interval `[t_in, t_out]` where `origin + t * dir` is inside.
fn slab(
    center: &Vector3<f64>,
    half: &Vector3<f64>,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Option<(f64, f64, usize)> {
    let (mut t_in, mut t_out, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
    for a in 0..3 {
        let lo = center[a] - half[a];
        let hi = center[a] + half[a];
        if dir[a] == 0.0 {
            if origin[a] < lo || origin[a] > hi {
                return None;
            }
            continue;
        }
        let (mut t0, mut t1) = ((lo - origin[a]) / dir[a], (hi - origin[a]) / dir[a]);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_in {
            t_in = t0;
            axis = a;
        }
        t_out = t_out.min(t1);
    }
    (t_in <= t_out).then_some((t_in, t_out, axis))
}

fn sphere_interval(
    center: &Vector3<f64>,
    r: f64,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Option<(f64, f64)> {
    let oc = origin - center;
    let a = dir.dot(dir);
    let b = oc.dot(dir);
    let c = oc.dot(&oc) - r * r;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some(((-b - s) / a, (-b + s) / a))
}

impl Solid {
    /// Nearest entry at `t > 0` with the outward surface normal there.
    pub fn hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match self.kind {
            ShapeKind::Box => {
                let (t_in, t_out, axis) = slab(&self.center, &self.half, origin, dir)?;
                if t_in <= 0.0 || t_out <= 0.0 {
                    return None;
                }
                let mut n = Vector3::zeros();
                n[axis] = -dir[axis].signum();
                Some((t_in, n))
            }
            ShapeKind::Sphere => {
                let (t0, _) = sphere_interval(&self.center, self.half.x, origin, dir)?;
                if t0 <= 0.0 {
                    return None;
                }
                let n = (origin + dir * t0 - self.center).normalize();
                Some((t0, n))
            }
        }
    }

    /// Whether the open segment `origin -> target` passes through the solid.
    pub fn blocks_segment(&self, origin: &Vector3<f64>, target: &Vector3<f64>) -> bool {
        let dir = target - origin;
        let interval = match self.kind {
            ShapeKind::Box => slab(&self.center, &self.half, origin, &dir).map(|(a, b, _)| (a, b)),
            ShapeKind::Sphere => sphere_interval(&self.center, self.half.x, origin, &dir),
        };
        const EPS: f64 = 1e-9;
        match interval {
            Some((t_in, t_out)) => t_out > EPS && t_in < 1.0 - EPS && t_out > t_in,
            None => false,
        }
    }

    /// Whether the solid's footprint in the `z = 0` plane covers `(x, y)`.
    pub fn covers_xy(&self, x: f64, y: f64, margin: f64) -> bool {
        let (dx, dy) = (x - self.center.x, y - self.center.y);
        match self.kind {
            ShapeKind::Box => dx.abs() <= self.half.x + margin && dy.abs() <= self.half.y + margin,
            ShapeKind::Sphere => dx.hypot(dy) <= self.half.x + margin,
        }
    }
}
