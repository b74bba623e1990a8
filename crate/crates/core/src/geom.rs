//! Small fixed-size vector helpers. Coordinates are Ångström, stored as `[f64; 3]`.

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

#[inline]
pub fn dist(a: Vec3, b: Vec3) -> f64 {
    dist2(a, b).sqrt()
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    if points.is_empty() {
        return [0.0; 3];
    }
    let mut c = [0.0; 3];
    for p in points {
        c = add(c, *p);
    }
    scale(c, 1.0 / points.len() as f64)
}

pub fn is_finite(a: Vec3) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Rigid motion `x -> R x + t` with `R` orthogonal (rotations and reflections).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    pub rot: [[f64; 3]; 3],
    pub trans: Vec3,
}

impl RigidMotion {
    pub fn identity() -> Self {
        Self {
            rot: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            trans: [0.0; 3],
        }
    }

    pub fn apply(&self, x: Vec3) -> Vec3 {
        let r = &self.rot;
        [
            r[0][0] * x[0] + r[0][1] * x[1] + r[0][2] * x[2] + self.trans[0],
            r[1][0] * x[0] + r[1][1] * x[1] + r[1][2] * x[2] + self.trans[1],
            r[2][0] * x[0] + r[2][1] * x[1] + r[2][2] * x[2] + self.trans[2],
        ]
    }

    /// Random orthogonal matrix from Gram-Schmidt on Gaussian columns; with
    /// `reflect` the last column is negated so det = -1.
    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R, reflect: bool, max_shift: f64) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let mut cols = [[0.0f64; 3]; 3];
        loop {
            for c in cols.iter_mut() {
                for v in c.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
            }
            let a = cols[0];
            let na = norm(a);
            if na < 1e-6 {
                continue;
            }
            let e0 = scale(a, 1.0 / na);
            let b = sub(cols[1], scale(e0, dot(cols[1], e0)));
            let nb = norm(b);
            if nb < 1e-6 {
                continue;
            }
            let e1 = scale(b, 1.0 / nb);
            let mut e2 = [
                e0[1] * e1[2] - e0[2] * e1[1],
                e0[2] * e1[0] - e0[0] * e1[2],
                e0[0] * e1[1] - e0[1] * e1[0],
            ];
            if reflect {
                e2 = scale(e2, -1.0);
            }
            let rot = [
                [e0[0], e1[0], e2[0]],
                [e0[1], e1[1], e2[1]],
                [e0[2], e1[2], e2[2]],
            ];
            let trans = [
                rng.gen_range(-max_shift..=max_shift),
                rng.gen_range(-max_shift..=max_shift),
                rng.gen_range(-max_shift..=max_shift),
            ];
            return Self { rot, trans };
        }
    }
}
