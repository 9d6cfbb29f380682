//! Hyperbolic-plane primitives in the Poincaré disk model.
//!
//! Isometries are elements of SU(1,1) acting by z ↦ (az+b)/(b̄z+ā). We keep the
//! actual matrices (not just the Möbius action) because half-integer weight
//! sections transform with integer powers of the automorphy cocycle
//! j(M,z) = b̄z+ā, and the sign of the matrix is exactly the spin-structure
//! choice.

use crate::C64;

/// Element of SU(1,1): [[a, b], [conj(b), conj(a)]] with |a|² − |b|² = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mobius {
    pub a: C64,
    pub b: C64,
}

impl Mobius {
    pub const IDENTITY: Mobius = Mobius {
        a: C64 { re: 1.0, im: 0.0 },
        b: C64 { re: 0.0, im: 0.0 },
    };

    /// Hyperbolic translation along the ray at `angle` by signed length `t`.
    pub fn translation(angle: f64, t: f64) -> Mobius {
        let c = (t / 2.0).cosh();
        let s = (t / 2.0).sinh();
        let e = C64::from_polar(1.0, angle);
        Mobius {
            a: C64::new(c, 0.0),
            b: e * s,
        }
    }

    pub fn compose(&self, other: &Mobius) -> Mobius {
        // Matrix product self · other.
        Mobius {
            a: self.a * other.a + self.b * other.b.conj(),
            b: self.a * other.b + self.b * other.a.conj(),
        }
    }

    pub fn inverse(&self) -> Mobius {
        Mobius {
            a: self.a.conj(),
            b: -self.b,
        }
    }

    pub fn neg(&self) -> Mobius {
        Mobius {
            a: -self.a,
            b: -self.b,
        }
    }

    pub fn apply(&self, z: C64) -> C64 {
        (self.a * z + self.b) / (self.b.conj() * z + self.a.conj())
    }

    /// Automorphy cocycle j(M,z) = b̄ z + ā; satisfies
    /// j(M₁M₂, z) = j(M₁, M₂z)·j(M₂, z) and (Mz)' = j^{-2}.
    pub fn cocycle(&self, z: C64) -> C64 {
        self.b.conj() * z + self.a.conj()
    }

    /// Max-norm distance between the matrices (sign-sensitive).
    pub fn matrix_dist(&self, other: &Mobius) -> f64 {
        (self.a - other.a).norm().max((self.b - other.b).norm())
    }
}

/// Hyperbolic distance between two points of the disk.
pub fn dist(p: C64, q: C64) -> f64 {
    let num = (p - q).norm_sqr();
    let den = (1.0 - p.norm_sqr()) * (1.0 - q.norm_sqr());
    (1.0 + 2.0 * num / den).acosh()
}

/// Disk automorphism sending p to 0 (as an SU(1,1) element).
pub fn translate_to_origin(p: C64) -> Mobius {
    // z ↦ (z − p)/(1 − p̄ z), normalized to unit determinant.
    let n = 1.0 / (1.0 - p.norm_sqr()).sqrt();
    Mobius {
        a: C64::new(n, 0.0),
        b: -p * n,
    }
}

/// Geodesic midpoint of p and q.
pub fn midpoint(p: C64, q: C64) -> C64 {
    let t = translate_to_origin(p);
    let q1 = t.apply(q);
    let r = q1.norm();
    if r < 1e-300 {
        return p;
    }
    // Halve the hyperbolic radius: |q1| = tanh(d/2) ⇒ midpoint at tanh(d/4).
    let d = 2.0 * r.atanh();
    let m1 = q1 / r * (d / 4.0).tanh();
    t.inverse().apply(m1)
}

/// Interior angle at vertex `v` of the geodesic triangle (v, p, q).
pub fn corner_angle(v: C64, p: C64, q: C64) -> f64 {
    let t = translate_to_origin(v);
    let a = t.apply(p);
    let b = t.apply(q);
    let ang = (a * b.conj()).arg().abs();
    ang.min(2.0 * std::f64::consts::PI - ang)
}

/// Area of the geodesic triangle via the angle deficit (Gauss–Bonnet).
pub fn triangle_area(p: C64, q: C64, r: C64) -> f64 {
    std::f64::consts::PI
        - corner_angle(p, q, r)
        - corner_angle(q, r, p)
        - corner_angle(r, p, q)
}

/// Conformal factor σ of the curvature −1 metric σ²|dz|², σ = 2/(1−|z|²).
pub fn sigma(z: C64) -> f64 {
    2.0 / (1.0 - z.norm_sqr())
}

/// ∂_z log σ = z̄ / (1 − |z|²).
pub fn dlog_sigma(z: C64) -> C64 {
    z.conj() / (1.0 - z.norm_sqr())
}
