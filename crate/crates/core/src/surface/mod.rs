//! Discrete Riemann surface substrate.
//!
//! Two backends: a spectral flat torus (genus 1, Fourier-exact operators, used
//! for machine-precision oracles) and a finite-difference mesh on the regular
//! hyperbolic octagon fundamental domain of the Bolza surface (genus 2).
//!
//! Sections of K^w (twisted by a flat unitary character) are stored as one
//! complex value per quotient node. On the octagon, values at translated copies
//! of a node are recovered through the automorphy rule
//!     f(γz) = χ(γ) · j(γ,z)^{2(w+p)} · conj(j(γ,z))^{2q} · f(z),
//! where (p,q) is the form type and j is the SU(1,1) cocycle. Half-integer
//! weights are meaningful because 2(w+p) is an integer once the matrix lift of
//! the side pairings (the spin structure) is fixed.
//!
//! Conventions fixed here and used everywhere else:
//! * (1,1)-forms are stored as coefficients of dz∧dz̄;
//! * Λ(f dz∧dz̄) = −2i f/σ², so Λ(vol) = 1 for vol = σ² dx∧dy;
//! * cotangent frame norms |dz|² = |dz̄|² = 2σ^{-2}, giving the L² pairing
//!   ⟨s,t⟩ = Σ_i w_i · 2^{p+q} σ_i^{-(2w+2p+2q)} · s_i conj(t_i).
//! With these constants the Kähler identity (D″)* = −i[Λ,D′] holds exactly in
//! the continuum.

pub mod hyper;
mod octagon;
mod torus;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{C64, Error, Result};

pub use octagon::OctagonBackend;
pub use torus::TorusBackend;

/// Form type of a section: scalar coefficients relative to the frames
/// 1, dz̄, dz, dz∧dz̄.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormType {
    Zero,
    ZeroOne,
    OneZero,
    OneOne,
}

impl FormType {
    /// Holomorphic form degree p.
    pub fn p(self) -> i32 {
        match self {
            FormType::Zero | FormType::ZeroOne => 0,
            FormType::OneZero | FormType::OneOne => 1,
        }
    }

    /// Antiholomorphic form degree q.
    pub fn q(self) -> i32 {
        match self {
            FormType::Zero | FormType::OneZero => 0,
            FormType::ZeroOne | FormType::OneOne => 1,
        }
    }

    pub fn from_pq(p: i32, q: i32) -> FormType {
        match (p, q) {
            (0, 0) => FormType::Zero,
            (0, 1) => FormType::ZeroOne,
            (1, 0) => FormType::OneZero,
            (1, 1) => FormType::OneOne,
            _ => unreachable!("form degrees out of range"),
        }
    }
}

/// Flat unitary line bundle label: character of the surface group, given on the
/// standard generators as roots of unity χ(gen_k) = exp(2πi·num[k]/den).
/// Genus 1 uses the first two slots, genus 2 all four.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Twist {
    pub num: [i64; 4],
    pub den: u32,
}

impl Twist {
    pub fn trivial() -> Twist {
        Twist { num: [0; 4], den: 1 }
    }

    pub fn is_trivial(&self) -> bool {
        self.num.iter().all(|&n| n.rem_euclid(self.den as i64) == 0)
    }

    /// χ evaluated on a group element with the given generator exponent vector.
    pub fn phase(&self, exps: &[i32; 4]) -> C64 {
        let mut t = 0.0;
        for k in 0..4 {
            t += self.num[k] as f64 * exps[k] as f64;
        }
        C64::from_polar(1.0, 2.0 * std::f64::consts::PI * t / self.den as f64)
    }

    /// Fractional angles (θ_1, θ_2) used by the torus backend's Fourier shift.
    pub fn angles(&self) -> (f64, f64) {
        (
            self.num[0] as f64 / self.den as f64,
            self.num[1] as f64 / self.den as f64,
        )
    }
}

/// A section of K^w ⊗ (flat twist), tensored with the form frame given by
/// `form`, sampled at mesh nodes. `weight2` stores 2w so half-integer weights
/// stay exact.
#[derive(Clone)]
pub struct TwistedSection {
    pub mesh: Arc<SurfaceMesh>,
    pub weight2: i32,
    pub twist: Twist,
    pub form: FormType,
    pub values: Vec<C64>,
}

impl TwistedSection {
    pub fn zero(mesh: &Arc<SurfaceMesh>, weight2: i32, twist: Twist, form: FormType) -> Self {
        TwistedSection {
            mesh: mesh.clone(),
            weight2,
            twist,
            form,
            values: vec![C64::new(0.0, 0.0); mesh.num_nodes()],
        }
    }

    pub fn norm(&self) -> f64 {
        self.mesh.inner(self, self).re.max(0.0).sqrt()
    }
}

pub(crate) enum Backend {
    Torus(TorusBackend),
    Octagon(OctagonBackend),
}

/// Discretized compact Riemann surface.
pub struct SurfaceMesh {
    pub genus: u32,
    /// Resolution parameter: grid spacing (torus) / max edge length (octagon).
    pub h: f64,
    /// Node positions: torus uses x+iy in the unit square, octagon the
    /// Poincaré-disk coordinate of the canonical representative.
    pub positions: Vec<C64>,
    /// Quadrature weights of the background area form.
    pub weights: Vec<f64>,
    /// Conformal factor σ of the background metric at each node (1 on torus).
    pub sigma: Vec<f64>,
    pub(crate) backend: Backend,
}

/// First-order operator selector for the scalar kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    /// ∂̄ (exterior in form indices, plain ∂_z̄ on the coefficient).
    Dbar,
    /// Chern-metric ∂: ∂_z − 2w·∂log σ on the weight-w coefficient.
    Del,
}

impl SurfaceMesh {
    /// Spectral flat torus with N×N nodes.
    pub fn build_torus_spectral(n: usize) -> Result<Arc<SurfaceMesh>> {
        torus::build(n)
    }

    /// Bolza octagon mesh with target edge length `h`.
    pub fn build_bolza_octagon(h: f64) -> Result<Arc<SurfaceMesh>> {
        octagon::build(h)
    }

    /// Bolza octagon mesh at an explicit subdivision level (for refinement
    /// studies; bypasses the minimum-node check of `build_bolza_octagon`).
    pub fn build_bolza_level(level: u32) -> Result<Arc<SurfaceMesh>> {
        octagon::build_level(level)
    }

    /// Octagon backend data, if this mesh is the Bolza substrate.
    pub fn octagon(&self) -> Option<&OctagonBackend> {
        match &self.backend {
            Backend::Octagon(o) => Some(o),
            _ => None,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.positions.len()
    }

    /// Total quadrature mass (area of the surface).
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Curvature unit ∂̄∂ log σ at a node, as a dz∧dz̄ coefficient: σ²/4 on the
    /// hyperbolic substrate, 0 on the flat torus. The reference metric on K^w
    /// has curvature −2w times this value times … — concretely, the summand
    /// metric σ^{−w2} contributes w2·(this value) to F(∂̄, h) in dz∧dz̄.
    pub fn curvature_unit(&self, node: usize) -> f64 {
        match &self.backend {
            Backend::Torus(_) => 0.0,
            Backend::Octagon(_) => self.sigma[node] * self.sigma[node] / 4.0,
        }
    }

    /// Frame factor ρ_i entering the L² pairing of (p,q)-forms of weight w:
    /// 2^{p+q} σ^{-(2w+2p+2q)}.
    pub fn frame_factor(&self, node: usize, weight2: i32, form: FormType) -> f64 {
        Self::frame_factor_at(self.sigma[node], weight2, form)
    }

    /// Frame factor at an arbitrary conformal-factor value (off-node points).
    pub fn frame_factor_at(sigma: f64, weight2: i32, form: FormType) -> f64 {
        let e = weight2 + 2 * form.p() + 2 * form.q();
        let two = (2.0f64).powi(form.p() + form.q());
        two * sigma.powi(-e)
    }

    /// Weighted L² inner product of sections of the same type.
    pub fn inner(&self, s: &TwistedSection, t: &TwistedSection) -> C64 {
        assert_eq!(s.weight2, t.weight2, "inner product weight mismatch");
        assert_eq!(s.form, t.form, "inner product form mismatch");
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..self.num_nodes() {
            let rho = self.frame_factor(i, s.weight2, s.form);
            acc += self.weights[i] * rho * s.values[i] * t.values[i].conj();
        }
        acc
    }

    /// Low-level first-derivative kernel: applies ∂̄ or metric-∂ to raw
    /// coefficient data of the given type. Output is the coefficient of the
    /// derivative in the conventions of this module (no form-index sign;
    /// callers that raise (1,0) → (1,1) with ∂̄ must negate).
    pub fn scalar_op(
        &self,
        kind: OpKind,
        weight2: i32,
        form: FormType,
        twist: &Twist,
        input: &[C64],
        output: &mut [C64],
    ) {
        match &self.backend {
            Backend::Torus(t) => t.scalar_op(kind, twist, input, output),
            Backend::Octagon(o) => o.scalar_op(self, kind, weight2, form, twist, input, output),
        }
    }

    /// Adjoint of `scalar_op` with respect to the weighted L² pairings with
    /// input type (weight2, form_in) and output type = derivative type.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar_op_adjoint(
        &self,
        kind: OpKind,
        weight2: i32,
        form_in: FormType,
        form_out: FormType,
        twist: &Twist,
        input: &[C64],
        output: &mut [C64],
    ) {
        match &self.backend {
            Backend::Torus(t) => {
                t.scalar_op_adjoint(kind, weight2, form_in, form_out, twist, input, output)
            }
            Backend::Octagon(o) => {
                o.scalar_op_adjoint(self, kind, weight2, form_in, form_out, twist, input, output)
            }
        }
    }

    /// ∂̄ of a section; raises (0,0) → (0,1) and (1,0) → (1,1).
    pub fn dbar(&self, s: &TwistedSection) -> Result<TwistedSection> {
        let form_out = match s.form {
            FormType::Zero => FormType::ZeroOne,
            FormType::OneZero => FormType::OneOne,
            other => {
                return Err(Error::Type(format!("dbar undefined on {other:?} sections")));
            }
        };
        let mut out = vec![C64::new(0.0, 0.0); s.values.len()];
        self.scalar_op(OpKind::Dbar, s.weight2, s.form, &s.twist, &s.values, &mut out);
        if s.form == FormType::OneZero {
            // ∂̄f dz̄∧dz = −∂̄f dz∧dz̄.
            for v in out.iter_mut() {
                *v = -*v;
            }
        }
        Ok(TwistedSection {
            mesh: s.mesh.clone(),
            weight2: s.weight2,
            twist: s.twist.clone(),
            form: form_out,
            values: out,
        })
    }

    /// Metric ∂ of a section; raises (0,0) → (1,0) and (0,1) → (1,1).
    pub fn del_metric(&self, s: &TwistedSection) -> Result<TwistedSection> {
        let form_out = match s.form {
            FormType::Zero => FormType::OneZero,
            FormType::ZeroOne => FormType::OneOne,
            other => {
                return Err(Error::Type(format!("del undefined on {other:?} sections")));
            }
        };
        let mut out = vec![C64::new(0.0, 0.0); s.values.len()];
        self.scalar_op(OpKind::Del, s.weight2, s.form, &s.twist, &s.values, &mut out);
        Ok(TwistedSection {
            mesh: s.mesh.clone(),
            weight2: s.weight2,
            twist: s.twist.clone(),
            form: form_out,
            values: out,
        })
    }

    /// Λ contraction of a (1,1)-form: f dz∧dz̄ ↦ −2i f/σ².
    pub fn lambda_contract(&self, s: &TwistedSection) -> Result<TwistedSection> {
        if s.form != FormType::OneOne {
            return Err(Error::Type("lambda_contract expects a (1,1)-form".into()));
        }
        let mut out = s.clone();
        out.form = FormType::Zero;
        for (i, v) in out.values.iter_mut().enumerate() {
            *v *= C64::new(0.0, -2.0) / (self.sigma[i] * self.sigma[i]);
        }
        Ok(out)
    }

    /// Octagon-only: dense matrix of the weighted ∂̄ operator used for
    /// singular-value kernel detection, with rows/columns scaled so plain ℓ²
    /// singular vectors are L²-orthonormal sections.
    pub fn dbar_weighted_matrix(
        &self,
        weight2: i32,
        form: FormType,
        twist: &Twist,
    ) -> ndarray::Array2<C64> {
        let n = self.num_nodes();
        let form_out = match form {
            FormType::Zero => FormType::ZeroOne,
            FormType::OneZero => FormType::OneOne,
            _ => panic!("dbar matrix on bad form"),
        };
        // On the octagon the nodal square collocation is overdetermined with
        // one extra ∂̄ row per triangle barycenter: square scattered-node
        // collocation admits spurious near-null vectors that would corrupt
        // kernel-dimension detection. Both row families carry half the
        // quadrature each so the total still discretizes ‖∂̄f‖².
        let nb = self.octagon().map_or(0, |o| o.bary_count());
        let node_scale = if nb > 0 { 0.5f64.sqrt() } else { 1.0 };
        let mut basis = vec![C64::new(0.0, 0.0); n];
        let mut col = vec![C64::new(0.0, 0.0); n];
        let mut bcol = vec![C64::new(0.0, 0.0); nb];
        let mut mat = ndarray::Array2::zeros((n + nb, n));
        let win: Vec<f64> = (0..n)
            .map(|i| (self.weights[i] * self.frame_factor(i, weight2, form)).sqrt())
            .collect();
        let wout: Vec<f64> = (0..n)
            .map(|i| (self.weights[i] * self.frame_factor(i, weight2, form_out)).sqrt())
            .collect();
        let bout: Vec<f64> = (0..nb)
            .map(|t| {
                let o = self.octagon().unwrap();
                let sg = hyper::sigma(o.bary_position(t));
                (o.bary_weight(t) * Self::frame_factor_at(sg, weight2, form_out)).sqrt()
                    * 0.5f64.sqrt()
            })
            .collect();
        for j in 0..n {
            basis[j] = C64::new(1.0 / win[j], 0.0);
            col.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            self.scalar_op(OpKind::Dbar, weight2, form, twist, &basis, &mut col);
            for i in 0..n {
                mat[(i, j)] = col[i] * wout[i] * node_scale;
            }
            if let Some(o) = self.octagon() {
                o.bary_op(Some(OpKind::Dbar), weight2, form, twist, &basis, &mut bcol);
                for t in 0..nb {
                    mat[(n + t, j)] = bcol[t] * bout[t];
                }
            }
            basis[j] = C64::new(0.0, 0.0);
        }
        mat
    }
}
