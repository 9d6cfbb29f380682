//! λ-connections and the three holomorphic sections of the Hodge moduli space
//! over the λ-line (ℂ*-orbits, real twistor lines, the slice sections p_λ),
//! together with the hyperkähler tangent algebra (I, J, K), the symplectic
//! pairings ω_I, ω_J, and the stratum-transversality diagnostic.

use std::sync::Arc;

use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};

use crate::bundle::{EndSection, GradedVHS, HiggsPoint, wedge_comm};
use crate::nahc::{MetricScale, nhc_map, residual_norm, residual_target, solve_harmonic_metric};
use crate::strata::{HarmonicBasis, SliceVector};
use crate::surface::FormType;
use crate::{C64, Error, Result};

// ---------------------------------------------------------------------------
// λ-connections.
// ---------------------------------------------------------------------------

/// A λ-connection (λ, ∂̄_E, ∇_λ) stored as offsets from the reference chain
/// operators: ∂̄_E = ∂̄₀ + `dbar_off`, ∇_λ = λ·∂₀ʰ + `nabla_off`. λ = 0 is a
/// Higgs pair, λ = 1 a flat connection in the `FlatConnectionRep` sense.
#[derive(Clone)]
pub struct LambdaConnection {
    pub base: Arc<GradedVHS>,
    pub lambda: C64,
    pub dbar_off: EndSection,
    pub nabla_off: EndSection,
}

impl LambdaConnection {
    /// Integrability residual [∂̄_E, ∇_λ] = λF_ref + ∂̄₀θ̂ + λ∂₀ʰη̂ + [η̂∧θ̂]
    /// as a (1,1)-form section; zero for honest λ-connections.
    pub fn compatibility_residual(&self) -> Result<EndSection> {
        let v = &self.base;
        let one = C64::new(1.0, 0.0);
        let mut r = v.ref_curvature().scaled(self.lambda);
        r.axpy(one, &v.dbar_end(&self.nabla_off)?);
        r.axpy(self.lambda, &v.del_end(&self.dbar_off)?);
        r.axpy(one, &wedge_comm(&self.dbar_off, &self.nabla_off)?);
        Ok(r)
    }

    /// L² distance of the (λ, η̂, θ̂) data in the fixed chain frame.
    pub fn distance(&self, other: &LambdaConnection) -> f64 {
        let v = &self.base;
        let mut de = self.dbar_off.clone();
        de.axpy(C64::new(-1.0, 0.0), &other.dbar_off);
        let mut dt = self.nabla_off.clone();
        dt.axpy(C64::new(-1.0, 0.0), &other.nabla_off);
        ((self.lambda - other.lambda).norm_sqr()
            + v.norm_end(&de).powi(2)
            + v.norm_end(&dt).powi(2))
        .sqrt()
    }

    /// Conjugation by a constant diagonal gauge (commutes with the reference
    /// operators entrywise, so only the offsets transform).
    pub fn conjugate_by_diag(&self, g: &[C64]) -> LambdaConnection {
        LambdaConnection {
            base: self.base.clone(),
            lambda: self.lambda,
            dbar_off: crate::bundle::conjugate_by_diag(&self.dbar_off, g),
            nabla_off: crate::bundle::conjugate_by_diag(&self.nabla_off, g),
        }
    }
}

/// The slice section p_λ: (β, φ) ↦ (λ, ∂̄₀ + λΦ₀* + β, λ∂₀ʰ + Φ₀ + φ).
/// Requires the chain's reference metric to be harmonic (it is, for the
/// balanced chains produced by `make_fuchsian`).
pub fn p_lambda(v: &Arc<GradedVHS>, u: &SliceVector, lambda: C64) -> Result<LambdaConnection> {
    let rn = residual_norm(&HiggsPoint::vhs(v), &MetricScale::zero(v))?;
    if rn > 100.0 * residual_target(v) {
        return Err(Error::Validation(format!(
            "p_lambda requires a harmonic reference metric: self-duality residual {rn:.3e}"
        )));
    }
    let mut dbar_off = v.adjoint(&v.phi0()).scaled(lambda);
    dbar_off.axpy(C64::new(1.0, 0.0), &u.beta);
    let mut nabla_off = v.phi0();
    nabla_off.axpy(C64::new(1.0, 0.0), &u.phi);
    Ok(LambdaConnection { base: v.clone(), lambda, dbar_off, nabla_off })
}

/// The oper-stratum representative through the Hitchin-section point of the
/// differentials `qs`: p₁ of the q-insertion (§ partial opers).
pub fn oper_point(
    v: &Arc<GradedVHS>,
    qs: &[crate::surface::TwistedSection],
) -> Result<LambdaConnection> {
    let p = crate::bundle::hitchin_section(v, qs)?;
    let u = SliceVector::new(v, p.beta, p.phi)?;
    p_lambda(v, &u, C64::new(1.0, 0.0))
}

/// The Hodge ℂ*-action ξ·(λ, ∂̄_E, ∇_λ) = (ξλ, ∂̄_E, ξ∇_λ).
pub fn hod_cstar(c: &LambdaConnection, xi: C64) -> Result<LambdaConnection> {
    if xi.norm() == 0.0 {
        return Err(Error::Validation("hod_cstar needs ξ ≠ 0".into()));
    }
    Ok(LambdaConnection {
        base: c.base.clone(),
        lambda: xi * c.lambda,
        dbar_off: c.dbar_off.clone(),
        nabla_off: c.nabla_off.scaled(xi),
    })
}

/// The real twistor line through a solved Higgs pair:
/// ξ ↦ (ξ, ∂̄_E + ξΦ^{*h}, ξ∂_E^h + Φ). ξ = 0 returns the Higgs point,
/// ξ = 1 the nonabelian-Hodge flat connection.
pub fn twistor_line(p: &HiggsPoint, m: &MetricScale, xi: C64) -> Result<LambdaConnection> {
    let v = &p.base;
    let d = nhc_map(p, m)?;
    let phiu = p.total_phi();
    // nhc offsets split as η = β + (metric adjoint part), θ = Φ_u + (Chern
    // connection part); the twistor line scales exactly those parts by ξ.
    let mut dbar_off = d.eta.clone();
    dbar_off.axpy(C64::new(-1.0, 0.0), &p.beta);
    let mut dbar = p.beta.clone();
    dbar.axpy(xi, &dbar_off);
    let mut chern = d.theta.clone();
    chern.axpy(C64::new(-1.0, 0.0), &phiu);
    let mut nabla = phiu;
    nabla.axpy(xi, &chern);
    Ok(LambdaConnection { base: v.clone(), lambda: xi, dbar_off: dbar, nabla_off: nabla })
}

// ---------------------------------------------------------------------------
// Hyperkähler tangent algebra.
// ---------------------------------------------------------------------------

/// Tangent vector μ = β + φ at the chain VHS, with β ∈ Ω^{0,1}(End E) and
/// φ ∈ Ω^{1,0}(End E); adjoints are taken in the base harmonic metric.
#[derive(Clone)]
pub struct TangentPair {
    pub base: Arc<GradedVHS>,
    pub beta: EndSection,
    pub phi: EndSection,
}

impl TangentPair {
    pub fn from_slice(u: &SliceVector) -> TangentPair {
        TangentPair { base: u.base.clone(), beta: u.beta.clone(), phi: u.phi.clone() }
    }

    pub fn zero(v: &Arc<GradedVHS>) -> TangentPair {
        TangentPair {
            base: v.clone(),
            beta: EndSection::zero(&v.mesh, v.n(), FormType::ZeroOne),
            phi: EndSection::zero(&v.mesh, v.n(), FormType::OneZero),
        }
    }

    pub fn axpy(&mut self, a: C64, other: &TangentPair) {
        self.beta.axpy(a, &other.beta);
        self.phi.axpy(a, &other.phi);
    }

    pub fn scaled(&self, a: C64) -> TangentPair {
        TangentPair {
            base: self.base.clone(),
            beta: self.beta.scaled(a),
            phi: self.phi.scaled(a),
        }
    }

    pub fn inner(&self, other: &TangentPair) -> C64 {
        let v = &self.base;
        v.inner_end(&self.beta, &other.beta) + v.inner_end(&self.phi, &other.phi)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).re.max(0.0).sqrt()
    }
}

/// I(μ) = ⋆̄μ: (β, φ) ↦ (−iφ*, iβ*).
pub fn i_of(t: &TangentPair) -> TangentPair {
    let v = &t.base;
    TangentPair {
        base: v.clone(),
        beta: v.adjoint(&t.phi).scaled(C64::new(0.0, -1.0)),
        phi: v.adjoint(&t.beta).scaled(C64::new(0.0, 1.0)),
    }
}

/// J(μ) = iμ.
pub fn j_of(t: &TangentPair) -> TangentPair {
    t.scaled(C64::new(0.0, 1.0))
}

/// K(μ) = −i⋆̄μ: (β, φ) ↦ (−φ*, β*).
pub fn k_of(t: &TangentPair) -> TangentPair {
    let v = &t.base;
    TangentPair {
        base: v.clone(),
        beta: v.adjoint(&t.phi).scaled(C64::new(-1.0, 0.0)),
        phi: v.adjoint(&t.beta),
    }
}

/// Quadrature of ∫ tr(a) dz∧dz̄ for a (1,1)-form endomorphism section:
/// dz∧dz̄ = −2i/σ² times the hyperbolic area element.
fn trace_form_integral(v: &GradedVHS, a: &EndSection) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..v.mesh.num_nodes() {
        let mut tr = C64::new(0.0, 0.0);
        for r in 0..a.n {
            tr += a.at(i, r, r);
        }
        acc += v.mesh.weights[i] * C64::new(0.0, -2.0) / (v.mesh.sigma[i] * v.mesh.sigma[i]) * tr;
    }
    acc
}

/// ω_I^ℂ((β₁,φ₁),(β₂,φ₂)) = i∫Tr(φ₂∧β₁ − φ₁∧β₂).
pub fn omega_i(u1: &SliceVector, u2: &SliceVector) -> Result<C64> {
    let v = &u1.base;
    let mut a = u2.phi.matmul(&u1.beta)?;
    a.axpy(C64::new(-1.0, 0.0), &u1.phi.matmul(&u2.beta)?);
    Ok(C64::new(0.0, 1.0) * trace_form_integral(v, &a))
}

/// ω_J^ℂ(μ, ν) = ∫Tr(μ∧ν) = ∫Tr(φ_μ∧β_ν + β_μ∧φ_ν)
/// (β∧φ carries the dz̄∧dz sign).
pub fn omega_j(t1: &TangentPair, t2: &TangentPair) -> Result<C64> {
    let v = &t1.base;
    let mut a = t1.phi.matmul(&t2.beta)?;
    a.axpy(C64::new(-1.0, 0.0), &t1.beta.matmul(&t2.phi)?);
    Ok(trace_form_integral(v, &a))
}

// ---------------------------------------------------------------------------
// Transversality of the downward flow to the stratum (Thm.-1.3 diagnostic).
// ---------------------------------------------------------------------------

/// Per-direction finite-difference record: grade of the harmonic direction
/// and (t, relative error of Δ𝒯/t against μ − K(μ)) samples.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FdSlope {
    pub grade: usize,
    pub samples: Vec<(f64, f64)>,
}

/// Rank/condition report for the family {μ_i} ∪ {μ_i − K(μ_i)} over 𝓗¹₊,
/// plus finite-difference slopes of the NHC map along each direction.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TransversalityReport {
    pub dim_h1_plus: usize,
    pub family_size: usize,
    pub rank: usize,
    pub cond: f64,
    pub fd_slopes: Vec<FdSlope>,
}

/// Assembles the L² Gram matrix of {μ_i} ∪ {μ_i − K(μ_i)} and reports its
/// rank and condition number (full rank 2·dim 𝓗¹₊ ⟺ the flow tangent family
/// is transverse to the stratum tangent). For each direction, additionally
/// compares the finite difference (𝒯(tμ) − 𝒯(0))/t of the nonabelian Hodge
/// map — each sample solves the self-duality equation at tμ — against the
/// predicted derivative μ − K(μ).
pub fn transversality_check(
    v: &Arc<GradedVHS>,
    basis: &HarmonicBasis,
    fd_t: &[f64],
) -> Result<TransversalityReport> {
    let dim = basis.total_dim();
    let mut family: Vec<TangentPair> = Vec::with_capacity(2 * dim);
    let mut grades = Vec::new();
    for (j, u) in basis.members() {
        family.push(TangentPair::from_slice(u));
        grades.push(j);
    }
    for i in 0..dim {
        let mu = family[i].clone();
        let mut nu = mu.clone();
        nu.axpy(C64::new(-1.0, 0.0), &k_of(&mu));
        family.push(nu);
    }
    let m = family.len();
    let mut gram = Array2::<C64>::zeros((m, m));
    for a in 0..m {
        for b in 0..m {
            gram[(a, b)] = family[a].inner(&family[b]);
        }
    }
    let (vals, _) = gram
        .eigh(UPLO::Upper)
        .map_err(|e| Error::Numeric(format!("Gram eigensolve failed: {e}")))?;
    let vmax = vals.iter().cloned().fold(0.0f64, f64::max);
    let kept: Vec<f64> = vals.iter().cloned().filter(|&x| x > 1e-10 * vmax).collect();
    let rank = kept.len();
    let vmin = kept.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = vmax / vmin;

    // Finite-difference derivative of the NHC map along each direction.
    let d0 = nhc_map(&HiggsPoint::vhs(v), &MetricScale::zero(v))?;
    let mut fd_slopes = Vec::new();
    for (i, mu) in family.iter().take(dim).enumerate() {
        let mut nu = mu.clone();
        nu.axpy(C64::new(-1.0, 0.0), &k_of(mu));
        let nn = nu.norm();
        let mut samples = Vec::new();
        for &t in fd_t {
            let ts = C64::new(t, 0.0);
            let p = HiggsPoint {
                base: v.clone(),
                beta: mu.beta.scaled(ts),
                phi: mu.phi.scaled(ts),
            };
            let rep = solve_harmonic_metric(&p, &MetricScale::zero(v))?;
            let d = nhc_map(&p, &rep.scale)?;
            let inv_t = C64::new(1.0 / t, 0.0);
            let mut de = d.eta.clone();
            de.axpy(C64::new(-1.0, 0.0), &d0.eta);
            let mut dt = d.theta.clone();
            dt.axpy(C64::new(-1.0, 0.0), &d0.theta);
            let mut diff = TangentPair {
                base: v.clone(),
                beta: de.scaled(inv_t),
                phi: dt.scaled(inv_t),
            };
            diff.axpy(C64::new(-1.0, 0.0), &nu);
            samples.push((t, diff.norm() / nn));
        }
        fd_slopes.push(FdSlope { grade: grades[i], samples });
    }
    Ok(TransversalityReport {
        dim_h1_plus: dim,
        family_size: m,
        rank,
        cond,
        fd_slopes,
    })
}
