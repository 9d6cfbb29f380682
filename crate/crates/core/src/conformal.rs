//! ħ-conformal-limit machinery: the R-rescaled metric family along a BB-slice
//! point, the residual N_{(u,R)} and its linearization, R-continuation down
//! the ladder, and the assembled flat family D_{R,ħ} with its R → 0 limit.
//!
//! The rescaled chain metric multiplies the h-adjoint of a grade-g block by
//! R^{2g}; everything else (Chern corrections, curvature of the constant
//! diagonal rescale) is unchanged. The metric-scale unknown is parameterized
//! by its grade-≥0 part — a real diagonal (traceless) section plus the strict
//! upper triangle — with the negative grades completed by the rescaled
//! adjoint, so the completed f is hermitian for the rescaled metric by
//! construction.

use std::sync::Arc;

use crate::bundle::{EndSection, GradedVHS, wedge_comm};
use crate::nahc::{
    FlatConnectionRep, MetricScale, SolveStep, dbar_end_adjoint, dbar_u, del_end_adjoint,
    residual_target, wedge_comm_adjoint,
};
use crate::strata::SliceVector;
use crate::surface::FormType;
use crate::{C64, Error, Result};

/// Grading weights m with m_j − m_{j+1} = 2 and Σ rk(E_j)·m_j = 0; the
/// rescaled metric is h·diag(R^{m_1},…,R^{m_ℓ}).
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConformalWeights {
    pub m: Vec<f64>,
}

/// The unique solution of the two linear constraints for a chain of rank-one
/// summands: m_j = ℓ + 1 − 2j (1-indexed).
pub fn conformal_weights(v: &GradedVHS) -> ConformalWeights {
    let ell = v.ell();
    let m: Vec<f64> = (1..=ell).map(|j| (ell as f64) + 1.0 - 2.0 * j as f64).collect();
    debug_assert!(m.iter().sum::<f64>().abs() < 1e-12);
    ConformalWeights { m }
}

/// Blockwise rescaled h-adjoint: the block of grade g in `s` contributes
/// r^{coeff·g + extra}·(that block)^{*h} to the output. At r = 0 the factor is
/// the monotone limit: 0 for positive exponents, 1 at exponent zero; negative
/// exponents on a nonzero block are a domain error.
fn adjoint_rescaled(
    v: &GradedVHS,
    s: &EndSection,
    r: f64,
    coeff: i64,
    extra: i64,
) -> Result<EndSection> {
    let mut adj = v.adjoint(s);
    let n = adj.n;
    let scale = s.max_abs().max(1e-300);
    for a in 0..n {
        for b in 0..n {
            // The output block (a,b) is the adjoint of the source block (b,a).
            let g = GradedVHS::grade(b, a);
            let e = coeff * g + extra;
            let factor = if r > 0.0 {
                r.powi(e as i32)
            } else if e > 0 {
                0.0
            } else if e == 0 {
                1.0
            } else {
                for i in 0..v.mesh.num_nodes() {
                    if adj.at(i, a, b).norm() > 1e-12 * scale {
                        return Err(Error::Validation(format!(
                            "rescaled adjoint diverges at R = 0: nonzero grade-{g} block"
                        )));
                    }
                }
                0.0
            };
            if factor != 1.0 {
                for i in 0..v.mesh.num_nodes() {
                    *adj.at_mut(i, a, b) *= factor;
                }
            }
        }
    }
    Ok(adj)
}

/// The R-dependent operator pieces of §the rescaled family at a slice point u:
/// β^{*h_R} (so ∂^{h_R}_u = ∂_0 − [β^{*h_R}∧·]), the combination R²Φ_u^{*h_R}
/// entering both the residual and the flat family, and the curvature
/// F_{(∂̄_u, h_R)} of the deformed holomorphic structure with the rescaled
/// metric.
pub struct RescaledFamily {
    pub r: f64,
    pub beta_star: EndSection,
    pub phi_star_r2: EndSection,
    pub curvature: EndSection,
}

pub fn rescaled_family_operators(
    v: &Arc<GradedVHS>,
    u: &SliceVector,
    r: f64,
) -> Result<RescaledFamily> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Validation(format!("R = {r} outside [0, 1]")));
    }
    let beta_star = adjoint_rescaled(v, &u.beta, r, 2, 0)?;
    let mut phi_u = v.phi0();
    phi_u.axpy(C64::new(1.0, 0.0), &u.phi);
    let phi_star_r2 = adjoint_rescaled(v, &phi_u, r, 2, 2)?;
    // F_{(∂̄_u, h_R)} = F_ref + ∂β − ∂̄(β^{*h_R}) + [β ∧ β^{*h_R}].
    let mut curvature = v.ref_curvature();
    curvature.axpy(C64::new(1.0, 0.0), &v.del_end(&u.beta)?);
    curvature.axpy(C64::new(-1.0, 0.0), &v.dbar_end(&beta_star)?);
    curvature.axpy(C64::new(1.0, 0.0), &wedge_comm(&u.beta, &beta_star)?);
    Ok(RescaledFamily { r, beta_star, phi_star_r2, curvature })
}

// ---------------------------------------------------------------------------
// Metric-scale parameterization: real diagonal (traceless) ⊕ strict upper.
// ---------------------------------------------------------------------------

/// Projection onto the parameter space: strict upper triangle kept, diagonal
/// reduced to its real traceless part, strict lower triangle dropped.
fn project_param(x: &EndSection) -> EndSection {
    let n = x.n;
    let mut out = EndSection::zero(&x.mesh, n, x.form);
    for i in 0..x.mesh.num_nodes() {
        let mut tr = 0.0;
        for r in 0..n {
            tr += x.at(i, r, r).re;
        }
        tr /= n as f64;
        for r in 0..n {
            *out.at_mut(i, r, r) = C64::new(x.at(i, r, r).re - tr, 0.0);
            for c in (r + 1)..n {
                *out.at_mut(i, r, c) = x.at(i, r, c);
            }
        }
    }
    out
}

fn strict_part(x: &EndSection, upper: bool) -> EndSection {
    let n = x.n;
    let mut out = EndSection::zero(&x.mesh, n, x.form);
    for i in 0..x.mesh.num_nodes() {
        for r in 0..n {
            for c in 0..n {
                if (upper && c > r) || (!upper && c < r) {
                    *out.at_mut(i, r, c) = x.at(i, r, c);
                }
            }
        }
    }
    out
}

/// Embedding E_R: completes a parameter x (grades ≥ 0) to the h_R-hermitian
/// f = x + Σ_{g>0} R^{2g}(x_g)^{*h}.
fn embed_param(v: &GradedVHS, x: &EndSection, r: f64) -> Result<EndSection> {
    let mut f = x.clone();
    f.axpy(C64::new(1.0, 0.0), &adjoint_rescaled(v, &strict_part(x, true), r, 2, 0)?);
    Ok(f)
}

/// Real adjoint of the embedding with respect to Re⟨·,·⟩_h on both sides.
fn embed_adjoint(v: &GradedVHS, y: &EndSection, r: f64) -> Result<EndSection> {
    let mut out = y.clone();
    out.axpy(C64::new(1.0, 0.0), &adjoint_rescaled(v, &strict_part(y, false), r, -2, 0)?);
    Ok(project_param(&out))
}

/// Checks that f lies in the image of the embedding (h_R-hermitian with real
/// traceless diagonal) and inside the conditioning bound.
fn validate_scale_r(v: &GradedVHS, f: &EndSection, r: f64) -> Result<()> {
    let rebuilt = embed_param(v, &project_param(f), r)?;
    let mut gap = rebuilt;
    gap.axpy(C64::new(-1.0, 0.0), f);
    let scale = f.max_abs().max(1e-300);
    if gap.max_abs() / scale > 1e-8 {
        return Err(Error::Validation(format!(
            "metric scale is not hermitian for the R-rescaled metric: gap {:.3e}",
            gap.max_abs() / scale
        )));
    }
    if f.max_abs() >= 5.0 {
        return Err(Error::Numeric(format!(
            "metric scale out of the conditioning bound: ‖f‖∞ = {:.3} ≥ 5",
            f.max_abs()
        )));
    }
    Ok(())
}

/// Pointwise (e^{−2f}, e^{+2f}) for a general (not necessarily h-hermitian)
/// section, by scaling-and-squaring Taylor series on the n×n fibers.
fn exp_pair_general(f: &EndSection) -> (EndSection, EndSection) {
    let n = f.n;
    let nn = f.mesh.num_nodes();
    let mut em = EndSection::zero(&f.mesh, n, f.form);
    let mut ep = EndSection::zero(&f.mesh, n, f.form);
    let mut m = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..nn {
        for (out, sign) in [(&mut em, -2.0), (&mut ep, 2.0)] {
            for r in 0..n {
                for c in 0..n {
                    m[r * n + c] = sign * f.at(i, r, c);
                }
            }
            let e = expm_dense(&m, n);
            for r in 0..n {
                for c in 0..n {
                    *out.at_mut(i, r, c) = e[r * n + c];
                }
            }
        }
    }
    (em, ep)
}

fn expm_dense(m: &[C64], n: usize) -> Vec<C64> {
    let norm: f64 = m.iter().map(|x| x.norm()).fold(0.0, f64::max) * n as f64;
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scale = 0.5f64.powi(s as i32);
    let mut id = vec![C64::new(0.0, 0.0); n * n];
    for r in 0..n {
        id[r * n + r] = C64::new(1.0, 0.0);
    }
    let mut acc = id.clone();
    let mut term = id;
    for k in 1..=16u32 {
        term = matmul_dense(&term, m, n);
        // After the rescale, term holds (M/2^s)^k / k!.
        let coef = scale / k as f64;
        for t in term.iter_mut() {
            *t *= coef;
        }
        for (a, t) in acc.iter_mut().zip(term.iter()) {
            *a += t;
        }
    }
    let mut out = acc;
    for _ in 0..s {
        out = matmul_dense(&out, &out, n);
    }
    out
}

fn matmul_dense(a: &[C64], b: &[C64], n: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); n * n];
    for r in 0..n {
        for k in 0..n {
            let ark = a[r * n + k];
            for c in 0..n {
                out[r * n + c] += ark * b[k * n + c];
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Residual and linearization.
// ---------------------------------------------------------------------------

/// ∂^{h_R}_u = ∂_0 − [β^{*h_R} ∧ ·] on endomorphism sections.
fn del_r(v: &GradedVHS, fam: &RescaledFamily, x: &EndSection) -> Result<EndSection> {
    let mut out = v.del_end(x)?;
    out.axpy(C64::new(-1.0, 0.0), &wedge_comm(&fam.beta_star, x)?);
    Ok(out)
}

/// N_{(u,R)}(f) = ∂̄_u(e^{−2f}∂_u^{h_R}(e^{2f})) + F_{(∂̄_u,h_R)}
/// + [Φ_u ∧ e^{−2f}(R²Φ_u^{*h_R})e^{2f}]; zero iff h_R·e^{2f} is the harmonic
/// metric for (∂̄_u, R·Φ_u). This is the raw displayed form; its derivative at
/// f is exactly twice `conformal_linearization` (at f = 0).
pub fn conformal_residual(
    v: &Arc<GradedVHS>,
    u: &SliceVector,
    r: f64,
    f: &EndSection,
) -> Result<EndSection> {
    validate_scale_r(v, f, r)?;
    let fam = rescaled_family_operators(v, u, r)?;
    conformal_residual_with(v, u, &fam, f)
}

fn conformal_residual_with(
    v: &Arc<GradedVHS>,
    u: &SliceVector,
    fam: &RescaledFamily,
    f: &EndSection,
) -> Result<EndSection> {
    let (em, ep) = exp_pair_general(f);
    let mut phi_u = v.phi0();
    phi_u.axpy(C64::new(1.0, 0.0), &u.phi);
    let mut res = dbar_u(v, &u.beta, &em.matmul(&del_r(v, fam, &ep)?)?)?;
    res.axpy(C64::new(1.0, 0.0), &fam.curvature);
    let psi = em.matmul(&fam.phi_star_r2)?.matmul(&ep)?;
    res.axpy(C64::new(1.0, 0.0), &wedge_comm(&phi_u, &psi)?);
    Ok(res)
}

/// Newton's working residual: the raw residual projected onto its
/// self-adjoint traceless part with respect to h_R·e^{2f}. The continuum
/// residual is fixed by this projection; the discarded part is O(h²) discrete
/// operator-commutation noise outside the equation's range.
fn projected_residual(
    v: &Arc<GradedVHS>,
    u: &SliceVector,
    fam: &RescaledFamily,
    f: &EndSection,
) -> Result<EndSection> {
    let mut res = conformal_residual_with(v, u, fam, f)?;
    let (em, ep) = exp_pair_general(f);
    let adj = em.matmul(&adjoint_rescaled(v, &res, fam.r, 2, 0)?)?.matmul(&ep)?;
    res.axpy(C64::new(1.0, 0.0), &adj);
    let n = res.n;
    for x in res.values.iter_mut() {
        *x *= 0.5;
    }
    for i in 0..v.mesh.num_nodes() {
        let mut tr = C64::new(0.0, 0.0);
        for r in 0..n {
            tr += res.at(i, r, r);
        }
        tr /= n as f64;
        for r in 0..n {
            *res.at_mut(i, r, r) -= tr;
        }
    }
    Ok(res)
}

/// Frozen linearization at f = 0 of the family residual:
/// L_R(ḟ) = ∂̄_u(∂_u^{h_R}ḟ) + [Φ_u ∧ [R²Φ_u^{*h_R} ∧ ḟ]]; at R = 0 this is
/// the displayed dN_{(u,0)}(0)ḟ = ∂̄_u ∂_E ḟ + [Φ_u ∧ [Φ* ∧ ḟ]].
pub fn conformal_linearization(
    v: &Arc<GradedVHS>,
    u: &SliceVector,
    r: f64,
    fdot: &EndSection,
) -> Result<EndSection> {
    let fam = rescaled_family_operators(v, u, r)?;
    let mut phi_u = v.phi0();
    phi_u.axpy(C64::new(1.0, 0.0), &u.phi);
    lin_r_apply(v, &u.beta, &phi_u, &fam, fdot)
}

fn lin_r_apply(
    v: &GradedVHS,
    beta: &EndSection,
    phi_u: &EndSection,
    fam: &RescaledFamily,
    f: &EndSection,
) -> Result<EndSection> {
    let mut out = dbar_u(v, beta, &del_r(v, fam, f)?)?;
    let inner = wedge_comm(&fam.phi_star_r2, f)?;
    out.axpy(C64::new(1.0, 0.0), &wedge_comm(phi_u, &inner)?);
    Ok(out)
}

fn lin_r_adjoint(
    v: &GradedVHS,
    beta: &EndSection,
    phi_u: &EndSection,
    fam: &RescaledFamily,
    g: &EndSection,
) -> Result<EndSection> {
    // (∂̄_u)* on (1,1) → (1,0).
    let mut a = dbar_end_adjoint(v, g, FormType::OneZero);
    if beta.max_abs() > 0.0 {
        a.axpy(C64::new(1.0, 0.0), &wedge_comm_adjoint(v, beta, g, FormType::OneZero));
    }
    // (∂_u^{h_R})* on (1,0) → (0,0).
    let mut out = del_end_adjoint(v, &a, FormType::Zero);
    if fam.beta_star.max_abs() > 0.0 {
        out.axpy(C64::new(-1.0, 0.0), &wedge_comm_adjoint(v, &fam.beta_star, &a, FormType::Zero));
    }
    // Zeroth-order bracket term.
    let b = wedge_comm_adjoint(v, phi_u, g, FormType::ZeroOne);
    out.axpy(C64::new(1.0, 0.0), &wedge_comm_adjoint(v, &fam.phi_star_r2, &b, FormType::Zero));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Newton solve per R and continuation.
// ---------------------------------------------------------------------------

/// Solves N_{(u,R)}(f) = 0 for the metric scale at family parameter R, warm
/// started from `f_guess` (which must be admissible for this R). Gauss–Newton
/// in the L⊕N₊ parameter with Armijo backtracking, as in the self-duality
/// solver.
pub fn solve_conformal_step(
    v: &Arc<GradedVHS>,
    u: &SliceVector,
    r: f64,
    f_guess: &MetricScale,
) -> Result<MetricScale> {
    if !(0.0 < r && r <= 1.0) {
        return Err(Error::Validation(format!("R = {r} outside (0, 1]")));
    }
    if f_guess.f.max_abs() > 0.0 {
        validate_scale_r(v, &f_guess.f, r)?;
    }
    let mut x = project_param(&f_guess.f);
    let mut history = Vec::new();
    newton_conformal(v, u, r, &mut x, &mut history)?;
    Ok(MetricScale { reference: v.clone(), f: embed_param(v, &x, r)? })
}

fn newton_conformal(
    v: &Arc<GradedVHS>,
    u: &SliceVector,
    r: f64,
    x: &mut EndSection,
    history: &mut Vec<SolveStep>,
) -> Result<()> {
    let fam = rescaled_family_operators(v, u, r)?;
    let mut phi_u = v.phi0();
    phi_u.axpy(C64::new(1.0, 0.0), &u.phi);
    let target = residual_target(v);
    let n = x.n;
    let max_newton = 50;
    for it in 0..max_newton {
        let f = embed_param(v, x, r)?;
        let res = projected_residual(v, u, &fam, &f)?;
        let rnorm = v.norm_end(&res);
        history.push(SolveStep { stage: r, iter: it, residual: rnorm, step_scale: 0.0, cg_iters: 0 });
        if rnorm < target {
            return Ok(());
        }
        // Gauss–Newton normal equations in the parameter space:
        // (E*L*LE)δ = −E*L*(N)/2, exactly PSD for the real inner product.
        let rhs = embed_adjoint(
            v,
            &lin_r_adjoint(v, &u.beta, &phi_u, &fam, &res.scaled(C64::new(-0.5, 0.0)))?,
            r,
        )?;
        let mesh = v.mesh.clone();
        let ip = |a: &[C64], b: &[C64]| -> f64 {
            let ea = EndSection { mesh: mesh.clone(), n, form: FormType::Zero, values: a.to_vec() };
            let eb = EndSection { mesh: mesh.clone(), n, form: FormType::Zero, values: b.to_vec() };
            v.inner_end(&ea, &eb).re
        };
        let apply = |z: &[C64]| -> Vec<C64> {
            let ez = EndSection { mesh: mesh.clone(), n, form: FormType::Zero, values: z.to_vec() };
            let emb = embed_param(v, &project_param(&ez), r).expect("embedding failed");
            let lz = lin_r_apply(v, &u.beta, &phi_u, &fam, &emb)
                .expect("linearized operator application failed");
            let back =
                lin_r_adjoint(v, &u.beta, &phi_u, &fam, &lz).expect("adjoint application failed");
            embed_adjoint(v, &back, r).expect("embedding adjoint failed").values
        };
        let (delta, cg_iters) = crate::linalg::cg_solve(apply, ip, &rhs.values, 1e-2, 6000)?;
        let delta = project_param(&EndSection {
            mesh: v.mesh.clone(),
            n,
            form: FormType::Zero,
            values: delta,
        });
        let mut alpha = 1.0f64;
        let mut accepted = false;
        while alpha >= 1.0 / 256.0 {
            let mut xtry = x.clone();
            xtry.axpy(C64::new(alpha, 0.0), &delta);
            let ftry = embed_param(v, &xtry, r)?;
            if ftry.max_abs() < 5.0 {
                let rtry = v.norm_end(&projected_residual(v, u, &fam, &ftry)?);
                if rtry <= (1.0 - 1e-4 * alpha) * rnorm {
                    *x = xtry;
                    let last = history.last_mut().unwrap();
                    last.step_scale = alpha;
                    last.cg_iters = cg_iters;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::Convergence(format!(
                "conformal Newton stagnated at R = {r}: residual {rnorm:.3e} after {it} iterations"
            )));
        }
    }
    let last = history.last().map(|s| s.residual).unwrap_or(f64::NAN);
    Err(Error::Convergence(format!(
        "conformal Newton exceeded {max_newton} iterations at R = {r}: residual {last:.3e}"
    )))
}

// ---------------------------------------------------------------------------
// Flat family and limit.
// ---------------------------------------------------------------------------

/// The flat connection D_{R,ħ} = ∂̄_E + ∂_E^{h_R e^{2f}} + ħ^{-1}Φ_u
/// + ħ·e^{−2f}(R²Φ_u^{*h_R})e^{2f}, stored as offsets from (∂̄_0, ∂_0^h).
pub fn family_connection(
    v: &Arc<GradedVHS>,
    u: &SliceVector,
    hbar: C64,
    r: f64,
    f: &EndSection,
) -> Result<FlatConnectionRep> {
    let fam = rescaled_family_operators(v, u, r)?;
    let (em, ep) = exp_pair_general(f);
    let hinv = C64::new(1.0, 0.0) / hbar;
    let mut eta = u.beta.clone();
    eta.axpy(hbar, &em.matmul(&fam.phi_star_r2)?.matmul(&ep)?);
    let mut theta = v.phi0();
    theta.axpy(C64::new(1.0, 0.0), &u.phi);
    let mut theta = theta.scaled(hinv);
    theta.axpy(C64::new(-1.0, 0.0), &fam.beta_star);
    theta.axpy(C64::new(1.0, 0.0), &em.matmul(&del_r(v, &fam, &ep)?)?);
    Ok(FlatConnectionRep { base: v.clone(), eta, theta })
}

/// The R → 0 limit D_{(u,0)} = ħ^{-1}Φ_u + ∂̄_E + ∂_E + β + ħΦ*, assembled
/// directly.
pub fn limit_connection(v: &Arc<GradedVHS>, u: &SliceVector, hbar: C64) -> FlatConnectionRep {
    let phi0 = v.phi0();
    let mut eta = u.beta.clone();
    eta.axpy(hbar, &v.adjoint(&phi0));
    let mut theta = phi0;
    theta.axpy(C64::new(1.0, 0.0), &u.phi);
    let theta = theta.scaled(C64::new(1.0, 0.0) / hbar);
    FlatConnectionRep { base: v.clone(), eta, theta }
}

/// One record of a conformal trajectory.
pub struct ConformalSample {
    pub r: f64,
    pub f: MetricScale,
    pub connection: FlatConnectionRep,
    pub residual: f64,
    pub flatness: f64,
    pub f_norm: f64,
    pub distance_to_limit: f64,
}

/// Condensed per-sample record for logs and reports.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SampleSummary {
    pub r: f64,
    pub residual: f64,
    pub flatness: f64,
    pub f_norm: f64,
    pub distance_to_limit: f64,
}

pub struct ConformalTrajectory {
    pub u: SliceVector,
    pub hbar: C64,
    pub samples: Vec<ConformalSample>,
    pub limit: FlatConnectionRep,
    /// Largest sampled R from which the distance to the limit decreases
    /// monotonically down the trajectory.
    pub monotone_below: f64,
    /// Set when continuation failed; names the largest solved R.
    pub truncation: Option<String>,
}

impl ConformalTrajectory {
    pub fn summaries(&self) -> Vec<SampleSummary> {
        self.samples
            .iter()
            .map(|s| SampleSummary {
                r: s.r,
                residual: s.residual,
                flatness: s.flatness,
                f_norm: s.f_norm,
                distance_to_limit: s.distance_to_limit,
            })
            .collect()
    }
}

/// Continuation down the R-ladder: geometric ratio ½ from R = 1 merged with
/// the requested sample points, warm-started; a failed step is retried with
/// refinement ratio ¾ from the last solved R. Any terminal failure truncates
/// the trajectory and records the largest solved R.
pub fn conformal_trajectory(
    v: &Arc<GradedVHS>,
    u: &SliceVector,
    hbar: C64,
    r_list: &[f64],
) -> Result<ConformalTrajectory> {
    let modulus = hbar.norm();
    if !(0.1..=10.0).contains(&modulus) {
        return Err(Error::Validation(format!(
            "ħ modulus {modulus:.3e} outside the supported annulus [0.1, 10]"
        )));
    }
    if r_list.is_empty() {
        return Err(Error::Validation("empty R sample list".into()));
    }
    for w in r_list.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::Validation("R samples must be strictly decreasing".into()));
        }
    }
    if r_list[0] > 1.0 || *r_list.last().unwrap() <= 0.0 {
        return Err(Error::Validation("R samples must lie in (0, 1]".into()));
    }
    let r_min = *r_list.last().unwrap();
    // Merged ladder: 1, ½, ¼, … down to r_min, plus the requested samples.
    let mut ladder: Vec<f64> = Vec::new();
    let mut g = 1.0f64;
    while g > r_min * (1.0 + 1e-12) {
        ladder.push(g);
        g *= 0.5;
    }
    ladder.extend_from_slice(r_list);
    ladder.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ladder.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let limit = limit_connection(v, u, hbar);
    let mut samples = Vec::new();
    let mut truncation = None;
    let mut f_prev = MetricScale::zero(v);
    let mut r_prev = 1.0f64;
    'ladder: for &r in &ladder {
        let mut solved = match solve_conformal_step(v, u, r, &f_prev) {
            Ok(m) => Some(m),
            Err(Error::Convergence(_)) => None,
            Err(e) => return Err(e),
        };
        if solved.is_none() {
            // Refine from the last solved R with ratio ¾ until reaching r.
            let mut r_t = r_prev;
            loop {
                r_t = (r_t * 0.75).max(r);
                match solve_conformal_step(v, u, r_t, &f_prev) {
                    Ok(m) => {
                        f_prev = reparameterize(v, &m, r_t);
                        if (r_t - r).abs() < 1e-15 {
                            solved = Some(m);
                            break;
                        }
                    }
                    Err(Error::Convergence(msg)) => {
                        truncation = Some(format!(
                            "continuation stalled at R = {r_t:.4e} (largest solved R = {r_prev:.4e}): {msg}"
                        ));
                        break 'ladder;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        let m = solved.unwrap();
        if r_list.iter().any(|&rq| (rq - r).abs() < 1e-12) {
            let connection = family_connection(v, u, hbar, r, &m.f)?;
            let fam = rescaled_family_operators(v, u, r)?;
            let residual = v.norm_end(&projected_residual(v, u, &fam, &m.f)?);
            let flatness = v.norm_end(&connection.flatness_residual()?);
            let distance_to_limit = connection.distance(&limit);
            samples.push(ConformalSample {
                r,
                f_norm: v.norm_end(&m.f),
                f: MetricScale { reference: v.clone(), f: m.f.clone() },
                connection,
                residual,
                flatness,
                distance_to_limit,
            });
        }
        f_prev = reparameterize(v, &m, r);
        r_prev = r;
    }
    // Longest suffix (in decreasing R) of strictly decreasing distances.
    let mut monotone_below = f64::NAN;
    for start in 0..samples.len() {
        if samples[start..].windows(2).all(|w| w[1].distance_to_limit < w[0].distance_to_limit) {
            monotone_below = samples[start].r;
            break;
        }
    }
    Ok(ConformalTrajectory { u: u.clone(), hbar, samples, limit, monotone_below, truncation })
}

/// Warm-start carry-over between ladder steps: the parameter part is reused;
/// the negative-grade completion is rebuilt for the next R at solve time.
fn reparameterize(v: &Arc<GradedVHS>, m: &MetricScale, _r: f64) -> MetricScale {
    MetricScale { reference: v.clone(), f: project_param(&m.f) }
}

/// Smallest singular value of the discrete dN_{(u,0)}(0) restricted to the
/// L⊕N₊ parameter space (Lemma 5.2 at desk scale), by inverse power iteration
/// on the normal operator.
pub fn limit_linearization_gap(v: &Arc<GradedVHS>, u: &SliceVector, iters: usize) -> Result<f64> {
    Ok(limit_linearization_witness(v, u, iters)?.0)
}

/// `limit_linearization_gap` together with the minimizing parameter direction,
/// so callers can inspect which mode realizes the smallest singular value.
pub fn limit_linearization_witness(
    v: &Arc<GradedVHS>,
    u: &SliceVector,
    iters: usize,
) -> Result<(f64, EndSection)> {
    let fam = rescaled_family_operators(v, u, 0.0)?;
    let mut phi_u = v.phi0();
    phi_u.axpy(C64::new(1.0, 0.0), &u.phi);
    let n = v.n();
    let mesh = v.mesh.clone();
    let ip = |a: &[C64], b: &[C64]| -> f64 {
        let ea = EndSection { mesh: mesh.clone(), n, form: FormType::Zero, values: a.to_vec() };
        let eb = EndSection { mesh: mesh.clone(), n, form: FormType::Zero, values: b.to_vec() };
        v.inner_end(&ea, &eb).re
    };
    let apply = |z: &[C64]| -> Vec<C64> {
        let ez = EndSection { mesh: mesh.clone(), n, form: FormType::Zero, values: z.to_vec() };
        // At R = 0 the embedding is the identity on the parameter space.
        let p = project_param(&ez);
        let lz = lin_r_apply(v, &u.beta, &phi_u, &fam, &p).expect("linearization failed");
        let back = lin_r_adjoint(v, &u.beta, &phi_u, &fam, &lz).expect("adjoint failed");
        project_param(&back).values
    };
    // Deterministic, fully supported start vector.
    let mut x = EndSection::zero(&v.mesh, n, FormType::Zero);
    for i in 0..v.mesh.num_nodes() {
        for r in 0..n {
            for c in r..n {
                let t = (1.0 + i as f64 * 0.37 + (r * n + c) as f64).sin();
                *x.at_mut(i, r, c) = if c == r { C64::new(t, 0.0) } else { C64::new(t, t * 0.5) };
            }
        }
    }
    let mut x = project_param(&x).values;
    let mut lam = f64::NAN;
    for _ in 0..iters {
        let (y, _) = crate::linalg::cg_solve(&apply, &ip, &x, 1e-8, 20000)?;
        let norm = ip(&y, &y).sqrt();
        if norm == 0.0 {
            return Err(Error::Numeric("inverse iteration collapsed to zero".into()));
        }
        for (xi, yi) in x.iter_mut().zip(y.iter()) {
            *xi = yi / norm;
        }
        let ax = apply(&x);
        lam = ip(&x, &ax);
    }
    let witness = EndSection { mesh: mesh.clone(), n, form: FormType::Zero, values: x };
    Ok((lam.max(0.0).sqrt(), witness))
}
