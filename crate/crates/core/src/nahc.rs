//! Harmonic-metric solver for the self-duality equation and the nonabelian
//! Hodge map: given a Higgs bundle near its chain VHS, find the Hermitian
//! metric scale h_ref·e^{2f} making F + [Φ∧Φ*] vanish, and assemble the flat
//! connection D = ∂̄_E + ∂_E^h + Φ + Φ^{*h}.

use std::sync::Arc;

use crate::bundle::{EndSection, GradedVHS, HiggsPoint, exp_pair, wedge_comm};
use crate::surface::{FormType, OpKind};
use crate::{C64, Error, Result};

/// Metric scale relative to a reference harmonic metric: h = h_ref·e^{2f} with
/// f an h_ref-hermitian traceless endomorphism field.
pub struct MetricScale {
    pub reference: Arc<GradedVHS>,
    pub f: EndSection,
}

impl MetricScale {
    pub fn zero(v: &Arc<GradedVHS>) -> MetricScale {
        MetricScale {
            reference: v.clone(),
            f: EndSection::zero(&v.mesh, v.n(), FormType::Zero),
        }
    }

    /// Validates hermiticity, tracelessness, and the conditioning bound.
    pub fn validate(&self) -> Result<()> {
        let v = &self.reference;
        let adj = v.adjoint(&self.f);
        let mut gap = self.f.clone();
        gap.axpy(C64::new(-1.0, 0.0), &adj);
        let scale = self.f.max_abs().max(1e-300);
        if gap.max_abs() / scale > 1e-8 {
            return Err(Error::Validation(format!(
                "metric scale is not h-hermitian: ‖f − f*‖∞/‖f‖∞ = {:.3e}",
                gap.max_abs() / scale
            )));
        }
        let tr_worst = self.f.trace().iter().map(|t| t.norm()).fold(0.0, f64::max);
        if tr_worst / scale > 1e-8 {
            return Err(Error::Validation(format!(
                "metric scale is not traceless: max |Tr f| = {tr_worst:.3e}"
            )));
        }
        if self.f.max_abs() >= 5.0 {
            return Err(Error::Numeric(format!(
                "metric scale out of the conditioning bound: ‖f‖∞ = {:.3} ≥ 5",
                self.f.max_abs()
            )));
        }
        Ok(())
    }
}

/// Flat connection stored as offsets from the reference pair (∂̄_0, ∂_0^h):
/// D = (∂̄_0 + η) + (∂_0^h + θ) with η a (0,1)- and θ a (1,0)-form
/// endomorphism section.
pub struct FlatConnectionRep {
    pub base: Arc<GradedVHS>,
    pub eta: EndSection,
    pub theta: EndSection,
}

impl FlatConnectionRep {
    /// Curvature F(D) = F_ref + ∂̄θ + ∂η + [η∧θ], as a (1,1)-form section.
    pub fn flatness_residual(&self) -> Result<EndSection> {
        let v = &self.base;
        let mut res = v.ref_curvature();
        res.axpy(C64::new(1.0, 0.0), &v.dbar_end(&self.theta)?);
        res.axpy(C64::new(1.0, 0.0), &v.del_end(&self.eta)?);
        res.axpy(C64::new(1.0, 0.0), &wedge_comm(&self.eta, &self.theta)?);
        Ok(res)
    }

    /// L² distance to another connection representative in the same frame.
    pub fn distance(&self, other: &FlatConnectionRep) -> f64 {
        let v = &self.base;
        let mut de = self.eta.clone();
        de.axpy(C64::new(-1.0, 0.0), &other.eta);
        let mut dt = self.theta.clone();
        dt.axpy(C64::new(-1.0, 0.0), &other.theta);
        (v.norm_end(&de).powi(2) + v.norm_end(&dt).powi(2)).sqrt()
    }
}

/// ∂̄ of the deformed holomorphic structure ∂̄_u = ∂̄_0 + β acting on
/// endomorphism sections.
pub fn dbar_u(v: &GradedVHS, beta: &EndSection, x: &EndSection) -> Result<EndSection> {
    let mut out = v.dbar_end(x)?;
    out.axpy(C64::new(1.0, 0.0), &wedge_comm(beta, x)?);
    Ok(out)
}

/// Chern (1,0)-operator ∂_u^h = ∂_0^h − β^{*h} acting on endomorphism
/// sections (h = reference harmonic metric).
pub fn del_u(v: &GradedVHS, beta: &EndSection, x: &EndSection) -> Result<EndSection> {
    let bstar = v.adjoint(beta);
    let mut out = v.del_end(x)?;
    out.axpy(C64::new(-1.0, 0.0), &wedge_comm(&bstar, x)?);
    Ok(out)
}

/// Curvature F_{(∂̄_u, h)} of the deformed holomorphic structure with the
/// reference metric: F_ref + ∂_E β − ∂̄_E β* + [β∧β*].
pub fn curvature_u(v: &GradedVHS, beta: &EndSection) -> Result<EndSection> {
    let bstar = v.adjoint(beta);
    let mut f = v.ref_curvature();
    f.axpy(C64::new(1.0, 0.0), &v.del_end(beta)?);
    f.axpy(C64::new(-1.0, 0.0), &v.dbar_end(&bstar)?);
    f.axpy(C64::new(1.0, 0.0), &wedge_comm(beta, &bstar)?);
    Ok(f)
}

/// Self-duality residual in metric-scale form:
/// N(f) = ∂̄_u(e^{−2f}∂_u^h(e^{2f})) + F_{(∂̄_u,h)} + [Φ_u ∧ e^{−2f}Φ_u^{*h}e^{2f}].
/// Zero iff h_ref·e^{2f} is the harmonic metric for (∂̄_u, Φ_u).
pub fn hitchin_residual(p: &HiggsPoint, m: &MetricScale) -> Result<EndSection> {
    m.validate()?;
    let v = &p.base;
    let (em, ep) = exp_pair(v, &m.f)?;
    // ∂̄_u(e^{−2f}·∂_u^h(e^{2f}))
    let dep = del_u(v, &p.beta, &ep)?;
    let inner = em.matmul(&dep)?;
    let mut res = dbar_u(v, &p.beta, &inner)?;
    // + F_{(∂̄_u, h)}
    res.axpy(C64::new(1.0, 0.0), &curvature_u(v, &p.beta)?);
    // + [Φ_u ∧ e^{−2f}Φ_u^{*h}e^{2f}]
    let phiu = p.total_phi();
    let psi = em.matmul(&v.adjoint(&phiu))?.matmul(&ep)?;
    res.axpy(C64::new(1.0, 0.0), &wedge_comm(&phiu, &psi)?);
    // The continuum residual is self-adjoint traceless with respect to the
    // current metric h·e^{2f}; keep exactly that part (the discrete defect is
    // O(h²) operator-commutation noise outside the equation's range).
    let adj = em.matmul(&v.adjoint(&res))?.matmul(&ep)?;
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

/// L² norm of the self-duality residual at (p, f).
pub fn residual_norm(p: &HiggsPoint, m: &MetricScale) -> Result<f64> {
    Ok(p.base.norm_end(&hitchin_residual(p, m)?))
}

/// Projection onto h-hermitian traceless endomorphism fields (the tangent
/// space of determinant-one metric scales), orthogonal in Re⟨·,·⟩.
fn project_htl(v: &GradedVHS, f: &EndSection) -> EndSection {
    let adj = v.adjoint(f);
    let n = f.n;
    let mut out = f.clone();
    for (o, a) in out.values.iter_mut().zip(adj.values.iter()) {
        *o = 0.5 * (*o + a);
    }
    for i in 0..f.mesh.num_nodes() {
        let mut tr = C64::new(0.0, 0.0);
        for r in 0..n {
            tr += out.at(i, r, r);
        }
        tr /= n as f64;
        for r in 0..n {
            *out.at_mut(i, r, r) -= tr;
        }
    }
    out
}

/// Entrywise quadrature adjoint of `dbar_end` (including the dz̄∧dz sign for
/// (1,0) inputs). `form_in` is the domain form type.
pub fn dbar_end_adjoint(v: &GradedVHS, g: &EndSection, form_in: FormType) -> EndSection {
    let form_out = match form_in {
        FormType::Zero => FormType::ZeroOne,
        FormType::OneZero => FormType::OneOne,
        other => panic!("dbar_end_adjoint: bad domain form {other:?}"),
    };
    let sign = if form_in == FormType::OneZero { -1.0 } else { 1.0 };
    scalar_end_adjoint(v, g, OpKind::Dbar, form_in, form_out, sign)
}

/// Entrywise quadrature adjoint of `del_end`.
pub fn del_end_adjoint(v: &GradedVHS, g: &EndSection, form_in: FormType) -> EndSection {
    let form_out = match form_in {
        FormType::Zero => FormType::OneZero,
        FormType::ZeroOne => FormType::OneOne,
        other => panic!("del_end_adjoint: bad domain form {other:?}"),
    };
    scalar_end_adjoint(v, g, OpKind::Del, form_in, form_out, 1.0)
}

fn scalar_end_adjoint(
    v: &GradedVHS,
    g: &EndSection,
    kind: OpKind,
    form_in: FormType,
    form_out: FormType,
    sign: f64,
) -> EndSection {
    let n = g.n;
    let nn = v.mesh.num_nodes();
    let mut out = EndSection::zero(&g.mesh, n, form_in);
    let mut buf_in = vec![C64::new(0.0, 0.0); nn];
    let mut buf_out = vec![C64::new(0.0, 0.0); nn];
    for r in 0..n {
        for c in 0..n {
            for i in 0..nn {
                buf_in[i] = g.at(i, r, c);
            }
            v.mesh.scalar_op_adjoint(
                kind,
                v.entry_weight2(r, c),
                form_in,
                form_out,
                &crate::surface::Twist::trivial(),
                &buf_in,
                &mut buf_out,
            );
            for i in 0..nn {
                *out.at_mut(i, r, c) = sign * buf_out[i];
            }
        }
    }
    out
}

/// Pointwise adjoint of f ↦ wedge_comm(x, f): g ↦ sign·(2/σ²)·[x^{*h}, g],
/// where sign mirrors the wedge sign table and 2/σ² is the frame-factor ratio
/// between the output and input form types (one form degree apart).
pub fn wedge_comm_adjoint(
    v: &GradedVHS,
    x: &EndSection,
    g: &EndSection,
    form_in: FormType,
) -> EndSection {
    use FormType::*;
    let sign = match (x.form, form_in) {
        (OneZero, ZeroOne) => 1.0,
        (ZeroOne, OneZero) => -1.0,
        (Zero, _) | (_, Zero) => 1.0,
        other => panic!("wedge_comm_adjoint: unsupported forms {other:?}"),
    };
    let xs = v.adjoint(x);
    let n = g.n;
    let mut out = EndSection::zero(&g.mesh, n, form_in);
    for i in 0..v.mesh.num_nodes() {
        let s = sign * 2.0 / (v.mesh.sigma[i] * v.mesh.sigma[i]);
        for r in 0..n {
            for c in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..n {
                    acc += xs.at(i, r, k) * g.at(i, k, c) - g.at(i, r, k) * xs.at(i, k, c);
                }
                *out.at_mut(i, r, c) = s * acc;
            }
        }
    }
    out
}

/// Frozen linearization of the self-duality residual (up to the overall
/// factor 2): L(ḟ) = ∂̄_u ∂_u^h ḟ + [Φ_u∧[Φ_u^{*h}∧ḟ]], exact discrete
/// operators throughout.
pub fn lin_apply(
    v: &GradedVHS,
    beta: &EndSection,
    phiu: &EndSection,
    phiu_star: &EndSection,
    f: &EndSection,
) -> Result<EndSection> {
    let t = del_u(v, beta, f)?;
    let mut out = dbar_u(v, beta, &t)?;
    let inner = wedge_comm(phiu_star, f)?;
    out.axpy(C64::new(1.0, 0.0), &wedge_comm(phiu, &inner)?);
    Ok(out)
}

/// Quadrature adjoint of `lin_apply`.
pub fn lin_adjoint(
    v: &GradedVHS,
    beta: &EndSection,
    phiu: &EndSection,
    phiu_star: &EndSection,
    g: &EndSection,
) -> Result<EndSection> {
    let bstar = v.adjoint(beta);
    // (∂̄_u)* on (1,1) → (1,0): entrywise adjoint + β-commutator adjoint.
    let mut a = dbar_end_adjoint(v, g, FormType::OneZero);
    if beta.max_abs() > 0.0 {
        a.axpy(C64::new(1.0, 0.0), &wedge_comm_adjoint(v, beta, g, FormType::OneZero));
    }
    // (∂_u^h)* on (1,0) → (0,0).
    let mut out = del_end_adjoint(v, &a, FormType::Zero);
    if beta.max_abs() > 0.0 {
        out.axpy(C64::new(-1.0, 0.0), &wedge_comm_adjoint(v, &bstar, &a, FormType::Zero));
    }
    // Adjoint of the zeroth-order bracket term.
    let b = wedge_comm_adjoint(v, phiu, g, FormType::ZeroOne);
    out.axpy(C64::new(1.0, 0.0), &wedge_comm_adjoint(v, phiu_star, &b, FormType::Zero));
    Ok(out)
}

/// Convergence target for the residual norm: absolute on the spectral torus,
/// area-scaled on the hyperbolic mesh.
pub fn residual_target(v: &GradedVHS) -> f64 {
    if v.genus >= 2 {
        1e-6 * v.mesh.total_mass()
    } else {
        1e-8
    }
}

/// Iteration log entry of the Newton solver.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SolveStep {
    pub stage: f64,
    pub iter: usize,
    pub residual: f64,
    pub step_scale: f64,
    pub cg_iters: usize,
}

pub struct SolveReport {
    pub scale: MetricScale,
    pub history: Vec<SolveStep>,
}

/// Damped inexact Newton for the self-duality equation. If the direct solve
/// stalls, restarts along a data ramp s·(β,φ), s ∈ {¼,½,¾,1}, warm-started.
pub fn solve_harmonic_metric(p: &HiggsPoint, f0: &MetricScale) -> Result<SolveReport> {
    f0.validate()?;
    match newton_stages(p, f0, &[1.0]) {
        Ok(rep) => Ok(rep),
        Err(Error::Convergence(_)) => newton_stages(p, f0, &[0.25, 0.5, 0.75, 1.0]),
        Err(e) => Err(e),
    }
}

fn newton_stages(p: &HiggsPoint, f0: &MetricScale, stages: &[f64]) -> Result<SolveReport> {
    let v = &p.base;
    let mut f = project_htl(v, &f0.f);
    let mut history = Vec::new();
    let target = residual_target(v);
    for &s in stages {
        // The ramp scales only the deformation (β, φ); the chain field stays.
        let ps = HiggsPoint {
            base: v.clone(),
            beta: p.beta.scaled(C64::new(s, 0.0)),
            phi: p.phi.scaled(C64::new(s, 0.0)),
        };
        newton_single(&ps, &mut f, s, target, &mut history)?;
    }
    Ok(SolveReport {
        scale: MetricScale { reference: v.clone(), f },
        history,
    })
}

fn newton_single(
    p: &HiggsPoint,
    f: &mut EndSection,
    stage: f64,
    target: f64,
    history: &mut Vec<SolveStep>,
) -> Result<()> {
    let v = &p.base;
    let phiu = p.total_phi();
    let phiu_star = v.adjoint(&phiu);
    let max_newton = 50;
    for it in 0..max_newton {
        let scale = MetricScale { reference: v.clone(), f: f.clone() };
        let res = hitchin_residual(p, &scale)?;
        let rnorm = v.norm_end(&res);
        history.push(SolveStep {
            stage,
            iter: it,
            residual: rnorm,
            step_scale: 0.0,
            cg_iters: 0,
        });
        if rnorm < target {
            return Ok(());
        }
        // Gauss–Newton on the frozen linearization: dN(δ) = 2L(δ) ≈ −N, solved
        // via the normal equations L*L δ = −L*(N)/2 (exactly SPD in quadrature).
        let rhs = project_htl(
            v,
            &lin_adjoint(
                v,
                &p.beta,
                &phiu,
                &phiu_star,
                &project_htl(v, &res.scaled(C64::new(-0.5, 0.0))),
            )?,
        );
        let ip = |a: &[C64], b: &[C64]| -> f64 {
            let ea = EndSection {
                mesh: v.mesh.clone(),
                n: rhs.n,
                form: FormType::Zero,
                values: a.to_vec(),
            };
            let eb = EndSection {
                mesh: v.mesh.clone(),
                n: rhs.n,
                form: FormType::Zero,
                values: b.to_vec(),
            };
            v.inner_end(&ea, &eb).re
        };
        let apply = |x: &[C64]| -> Vec<C64> {
            let ex = EndSection {
                mesh: v.mesh.clone(),
                n: rhs.n,
                form: FormType::Zero,
                values: x.to_vec(),
            };
            let lx = project_htl(
                v,
                &lin_apply(v, &p.beta, &phiu, &phiu_star, &project_htl(v, &ex))
                    .expect("linearized operator application failed"),
            );
            let back = lin_adjoint(v, &p.beta, &phiu, &phiu_star, &lx)
                .expect("adjoint operator application failed");
            project_htl(v, &back).values
        };
        let (delta, cg_iters) = crate::linalg::cg_solve(apply, ip, &rhs.values, 1e-2, 6000)?;
        let delta = EndSection {
            mesh: v.mesh.clone(),
            n: rhs.n,
            form: FormType::Zero,
            values: delta,
        };
        let delta = project_htl(v, &delta);
        // Armijo backtracking on the nonlinear residual norm.
        let mut alpha = 1.0f64;
        let mut accepted = false;
        while alpha >= 1.0 / 256.0 {
            let mut ftry = f.clone();
            ftry.axpy(C64::new(alpha, 0.0), &delta);
            if ftry.max_abs() < 5.0 {
                let mtry = MetricScale { reference: v.clone(), f: ftry.clone() };
                let rtry = v.norm_end(&hitchin_residual(p, &mtry)?);
                if rtry <= (1.0 - 1e-4 * alpha) * rnorm {
                    *f = ftry;
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
                "Newton stagnated at stage {stage}: residual {rnorm:.3e} after {it} iterations \
                 (no Armijo step)"
            )));
        }
    }
    let last = history.last().map(|s| s.residual).unwrap_or(f64::NAN);
    Err(Error::Convergence(format!(
        "Newton exceeded {max_newton} iterations at stage {stage}: residual {last:.3e}"
    )))
}

/// Nonabelian Hodge map at a solved metric: D = ∂̄_u + ∂_u^{h·e^{2f}} + Φ_u +
/// Φ_u^{*h·e^{2f}}, stored as offsets from the reference operators.
pub fn nhc_map(p: &HiggsPoint, m: &MetricScale) -> Result<FlatConnectionRep> {
    m.validate()?;
    let v = &p.base;
    let rnorm = residual_norm(p, m)?;
    let tol = 100.0 * residual_target(v);
    if rnorm > tol {
        return Err(Error::Validation(format!(
            "nhc_map requires a solved metric: self-duality residual {rnorm:.3e} > {tol:.3e}"
        )));
    }
    let (em, ep) = exp_pair(v, &m.f)?;
    let phiu = p.total_phi();
    // η = β + e^{−2f}Φ_u^{*h}e^{2f}
    let mut eta = p.beta.clone();
    eta.axpy(C64::new(1.0, 0.0), &em.matmul(&v.adjoint(&phiu))?.matmul(&ep)?);
    // θ = Φ_u − β^{*h} + e^{−2f}∂_u^h(e^{2f})
    let mut theta = phiu;
    theta.axpy(C64::new(-1.0, 0.0), &v.adjoint(&p.beta));
    theta.axpy(C64::new(1.0, 0.0), &em.matmul(&del_u(v, &p.beta, &ep)?)?);
    Ok(FlatConnectionRep { base: v.clone(), eta, theta })
}

/// Fit of log‖f(t)‖ against log t along a deformation direction; Prop.-3.9
/// style first-variation diagnostic. Returns (exponent, per-t norms); the
/// exponent is +∞ when the direction is zero.
pub fn first_variation_check(
    v: &Arc<GradedVHS>,
    beta: &EndSection,
    phi: &EndSection,
    t_list: &[f64],
) -> Result<(f64, Vec<(f64, f64)>)> {
    let scale = (v.norm_end(beta).powi(2) + v.norm_end(phi).powi(2)).sqrt();
    if scale == 0.0 {
        return Ok((f64::INFINITY, t_list.iter().map(|&t| (t, 0.0)).collect()));
    }
    let mut samples = Vec::new();
    for &t in t_list {
        if !(0.0..=0.2).contains(&t) || t == 0.0 {
            return Err(Error::Validation(format!("t = {t} outside (0, 0.2]")));
        }
        let p = HiggsPoint {
            base: v.clone(),
            beta: beta.scaled(C64::new(t, 0.0)),
            phi: phi.scaled(C64::new(t, 0.0)),
        };
        let rep = solve_harmonic_metric(&p, &MetricScale::zero(v))?;
        samples.push((t, v.norm_end(&rep.scale.f)));
    }
    // Least-squares slope of log‖f‖ vs log t.
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(_, n)| *n > 1e-14)
        .map(|&(t, n)| (t.ln(), n.ln()))
        .collect();
    if pts.len() < 2 {
        return Ok((f64::INFINITY, samples));
    }
    let m = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    Ok((slope, samples))
}
