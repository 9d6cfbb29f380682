//! Graded chains of line bundles (variations of Hodge structure), Higgs
//! bundles near such a chain, Hitchin-fibration invariants, the Hitchin
//! section, and the ℂ*-action with its grading gauge.

use std::sync::Arc;

use crate::surface::{FormType, SurfaceMesh, Twist, TwistedSection};
use crate::{C64, Error, Result};

/// Endomorphism-valued section over the mesh. Entry (r,c) at a node is the
/// component in Hom(E_c, E_r); as a line-bundle section it carries doubled
/// K-weight `weights2[r] − weights2[c]` (the summand twists cancel). Layout:
/// `values[node·n² + r·n + c]`.
#[derive(Clone)]
pub struct EndSection {
    pub mesh: Arc<SurfaceMesh>,
    pub n: usize,
    pub form: FormType,
    pub values: Vec<C64>,
}

impl EndSection {
    pub fn zero(mesh: &Arc<SurfaceMesh>, n: usize, form: FormType) -> Self {
        EndSection {
            mesh: mesh.clone(),
            n,
            form,
            values: vec![C64::new(0.0, 0.0); mesh.num_nodes() * n * n],
        }
    }

    #[inline]
    pub fn at(&self, node: usize, r: usize, c: usize) -> C64 {
        self.values[node * self.n * self.n + r * self.n + c]
    }

    #[inline]
    pub fn at_mut(&mut self, node: usize, r: usize, c: usize) -> &mut C64 {
        &mut self.values[node * self.n * self.n + r * self.n + c]
    }

    pub fn axpy(&mut self, a: C64, other: &EndSection) {
        assert_eq!(self.form, other.form, "axpy form mismatch");
        for (v, o) in self.values.iter_mut().zip(other.values.iter()) {
            *v += a * o;
        }
    }

    pub fn scaled(&self, a: C64) -> EndSection {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            *v *= a;
        }
        out
    }

    /// Pointwise matrix product (for 0-form factors; forms add as p+q ≤ 1,1).
    pub fn matmul(&self, other: &EndSection) -> Result<EndSection> {
        let p = self.form.p() + other.form.p();
        let q = self.form.q() + other.form.q();
        if p > 1 || q > 1 {
            return Err(Error::Type("matmul: resulting form degree out of range".into()));
        }
        let form = FormType::from_pq(p, q);
        let n = self.n;
        let mut out = EndSection::zero(&self.mesh, n, form);
        for i in 0..self.mesh.num_nodes() {
            for r in 0..n {
                for c in 0..n {
                    let mut acc = C64::new(0.0, 0.0);
                    for k in 0..n {
                        acc += self.at(i, r, k) * other.at(i, k, c);
                    }
                    *out.at_mut(i, r, c) = acc;
                }
            }
        }
        Ok(out)
    }

    /// Pointwise trace as a flat array (weight/form bookkeeping is the caller's:
    /// only grade-0 products have weight-0 traces).
    pub fn trace(&self) -> Vec<C64> {
        let n = self.n;
        let mut out = vec![C64::new(0.0, 0.0); self.mesh.num_nodes()];
        for (i, o) in out.iter_mut().enumerate() {
            for r in 0..n {
                *o += self.at(i, r, r);
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Graded commutator of form-valued endomorphisms [A∧B] = A∧B + B∧A for two
/// 1-forms, returning the dz∧dz̄ coefficient; for a 0-form factor this is the
/// plain commutator.
pub fn wedge_comm(a: &EndSection, b: &EndSection) -> Result<EndSection> {
    use FormType::*;
    let (sign, form) = match (a.form, b.form) {
        (OneZero, ZeroOne) => (1.0, OneOne),
        (ZeroOne, OneZero) => (-1.0, OneOne),
        (Zero, f) | (f, Zero) => (1.0, f),
        _ => {
            return Err(Error::Type(format!(
                "wedge_comm undefined on ({:?}, {:?})",
                a.form, b.form
            )));
        }
    };
    let ab = a.matmul(b)?;
    let ba = b.matmul(a)?;
    let mut out = EndSection::zero(&a.mesh, a.n, form);
    for (o, (x, y)) in out
        .values
        .iter_mut()
        .zip(ab.values.iter().zip(ba.values.iter()))
    {
        *o = sign * (x - y);
    }
    Ok(out)
}

/// A chain variation of Hodge structure: rank-1 summands E_j = K^{w2_j/2} ⊗ L
/// with subdiagonal Higgs blocks Φ_j : E_j → E_{j+1} ⊗ K, and a constant
/// per-summand harmonic scale (the harmonic metric is hscale_j·σ^{−w2_j}).
pub struct GradedVHS {
    pub mesh: Arc<SurfaceMesh>,
    /// Doubled K-powers of the summands, strictly decreasing by 2.
    pub weights2: Vec<i32>,
    pub twist: Twist,
    /// Higgs blocks Φ_j (weight-0 sections for the standard chain).
    pub phi_blocks: Vec<TwistedSection>,
    /// Constant harmonic scales c_j (the metric on E_j is c_j·σ^{−w2_j}).
    pub hscale: Vec<f64>,
    pub genus: u32,
}

impl GradedVHS {
    pub fn n(&self) -> usize {
        self.weights2.len()
    }
    pub fn ell(&self) -> usize {
        self.weights2.len()
    }

    /// Doubled K-weight of the (r,c) endomorphism entry.
    #[inline]
    pub fn entry_weight2(&self, r: usize, c: usize) -> i32 {
        self.weights2[r] - self.weights2[c]
    }

    /// Grade of the (r,c) entry: End_j collects entries with c − r = j.
    #[inline]
    pub fn grade(r: usize, c: usize) -> i64 {
        c as i64 - r as i64
    }

    /// Metric ratio H_c/H_r at a node (enters Hermitian adjoints).
    #[inline]
    pub fn metric_ratio(&self, node: usize, r: usize, c: usize) -> f64 {
        let sg = self.mesh.sigma[node];
        (self.hscale[c] / self.hscale[r]) * sg.powi(self.weights2[r] - self.weights2[c])
    }

    /// The chain Higgs field Φ_0 as an endomorphism-valued (1,0)-form.
    pub fn phi0(&self) -> EndSection {
        let n = self.n();
        let mut out = EndSection::zero(&self.mesh, n, FormType::OneZero);
        for j in 0..n - 1 {
            for i in 0..self.mesh.num_nodes() {
                *out.at_mut(i, j + 1, j) = self.phi_blocks[j].values[i];
            }
        }
        out
    }

    /// Hermitian adjoint with respect to the harmonic metric; flips (p,q).
    pub fn adjoint(&self, s: &EndSection) -> EndSection {
        let n = s.n;
        let form = FormType::from_pq(s.form.q(), s.form.p());
        let mut out = EndSection::zero(&s.mesh, n, form);
        for i in 0..s.mesh.num_nodes() {
            for r in 0..n {
                for c in 0..n {
                    *out.at_mut(i, r, c) = s.at(i, c, r).conj() * self.metric_ratio(i, r, c);
                }
            }
        }
        out
    }

    /// Weighted L² inner product of endomorphism sections of equal form type.
    pub fn inner_end(&self, a: &EndSection, b: &EndSection) -> C64 {
        assert_eq!(a.form, b.form, "inner_end form mismatch");
        let n = a.n;
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..self.mesh.num_nodes() {
            let w = self.mesh.weights[i];
            for r in 0..n {
                for c in 0..n {
                    let rho = SurfaceMesh::frame_factor_at(
                        self.mesh.sigma[i],
                        self.entry_weight2(r, c),
                        a.form,
                    ) * self.hscale[r]
                        / self.hscale[c];
                    acc += w * rho * a.at(i, r, c) * b.at(i, r, c).conj();
                }
            }
        }
        acc
    }

    pub fn norm_end(&self, a: &EndSection) -> f64 {
        self.inner_end(a, a).re.max(0.0).sqrt()
    }

    /// Entry-wise ∂̄ (the holomorphic structure of End for the chain).
    pub fn dbar_end(&self, s: &EndSection) -> Result<EndSection> {
        let form = match s.form {
            FormType::Zero => FormType::ZeroOne,
            FormType::OneZero => FormType::OneOne,
            other => return Err(Error::Type(format!("dbar_end on {other:?}"))),
        };
        self.scalar_end_op(s, form, crate::surface::OpKind::Dbar)
    }

    /// Entry-wise metric ∂ (Chern connection of the reference frame metric;
    /// valid because the harmonic scales are constant per summand).
    pub fn del_end(&self, s: &EndSection) -> Result<EndSection> {
        let form = match s.form {
            FormType::Zero => FormType::OneZero,
            FormType::ZeroOne => FormType::OneOne,
            other => return Err(Error::Type(format!("del_end on {other:?}"))),
        };
        self.scalar_end_op(s, form, crate::surface::OpKind::Del)
    }

    fn scalar_end_op(
        &self,
        s: &EndSection,
        form_out: FormType,
        kind: crate::surface::OpKind,
    ) -> Result<EndSection> {
        let n = s.n;
        let nn = self.mesh.num_nodes();
        let mut out = EndSection::zero(&s.mesh, n, form_out);
        let mut buf_in = vec![C64::new(0.0, 0.0); nn];
        let mut buf_out = vec![C64::new(0.0, 0.0); nn];
        let sign = if kind == crate::surface::OpKind::Dbar && s.form == FormType::OneZero {
            // ∂̄(f dz) = (∂̄f) dz̄∧dz = −(∂̄f) dz∧dz̄.
            -1.0
        } else if kind == crate::surface::OpKind::Del && s.form == FormType::ZeroOne {
            // ∂(f dz̄) = (∂f) dz∧dz̄.
            1.0
        } else {
            1.0
        };
        for r in 0..n {
            for c in 0..n {
                for i in 0..nn {
                    buf_in[i] = s.at(i, r, c);
                }
                self.mesh.scalar_op(
                    kind,
                    self.entry_weight2(r, c),
                    s.form,
                    &Twist::trivial(),
                    &buf_in,
                    &mut buf_out,
                );
                for i in 0..nn {
                    *out.at_mut(i, r, c) = sign * buf_out[i];
                }
            }
        }
        Ok(out)
    }

    /// Reference curvature of the summand metrics as an End-valued (1,1)-form
    /// (diagonal, dz∧dz̄ coefficient w2_j·σ²/4 on hyperbolic substrates).
    pub fn ref_curvature(&self) -> EndSection {
        let n = self.n();
        let mut out = EndSection::zero(&self.mesh, n, FormType::OneOne);
        for i in 0..self.mesh.num_nodes() {
            let ku = self.mesh.curvature_unit(i);
            for j in 0..n {
                *out.at_mut(i, j, j) = C64::new(self.weights2[j] as f64 * ku, 0.0);
            }
        }
        out
    }
}

/// The uniformizing (Fuchsian-type) chain VHS of rank n, with the harmonic
/// scales that solve the self-duality equation for the hyperbolic metric.
pub fn make_fuchsian(mesh: &Arc<SurfaceMesh>, n: usize, twist: Twist) -> Result<GradedVHS> {
    if mesh.genus < 2 {
        return Err(Error::Config(
            "Fuchsian chain VHS requires genus ≥ 2 (K must be positive)".into(),
        ));
    }
    if n < 2 {
        return Err(Error::Config("rank must be ≥ 2".into()));
    }
    if !twist.is_trivial() && n as u32 % twist.den != 0 {
        return Err(Error::Validation(format!(
            "twist must be n-torsion: denominator {} does not divide n = {n}",
            twist.den
        )));
    }
    let weights2: Vec<i32> = (1..=n as i32).map(|j| n as i32 + 1 - 2 * j).collect();
    // c_{j+1}/c_j = j(n−j)/4 with Π c_j = 1 solves the self-duality equation
    // for the hyperbolic reference metric.
    let mut logc = vec![0.0f64; n];
    for j in 1..n {
        let ratio = (j * (n - j)) as f64 / 4.0;
        logc[j] = logc[j - 1] + ratio.ln();
    }
    let mean: f64 = logc.iter().sum::<f64>() / n as f64;
    let hscale: Vec<f64> = logc.iter().map(|l| (l - mean).exp()).collect();
    let mut phi_blocks = Vec::with_capacity(n - 1);
    for _ in 0..n - 1 {
        let mut s = TwistedSection::zero(mesh, 0, Twist::trivial(), FormType::OneZero);
        s.values.iter_mut().for_each(|v| *v = C64::new(1.0, 0.0));
        phi_blocks.push(s);
    }
    Ok(GradedVHS {
        mesh: mesh.clone(),
        weights2,
        twist,
        phi_blocks,
        hscale,
        genus: mesh.genus,
    })
}

/// Number of admissible n-torsion twists on a genus-g surface: n^{2g}.
pub fn count_admissible_twists(n: u32, genus: u32) -> u128 {
    (n as u128).pow(2 * genus)
}

// ---------------------------------------------------------------------------
// Grading projections.
// ---------------------------------------------------------------------------

/// Projection onto End_j (entries with c − r = j).
pub fn project_grade(s: &EndSection, j: i64) -> EndSection {
    let n = s.n;
    let mut out = EndSection::zero(&s.mesh, n, s.form);
    for i in 0..s.mesh.num_nodes() {
        for r in 0..n {
            for c in 0..n {
                if GradedVHS::grade(r, c) == j {
                    *out.at_mut(i, r, c) = s.at(i, r, c);
                }
            }
        }
    }
    out
}

/// Projection onto N_+ = ⊕_{j>0} End_j (strict upper triangle).
pub fn project_nplus(s: &EndSection) -> EndSection {
    let n = s.n;
    let mut out = EndSection::zero(&s.mesh, n, s.form);
    for i in 0..s.mesh.num_nodes() {
        for r in 0..n {
            for c in (r + 1)..n {
                *out.at_mut(i, r, c) = s.at(i, r, c);
            }
        }
    }
    out
}

/// Projection onto L = End_0 ∩ 𝔰𝔩 (traceless diagonal).
pub fn project_l(s: &EndSection) -> EndSection {
    let n = s.n;
    let mut out = EndSection::zero(&s.mesh, n, s.form);
    for i in 0..s.mesh.num_nodes() {
        let mut tr = C64::new(0.0, 0.0);
        for r in 0..n {
            tr += s.at(i, r, r);
        }
        tr /= n as f64;
        for r in 0..n {
            *out.at_mut(i, r, r) = s.at(i, r, r) - tr;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Higgs points.
// ---------------------------------------------------------------------------

/// Higgs bundle in normal form near its chain VHS: ∂̄ = ∂̄_0 + β with β valued
/// in N_+, Φ = Φ_0 + φ with φ valued in L ⊕ N_+.
pub struct HiggsPoint {
    pub base: Arc<GradedVHS>,
    pub beta: EndSection,
    pub phi: EndSection,
}

impl HiggsPoint {
    pub fn vhs(base: &Arc<GradedVHS>) -> HiggsPoint {
        let n = base.n();
        HiggsPoint {
            base: base.clone(),
            beta: EndSection::zero(&base.mesh, n, FormType::ZeroOne),
            phi: EndSection::zero(&base.mesh, n, FormType::OneZero),
        }
    }

    /// The full Higgs field Φ_0 + φ.
    pub fn total_phi(&self) -> EndSection {
        let mut p = self.base.phi0();
        p.axpy(C64::new(1.0, 0.0), &self.phi);
        p
    }

    /// Integrability residual D″(β,φ) + [β∧φ] = ∂̄φ + [Φ_0∧β] + [β∧φ].
    pub fn integrability_residual(&self) -> Result<EndSection> {
        let mut res = self.base.dbar_end(&self.phi)?;
        res.axpy(C64::new(1.0, 0.0), &wedge_comm(&self.base.phi0(), &self.beta)?);
        res.axpy(C64::new(1.0, 0.0), &wedge_comm(&self.beta, &self.phi)?);
        Ok(res)
    }
}

/// Characteristic-polynomial invariants (q_2,…,q_n) of the Higgs field,
/// normalized so that for n=2 with φ = q·E_{01} the output is q itself
/// (q_k = −e_k(Φ), e_k the elementary symmetric functions of the eigenvalues).
pub fn hitchin_invariants(p: &HiggsPoint) -> Result<Vec<TwistedSection>> {
    let n = p.base.n();
    let phi = p.total_phi();
    let nn = p.base.mesh.num_nodes();
    let mut out: Vec<TwistedSection> = (2..=n)
        .map(|k| {
            TwistedSection::zero(
                &p.base.mesh,
                2 * k as i32,
                Twist::trivial(),
                FormType::Zero,
            )
        })
        .collect();
    for i in 0..nn {
        // Power traces p_k, then Newton's identities for e_k.
        let mut a = vec![C64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for c in 0..n {
                a[r * n + c] = phi.at(i, r, c);
            }
        }
        let mut pw = a.clone(); // Φ^1
        let mut ptr = vec![C64::new(0.0, 0.0); n + 1]; // power traces, 1-based
        for k in 1..=n {
            if k > 1 {
                let mut nx = vec![C64::new(0.0, 0.0); n * n];
                for r in 0..n {
                    for c in 0..n {
                        let mut acc = C64::new(0.0, 0.0);
                        for t in 0..n {
                            acc += pw[r * n + t] * a[t * n + c];
                        }
                        nx[r * n + c] = acc;
                    }
                }
                pw = nx;
            }
            for r in 0..n {
                ptr[k] += pw[r * n + r];
            }
        }
        let mut e = vec![C64::new(0.0, 0.0); n + 1];
        e[0] = C64::new(1.0, 0.0);
        for k in 1..=n {
            let mut acc = C64::new(0.0, 0.0);
            for j in 1..=k {
                let sgn = if j % 2 == 1 { 1.0 } else { -1.0 };
                acc += sgn * e[k - j] * ptr[j];
            }
            e[k] = acc / k as f64;
        }
        for (slot, k) in (2..=n).enumerate() {
            out[slot].values[i] = -e[k];
        }
    }
    Ok(out)
}

/// Coefficient pattern of the ker(ad_{Φ_0^*}) slot in grade j: the unique (up
/// to scale) X = Σ_r x_r E_{r,r+j} with [Φ_0^{*h}, X] = 0, normalized x_0 = 1.
pub fn cyclic_slot_pattern(v: &GradedVHS, j: usize) -> Vec<f64> {
    let n = v.n();
    let t = |r: usize| -> f64 { v.hscale[r + 1] / v.hscale[r] };
    let mut x = vec![1.0f64; n - j];
    for r in 0..n - j - 1 {
        x[r + 1] = x[r] * t(r + j) / t(r);
    }
    x
}

/// The Hitchin-section point for differentials (q_2,…,q_n): β = 0, each q_k
/// inserted into the ker(ad_{Φ_0^*}) slot of grade k−1.
pub fn hitchin_section(v: &Arc<GradedVHS>, qs: &[TwistedSection]) -> Result<HiggsPoint> {
    let n = v.n();
    if qs.len() != n - 1 {
        return Err(Error::Type(format!(
            "expected {} differentials for rank {n}, got {}",
            n - 1,
            qs.len()
        )));
    }
    let mut p = HiggsPoint::vhs(v);
    for (slot, q) in qs.iter().enumerate() {
        let k = slot + 2;
        if q.weight2 != 2 * k as i32 {
            return Err(Error::Type(format!(
                "q_{k} must have doubled weight {}, got {}",
                2 * k,
                q.weight2
            )));
        }
        // Holomorphy check at discretization tolerance.
        let dq = v.mesh.dbar(q)?;
        let tol = 10.0 * v.mesh.h * v.mesh.h * (q.norm() + 1e-300);
        if dq.norm() > tol.max(1e-12) {
            return Err(Error::Validation(format!(
                "q_{k} is not holomorphic: ‖∂̄q‖ = {:.3e} (tol {:.3e})",
                dq.norm(),
                tol
            )));
        }
        let j = k - 1;
        let pat = cyclic_slot_pattern(v, j);
        for i in 0..v.mesh.num_nodes() {
            for (r, &x) in pat.iter().enumerate() {
                *p.phi.at_mut(i, r, r + j) += q.values[i] * x;
            }
        }
    }
    Ok(p)
}

// ---------------------------------------------------------------------------
// ℂ*-action.
// ---------------------------------------------------------------------------

/// Multiply the full Higgs field by ξ (the moduli-level ℂ*-action). The result
/// is generally not in normal form: its φ includes (ξ−1)Φ_0.
pub fn cstar_scale(p: &HiggsPoint, xi: C64) -> Result<HiggsPoint> {
    if xi.norm() == 0.0 {
        return Err(Error::Validation("ℂ*-action requires ξ ≠ 0".into()));
    }
    let mut phi = p.total_phi().scaled(xi);
    phi.axpy(C64::new(-1.0, 0.0), &p.base.phi0());
    Ok(HiggsPoint {
        base: p.base.clone(),
        beta: p.beta.clone(),
        phi,
    })
}

/// The grading gauge g_ξ = diag(ξ^a, …, ξ^{a−ℓ+1}) with Σ rk·(a−j) = 0,
/// returned as the list of diagonal values.
pub fn g_xi_gauge(v: &GradedVHS, xi: C64) -> Result<Vec<C64>> {
    if xi.norm() == 0.0 {
        return Err(Error::Validation("g_ξ requires ξ ≠ 0".into()));
    }
    let ell = v.ell() as f64;
    let a = (ell - 1.0) / 2.0;
    let lx = xi.ln();
    Ok((0..v.ell())
        .map(|j| ((a - j as f64) * lx).exp())
        .collect())
}

/// Conjugate an endomorphism section by a constant diagonal gauge:
/// s ↦ g s g^{-1}, entrywise s_{rc} ↦ (g_r/g_c)·s_{rc}. A grade-j entry of ξΦ
/// conjugated by g_ξ picks up ξ^{j}·ξ = ξ^{j+1}, the graded scaling law.
pub fn conjugate_by_diag(s: &EndSection, g: &[C64]) -> EndSection {
    let n = s.n;
    let mut out = s.clone();
    for i in 0..s.mesh.num_nodes() {
        for r in 0..n {
            for c in 0..n {
                *out.at_mut(i, r, c) = s.at(i, r, c) * g[r] / g[c];
            }
        }
    }
    out
}

/// Decomposition of an endomorphism section into its graded parts
/// End_{−(n−1)},…,End_{n−1}; the parts sum to the input exactly.
pub fn end_grading(s: &EndSection, v: &GradedVHS) -> Result<Vec<EndSection>> {
    if s.n != v.n() {
        return Err(Error::Type(format!(
            "end_grading: section rank {} does not match VHS rank {}",
            s.n,
            v.n()
        )));
    }
    let n = s.n as i64;
    Ok((-(n - 1)..=(n - 1)).map(|j| project_grade(s, j)).collect())
}

/// BB limit of a normal-form Higgs point: its base chain VHS.
pub fn bb_limit(p: &HiggsPoint) -> Arc<GradedVHS> {
    p.base.clone()
}

/// Higgs-field energy ‖Φ‖² = i∫Tr(Φ∧Φ^{*h·e^{2f}}).
pub fn higgs_energy(p: &HiggsPoint, f: Option<&EndSection>) -> Result<f64> {
    let phi = p.total_phi();
    let mut star = p.base.adjoint(&phi);
    if let Some(fm) = f {
        // Φ^{*H} = e^{−2f} Φ^{*h} e^{2f}.
        let (em, ep) = exp_pair(&p.base, fm)?;
        star = em.matmul(&star)?.matmul(&ep)?;
    }
    // i∫Tr(Φ∧Φ*) with ∫ c dz∧dz̄ = −2i Σ w_i c_i / σ_i².
    let prod = phi.matmul(&star)?;
    let tr = prod.trace();
    let mut acc = 0.0;
    for (i, t) in tr.iter().enumerate() {
        acc += 2.0 * p.base.mesh.weights[i] * t.re / (p.base.mesh.sigma[i].powi(2));
    }
    Ok(acc)
}

/// (e^{−2f}, e^{2f}) for an h-hermitian 0-form endomorphism field. An
/// h-hermitian matrix satisfies f† = HfH^{-1}, so it is conjugated to a plain
/// hermitian matrix by H^{1/2} before the eigendecomposition.
pub fn exp_pair(v: &GradedVHS, f: &EndSection) -> Result<(EndSection, EndSection)> {
    let n = f.n;
    let mut ep = EndSection::zero(&f.mesh, n, FormType::Zero);
    let mut em = EndSection::zero(&f.mesh, n, FormType::Zero);
    let mut buf = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..f.mesh.num_nodes() {
        // d_r = H_r^{1/2}; only the ratios d_r/d_c enter.
        let sg = f.mesh.sigma[i];
        let d: Vec<f64> = (0..n)
            .map(|j| (v.hscale[j] * sg.powi(-v.weights2[j])).sqrt())
            .collect();
        for r in 0..n {
            for c in 0..n {
                buf[r * n + c] = 2.0 * f.at(i, r, c) * (d[r] / d[c]);
            }
        }
        let e = crate::linalg::expm_hermitian(&buf, n)?;
        for r in 0..n {
            for c in 0..n {
                *ep.at_mut(i, r, c) = e[r * n + c] * (d[c] / d[r]);
            }
        }
        for x in buf.iter_mut() {
            *x = -*x;
        }
        let e = crate::linalg::expm_hermitian(&buf, n)?;
        for r in 0..n {
            for c in 0..n {
                *em.at_mut(i, r, c) = e[r * n + c] * (d[c] / d[r]);
            }
        }
    }
    Ok((em, ep))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    NotStable,
    Indeterminate,
}

/// Chain-VHS stability: every Φ-invariant tail E_k⊕…⊕E_ℓ (k ≥ 2) must have
/// negative degree; degrees are exact integers w2_j·(g−1) (doubled K-powers).
pub fn check_vhs_stability_chain(v: &GradedVHS) -> Stability {
    for b in &v.phi_blocks {
        if b.norm() == 0.0 {
            return Stability::Indeterminate;
        }
    }
    let g1 = v.genus as i64 - 1;
    let ell = v.ell();
    for k in 1..ell {
        let tail: i64 = v.weights2[k..].iter().map(|&w| w as i64 * g1).sum();
        if tail >= 0 {
            return Stability::NotStable;
        }
    }
    Stability::Stable
}
