//! Hodge/BB slices at a chain VHS: the deformation operators D″, D′, harmonic
//! spaces 𝓗¹_j, the Kuranishi map and its inverse, the grade-recursive
//! gauge-fixing algorithm, and the ℂ*-action on slice data.
//!
//! Conventions: a slice vector is a pair (β, φ) with β a (0,1)-form and φ a
//! (1,0)-form endomorphism section; D″(β,φ) = ∂̄_E φ + [Φ₀∧β] and
//! D′(β,φ) = ∂_E^h β + [Φ₀^{*h}∧φ], both (1,1)-forms. The grade-j harmonic
//! space pairs β ∈ Ω^{0,1}(End_j) with φ ∈ Ω^{1,0}(End_{j−1}); the whole
//! grade scales by ξ^j under the slice ℂ*-action.

use std::sync::Arc;

use ndarray::Array2;

use crate::bundle::{EndSection, GradedVHS, project_grade, wedge_comm};
use crate::nahc::{dbar_end_adjoint, wedge_comm_adjoint};
use crate::surface::{FormType, OpKind};
use crate::{C64, Error, Result};

/// Membership flags of a slice vector, evaluated against a tolerance.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SliceFlags {
    pub in_hodge_slice: bool,
    pub in_bb_slice: bool,
    pub harmonic: bool,
}

/// Deformation pair (β, φ) at a chain VHS: β ∈ Ω^{0,1}(End E),
/// φ ∈ Ω^{1,0}(End E), identified with the Higgs bundle
/// (∂̄₀+β, Φ₀+φ) or the flat connection D₀+β+φ.
#[derive(Clone)]
pub struct SliceVector {
    pub base: Arc<GradedVHS>,
    pub beta: EndSection,
    pub phi: EndSection,
}

impl SliceVector {
    pub fn zero(v: &Arc<GradedVHS>) -> SliceVector {
        SliceVector {
            base: v.clone(),
            beta: EndSection::zero(&v.mesh, v.n(), FormType::ZeroOne),
            phi: EndSection::zero(&v.mesh, v.n(), FormType::OneZero),
        }
    }

    pub fn new(v: &Arc<GradedVHS>, beta: EndSection, phi: EndSection) -> Result<SliceVector> {
        if beta.form != FormType::ZeroOne || phi.form != FormType::OneZero {
            return Err(Error::Type(format!(
                "slice vector wants ((0,1),(1,0)) forms, got ({:?},{:?})",
                beta.form, phi.form
            )));
        }
        if beta.n != v.n() || phi.n != v.n() {
            return Err(Error::Type("slice vector rank mismatch".into()));
        }
        Ok(SliceVector { base: v.clone(), beta, phi })
    }

    pub fn axpy(&mut self, a: C64, other: &SliceVector) {
        self.beta.axpy(a, &other.beta);
        self.phi.axpy(a, &other.phi);
    }

    pub fn scaled(&self, a: C64) -> SliceVector {
        SliceVector {
            base: self.base.clone(),
            beta: self.beta.scaled(a),
            phi: self.phi.scaled(a),
        }
    }

    /// L² inner product of pairs (β-part plus φ-part).
    pub fn inner(&self, other: &SliceVector) -> C64 {
        let v = &self.base;
        v.inner_end(&self.beta, &other.beta) + v.inner_end(&self.phi, &other.phi)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).re.max(0.0).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.beta.max_abs().max(self.phi.max_abs())
    }

    /// Evaluates the membership flags against a relative tolerance.
    pub fn classify(&self, tol: f64) -> Result<SliceFlags> {
        let v = &self.base;
        let scale = 1.0 + self.norm();
        let (r2, r1) = slice_residual(v, self)?;
        let hodge = v.norm_end(&r2) / scale < tol && v.norm_end(&r1) / scale < tol;
        // Graded support: β in N₊, φ in L⊕N₊.
        let n = v.n();
        let mut graded = true;
        for i in 0..v.mesh.num_nodes() {
            for r in 0..n {
                for c in 0..n {
                    let g = GradedVHS::grade(r, c);
                    if g <= 0 && self.beta.at(i, r, c).norm() > tol {
                        graded = false;
                    }
                    if g < 0 && self.phi.at(i, r, c).norm() > tol {
                        graded = false;
                    }
                }
            }
        }
        let lin2 = d2_pair(v, self)?;
        let lin1 = d1_pair(v, self)?;
        let harmonic = v.norm_end(&lin2) / scale < tol && v.norm_end(&lin1) / scale < tol;
        Ok(SliceFlags {
            in_hodge_slice: hodge,
            in_bb_slice: hodge && graded,
            harmonic,
        })
    }
}

// ---------------------------------------------------------------------------
// Deformation operators.
// ---------------------------------------------------------------------------

/// D″ on the middle term: D″(β,φ) = ∂̄_E φ + [Φ₀∧β] ∈ Ω^{1,1}.
pub fn d2_pair(v: &GradedVHS, u: &SliceVector) -> Result<EndSection> {
    let mut out = v.dbar_end(&u.phi)?;
    out.axpy(C64::new(1.0, 0.0), &wedge_comm(&v.phi0(), &u.beta)?);
    Ok(out)
}

/// D′ on the middle term: D′(β,φ) = ∂_E^h β + [Φ₀^{*h}∧φ] ∈ Ω^{1,1}.
pub fn d1_pair(v: &GradedVHS, u: &SliceVector) -> Result<EndSection> {
    let mut out = v.del_end(&u.beta)?;
    out.axpy(C64::new(1.0, 0.0), &wedge_comm(&v.adjoint(&v.phi0()), &u.phi)?);
    Ok(out)
}

/// D″ on Ω⁰: f ↦ (∂̄_E f, [Φ₀∧f]) as a pair.
pub fn d2_zero(v: &Arc<GradedVHS>, f: &EndSection) -> Result<SliceVector> {
    Ok(SliceVector {
        base: v.clone(),
        beta: v.dbar_end(f)?,
        phi: wedge_comm(&v.phi0(), f)?,
    })
}

/// Quadrature adjoint of `d2_pair`: Ω^{1,1} → pairs.
pub fn d2_pair_adjoint(v: &Arc<GradedVHS>, g: &EndSection) -> SliceVector {
    SliceVector {
        base: v.clone(),
        beta: wedge_comm_adjoint(v, &v.phi0(), g, FormType::ZeroOne),
        phi: dbar_end_adjoint(v, g, FormType::OneZero),
    }
}

/// Quadrature adjoint of `d1_pair`: Ω^{1,1} → pairs.
pub fn d1_pair_adjoint(v: &Arc<GradedVHS>, g: &EndSection) -> SliceVector {
    SliceVector {
        base: v.clone(),
        beta: crate::nahc::del_end_adjoint(v, g, FormType::ZeroOne),
        phi: wedge_comm_adjoint(v, &v.adjoint(&v.phi0()), g, FormType::OneZero),
    }
}

/// Quadrature adjoint of `d2_zero`: pairs → Ω⁰.
pub fn d2_zero_adjoint(v: &GradedVHS, u: &SliceVector) -> EndSection {
    let mut out = dbar_end_adjoint(v, &u.beta, FormType::Zero);
    out.axpy(
        C64::new(1.0, 0.0),
        &wedge_comm_adjoint(v, &v.phi0(), &u.phi, FormType::Zero),
    );
    out
}

/// Entrywise Λ-contraction of a (1,1)-form endomorphism section:
/// Λ(c·dz∧dz̄) = −2i c/σ².
pub fn lambda_end(v: &GradedVHS, g: &EndSection) -> Result<EndSection> {
    if g.form != FormType::OneOne {
        return Err(Error::Type("lambda_end expects a (1,1)-form section".into()));
    }
    let mut out = g.clone();
    out.form = FormType::Zero;
    for i in 0..v.mesh.num_nodes() {
        let fac = C64::new(0.0, -2.0) / (v.mesh.sigma[i] * v.mesh.sigma[i]);
        for r in 0..g.n {
            for c in 0..g.n {
                *out.at_mut(i, r, c) *= fac;
            }
        }
    }
    Ok(out)
}

/// The two Hodge-slice residuals: (D″(β,φ) + [β∧φ], D′(β,φ)).
pub fn slice_residual(v: &GradedVHS, u: &SliceVector) -> Result<(EndSection, EndSection)> {
    let mut r2 = d2_pair(v, u)?;
    r2.axpy(C64::new(1.0, 0.0), &wedge_comm(&u.beta, &u.phi)?);
    Ok((r2, d1_pair(v, u)?))
}

// ---------------------------------------------------------------------------
// Harmonic bases.
// ---------------------------------------------------------------------------

/// Orthonormal bases of the positive-grade harmonic spaces 𝓗¹_j,
/// j = 1..ℓ; `per_grade[j-1]` spans 𝓗¹_j.
pub struct HarmonicBasis {
    pub base: Arc<GradedVHS>,
    pub per_grade: Vec<Vec<SliceVector>>,
}

impl HarmonicBasis {
    pub fn total_dim(&self) -> usize {
        self.per_grade.iter().map(Vec::len).sum()
    }

    /// Flat view of all basis vectors with their slice grade j.
    pub fn members(&self) -> impl Iterator<Item = (usize, &SliceVector)> {
        self.per_grade
            .iter()
            .enumerate()
            .flat_map(|(i, vs)| vs.iter().map(move |u| (i + 1, u)))
    }

    /// Coefficients of a pair in the basis (L² projection; the inner product
    /// is linear in its first slot).
    pub fn project(&self, u: &SliceVector) -> Vec<C64> {
        self.members().map(|(_, b)| u.inner(b)).collect()
    }

    /// Linear combination Σ cᵢ·basisᵢ.
    pub fn combine(&self, c: &[C64]) -> Result<SliceVector> {
        if c.len() != self.total_dim() {
            return Err(Error::Type(format!(
                "coefficient count {} vs basis dimension {}",
                c.len(),
                self.total_dim()
            )));
        }
        let mut out = SliceVector::zero(&self.base);
        for ((_, b), &ci) in self.members().zip(c.iter()) {
            out.axpy(ci, b);
        }
        Ok(out)
    }

    /// Stable identifier tying serialized coefficient vectors to this basis:
    /// grade dimensions plus a quadrature checksum of each member.
    pub fn fingerprint(&self) -> String {
        let dims: Vec<String> = self.per_grade.iter().map(|g| g.len().to_string()).collect();
        let mut sum = 0.0f64;
        for (j, b) in self.members() {
            sum += j as f64 * b.norm() + b.max_abs();
        }
        format!("dims[{}]-chk{:.6e}", dims.join(","), sum)
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct BasisCacheFile {
    n: usize,
    nn: usize,
    per_grade: Vec<Vec<(Vec<(f64, f64)>, Vec<(f64, f64)>)>>,
}

/// `harmonic_basis` with a disk cache: the SVD-based kernel extraction is by
/// far the most expensive computation in the crate, and the result is a pure
/// function of the chain data. Cached bases are re-verified (grading support
/// and harmonic residuals) before use and recomputed on any mismatch.
pub fn harmonic_basis_cached(v: &Arc<GradedVHS>, dir: &std::path::Path) -> Result<HarmonicBasis> {
    let nn = v.mesh.num_nodes();
    let key = format!(
        "hbasis-g{}-n{}-nn{}-h{:.6}-tw{:?}d{}.json",
        v.genus,
        v.n(),
        nn,
        v.mesh.h,
        v.twist.num,
        v.twist.den
    );
    let path = dir.join(key);
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(file) = serde_json::from_str::<BasisCacheFile>(&text) {
            if file.n == v.n() && file.nn == nn {
                if let Some(basis) = decode_basis_cache(v, &file) {
                    return Ok(basis);
                }
            }
        }
    }
    let basis = harmonic_basis(v)?;
    let file = BasisCacheFile {
        n: v.n(),
        nn,
        per_grade: basis
            .per_grade
            .iter()
            .map(|g| {
                g.iter()
                    .map(|u| {
                        (
                            u.beta.values.iter().map(|c| (c.re, c.im)).collect(),
                            u.phi.values.iter().map(|c| (c.re, c.im)).collect(),
                        )
                    })
                    .collect()
            })
            .collect(),
    };
    let _ = std::fs::create_dir_all(dir);
    if let Ok(text) = serde_json::to_string(&file) {
        let _ = std::fs::write(&path, text);
    }
    Ok(basis)
}

fn decode_basis_cache(v: &Arc<GradedVHS>, file: &BasisCacheFile) -> Option<HarmonicBasis> {
    let n = v.n();
    let nn = v.mesh.num_nodes();
    let mut per_grade = Vec::new();
    let h2 = v.mesh.h * v.mesh.h;
    for grade in &file.per_grade {
        let mut members = Vec::new();
        for (bv, pv) in grade {
            if bv.len() != nn * n * n || pv.len() != nn * n * n {
                return None;
            }
            let mut u = SliceVector::zero(v);
            for (dst, &(re, im)) in u.beta.values.iter_mut().zip(bv.iter()) {
                *dst = C64::new(re, im);
            }
            for (dst, &(re, im)) in u.phi.values.iter_mut().zip(pv.iter()) {
                *dst = C64::new(re, im);
            }
            // Re-verify: harmonic residuals at discretization scale, unit
            // norm, and orthogonality to the members decoded so far.
            let ok = d2_pair(v, &u).ok().is_some_and(|r| v.norm_end(&r) < 50.0 * h2)
                && d1_pair(v, &u).ok().is_some_and(|r| v.norm_end(&r) < 50.0 * h2)
                && (u.norm() - 1.0).abs() < 1e-8
                && members.iter().all(|m: &SliceVector| u.inner(m).norm() < 1e-8);
            if !ok {
                return None;
            }
            members.push(u);
        }
        per_grade.push(members);
    }
    if per_grade.len() != v.ell() {
        return None;
    }
    Some(HarmonicBasis { base: v.clone(), per_grade })
}

/// Per-column slot layout of the grade-j kernel problem.
struct GradeSlots {
    beta: Vec<(usize, usize)>,
    phi: Vec<(usize, usize)>,
}

fn grade_slots(n: usize, j: i64) -> GradeSlots {
    let mut beta = Vec::new();
    let mut phi = Vec::new();
    for r in 0..n {
        for c in 0..n {
            let g = GradedVHS::grade(r, c);
            if g == j {
                beta.push((r, c));
            }
            if g == j - 1 {
                phi.push((r, c));
            }
        }
    }
    GradeSlots { beta, phi }
}

/// Computes the harmonic spaces 𝓗¹_j, j = 1..ℓ, by singular-value kernel
/// extraction of the stacked weighted operator [D″; D′] per grade, with
/// barycenter overdetermination rows on the octagon backend and trace-penalty
/// rows pinning φ to 𝔰𝔩 where it has a grade-0 component.
pub fn harmonic_basis(v: &Arc<GradedVHS>) -> Result<HarmonicBasis> {
    let n = v.n();
    let mut per_grade = Vec::new();
    for j in 1..=v.ell() as i64 {
        let slots = grade_slots(n, j);
        if slots.beta.is_empty() && slots.phi.is_empty() {
            per_grade.push(Vec::new());
            continue;
        }
        let mat = grade_operator_matrix(v, &slots, j)?;
        // Measured spectra (level 4, n ∈ {2,3}): discrete-kernel band at
        // ≤ 0.09·h²σ_max, first continuum value ≥ 0.48 ≈ 1.1·h²σ_max; the
        // tightened threshold sits between with ≥ 2× margin on both sides.
        let kernel = crate::linalg::kernel_by_gap_scaled(&mat, v.mesh.h, 0.25)?;
        let mut basis = Vec::new();
        for vec in &kernel {
            basis.push(decode_kernel_vector(v, &slots, vec));
        }
        per_grade.push(basis);
    }
    Ok(HarmonicBasis { base: v.clone(), per_grade })
}

/// Full singular spectrum (ascending) of the stacked grade-j operator matrix;
/// diagnostic for kernel-threshold placement and Lemma-3.5-style gap reports.
pub fn grade_singular_values(v: &Arc<GradedVHS>, j: i64) -> Result<Vec<f64>> {
    let slots = grade_slots(v.n(), j);
    if slots.beta.is_empty() && slots.phi.is_empty() {
        return Ok(Vec::new());
    }
    let mat = grade_operator_matrix(v, &slots, j)?;
    use ndarray_linalg::SVD;
    let (_, sv, _) = mat
        .svd(false, false)
        .map_err(|e| Error::Numeric(format!("SVD failed: {e}")))?;
    let mut out: Vec<f64> = sv.to_vec();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(out)
}

fn slot_win(v: &GradedVHS, i: usize, rc: (usize, usize), form: FormType) -> f64 {
    // Mirror inner_end exactly, including the hscale ratio of the entry, so
    // that ℓ²-orthonormal kernel vectors decode to L²(h)-orthonormal pairs.
    (v.mesh.weights[i]
        * v.mesh.frame_factor(i, v.entry_weight2(rc.0, rc.1), form)
        * (v.hscale[rc.0] / v.hscale[rc.1]))
        .sqrt()
}

fn decode_kernel_vector(v: &Arc<GradedVHS>, slots: &GradeSlots, vec: &[C64]) -> SliceVector {
    let nn = v.mesh.num_nodes();
    let mut u = SliceVector::zero(v);
    let mut col = 0usize;
    for &rc in &slots.beta {
        for i in 0..nn {
            *u.beta.at_mut(i, rc.0, rc.1) =
                vec[col * nn + i] / slot_win(v, i, rc, FormType::ZeroOne);
        }
        col += 1;
    }
    for &rc in &slots.phi {
        for i in 0..nn {
            *u.phi.at_mut(i, rc.0, rc.1) =
                vec[col * nn + i] / slot_win(v, i, rc, FormType::OneZero);
        }
        col += 1;
    }
    u
}

/// Assembles the weighted matrix of the stacked grade-j operator
/// (β, φ) ↦ (D″(β,φ)_{j−1}, D′(β,φ)_j), so that plain ℓ² singular vectors
/// correspond to L²-orthonormal pairs. Row families: collocation nodes
/// (half quadrature), triangle barycenters (half quadrature, octagon only),
/// and trace rows when φ has a grade-0 component.
fn grade_operator_matrix(
    v: &Arc<GradedVHS>,
    slots: &GradeSlots,
    j: i64,
) -> Result<Array2<C64>> {
    let n = v.n();
    let nn = v.mesh.num_nodes();
    let nb = v.mesh.octagon().map_or(0, |o| o.bary_count());
    let node_scale = if nb > 0 { 0.5f64.sqrt() } else { 1.0 };
    let twist = &v.twist;
    // Output slots: D″ lands in End_{j−1} (= φ slots), D′ in End_j (= β slots).
    let out2 = &slots.phi;
    let out1 = &slots.beta;
    let with_trace = j == 1;
    let cols = (slots.beta.len() + slots.phi.len()) * nn;
    let rows = (out2.len() + out1.len()) * (nn + nb) + if with_trace { nn } else { 0 };
    let mut mat = Array2::zeros((rows, cols));
    let phi0 = v.phi0();
    let phi0s = v.adjoint(&phi0);

    let mut beta = EndSection::zero(&v.mesh, n, FormType::ZeroOne);
    let mut phi = EndSection::zero(&v.mesh, n, FormType::OneZero);
    let mut bary = vec![C64::new(0.0, 0.0); nb];
    let mut bary2 = vec![C64::new(0.0, 0.0); nb];
    let mut entry = vec![C64::new(0.0, 0.0); nn];

    // Precomputed output-row weights.
    let wout = |rc: (usize, usize), i: usize| -> f64 {
        (v.mesh.weights[i]
            * v.mesh.frame_factor(i, v.entry_weight2(rc.0, rc.1), FormType::OneOne)
            * (v.hscale[rc.0] / v.hscale[rc.1]))
            .sqrt()
    };
    let bout = |rc: (usize, usize), t: usize| -> f64 {
        let o = v.mesh.octagon().unwrap();
        let sg = crate::surface::hyper::sigma(o.bary_position(t));
        (o.bary_weight(t)
            * crate::surface::SurfaceMesh::frame_factor_at(
                sg,
                v.entry_weight2(rc.0, rc.1),
                FormType::OneOne,
            )
            * (v.hscale[rc.0] / v.hscale[rc.1]))
        .sqrt()
            * 0.5f64.sqrt()
    };

    let ncol = slots.beta.len() + slots.phi.len();
    for (s, &rc_in) in slots
        .beta
        .iter()
        .chain(slots.phi.iter())
        .enumerate()
        .map(|(s, rc)| (s, rc))
    {
        let is_beta = s < slots.beta.len();
        let form_in = if is_beta { FormType::ZeroOne } else { FormType::OneZero };
        for k in 0..nn {
            let win = slot_win(v, k, rc_in, form_in);
            if is_beta {
                *beta.at_mut(k, rc_in.0, rc_in.1) = C64::new(1.0 / win, 0.0);
            } else {
                *phi.at_mut(k, rc_in.0, rc_in.1) = C64::new(1.0 / win, 0.0);
            }
            let col = s * nn + k;
            // Node rows: full discrete operators.
            let br_phi = wedge_comm(&phi0, &beta)?; // [Φ₀∧β], part of D″
            let br_beta = wedge_comm(&phi0s, &phi)?; // [Φ₀*∧φ], part of D′
            let mut d2 = v.dbar_end(&phi)?;
            d2.axpy(C64::new(1.0, 0.0), &br_phi);
            let mut d1 = v.del_end(&beta)?;
            d1.axpy(C64::new(1.0, 0.0), &br_beta);
            let mut row = 0usize;
            for &rc in out2.iter() {
                for i in 0..nn {
                    mat[(row + i, col)] = d2.at(i, rc.0, rc.1) * wout(rc, i) * node_scale;
                }
                row += nn;
            }
            for &rc in out1.iter() {
                for i in 0..nn {
                    mat[(row + i, col)] = d1.at(i, rc.0, rc.1) * wout(rc, i) * node_scale;
                }
                row += nn;
            }
            // Barycenter rows (octagon): derivative evaluated directly at the
            // barycenter, zeroth-order bracket interpolated from node values.
            if let Some(o) = v.mesh.octagon() {
                for &rc in out2.iter() {
                    let w2 = v.entry_weight2(rc.0, rc.1);
                    for i in 0..nn {
                        entry[i] = phi.at(i, rc.0, rc.1);
                    }
                    o.bary_op(Some(OpKind::Dbar), w2, FormType::OneZero, twist, &entry, &mut bary);
                    for i in 0..nn {
                        entry[i] = br_phi.at(i, rc.0, rc.1);
                    }
                    o.bary_op(None, w2, FormType::OneOne, twist, &entry, &mut bary2);
                    for t in 0..nb {
                        // ∂̄ of a (1,0) entry picks up the dz̄∧dz sign.
                        mat[(row + t, col)] = (-bary[t] + bary2[t]) * bout(rc, t);
                    }
                    row += nb;
                }
                for &rc in out1.iter() {
                    let w2 = v.entry_weight2(rc.0, rc.1);
                    for i in 0..nn {
                        entry[i] = beta.at(i, rc.0, rc.1);
                    }
                    o.bary_op(Some(OpKind::Del), w2, FormType::ZeroOne, twist, &entry, &mut bary);
                    for i in 0..nn {
                        entry[i] = br_beta.at(i, rc.0, rc.1);
                    }
                    o.bary_op(None, w2, FormType::OneOne, twist, &entry, &mut bary2);
                    for t in 0..nb {
                        mat[(row + t, col)] = (bary[t] + bary2[t]) * bout(rc, t);
                    }
                    row += nb;
                }
            }
            // Trace rows pin the grade-0 φ component to 𝔰𝔩(E).
            if with_trace {
                for i in 0..nn {
                    let mut tr = C64::new(0.0, 0.0);
                    for r in 0..n {
                        tr += phi.at(i, r, r);
                    }
                    mat[(row + i, col)] = tr
                        * (v.mesh.weights[i] * v.mesh.frame_factor(i, 0, FormType::OneZero)).sqrt();
                }
            }
            if is_beta {
                *beta.at_mut(k, rc_in.0, rc_in.1) = C64::new(0.0, 0.0);
            } else {
                *phi.at_mut(k, rc_in.0, rc_in.1) = C64::new(0.0, 0.0);
            }
        }
        let _ = ncol;
    }
    Ok(mat)
}

// ---------------------------------------------------------------------------
// Kuranishi map.
// ---------------------------------------------------------------------------

/// Green solve for the D″-Laplacian on (1,1)-forms: returns G(ρ) with
/// D″(D″)* G(ρ) = ρ, by conjugate gradients (ρ must be L²-orthogonal to the
/// harmonic (1,1)-forms, which holds for pointwise-traceless brackets at a
/// stable VHS).
pub fn green_solve(v: &Arc<GradedVHS>, rho: &EndSection) -> Result<EndSection> {
    if rho.form != FormType::OneOne {
        return Err(Error::Type("green_solve expects a (1,1)-form".into()));
    }
    let n = rho.n;
    let mesh = v.mesh.clone();
    let ip = |a: &[C64], b: &[C64]| -> f64 {
        let ea = EndSection { mesh: mesh.clone(), n, form: FormType::OneOne, values: a.to_vec() };
        let eb = EndSection { mesh: mesh.clone(), n, form: FormType::OneOne, values: b.to_vec() };
        v.inner_end(&ea, &eb).re
    };
    let apply = |x: &[C64]| -> Vec<C64> {
        let ex = EndSection { mesh: mesh.clone(), n, form: FormType::OneOne, values: x.to_vec() };
        d2_pair(v, &d2_pair_adjoint(v, &ex))
            .expect("D″ Laplacian application failed")
            .values
    };
    let (x, _) = crate::linalg::cg_solve(apply, ip, &rho.values, 1e-12, 20000)?;
    Ok(EndSection { mesh: v.mesh.clone(), n, form: FormType::OneOne, values: x })
}

/// The Kuranishi correction (D″)*G([β∧φ]).
pub fn kuranishi_correction(v: &Arc<GradedVHS>, u: &SliceVector) -> Result<SliceVector> {
    let rho = wedge_comm(&u.beta, &u.phi)?;
    if v.norm_end(&rho) == 0.0 {
        return Ok(SliceVector::zero(v));
    }
    Ok(d2_pair_adjoint(v, &green_solve(v, &rho)?))
}

/// Kuranishi map k(u) = u + (D″)*G([β∧φ]), returned as coefficients over the
/// harmonic basis. Errors if the image fails to be harmonic (the map is only
/// defined on the Hodge slice).
pub fn kuranishi(basis: &HarmonicBasis, u: &SliceVector) -> Result<Vec<C64>> {
    let v = &basis.base;
    let mut k = u.clone();
    k.axpy(C64::new(1.0, 0.0), &kuranishi_correction(v, u)?);
    let c = basis.project(&k);
    // Harmonicity check: the basis reconstruction must capture k(u).
    let recon = basis.combine(&c)?;
    let mut gap = k.clone();
    gap.axpy(C64::new(-1.0, 0.0), &recon);
    let defect = gap.norm() / (1.0 + k.norm());
    let h2 = v.mesh.h * v.mesh.h;
    if defect > 10.0 * h2 {
        return Err(Error::Numeric(format!(
            "Kuranishi image is not harmonic: defect {defect:.3e} exceeds 10h² = {:.3e} \
             (is the input in the Hodge slice?)",
            10.0 * h2
        )));
    }
    Ok(c)
}

/// Inverse Kuranishi map: given coefficients c over 𝓗¹₊, produces the BB-slice
/// point u with k(u) = c. Computed by the pinned-harmonic fixed point
/// u ← w − (D″)*G([β∧φ]) (w = Σc·basis), globalized through the ℂ*-action for
/// large coefficients exactly as in the paper's equivariance argument.
pub fn kuranishi_inverse(basis: &HarmonicBasis, c: &[C64]) -> Result<SliceVector> {
    let v = &basis.base;
    // Pull large coefficients to small norm with a real ξ = t ∈ (0,1].
    let small = 0.25f64;
    let mut t = 1.0f64;
    for (j, &ci) in grade_of_coeffs(basis).iter().zip(c.iter()) {
        let a = ci.norm();
        if a > small {
            t = t.min((small / a).powf(1.0 / *j as f64));
        }
    }
    let c_small = cstar_on_coefficients(basis, c, C64::new(t, 0.0));
    let w = basis.combine(&c_small)?;
    let mut u = w.clone();
    let mut last = f64::INFINITY;
    for _ in 0..200 {
        let mut next = w.clone();
        next.axpy(C64::new(-1.0, 0.0), &kuranishi_correction(v, &u)?);
        let mut step = next.clone();
        step.axpy(C64::new(-1.0, 0.0), &u);
        let delta = step.norm();
        u = next;
        if delta < 1e-12 * (1.0 + u.norm()) {
            last = delta;
            break;
        }
        last = delta;
    }
    if last >= 1e-10 {
        return Err(Error::Convergence(format!(
            "Kuranishi-inverse fixed point stalled: last step {last:.3e}"
        )));
    }
    if (t - 1.0).abs() > 0.0 {
        u = cstar_on_slice(&u, C64::new(1.0 / t, 0.0))?;
    }
    Ok(u)
}

fn grade_of_coeffs(basis: &HarmonicBasis) -> Vec<usize> {
    basis.members().map(|(j, _)| j).collect()
}

// ---------------------------------------------------------------------------
// ℂ*-action on slice data.
// ---------------------------------------------------------------------------

/// Grade-weighted ℂ*-action on pairs: β_a ↦ ξ^a β_a, φ_a ↦ ξ^{a+1} φ_a for the
/// End-grade-a components; preserves both slices and 𝓗¹₊.
pub fn cstar_on_slice(u: &SliceVector, xi: C64) -> Result<SliceVector> {
    if xi.norm() == 0.0 {
        return Err(Error::Validation("ℂ*-action needs ξ ≠ 0".into()));
    }
    let n = u.base.n() as i64;
    let mut out = SliceVector::zero(&u.base);
    for a in (1 - n)..n {
        let xb = xi.powi(a as i32);
        let xp = xi.powi(a as i32 + 1);
        out.beta.axpy(xb, &project_grade(&u.beta, a));
        out.phi.axpy(xp, &project_grade(&u.phi, a));
    }
    Ok(out)
}

/// The induced action on harmonic coefficients: the grade-j coefficient
/// scales by ξ^j.
pub fn cstar_on_coefficients(basis: &HarmonicBasis, c: &[C64], xi: C64) -> Vec<C64> {
    grade_of_coeffs(basis)
        .iter()
        .zip(c.iter())
        .map(|(j, ci)| ci * xi.powi(*j as i32))
        .collect()
}

// ---------------------------------------------------------------------------
// Gauge fixing to the slice.
// ---------------------------------------------------------------------------

/// Which structure the pair (β, φ) deforms under gauge transformations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaugeMode {
    /// (∂̄₀+β, Φ₀+φ): the Higgs field conjugates without derivative terms.
    Higgs,
    /// D₀+β+φ: both connection halves pick up g^{-1}dg terms and the
    /// Φ₀^{*h} part of D₀ conjugates into β.
    DeRham,
}

/// Result of the grade-recursive gauge fixing: the slice point, the strictly
/// upper-graded gauge parameter f (g = 𝟙 + f), and the number of grade steps.
pub struct GaugeFixReport {
    pub slice: SliceVector,
    pub f: EndSection,
    pub steps: usize,
}

/// Inverse of g = 𝟙 + f for nilpotent f (finite Neumann series).
fn nilpotent_inverse(v: &GradedVHS, f: &EndSection) -> Result<EndSection> {
    let n = f.n;
    let mut inv = EndSection::zero(&f.mesh, n, FormType::Zero);
    for i in 0..f.mesh.num_nodes() {
        for r in 0..n {
            *inv.at_mut(i, r, r) = C64::new(1.0, 0.0);
        }
    }
    let mut power = f.clone();
    for k in 1..n {
        inv.axpy(C64::new(if k % 2 == 1 { -1.0 } else { 1.0 }, 0.0), &power);
        if k + 1 < n {
            power = power.matmul(f)?;
        }
    }
    let _ = v;
    Ok(inv)
}

fn identity_plus(v: &GradedVHS, f: &EndSection) -> EndSection {
    let n = f.n;
    let mut g = f.clone();
    for i in 0..v.mesh.num_nodes() {
        for r in 0..n {
            *g.at_mut(i, r, r) += C64::new(1.0, 0.0);
        }
    }
    g
}

/// Transforms the pair (β, φ) by the complex gauge g = 𝟙 + f, acting as
/// D ↦ g^{-1}∘D∘g on the structure selected by `mode`.
pub fn apply_gauge(
    v: &Arc<GradedVHS>,
    u: &SliceVector,
    f: &EndSection,
    mode: GaugeMode,
) -> Result<SliceVector> {
    let g = identity_plus(v, f);
    let ginv = nilpotent_inverse(v, f)?;
    let one = C64::new(1.0, 0.0);
    // (0,1)-part: β̃ = g⁻¹βg + g⁻¹∂̄g (+ g⁻¹Φ₀*g − Φ₀* in de Rham mode).
    let mut beta = ginv.matmul(&u.beta)?.matmul(&g)?;
    beta.axpy(one, &ginv.matmul(&v.dbar_end(f)?)?);
    if mode == GaugeMode::DeRham {
        let p0s = v.adjoint(&v.phi0());
        let mut conj = ginv.matmul(&p0s)?.matmul(&g)?;
        conj.axpy(-one, &p0s);
        beta.axpy(one, &conj);
    }
    // (1,0)-part: φ̃ = g⁻¹(Φ₀+φ)g − Φ₀ (+ g⁻¹∂₀ᴴg in de Rham mode).
    let mut tot = v.phi0();
    tot.axpy(one, &u.phi);
    let mut phi = ginv.matmul(&tot)?.matmul(&g)?;
    phi.axpy(-one, &v.phi0());
    if mode == GaugeMode::DeRham {
        phi.axpy(one, &ginv.matmul(&v.del_end(f)?)?);
    }
    SliceVector::new(v, beta, phi)
}

/// Integrability residual of the pair for its mode: the D″-slice equation for
/// Higgs data, flatness of D₀+β+φ for de Rham data; relative to the data size.
pub fn integrability_defect(v: &Arc<GradedVHS>, u: &SliceVector, mode: GaugeMode) -> Result<f64> {
    let scale = 1.0 + u.norm();
    match mode {
        GaugeMode::Higgs => {
            let mut r = d2_pair(v, u)?;
            r.axpy(C64::new(1.0, 0.0), &wedge_comm(&u.beta, &u.phi)?);
            Ok(v.norm_end(&r) / scale)
        }
        GaugeMode::DeRham => {
            let mut eta = v.adjoint(&v.phi0());
            eta.axpy(C64::new(1.0, 0.0), &u.beta);
            let mut theta = v.phi0();
            theta.axpy(C64::new(1.0, 0.0), &u.phi);
            let d = crate::nahc::FlatConnectionRep { base: v.clone(), eta, theta };
            Ok(v.norm_end(&d.flatness_residual()?) / scale)
        }
    }
}

/// Grade-recursive gauge fixing (unique for stable chains): finds the strictly
/// upper-graded f with g = 𝟙+f carrying the integrable pair (β, φ) into the
/// BB slice, one grade at a time. The grade-j D′-residual is exactly affine in
/// a grade-j gauge increment, res_j(f·(𝟙+f_j)) = res_j(f) + (D′D″ f_j)_j, so
/// each step is a least-squares solve of D′D″ f_j = −res_j via the normal
/// equations with the exact quadrature adjoints; extra passes absorb the
/// coupling through lower-grade data and stop on stagnation.
pub fn gauge_fix_to_slice(
    v: &Arc<GradedVHS>,
    u: &SliceVector,
    mode: GaugeMode,
) -> Result<GaugeFixReport> {
    let defect = integrability_defect(v, u, mode)?;
    if defect > 0.25 {
        return Err(Error::Validation(format!(
            "gauge_fix_to_slice: input is not integrable for {mode:?} (relative defect {defect:.3e})"
        )));
    }
    let n = v.n();
    let nn = v.mesh.num_nodes();
    let mut f = EndSection::zero(&v.mesh, n, FormType::Zero);
    let mut steps = 0usize;
    let scale = 1.0 + u.norm();
    for j in 1..=(v.ell() as i64 - 1) {
        let mut prev = f64::INFINITY;
        for _pass in 0..8 {
            let cur = apply_gauge(v, u, &f, mode)?;
            let res = project_grade(&d1_pair(v, &cur)?, j);
            let rn = v.norm_end(&res);
            if rn < 1e-12 * scale || rn > 0.9 * prev {
                break;
            }
            prev = rn;
            // Least-squares solve of M f_j = −res with M = (D′∘D″)|_{grade j},
            // as normal equations P M* M P (P = grade-j projection).
            let ip = |a: &[C64], b: &[C64]| -> f64 {
                let ea =
                    EndSection { mesh: v.mesh.clone(), n, form: FormType::Zero, values: a.to_vec() };
                let eb =
                    EndSection { mesh: v.mesh.clone(), n, form: FormType::Zero, values: b.to_vec() };
                v.inner_end(&ea, &eb).re
            };
            let m_apply = |x: &EndSection| -> EndSection {
                d1_pair(v, &d2_zero(v, x).expect("D″ application failed"))
                    .expect("D′ application failed")
            };
            let m_adjoint = |g: &EndSection| -> EndSection {
                d2_zero_adjoint(v, &d1_pair_adjoint(v, g))
            };
            let rhs = project_grade(&m_adjoint(&res.scaled(C64::new(-1.0, 0.0))), j);
            let apply = |x: &[C64]| -> Vec<C64> {
                let ex = project_grade(
                    &EndSection { mesh: v.mesh.clone(), n, form: FormType::Zero, values: x.to_vec() },
                    j,
                );
                project_grade(&m_adjoint(&m_apply(&ex)), j).values
            };
            let (x, _) = crate::linalg::cg_solve(apply, ip, &rhs.values, 1e-12, 20000)?;
            let fj = project_grade(
                &EndSection { mesh: v.mesh.clone(), n, form: FormType::Zero, values: x },
                j,
            );
            // Compose gauges: 𝟙 + f_new = (𝟙 + f)(𝟙 + f_j).
            let mut comp = f.clone();
            comp.axpy(C64::new(1.0, 0.0), &fj);
            comp.axpy(C64::new(1.0, 0.0), &f.matmul(&fj)?);
            f = comp;
        }
        steps += 1;
    }
    let _ = nn;
    let slice = apply_gauge(v, u, &f, mode)?;
    Ok(GaugeFixReport { slice, f, steps })
}
