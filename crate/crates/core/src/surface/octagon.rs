//! Bolza-surface backend: finite differences on the regular hyperbolic octagon.
//!
//! The fundamental domain is the regular octagon in the Poincaré disk with side
//! midpoints at angles kπ/4 (distance d_in = arccosh(1+√2) from the origin) and
//! vertices at angles (2k+1)π/8 (distance R = arccosh(3+2√2)). Opposite sides
//! are identified by hyperbolic translations A_k of length 2·d_in along the
//! side-midpoint axes; all eight vertices project to a single smooth point
//! (cone angle 8·π/4 = 2π) and the quotient is the genus-2 Bolza surface.
//!
//! The mesh is the L-fold geodesic-midpoint refinement of the eight
//! center–vertex–vertex triangles, identified along the boundary. Quadrature is
//! the exact Gauss–Bonnet triangle area (angle deficit) distributed to corners,
//! so the total mass is exactly 4π. First derivatives are weighted
//! least-squares fits of quadratic polynomials in (u,ū) over the 2-ring of each
//! node; neighbors across the boundary enter through their unique nearby
//! Γ-translate together with the automorphy factor of the translate.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use ndarray_linalg::Solve;

use crate::{C64, Error, Result};

use super::hyper::{self, Mobius};
use super::{Backend, FormType, OpKind, SurfaceMesh, Twist};

/// One stencil contribution: canonical node `j` seen at the translated
/// position γ(z_j), with least-squares derivative coefficients and the
/// automorphy data of γ.
#[derive(Debug, Clone)]
struct Entry {
    j: u32,
    /// ∂ row coefficient.
    cd: C64,
    /// ∂̄ row coefficient.
    cdb: C64,
    /// Value-interpolation row coefficient (constant term of the local fit).
    c0: C64,
    /// Cocycle value j(γ, z_j).
    jv: C64,
    /// Generator exponents of γ in H₁ (for the character twist).
    exps: [i32; 4],
}

#[derive(Debug, Clone)]
struct Stencil {
    entries: Vec<Entry>,
}

/// A group element with its homology class.
#[derive(Debug, Clone)]
struct Word {
    m: Mobius,
    exps: [i32; 4],
}

pub struct OctagonBackend {
    /// Side-pairing generators A_0..A_7 (A_{k+4} = A_k^{-1}).
    pub pairings: [Mobius; 8],
    /// Identified boundary node pairs (canonical indices, side index 0..3).
    pub boundary_pairs: Vec<(u32, u32, u8)>,
    /// Subdivision level.
    pub level: u32,
    stencils: Vec<Stencil>,
    /// ∂log σ at each node (diagonal connection term).
    dlog_sigma: Vec<C64>,
    /// Quotient triangles (canonical corner indices), kept for diagnostics.
    pub triangles: Vec<[u32; 3]>,
    /// Per-triangle barycenter stencils for overdetermined collocation.
    bary_stencils: Vec<Stencil>,
    bary_pos: Vec<C64>,
    bary_area: Vec<f64>,
}

fn d_in() -> f64 {
    (1.0 + 2.0f64.sqrt()).acosh()
}

fn circumradius() -> f64 {
    (3.0 + 2.0 * 2.0f64.sqrt()).acosh()
}

fn side_angle(k: usize) -> f64 {
    k as f64 * std::f64::consts::FRAC_PI_4
}

fn generators() -> [Mobius; 8] {
    let l = 2.0 * d_in();
    let mut g = [Mobius::IDENTITY; 8];
    for k in 0..4 {
        g[k] = Mobius::translation(side_angle(k), l);
        g[k + 4] = g[k].inverse();
    }
    g
}

/// Word table: all products of the generators up to the given length, deduped
/// by their Möbius action. Errors if two words represent the same action with
/// opposite matrix signs — that would mean the generator lift is not a
/// consistent spin structure.
fn word_table(gens: &[Mobius; 8], max_len: usize, max_reach: f64) -> Result<Vec<Word>> {
    let origin = C64::new(0.0, 0.0);
    let mut table: Vec<Word> = vec![Word {
        m: Mobius::IDENTITY,
        exps: [0; 4],
    }];
    let mut frontier: Vec<Word> = table.clone();
    for _ in 0..max_len {
        let mut next = Vec::new();
        for w in &frontier {
            for (k, g) in gens.iter().enumerate() {
                let m = w.m.compose(g);
                if hyper::dist(origin, m.apply(origin)) > max_reach {
                    continue;
                }
                let mut exps = w.exps;
                if k < 4 {
                    exps[k] += 1;
                } else {
                    exps[k - 4] -= 1;
                }
                let mut known = false;
                for t in table.iter().chain(next.iter()) {
                    if t.m.matrix_dist(&m) < 1e-9 {
                        known = true;
                        break;
                    }
                    if t.m.matrix_dist(&m.neg()) < 1e-9 {
                        return Err(Error::Numeric(
                            "side-pairing lift is spin-inconsistent: word pair with opposite signs"
                                .into(),
                        ));
                    }
                }
                if !known {
                    next.push(Word { m, exps });
                }
            }
        }
        if next.is_empty() {
            break;
        }
        table.extend(next.iter().cloned());
        frontier = next;
    }
    Ok(table)
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
        }
    }
    fn find(&mut self, i: u32) -> u32 {
        let mut i = i;
        while self.parent[i as usize] != i {
            let p = self.parent[i as usize];
            self.parent[i as usize] = self.parent[p as usize];
            i = self.parent[i as usize];
        }
        i
    }
    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[rb.max(ra) as usize] = rb.min(ra);
        }
    }
}

/// Spatial hash for matching points up to 1e-7.
struct PointIndex {
    map: HashMap<(i64, i64), Vec<u32>>,
    scale: f64,
}

impl PointIndex {
    fn new() -> Self {
        PointIndex {
            map: HashMap::new(),
            scale: 1e6,
        }
    }
    fn key(&self, z: C64) -> (i64, i64) {
        (
            (z.re * self.scale).round() as i64,
            (z.im * self.scale).round() as i64,
        )
    }
    fn insert(&mut self, z: C64, idx: u32) {
        let k = self.key(z);
        self.map.entry(k).or_default().push(idx);
    }
    fn lookup(&self, z: C64, pts: &[C64]) -> Option<u32> {
        let (kx, ky) = self.key(z);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(v) = self.map.get(&(kx + dx, ky + dy)) {
                    for &i in v {
                        if (pts[i as usize] - z).norm() < 1e-7 {
                            return Some(i);
                        }
                    }
                }
            }
        }
        None
    }
}

pub(super) fn build(h: f64) -> Result<Arc<SurfaceMesh>> {
    if !(h > 0.0) {
        return Err(Error::Config("octagon resolution must be positive".into()));
    }
    let side_len = 2.0 * d_in();
    let level = (side_len / h).log2().round().max(1.0) as u32;
    let level = level.min(7);
    let mesh = build_level(level)?;
    if mesh.num_nodes() < 1000 {
        return Err(Error::Config(format!(
            "octagon mesh too coarse: {} quotient nodes (need ≥ 1000); decrease h",
            mesh.num_nodes()
        )));
    }
    Ok(mesh)
}

pub fn build_level(level: u32) -> Result<Arc<SurfaceMesh>> {
    let origin = C64::new(0.0, 0.0);
    let rv = (circumradius() / 2.0).tanh();
    let mut pts: Vec<C64> = vec![origin];
    for k in 0..8 {
        let ang = (2 * k + 1) as f64 * std::f64::consts::PI / 8.0;
        pts.push(C64::from_polar(rv, ang));
    }
    let mut tris: Vec<[u32; 3]> = Vec::with_capacity(8);
    for k in 0..8u32 {
        tris.push([0, k + 1, (k + 1) % 8 + 1]);
    }

    // Geodesic-midpoint refinement.
    for _ in 0..level {
        let mut midcache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut newtris = Vec::with_capacity(tris.len() * 4);
        let mut mid = |a: u32, b: u32, pts: &mut Vec<C64>| -> u32 {
            let key = (a.min(b), a.max(b));
            if let Some(&m) = midcache.get(&key) {
                return m;
            }
            let m = hyper::midpoint(pts[a as usize], pts[b as usize]);
            pts.push(m);
            let idx = (pts.len() - 1) as u32;
            midcache.insert(key, idx);
            idx
        };
        for t in &tris {
            let [a, b, c] = *t;
            let ab = mid(a, b, &mut pts);
            let bc = mid(b, c, &mut pts);
            let ca = mid(c, a, &mut pts);
            newtris.push([a, ab, ca]);
            newtris.push([ab, b, bc]);
            newtris.push([ca, bc, c]);
            newtris.push([ab, bc, ca]);
        }
        tris = newtris;
    }

    let gens = generators();
    let centers: Vec<C64> = (0..8).map(|k| gens[k].apply(origin)).collect();
    let on_side = |z: C64, k: usize| -> bool {
        (hyper::dist(z, origin) - hyper::dist(z, centers[k])).abs() < 1e-9
    };

    // Identify boundary nodes: side k+4 maps onto side k under A_k.
    let mut index = PointIndex::new();
    for (i, &z) in pts.iter().enumerate() {
        index.insert(z, i as u32);
    }
    let mut uf = UnionFind::new(pts.len());
    let mut raw_pairs: Vec<(u32, u32, u8)> = Vec::new();
    for k in 0..4usize {
        for (i, &z) in pts.iter().enumerate() {
            if on_side(z, k + 4) {
                let p = gens[k].apply(z);
                let j = index.lookup(p, &pts).ok_or_else(|| {
                    Error::Numeric(format!(
                        "side pairing image of node {i} not found on side {k}"
                    ))
                })?;
                uf.union(i as u32, j);
                raw_pairs.push((i as u32, j, k as u8));
            }
        }
    }

    // Canonical renumbering.
    let mut canon_of: Vec<u32> = vec![u32::MAX; pts.len()];
    let mut positions: Vec<C64> = Vec::new();
    for i in 0..pts.len() as u32 {
        let r = uf.find(i);
        if canon_of[r as usize] == u32::MAX {
            canon_of[r as usize] = positions.len() as u32;
            positions.push(pts[r as usize]);
        }
        canon_of[i as usize] = canon_of[r as usize];
    }
    let nq = positions.len();

    // Quadrature: exact hyperbolic triangle areas to corners; also max edge.
    let mut weights = vec![0.0f64; nq];
    let mut hmax: f64 = 0.0;
    let mut qtris: Vec<[u32; 3]> = Vec::with_capacity(tris.len());
    for t in &tris {
        let [a, b, c] = *t;
        let (za, zb, zc) = (pts[a as usize], pts[b as usize], pts[c as usize]);
        let area = hyper::triangle_area(za, zb, zc);
        let corners = [canon_of[a as usize], canon_of[b as usize], canon_of[c as usize]];
        for &ci in &corners {
            weights[ci as usize] += area / 3.0;
        }
        hmax = hmax
            .max(hyper::dist(za, zb))
            .max(hyper::dist(zb, zc))
            .max(hyper::dist(zc, za));
        qtris.push(corners);
    }

    // Adjacency and 2-rings on the quotient.
    let mut nbrs: Vec<Vec<u32>> = vec![Vec::new(); nq];
    let add_edge = |a: u32, b: u32, nbrs: &mut Vec<Vec<u32>>| {
        if a != b && !nbrs[a as usize].contains(&b) {
            nbrs[a as usize].push(b);
            nbrs[b as usize].push(a);
        }
    };
    for t in &qtris {
        add_edge(t[0], t[1], &mut nbrs);
        add_edge(t[1], t[2], &mut nbrs);
        add_edge(t[2], t[0], &mut nbrs);
    }

    // Word table for translate resolution: length ≤ 4, bounded reach.
    let table = word_table(&gens, 4, 2.0 * circumradius() + 2.5)?;

    // Resolve each neighbor of a stencil center to its unique nearby translate.
    let resolve_ring = |zc: C64, ring: &[u32]| -> Result<Vec<(u32, C64, C64, [i32; 4])>> {
        let mut raw: Vec<(u32, C64, C64, [i32; 4])> = Vec::with_capacity(ring.len());
        for &j in ring {
            let zj = positions[j as usize];
            let direct = hyper::dist(zj, zc);
            let (pos, jv, exps) = if direct < 0.45 {
                (zj, C64::new(1.0, 0.0), [0; 4])
            } else {
                let mut best: Option<(f64, C64, C64, [i32; 4])> = None;
                for w in &table {
                    let p = w.m.apply(zj);
                    let d = hyper::dist(p, zc);
                    if best.as_ref().map_or(true, |b| d < b.0) {
                        best = Some((d, p, w.m.cocycle(zj), w.exps));
                    }
                }
                let b = best.unwrap();
                if b.0 > 1.0 {
                    return Err(Error::Numeric(format!(
                        "no nearby translate for neighbor {j} of stencil at {zc}: distance {:.3}",
                        b.0
                    )));
                }
                (b.1, b.2, b.3)
            };
            raw.push((j, pos, jv, exps));
        }
        Ok(raw)
    };

    let two_ring = |i: u32| -> Vec<u32> {
        let mut ring: Vec<u32> = vec![i];
        for &j in &nbrs[i as usize] {
            if !ring.contains(&j) {
                ring.push(j);
            }
        }
        let one_ring_len = ring.len();
        for idx in 1..one_ring_len {
            let j = ring[idx];
            for &k in &nbrs[j as usize] {
                if !ring.contains(&k) {
                    ring.push(k);
                }
            }
        }
        ring
    };

    // Node stencils (stabilized collocation at the node itself).
    let mut stencils = Vec::with_capacity(nq);
    for i in 0..nq {
        let zi = positions[i];
        let ring = two_ring(i as u32);
        let raw = resolve_ring(zi, &ring)?;
        stencils.push(build_stencil(zi, &raw, true)?);
    }

    // Barycenter stencils: one collocation point per triangle, used to
    // overdetermine kernel computations (square nodal collocation admits
    // spurious near-null vectors; extra evaluation points remove them).
    let mut bary_stencils = Vec::with_capacity(tris.len());
    let mut bary_pos = Vec::with_capacity(tris.len());
    let mut bary_area = Vec::with_capacity(tris.len());
    for (t, qt) in tris.iter().zip(qtris.iter()) {
        let zc = (pts[t[0] as usize] + pts[t[1] as usize] + pts[t[2] as usize]) / 3.0;
        let mut ring: Vec<u32> = Vec::new();
        for &c in qt {
            for j in two_ring(c) {
                if !ring.contains(&j) {
                    ring.push(j);
                }
            }
        }
        let raw = resolve_ring(zc, &ring)?;
        bary_stencils.push(build_stencil(zc, &raw, false)?);
        bary_pos.push(zc);
        bary_area.push(hyper::triangle_area(
            pts[t[0] as usize],
            pts[t[1] as usize],
            pts[t[2] as usize],
        ));
    }

    let dls: Vec<C64> = positions.iter().map(|&z| hyper::dlog_sigma(z)).collect();
    let sigma: Vec<f64> = positions.iter().map(|&z| hyper::sigma(z)).collect();

    let boundary_pairs: Vec<(u32, u32, u8)> = raw_pairs
        .iter()
        .map(|&(a, b, k)| (canon_of[a as usize], canon_of[b as usize], k))
        .collect();

    let backend = OctagonBackend {
        pairings: gens,
        boundary_pairs,
        level,
        stencils,
        dlog_sigma: dls,
        triangles: qtris,
        bary_stencils,
        bary_pos,
        bary_area,
    };

    Ok(Arc::new(SurfaceMesh {
        genus: 2,
        h: hmax,
        positions,
        weights,
        sigma,
        backend: Backend::Octagon(backend),
    }))
}

/// Weighted least-squares quadratic fit in (u,ū); returns the stencil rows for
/// ∂ and ∂̄ at the center.
fn build_stencil(zi: C64, raw: &[(u32, C64, C64, [i32; 4])], stabilize: bool) -> Result<Stencil> {
    let m = raw.len();
    if m < 7 {
        return Err(Error::Numeric(format!(
            "stencil at {zi} has only {m} points"
        )));
    }
    // Cubic fit when the cloud supports it (first derivatives O(h³)),
    // quadratic fallback for small stencils.
    let nb = if m >= 13 { 10 } else { 6 };
    let mean_d: f64 = raw
        .iter()
        .map(|r| (r.1 - zi).norm())
        .sum::<f64>()
        / (m as f64 - 1.0).max(1.0);
    let s = 1.0 / mean_d;
    let mut design = Array2::<C64>::zeros((m, nb));
    let mut wts = vec![0.0f64; m];
    for (e, r) in raw.iter().enumerate() {
        let u = (r.1 - zi) * s;
        let ub = u.conj();
        design[(e, 0)] = C64::new(1.0, 0.0);
        design[(e, 1)] = u;
        design[(e, 2)] = ub;
        design[(e, 3)] = u * u;
        design[(e, 4)] = u * ub;
        design[(e, 5)] = ub * ub;
        if nb == 10 {
            design[(e, 6)] = u * u * u;
            design[(e, 7)] = u * u * ub;
            design[(e, 8)] = u * ub * ub;
            design[(e, 9)] = ub * ub * ub;
        }
        wts[e] = (-u.norm_sqr() / 2.0).exp();
    }
    // Normal matrix A = Φ†WΦ.
    let mut a = Array2::<C64>::zeros((nb, nb));
    for r in 0..nb {
        for c in 0..nb {
            let mut acc = C64::new(0.0, 0.0);
            for e in 0..m {
                acc += design[(e, r)].conj() * wts[e] * design[(e, c)];
            }
            a[(r, c)] = acc;
        }
    }
    // Rows extracting c_1 (constant), c_u and c_ū:
    // coef_e = conj((Φ A^{-1} e_k)_e)·ω_e · s.
    let mut rows = [
        vec![C64::new(0.0, 0.0); m],
        vec![C64::new(0.0, 0.0); m],
        vec![C64::new(0.0, 0.0); m],
    ];
    for (which, k) in [(0usize, 1usize), (1usize, 2usize), (2usize, 0usize)] {
        let mut e_k = Array1::<C64>::zeros(nb);
        e_k[k] = C64::new(1.0, 0.0);
        let g = a
            .solve(&e_k)
            .map_err(|err| Error::Numeric(format!("stencil normal equations singular: {err}")))?;
        for e in 0..m {
            let mut acc = C64::new(0.0, 0.0);
            for c in 0..nb {
                acc += design[(e, c)] * g[c];
            }
            rows[which][e] = acc.conj() * wts[e] * s;
        }
    }
    // Fluctuation stabilization: add κ·s·(f_center − fit(0)) to both derivative
    // rows. On smooth sections the quadratic fit reproduces the center value to
    // cubic order, so the term is O(h²) and does not spoil consistency; on
    // grid-scale oscillations it is O(1/h), which removes the spurious
    // near-kernel that collocated first-derivative stencils otherwise have at
    // checkerboard modes.
    let rows_c0: Vec<C64> = rows[2].iter().map(|&v| v / s).collect();
    if stabilize {
        let kappa = 0.25;
        for row in rows.iter_mut().take(2) {
            for e in 0..m {
                let mut fl = -rows_c0[e];
                if e == 0 {
                    fl += C64::new(1.0, 0.0);
                }
                row[e] += kappa * s * fl;
            }
        }
    }
    let entries = raw
        .iter()
        .enumerate()
        .map(|(e, r)| Entry {
            j: r.0,
            cd: rows[0][e],
            cdb: rows[1][e],
            c0: rows_c0[e],
            jv: r.2,
            exps: r.3,
        })
        .collect();
    Ok(Stencil { entries })
}

impl OctagonBackend {
    /// Automorphy factor for an entry, given section type.
    #[inline]
    fn factor(entry: &Entry, weight2: i32, form: FormType, twist: &Twist) -> C64 {
        if entry.exps == [0, 0, 0, 0] && (entry.jv - C64::new(1.0, 0.0)).norm() < 1e-15 {
            return C64::new(1.0, 0.0);
        }
        let eh = weight2 + 2 * form.p();
        let ea = 2 * form.q();
        let mut f = entry.jv.powi(eh) * entry.jv.conj().powi(ea);
        if !twist.is_trivial() {
            f *= twist.phase(&entry.exps);
        }
        f
    }

    #[allow(clippy::too_many_arguments)]
    pub fn scalar_op(
        &self,
        mesh: &SurfaceMesh,
        kind: OpKind,
        weight2: i32,
        form: FormType,
        twist: &Twist,
        input: &[C64],
        output: &mut [C64],
    ) {
        for (i, st) in self.stencils.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for e in &st.entries {
                let fac = Self::factor(e, weight2, form, twist);
                let c = match kind {
                    OpKind::Dbar => e.cdb,
                    OpKind::Del => e.cd,
                };
                acc += c * fac * input[e.j as usize];
            }
            if kind == OpKind::Del && weight2 != 0 {
                acc -= weight2 as f64 * self.dlog_sigma[i] * input[i];
            }
            output[i] = acc;
        }
        let _ = mesh;
    }

    #[allow(clippy::too_many_arguments)]
    pub fn scalar_op_adjoint(
        &self,
        mesh: &SurfaceMesh,
        kind: OpKind,
        weight2: i32,
        form_in: FormType,
        form_out: FormType,
        twist: &Twist,
        input: &[C64],
        output: &mut [C64],
    ) {
        for v in output.iter_mut() {
            *v = C64::new(0.0, 0.0);
        }
        for (i, st) in self.stencils.iter().enumerate() {
            let wo = mesh.weights[i] * mesh.frame_factor(i, weight2, form_out);
            let ti = input[i] * wo;
            for e in &st.entries {
                let fac = Self::factor(e, weight2, form_in, twist);
                let c = match kind {
                    OpKind::Dbar => e.cdb,
                    OpKind::Del => e.cd,
                };
                output[e.j as usize] += (c * fac).conj() * ti;
            }
            if kind == OpKind::Del && weight2 != 0 {
                output[i] -= (weight2 as f64 * self.dlog_sigma[i]).conj() * ti;
            }
        }
        for (j, v) in output.iter_mut().enumerate() {
            *v /= mesh.weights[j] * mesh.frame_factor(j, weight2, form_in);
        }
    }

    /// Number of barycenter collocation points (one per quotient triangle).
    pub fn bary_count(&self) -> usize {
        self.bary_stencils.len()
    }

    /// Position of barycenter `t` in the fundamental domain.
    pub fn bary_position(&self, t: usize) -> C64 {
        self.bary_pos[t]
    }

    /// Quadrature weight (hyperbolic area) of triangle `t`.
    pub fn bary_weight(&self, t: usize) -> f64 {
        self.bary_area[t]
    }

    /// Evaluate a scalar operator (or the value interpolant, `kind = None`) at
    /// every triangle barycenter. `output` has length `bary_count()`.
    #[allow(clippy::too_many_arguments)]
    pub fn bary_op(
        &self,
        kind: Option<OpKind>,
        weight2: i32,
        form: FormType,
        twist: &Twist,
        input: &[C64],
        output: &mut [C64],
    ) {
        for (t, st) in self.bary_stencils.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            let mut val = C64::new(0.0, 0.0);
            let need_val = kind != Some(OpKind::Dbar);
            for e in &st.entries {
                let fac = Self::factor(e, weight2, form, twist);
                let x = fac * input[e.j as usize];
                match kind {
                    Some(OpKind::Dbar) => acc += e.cdb * x,
                    Some(OpKind::Del) => acc += e.cd * x,
                    None => {}
                }
                if need_val {
                    val += e.c0 * x;
                }
            }
            output[t] = match kind {
                Some(OpKind::Dbar) => acc,
                Some(OpKind::Del) => {
                    if weight2 != 0 {
                        acc -= weight2 as f64 * hyper::dlog_sigma(self.bary_pos[t]) * val;
                    }
                    acc
                }
                None => val,
            };
        }
    }
}
