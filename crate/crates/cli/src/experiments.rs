//! The five experiment drivers: each builds its fixture from the config,
//! runs the corresponding solver pipeline, and returns a pass/fail outcome
//! with ordered metrics and an optional row table.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use hodgelab_core::bundle::{EndSection, GradedVHS, HiggsPoint, hitchin_section, make_fuchsian};
use hodgelab_core::nahc::{
    MetricScale, nhc_map, residual_norm, residual_target, solve_harmonic_metric,
};
use hodgelab_core::strata::{
    GaugeMode, SliceVector, apply_gauge, d1_pair, d2_zero_adjoint, gauge_fix_to_slice,
    harmonic_basis_cached, kuranishi, kuranishi_inverse, lambda_end,
};
use hodgelab_core::surface::{FormType, SurfaceMesh, Twist, TwistedSection};
use hodgelab_core::twistor::transversality_check;
use hodgelab_core::{C64, Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::config::{Experiment, RunConfig, SurfaceKind};

/// Result of one experiment run. Metrics are keyed in a BTreeMap so the JSON
/// report serializes in a fixed order.
pub struct Outcome {
    pub pass: bool,
    /// One-phrase result for the summary table, e.g. "rank=6/6".
    pub headline: String,
    pub metrics: BTreeMap<String, f64>,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
    /// Convergence diagnostics (e.g. a truncated continuation ladder).
    pub failure: Option<String>,
}

pub fn run_experiment(cfg: &RunConfig, report_path: &std::path::Path) -> Result<Outcome> {
    match cfg.experiment {
        Experiment::Nhc => match cfg.surface.kind {
            SurfaceKind::Torus => nhc_torus(cfg),
            SurfaceKind::Bolza => nhc_bolza(cfg),
        },
        Experiment::Slice => slice_roundtrip(cfg),
        Experiment::Kuranishi => kuranishi_roundtrip(cfg, report_path),
        Experiment::Transversality => transversality(cfg, report_path),
        Experiment::Conformal => conformal(cfg),
    }
}

// ---------------------------------------------------------------------------
// Fixtures.
// ---------------------------------------------------------------------------

fn bolza_vhs(cfg: &RunConfig) -> Result<Arc<GradedVHS>> {
    let mesh = SurfaceMesh::build_bolza_level(cfg.surface.resolution)?;
    Ok(Arc::new(make_fuchsian(&mesh, cfg.vhs.n, Twist::trivial())?))
}

/// Rank-2 chain over the flat spectral torus with a constant Higgs block.
fn torus_vhs(resolution: u32) -> Result<Arc<GradedVHS>> {
    let mesh = SurfaceMesh::build_torus_spectral(resolution as usize)?;
    let mut phi_block = TwistedSection::zero(&mesh, 0, Twist::trivial(), FormType::OneZero);
    phi_block.values.iter_mut().for_each(|x| *x = C64::new(0.6, 0.2));
    Ok(Arc::new(GradedVHS {
        mesh,
        weights2: vec![1, -1],
        twist: Twist::trivial(),
        phi_blocks: vec![phi_block],
        hscale: vec![1.0, 1.0],
        genus: 1,
    }))
}

/// Holomorphic section of doubled weight `w2` with L² norm `amp`, from the
/// singular-value kernel of the discrete ∂̄.
fn normalized_q(mesh: &Arc<SurfaceMesh>, w2: i32, amp: f64) -> Result<TwistedSection> {
    let mat = mesh.dbar_weighted_matrix(w2, FormType::Zero, &Twist::trivial());
    let basis = hodgelab_core::linalg::kernel_by_gap(&mat, mesh.h)?;
    let v = basis
        .first()
        .ok_or_else(|| Error::Numeric(format!("no holomorphic section of weight {w2} found")))?;
    let mut s = TwistedSection::zero(mesh, w2, Twist::trivial(), FormType::Zero);
    for i in 0..mesh.num_nodes() {
        let win = (mesh.weights[i] * mesh.frame_factor(i, w2, FormType::Zero)).sqrt();
        s.values[i] = v[i] / win;
    }
    let nq = s.norm();
    s.values.iter_mut().for_each(|x| *x *= amp / nq);
    Ok(s)
}

/// Hitchin-section point with the top differential q_n only.
fn corner_higgs(v: &Arc<GradedVHS>, amp: f64) -> Result<HiggsPoint> {
    let n = v.n();
    let mut qs = Vec::new();
    for k in 2..n {
        qs.push(TwistedSection::zero(&v.mesh, 2 * k as i32, Twist::trivial(), FormType::Zero));
    }
    qs.push(normalized_q(&v.mesh, 2 * n as i32, amp)?);
    hitchin_section(v, &qs)
}

fn corner_point(v: &Arc<GradedVHS>, amp: f64) -> Result<SliceVector> {
    let p = corner_higgs(v, amp)?;
    SliceVector::new(v, p.beta, p.phi)
}

fn cache_dir(cfg: &RunConfig, report_path: &std::path::Path) -> PathBuf {
    cfg.parameters.cache_dir.clone().unwrap_or_else(|| {
        report_path
            .parent()
            .unwrap_or_else(|| std::path::Path::new("."))
            .join("hbasis-cache")
    })
}

// ---------------------------------------------------------------------------
// nhc: Kähler identity suite (torus) / harmonic-metric solve (Bolza).
// ---------------------------------------------------------------------------

/// Pair-level Kähler identity gap ‖(D″)*u + iΛD′u‖ — exact on the spectral
/// torus where quadrature and differentiation commute with the adjoint.
fn kahler_gap(v: &Arc<GradedVHS>, u: &SliceVector) -> Result<f64> {
    let mut lhs = d2_zero_adjoint(v, u);
    let rhs = lambda_end(v, &d1_pair(v, u)?)?.scaled(C64::new(0.0, -1.0));
    lhs.axpy(C64::new(-1.0, 0.0), &rhs);
    Ok(v.norm_end(&lhs))
}

fn nhc_torus(cfg: &RunConfig) -> Result<Outcome> {
    let v = torus_vhs(cfg.surface.resolution)?;
    let tol = cfg.parameters.tolerance.unwrap_or(1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let trials = 8usize;
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for t in 0..trials {
        let mut u = SliceVector::zero(&v);
        for x in u.beta.values.iter_mut().chain(u.phi.values.iter_mut()) {
            *x = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let gap = kahler_gap(&v, &u)? / u.norm();
        worst = worst.max(gap);
        rows.push(vec![t as f64, u.norm(), gap]);
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("kahler_gap_max".into(), worst);
    metrics.insert("tolerance".into(), tol);
    metrics.insert("trials".into(), trials as f64);
    Ok(Outcome {
        pass: worst < tol,
        headline: format!("kahler_gap_max={worst:.3e}"),
        metrics,
        columns: vec!["trial", "u_norm", "kahler_gap"],
        rows,
        failure: None,
    })
}

fn nhc_bolza(cfg: &RunConfig) -> Result<Outcome> {
    let v = bolza_vhs(cfg)?;
    let amp = cfg.parameters.q_amplitude.unwrap_or(0.1);
    let p = corner_higgs(&v, amp)?;
    let rep = solve_harmonic_metric(&p, &MetricScale::zero(&v))?;
    let residual = residual_norm(&p, &rep.scale)?;
    let target = residual_target(&v);
    let conn = nhc_map(&p, &rep.scale)?;
    let flatness = v.norm_end(&conn.flatness_residual()?);
    let scale = 1.0 + v.norm_end(&conn.eta) + v.norm_end(&conn.theta);
    let rows: Vec<Vec<f64>> = rep
        .history
        .iter()
        .map(|s| vec![s.stage, s.iter as f64, s.residual, s.step_scale, s.cg_iters as f64])
        .collect();
    let mut metrics = BTreeMap::new();
    metrics.insert("flatness".into(), flatness);
    metrics.insert("flatness_rel".into(), flatness / scale);
    metrics.insert("newton_steps".into(), rep.history.len() as f64);
    metrics.insert("q_amplitude".into(), amp);
    metrics.insert("residual".into(), residual);
    metrics.insert("residual_target".into(), target);
    let pass = residual <= target && flatness / scale < 0.05;
    Ok(Outcome {
        pass,
        headline: format!("residual={residual:.3e}"),
        metrics,
        columns: vec!["stage", "iter", "residual", "step_scale", "cg_iters"],
        rows,
        failure: None,
    })
}

// ---------------------------------------------------------------------------
// slice: gauge round-trip onto the BB slice.
// ---------------------------------------------------------------------------

fn slice_roundtrip(cfg: &RunConfig) -> Result<Outcome> {
    let v = bolza_vhs(cfg)?;
    let amp = cfg.parameters.q_amplitude.unwrap_or(0.1);
    let gauge_amp = cfg.parameters.gauge_amplitude.unwrap_or(0.02);
    let tol = cfg.parameters.tolerance.unwrap_or(1e-6);
    let u0 = corner_point(&v, amp)?;
    // Strictly-upper first-row gauge: pairwise products vanish, so the
    // discrete gauge action composes exactly and u0 stays on the orbit.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = v.n();
    let mut f0 = EndSection::zero(&v.mesh, n, FormType::Zero);
    for i in 0..v.mesh.num_nodes() {
        for c in 1..n {
            *f0.at_mut(i, 0, c) =
                gauge_amp * C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
    }
    let u1 = apply_gauge(&v, &u0, &f0, GaugeMode::Higgs)?;
    let mut moved = u1.clone();
    moved.axpy(C64::new(-1.0, 0.0), &u0);
    let rep = gauge_fix_to_slice(&v, &u1, GaugeMode::Higgs)?;
    let mut gap = rep.slice.clone();
    gap.axpy(C64::new(-1.0, 0.0), &u0);
    let recovery = gap.norm() / u0.norm();
    let mut metrics = BTreeMap::new();
    metrics.insert("displacement".into(), moved.norm());
    metrics.insert("gauge_amplitude".into(), gauge_amp);
    metrics.insert("recovery_rel".into(), recovery);
    metrics.insert("steps".into(), rep.steps as f64);
    metrics.insert("tolerance".into(), tol);
    Ok(Outcome {
        pass: recovery < tol && rep.steps == v.ell() - 1,
        headline: format!("recovery_rel={recovery:.3e}"),
        metrics,
        columns: vec![],
        rows: vec![],
        failure: None,
    })
}

// ---------------------------------------------------------------------------
// kuranishi: coefficient chart round-trip.
// ---------------------------------------------------------------------------

fn kuranishi_roundtrip(cfg: &RunConfig, report_path: &std::path::Path) -> Result<Outcome> {
    let v = bolza_vhs(cfg)?;
    let basis = harmonic_basis_cached(&v, &cache_dir(cfg, report_path))?;
    let amp = cfg.parameters.coefficient_amplitude.unwrap_or(0.3);
    let tol = cfg.parameters.tolerance.unwrap_or(1e-5);
    let dim = basis.total_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c: Vec<C64> = (0..dim)
        .map(|_| amp * C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let u = kuranishi_inverse(&basis, &c)?;
    let c2 = kuranishi(&basis, &u)?;
    let mut rows = Vec::new();
    let mut err2 = 0.0f64;
    let mut norm2 = 0.0f64;
    for i in 0..dim {
        let e = (c2[i] - c[i]).norm();
        err2 += e * e;
        norm2 += c[i].norm_sqr();
        rows.push(vec![i as f64, c[i].norm(), e]);
    }
    let gap = (err2 / norm2.max(1e-300)).sqrt();
    let mut metrics = BTreeMap::new();
    metrics.insert("coefficient_amplitude".into(), amp);
    metrics.insert("dim_h1_plus".into(), dim as f64);
    metrics.insert("roundtrip_gap_rel".into(), gap);
    metrics.insert("tolerance".into(), tol);
    Ok(Outcome {
        pass: gap < tol,
        headline: format!("roundtrip_gap_rel={gap:.3e}"),
        metrics,
        columns: vec!["index", "coeff_abs", "roundtrip_abs_err"],
        rows,
        failure: None,
    })
}

// ---------------------------------------------------------------------------
// transversality: rank of the flow family against the stratum tangent.
// ---------------------------------------------------------------------------

fn transversality(cfg: &RunConfig, report_path: &std::path::Path) -> Result<Outcome> {
    let v = bolza_vhs(cfg)?;
    let basis = harmonic_basis_cached(&v, &cache_dir(cfg, report_path))?;
    let fd_steps = cfg
        .parameters
        .fd_steps
        .clone()
        .unwrap_or_else(|| vec![0.05, 0.1]);
    let rep = transversality_check(&v, &basis, &fd_steps)?;
    let mut rows = Vec::new();
    let mut slope_max = 0.0f64;
    for (i, s) in rep.fd_slopes.iter().enumerate() {
        for &(t, err) in &s.samples {
            slope_max = slope_max.max(err);
            rows.push(vec![i as f64, s.grade as f64, t, err]);
        }
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("cond".into(), rep.cond);
    metrics.insert("dim_h1_plus".into(), rep.dim_h1_plus as f64);
    metrics.insert("family_size".into(), rep.family_size as f64);
    metrics.insert("fd_err_max".into(), slope_max);
    metrics.insert("rank".into(), rep.rank as f64);
    let pass = rep.rank == 2 * rep.dim_h1_plus && rep.cond.is_finite();
    Ok(Outcome {
        pass,
        headline: format!("rank={}/{}", rep.rank, 2 * rep.dim_h1_plus),
        metrics,
        columns: vec!["direction", "grade", "fd_step", "rel_err"],
        rows,
        failure: None,
    })
}

// ---------------------------------------------------------------------------
// conformal: ħ-family continuation down the R-ladder.
// ---------------------------------------------------------------------------

fn conformal(cfg: &RunConfig) -> Result<Outcome> {
    let v = bolza_vhs(cfg)?;
    let amp = cfg.parameters.q_amplitude.unwrap_or(0.1);
    let h = cfg.parameters.hbar.unwrap_or([1.0, 0.0]);
    let hbar = C64::new(h[0], h[1]);
    let r_list = cfg
        .parameters
        .r_samples
        .clone()
        .unwrap_or_else(|| vec![0.16, 0.08, 0.04, 0.02]);
    let tol = cfg.parameters.tolerance.unwrap_or(1e-3);
    let u = corner_point(&v, amp)?;
    let traj = hodgelab_core::conformal::conformal_trajectory(&v, &u, hbar, &r_list)?;
    let target = residual_target(&v);
    let rows: Vec<Vec<f64>> = traj
        .summaries()
        .iter()
        .map(|s| vec![s.r, s.residual, s.flatness, s.f_norm, s.distance_to_limit])
        .collect();
    let res_max = rows.iter().map(|r| r[1]).fold(0.0f64, f64::max);
    let last_dist = rows.last().map(|r| r[4]).unwrap_or(f64::INFINITY);
    let limit_scale =
        1.0 + v.norm_end(&traj.limit.eta) + v.norm_end(&traj.limit.theta);
    let mut metrics = BTreeMap::new();
    metrics.insert("distance_final".into(), last_dist);
    metrics.insert("distance_final_rel".into(), last_dist / limit_scale);
    if traj.monotone_below.is_finite() {
        metrics.insert("monotone_below".into(), traj.monotone_below);
    }
    metrics.insert("residual_max".into(), res_max);
    metrics.insert("residual_target".into(), target);
    metrics.insert("samples".into(), rows.len() as f64);
    metrics.insert("tolerance".into(), tol);
    let pass = traj.truncation.is_none() && res_max <= target && last_dist / limit_scale < tol;
    Ok(Outcome {
        pass,
        headline: format!("distance_final={last_dist:.3e}"),
        metrics,
        columns: vec!["r", "residual", "flatness", "f_norm", "distance_to_limit"],
        rows,
        failure: traj.truncation,
    })
}
