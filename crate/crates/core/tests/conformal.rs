//! Oracles for the ħ-conformal-limit machinery: grading weights, rescaled
//! operators, residual/linearization consistency, per-R solves, and the full
//! R-continuation against the assembled limit connection.

use std::sync::Arc;

use hodgelab_core::bundle::{EndSection, GradedVHS, hitchin_section, make_fuchsian};
use hodgelab_core::conformal::{
    conformal_linearization, conformal_residual, conformal_trajectory, conformal_weights,
    family_connection, limit_connection, limit_linearization_gap, rescaled_family_operators,
    solve_conformal_step,
};
use hodgelab_core::nahc::{MetricScale, solve_harmonic_metric};
use hodgelab_core::strata::SliceVector;
use hodgelab_core::surface::{FormType, SurfaceMesh, Twist, TwistedSection};
use hodgelab_core::twistor::{hod_cstar, p_lambda};
use hodgelab_core::Error;
use num_complex::Complex64 as C;
use rand::prelude::*;

fn fuchsian(level: u32, n: usize) -> Arc<GradedVHS> {
    let mesh = SurfaceMesh::build_bolza_level(level).unwrap();
    Arc::new(make_fuchsian(&mesh, n, Twist::trivial()).unwrap())
}

/// A holomorphic section of doubled weight `w2` (level-4 mesh required).
fn normalized_q(mesh: &Arc<SurfaceMesh>, w2: i32, amp: f64) -> TwistedSection {
    let mat = mesh.dbar_weighted_matrix(w2, FormType::Zero, &Twist::trivial());
    let basis = hodgelab_core::linalg::kernel_by_gap(&mat, mesh.h).unwrap();
    let v = &basis[0];
    let mut s = TwistedSection::zero(mesh, w2, Twist::trivial(), FormType::Zero);
    for i in 0..mesh.num_nodes() {
        let win = (mesh.weights[i] * mesh.frame_factor(i, w2, FormType::Zero)).sqrt();
        s.values[i] = v[i] / win;
    }
    let nq = s.norm();
    s.values.iter_mut().for_each(|x| *x *= amp / nq);
    s
}

/// Hitchin-section slice point: φ = q·E_{0,n−1}, β = 0.
fn corner_point(v: &Arc<GradedVHS>, amp: f64) -> SliceVector {
    let n = v.n();
    let q = normalized_q(&v.mesh, 2 * n as i32, amp);
    let p = hitchin_section(v, std::slice::from_ref(&q)).unwrap();
    SliceVector::new(v, p.beta, p.phi).unwrap()
}

/// Random parameter-space direction (real traceless diagonal + strict upper),
/// completed to an admissible metric scale for family parameter `r`.
fn random_scale(v: &Arc<GradedVHS>, r: f64, amp: f64, seed: u64) -> EndSection {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = v.n();
    let mut x = EndSection::zero(&v.mesh, n, FormType::Zero);
    for i in 0..v.mesh.num_nodes() {
        let mut diag: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean = diag.iter().sum::<f64>() / n as f64;
        diag.iter_mut().for_each(|d| *d -= mean);
        for rr in 0..n {
            *x.at_mut(i, rr, rr) = C::new(amp * diag[rr], 0.0);
            for c in (rr + 1)..n {
                *x.at_mut(i, rr, c) =
                    amp * C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
    }
    // Conjugate completion: f_{−g} = r^{2g}·(f_g)^{*h}.
    let mut upper = x.clone();
    for i in 0..v.mesh.num_nodes() {
        for rr in 0..n {
            *upper.at_mut(i, rr, rr) = C::new(0.0, 0.0);
        }
    }
    let adj = v.adjoint(&upper);
    let mut f = x;
    for rr in 0..n {
        for c in 0..n {
            let g = GradedVHS::grade(c, rr);
            if g <= 0 {
                continue;
            }
            let factor = r.powi(2 * g as i32);
            for i in 0..v.mesh.num_nodes() {
                *f.at_mut(i, rr, c) += factor * adj.at(i, rr, c);
            }
        }
    }
    f
}

fn end_gap(a: &EndSection, b: &EndSection) -> f64 {
    let mut d = a.clone();
    d.axpy(C::new(-1.0, 0.0), b);
    d.max_abs()
}

fn log_slope(samples: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> =
        samples.iter().filter(|(_, y)| *y > 1e-300).map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (m * sxy - sx * sy) / (m * sxx - sx * sx)
}

// ---------------------------------------------------------------------------
// Weights and rescaled operators.
// ---------------------------------------------------------------------------

#[test]
fn weights_solve_the_two_constraints() {
    let v2 = fuchsian(3, 2);
    let v3 = fuchsian(3, 3);
    assert_eq!(conformal_weights(&v2).m, vec![1.0, -1.0]);
    assert_eq!(conformal_weights(&v3).m, vec![2.0, 0.0, -2.0]);
    for v in [&v2, &v3] {
        let w = conformal_weights(v);
        assert!(w.m.iter().sum::<f64>().abs() < 1e-14);
        for pair in w.m.windows(2) {
            assert_eq!(pair[0] - pair[1], 2.0);
        }
    }
}

#[test]
fn rescaled_operators_at_one_are_unrescaled_and_blocks_scale_gradewise() {
    let v = fuchsian(3, 3);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut u = SliceVector::zero(&v);
    for x in u.beta.values.iter_mut().chain(u.phi.values.iter_mut()) {
        *x = C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    let mut phi_u = v.phi0();
    phi_u.axpy(C::new(1.0, 0.0), &u.phi);
    // R = 1: the construction reduces to the unrescaled adjoints.
    let fam1 = rescaled_family_operators(&v, &u, 1.0).unwrap();
    assert!(end_gap(&fam1.beta_star, &v.adjoint(&u.beta)) < 1e-14);
    assert!(end_gap(&fam1.phi_star_r2, &v.adjoint(&phi_u)) < 1e-14);
    // Halving R divides the grade-j β* block by 4^j.
    let fam_half = rescaled_family_operators(&v, &u, 0.5).unwrap();
    let n = v.n();
    for r in 0..n {
        for c in 0..n {
            let g = GradedVHS::grade(c, r); // grade of the source block
            let expect = 0.5f64.powi(2 * g as i32);
            for i in [0usize, 7, 31] {
                let a = fam_half.beta_star.at(i, r, c);
                let b = fam1.beta_star.at(i, r, c) * expect;
                assert!((a - b).norm() < 1e-12 * (1.0 + b.norm()), "block ({r},{c})");
            }
        }
    }
    // Out-of-range R is rejected.
    assert!(matches!(rescaled_family_operators(&v, &u, -0.1), Err(Error::Validation(_))));
    assert!(matches!(rescaled_family_operators(&v, &u, 1.5), Err(Error::Validation(_))));
}

// ---------------------------------------------------------------------------
// Residual identities.
// ---------------------------------------------------------------------------

#[test]
fn residual_vanishes_at_the_vhs_for_every_r() {
    let v = fuchsian(3, 3);
    let u = SliceVector::zero(&v);
    let f = EndSection::zero(&v.mesh, v.n(), FormType::Zero);
    for r in [1.0, 0.37, 0.05, 0.0] {
        let res = conformal_residual(&v, &u, r, &f).unwrap();
        assert!(v.norm_end(&res) < 1e-11, "R = {r}: ‖N‖ = {:.3e}", v.norm_end(&res));
    }
}

#[test]
fn residual_vanishes_at_r_zero_on_the_hitchin_point() {
    let v = fuchsian(4, 2);
    let u = corner_point(&v, 0.1);
    let f = EndSection::zero(&v.mesh, v.n(), FormType::Zero);
    let res = conformal_residual(&v, &u, 0.0, &f).unwrap();
    assert!(v.norm_end(&res) < 1e-12, "‖N_(u,0)(0)‖ = {:.3e}", v.norm_end(&res));
}

#[test]
fn linearization_matches_finite_differences() {
    let v = fuchsian(3, 2);
    let u = {
        // Small graded deformation: φ in the top corner, no β, so the point is
        // admissible at R = 0 as well.
        let mut u = SliceVector::zero(&v);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for i in 0..v.mesh.num_nodes() {
            *u.phi.at_mut(i, 0, 1) = 0.1 * C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        u
    };
    for r in [0.0, 0.3, 1.0] {
        let fdot = random_scale(&v, r, 1.0, 21);
        let base = conformal_residual(&v, &u, r, &EndSection::zero(&v.mesh, v.n(), FormType::Zero))
            .unwrap();
        let t = 1e-5;
        let mut fd = conformal_residual(&v, &u, r, &fdot.scaled(C::new(t, 0.0))).unwrap();
        fd.axpy(C::new(-1.0, 0.0), &base);
        let fd = fd.scaled(C::new(1.0 / (2.0 * t), 0.0)); // dN = 2·L
        let lin = conformal_linearization(&v, &u, r, &fdot).unwrap();
        let mut gap = fd;
        gap.axpy(C::new(-1.0, 0.0), &lin);
        let rel = v.norm_end(&gap) / v.norm_end(&lin);
        assert!(rel < 1e-4, "R = {r}: FD mismatch {rel:.3e}");
    }
}

#[test]
fn rejects_non_hermitian_scale_and_out_of_range_r() {
    let v = fuchsian(3, 2);
    let u = SliceVector::zero(&v);
    // A scale completed for R = 1 is not admissible at R = 0.3.
    let f = random_scale(&v, 1.0, 0.2, 5);
    assert!(matches!(conformal_residual(&v, &u, 0.3, &f), Err(Error::Validation(_))));
    let zero = EndSection::zero(&v.mesh, v.n(), FormType::Zero);
    assert!(matches!(
        solve_conformal_step(&v, &u, 0.0, &MetricScale { reference: v.clone(), f: zero }),
        Err(Error::Validation(_))
    ));
}

// ---------------------------------------------------------------------------
// Solves.
// ---------------------------------------------------------------------------

#[test]
fn vhs_solves_to_the_zero_scale() {
    let v = fuchsian(3, 2);
    let u = SliceVector::zero(&v);
    for r in [1.0, 0.25, 0.02] {
        let m = solve_conformal_step(&v, &u, r, &MetricScale::zero(&v)).unwrap();
        assert!(v.norm_end(&m.f) < 1e-9, "R = {r}: ‖f‖ = {:.3e}", v.norm_end(&m.f));
    }
}

#[test]
fn step_at_r_one_matches_the_self_duality_solver() {
    let v = fuchsian(4, 2);
    let u = corner_point(&v, 0.1);
    let m_conf = solve_conformal_step(&v, &u, 1.0, &MetricScale::zero(&v)).unwrap();
    let q = normalized_q(&v.mesh, 4, 0.1);
    let p = hitchin_section(&v, std::slice::from_ref(&q)).unwrap();
    let m_sd = solve_harmonic_metric(&p, &MetricScale::zero(&v)).unwrap();
    let mut gap = m_conf.f.clone();
    gap.axpy(C::new(-1.0, 0.0), &m_sd.scale.f);
    let rel = v.norm_end(&gap) / v.norm_end(&m_sd.scale.f).max(1e-300);
    assert!(v.norm_end(&m_sd.scale.f) > 1e-6, "self-duality scale unexpectedly zero");
    // Both satisfy the residual target; agreement is limited by the solver
    // tolerance divided by the linearization's spectral gap.
    assert!(rel < 1e-2, "solvers disagree at R = 1: rel gap {rel:.3e}");
}

#[test]
fn limit_linearization_has_a_spectral_gap() {
    let v = fuchsian(3, 2);
    let u = SliceVector::zero(&v);
    let gap = limit_linearization_gap(&v, &u, 6).unwrap();
    eprintln!("dN_(0,0)(0) smallest singular value ≈ {gap:.4e}");
    assert!(gap.is_finite() && gap > 1e-3, "gap {gap:.3e}");
}

// ---------------------------------------------------------------------------
// Trajectories.
// ---------------------------------------------------------------------------

#[test]
fn trajectory_rejects_bad_hbar_and_bad_ladders() {
    let v = fuchsian(3, 2);
    let u = SliceVector::zero(&v);
    assert!(matches!(
        conformal_trajectory(&v, &u, C::new(0.01, 0.0), &[0.5]),
        Err(Error::Validation(_))
    ));
    assert!(matches!(
        conformal_trajectory(&v, &u, C::new(1.0, 0.0), &[0.1, 0.5]),
        Err(Error::Validation(_))
    ));
    assert!(matches!(
        conformal_trajectory(&v, &u, C::new(1.0, 0.0), &[]),
        Err(Error::Validation(_))
    ));
}

#[test]
fn vhs_trajectory_is_constant_at_the_chain_connection() {
    let v = fuchsian(3, 2);
    let u = SliceVector::zero(&v);
    let traj = conformal_trajectory(&v, &u, C::new(1.0, 0.0), &[0.5, 0.25]).unwrap();
    assert!(traj.truncation.is_none());
    assert_eq!(traj.samples.len(), 2);
    // Limit = ∂̄ + Φ₀* + ∂ + Φ₀, i.e. the NHC connection of the VHS.
    assert!(end_gap(&traj.limit.eta, &v.adjoint(&v.phi0())) < 1e-14);
    assert!(end_gap(&traj.limit.theta, &v.phi0()) < 1e-14);
    for s in &traj.samples {
        assert!(s.distance_to_limit < 1e-8, "R = {}: d = {:.3e}", s.r, s.distance_to_limit);
        assert!(s.f_norm < 1e-8);
    }
}

#[test]
fn limit_is_the_hodge_image_of_the_lambda_connection() {
    let v = fuchsian(3, 2);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let mut u = SliceVector::zero(&v);
    for x in u.beta.values.iter_mut().chain(u.phi.values.iter_mut()) {
        *x = 0.3 * C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    for hbar in [C::new(1.0, 0.0), C::new(0.4, 0.7), C::new(-2.0, 0.3)] {
        let lim = limit_connection(&v, &u, hbar);
        let orbit = hod_cstar(&p_lambda(&v, &u, hbar).unwrap(), C::new(1.0, 0.0) / hbar).unwrap();
        assert!((orbit.lambda - C::new(1.0, 0.0)).norm() < 1e-14);
        assert!(end_gap(&lim.eta, &orbit.dbar_off) < 1e-13, "ħ = {hbar}");
        assert!(end_gap(&lim.theta, &orbit.nabla_off) < 1e-13, "ħ = {hbar}");
    }
}

#[test]
fn family_connection_is_hbar_covariant() {
    let v = fuchsian(4, 2);
    let u = corner_point(&v, 0.1);
    let r = 0.4;
    let m = solve_conformal_step(&v, &u, r, &MetricScale::zero(&v)).unwrap();
    let h1 = C::new(1.0, 0.0);
    let h2 = C::new(0.5, -1.2);
    let c1 = family_connection(&v, &u, h1, r, &m.f).unwrap();
    let c2 = family_connection(&v, &u, h2, r, &m.f).unwrap();
    // η − β scales by ħ; θ differs exactly by (ħ₁⁻¹ − ħ₂⁻¹)Φ_u.
    let mut e1 = c1.eta.clone();
    e1.axpy(C::new(-1.0, 0.0), &u.beta);
    let mut e2 = c2.eta.clone();
    e2.axpy(C::new(-1.0, 0.0), &u.beta);
    assert!(end_gap(&e1.scaled(h2 / h1), &e2) < 1e-13);
    let mut phi_u = v.phi0();
    phi_u.axpy(C::new(1.0, 0.0), &u.phi);
    let mut dt = c1.theta.clone();
    dt.axpy(C::new(-1.0, 0.0), &c2.theta);
    let expect = phi_u.scaled(C::new(1.0, 0.0) / h1 - C::new(1.0, 0.0) / h2);
    assert!(end_gap(&dt, &expect) < 1e-13);
}

/// The headline continuation: Fuchsian n = 2, q₂-insertion, ħ = 1.
#[test]
fn q2_trajectory_converges_to_the_oper_limit() {
    let v = fuchsian(4, 2);
    let u = corner_point(&v, 0.1);
    let hbar = C::new(1.0, 0.0);
    let r_list = [0.16, 0.08, 0.04, 0.02];
    let traj = conformal_trajectory(&v, &u, hbar, &r_list).unwrap();
    assert!(traj.truncation.is_none(), "truncated: {:?}", traj.truncation);
    assert_eq!(traj.samples.len(), 4);
    let target = 1e-6 * v.mesh.total_mass();
    let scale = v.norm_end(&traj.limit.eta) + v.norm_end(&traj.limit.theta);
    for s in &traj.samples {
        eprintln!(
            "R = {:.3}: residual {:.3e}, flatness {:.3e}, ‖f‖ {:.3e}, dist {:.3e}",
            s.r, s.residual, s.flatness, s.f_norm, s.distance_to_limit
        );
        assert!(s.residual < target, "R = {}: residual {:.3e}", s.r, s.residual);
        // Flatness carries the O(h²) discretization defect of the assembled
        // connection on top of the solver tolerance.
        assert!(s.flatness / scale < 0.02, "R = {}: flatness {:.3e}", s.r, s.flatness / scale);
    }
    // Monotone convergence to the limit, distance < 1e-4 at R = 0.02, and
    // empirical order ≥ 1.8 in R.
    assert_eq!(traj.monotone_below, 0.16);
    let last = traj.samples.last().unwrap();
    assert!(last.distance_to_limit < 1e-4, "d(0.02) = {:.3e}", last.distance_to_limit);
    let dist: Vec<(f64, f64)> =
        traj.samples.iter().map(|s| (s.r, s.distance_to_limit)).collect();
    let slope_d = log_slope(&dist);
    let fs: Vec<(f64, f64)> = traj.samples.iter().map(|s| (s.r, s.f_norm)).collect();
    let slope_f = log_slope(&fs);
    eprintln!("distance slope {slope_d:.2}, ‖f_R‖ slope {slope_f:.2}");
    assert!(slope_d >= 1.8, "distance order {slope_d:.2}");
    assert!(slope_f >= 1.8, "metric-scale order {slope_f:.2}");
}
