//! Scratch probe for the dN_{(u,0)}(0) singular-value diagnostic: raw gap,
//! its witness mode's roughness, and smooth-sector Rayleigh quotients.

use std::sync::Arc;

use hodgelab_core::bundle::{EndSection, GradedVHS, make_fuchsian};
use hodgelab_core::conformal::{conformal_linearization, limit_linearization_witness};
use hodgelab_core::strata::SliceVector;
use hodgelab_core::surface::{FormType, SurfaceMesh, Twist};
use num_complex::Complex64 as C;

fn roughness(v: &Arc<GradedVHS>, f: &EndSection) -> f64 {
    let d = v.dbar_end(f).unwrap();
    v.norm_end(&d) / v.norm_end(f)
}

fn rq(v: &Arc<GradedVHS>, u: &SliceVector, f: &EndSection) -> f64 {
    let l = conformal_linearization(v, u, 0.0, f).unwrap();
    v.norm_end(&l) / v.norm_end(f)
}

#[test]
#[ignore]
fn probe() {
    for level in [3u32, 4] {
        let mesh = SurfaceMesh::build_bolza_level(level).unwrap();
        let v = Arc::new(make_fuchsian(&mesh, 2, Twist::trivial()).unwrap());
        let u = SliceVector::zero(&v);
        let nn = mesh.num_nodes();
        for iters in [3usize, 8] {
            match limit_linearization_witness(&v, &u, iters) {
                Ok((g, w)) => eprintln!(
                    "L{level} iters={iters}: gap {g:.4e}  (h={:.3}, h^2={:.3e})  witness roughness {:.3e} (1/h={:.2})",
                    mesh.h,
                    mesh.h * mesh.h,
                    roughness(&v, &w),
                    1.0 / mesh.h
                ),
                Err(e) => eprintln!("L{level} iters={iters}: FAILED {e}"),
            }
        }
        // Smooth-sector Rayleigh quotients.
        let mut fd = EndSection::zero(&mesh, 2, FormType::Zero);
        for i in 0..nn {
            *fd.at_mut(i, 0, 0) = C::new(1.0, 0.0);
            *fd.at_mut(i, 1, 1) = C::new(-1.0, 0.0);
        }
        eprintln!("L{level}: |L(const diag)|/|f| = {:.3e}, roughness {:.3e}", rq(&v, &u, &fd), roughness(&v, &fd));
        let mut fu = EndSection::zero(&mesh, 2, FormType::Zero);
        for i in 0..nn {
            *fu.at_mut(i, 0, 1) = C::new(1.0, 0.0);
        }
        eprintln!("L{level}: |L(const upper)|/|f| = {:.3e}, roughness {:.3e}", rq(&v, &u, &fu), roughness(&v, &fu));
    }
}
