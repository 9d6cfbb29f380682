use std::sync::Arc;
use hodgelab_core::bundle::make_fuchsian;
use hodgelab_core::strata::grade_singular_values;
use hodgelab_core::surface::{SurfaceMesh, Twist};

#[test]
#[ignore]
fn probe() {
    let mesh = SurfaceMesh::build_bolza_level(4).unwrap();
    for n in [2usize, 3] {
        let v = Arc::new(make_fuchsian(&mesh, n, Twist::trivial()).unwrap());
        for j in 1..=(n as i64) {
            let sv = grade_singular_values(&v, j).unwrap();
            if sv.is_empty() { continue; }
            let smax = sv.last().unwrap();
            let lo: Vec<String> = sv.iter().take(10).map(|x| format!("{x:.4e}")).collect();
            eprintln!("n={n} j={j} smax={smax:.4e} h2smax={:.4e} lowest={lo:?}", mesh.h*mesh.h*smax);
        }
    }
}
