use ndarray::array;
use ndarray_linalg::{SVD, Solve};
use num_complex::Complex64 as C;

#[test]
fn complex_svd_and_solve_link() {
    let a = array![
        [C::new(1.0, 2.0), C::new(0.5, -1.0)],
        [C::new(-0.25, 0.0), C::new(3.0, 1.0)]
    ];
    let (_, s, _) = a.svd(true, true).unwrap();
    assert!(s[0] > s[1] && s[1] > 0.0);
    let b = array![C::new(1.0, 0.0), C::new(0.0, 1.0)];
    let x = a.solve(&b).unwrap();
    let r = a.dot(&x) - &b;
    assert!(r.iter().map(|z| z.norm()).sum::<f64>() < 1e-12);
}
