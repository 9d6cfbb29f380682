use std::env;
use std::path::Path;

/// The netlib backend links `-lcblas`, but Debian-family systems ship the CBLAS
/// symbols inside libopenblas rather than as a standalone libcblas. Expose a
/// symlink under OUT_DIR so the linker finds one.
fn main() {
    let out_dir = env::var("OUT_DIR").unwrap();
    let link = Path::new(&out_dir).join("libcblas.so");
    if !link.exists() {
        for candidate in [
            "/usr/lib/x86_64-linux-gnu/libopenblas.so",
            "/usr/lib/x86_64-linux-gnu/libcblas.so",
            "/usr/lib/libopenblas.so",
        ] {
            if Path::new(candidate).exists() {
                let _ = std::os::unix::fs::symlink(candidate, &link);
                break;
            }
        }
    }
    println!("cargo:rustc-link-search=native={out_dir}");
}
