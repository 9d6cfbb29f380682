//! Spectral flat-torus backend.
//!
//! Unit square torus z = x+iy, x,y ∈ [0,1), flat metric dx²+dy² (σ ≡ 1),
//! N×N uniform grid. Derivatives are Fourier multipliers, so every operator
//! identity holds to machine precision — this backend is the oracle substrate.
//!
//! A χ-twisted section with angles (θ₁,θ₂) is stored through its periodic
//! representative; the multiplier then acts at the shifted wavenumbers
//! (m+θ₁, n+θ₂). For the mode e^{2πi(mx+ny)}: ∂̄ ↦ πi(m+in), ∂ ↦ πi(m−in).

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::C64;
use crate::{Error, Result};

use super::{Backend, FormType, OpKind, SurfaceMesh, Twist};

pub struct TorusBackend {
    pub n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

pub(super) fn build(n: usize) -> Result<Arc<SurfaceMesh>> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::Config(format!(
            "torus grid size must be even and ≥ 4, got {n}"
        )));
    }
    let mut planner = FftPlanner::new();
    let backend = TorusBackend {
        n,
        fwd: planner.plan_fft_forward(n),
        inv: planner.plan_fft_inverse(n),
    };
    let mut positions = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            positions.push(C64::new(ix as f64 / n as f64, iy as f64 / n as f64));
        }
    }
    let nn = n * n;
    Ok(Arc::new(SurfaceMesh {
        genus: 1,
        h: 1.0 / n as f64,
        positions,
        weights: vec![1.0 / nn as f64; nn],
        sigma: vec![1.0; nn],
        backend: Backend::Torus(backend),
    }))
}

impl TorusBackend {
    /// In-place 2D FFT (forward or inverse, unnormalized).
    fn fft2(&self, data: &mut [C64], forward: bool) {
        let n = self.n;
        let plan = if forward { &self.fwd } else { &self.inv };
        // Rows are contiguous.
        for row in data.chunks_exact_mut(n) {
            plan.process(row);
        }
        // Columns via gather/scatter.
        let mut col = vec![C64::new(0.0, 0.0); n];
        for ix in 0..n {
            for iy in 0..n {
                col[iy] = data[ix + n * iy];
            }
            plan.process(&mut col);
            for iy in 0..n {
                data[ix + n * iy] = col[iy];
            }
        }
    }

    /// Signed wavenumber for FFT bin i.
    fn freq(&self, i: usize) -> f64 {
        let n = self.n as i64;
        let i = i as i64;
        (if i <= n / 2 - 1 { i } else { i - n }) as f64
    }

    fn multiplier(&self, kind: OpKind, twist: &Twist, ix: usize, iy: usize) -> C64 {
        let (t1, t2) = twist.angles();
        let m = self.freq(ix) + t1;
        let nn = self.freq(iy) + t2;
        let pi = std::f64::consts::PI;
        match kind {
            OpKind::Dbar => C64::new(0.0, pi) * C64::new(m, nn),
            OpKind::Del => C64::new(0.0, pi) * C64::new(m, -nn),
        }
    }

    pub fn scalar_op(&self, kind: OpKind, twist: &Twist, input: &[C64], output: &mut [C64]) {
        let n = self.n;
        output.copy_from_slice(input);
        self.fft2(output, true);
        for iy in 0..n {
            for ix in 0..n {
                output[ix + n * iy] *= self.multiplier(kind, twist, ix, iy);
            }
        }
        self.fft2(output, false);
        let scale = 1.0 / (n * n) as f64;
        for v in output.iter_mut() {
            *v *= scale;
        }
    }

    /// Adjoint of `scalar_op` w.r.t. the weighted pairings: multiplier
    /// conj(m_k) scaled by the frame-factor ratio 2^{Δ(p+q)}.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar_op_adjoint(
        &self,
        kind: OpKind,
        _weight2: i32,
        form_in: FormType,
        form_out: FormType,
        twist: &Twist,
        input: &[C64],
        output: &mut [C64],
    ) {
        let n = self.n;
        let ratio = (2.0f64).powi(
            form_out.p() + form_out.q() - form_in.p() - form_in.q(),
        );
        output.copy_from_slice(input);
        self.fft2(output, true);
        for iy in 0..n {
            for ix in 0..n {
                output[ix + n * iy] *= ratio * self.multiplier(kind, twist, ix, iy).conj();
            }
        }
        self.fft2(output, false);
        let scale = 1.0 / (n * n) as f64;
        for v in output.iter_mut() {
            *v *= scale;
        }
    }
}
