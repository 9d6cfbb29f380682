//! Versioned JSON run configuration and its validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Seed for every random draw in the experiment; fixed seed ⇒ bitwise
    /// identical reports.
    pub seed: u64,
    pub surface: SurfaceSpec,
    pub vhs: VhsSpec,
    pub experiment: Experiment,
    #[serde(default)]
    pub parameters: Parameters,
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    pub kind: SurfaceKind,
    /// Spectral grid size for the torus; subdivision level for the Bolza
    /// octagon.
    pub resolution: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    Torus,
    Bolza,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VhsSpec {
    /// Rank of the graded chain.
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Nhc,
    Slice,
    Kuranishi,
    Transversality,
    Conformal,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Nhc => "nhc",
            Experiment::Slice => "slice",
            Experiment::Kuranishi => "kuranishi",
            Experiment::Transversality => "transversality",
            Experiment::Conformal => "conformal",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    /// L² amplitude of the holomorphic differential defining the Hitchin-section
    /// point (nhc, slice, conformal).
    pub q_amplitude: Option<f64>,
    /// ħ as [re, im] (conformal).
    pub hbar: Option<[f64; 2]>,
    /// Decreasing R sample list (conformal).
    pub r_samples: Option<Vec<f64>>,
    /// Finite-difference steps (transversality).
    pub fd_steps: Option<Vec<f64>>,
    /// Amplitude of the random harmonic coefficients (kuranishi).
    pub coefficient_amplitude: Option<f64>,
    /// Amplitude of the random gauge perturbation (slice).
    pub gauge_amplitude: Option<f64>,
    /// Pass/fail tolerance on the experiment's headline metric; the default is
    /// experiment-specific.
    pub tolerance: Option<f64>,
    /// Directory for the harmonic-basis disk cache (kuranishi,
    /// transversality); defaults to `hbasis-cache` next to the report.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// JSON report path; a `<report>.meta.json` sidecar carries timestamps.
    pub report: PathBuf,
    /// Optional CSV table with the per-row data.
    pub csv: Option<PathBuf>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        match self.surface.kind {
            SurfaceKind::Torus => {
                if !(4..=128).contains(&self.surface.resolution) {
                    return Err("torus resolution must be in 4..=128".into());
                }
                if self.experiment != Experiment::Nhc {
                    return Err(format!(
                        "experiment '{}' requires the Bolza surface",
                        self.experiment.name()
                    ));
                }
                if self.vhs.n != 2 {
                    return Err("torus runs support n = 2 only".into());
                }
            }
            SurfaceKind::Bolza => {
                // Every Bolza experiment builds its base point from the
                // discrete kernel of ∂̄, which needs level ≥ 4 for a clean
                // singular-value gap.
                if !(4..=5).contains(&self.surface.resolution) {
                    return Err("Bolza level must be 4 or 5".into());
                }
            }
        }
        if !(2..=3).contains(&self.vhs.n) {
            return Err("vhs.n must be 2 or 3".into());
        }
        let p = &self.parameters;
        for (name, v) in [
            ("q_amplitude", p.q_amplitude),
            ("coefficient_amplitude", p.coefficient_amplitude),
            ("gauge_amplitude", p.gauge_amplitude),
            ("tolerance", p.tolerance),
        ] {
            if let Some(x) = v {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(format!("{name} must be positive and finite"));
                }
            }
        }
        if let Some(rs) = &p.r_samples {
            if rs.is_empty() || rs.windows(2).any(|w| w[1] >= w[0]) {
                return Err("r_samples must be nonempty and strictly decreasing".into());
            }
            if rs[0] > 1.0 || *rs.last().unwrap() <= 0.0 {
                return Err("r_samples must lie in (0, 1]".into());
            }
        }
        if let Some(fd) = &p.fd_steps {
            if fd.is_empty() || fd.iter().any(|&t| !(t > 0.0 && t <= 0.2)) {
                return Err("fd_steps must be nonempty values in (0, 0.2]".into());
            }
        }
        if let Some(h) = p.hbar {
            let m = (h[0] * h[0] + h[1] * h[1]).sqrt();
            if !(0.1..=10.0).contains(&m) {
                return Err("|hbar| must lie in [0.1, 10]".into());
            }
        }
        Ok(())
    }
}
