//! Run configuration (TOML), the five two-state presets, and the run driver
//! that writes `populations.csv`, `convergence.csv`, `meta.json`,
//! `bath_validation.csv` and the optional `fields.csv`.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bath::{
    decompose_bath, uniform_grid, validate_expansion, BathExpansion, BrownianOscillatorBath, PoleScheme,
    ValidationReport,
};
use crate::ensemble::{
    field_dump_csv, populations_csv, run_ensemble, Checkpointing, ConvergenceReport, EnsembleConfig, EnsembleResult,
};
use crate::error::{Error, Result};
use crate::hierarchy::HierarchySpace;
use crate::model::{hermiticity_defect, AlphaDescriptors, CMatrix, SystemModel};
use crate::stochastic::{DriftConvention, TrajectorySetup};

pub const PRESETS: [&str; 5] = ["L", "minusQ", "plusQ", "LminusQ", "LplusQ"];

/// Expansion error gate relative to |C(0)| on the validation window.
pub const BATH_TOLERANCE: f64 = 1e-3;
const VALIDATION_WINDOW: f64 = 10.0;
const VALIDATION_POINTS: usize = 401;

/// Complex matrix as rows of `[re, im]` pairs.
pub type MatrixSpec = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitModel {
    pub h_s: MatrixSpec,
    pub q_s: MatrixSpec,
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub omega10: f64,
    #[serde(rename = "V")]
    pub v: f64,
    pub lambda: f64,
    pub theta_b: f64,
    pub omega_b: f64,
    /// Replaces the two-state parameters above when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explicit: Option<ExplicitModel>,
    /// Initial reduced density matrix; `|0⟩⟨0|` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho0: Option<MatrixSpec>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            omega10: 0.0,
            v: 1.0,
            lambda: 0.1,
            theta_b: 1.0,
            omega_b: 1.0,
            explicit: None,
            rho0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BathConfig {
    pub zeta: f64,
    pub omega_b: f64,
    pub beta: f64,
    pub scheme: PoleScheme,
    pub n_poles: usize,
    /// Discrete `[c, ω]` modes; replaces the Brownian oscillator when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<[f64; 2]>>,
}

impl Default for BathConfig {
    fn default() -> Self {
        Self {
            zeta: 1.0,
            omega_b: 1.0,
            beta: 1.0,
            scheme: PoleScheme::Pade,
            n_poles: 2,
            modes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchyConfig {
    #[serde(rename = "L")]
    pub level: usize,
    pub max_size: usize,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            level: 9,
            max_size: crate::hierarchy::DEFAULT_SIZE_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationConfig {
    pub dt: f64,
    pub t_final: f64,
    pub output_stride: usize,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 10.0,
            output_stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    #[serde(rename = "N")]
    pub n: u64,
    /// Checkpoint sizes for `convergence.csv`; powers of ten below N when empty.
    pub ladder: Vec<u64>,
    pub seed: u64,
    /// 0 uses every core.
    pub workers: usize,
    /// Save a resumable checkpoint after this many trajectories; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            n: 1000,
            ladder: Vec::new(),
            seed: 2024,
            workers: 0,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlagsConfig {
    pub gt: bool,
    pub drift: DriftConvention,
    /// Record fields every this many steps; 0 disables.
    pub field_dump_stride: usize,
    /// Leading trajectories included in the field dump.
    pub field_dump_trajectories: u64,
}

impl Default for FlagsConfig {
    fn default() -> Self {
        Self {
            gt: true,
            drift: DriftConvention::Unbiased,
            field_dump_stride: 0,
            field_dump_trajectories: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub bath: BathConfig,
    pub hierarchy: HierarchyConfig,
    pub integration: IntegrationConfig,
    pub ensemble: EnsembleSection,
    pub flags: FlagsConfig,
}

impl RunConfig {
    /// One of the five two-state cases (ω₁₀ = 0, V = ω_B = ζ = β = 1, dt = 0.001).
    pub fn preset(name: &str) -> Result<Self> {
        let (lambda, theta_b) = match name {
            "L" => (0.1, 1.0),
            "minusQ" => (0.0, 0.8),
            "plusQ" => (0.0, 1.25),
            "LminusQ" => (0.1, 0.8),
            "LplusQ" => (0.1, 1.25),
            other => {
                return Err(Error::config(
                    "preset",
                    format!("unknown preset `{other}`; expected one of {}", PRESETS.join(", ")),
                ))
            }
        };
        let mut cfg = RunConfig::default();
        cfg.model.lambda = lambda;
        cfg.model.theta_b = theta_b;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let key = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_owned)
                .unwrap_or_else(|| "config".to_owned());
            Error::config(key, e.to_string().trim().to_owned())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(key: &str, x: f64) -> Result<()> {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be positive and finite, got {x}")))
            }
        }
        fn finite(key: &str, x: f64) -> Result<()> {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be finite, got {x}")))
            }
        }
        let m = &self.model;
        match &m.explicit {
            Some(e) => {
                finite("model.explicit.alpha0", e.alpha0)?;
                finite("model.explicit.alpha1", e.alpha1)?;
                finite("model.explicit.alpha2", e.alpha2)?;
                let h = matrix_from_spec("model.explicit.h_s", &e.h_s)?;
                let q = matrix_from_spec("model.explicit.q_s", &e.q_s)?;
                if h.nrows() != q.nrows() {
                    return Err(Error::config("model.explicit.q_s", "must match the size of h_s"));
                }
            }
            None => {
                finite("model.omega10", m.omega10)?;
                finite("model.V", m.v)?;
                if !(m.lambda >= 0.0 && m.lambda.is_finite()) {
                    return Err(Error::config("model.lambda", format!("must be non-negative, got {}", m.lambda)));
                }
                positive("model.theta_b", m.theta_b)?;
                positive("model.omega_b", m.omega_b)?;
            }
        }
        if let Some(r) = &m.rho0 {
            let rho = matrix_from_spec("model.rho0", r)?;
            if rho.nrows() != self.system_dim() {
                return Err(Error::config("model.rho0", "size does not match the system"));
            }
        }
        let b = &self.bath;
        match &b.modes {
            Some(modes) => {
                if modes.is_empty() {
                    return Err(Error::config("bath.modes", "needs at least one mode"));
                }
                for (i, [c, w]) in modes.iter().enumerate() {
                    finite(&format!("bath.modes[{i}].c"), *c)?;
                    positive(&format!("bath.modes[{i}].omega"), *w)?;
                }
            }
            None => {
                positive("bath.zeta", b.zeta)?;
                positive("bath.omega_b", b.omega_b)?;
                if b.n_poles == 0 && b.scheme == PoleScheme::Pade {
                    return Err(Error::config("bath.n_poles", "Padé needs at least one pole"));
                }
            }
        }
        positive("bath.beta", b.beta)?;
        if self.hierarchy.level == 0 {
            return Err(Error::config("hierarchy.L", "must be at least 1"));
        }
        if self.hierarchy.max_size == 0 {
            return Err(Error::config("hierarchy.max_size", "must be at least 1"));
        }
        let i = &self.integration;
        positive("integration.dt", i.dt)?;
        positive("integration.t_final", i.t_final)?;
        if i.dt > i.t_final {
            return Err(Error::config("integration.dt", "exceeds integration.t_final"));
        }
        if i.output_stride == 0 {
            return Err(Error::config("integration.output_stride", "must be at least 1"));
        }
        let e = &self.ensemble;
        if e.n == 0 {
            return Err(Error::config("ensemble.N", "must be at least 1"));
        }
        if let Some(bad) = e.ladder.iter().find(|&&n| n == 0 || n > e.n) {
            return Err(Error::config("ensemble.ladder", format!("entry {bad} is outside 1..=ensemble.N")));
        }
        Ok(())
    }

    fn system_dim(&self) -> usize {
        self.model.explicit.as_ref().map(|e| e.h_s.len()).unwrap_or(2)
    }

    pub fn system_model(&self) -> Result<SystemModel> {
        let m = &self.model;
        match &m.explicit {
            Some(e) => SystemModel::new(
                matrix_from_spec("model.explicit.h_s", &e.h_s)?,
                matrix_from_spec("model.explicit.q_s", &e.q_s)?,
                AlphaDescriptors {
                    alpha0: e.alpha0,
                    alpha1: e.alpha1,
                    alpha2: e.alpha2,
                },
            ),
            None => SystemModel::two_state(m.omega10, m.v, m.lambda, m.theta_b, m.omega_b),
        }
    }

    pub fn initial_density(&self) -> Result<CMatrix> {
        match &self.model.rho0 {
            Some(r) => matrix_from_spec("model.rho0", r),
            None => {
                let d = self.system_dim();
                let mut rho = CMatrix::zeros(d, d);
                rho[(0, 0)] = Complex64::new(1.0, 0.0);
                Ok(rho)
            }
        }
    }

    pub fn bath_expansion(&self) -> Result<BathExpansion> {
        let b = &self.bath;
        match &b.modes {
            Some(modes) => {
                let modes: Vec<(f64, f64)> = modes.iter().map(|[c, w]| (*c, *w)).collect();
                BathExpansion::from_discrete_modes(&modes, b.beta)
            }
            None => decompose_bath(&self.brownian_bath()?, b.scheme, b.n_poles),
        }
    }

    fn brownian_bath(&self) -> Result<BrownianOscillatorBath> {
        BrownianOscillatorBath::new(self.bath.zeta, self.bath.omega_b, self.bath.beta)
    }

    /// Ladder actually used: the configured one, or powers of ten below N.
    pub fn ladder(&self) -> Vec<u64> {
        if !self.ensemble.ladder.is_empty() {
            return self.ensemble.ladder.clone();
        }
        let mut out = Vec::new();
        let mut p = 10u64;
        while p < self.ensemble.n {
            out.push(p);
            p = p.saturating_mul(10);
        }
        out.push(self.ensemble.n);
        out
    }

    pub fn trajectory_setup(&self, expansion: &BathExpansion) -> Result<TrajectorySetup> {
        let space = HierarchySpace::with_budget(expansion.len(), self.hierarchy.level, self.hierarchy.max_size)?;
        let stride = (self.flags.field_dump_stride > 0).then_some(self.flags.field_dump_stride);
        Ok(TrajectorySetup::with_space(
            self.system_model()?,
            expansion,
            space,
            self.initial_density()?,
            self.integration.dt,
            self.integration.t_final,
        )?
        .with_output_stride(self.integration.output_stride)
        .with_gt(self.flags.gt)
        .with_drift(self.flags.drift)
        .with_field_dump(stride))
    }

    /// Ensemble settings for `setup`, without checkpointing.
    pub fn ensemble_config(&self, setup: TrajectorySetup) -> EnsembleConfig {
        let mut ens = EnsembleConfig::new(setup, self.ensemble.n, self.ensemble.seed);
        ens.ladder = self.ladder();
        ens.workers = self.ensemble.workers;
        ens.field_dump_trajectories = if self.flags.field_dump_stride > 0 {
            self.flags.field_dump_trajectories
        } else {
            0
        };
        ens.fingerprint = self.to_toml_string();
        ens
    }

    /// Runs the ensemble in memory; no files are written.
    pub fn simulate(&self) -> Result<(EnsembleResult, ConvergenceReport)> {
        self.validate()?;
        let setup = self.trajectory_setup(&self.bath_expansion()?)?;
        run_ensemble(&self.ensemble_config(setup))
    }
}

/// Parses a `[[re, im], ...]` row list into a square matrix.
pub fn matrix_from_spec(key: &str, spec: &MatrixSpec) -> Result<CMatrix> {
    let n = spec.len();
    if n == 0 {
        return Err(Error::config(key, "matrix is empty"));
    }
    let mut m = CMatrix::zeros(n, n);
    for (r, row) in spec.iter().enumerate() {
        if row.len() != n {
            return Err(Error::config(key, format!("row {r} has {} entries, expected {n}", row.len())));
        }
        for (c, [re, im]) in row.iter().enumerate() {
            if !(re.is_finite() && im.is_finite()) {
                return Err(Error::config(key, format!("entry ({r}, {c}) is not finite")));
            }
            m[(r, c)] = Complex64::new(*re, *im);
        }
    }
    if hermiticity_defect(&m) > 1e-12 {
        return Err(Error::config(key, "matrix is not Hermitian"));
    }
    Ok(m)
}

pub fn matrix_to_spec(m: &CMatrix) -> MatrixSpec {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

/// Process exit status for an error: 2 configuration, 3 bath, 4 blow-up,
/// 5 every trajectory discarded, 1 anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => 2,
        Error::InvalidBath(_) | Error::DegenerateDamping { .. } | Error::Quadrature { .. } => 3,
        Error::Blowup { .. } => 4,
        Error::AllDiscarded { .. } | Error::WeightCollapse { .. } => 5,
        _ => 1,
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub validate_bath_only: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub bath_report: Option<ValidationReport>,
    pub ensemble: Option<(EnsembleResult, ConvergenceReport)>,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    program: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    seed: u64,
    ladder: Vec<u64>,
    alphas: AlphaDescriptors,
    bath_terms: Vec<BathTerm>,
    bath_validation: Option<BathSummary>,
    hierarchy_size: usize,
    n_steps: usize,
    output_points: usize,
    trajectories: u64,
    accepted: u64,
    discarded: u64,
    discards: &'a [crate::ensemble::Discard],
    field_std_raw: f64,
    field_std_transformed: f64,
    wall_time_seconds: f64,
}

#[derive(Serialize)]
struct BathTerm {
    eta: [f64; 2],
    gamma: [f64; 2],
}

#[derive(Serialize)]
struct BathSummary {
    max_abs_error: f64,
    max_reversed_error: f64,
    c0_abs: f64,
    relative_error: f64,
    tolerance: f64,
}

/// Bath decomposition, validation, ensemble, output files.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out_dir)?;
    let mut files = Vec::new();
    let expansion = cfg.bath_expansion()?;

    let bath_report = match &cfg.bath.modes {
        Some(_) => None,
        None => {
            let bath = cfg.brownian_bath()?;
            let grid = uniform_grid(VALIDATION_WINDOW, VALIDATION_POINTS);
            let report = validate_expansion(&expansion, &bath, &grid)?;
            let path = opts.out_dir.join("bath_validation.csv");
            std::fs::write(&path, report.to_csv())?;
            files.push(path);
            let rel = report.max_abs_error / report.c0_abs;
            if rel > BATH_TOLERANCE {
                log::warn!(
                    "bath expansion error {:.3e}·|C(0)| exceeds {BATH_TOLERANCE:e}; consider more poles",
                    rel
                );
            } else {
                log::info!("bath expansion error {:.3e}·|C(0)|", rel);
            }
            Some(report)
        }
    };
    if opts.validate_bath_only {
        return Ok(RunOutcome {
            bath_report,
            ensemble: None,
            files,
        });
    }

    let setup = cfg.trajectory_setup(&expansion)?;
    let hierarchy_size = setup.generator().space().len();
    let n_steps = setup.n_steps();
    let alphas = setup.model().alphas();
    let mut ens = cfg.ensemble_config(setup);
    if cfg.ensemble.checkpoint_every > 0 {
        ens.checkpoint = Some(Checkpointing {
            path: opts.out_dir.join("checkpoint.json"),
            every: cfg.ensemble.checkpoint_every,
        });
    }
    log::info!(
        "running {} trajectories: {} hierarchy entries, {} steps each",
        cfg.ensemble.n,
        hierarchy_size,
        n_steps
    );
    let (result, report) = run_ensemble(&ens)?;

    let path = opts.out_dir.join("populations.csv");
    std::fs::write(&path, populations_csv(&result))?;
    files.push(path);
    let path = opts.out_dir.join("convergence.csv");
    std::fs::write(&path, report.to_csv())?;
    files.push(path);
    if !result.field_dump.is_empty() {
        let path = opts.out_dir.join("fields.csv");
        std::fs::write(&path, field_dump_csv(&result.field_dump))?;
        files.push(path);
    }

    let acc = &result.accumulator;
    let manifest = Manifest {
        program: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        seed: cfg.ensemble.seed,
        ladder: ens.ladder.clone(),
        alphas,
        bath_terms: expansion
            .terms()
            .iter()
            .map(|t| BathTerm {
                eta: [t.eta.re, t.eta.im],
                gamma: [t.gamma.re, t.gamma.im],
            })
            .collect(),
        bath_validation: bath_report.as_ref().map(|r| BathSummary {
            max_abs_error: r.max_abs_error,
            max_reversed_error: r.max_reversed_error,
            c0_abs: r.c0_abs,
            relative_error: r.max_abs_error / r.c0_abs,
            tolerance: BATH_TOLERANCE,
        }),
        hierarchy_size,
        n_steps,
        output_points: result.times.len(),
        trajectories: cfg.ensemble.n,
        accepted: acc.count(),
        discarded: acc.discarded(),
        discards: &result.discards,
        field_std_raw: acc.field_stats().raw_std(),
        field_std_transformed: acc.field_stats().transformed_std(),
        wall_time_seconds: result.wall_time,
    };
    let path = opts.out_dir.join("meta.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    files.push(path);

    Ok(RunOutcome {
        bath_report,
        ensemble: Some((result, report)),
        files,
    })
}

/// Loads either a config file or a preset.
pub fn load(config: Option<&Path>, preset: Option<&str>) -> Result<RunConfig> {
    match (config, preset) {
        (Some(_), Some(_)) => Err(Error::config("preset", "use either a config file or a preset, not both")),
        (Some(path), None) => RunConfig::from_path(path),
        (None, Some(name)) => RunConfig::preset(name),
        (None, None) => Err(Error::config("preset", "a config file or a preset is required")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn preset_descriptors() {
        let m = RunConfig::preset("LplusQ").unwrap().system_model().unwrap();
        let a = m.alphas();
        assert!((a.alpha0 - 0.15625).abs() < 1e-12);
        assert!((a.alpha1 + 0.698_771_242_968_684).abs() < 1e-12);
        assert!((a.alpha2 - 0.28125).abs() < 1e-12);
        let l = RunConfig::preset("L").unwrap();
        assert_eq!(l.system_model().unwrap().alphas().alpha2, 0.0);
        for name in PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            assert_eq!(cfg.integration.dt, 1e-3);
            assert_eq!((cfg.model.omega10, cfg.model.v, cfg.model.omega_b), (0.0, 1.0, 1.0));
            assert_eq!((cfg.bath.zeta, cfg.bath.beta), (1.0, 1.0));
            cfg.validate().unwrap();
        }
        assert!(matches!(RunConfig::preset("nope"), Err(Error::Config { .. })));
    }

    #[test]
    fn errors_name_the_key() {
        let err = RunConfig::from_toml_str("[integration]\ndt = -1.0\n").unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "integration.dt"),
            other => panic!("unexpected {other:?}"),
        }
        let err = RunConfig::from_toml_str("[model]\nfoo = 1.0\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "foo"), "{err:?}");
        assert_eq!(exit_code(&err), 2);
        let err = RunConfig::from_toml_str("[hierarchy]\nL = 0\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "hierarchy.L"));
        let err = RunConfig::from_toml_str("[ensemble]\nN = 10\nladder = [20]\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "ensemble.ladder"));
    }

    #[test]
    fn explicit_model_and_rho0() {
        let text = r#"
[model]
rho0 = [[[0.5, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.5, 0.0]]]
[model.explicit]
h_s = [[[0.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [0.5, 0.0]]]
q_s = [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.25, 0.0]]]
alpha0 = 0.0
alpha1 = -0.5
alpha2 = 0.1
"#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        let m = cfg.system_model().unwrap();
        assert_eq!(m.alphas().alpha2, 0.1);
        assert_eq!(cfg.initial_density().unwrap()[(1, 1)].re, 0.5);
        assert!((m.q_sqrt()[(1, 1)].re - 0.5).abs() < 1e-12);
    }

    #[test]
    fn default_ladder_is_decades() {
        let mut cfg = RunConfig::default();
        cfg.ensemble.n = 25_000;
        assert_eq!(cfg.ladder(), vec![10, 100, 1000, 10_000, 25_000]);
    }

    fn arb_config() -> impl Strategy<Value = RunConfig> {
        (
            (-5.0f64..5.0, 0.01f64..5.0, 0.0f64..1.0, 0.1f64..2.0, 0.1f64..3.0),
            (0.1f64..3.0, 0.1f64..3.0, 0.1f64..5.0, prop::bool::ANY, 1usize..6),
            (1usize..12, 1e-4f64..1e-2, 1.0f64..20.0, 1usize..100),
            (1u64..100_000, any::<u64>(), 0usize..16, prop::bool::ANY, 0usize..50),
        )
            .prop_map(|(m, b, i, e)| {
                let mut cfg = RunConfig::default();
                cfg.model.omega10 = m.0;
                cfg.model.v = m.1;
                cfg.model.lambda = m.2;
                cfg.model.theta_b = m.3;
                cfg.model.omega_b = m.4;
                cfg.bath.zeta = b.0;
                cfg.bath.omega_b = b.1;
                cfg.bath.beta = b.2;
                cfg.bath.scheme = if b.3 { PoleScheme::Pade } else { PoleScheme::Matsubara };
                cfg.bath.n_poles = b.4;
                cfg.hierarchy.level = i.0;
                cfg.integration.dt = i.1;
                cfg.integration.t_final = i.2;
                cfg.integration.output_stride = i.3;
                cfg.ensemble.n = e.0;
                cfg.ensemble.seed = e.1;
                cfg.ensemble.workers = e.2;
                cfg.ensemble.ladder = vec![1, e.0];
                cfg.flags.gt = e.3;
                cfg.flags.field_dump_stride = e.4;
                cfg
            })
    }

    proptest! {
        #[test]
        fn toml_round_trip(cfg in arb_config()) {
            let text = cfg.to_toml_string();
            let back = RunConfig::from_toml_str(&text).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }

    #[test]
    fn round_trip_with_optional_sections() {
        let mut cfg = RunConfig::preset("LminusQ").unwrap();
        cfg.bath.modes = Some(vec![[1.0, 2.0], [0.5, 3.0]]);
        cfg.model.rho0 = Some(matrix_to_spec(&(CMatrix::identity(2, 2) * Complex64::new(0.5, 0.0))));
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validate_bath_only_writes_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::preset("L").unwrap();
        cfg.bath.n_poles = 4;
        let out = run(
            &cfg,
            &RunOptions {
                out_dir: dir.path().to_path_buf(),
                validate_bath_only: true,
            },
        )
        .unwrap();
        let report = out.bath_report.unwrap();
        assert!(report.max_abs_error < BATH_TOLERANCE * report.c0_abs);
        let csv = std::fs::read_to_string(dir.path().join("bath_validation.csv")).unwrap();
        assert!(csv.starts_with("t,abs_error\n"));
        assert!(out.ensemble.is_none());
    }

    #[test]
    fn deterministic_preset_run_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::preset("L").unwrap();
        cfg.hierarchy.level = 3;
        cfg.integration.t_final = 0.2;
        cfg.ensemble.n = 2;
        cfg.ensemble.workers = 1;
        let out = run(
            &cfg,
            &RunOptions {
                out_dir: dir.path().to_path_buf(),
                validate_bath_only: false,
            },
        )
        .unwrap();
        for name in ["populations.csv", "convergence.csv", "meta.json", "bath_validation.csv"] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
        assert_eq!(meta["seed"], 2024);
        assert_eq!(meta["discarded"], 0);
        assert_eq!(meta["config"]["hierarchy"]["L"], 3);
        assert_eq!(out.files.len(), 4);
        let conv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
        assert!(conv.lines().skip(1).all(|l| l.starts_with("2,")));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::config("x", "y")), 2);
        assert_eq!(exit_code(&Error::InvalidBath("x".into())), 3);
        assert_eq!(
            exit_code(&Error::Blowup {
                t: 1.0,
                max_abs: 1.0,
                trajectory: None
            }),
            4
        );
        assert_eq!(exit_code(&Error::AllDiscarded { count: 3 }), 5);
        assert_eq!(exit_code(&Error::InvalidInput("x".into())), 1);
    }
}
