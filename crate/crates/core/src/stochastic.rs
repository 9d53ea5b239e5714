//! Raw Gaussian fields, the norm-conserving Girsanov change of measure, and
//! single-trajectory propagation.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bath::BathExpansion;
use crate::error::{Error, Result};
use crate::hierarchy::{
    build_dressed_couplings, fill_dressed_couplings, initial_state, DdoState, Generator, HierarchySpace, Rk4,
};
pub use crate::hierarchy::FieldPair;
use crate::model::{CMatrix, SystemModel};

/// Trajectories whose weight falls to or below this are discarded.
pub const THETA_FLOOR: f64 = 1e-14;

/// Two independent `N(0, 1/dt)` variates.
pub fn sample_raw_fields<R: Rng + ?Sized>(rng: &mut R, dt: f64) -> FieldPair {
    let scale = dt.sqrt().recip();
    let xi: f64 = rng.sample(StandardNormal);
    let xi_prime: f64 = rng.sample(StandardNormal);
    FieldPair::new(xi * scale, xi_prime * scale)
}

/// Per-trajectory generator: the key comes from `base_seed` and the
/// trajectory index selects the stream, so distinct `(base_seed, index)`
/// pairs never share a sequence.
pub fn trajectory_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GirsanovWeights {
    /// Pairs with the ket-side field `ξ`.
    pub w_minus: f64,
    /// Pairs with the bra-side field `ξ′`.
    pub w_plus: f64,
}

/// `w± = Re{(1±i)√α₂ Σ_k tr[Q^{1/2} ρ⁽¹⁾_k]}/Θ`, read from the tier-1 entries.
pub fn girsanov_weights(state: &DdoState, model: &SystemModel, theta: f64) -> Result<GirsanovWeights> {
    // Written negated so that NaN also counts as a collapse.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(theta > THETA_FLOOR) {
        return Err(Error::WeightCollapse {
            t: f64::NAN,
            theta,
            trajectory: None,
        });
    }
    if model.is_linear() {
        return Ok(GirsanovWeights::default());
    }
    let d = model.dim();
    let qs = model.q_sqrt().as_slice();
    let mut total = Complex64::new(0.0, 0.0);
    for idx in 1..=state.tier_one_len() {
        let rho = state.block(idx);
        // tr(AB) = Σ_{r,c} A[r,c] B[c,r]
        for c in 0..d {
            for r in 0..d {
                total += qs[r + c * d] * rho[c + r * d];
            }
        }
    }
    let z = model.sqrt_alpha2() * total;
    Ok(GirsanovWeights {
        w_minus: (Complex64::new(1.0, -1.0) * z).re / theta,
        w_plus: (Complex64::new(1.0, 1.0) * z).re / theta,
    })
}

/// `sgn(ξ)·sqrt(ξ² + w²) − w`, with `sgn(0) = +1`.
pub fn girsanov_transform(xi: f64, w: f64) -> f64 {
    let s = if xi < 0.0 { -1.0 } else { 1.0 };
    s * xi.hypot(w) - w
}

/// Which sign of the Girsanov weight enters the field transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftConvention {
    /// `ξ̃ = transform(ξ, −w)`: the sampled fields drift by `+w`, which is the
    /// drift that makes `E[ρ°/Θ]` with `Θ = Re tr ρ` unbiased.
    #[default]
    Unbiased,
    /// `ξ̃ = transform(ξ, w)` applied verbatim.
    Literal,
}

impl DriftConvention {
    pub fn transform(self, xi: f64, w: f64) -> f64 {
        match self {
            DriftConvention::Unbiased => girsanov_transform(xi, -w),
            DriftConvention::Literal => girsanov_transform(xi, w),
        }
    }
}

/// Trajectory weight `Θ = Re tr ρ_S`, plus an accumulator of
/// `∫ (w⁻ξ̃ + w⁺ξ̃′) dτ` used as a consistency check on `ln Θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaTracker {
    pub theta: f64,
    pub log_integral: f64,
}

impl Default for ThetaTracker {
    fn default() -> Self {
        Self {
            theta: 1.0,
            log_integral: 0.0,
        }
    }
}

impl ThetaTracker {
    pub fn new(state: &DdoState) -> Self {
        Self {
            theta: state.trace(0).re,
            log_integral: 0.0,
        }
    }

    /// Adds `(w⁻ξ̃ + w⁺ξ̃′)·dt` to the log accumulator.
    pub fn accumulate(&mut self, weights: GirsanovWeights, fields: FieldPair, dt: f64) {
        self.log_integral += (weights.w_minus * fields.xi + weights.w_plus * fields.xi_prime) * dt;
    }
}

/// Re-reads `Θ` from the tier-0 trace after a step.
pub fn update_theta(tracker: ThetaTracker, state_after_step: &DdoState) -> Result<ThetaTracker> {
    let theta = state_after_step.trace(0).re;
    // Written negated so that NaN also counts as a collapse.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(theta > THETA_FLOOR) {
        return Err(Error::WeightCollapse {
            t: f64::NAN,
            theta,
            trajectory: None,
        });
    }
    Ok(ThetaTracker { theta, ..tracker })
}

/// Immutable inputs shared by every trajectory of a run.
#[derive(Debug, Clone)]
pub struct TrajectorySetup {
    generator: Generator,
    model: SystemModel,
    rho0: CMatrix,
    dt: f64,
    n_steps: usize,
    output_stride: usize,
    gt: bool,
    drift: DriftConvention,
    field_dump_stride: Option<usize>,
}

impl TrajectorySetup {
    /// `t_final` is rounded to a whole number of steps.
    pub fn new(
        model: SystemModel,
        expansion: &BathExpansion,
        level: usize,
        rho0: CMatrix,
        dt: f64,
        t_final: f64,
    ) -> Result<Self> {
        let space = HierarchySpace::new(expansion.len(), level)?;
        Self::with_space(model, expansion, space, rho0, dt, t_final)
    }

    pub fn with_space(
        model: SystemModel,
        expansion: &BathExpansion,
        space: HierarchySpace,
        rho0: CMatrix,
        dt: f64,
        t_final: f64,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config("integration.dt", format!("must be positive, got {dt}")));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::config("integration.t_final", format!("must be positive, got {t_final}")));
        }
        if rho0.nrows() != model.dim() || rho0.ncols() != model.dim() {
            return Err(Error::InvalidInput("initial density matrix does not match the system".into()));
        }
        initial_state(&space, &rho0)?;
        let n_steps = (t_final / dt).round().max(1.0) as usize;
        Ok(Self {
            generator: Generator::new(space, &model, expansion)?,
            model,
            rho0,
            dt,
            n_steps,
            output_stride: 1,
            gt: true,
            drift: DriftConvention::default(),
            field_dump_stride: None,
        })
    }

    pub fn with_output_stride(mut self, stride: usize) -> Self {
        self.output_stride = stride.max(1);
        self
    }

    pub fn with_gt(mut self, enabled: bool) -> Self {
        self.gt = enabled;
        self
    }

    pub fn with_drift(mut self, drift: DriftConvention) -> Self {
        self.drift = drift;
        self
    }

    pub fn with_field_dump(mut self, stride: Option<usize>) -> Self {
        self.field_dump_stride = stride.filter(|&s| s > 0);
        self
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn rho0(&self) -> &CMatrix {
        &self.rho0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn output_stride(&self) -> usize {
        self.output_stride
    }

    pub fn gt_enabled(&self) -> bool {
        self.gt
    }

    pub fn drift(&self) -> DriftConvention {
        self.drift
    }

    pub fn field_dump_stride(&self) -> Option<usize> {
        self.field_dump_stride
    }

    /// Output grid `t_j = j·stride·dt` for `j·stride ≤ n_steps`.
    pub fn output_times(&self) -> Vec<f64> {
        (0..=self.n_steps / self.output_stride)
            .map(|j| (j * self.output_stride) as f64 * self.dt)
            .collect()
    }
}

/// One row of the optional field dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub t: f64,
    pub raw: FieldPair,
    pub transformed: FieldPair,
}

/// Running moments of the raw and transformed fields over every step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldStats {
    pub count: u64,
    pub raw_sum: f64,
    pub raw_sum_sq: f64,
    pub transformed_sum: f64,
    pub transformed_sum_sq: f64,
}

impl FieldStats {
    fn push(&mut self, raw: FieldPair, transformed: FieldPair) {
        self.count += 2;
        self.raw_sum += raw.xi + raw.xi_prime;
        self.raw_sum_sq += raw.xi * raw.xi + raw.xi_prime * raw.xi_prime;
        self.transformed_sum += transformed.xi + transformed.xi_prime;
        self.transformed_sum_sq += transformed.xi * transformed.xi + transformed.xi_prime * transformed.xi_prime;
    }

    pub fn merge(&mut self, other: &FieldStats) {
        self.count += other.count;
        self.raw_sum += other.raw_sum;
        self.raw_sum_sq += other.raw_sum_sq;
        self.transformed_sum += other.transformed_sum;
        self.transformed_sum_sq += other.transformed_sum_sq;
    }

    fn std(count: u64, sum: f64, sum_sq: f64) -> f64 {
        if count == 0 {
            return f64::NAN;
        }
        let n = count as f64;
        let mean = sum / n;
        (sum_sq / n - mean * mean).max(0.0).sqrt()
    }

    /// Standard deviation of ξ and ξ′ pooled.
    pub fn raw_std(&self) -> f64 {
        Self::std(self.count, self.raw_sum, self.raw_sum_sq)
    }

    /// Standard deviation of ξ̃ and ξ̃′ pooled.
    pub fn transformed_std(&self) -> f64 {
        Self::std(self.count, self.transformed_sum, self.transformed_sum_sq)
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub index: u64,
    pub dim: usize,
    /// Column-major `d×d` samples, one per output time: `ρ°/Θ` with GT,
    /// `ρ°` without.
    pub samples: Vec<Complex64>,
    pub thetas: Vec<f64>,
    pub fields: Vec<FieldSample>,
    pub field_stats: FieldStats,
    /// Largest `|ln Θ − ∫(w⁻ξ̃ + w⁺ξ̃′)dτ|` increment mismatch over one step.
    pub max_log_step_mismatch: f64,
}

impl TrajectoryRecord {
    pub fn sample(&self, j: usize) -> CMatrix {
        let dd = self.dim * self.dim;
        CMatrix::from_column_slice(self.dim, self.dim, &self.samples[j * dd..(j + 1) * dd])
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

impl FieldPair {
    pub(crate) fn is_finite(&self) -> bool {
        self.xi.is_finite() && self.xi_prime.is_finite()
    }
}

/// Propagates trajectory `index` of the ensemble seeded by `base_seed`.
pub fn propagate_trajectory(setup: &TrajectorySetup, base_seed: u64, index: u64) -> Result<TrajectoryRecord> {
    propagate_inner(setup, base_seed, index).map_err(|e| e.with_trajectory(index))
}

fn propagate_inner(setup: &TrajectorySetup, base_seed: u64, index: u64) -> Result<TrajectoryRecord> {
    let mut rng = trajectory_rng(base_seed, index);
    let gen = &setup.generator;
    let d = setup.model.dim();
    let dd = d * d;
    let dt = setup.dt;
    let n_out = setup.n_steps / setup.output_stride + 1;
    let mut record = TrajectoryRecord {
        index,
        dim: d,
        samples: Vec::with_capacity(n_out * dd),
        thetas: Vec::with_capacity(n_out),
        fields: Vec::new(),
        field_stats: FieldStats::default(),
        max_log_step_mismatch: 0.0,
    };
    let mut state = initial_state(gen.space(), &setup.rho0)?;
    let mut tracker = ThetaTracker::new(&state);
    let mut rk = Rk4::new(gen);
    let mut couplings = build_dressed_couplings(&setup.model, FieldPair::zero());
    let linear = setup.model.is_linear();

    push_sample(&mut record, &state, tracker.theta, setup.gt);
    for step in 0..setup.n_steps {
        let t = step as f64 * dt;
        let raw = sample_raw_fields(&mut rng, dt);
        let (fields, weights) = if setup.gt && !linear {
            let w = girsanov_weights(&state, &setup.model, tracker.theta).map_err(|e| at_time(e, t))?;
            let f = FieldPair::new(
                setup.drift.transform(raw.xi, w.w_minus),
                setup.drift.transform(raw.xi_prime, w.w_plus),
            );
            (f, w)
        } else {
            (raw, GirsanovWeights::default())
        };
        record.field_stats.push(raw, fields);
        if let Some(stride) = setup.field_dump_stride {
            if step % stride == 0 {
                record.fields.push(FieldSample {
                    t,
                    raw,
                    transformed: fields,
                });
            }
        }
        if !fields.is_finite() {
            return Err(Error::Blowup {
                t,
                max_abs: state.max_abs(),
                trajectory: None,
            });
        }
        if !linear {
            fill_dressed_couplings(&setup.model, fields, &mut couplings);
        } else if step == 0 {
            fill_dressed_couplings(&setup.model, FieldPair::zero(), &mut couplings);
        }
        rk.step(gen, &mut state, &couplings, dt, t)?;

        let before = tracker.log_integral;
        tracker.accumulate(weights, fields, dt);
        let previous = tracker.theta;
        tracker = if setup.gt {
            update_theta(tracker, &state).map_err(|e| at_time(e, t + dt))?
        } else {
            ThetaTracker {
                theta: state.trace(0).re,
                ..tracker
            }
        };
        if setup.gt && previous > 0.0 {
            let mismatch = ((tracker.theta / previous).ln() - (tracker.log_integral - before)).abs();
            record.max_log_step_mismatch = record.max_log_step_mismatch.max(mismatch);
        }
        if (step + 1) % setup.output_stride == 0 {
            push_sample(&mut record, &state, tracker.theta, setup.gt);
            let last = &record.samples[record.samples.len() - dd..];
            if !last.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::Blowup {
                    t: t + dt,
                    max_abs: state.max_abs(),
                    trajectory: None,
                });
            }
        }
    }
    Ok(record)
}

fn at_time(e: Error, t: f64) -> Error {
    match e {
        Error::WeightCollapse { theta, trajectory, .. } => Error::WeightCollapse { t, theta, trajectory },
        other => other,
    }
}

fn push_sample(record: &mut TrajectoryRecord, state: &DdoState, theta: f64, weighted: bool) {
    let d = record.dim;
    let rho = state.block(0);
    let scale = if weighted { theta.recip() } else { 1.0 };
    for c in 0..d {
        for r in 0..d {
            let herm = (rho[r + c * d] + rho[c + r * d].conj()) * 0.5;
            record.samples.push(herm * scale);
        }
    }
    record.thetas.push(theta);
}
