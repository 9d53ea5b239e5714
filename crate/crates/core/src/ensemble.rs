//! Parallel trajectory ensembles with a scheduling-independent reduction,
//! and the convergence diagnostics P(N,t), σ(N,t), φ(N,t).

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CMatrix;
use crate::stochastic::{propagate_trajectory, FieldSample, FieldStats, TrajectoryRecord, TrajectorySetup};

/// Trajectories handled sequentially by one task; also the reduction leaf.
const CHUNK: u64 = 32;

/// `ρ₀₀ − ρ₁₁` (real parts).
pub fn population_difference(rho: &CMatrix) -> f64 {
    assert!(rho.nrows() >= 2, "population difference needs at least two levels");
    rho[(0, 0)].re - rho[(1, 1)].re
}

/// Population (1/N) root-mean-square deviation at each time; `samples[j]`
/// holds the values at time `j`.
pub fn variance_grid(samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            if s.len() < 2 {
                return Err(Error::InvalidInput(format!("σ needs at least two samples, got {}", s.len())));
            }
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            Ok((s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
        })
        .collect()
}

/// Streaming mean of the recorded samples and of `P = ρ₀₀ − ρ₁₁`, with a
/// second moment of `P` for σ. Merging follows Chan et al., so any
/// partition of the same trajectories gives the same moments up to rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleAccumulator {
    dim: usize,
    n_times: usize,
    count: u64,
    mean: Vec<Complex64>,
    pop_mean: Vec<f64>,
    pop_m2: Vec<f64>,
    discarded: u64,
    field_stats: FieldStats,
}

impl EnsembleAccumulator {
    pub fn new(n_times: usize, dim: usize) -> Self {
        Self {
            dim,
            n_times,
            count: 0,
            mean: vec![Complex64::new(0.0, 0.0); n_times * dim * dim],
            pop_mean: vec![0.0; n_times],
            pop_m2: vec![0.0; n_times],
            discarded: 0,
            field_stats: FieldStats::default(),
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn discarded(&self) -> u64 {
        self.discarded
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn field_stats(&self) -> &FieldStats {
        &self.field_stats
    }

    pub fn record_discard(&mut self) {
        self.discarded += 1;
    }

    pub fn push(&mut self, record: &TrajectoryRecord) {
        assert_eq!(record.len(), self.n_times, "record length mismatch");
        assert_eq!(record.dim, self.dim, "record dimension mismatch");
        self.count += 1;
        let n = self.count as f64;
        let d = self.dim;
        let dd = d * d;
        for j in 0..self.n_times {
            let s = &record.samples[j * dd..(j + 1) * dd];
            for (m, x) in self.mean[j * dd..(j + 1) * dd].iter_mut().zip(s) {
                *m += (x - *m) / n;
            }
            let p = s[0].re - s[d + 1].re;
            let delta = p - self.pop_mean[j];
            self.pop_mean[j] += delta / n;
            self.pop_m2[j] += delta * (p - self.pop_mean[j]);
        }
        self.field_stats.merge(&record.field_stats);
    }

    pub fn merge(&mut self, other: &EnsembleAccumulator) {
        assert_eq!((self.n_times, self.dim), (other.n_times, other.dim), "accumulator shape mismatch");
        self.discarded += other.discarded;
        self.field_stats.merge(&other.field_stats);
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            self.count = other.count;
            self.mean.clone_from(&other.mean);
            self.pop_mean.clone_from(&other.pop_mean);
            self.pop_m2.clone_from(&other.pop_m2);
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let fb = nb / n;
        for (a, b) in self.mean.iter_mut().zip(&other.mean) {
            *a += (b - *a) * fb;
        }
        for j in 0..self.n_times {
            let delta = other.pop_mean[j] - self.pop_mean[j];
            self.pop_mean[j] += delta * fb;
            self.pop_m2[j] += other.pop_m2[j] + delta * delta * na * fb;
        }
        self.count += other.count;
    }

    /// Ensemble mean at time index `j`, symmetrized to scrub rounding.
    pub fn mean_matrix(&self, j: usize) -> CMatrix {
        let dd = self.dim * self.dim;
        let m = CMatrix::from_column_slice(self.dim, self.dim, &self.mean[j * dd..(j + 1) * dd]);
        (&m + m.adjoint()) * Complex64::new(0.5, 0.0)
    }

    pub fn population(&self, j: usize) -> f64 {
        self.pop_mean[j]
    }

    pub fn populations(&self) -> &[f64] {
        &self.pop_mean
    }

    /// σ(N, t_j) with the 1/N normalization.
    pub fn sigma(&self, j: usize) -> Result<f64> {
        if self.count < 2 {
            return Err(Error::InvalidInput(format!("σ needs at least two trajectories, got {}", self.count)));
        }
        Ok((self.pop_m2[j] / self.count as f64).max(0.0).sqrt())
    }

    pub fn sigmas(&self) -> Result<Vec<f64>> {
        (0..self.n_times).map(|j| self.sigma(j)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpointing {
    pub path: PathBuf,
    /// Write after at least this many further trajectories.
    pub every: u64,
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub setup: Arc<TrajectorySetup>,
    pub n_max: u64,
    /// Checkpoint sizes for the convergence report; `n_max` is always added.
    pub ladder: Vec<u64>,
    pub base_seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Number of leading trajectories whose field samples are kept.
    pub field_dump_trajectories: u64,
    pub checkpoint: Option<Checkpointing>,
    /// Identifies the run in checkpoints; a mismatch refuses to resume.
    pub fingerprint: String,
}

impl EnsembleConfig {
    pub fn new(setup: TrajectorySetup, n_max: u64, base_seed: u64) -> Self {
        Self {
            setup: Arc::new(setup),
            n_max,
            ladder: Vec::new(),
            base_seed,
            workers: 0,
            field_dump_trajectories: 0,
            checkpoint: None,
            fingerprint: String::new(),
        }
    }

    fn ladder_points(&self) -> Vec<u64> {
        let mut pts: Vec<u64> = self.ladder.iter().copied().filter(|&n| n >= 1 && n <= self.n_max).collect();
        pts.push(self.n_max);
        pts.sort_unstable();
        pts.dedup();
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discard {
    pub index: u64,
    pub reason: String,
    pub blowup: bool,
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub accumulator: EnsembleAccumulator,
    pub discards: Vec<Discard>,
    pub field_dump: Vec<(u64, FieldSample)>,
    pub wall_time: f64,
}

impl EnsembleResult {
    pub fn mean(&self, j: usize) -> CMatrix {
        self.accumulator.mean_matrix(j)
    }
}

/// One ladder point: trajectories `0..n` (of which `accepted` survived).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub n: u64,
    pub accepted: u64,
    pub p: Vec<f64>,
    /// NaN while fewer than two trajectories were accepted.
    pub sigma: Vec<f64>,
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub times: Vec<f64>,
    pub rows: Vec<LadderRow>,
}

impl ConvergenceReport {
    fn from_snapshots(times: Vec<f64>, snapshots: &[(u64, EnsembleAccumulator)]) -> Self {
        let last = &snapshots.last().expect("n_max is always a ladder point").1;
        let rows = snapshots
            .iter()
            .map(|(n, acc)| LadderRow {
                n: *n,
                accepted: acc.count(),
                p: acc.populations().to_vec(),
                sigma: (0..acc.n_times()).map(|j| acc.sigma(j).unwrap_or(f64::NAN)).collect(),
                phi: acc
                    .populations()
                    .iter()
                    .zip(last.populations())
                    .map(|(a, b)| (a - b).abs())
                    .collect(),
            })
            .collect();
        Self { times, rows }
    }

    pub fn row(&self, n: u64) -> Option<&LadderRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    /// Long-format CSV: `N,t,P,sigma,phi`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,t,P,sigma,phi\n");
        for row in &self.rows {
            for (j, t) in self.times.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.n,
                    fmt17(*t),
                    fmt17(row.p[j]),
                    fmt17(row.sigma[j]),
                    fmt17(row.phi[j])
                ));
            }
        }
        out
    }
}

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    fingerprint: String,
    base_seed: u64,
    next_index: u64,
    accumulator: EnsembleAccumulator,
    snapshots: Vec<(u64, EnsembleAccumulator)>,
    discards: Vec<Discard>,
    field_dump: Vec<(u64, FieldSample)>,
}

const CHECKPOINT_VERSION: u32 = 1;

struct ChunkOutput {
    acc: EnsembleAccumulator,
    discards: Vec<Discard>,
    field_dump: Vec<(u64, FieldSample)>,
}

fn run_chunk(cfg: &EnsembleConfig, n_times: usize, start: u64, end: u64) -> Result<ChunkOutput> {
    let setup = &cfg.setup;
    let mut out = ChunkOutput {
        acc: EnsembleAccumulator::new(n_times, setup.model().dim()),
        discards: Vec::new(),
        field_dump: Vec::new(),
    };
    for index in start..end {
        match propagate_trajectory(setup, cfg.base_seed, index) {
            Ok(record) => {
                out.acc.push(&record);
                if index < cfg.field_dump_trajectories {
                    out.field_dump.extend(record.fields.iter().map(|f| (index, *f)));
                }
            }
            Err(e @ (Error::WeightCollapse { .. } | Error::Blowup { .. })) => {
                log::warn!("discarding trajectory: {e}");
                out.acc.record_discard();
                out.discards.push(Discard {
                    index,
                    blowup: matches!(e, Error::Blowup { .. }),
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Runs trajectories `0..n_max`. Work is split into fixed index ranges that
/// never straddle a ladder point; ranges are merged strictly in index order,
/// so the result is bit-identical for any worker count.
pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<(EnsembleResult, ConvergenceReport)> {
    if cfg.n_max == 0 {
        return Err(Error::config("ensemble.N", "must be at least 1"));
    }
    let started = Instant::now();
    let times = cfg.setup.output_times();
    let n_times = times.len();
    let dim = cfg.setup.model().dim();
    let ladder = cfg.ladder_points();

    let mut acc = EnsembleAccumulator::new(n_times, dim);
    let mut snapshots: Vec<(u64, EnsembleAccumulator)> = Vec::new();
    let mut discards = Vec::new();
    let mut field_dump = Vec::new();
    let mut next = 0u64;

    if let Some(cp) = &cfg.checkpoint {
        if cp.path.exists() {
            let file: CheckpointFile = serde_json::from_slice(&std::fs::read(&cp.path)?)?;
            if file.version != CHECKPOINT_VERSION
                || file.fingerprint != cfg.fingerprint
                || file.base_seed != cfg.base_seed
                || file.accumulator.n_times() != n_times
                || file.accumulator.dim() != dim
                || file.next_index > cfg.n_max
            {
                return Err(Error::InvalidInput(format!(
                    "checkpoint {} belongs to a different run",
                    cp.path.display()
                )));
            }
            log::info!("resuming from {} at trajectory {}", cp.path.display(), file.next_index);
            acc = file.accumulator;
            snapshots = file.snapshots;
            discards = file.discards;
            field_dump = file.field_dump;
            next = file.next_index;
        }
    }

    // Leaf ranges: multiples of CHUNK, split at ladder points.
    let mut ranges = Vec::new();
    let mut start = next;
    while start < cfg.n_max {
        let mut end = ((start / CHUNK) + 1) * CHUNK;
        if let Some(&p) = ladder.iter().find(|&&p| p > start) {
            end = end.min(p);
        }
        end = end.min(cfg.n_max);
        ranges.push((start, end));
        start = end;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let threads = pool.current_num_threads().max(1);
    let batch = (threads * 4).max(1);
    let mut since_checkpoint = 0u64;

    for group in ranges.chunks(batch) {
        let outputs: Vec<Result<ChunkOutput>> =
            pool.install(|| group.par_iter().map(|&(s, e)| run_chunk(cfg, n_times, s, e)).collect());
        for (&(_, end), out) in group.iter().zip(outputs) {
            let out = out?;
            acc.merge(&out.acc);
            discards.extend(out.discards);
            field_dump.extend(out.field_dump);
            since_checkpoint += out.acc.count() + out.acc.discarded();
            next = end;
            if ladder.contains(&end) && snapshots.last().map(|s| s.0) != Some(end) {
                snapshots.push((end, acc.clone()));
            }
        }
        if let Some(cp) = &cfg.checkpoint {
            if since_checkpoint >= cp.every.max(1) && next < cfg.n_max {
                write_checkpoint(cp, cfg, next, &acc, &snapshots, &discards, &field_dump)?;
                since_checkpoint = 0;
            }
        }
    }

    if acc.count() == 0 {
        let count = acc.discarded();
        if !discards.is_empty() && discards.iter().all(|d| d.blowup) {
            return Err(Error::Blowup {
                t: f64::NAN,
                max_abs: f64::INFINITY,
                trajectory: discards.first().map(|d| d.index),
            });
        }
        return Err(Error::AllDiscarded { count });
    }
    if !discards.is_empty() {
        log::warn!("{} of {} trajectories discarded", discards.len(), cfg.n_max);
    }
    if let Some(cp) = &cfg.checkpoint {
        if cp.path.exists() {
            std::fs::remove_file(&cp.path)?;
        }
    }
    let report = ConvergenceReport::from_snapshots(times.clone(), &snapshots);
    Ok((
        EnsembleResult {
            times,
            accumulator: acc,
            discards,
            field_dump,
            wall_time: started.elapsed().as_secs_f64(),
        },
        report,
    ))
}

fn write_checkpoint(
    cp: &Checkpointing,
    cfg: &EnsembleConfig,
    next_index: u64,
    acc: &EnsembleAccumulator,
    snapshots: &[(u64, EnsembleAccumulator)],
    discards: &[Discard],
    field_dump: &[(u64, FieldSample)],
) -> Result<()> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        fingerprint: cfg.fingerprint.clone(),
        base_seed: cfg.base_seed,
        next_index,
        accumulator: acc.clone(),
        snapshots: snapshots.to_vec(),
        discards: discards.to_vec(),
        field_dump: field_dump.to_vec(),
    };
    let tmp = cp.path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec(&file)?)?;
    std::fs::rename(&tmp, &cp.path)?;
    Ok(())
}

/// `populations.csv`: `t,rho00,rho11,re_rho01,im_rho01,P`.
pub fn populations_csv(result: &EnsembleResult) -> String {
    let mut out = String::from("t,rho00,rho11,re_rho01,im_rho01,P\n");
    for (j, t) in result.times.iter().enumerate() {
        let m = result.mean(j);
        let (r01, r11) = if m.nrows() >= 2 { (m[(0, 1)], m[(1, 1)].re) } else { (Complex64::new(0.0, 0.0), 0.0) };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt17(*t),
            fmt17(m[(0, 0)].re),
            fmt17(r11),
            fmt17(r01.re),
            fmt17(r01.im),
            fmt17(result.accumulator.population(j))
        ));
    }
    out
}

/// Field dump CSV: `trajectory,t,xi,xi_prime,xi_tilde,xi_tilde_prime`.
pub fn field_dump_csv(rows: &[(u64, FieldSample)]) -> String {
    let mut out = String::from("trajectory,t,xi,xi_prime,xi_tilde,xi_tilde_prime\n");
    for (index, f) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            index,
            fmt17(f.t),
            fmt17(f.raw.xi),
            fmt17(f.raw.xi_prime),
            fmt17(f.transformed.xi),
            fmt17(f.transformed.xi_prime)
        ));
    }
    out
}
