//! Truncated dissipaton hierarchy: the multi-index space `{n : Σ n_k ≤ L}`,
//! the flat auxiliary-density-operator state, and the field-dressed
//! generator with its frozen-field RK4 step.

use num_complex::Complex64;

use crate::bath::BathExpansion;
use crate::error::{Error, Result};
use crate::model::{CMatrix, SystemModel};

const NONE: u32 = u32::MAX;
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Default cap on the number of multi-indices.
pub const DEFAULT_SIZE_BUDGET: usize = 2_000_000;

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Multi-indices ordered by tier, and inside a tier by descending `n_1`,
/// then descending `n_2`, and so on.
#[derive(Debug, Clone)]
pub struct HierarchySpace {
    k: usize,
    level: usize,
    size: usize,
    // comps[p][r] = number of ways to write r as an ordered sum of p
    // non-negative parts, for p <= K and r <= L.
    comps: Vec<Vec<usize>>,
    tier_offset: Vec<usize>,
    indices: Vec<u16>,
    up: Vec<u32>,
    down: Vec<u32>,
}

impl HierarchySpace {
    pub fn new(k: usize, level: usize) -> Result<Self> {
        Self::with_budget(k, level, DEFAULT_SIZE_BUDGET)
    }

    pub fn with_budget(k: usize, level: usize, budget: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("hierarchy needs at least one dissipaton".into()));
        }
        if level > u16::MAX as usize {
            return Err(Error::InvalidInput(format!("truncation tier {level} is too large")));
        }
        let size = binomial((level + k) as u64, k as u64);
        if size > budget as u128 || size >= NONE as u128 {
            return Err(Error::HierarchyTooLarge { size, budget });
        }
        let size = size as usize;
        let comps: Vec<Vec<usize>> = (0..=k)
            .map(|p| {
                (0..=level)
                    .map(|r| match p {
                        0 => usize::from(r == 0),
                        _ => binomial((r + p - 1) as u64, (p - 1) as u64) as usize,
                    })
                    .collect()
            })
            .collect();
        let mut tier_offset = Vec::with_capacity(level + 2);
        let mut acc = 0;
        for count in &comps[k][..=level] {
            tier_offset.push(acc);
            acc += count;
        }
        tier_offset.push(acc);
        debug_assert_eq!(acc, size);

        let mut space = Self {
            k,
            level,
            size,
            comps,
            tier_offset,
            indices: vec![0; size * k],
            up: vec![NONE; size * k],
            down: vec![NONE; size * k],
        };
        let mut n = vec![0usize; k];
        for i in 0..size {
            space.unrank_into(i, &mut n);
            for (slot, &v) in space.indices[i * k..(i + 1) * k].iter_mut().zip(&n) {
                *slot = v as u16;
            }
        }
        let total = |n: &[usize]| n.iter().sum::<usize>();
        for i in 0..size {
            space.unrank_into(i, &mut n);
            let tier = total(&n);
            for j in 0..k {
                if tier < level {
                    n[j] += 1;
                    space.up[i * k + j] = space.rank(&n).expect("raised index stays in range") as u32;
                    n[j] -= 1;
                }
                if n[j] > 0 {
                    n[j] -= 1;
                    space.down[i * k + j] = space.rank(&n).expect("lowered index stays in range") as u32;
                    n[j] += 1;
                }
            }
        }
        Ok(space)
    }

    /// Number of dissipatons `K`.
    pub fn num_modes(&self) -> usize {
        self.k
    }

    /// Truncation tier `L`.
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Rank of the multi-index, or `None` if it lies outside the space.
    pub fn rank(&self, n: &[usize]) -> Option<usize> {
        if n.len() != self.k {
            return None;
        }
        let tier: usize = n.iter().sum();
        if tier > self.level {
            return None;
        }
        let mut rank = self.tier_offset[tier];
        let mut remaining = tier;
        for (j, &nj) in n.iter().enumerate().take(self.k - 1) {
            let parts = self.k - j - 1;
            // Every larger leading value comes first.
            for v in nj + 1..=remaining {
                rank += self.comps[parts][remaining - v];
            }
            remaining -= nj;
        }
        Some(rank)
    }

    pub fn unrank(&self, index: usize) -> Vec<usize> {
        let mut n = vec![0; self.k];
        self.unrank_into(index, &mut n);
        n
    }

    fn unrank_into(&self, index: usize, n: &mut [usize]) {
        assert!(index < self.size, "index {index} out of range");
        let tier = match self.tier_offset.binary_search(&index) {
            Ok(t) => t,
            Err(t) => t - 1,
        };
        let mut offset = index - self.tier_offset[tier];
        let mut remaining = tier;
        #[allow(clippy::needless_range_loop)]
        for j in 0..self.k - 1 {
            let parts = self.k - j - 1;
            let mut v = remaining;
            loop {
                let block = self.comps[parts][remaining - v];
                if offset < block {
                    break;
                }
                offset -= block;
                v -= 1;
            }
            n[j] = v;
            remaining -= v;
        }
        n[self.k - 1] = remaining;
    }

    /// Occupation numbers of entry `index`.
    pub fn occupations(&self, index: usize) -> &[u16] {
        &self.indices[index * self.k..(index + 1) * self.k]
    }

    /// Rank of `n_k⁺`, or `None` at the truncation boundary.
    pub fn raised(&self, index: usize, k: usize) -> Option<usize> {
        let r = self.up[index * self.k + k];
        (r != NONE).then_some(r as usize)
    }

    /// Rank of `n_k⁻`, or `None` when `n_k = 0`.
    pub fn lowered(&self, index: usize, k: usize) -> Option<usize> {
        let r = self.down[index * self.k + k];
        (r != NONE).then_some(r as usize)
    }

    /// Rank of the single-dissipaton index `e_k`.
    pub fn first_tier(&self, k: usize) -> Option<usize> {
        self.raised(0, k)
    }

    /// Rank of `n̄`, where `n̄_k = n_{k̄}` for the given conjugation map.
    pub fn conjugate_index(&self, index: usize, conj_map: &[usize]) -> usize {
        let n = self.occupations(index);
        let bar: Vec<usize> = (0..self.k).map(|k| n[conj_map[k]] as usize).collect();
        self.rank(&bar).expect("conjugation preserves the tier")
    }
}

/// Flat array of `size` column-major `d×d` matrices, ordered by rank.
#[derive(Debug, Clone, PartialEq)]
pub struct DdoState {
    dim: usize,
    size: usize,
    modes: usize,
    data: Vec<Complex64>,
}

impl DdoState {
    pub fn zeros(space: &HierarchySpace, dim: usize) -> Self {
        Self {
            dim,
            size: space.len(),
            modes: space.num_modes(),
            data: vec![ZERO; space.len() * dim * dim],
        }
    }

    pub fn from_data(space: &HierarchySpace, dim: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != space.len() * dim * dim {
            return Err(Error::InvalidInput("state data length does not match the space".into()));
        }
        Ok(Self {
            dim,
            size: space.len(),
            modes: space.num_modes(),
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Number of tier-1 entries; they occupy ranks `1..=K`.
    pub fn tier_one_len(&self) -> usize {
        self.modes.min(self.size - 1)
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn block(&self, index: usize) -> &[Complex64] {
        let dd = self.dim * self.dim;
        &self.data[index * dd..(index + 1) * dd]
    }

    pub fn block_mut(&mut self, index: usize) -> &mut [Complex64] {
        let dd = self.dim * self.dim;
        &mut self.data[index * dd..(index + 1) * dd]
    }

    pub fn matrix(&self, index: usize) -> CMatrix {
        CMatrix::from_column_slice(self.dim, self.dim, self.block(index))
    }

    /// The reduced (tier-0) matrix.
    pub fn reduced(&self) -> CMatrix {
        self.matrix(0)
    }

    pub fn trace(&self, index: usize) -> Complex64 {
        let b = self.block(index);
        (0..self.dim).map(|i| b[i * (self.dim + 1)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Factorized initial condition: `ρ_S(0)` in tier 0, every other entry zero.
pub fn initial_state(space: &HierarchySpace, rho0: &CMatrix) -> Result<DdoState> {
    if !rho0.is_square() {
        return Err(Error::InvalidInput("initial density matrix must be square".into()));
    }
    let d = rho0.nrows();
    let trace = rho0.trace();
    if (trace.re - 1.0).abs() > 1e-10 || trace.im.abs() > 1e-10 {
        return Err(Error::TraceNotUnit { trace: trace.re });
    }
    if crate::model::hermiticity_defect(rho0) > 1e-10 {
        return Err(Error::InvalidInput("initial density matrix is not Hermitian".into()));
    }
    let min_eig = rho0.clone().symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-10 {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min_eig });
    }
    let mut state = DdoState::zeros(space, d);
    state.block_mut(0).copy_from_slice(rho0.as_slice());
    Ok(state)
}

/// Real stochastic fields `(ξ, ξ′)` acting on the ket and bra sides.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct FieldPair {
    pub xi: f64,
    pub xi_prime: f64,
}

impl FieldPair {
    pub fn new(xi: f64, xi_prime: f64) -> Self {
        Self { xi, xi_prime }
    }

    pub fn zero() -> Self {
        Self::default()
    }
}

/// Field-dressed coupling operators, stored column-major:
/// `Q̃(ξ) = α₁Q + (1+i)ξ√α₂ Q^{1/2}` and `Q̃†(ξ′) = α₁Q + (1−i)ξ′√α₂ Q^{1/2}`.
/// In general `Q̃†(ξ′) ≠ [Q̃(ξ)]†`.
#[derive(Debug, Clone, PartialEq)]
pub struct DressedCouplings {
    dim: usize,
    pub(crate) left: Vec<Complex64>,
    pub(crate) right: Vec<Complex64>,
}

impl DressedCouplings {
    pub fn left(&self) -> CMatrix {
        CMatrix::from_column_slice(self.dim, self.dim, &self.left)
    }

    pub fn right(&self) -> CMatrix {
        CMatrix::from_column_slice(self.dim, self.dim, &self.right)
    }

    /// Arbitrary coupling matrices, for testing the generator on its own.
    pub fn from_matrices(left: &CMatrix, right: &CMatrix) -> Result<Self> {
        if !left.is_square() || left.shape() != right.shape() {
            return Err(Error::InvalidInput("coupling matrices must be square and equal in size".into()));
        }
        Ok(Self {
            dim: left.nrows(),
            left: left.as_slice().to_vec(),
            right: right.as_slice().to_vec(),
        })
    }
}

pub fn build_dressed_couplings(model: &SystemModel, fields: FieldPair) -> DressedCouplings {
    let mut out = DressedCouplings {
        dim: model.dim(),
        left: vec![ZERO; model.dim() * model.dim()],
        right: vec![ZERO; model.dim() * model.dim()],
    };
    fill_dressed_couplings(model, fields, &mut out);
    out
}

pub(crate) fn fill_dressed_couplings(model: &SystemModel, fields: FieldPair, out: &mut DressedCouplings) {
    let a1 = model.alphas().alpha1;
    let s = model.sqrt_alpha2();
    let cl = Complex64::new(1.0, 1.0) * s * fields.xi;
    let cr = Complex64::new(1.0, -1.0) * s * fields.xi_prime;
    for (((l, r), q), qs) in out
        .left
        .iter_mut()
        .zip(out.right.iter_mut())
        .zip(model.q_s().as_slice())
        .zip(model.q_sqrt().as_slice())
    {
        *l = q * a1 + qs * cl;
        *r = q * a1 + qs * cr;
    }
}

/// Immutable generator data shared by every trajectory: the space, the
/// effective system Hamiltonian and the per-entry damping and lowering
/// coefficients.
#[derive(Debug, Clone)]
pub struct Generator {
    space: HierarchySpace,
    dim: usize,
    h0: Vec<Complex64>,
    // Σ_k n_k γ_k per entry.
    damping: Vec<Complex64>,
    // n_k η_k and n_k η_k̄* per (entry, k); zero where n_k = 0.
    lower_left: Vec<Complex64>,
    lower_right: Vec<Complex64>,
}

impl Generator {
    pub fn new(space: HierarchySpace, model: &SystemModel, expansion: &BathExpansion) -> Result<Self> {
        let k = space.num_modes();
        if expansion.len() != k {
            return Err(Error::InvalidInput(format!(
                "space has {k} dissipatons but the bath expansion has {} terms",
                expansion.len()
            )));
        }
        let mut damping = Vec::with_capacity(space.len());
        let mut lower_left = vec![ZERO; space.len() * k];
        let mut lower_right = vec![ZERO; space.len() * k];
        for i in 0..space.len() {
            let n = space.occupations(i);
            let mut g = ZERO;
            for j in 0..k {
                let nj = n[j] as f64;
                g += expansion.gamma(j) * nj;
                lower_left[i * k + j] = expansion.eta(j) * nj;
                lower_right[i * k + j] = expansion.eta(expansion.conj_index(j)).conj() * nj;
            }
            damping.push(g);
        }
        Ok(Self {
            dim: model.dim(),
            h0: model.h0().as_slice().to_vec(),
            space,
            damping,
            lower_left,
            lower_right,
        })
    }

    pub fn space(&self) -> &HierarchySpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes `dρ/dt` for every entry into `out`:
    ///
    /// ```text
    /// out_n = −i[H₀, ρ_n] − (Σ_k n_kγ_k) ρ_n
    ///         − i Σ_k (Q̃ ρ_{n_k⁺} − ρ_{n_k⁺} Q̃†)
    ///         − i Σ_k n_k (η_k Q̃ ρ_{n_k⁻} − η_k̄* ρ_{n_k⁻} Q̃†)
    /// ```
    pub fn apply(&self, state: &DdoState, couplings: &DressedCouplings, out: &mut DdoState) {
        assert_eq!(state.size, self.space.len(), "state does not match the space");
        assert_eq!(out.size, self.space.len(), "output does not match the space");
        assert_eq!(couplings.dim, self.dim, "coupling dimension mismatch");
        self.apply_slices(&state.data, couplings, &mut out.data);
    }

    fn apply_slices(&self, state: &[Complex64], couplings: &DressedCouplings, out: &mut [Complex64]) {
        match self.dim {
            1 => self.apply_dim(1, state, couplings, out),
            2 => self.apply_two_level(state, couplings, out),
            3 => self.apply_dim(3, state, couplings, out),
            4 => self.apply_dim(4, state, couplings, out),
            d => self.apply_dim(d, state, couplings, out),
        }
    }

    fn apply_two_level(&self, state: &[Complex64], couplings: &DressedCouplings, out: &mut [Complex64]) {
        let k = self.space.num_modes();
        let h: [Complex64; 4] = self.h0[..4].try_into().unwrap();
        let ql: [Complex64; 4] = couplings.left[..4].try_into().unwrap();
        let qr: [Complex64; 4] = couplings.right[..4].try_into().unwrap();
        let mul = |a: &[Complex64; 4], b: &[Complex64; 4]| -> [Complex64; 4] {
            [
                a[0] * b[0] + a[2] * b[1],
                a[1] * b[0] + a[3] * b[1],
                a[0] * b[2] + a[2] * b[3],
                a[1] * b[2] + a[3] * b[3],
            ]
        };
        let block = |idx: usize| -> [Complex64; 4] { state[idx * 4..idx * 4 + 4].try_into().unwrap() };
        for i in 0..self.space.len() {
            let rho = block(i);
            let mut l = [ZERO; 4];
            let mut r = [ZERO; 4];
            let up = &self.space.up[i * k..(i + 1) * k];
            let down = &self.space.down[i * k..(i + 1) * k];
            for j in 0..k {
                if up[j] != NONE {
                    let b = block(up[j] as usize);
                    for m in 0..4 {
                        l[m] += b[m];
                        r[m] += b[m];
                    }
                }
                if down[j] != NONE {
                    let b = block(down[j] as usize);
                    let cl = self.lower_left[i * k + j];
                    let cr = self.lower_right[i * k + j];
                    for m in 0..4 {
                        l[m] += cl * b[m];
                        r[m] += cr * b[m];
                    }
                }
            }
            let a = mul(&h, &rho);
            let b = mul(&rho, &h);
            let c = mul(&ql, &l);
            let e = mul(&r, &qr);
            let g = self.damping[i];
            let o = &mut out[i * 4..i * 4 + 4];
            for m in 0..4 {
                o[m] = -I * (a[m] - b[m] + c[m] - e[m]) - g * rho[m];
            }
        }
    }

    #[inline(always)]
    fn apply_dim(&self, d: usize, state: &[Complex64], couplings: &DressedCouplings, out: &mut [Complex64]) {
        let dd = d * d;
        let k = self.space.num_modes();
        // Stack scratch for the usual small systems; larger ones pay one
        // allocation per call.
        let mut stack = [ZERO; 2 * 64];
        let mut heap = Vec::new();
        let scratch: &mut [Complex64] = if dd <= 64 {
            &mut stack[..2 * dd]
        } else {
            heap.resize(2 * dd, ZERO);
            &mut heap
        };
        let (left_sum, right_sum) = scratch.split_at_mut(dd);
        let h0 = &self.h0[..dd];
        let ql = &couplings.left[..dd];
        let qr = &couplings.right[..dd];
        for i in 0..self.space.len() {
            let rho = &state[i * dd..(i + 1) * dd];
            left_sum.fill(ZERO);
            right_sum.fill(ZERO);
            let mut any_neighbour = false;
            for j in 0..k {
                if let Some(up) = self.space.raised(i, j) {
                    any_neighbour = true;
                    let blk = &state[up * dd..(up + 1) * dd];
                    for ((l, r), x) in left_sum.iter_mut().zip(right_sum.iter_mut()).zip(blk) {
                        *l += x;
                        *r += x;
                    }
                }
                if let Some(down) = self.space.lowered(i, j) {
                    any_neighbour = true;
                    let cl = self.lower_left[i * k + j];
                    let cr = self.lower_right[i * k + j];
                    let blk = &state[down * dd..(down + 1) * dd];
                    for ((l, r), x) in left_sum.iter_mut().zip(right_sum.iter_mut()).zip(blk) {
                        *l += cl * x;
                        *r += cr * x;
                    }
                }
            }
            let g = self.damping[i];
            let o = &mut out[i * dd..(i + 1) * dd];
            for col in 0..d {
                for row in 0..d {
                    // (H₀ρ + Q̃ L) − (ρH₀ + R Q̃†)
                    let mut acc = ZERO;
                    for m in 0..d {
                        acc += h0[row + m * d] * rho[m + col * d] - rho[row + m * d] * h0[m + col * d];
                    }
                    if any_neighbour {
                        for m in 0..d {
                            acc += ql[row + m * d] * left_sum[m + col * d] - right_sum[row + m * d] * qr[m + col * d];
                        }
                    }
                    o[row + col * d] = -I * acc - g * rho[row + col * d];
                }
            }
        }
    }
}

/// Frozen-field classical RK4 integrator; owns its stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    stage_in: Vec<Complex64>,
    stage_out: Vec<Complex64>,
    acc: Vec<Complex64>,
}

impl Rk4 {
    pub fn new(generator: &Generator) -> Self {
        let n = generator.space().len() * generator.dim() * generator.dim();
        Self {
            stage_in: vec![ZERO; n],
            stage_out: vec![ZERO; n],
            acc: vec![ZERO; n],
        }
    }

    /// Advances `state` by `dt` with the couplings held fixed. Fails if any
    /// entry becomes non-finite; `t` is only used for the error report.
    pub fn step(
        &mut self,
        generator: &Generator,
        state: &mut DdoState,
        couplings: &DressedCouplings,
        dt: f64,
        t: f64,
    ) -> Result<()> {
        let y = &mut state.data;
        let half = 0.5 * dt;
        // k1
        generator.apply_slices(y, couplings, &mut self.stage_out);
        for ((a, s), (k1, y0)) in self.acc.iter_mut().zip(self.stage_in.iter_mut()).zip(self.stage_out.iter().zip(y.iter())) {
            *a = *k1;
            *s = y0 + k1 * half;
        }
        // k2
        generator.apply_slices(&self.stage_in, couplings, &mut self.stage_out);
        for ((a, s), (k2, y0)) in self.acc.iter_mut().zip(self.stage_in.iter_mut()).zip(self.stage_out.iter().zip(y.iter())) {
            *a += k2 * 2.0;
            *s = y0 + k2 * half;
        }
        // k3
        generator.apply_slices(&self.stage_in, couplings, &mut self.stage_out);
        for ((a, s), (k3, y0)) in self.acc.iter_mut().zip(self.stage_in.iter_mut()).zip(self.stage_out.iter().zip(y.iter())) {
            *a += k3 * 2.0;
            *s = y0 + k3 * dt;
        }
        // k4
        generator.apply_slices(&self.stage_in, couplings, &mut self.stage_out);
        let sixth = dt / 6.0;
        let mut finite = true;
        for ((y0, a), k4) in y.iter_mut().zip(self.acc.iter()).zip(self.stage_out.iter()) {
            *y0 += (a + k4) * sixth;
            finite &= y0.re.is_finite() && y0.im.is_finite();
        }
        if !finite {
            return Err(Error::Blowup {
                t: t + dt,
                max_abs: state.max_abs(),
                trajectory: None,
            });
        }
        Ok(())
    }
}

/// One frozen-field step; convenience wrapper that allocates its buffers.
pub fn step(
    generator: &Generator,
    state: &DdoState,
    model: &SystemModel,
    fields: FieldPair,
    dt: f64,
) -> Result<DdoState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    let couplings = build_dressed_couplings(model, fields);
    let mut next = state.clone();
    Rk4::new(generator).step(generator, &mut next, &couplings, dt, 0.0)?;
    Ok(next)
}
