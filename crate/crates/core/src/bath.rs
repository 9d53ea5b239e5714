//! Bath spectral density, the quadrature reference for its correlation
//! function, and the exponential-series decomposition
//! `C(t) = Σ_k η_k exp(-γ_k t)` that the hierarchy consumes.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

const QUAD_TOL: f64 = 1e-10;
const QUAD_MAX_INTERVALS: usize = 200_000;
const CONJ_TOL: f64 = 1e-12;

/// Brownian-oscillator solvent, `J(ω) = ζ ω_B ω / ((ω_B² − ω²)² + (ζω)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrownianOscillatorBath {
    pub zeta: f64,
    pub omega_b: f64,
    pub beta: f64,
}

impl BrownianOscillatorBath {
    pub fn new(zeta: f64, omega_b: f64, beta: f64) -> Result<Self> {
        for (name, value) in [("zeta", zeta), ("omega_B", omega_b), ("beta", beta)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidBath(format!("{name} must be positive, got {value}")));
            }
        }
        Ok(Self { zeta, omega_b, beta })
    }

    pub fn spectral_density(&self, omega: f64) -> f64 {
        let w2 = self.omega_b * self.omega_b;
        let d = w2 - omega * omega;
        self.zeta * self.omega_b * omega / (d * d + (self.zeta * omega).powi(2))
    }

    fn spectral_density_complex(&self, omega: Complex64) -> Complex64 {
        let w2 = self.omega_b * self.omega_b;
        let d = w2 - omega * omega;
        omega * (self.zeta * self.omega_b) / (d * d + (omega * self.zeta).powi(2))
    }

    /// `J(ω) / (1 − e^{−βω})`, finite through ω = 0.
    fn weighted_density(&self, omega: f64) -> f64 {
        let w2 = self.omega_b * self.omega_b;
        let d = w2 - omega * omega;
        let j_over_omega = self.zeta * self.omega_b / (d * d + (self.zeta * omega).powi(2));
        j_over_omega * bose_x(self.beta * omega) / self.beta
    }

    /// Correlation function `⟨x_B(t) x_B(0)⟩` by adaptive quadrature of the
    /// fluctuation–dissipation integral. Accurate to ~1e-10 absolute.
    pub fn correlation_reference(&self, t: f64) -> Result<Complex64> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidInput(format!("correlation time must be >= 0, got {t}")));
        }
        // Negative frequencies are suppressed by e^{-β|ω|}; beyond 45/β the
        // remainder is far below the tolerance.
        let neg_cut = 45.0 / self.beta;
        let pos_cut = (10.0 * self.omega_b).max(10.0 * self.zeta).max(neg_cut);
        let kernel = |omega: f64| Complex64::from_polar(self.weighted_density(omega), -omega * t);

        let run = |f: &dyn Fn(f64) -> Complex64, a: f64, b: f64| {
            quadrature::integrate(f, a, b, QUAD_TOL / 3.0, QUAD_MAX_INTERVALS).map_err(|r| {
                Error::Quadrature {
                    t,
                    error: r.error,
                    intervals: r.intervals,
                }
            })
        };
        let negative = run(&kernel, -neg_cut, 0.0)?;
        if t <= 2.0 {
            let central = run(&kernel, 0.0, pos_cut)?;
            // ω = pos_cut / u maps [pos_cut, ∞) onto (0, 1].
            let tail_kernel = |u: f64| {
                if u <= 0.0 {
                    return Complex64::new(0.0, 0.0);
                }
                let omega = pos_cut / u;
                kernel(omega) * (pos_cut / (u * u))
            };
            let tail = run(&tail_kernel, 0.0, 1.0)?;
            return Ok((negative.value + central.value + tail.value) / PI);
        }
        // Oscillatory regime: integrate up to a cutoff where the density is
        // ~1e-12 t, then add the two leading terms of the integration-by-parts
        // expansion of ∫_W^∞ e^{-iωt} g(ω) dω.
        let scale = self.zeta * self.omega_b;
        let cut = (scale * 1e12 / t).cbrt().max(pos_cut);
        let central = run(&kernel, 0.0, cut)?;
        let h = 1e-3 * cut;
        let g = self.weighted_density(cut);
        let dg = (self.weighted_density(cut + h) - self.weighted_density(cut - h)) / (2.0 * h);
        let it = Complex64::new(0.0, t);
        let remainder = Complex64::from_polar(1.0, -cut * t) * (g / it + dg / (it * it));
        Ok((negative.value + central.value + remainder) / PI)
    }
}

/// `x / (1 − e^{−x})`, with the removable point at 0 filled in.
fn bose_x(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 + 0.5 * x
    } else {
        x / -(-x).exp_m1()
    }
}

/// How the Bose function `1/(1 − e^{−x})` is expanded into poles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoleScheme {
    Matsubara,
    Pade,
}

impl FromStr for PoleScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "matsubara" => Ok(PoleScheme::Matsubara),
            "pade" | "padé" => Ok(PoleScheme::Pade),
            other => Err(Error::InvalidInput(format!("unknown pole scheme `{other}`"))),
        }
    }
}

/// A single pole of the Bose-function expansion in the dimensionless variable
/// `x = βω`: the term `2 κ x / (x² + ξ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BosePole {
    pub kappa: f64,
    pub xi: f64,
}

/// Poles of `1/(1 − e^{−x}) ≈ 1/x + 1/2 + Σ_j 2 κ_j x / (x² + ξ_j²)`.
///
/// Matsubara: `κ = 1, ξ = 2πn`. Padé: the `[N−1/N]` spectrum decomposition,
/// obtained from the eigenvalues of two symmetric tridiagonal matrices.
pub fn bose_poles(scheme: PoleScheme, n: usize) -> Vec<BosePole> {
    match scheme {
        PoleScheme::Matsubara => (1..=n)
            .map(|j| BosePole {
                kappa: 1.0,
                xi: 2.0 * PI * j as f64,
            })
            .collect(),
        PoleScheme::Pade => pade_poles(n),
    }
}

fn positive_tridiagonal_eigs(size: usize, offset: usize) -> Vec<f64> {
    if size == 0 {
        return Vec::new();
    }
    let b = |m: usize| (2 * m + 1) as f64;
    let mut lam = DMatrix::<f64>::zeros(size, size);
    for m in 1..size {
        let v = 1.0 / (b(m + offset) * b(m + offset + 1)).sqrt();
        lam[(m - 1, m)] = v;
        lam[(m, m - 1)] = v;
    }
    let mut eigs: Vec<f64> = lam
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .filter(|&e| e > 1e-14)
        .collect();
    eigs.sort_by(|a, b| b.total_cmp(a));
    eigs
}

fn pade_poles(n: usize) -> Vec<BosePole> {
    if n == 0 {
        return Vec::new();
    }
    let xi: Vec<f64> = positive_tridiagonal_eigs(2 * n, 0)
        .into_iter()
        .map(|e| 2.0 / e)
        .collect();
    let zeta: Vec<f64> = positive_tridiagonal_eigs(2 * n - 1, 1)
        .into_iter()
        .map(|e| 2.0 / e)
        .collect();
    debug_assert_eq!(xi.len(), n);
    debug_assert_eq!(zeta.len(), n - 1);
    let prefactor = 0.5 * n as f64 * (2 * n + 3) as f64;
    (0..n)
        .map(|j| {
            let xj2 = xi[j] * xi[j];
            let num: f64 = zeta.iter().map(|z| z * z - xj2).product();
            let den: f64 = xi
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, x)| x * x - xj2)
                .product();
            BosePole {
                kappa: prefactor * num / den,
                xi: xi[j],
            }
        })
        .collect()
}

/// Bose function `1/(1 − e^{−x})` at complex `x`, exact or via the pole sum.
fn bose_complex(x: Complex64, scheme: PoleScheme, poles: &[BosePole]) -> Complex64 {
    match scheme {
        PoleScheme::Matsubara => Complex64::new(1.0, 0.0) / (Complex64::new(1.0, 0.0) - (-x).exp()),
        PoleScheme::Pade => {
            let mut acc = x.inv() + 0.5;
            for p in poles {
                acc += x * (2.0 * p.kappa) / (x * x + p.xi * p.xi);
            }
            acc
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub eta: Complex64,
    pub gamma: Complex64,
}

/// `C(t) = Σ_k η_k e^{−γ_k t}` together with the conjugate-pair map `k ↦ k̄`
/// (`γ_k̄ = γ_k*`). Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathExpansion {
    terms: Vec<ExpTerm>,
    conj_map: Vec<usize>,
    /// False for the purely oscillatory discrete-mode expansion.
    production: bool,
}

impl BathExpansion {
    /// Builds an expansion from raw terms, pairing conjugate rates. Pairs are
    /// snapped so that `γ_k̄ == γ_k*` holds exactly.
    pub fn from_terms(terms: Vec<ExpTerm>) -> Result<Self> {
        Self::build(terms, true)
    }

    fn build(mut terms: Vec<ExpTerm>, production: bool) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidBath("expansion has no terms".into()));
        }
        for (k, term) in terms.iter().enumerate() {
            if !(term.eta.re.is_finite() && term.eta.im.is_finite())
                || !(term.gamma.re.is_finite() && term.gamma.im.is_finite())
            {
                return Err(Error::InvalidBath(format!("term {k} is not finite")));
            }
            let bad = if production {
                term.gamma.re <= 0.0
            } else {
                term.gamma.re < 0.0
            };
            if bad {
                return Err(Error::InvalidBath(format!(
                    "term {k} has Re(gamma) = {} (must be {})",
                    term.gamma.re,
                    if production { "> 0" } else { ">= 0" }
                )));
            }
        }
        let k_len = terms.len();
        let mut conj_map = vec![usize::MAX; k_len];
        for k in 0..k_len {
            if conj_map[k] != usize::MAX {
                continue;
            }
            let g = terms[k].gamma;
            let scale = g.norm().max(1.0);
            if g.im.abs() <= CONJ_TOL * scale {
                terms[k].gamma.im = 0.0;
                conj_map[k] = k;
                continue;
            }
            let partner = (0..k_len).find(|&j| {
                j != k && conj_map[j] == usize::MAX && (terms[j].gamma - g.conj()).norm() <= CONJ_TOL * scale
            });
            match partner {
                Some(j) => {
                    terms[j].gamma = g.conj();
                    conj_map[k] = j;
                    conj_map[j] = k;
                }
                None => {
                    return Err(Error::InvalidBath(format!(
                        "rate {g} of term {k} has no complex-conjugate partner"
                    )))
                }
            }
        }
        Ok(Self {
            terms,
            conj_map,
            production,
        })
    }

    /// Purely oscillatory expansion of a discrete set of harmonic modes,
    /// `x_B = Σ_j c_j q_j`, each mode contributing
    /// `(c_j²/2)[coth(βω_j/2) cos ω_j t − i sin ω_j t]`. Non-production: used
    /// to cross-check against exact system-plus-bath dynamics.
    pub fn from_discrete_modes(modes: &[(f64, f64)], beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidBath(format!("beta must be positive, got {beta}")));
        }
        let mut terms = Vec::with_capacity(2 * modes.len());
        for &(c, omega) in modes {
            if !(omega > 0.0 && omega.is_finite() && c.is_finite()) {
                return Err(Error::InvalidBath(format!(
                    "discrete mode (c = {c}, omega = {omega}) is invalid"
                )));
            }
            let occupation = 1.0 / (beta * omega).exp_m1();
            let weight = 0.5 * c * c;
            terms.push(ExpTerm {
                eta: Complex64::new(weight * (occupation + 1.0), 0.0),
                gamma: Complex64::new(0.0, omega),
            });
            terms.push(ExpTerm {
                eta: Complex64::new(weight * occupation, 0.0),
                gamma: Complex64::new(0.0, -omega),
            });
        }
        Self::build(terms, false)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[ExpTerm] {
        &self.terms
    }

    pub fn eta(&self, k: usize) -> Complex64 {
        self.terms[k].eta
    }

    pub fn gamma(&self, k: usize) -> Complex64 {
        self.terms[k].gamma
    }

    pub fn conj_index(&self, k: usize) -> usize {
        self.conj_map[k]
    }

    pub fn conj_map(&self) -> &[usize] {
        &self.conj_map
    }

    pub fn is_production(&self) -> bool {
        self.production
    }

    /// A copy with every amplitude replaced; rates and pairing are kept.
    pub fn with_etas(&self, etas: &[Complex64]) -> Result<Self> {
        if etas.len() != self.terms.len() {
            return Err(Error::InvalidInput("amplitude count does not match term count".into()));
        }
        let mut out = self.clone();
        for (term, &eta) in out.terms.iter_mut().zip(etas) {
            term.eta = eta;
        }
        Ok(out)
    }

    /// `Σ_k η_k e^{−γ_k t}`.
    pub fn correlation(&self, t: f64) -> Complex64 {
        self.terms.iter().map(|term| term.eta * (-term.gamma * t).exp()).sum()
    }

    /// `Σ_k η_k̄* e^{−γ_k t}`, the time-reversed correlation `⟨x_B(0) x_B(t)⟩`.
    pub fn correlation_reversed(&self, t: f64) -> Complex64 {
        self.terms
            .iter()
            .enumerate()
            .map(|(k, term)| self.terms[self.conj_map[k]].eta.conj() * (-term.gamma * t).exp())
            .sum()
    }
}

/// Exponential decomposition of the Brownian-oscillator correlation function:
/// two resonance terms plus `n_poles` Bose-function poles, residues taken in
/// the lower half plane.
pub fn decompose_bath(bath: &BrownianOscillatorBath, scheme: PoleScheme, n_poles: usize) -> Result<BathExpansion> {
    let BrownianOscillatorBath { zeta, omega_b, beta } = *bath;
    let half_zeta = 0.5 * zeta;
    let detuning = omega_b * omega_b - half_zeta * half_zeta;
    if detuning.abs() <= 1e-12 * omega_b * omega_b {
        return Err(Error::DegenerateDamping { zeta, omega_b });
    }
    // Ω = sqrt(ω_B² − ζ²/4); purely imaginary when overdamped.
    let big_omega = Complex64::new(detuning, 0.0).sqrt();
    let poles = bose_poles(scheme, n_poles);

    let mut terms = Vec::with_capacity(2 + n_poles);
    // Poles of J at ω = ∓Ω − iζ/2; residue of J is ∓iω_B/(4Ω).
    for sign in [-1.0, 1.0] {
        let omega_pole = big_omega * sign - Complex64::new(0.0, half_zeta);
        let bose = bose_complex(omega_pole * beta, scheme, &poles);
        let eta = bose * (sign * omega_b) / (big_omega * 2.0);
        let gamma = Complex64::new(0.0, 1.0) * omega_pole;
        terms.push(ExpTerm { eta, gamma });
    }
    for pole in &poles {
        let nu = pole.xi / beta;
        let j = bath.spectral_density_complex(Complex64::new(0.0, -nu));
        let eta = Complex64::new(0.0, -2.0) * j * (pole.kappa / beta);
        if !(eta.re.is_finite() && eta.im.is_finite()) {
            return Err(Error::InvalidBath(format!(
                "Bose pole at nu = {nu} coincides with a resonance"
            )));
        }
        terms.push(ExpTerm {
            eta: Complex64::new(eta.re, 0.0),
            gamma: Complex64::new(nu, 0.0),
        });
    }
    BathExpansion::from_terms(terms)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationRow {
    pub t: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    /// `max_t |Σ_k η_k e^{−γ_k t} − C(t)|`.
    pub max_abs_error: f64,
    /// `max_t |Σ_k η_k̄* e^{−γ_k t} − C(t)*|`.
    pub max_reversed_error: f64,
    /// `|C(0)|` from quadrature, for relative thresholds.
    pub c0_abs: f64,
    pub rows: Vec<ValidationRow>,
}

impl ValidationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,abs_error\n");
        for row in &self.rows {
            out.push_str(&format!("{:.16e},{:.16e}\n", row.t, row.abs_error));
        }
        out
    }
}

/// Compares the expansion against the quadrature reference on `grid`.
pub fn validate_expansion(
    expansion: &BathExpansion,
    bath: &BrownianOscillatorBath,
    grid: &[f64],
) -> Result<ValidationReport> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("validation grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    let mut max_abs_error = 0.0_f64;
    let mut max_reversed_error = 0.0_f64;
    for &t in grid {
        let reference = bath.correlation_reference(t)?;
        let abs_error = (expansion.correlation(t) - reference).norm();
        let reversed = (expansion.correlation_reversed(t) - reference.conj()).norm();
        max_abs_error = max_abs_error.max(abs_error);
        max_reversed_error = max_reversed_error.max(reversed);
        rows.push(ValidationRow { t, abs_error });
    }
    let c0_abs = bath.correlation_reference(0.0)?.norm();
    Ok(ValidationReport {
        max_abs_error,
        max_reversed_error,
        c0_abs,
        rows,
    })
}

/// Uniform grid `0, step, …, t_max`.
pub fn uniform_grid(t_max: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![0.0];
    }
    (0..points).map(|i| t_max * i as f64 / (points - 1) as f64).collect()
}
