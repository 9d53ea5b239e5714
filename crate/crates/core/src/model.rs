//! System Hamiltonian, dissipative-mode operator and the coupling
//! descriptors `{α₀, α₁, α₂}` of `Q_S (α₀ + α₁ x_B + α₂ x_B²)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense complex matrix, column-major.
pub type CMatrix = DMatrix<Complex64>;

const HERMITIAN_TOL: f64 = 1e-12;
const PSD_HARD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaDescriptors {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

/// Descriptors of the displaced, frequency-changed solvation mode:
/// `α₀ = λθ²`, `α₁ = −sqrt(2λω_B) θ²`, `α₂ = (ω_B/2)(θ² − 1)`.
pub fn alpha_from_theta(lambda: f64, theta_b: f64, omega_b: f64) -> Result<AlphaDescriptors> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(theta_b > 0.0 && theta_b.is_finite()) {
        return Err(Error::InvalidInput(format!("theta_B must be > 0, got {theta_b}")));
    }
    if !(omega_b > 0.0 && omega_b.is_finite()) {
        return Err(Error::InvalidInput(format!("omega_B must be > 0, got {omega_b}")));
    }
    let theta2 = theta_b * theta_b;
    Ok(AlphaDescriptors {
        alpha0: lambda * theta2,
        alpha1: -(2.0 * lambda * omega_b).sqrt() * theta2,
        alpha2: 0.5 * omega_b * (theta2 - 1.0),
    })
}

/// `H_S = ω₁₀|1⟩⟨1| + V(|1⟩⟨0| + |0⟩⟨1|)` and `Q_S = |1⟩⟨1|`.
pub fn two_state_model(omega10: f64, coupling: f64) -> (CMatrix, CMatrix) {
    let c = |x: f64| Complex64::new(x, 0.0);
    let h = CMatrix::from_row_slice(2, 2, &[c(0.0), c(coupling), c(coupling), c(omega10)]);
    let q = CMatrix::from_row_slice(2, 2, &[c(0.0), c(0.0), c(0.0), c(1.0)]);
    (h, q)
}

pub(crate) fn hermiticity_defect(m: &CMatrix) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale
}

/// Principal (Hermitian, positive semidefinite) square root via the
/// eigendecomposition. Eigenvalues in `[-1e-8, 0)` are clipped to zero.
pub fn psd_sqrt(q: &CMatrix) -> Result<CMatrix> {
    if !q.is_square() {
        return Err(Error::InvalidInput("matrix must be square".into()));
    }
    if hermiticity_defect(q) > HERMITIAN_TOL {
        return Err(Error::InvalidInput("matrix is not Hermitian".into()));
    }
    let herm = (q + q.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_HARD_TOL {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    let roots = CMatrix::from_diagonal(&eig.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0)));
    let v = &eig.eigenvectors;
    let root = v * roots * v.adjoint();
    Ok((&root + root.adjoint()) * Complex64::new(0.5, 0.0))
}

/// Principal square root of a real number, `i sqrt(|x|)` for negative `x`.
pub fn principal_sqrt(x: f64) -> Complex64 {
    if x >= 0.0 {
        Complex64::new(x.sqrt(), 0.0)
    } else {
        Complex64::new(0.0, (-x).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    h_s: CMatrix,
    q_s: CMatrix,
    q_sqrt: CMatrix,
    h0: CMatrix,
    alphas: AlphaDescriptors,
    sqrt_alpha2: Complex64,
}

impl SystemModel {
    pub fn new(h_s: CMatrix, q_s: CMatrix, alphas: AlphaDescriptors) -> Result<Self> {
        let d = h_s.nrows();
        if d == 0 || !h_s.is_square() || q_s.shape() != (d, d) {
            return Err(Error::InvalidInput("H_S and Q_S must be square and of equal size".into()));
        }
        for (name, m) in [("H_S", &h_s), ("Q_S", &q_s)] {
            if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} has non-finite entries")));
            }
            if hermiticity_defect(m) > HERMITIAN_TOL {
                return Err(Error::InvalidInput(format!("{name} is not Hermitian")));
            }
        }
        let AlphaDescriptors { alpha0, alpha1, alpha2 } = alphas;
        if !(alpha0.is_finite() && alpha1.is_finite() && alpha2.is_finite()) {
            return Err(Error::InvalidInput("alpha descriptors must be finite".into()));
        }
        let q_sqrt = psd_sqrt(&q_s)?;
        let h0 = &h_s + &q_s * Complex64::new(alpha0, 0.0);
        Ok(Self {
            h_s,
            q_s,
            q_sqrt,
            h0,
            alphas,
            sqrt_alpha2: principal_sqrt(alpha2),
        })
    }

    /// Two-state model with descriptors from `(λ, θ_B, ω_B)`.
    pub fn two_state(omega10: f64, coupling: f64, lambda: f64, theta_b: f64, omega_b: f64) -> Result<Self> {
        let (h, q) = two_state_model(omega10, coupling);
        Self::new(h, q, alpha_from_theta(lambda, theta_b, omega_b)?)
    }

    pub fn dim(&self) -> usize {
        self.h_s.nrows()
    }

    pub fn h_s(&self) -> &CMatrix {
        &self.h_s
    }

    pub fn q_s(&self) -> &CMatrix {
        &self.q_s
    }

    pub fn q_sqrt(&self) -> &CMatrix {
        &self.q_sqrt
    }

    /// `H₀ = H_S + α₀ Q_S`.
    pub fn h0(&self) -> &CMatrix {
        &self.h0
    }

    pub fn alphas(&self) -> AlphaDescriptors {
        self.alphas
    }

    pub fn sqrt_alpha2(&self) -> Complex64 {
        self.sqrt_alpha2
    }

    pub fn is_linear(&self) -> bool {
        self.alphas.alpha2 == 0.0
    }
}
