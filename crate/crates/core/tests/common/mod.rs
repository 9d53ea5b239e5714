//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sfd_deom::bath::BathExpansion;
use sfd_deom::hierarchy::{DdoState, FieldPair, HierarchySpace};
use sfd_deom::model::SystemModel;

pub type Dense = DMatrix<Complex64>;

pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

pub fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

pub fn kron(a: &Dense, b: &Dense) -> Dense {
    a.kronecker(b)
}

pub fn flatten(state: &DdoState, space: &HierarchySpace) -> Vec<Complex64> {
    (0..space.len()).flat_map(|i| state.matrix(i).as_slice().to_vec()).collect()
}

/// Column-major vec convention: vec(AX) = (I⊗A)vec X, vec(XB) = (Bᵀ⊗I)vec X.
pub fn dense_generator(space: &HierarchySpace, model: &SystemModel, exp: &BathExpansion, fields: FieldPair) -> Dense {
    let d = model.dim();
    let dd = d * d;
    let id = Dense::identity(d, d);
    let h0 = model.h_s() + model.q_s() * c(model.alphas().alpha0);
    let s = if model.alphas().alpha2 >= 0.0 {
        c(model.alphas().alpha2.sqrt())
    } else {
        I * (-model.alphas().alpha2).sqrt()
    };
    let a1 = c(model.alphas().alpha1);
    let qt = model.q_s() * a1 + model.q_sqrt() * (Complex64::new(1.0, 1.0) * s * fields.xi);
    let qtd = model.q_s() * a1 + model.q_sqrt() * (Complex64::new(1.0, -1.0) * s * fields.xi_prime);
    let left = |a: &Dense| kron(&id, a);
    let right = |b: &Dense| kron(&b.transpose(), &id);

    let n = space.len();
    let mut g = Dense::zeros(n * dd, n * dd);
    let comm = (left(&h0) - right(&h0)) * (-I);
    for row in 0..n {
        let occ = space.occupations(row);
        let damping: Complex64 = (0..exp.len()).map(|k| exp.gamma(k) * occ[k] as f64).sum();
        let diag = &comm - Dense::identity(dd, dd) * damping;
        g.view_mut((row * dd, row * dd), (dd, dd)).copy_from(&diag);
        #[allow(clippy::needless_range_loop)]
        for k in 0..exp.len() {
            if let Some(up) = space.raised(row, k) {
                let blk = (left(&qt) - right(&qtd)) * (-I);
                let mut v = g.view_mut((row * dd, up * dd), (dd, dd));
                v += blk;
            }
            if let Some(down) = space.lowered(row, k) {
                let nk = occ[k] as f64;
                let eta = exp.eta(k);
                let eta_bar = exp.eta(exp.conj_index(k)).conj();
                let blk = (left(&qt) * eta - right(&qtd) * eta_bar) * (-I * nk);
                let mut v = g.view_mut((row * dd, down * dd), (dd, dd));
                v += blk;
            }
        }
    }
    g
}

pub fn random_state(space: &HierarchySpace, d: usize, rng: &mut ChaCha8Rng) -> DdoState {
    let data = (0..space.len() * d * d)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    DdoState::from_data(space, d, data).unwrap()
}

/// ρ̄ with ρ̄_n = (ρ_{n̄})†.
pub fn dagger(state: &DdoState, space: &HierarchySpace, exp: &BathExpansion) -> DdoState {
    let d = state.dim();
    let data = (0..space.len())
        .flat_map(|i| {
            let j = space.conjugate_index(i, exp.conj_map());
            state.matrix(j).adjoint().as_slice().to_vec()
        })
        .collect();
    DdoState::from_data(space, d, data).unwrap()
}

pub fn max_diff(a: &DdoState, b: &DdoState) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Swapped fields under which the generator commutes with the dagger map:
/// (ξ′, ξ) for α₂ ≥ 0 and (−ξ′, −ξ) for α₂ < 0, where √α₂ is imaginary.
pub fn swapped(model: &SystemModel, f: FieldPair) -> FieldPair {
    if model.alphas().alpha2 >= 0.0 {
        FieldPair::new(f.xi_prime, f.xi)
    } else {
        FieldPair::new(-f.xi_prime, -f.xi)
    }
}

