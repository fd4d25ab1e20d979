//! Quadratic deformation regularizers: the linearized elastic potential and
//! the third-order smoothness term.

use ndarray::Array2;

use super::stencil::{apply, apply_term, apply_term_transpose, apply_transpose, Stencil, Term};
use super::EnergyParams;
use crate::error::{Error, Result};
use crate::grid::DisplacementField;

/// Smallest grid edge for which the third-order term is evaluated.
pub const MIN_D3_GRID: usize = 7;

fn sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Linearized elastic energy
/// `mu (|d1 v1|^2 + |d2 v2|^2 + |d2 v1 + d1 v2|^2 / 2) + lambda / 2 |d1 v1 + d2 v2|^2`
/// and its gradient.
///
/// Normal derivatives (`d1 v1`, `d2 v2`) include the zero boundary faces and
/// live on cell centers; tangential derivatives are plain forward differences
/// and live on interior cell corners.
pub fn elastic_value_grad(v: &DisplacementField, mu: f64, lambda: f64) -> (f64, DisplacementField) {
    let a1 = apply(Stencil::ForwardPadded, 0, v.v1());
    let a2 = apply(Stencil::ForwardPadded, 1, v.v2());
    let shear = apply(Stencil::Forward, 1, v.v1()) + apply(Stencil::Forward, 0, v.v2());
    let div = &a1 + &a2;
    let value = mu * (sq(&a1) + sq(&a2) + 0.5 * sq(&shear)) + 0.5 * lambda * sq(&div);

    let t1 = &a1 * (2.0 * mu) + &div * lambda;
    let t2 = &a2 * (2.0 * mu) + &div * lambda;
    let shear = shear * mu;
    let g1 = apply_transpose(Stencil::ForwardPadded, 0, &t1) + apply_transpose(Stencil::Forward, 1, &shear);
    let g2 = apply_transpose(Stencil::ForwardPadded, 1, &t2) + apply_transpose(Stencil::Forward, 0, &shear);
    (value, DisplacementField { v1: g1, v2: g2 })
}

fn d3_terms() -> [Term; 4] {
    [0, 1, 2, 3].map(|i| [Stencil::of_order(i), Stencil::of_order(3 - i)])
}

/// `nu * D3(v)` and its gradient, where
/// `D3(v) = sum_i |D_x1^i v_c D_x2^(3-i)|^2 + eta |v|^2` over both components.
pub fn d3_value_grad(v: &DisplacementField, nu: f64, eta: f64) -> Result<(f64, DisplacementField)> {
    let (n1, n2) = v.grid_shape();
    if n1 < MIN_D3_GRID || n2 < MIN_D3_GRID {
        return Err(Error::TooSmall(format!(
            "third-order term needs at least {MIN_D3_GRID} cells per axis, grid is {n1}x{n2}"
        )));
    }
    let mut value = eta * v.norm_sq();
    let mut g1 = v.v1() * (2.0 * eta);
    let mut g2 = v.v2() * (2.0 * eta);
    for term in d3_terms() {
        let r1 = apply_term(term, v.v1());
        let r2 = apply_term(term, v.v2());
        value += sq(&r1) + sq(&r2);
        g1 += &(apply_term_transpose(term, &r1) * 2.0);
        g2 += &(apply_term_transpose(term, &r2) * 2.0);
    }
    Ok((nu * value, DisplacementField { v1: g1 * nu, v2: g2 * nu }))
}

/// `S(v) + nu D3(v)` and its gradient.
pub fn regularizer_value_grad(v: &DisplacementField, params: &EnergyParams) -> Result<(f64, DisplacementField)> {
    let (es, mut g) = elastic_value_grad(v, params.mu, params.lambda_e);
    let (ed, gd) = d3_value_grad(v, params.nu, params.eta)?;
    g.add_scaled(1.0, &gd);
    Ok((es + ed, g))
}

/// Hessian of `S + nu D3` applied to `delta`; both terms are quadratic, so
/// this is the gradient evaluated at `delta`.
pub fn regularizer_hessian_apply(delta: &DisplacementField, params: &EnergyParams) -> Result<DisplacementField> {
    Ok(regularizer_value_grad(delta, params)?.1)
}
