//! Discrete energies: total variation, deformation regularizers, the
//! registration energy of one path step, the path energy and the full
//! reconstruction objective.

mod regularizer;
mod stencil;
mod tv;

pub use regularizer::{
    d3_value_grad, elastic_value_grad, regularizer_hessian_apply, regularizer_value_grad, MIN_D3_GRID,
};
pub use tv::{forward_gradient, forward_gradient_adjoint, tv_value};

use crate::error::{shape_err, Error, Result};
use crate::grid::{
    stagger_average, stagger_average_adjoint, warp, warp_with_gradient, CellVectorField,
    DeformationPath, DisplacementField, Image, ImagePath, Interp,
};
use crate::operators::{MeasurementData, MeasurementOp};

/// Model weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyParams {
    /// TV weight.
    pub alpha: f64,
    /// Weight of the path energy.
    pub beta: f64,
    /// Elastic shear weight.
    pub mu: f64,
    /// Elastic volume weight (Lamé first parameter).
    pub lambda_e: f64,
    /// Weight of the third-order term.
    pub nu: f64,
    /// Zero-order displacement weight inside the third-order term.
    pub eta: f64,
    /// Number of path steps `K`.
    pub steps: usize,
    /// Interpolation used by the matching term.
    pub interp: Interp,
}

impl EnergyParams {
    /// Ties the deformation weights to one scale: `lambda_e = mu = nu = scale`
    /// and `eta = scale / 100`.
    pub fn from_reg_scale(alpha: f64, beta: f64, reg_scale: f64, steps: usize) -> Self {
        Self {
            alpha,
            beta,
            mu: reg_scale,
            lambda_e: reg_scale,
            nu: reg_scale,
            eta: reg_scale / 100.0,
            steps,
            interp: Interp::Bilinear,
        }
    }

    /// Multiplies all deformation weights by `factor`.
    pub fn scale_regularization(&mut self, factor: f64) {
        self.mu *= factor;
        self.lambda_e *= factor;
        self.nu *= factor;
        self.eta *= factor;
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.mu, self.lambda_e, self.nu, self.eta];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(Error::Param("energy weights must be finite".into()));
        }
        if self.alpha <= 0.0 || self.beta <= 0.0 || self.nu <= 0.0 {
            return Err(Error::Param("alpha, beta and nu must be positive".into()));
        }
        if self.mu < 0.0 || self.lambda_e < 0.0 || self.eta < 0.0 {
            return Err(Error::Param("mu, lambda_e and eta must be nonnegative".into()));
        }
        if self.steps == 0 {
            return Err(Error::Param("the path needs at least one step".into()));
        }
        Ok(())
    }
}

fn sq_norm(a: &ndarray::Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Gauss–Newton model of the registration energy around the current field:
/// the exact Hessian of the quadratic regularizers plus `2 J^T J` for the
/// matching term.
#[derive(Clone, Debug)]
pub struct GaussNewtonSystem {
    gradient: CellVectorField,
    params: EnergyParams,
}

impl GaussNewtonSystem {
    pub fn apply(&self, delta: &DisplacementField) -> Result<DisplacementField> {
        let u = stagger_average(delta);
        let g = &self.gradient;
        let proj = &g.u1 * &u.u1 + &g.u2 * &u.u2;
        let data = CellVectorField {
            u1: &g.u1 * &proj * 2.0,
            u2: &g.u2 * &proj * 2.0,
        };
        let mut out = stagger_average_adjoint(&data);
        out.add_scaled(1.0, &regularizer_hessian_apply(delta, &self.params)?);
        Ok(out)
    }
}

/// Value, gradient and Gauss–Newton model of the registration energy.
#[derive(Clone, Debug)]
pub struct RegistrationEval {
    pub value: f64,
    pub gradient: DisplacementField,
    pub system: GaussNewtonSystem,
}

/// `S(v) + nu D3(v) + |warp(I_a, v) - I_b|^2`.
pub fn registration_value(v: &DisplacementField, a: &Image, b: &Image, params: &EnergyParams) -> Result<f64> {
    a.check_same_shape(b, "registration pair")?;
    let warped = warp(a, v, params.interp)?;
    let (reg, _) = regularizer_value_grad(v, params)?;
    Ok(reg + sq_norm(&(warped.data() - b.data())))
}

/// Registration energy with its gradient and Gauss–Newton system.
pub fn registration_energy(v: &DisplacementField, a: &Image, b: &Image, params: &EnergyParams) -> Result<RegistrationEval> {
    a.check_same_shape(b, "registration pair")?;
    let (warped, grad_img) = warp_with_gradient(a, v, params.interp)?;
    let residual = warped.data() - b.data();
    let (reg, mut gradient) = regularizer_value_grad(v, params)?;
    // d/du I_a(x - u) = -grad I_a
    let dr = CellVectorField {
        u1: &grad_img.u1 * &residual * -2.0,
        u2: &grad_img.u2 * &residual * -2.0,
    };
    gradient.add_scaled(1.0, &stagger_average_adjoint(&dr));
    Ok(RegistrationEval {
        value: reg + sq_norm(&residual),
        gradient,
        system: GaussNewtonSystem {
            gradient: grad_img,
            params: params.clone(),
        },
    })
}

fn check_path(images: &ImagePath, fields: &DeformationPath) -> Result<()> {
    if images.steps() != fields.len() {
        return Err(Error::Shape(format!(
            "image path has {} steps, deformation path has {}",
            images.steps(),
            fields.len()
        )));
    }
    if images.shape() != fields.grid_shape() {
        return Err(shape_err("image path vs deformation path", images.shape(), fields.grid_shape()));
    }
    Ok(())
}

/// Per-step terms `S(v_k) + nu D3(v_k) + |warp(I_k, v_k) - I_{k+1}|^2`.
pub fn path_energy_terms(images: &ImagePath, fields: &DeformationPath, params: &EnergyParams) -> Result<Vec<f64>> {
    check_path(images, fields)?;
    fields
        .steps()
        .iter()
        .enumerate()
        .map(|(k, v)| registration_value(v, images.frame(k), images.frame(k + 1), params))
        .collect()
}

/// Time-discrete path energy: the sum of the registration energies of all steps.
pub fn path_energy(images: &ImagePath, fields: &DeformationPath, params: &EnergyParams) -> Result<f64> {
    Ok(path_energy_terms(images, fields, params)?.iter().sum())
}

/// `|A I - B|^2 / 2 + alpha TV(I)`.
pub fn l2tv_value(op: &dyn MeasurementOp, data: &MeasurementData, image: &Image, alpha: f64) -> Result<f64> {
    let residual = op.apply(image)?.values - &data.values;
    Ok(0.5 * sq_norm(&residual) + alpha * tv_value(image))
}

/// The full objective `|A I_0 - B|^2 / 2 + alpha TV(I_0) + beta F(I, v)`.
pub fn full_objective(
    images: &ImagePath,
    fields: &DeformationPath,
    op: &dyn MeasurementOp,
    data: &MeasurementData,
    params: &EnergyParams,
) -> Result<f64> {
    let recon = l2tv_value(op, data, images.first(), params.alpha)?;
    Ok(recon + params.beta * path_energy(images, fields, params)?)
}
