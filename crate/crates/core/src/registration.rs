//! Gauss–Newton registration of one image pair with matrix-free conjugate
//! gradients and Armijo backtracking.

use std::io::Write;

use crate::energy::{registration_energy, registration_value, EnergyParams, GaussNewtonSystem};
use crate::error::{shape_err, Error, Result};
use crate::grid::{DisplacementField, Image};

#[derive(Clone, Debug, PartialEq)]
pub struct RegParams {
    pub max_outer: usize,
    pub cg_iters: usize,
    /// Relative residual at which CG stops.
    pub cg_tol: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    /// Stop once `|grad| <= grad_tol * (1 + |R|)`.
    pub grad_tol: f64,
}

impl Default for RegParams {
    fn default() -> Self {
        Self {
            max_outer: 20,
            cg_iters: 40,
            cg_tol: 1e-2,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            grad_tol: 1e-6,
        }
    }
}

impl RegParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer == 0 || self.cg_iters == 0 {
            return Err(Error::Param("iteration counts must be positive".into()));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c <= 0.5) {
            return Err(Error::Param(format!("armijo_c must lie in (0, 0.5], got {}", self.armijo_c)));
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return Err(Error::Param(format!(
                "armijo_shrink must lie in (0, 1), got {}",
                self.armijo_shrink
            )));
        }
        if !(self.cg_tol > 0.0) || !(self.grad_tol >= 0.0) {
            return Err(Error::Param("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegLogRow {
    pub iter: usize,
    pub energy: f64,
    pub grad_norm: f64,
    pub step: f64,
    /// Directional derivative `<grad R, direction>` at the start of the step.
    pub slope: f64,
    /// The Gauss–Newton direction was replaced by the negative gradient.
    pub fallback: bool,
}

#[derive(Clone, Debug)]
pub struct Registration {
    pub field: DisplacementField,
    pub energy: f64,
    pub initial_energy: f64,
    pub log: Vec<RegLogRow>,
}

impl Registration {
    pub fn write_log_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "iter,energy,grad_norm,step,fallback")?;
        for r in &self.log {
            writeln!(
                out,
                "{},{:.12e},{:.12e},{:.6e},{}",
                r.iter, r.energy, r.grad_norm, r.step, r.fallback as u8
            )?;
        }
        Ok(())
    }
}

/// Approximately solves `H x = rhs`; `None` signals a non-positive curvature.
fn conjugate_gradient(
    system: &GaussNewtonSystem,
    rhs: &DisplacementField,
    iters: usize,
    tol: f64,
) -> Result<Option<DisplacementField>> {
    let (n1, n2) = rhs.grid_shape();
    let mut x = DisplacementField::zeros(n1, n2);
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.norm_sq();
    let stop = tol * tol * rr;
    for _ in 0..iters {
        if rr <= stop {
            break;
        }
        let hp = system.apply(&p)?;
        let curv = p.dot(&hp);
        if !(curv > 0.0) {
            return Ok(None);
        }
        let a = rr / curv;
        x.add_scaled(a, &p);
        r.add_scaled(-a, &hp);
        let rr_new = r.norm_sq();
        p = {
            let mut next = r.clone();
            next.add_scaled(rr_new / rr, &p);
            next
        };
        rr = rr_new;
    }
    Ok(Some(x))
}

/// Minimizes the registration energy of the pair `(a, b)` starting at `v0`.
/// The returned energy never exceeds the energy at `v0`.
pub fn register(
    a: &Image,
    b: &Image,
    v0: &DisplacementField,
    params: &EnergyParams,
    reg: &RegParams,
) -> Result<Registration> {
    reg.validate()?;
    a.check_same_shape(b, "registration pair")?;
    if v0.grid_shape() != a.shape() {
        return Err(shape_err("initial displacement", a.shape(), v0.grid_shape()));
    }
    let mut v = v0.clone();
    let mut eval = registration_energy(&v, a, b, params)?;
    let initial_energy = eval.value;
    let mut log = Vec::new();

    for iter in 1..=reg.max_outer {
        let grad_norm = eval.gradient.norm();
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite("registration gradient".into()));
        }
        if grad_norm <= reg.grad_tol * (1.0 + eval.value.abs()) {
            break;
        }
        let rhs = eval.gradient.scaled(-1.0);
        let (mut dir, mut fallback) = match conjugate_gradient(&eval.system, &rhs, reg.cg_iters, reg.cg_tol)? {
            Some(d) => (d, false),
            None => (rhs.clone(), true),
        };
        let mut slope = eval.gradient.dot(&dir);
        if !(slope < 0.0) {
            dir = rhs;
            slope = -grad_norm * grad_norm;
            fallback = true;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial = v.clone();
            trial.add_scaled(step, &dir);
            let e = registration_value(&trial, a, b, params)?;
            if e <= eval.value + reg.armijo_c * step * slope {
                accepted = Some(trial);
                break;
            }
            step *= reg.armijo_shrink;
        }
        let Some(next) = accepted else { break };
        v = next;
        eval = registration_energy(&v, a, b, params)?;
        log.push(RegLogRow {
            iter,
            energy: eval.value,
            grad_norm,
            step,
            slope,
            fallback,
        });
    }
    Ok(Registration {
        field: v,
        energy: eval.value,
        initial_energy,
        log,
    })
}
