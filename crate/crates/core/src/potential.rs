//! Logarithmic Newtonian potentials of radial densities, free energy,
//! Euler-Lagrange residuals and the mass confinement bound.
//!
//! With `K(x) = -(1/2pi) log|x|` the potential `u = K*rho` of a radial
//! density obeys `u'(r) = -M(r) / (2 pi r)` and equals `-(M/2pi) log r`
//! outside the support. Potentials are therefore built from the mass function
//! and anchored at the support edge; no planar convolution is involved.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::radial::{
    cumulative, cumulative_monotone, interp_linear, is_radially_nonincreasing, simpson, RadialDensity, RadialGrid,
};
use crate::steady::SteadyState;

/// Fraction of the support used to average the multiplier off the profile.
pub const MULTIPLIER_WINDOW: f64 = 0.9;

/// Potential `u = K*rho` of a compactly supported radial density.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    pub grid: RadialGrid,
    pub values: Vec<f64>,
    /// Mass of the source.
    pub mass: f64,
    /// Radius beyond which `u = -(M/2pi) log r` holds exactly.
    pub support_radius: f64,
}

impl Potential {
    /// Exterior log law `-(M/2pi) log r`.
    pub fn far_field(&self, r: f64) -> f64 {
        if self.mass == 0.0 {
            0.0
        } else {
            -self.mass / (2.0 * PI) * r.ln()
        }
    }

    pub fn at(&self, r: f64) -> f64 {
        if r >= self.support_radius {
            self.far_field(r)
        } else {
            interp_linear(&self.grid, &self.values, r)
        }
    }
}

/// Builds `u` from `u'(r) = -M(r)/(2 pi r)`, anchored at `u(R) = -(M/2pi) log R`.
pub fn newtonian_potential_radial(rho: &RadialDensity, support_radius: f64) -> Result<Potential> {
    let grid = *rho.grid();
    let n = grid.len();
    if rho.values()[n - 1] > 0.0 {
        return Err(Error::InvalidDensity("support touches the grid boundary".into()));
    }
    // validates that rho vanishes past the given radius
    let rho = rho.clone().with_support_radius(support_radius)?;
    let k = rho.support_index();
    let dr = grid.dr();
    let flux: Vec<f64> = rho.values().iter().enumerate().map(|(i, v)| v * 2.0 * PI * grid.node(i)).collect();
    let mass_fn = cumulative_monotone(&flux, dr, k);
    let mass = mass_fn[k];
    let mut values = vec![0.0; n];
    if mass > 0.0 {
        let slope: Vec<f64> =
            (0..n).map(|i| if i == 0 { 0.0 } else { mass_fn[i] / (2.0 * PI * grid.node(i)) }).collect();
        let running = cumulative(&slope, dr, k);
        let edge = grid.node(k);
        let u_edge = -mass / (2.0 * PI) * edge.ln();
        for i in 0..n {
            values[i] = if i <= k { u_edge + running[k] - running[i] } else { -mass / (2.0 * PI) * grid.node(i).ln() };
        }
    }
    Ok(Potential { grid, values, mass, support_radius: grid.node(k) })
}

fn check_exponent(m: f64) -> Result<()> {
    if !(m.is_finite() && m > 1.0) {
        return Err(Error::InvalidParameter(format!("diffusion exponent must exceed 1, got {m}")));
    }
    Ok(())
}

/// `H = (1/(m-1)) int rho^m`.
pub fn entropy(rho: &RadialDensity, m: f64) -> Result<f64> {
    check_exponent(m)?;
    Ok(rho.integrate(|_, v| v.powf(m)) / (m - 1.0))
}

/// `W = -(1/2) int (K*rho) rho`, equivalently `(1/4pi) int int log|x-y| rho rho`.
pub fn interaction_energy(rho: &RadialDensity) -> Result<f64> {
    let u = newtonian_potential_radial(rho, rho.support_radius())?;
    Ok(-0.5 * rho.integrate(|i, v| u.values[i] * v))
}

/// `int int log|x-y| rho(x) rho(y) dx dy`.
pub fn log_double_integral(rho: &RadialDensity) -> Result<f64> {
    Ok(4.0 * PI * interaction_energy(rho)?)
}

/// Energy split and the two estimates of the Lagrange multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    #[serde(rename = "H")]
    pub entropy: f64,
    #[serde(rename = "W")]
    pub interaction: f64,
    #[serde(rename = "G")]
    pub total: f64,
    #[serde(rename = "D_formula")]
    pub d_formula: f64,
    #[serde(rename = "D_profile")]
    pub d_profile: f64,
    #[serde(rename = "D_profile_std")]
    pub d_profile_std: f64,
}

/// `G = H + W`, `D = (2/M) G + ((m-2)/(M(m-1))) ||rho||_m^m`, and the
/// multiplier read off `(m/(m-1)) rho^(m-1) - u` on the inner part of the support.
pub fn free_energy(rho: &RadialDensity, m: f64) -> Result<EnergyBreakdown> {
    check_exponent(m)?;
    let u = newtonian_potential_radial(rho, rho.support_radius())?;
    let mass = u.mass;
    if !(mass > 0.0) {
        return Err(Error::InvalidDensity("free energy needs a positive mass".into()));
    }
    let norm_mm = rho.integrate(|_, v| v.powf(m));
    let entropy = norm_mm / (m - 1.0);
    let interaction = -0.5 * rho.integrate(|i, v| u.values[i] * v);
    let total = entropy + interaction;
    let d_formula = 2.0 / mass * total + (m - 2.0) / (mass * (m - 1.0)) * norm_mm;

    let window = MULTIPLIER_WINDOW * rho.support_radius();
    let samples: Vec<f64> = rho
        .values()
        .iter()
        .enumerate()
        .take_while(|(i, _)| rho.grid().node(*i) <= window)
        .map(|(i, v)| m / (m - 1.0) * v.powf(m - 1.0) - u.values[i])
        .collect();
    let (d_profile, d_profile_std) = mean_std(&samples);
    Ok(EnergyBreakdown { entropy, interaction, total, d_formula, d_profile, d_profile_std })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Euler-Lagrange residuals of a steady state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElResidual {
    /// `sup |(m/(m-1)) theta - u - D|` over the support.
    pub inner: f64,
    /// `sup (u + D)_+` outside the support.
    pub outer: f64,
}

pub fn el_residual(s: &SteadyState) -> Result<ElResidual> {
    let rho = s.density();
    let u = newtonian_potential_radial(&rho, rho.support_radius())?;
    Ok(el_residual_with(s.m, &s.theta, &u, s.support_index, s.multiplier))
}

/// Residuals for an arbitrary `theta` against a given potential and multiplier.
pub fn el_residual_with(m: f64, theta: &[f64], u: &Potential, support_index: usize, multiplier: f64) -> ElResidual {
    let c = m / (m - 1.0);
    let inner = (0..=support_index).map(|i| (c * theta[i] - u.values[i] - multiplier).abs()).fold(0.0, f64::max);
    let outer = (support_index + 1..theta.len()).map(|i| (u.values[i] + multiplier).max(0.0)).fold(0.0, f64::max);
    ElResidual { inner, outer }
}

/// Coarse radial resampling used by the annular double integrals.
struct PairGrid {
    r: Vec<f64>,
    /// `rho(r_j) * r_j * w_j` with Simpson weights `w_j`.
    weight: Vec<f64>,
}

const PAIR_NODES: usize = 401;

impl PairGrid {
    fn new(rho: &RadialDensity) -> Self {
        let radius = rho.support_radius();
        let n = PAIR_NODES.min(rho.support_index() + 1).max(3) | 1;
        let h = radius / (n - 1) as f64;
        let r: Vec<f64> = (0..n).map(|j| j as f64 * h).collect();
        let weight = r
            .iter()
            .enumerate()
            .map(|(j, &rj)| {
                let w = if j == 0 || j == n - 1 {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let value = if rj > radius { 0.0 } else { interp_linear(rho.grid(), rho.values(), rj) };
                value * rj * w * h / 3.0
            })
            .collect();
        Self { r, weight }
    }

    /// `int int f(|x-y|) rho rho` for a kernel whose angular part is supplied
    /// by `angular(r, s) = int_0^pi f(d(phi)) dphi`.
    fn double_integral(&self, angular: impl Fn(f64, f64) -> f64 + Sync) -> f64 {
        let rows: Vec<f64> = (0..self.r.len())
            .into_par_iter()
            .map(|a| {
                if self.weight[a] == 0.0 {
                    return 0.0;
                }
                (0..self.r.len())
                    .filter(|&b| self.weight[b] != 0.0)
                    .map(|b| self.weight[b] * angular(self.r[a], self.r[b]))
                    .sum::<f64>()
                    * self.weight[a]
            })
            .collect();
        4.0 * PI * rows.iter().sum::<f64>()
    }
}

fn separation(r: f64, s: f64, phi: f64) -> f64 {
    (r * r + s * s - 2.0 * r * s * phi.cos()).max(0.0).sqrt()
}

/// Angle at which `|x - y| = cutoff` for `|x| = r`, `|y| = s`, clamped to `[0, pi]`.
fn cutoff_angle(r: f64, s: f64, cutoff: f64) -> f64 {
    if r == 0.0 || s == 0.0 {
        return if r.max(s) > cutoff { 0.0 } else { PI };
    }
    let c = (r * r + s * s - cutoff * cutoff) / (2.0 * r * s);
    c.clamp(-1.0, 1.0).acos()
}

/// Far and near parts of the logarithmic double integral split at `|x-y| = cutoff`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogSplit {
    /// `int int_{|x-y| > cutoff} log|x-y| rho rho`.
    pub far: f64,
    /// `int int_{|x-y| <= cutoff} |log|x-y|| rho rho`.
    pub near_abs: f64,
}

pub fn log_split(rho: &RadialDensity, cutoff: f64) -> Result<LogSplit> {
    if !(cutoff > 0.0) {
        return Err(Error::InvalidParameter(format!("cutoff must be positive, got {cutoff}")));
    }
    let pairs = PairGrid::new(rho);
    let gl = GaussLegendre::new(24);
    let far = pairs.double_integral(|r, s| {
        let phi0 = cutoff_angle(r, s, cutoff);
        if phi0 >= PI {
            return 0.0;
        }
        gl.integrate(phi0, PI, |phi| separation(r, s, phi).max(cutoff).ln())
    });
    let near_abs = pairs.double_integral(|r, s| {
        let phi0 = cutoff_angle(r, s, cutoff);
        if phi0 <= 0.0 {
            return 0.0;
        }
        // phi = phi0 u^2 tames the logarithmic endpoint singularity at r = s
        2.0 * phi0
            * gl.integrate(0.0, 1.0, |q| {
                let d = separation(r, s, phi0 * q * q);
                if d > 0.0 {
                    q * d.ln().abs()
                } else {
                    0.0
                }
            })
    });
    Ok(LogSplit { far, near_abs })
}

/// `W_R[rho] = int int_{|x-y| > R} log|x-y| rho(x) rho(y)`.
pub fn truncated_interaction(rho: &RadialDensity, cutoff: f64) -> Result<f64> {
    Ok(log_split(rho, cutoff)?.far)
}

/// Both sides of the confinement bound `W_1 >= (M log R / 2) int_{|x|>R} rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confinement {
    pub radius: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

pub fn confinement_check(rho: &RadialDensity, radius: f64, tol: f64) -> Result<Confinement> {
    if !(radius >= 1.0) {
        return Err(Error::InvalidParameter(format!("confinement radius must be >= 1, got {radius}")));
    }
    if !is_radially_nonincreasing(rho, 0.0) {
        return Err(Error::InvalidDensity("confinement bound needs a radially nonincreasing density".into()));
    }
    let mass = rho.quadrature_mass();
    let tail = tail_mass(rho, radius);
    let lhs = truncated_interaction(rho, 1.0)?;
    let rhs = mass * radius.ln() / 2.0 * tail;
    let margin = lhs - rhs;
    let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
    Ok(Confinement { radius, lhs, rhs, margin, holds: margin >= -tol * scale })
}

/// `int_{|x| > R} rho`, integrating the support beyond `R` directly.
pub fn tail_mass(rho: &RadialDensity, radius: f64) -> f64 {
    if radius >= rho.support_radius() {
        return 0.0;
    }
    let grid = rho.grid();
    let last = rho.support_index();
    let start = ((radius / grid.dr()).ceil() as usize).min(last);
    let g: Vec<f64> = (start..=last).map(|i| rho.values()[i] * 2.0 * PI * grid.node(i)).collect();
    let mut tail = simpson(&g, grid.dr(), last - start);
    // sliver between R and the first node past it
    let r0 = grid.node(start);
    if r0 > radius {
        let v = interp_linear(grid, rho.values(), radius) * 2.0 * PI * radius;
        tail += 0.5 * (r0 - radius) * (v + g[0]);
    }
    tail
}

/// Upper bound on the truncated interaction: `W_R <= L + N_R`, where `L` is
/// the full log double integral and `N_R` the near-field absolute part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationBound {
    pub cutoff: f64,
    pub truncated: f64,
    pub full: f64,
    pub near_abs: f64,
    /// `N_R / (M ||rho||_m)`, the constant realised by this density.
    pub measured_constant: f64,
    pub holds: bool,
}

pub fn truncation_bound(rho: &RadialDensity, cutoff: f64, m: f64, tol: f64) -> Result<TruncationBound> {
    check_exponent(m)?;
    let split = log_split(rho, cutoff)?;
    let full = log_double_integral(rho)?;
    let mass = rho.quadrature_mass();
    let norm = crate::radial::lp_norm(rho, m)?;
    let bound = full + split.near_abs;
    let scale = bound.abs().max(split.far.abs()).max(f64::MIN_POSITIVE);
    Ok(TruncationBound {
        cutoff,
        truncated: split.far,
        full,
        near_abs: split.near_abs,
        measured_constant: split.near_abs / (mass * norm),
        holds: split.far <= bound + tol * scale,
    })
}
