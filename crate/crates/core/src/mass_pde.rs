//! Radial evolution through the mass function
//! `M_t = 2 pi r d_r((M_r / 2 pi r)^m) + (M_r / 2 pi r) M`,
//! scaled steady-state barriers, and the convergence diagnostics built on them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radial::{mass_function, MassFunction, RadialDensity, RadialGrid};
use crate::steady::SteadyState;

/// Diffusive and transport safety factors of the explicit step.
pub const DIFFUSION_CFL: f64 = 0.2;
pub const TRANSPORT_CFL: f64 = 0.5;

/// Default domain length in units of the steady support radius.
pub const DOMAIN_FACTOR: f64 = 3.0;

/// Nodes across the default evolution domain.
pub const DEFAULT_EVOLUTION_NODES: usize = 601;

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionState {
    pub grid: RadialGrid,
    /// `M(r_i, t)`.
    pub mass: Vec<f64>,
    pub t: f64,
    pub m: f64,
    pub total: f64,
}

impl EvolutionState {
    /// Builds a state from mass-function samples; the end values are pinned
    /// to `0` and `total`.
    pub fn from_mass(grid: RadialGrid, mut mass: Vec<f64>, m: f64, total: f64) -> Result<Self> {
        if !(m > 1.0) {
            return Err(Error::InvalidParameter(format!("diffusion exponent must exceed 1, got {m}")));
        }
        if mass.len() != grid.len() {
            return Err(Error::InvalidGrid(format!("{} mass values for {} nodes", mass.len(), grid.len())));
        }
        if !(total >= 0.0 && total.is_finite()) {
            return Err(Error::InvalidParameter(format!("total mass must be nonnegative, got {total}")));
        }
        mass[0] = 0.0;
        let n = mass.len();
        mass[n - 1] = total;
        let state = Self { grid, mass, t: 0.0, m, total };
        state.check_monotone(1e-9)?;
        Ok(state)
    }

    pub fn mass_function(&self) -> MassFunction {
        MassFunction::from_parts(self.grid, self.mass.clone(), self.total).expect("grid sizes agree")
    }

    /// `sup_r |M(r) - reference(r)|`.
    pub fn sup_distance(&self, reference: impl Fn(f64) -> f64) -> f64 {
        self.grid.nodes().zip(&self.mass).map(|(r, m)| (m - reference(r)).abs()).fold(0.0, f64::max)
    }

    fn check_monotone(&self, tol: f64) -> Result<()> {
        let band = tol * self.total.max(f64::MIN_POSITIVE);
        for i in 0..self.mass.len() - 1 {
            let drop = self.mass[i] - self.mass[i + 1];
            if drop > band {
                return Err(Error::MonotonicityLoss { r: self.grid.node(i + 1), drop });
            }
        }
        Ok(())
    }

    /// Cell densities `(M_{i+1} - M_i) / (pi (r_{i+1}^2 - r_i^2))`.
    fn cell_densities(&self, mass: &[f64]) -> Vec<f64> {
        let dr = self.grid.dr();
        (0..mass.len() - 1).map(|c| (mass[c + 1] - mass[c]) / (PI * dr * dr * (2 * c + 1) as f64)).collect()
    }

    /// Largest stable time step of the explicit scheme.
    pub fn stability_bound(&self) -> f64 {
        let dr = self.grid.dr();
        let rho = self.cell_densities(&self.mass);
        let peak = rho.iter().cloned().fold(0.0, f64::max);
        let diff = self.m * peak.powf(self.m - 1.0);
        let speed = (1..self.mass.len()).map(|i| self.mass[i] / (2.0 * PI * self.grid.node(i))).fold(0.0, f64::max);
        let eps = 1e-300;
        (DIFFUSION_CFL * dr * dr / (diff + eps)).min(TRANSPORT_CFL * dr / (speed + eps))
    }

    fn rhs(&self, mass: &[f64], out: &mut [f64]) {
        let dr = self.grid.dr();
        let n = mass.len();
        let rho = self.cell_densities(mass);
        let pressure: Vec<f64> = if self.m == 2.0 {
            rho.iter().map(|r| r.max(0.0).powi(2)).collect()
        } else {
            rho.iter().map(|r| r.max(0.0).powf(self.m)).collect()
        };
        out[0] = 0.0;
        out[n - 1] = 0.0;
        for i in 1..n - 1 {
            let r = self.grid.node(i);
            let diffusion = 2.0 * PI * r * (pressure[i] - pressure[i - 1]) / dr;
            // mass is carried inward, so node i takes the density of the cell
            // outside it, reconstructed at its inner face
            let outer = rho.get(i + 1).copied().unwrap_or(0.0);
            let face = rho[i] - 0.5 * minmod(outer - rho[i], rho[i] - rho[i - 1]);
            out[i] = diffusion + face.max(0.0) * mass[i];
        }
    }
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Mass function of a density on its own grid.
pub fn density_to_mass(rho: &RadialDensity, m: f64) -> Result<EvolutionState> {
    let mf = mass_function(rho);
    if rho.values()[rho.grid().len() - 1] > 0.0 {
        return Err(Error::SupportExceedsDomain { r_max: rho.grid().r_max() });
    }
    EvolutionState::from_mass(*rho.grid(), mf.values().to_vec(), m, mf.total())
}

/// `rho = M_r / (2 pi r)`: centred differences, second-order one-sided
/// differences where exactly one neighbouring cell carries mass, and
/// `rho(0) = (16 M_1 - M_2) / (12 pi dr^2)`. A one-sided stencil that
/// undershoots at a steep front drops to first order.
pub fn mass_to_density(state: &EvolutionState) -> Result<RadialDensity> {
    let grid = state.grid;
    let dr = grid.dr();
    let mass = &state.mass;
    let n = mass.len();
    let band = 1e-12 * state.total.max(f64::MIN_POSITIVE);
    let wet = |c: usize| mass[c + 1] - mass[c] > band;
    let mut values = vec![0.0; n];
    values[0] = (16.0 * mass[1] - mass[2]) / (12.0 * PI * dr * dr);
    for i in 1..n - 1 {
        let r = grid.node(i);
        let slope = match (wet(i - 1), wet(i)) {
            (true, false) if i >= 2 => (3.0 * mass[i] - 4.0 * mass[i - 1] + mass[i - 2]) / (2.0 * dr),
            (false, true) if i + 2 < n => (-3.0 * mass[i] + 4.0 * mass[i + 1] - mass[i + 2]) / (2.0 * dr),
            _ => (mass[i + 1] - mass[i - 1]) / (2.0 * dr),
        };
        let slope = if slope < 0.0 { (mass[i + 1] - mass[i - 1]).max(0.0) / (2.0 * dr) } else { slope };
        values[i] = slope / (2.0 * PI * r);
    }
    values[n - 1] = if wet(n - 2) {
        let slope = (3.0 * mass[n - 1] - 4.0 * mass[n - 2] + mass[n - 3]) / (2.0 * dr);
        slope.max(0.0) / (2.0 * PI * grid.node(n - 1))
    } else {
        0.0
    };
    let scale = values.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| **v < -1e-6 * scale) {
        return Err(Error::InvalidDensity(format!("negative density {v} at r = {}", grid.node(i))));
    }
    for v in &mut values {
        *v = v.max(0.0);
    }
    let last_wet = (0..n - 1).rev().find(|&c| wet(c)).map(|c| c + 1).unwrap_or(0);
    // sub-band wiggles in the dry tail are noise
    for v in &mut values[last_wet + 1..] {
        *v = 0.0;
    }
    RadialDensity::from_values(grid, values)?.with_support_radius(grid.node(last_wet))
}

/// One explicit Heun step; `dt` must respect [`EvolutionState::stability_bound`].
pub fn step(state: &EvolutionState, dt: f64, monotone_tol: f64) -> Result<EvolutionState> {
    let bound = state.stability_bound();
    if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(Error::StabilityViolation { dt, bound });
    }
    let n = state.mass.len();
    let mut k1 = vec![0.0; n];
    state.rhs(&state.mass, &mut k1);
    let predictor: Vec<f64> = state.mass.iter().zip(&k1).map(|(m, k)| m + dt * k).collect();
    let mut k2 = vec![0.0; n];
    state.rhs(&predictor, &mut k2);
    let mut mass: Vec<f64> = (0..n).map(|i| state.mass[i] + 0.5 * dt * (k1[i] + k2[i])).collect();
    mass[0] = 0.0;
    mass[n - 1] = state.total;
    let next = EvolutionState { mass, t: state.t + dt, ..state.clone() };
    next.check_monotone(monotone_tol)?;
    Ok(next)
}

/// Checkpoint times and step policy for [`evolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub checkpoints: Vec<f64>,
    /// Fraction of the stability bound used per step.
    pub safety: f64,
    pub monotone_tol: f64,
}

impl Controller {
    /// `count` equally spaced checkpoints in `(0, horizon]`.
    pub fn uniform(horizon: f64, count: usize) -> Self {
        let checkpoints = (1..=count).map(|k| horizon * k as f64 / count as f64).collect();
        Self { checkpoints, safety: 0.9, monotone_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: EvolutionState,
    /// `sup_r |M(r, t) - M_{rho_0}(r)|` when a reference was supplied.
    pub sup_distance: Option<f64>,
    pub steps: usize,
}

/// Runs to each checkpoint in turn, landing on the checkpoint times exactly.
pub fn evolve(
    initial: &EvolutionState,
    controller: &Controller,
    reference: Option<&dyn Fn(f64) -> f64>,
) -> Result<Vec<Checkpoint>> {
    if !(controller.safety > 0.0 && controller.safety <= 1.0) {
        return Err(Error::InvalidParameter(format!("step safety must lie in (0, 1], got {}", controller.safety)));
    }
    let mut state = initial.clone();
    let mut steps = 0;
    let mut history = Vec::with_capacity(controller.checkpoints.len());
    for &target in &controller.checkpoints {
        if target < state.t {
            return Err(Error::InvalidParameter("checkpoints must be increasing".into()));
        }
        while state.t < target {
            let dt = (controller.safety * state.stability_bound()).min(target - state.t);
            state = step(&state, dt, controller.monotone_tol)?;
            steps += 1;
            if target - state.t < 1e-12 * target.max(1.0) {
                state.t = target;
            }
        }
        let sup_distance = reference.map(|f| state.sup_distance(f));
        history.push(Checkpoint { state: state.clone(), sup_distance, steps });
    }
    Ok(history)
}

/// Initial mass function `M_{rho_0}(a r)` of the scaled state `a^2 rho_0(a r)`.
pub fn scaled_steady_state(base: &SteadyState, a: f64, grid: RadialGrid) -> Result<EvolutionState> {
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!("scale factor must be positive, got {a}")));
    }
    if base.radius / a >= grid.r_max() {
        return Err(Error::SupportExceedsDomain { r_max: grid.r_max() });
    }
    let mass = grid.nodes().map(|r| base.mass_at(a * r)).collect();
    EvolutionState::from_mass(grid, mass, base.m, base.mass)
}

/// Evolution grid: `nodes` nodes over `[0, 3 R]`.
pub fn evolution_grid(base: &SteadyState, nodes: usize) -> Result<RadialGrid> {
    RadialGrid::spanning(DOMAIN_FACTOR * base.radius, nodes)
}

/// `k(t)` for `k' = C k^3 (1 - k^(2(m-1)))` by classical RK4.
pub fn barrier_ode(k0: f64, c: f64, m: f64, t: f64) -> Result<f64> {
    Ok(barrier_trajectory(k0, c, m, &[t])?[0])
}

/// `k` at each of the nondecreasing times `ts`.
pub fn barrier_trajectory(k0: f64, c: f64, m: f64, ts: &[f64]) -> Result<Vec<f64>> {
    if !(k0 > 0.0 && c > 0.0 && m > 1.0) {
        return Err(Error::InvalidParameter(format!("barrier needs k0 > 0, C > 0, m > 1 (got {k0}, {c}, {m})")));
    }
    let f = |k: f64| c * k.powi(3) * (1.0 - k.powf(2.0 * (m - 1.0)));
    // the linearised rate at k = 1 and the size of k set the step
    let stiff = c * 2.0 * (m - 1.0) * k0.max(1.0).powf(2.0 * m + 1.0);
    let h_max = 0.01 / stiff;
    let (mut t, mut k) = (0.0, k0);
    let mut out = Vec::with_capacity(ts.len());
    for &target in ts {
        if target < t {
            return Err(Error::InvalidParameter("barrier times must be nondecreasing".into()));
        }
        while t < target {
            let h = h_max.min(target - t);
            let k1 = f(k);
            let k2 = f(k + 0.5 * h * k1);
            let k3 = f(k + 0.5 * h * k2);
            let k4 = f(k + h * k3);
            k += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        out.push(k);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BarrierKind {
    Sub,
    Super,
}

/// `k(t)^2 rho_0(k(t) r)` with `k` driven by the barrier ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct Barrier {
    pub kind: BarrierKind,
    pub k0: f64,
    pub c: f64,
    pub base: SteadyState,
}

impl Barrier {
    /// Sub-barrier from `a^2 rho_0(a r)` and super-barrier from
    /// `a^-2 rho_0(r / a)`, both with the rate constant `C1`.
    pub fn pair(base: &SteadyState, a: f64) -> Result<(Barrier, Barrier)> {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::InvalidParameter(format!("barrier scale must lie in (0, 1], got {a}")));
        }
        let (c1, _) = concentration_constants(base)?;
        let sub = Barrier { kind: BarrierKind::Sub, k0: a, c: c1, base: base.clone() };
        let sup = Barrier { kind: BarrierKind::Super, k0: 1.0 / a, c: c1, base: base.clone() };
        Ok((sub, sup))
    }

    pub fn k_at(&self, t: f64) -> Result<f64> {
        barrier_ode(self.k0, self.c, self.base.m, t)
    }

    pub fn mass_at(&self, k: f64, r: f64) -> f64 {
        self.base.mass_at(k * r)
    }
}

/// `M_phi(r, t) = M_{rho_0}(k(t) r)` on `grid`.
pub fn barrier_mass(b: &Barrier, t: f64, grid: RadialGrid) -> Result<MassFunction> {
    let k = b.k_at(t)?;
    let values = grid.nodes().map(|r| b.mass_at(k, r)).collect();
    MassFunction::from_parts(grid, values, b.base.mass)
}

/// `(C1, C2)`: the infimum and supremum of `M(r) / (2 pi r^2)` over the support.
pub fn concentration_constants(s: &SteadyState) -> Result<(f64, f64)> {
    let rho0 = s.theta_c.powf(1.0 / (s.m - 1.0));
    let ratios: Vec<f64> = (1..=s.support_index)
        .map(|i| {
            let r = s.grid.node(i);
            s.mass_at(r) / (2.0 * PI * r * r)
        })
        .collect();
    check_ratio_monotone(&ratios)?;
    Ok((s.mass / (2.0 * PI * s.radius * s.radius), rho0 / 2.0))
}

/// Same constants for an arbitrary density, from its mass function.
pub fn concentration_constants_of(rho: &RadialDensity) -> Result<(f64, f64)> {
    let mf = mass_function(rho);
    let grid = rho.grid();
    let last = rho.support_index();
    if last == 0 {
        return Err(Error::InvalidDensity("density has no support".into()));
    }
    let ratios: Vec<f64> = (1..=last).map(|i| mf.values()[i] / (2.0 * PI * grid.node(i).powi(2))).collect();
    check_ratio_monotone(&ratios)?;
    let radius = rho.support_radius();
    Ok((mf.total() / (2.0 * PI * radius * radius), rho.values()[0] / 2.0))
}

fn check_ratio_monotone(ratios: &[f64]) -> Result<()> {
    let scale = ratios.iter().cloned().fold(0.0, f64::max);
    for (i, w) in ratios.windows(2).enumerate() {
        if w[1] > w[0] + 1e-6 * scale {
            return Err(Error::InvalidDensity(format!(
                "concentration ratio increases at node {} ({} -> {})",
                i + 2,
                w[0],
                w[1]
            )));
        }
    }
    Ok(())
}

/// Worst margins of `M_phi <= M_rho <= M_eta` over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// `min (M_rho - M_phi)` over checkpoints and nodes.
    pub worst_lower: f64,
    /// `min (M_eta - M_rho)`.
    pub worst_upper: f64,
    /// `min (M_eta - M_phi)`.
    pub worst_barriers: f64,
    pub tolerance: f64,
    pub holds: bool,
    pub k_sub: Vec<f64>,
    pub k_super: Vec<f64>,
}

pub fn comparison_monitor(run: &[Checkpoint], sub: &Barrier, sup: &Barrier, tol: f64) -> Result<ComparisonReport> {
    let times: Vec<f64> = run.iter().map(|c| c.state.t).collect();
    let k_sub = barrier_trajectory(sub.k0, sub.c, sub.base.m, &times)?;
    let k_super = barrier_trajectory(sup.k0, sup.c, sup.base.m, &times)?;
    let (mut lower, mut upper, mut between) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for (cp, (&ks, &ke)) in run.iter().zip(k_sub.iter().zip(&k_super)) {
        for (r, &m) in cp.state.grid.nodes().zip(&cp.state.mass) {
            let phi = sub.mass_at(ks, r);
            let eta = sup.mass_at(ke, r);
            lower = lower.min(m - phi);
            upper = upper.min(eta - m);
            between = between.min(eta - phi);
        }
    }
    let holds = lower >= -tol && upper >= -tol && between >= -tol;
    Ok(ComparisonReport {
        worst_lower: lower,
        worst_upper: upper,
        worst_barriers: between,
        tolerance: tol,
        holds,
        k_sub,
        k_super,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitVerdict {
    Converging,
    Inconclusive,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub lambda_fit: f64,
    pub r_squared: f64,
    pub lambda_theory: f64,
    pub points: usize,
    pub verdict: FitVerdict,
}

/// Least-squares decay rate of the sup-distance over the tail of a run.
///
/// Checkpoints before `transient` are dropped, as are those below `floor`
/// (the discretisation noise level). At least ten points must remain.
pub fn convergence_rate(run: &[Checkpoint], s: &SteadyState, transient: f64, floor: f64) -> Result<RateFit> {
    let (c1, _) = concentration_constants(s)?;
    let lambda_theory = 2.0 * (s.m - 1.0) * c1;
    let pts: Vec<(f64, f64)> = run
        .iter()
        .filter_map(|c| c.sup_distance.map(|d| (c.state.t, d)))
        .filter(|&(t, d)| t >= transient && d > floor)
        .map(|(t, d)| (t, d.ln()))
        .collect();
    if pts.len() < 10 {
        return Ok(RateFit {
            lambda_fit: f64::NAN,
            r_squared: f64::NAN,
            lambda_theory,
            points: pts.len(),
            verdict: FitVerdict::Skipped,
        });
    }
    let (slope, r_squared) = linear_fit(&pts);
    let lambda_fit = -slope;
    let verdict = if r_squared >= 0.9 && lambda_fit > 0.0 { FitVerdict::Converging } else { FitVerdict::Inconclusive };
    Ok(RateFit { lambda_fit, r_squared, lambda_theory, points: pts.len(), verdict })
}

/// Slope and coefficient of determination of a least-squares line.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { slope * sxy / syy };
    (slope, r2)
}

/// Inward velocity `v = (m/(m-1)) d_r rho^(m-1) + M(r)/(2 pi r)` at nodes whose
/// neighbours both lie inside the support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityField {
    pub r: Vec<f64>,
    pub v: Vec<f64>,
}

pub fn velocity_field(rho: &RadialDensity, m: f64) -> Result<VelocityField> {
    if !(m > 1.0) {
        return Err(Error::InvalidParameter(format!("diffusion exponent must exceed 1, got {m}")));
    }
    let grid = rho.grid();
    let dr = grid.dr();
    let mf = mass_function(rho);
    let pressure: Vec<f64> = rho.values().iter().map(|v| v.powf(m - 1.0)).collect();
    let c = m / (m - 1.0);
    let (mut r, mut v) = (Vec::new(), Vec::new());
    for i in 1..grid.len() - 1 {
        if rho.values()[i - 1] > 0.0 && rho.values()[i + 1] > 0.0 {
            let ri = grid.node(i);
            r.push(ri);
            v.push(c * (pressure[i + 1] - pressure[i - 1]) / (2.0 * dr) + mf.values()[i] / (2.0 * PI * ri));
        }
    }
    Ok(VelocityField { r, v })
}

/// `a^2 rho_0(a r)` sampled on `grid`.
pub fn scaled_steady_density(base: &SteadyState, a: f64, grid: RadialGrid) -> Result<RadialDensity> {
    if base.radius / a >= grid.r_max() {
        return Err(Error::SupportExceedsDomain { r_max: grid.r_max() });
    }
    let values = grid.nodes().map(|r| a * a * base.density_at(a * r)).collect();
    RadialDensity::from_values(grid, values)?.with_support_radius(base.radius / a)
}

/// Summary written next to the checkpoint profiles of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub m: f64,
    #[serde(rename = "M")]
    pub mass: f64,
    pub init: String,
    pub dt_policy: String,
    pub nodes: usize,
    pub r_max: f64,
    pub checkpoints: Vec<f64>,
    pub sup_distances: Vec<f64>,
    pub lambda_fit: Option<f64>,
    pub r_squared: Option<f64>,
    pub lambda_theory: f64,
    pub comparison: Option<ComparisonReport>,
}

pub fn dt_policy_description(controller: &Controller) -> String {
    format!(
        "heun; dt = {} * min({} dr^2 / (m max rho^(m-1)), {} dr / max(M / (2 pi r)))",
        controller.safety, DIFFUSION_CFL, TRANSPORT_CFL
    )
}

/// Writes `r,M,rho` for a checkpoint.
pub fn write_checkpoint_csv(state: &EvolutionState, w: impl std::io::Write) -> Result<()> {
    let rho = mass_to_density(state)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["r", "M", "rho"])?;
    for (i, r) in state.grid.nodes().enumerate() {
        out.write_record([format!("{r:e}"), format!("{:e}", state.mass[i]), format!("{:e}", rho.values()[i])])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::steady::solve_steady;
    use std::sync::OnceLock;

    fn base() -> &'static SteadyState {
        static BASE: OnceLock<SteadyState> = OnceLock::new();
        BASE.get_or_init(|| solve_steady(2.0, 1.0, 1e-10).unwrap())
    }

    #[test]
    fn disk_round_trip_is_exact() {
        let grid = RadialGrid::new(512, 0.01).unwrap();
        let disk = RadialDensity::uniform_disk(grid, 0.7, 2.0).unwrap();
        let state = density_to_mass(&disk, 2.0).unwrap();
        let back = mass_to_density(&state).unwrap();
        for (a, b) in back.values().iter().zip(disk.values()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!((back.support_radius() - disk.support_radius()).abs() < 1e-12);
    }

    #[test]
    fn steady_round_trip() {
        let s = base();
        let grid = evolution_grid(s, 1201).unwrap();
        let state = scaled_steady_state(s, 1.0, grid).unwrap();
        let rho = mass_to_density(&state).unwrap();
        let max = s.theta_c;
        for (i, r) in grid.nodes().enumerate() {
            assert!((rho.values()[i] - s.density_at(r)).abs() < 1e-3 * max, "r={r}");
        }
    }

    #[test]
    fn zero_density_round_trip() {
        let grid = RadialGrid::new(64, 0.1).unwrap();
        let zero = RadialDensity::from_values(grid, vec![0.0; 64]).unwrap();
        let state = density_to_mass(&zero, 2.0).unwrap();
        assert!(state.mass.iter().all(|m| *m == 0.0));
        let back = mass_to_density(&state).unwrap();
        assert!(back.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn corrupted_state_is_rejected() {
        let grid = RadialGrid::new(64, 0.1).unwrap();
        let mut mass: Vec<f64> = grid.nodes().map(|r| (r * r).min(1.0)).collect();
        mass[10] = 0.0;
        assert!(matches!(EvolutionState::from_mass(grid, mass, 2.0, 1.0), Err(Error::MonotonicityLoss { .. })));
    }

    #[test]
    fn steady_state_is_a_fixed_point_per_step() {
        let s = base();
        let grid = evolution_grid(s, 1201).unwrap();
        let state = scaled_steady_state(s, 1.0, grid).unwrap();
        let dt = state.stability_bound();
        let next = step(&state, dt, 1e-9).unwrap();
        let change = next.mass.iter().zip(&state.mass).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(change <= 1e-8 * s.mass, "{change}");
    }

    #[test]
    fn stability_bound_is_enforced() {
        let s = base();
        let state = scaled_steady_state(s, 1.0, evolution_grid(s, 301).unwrap()).unwrap();
        let bound = state.stability_bound();
        assert!(matches!(step(&state, 2.0 * bound, 1e-9), Err(Error::StabilityViolation { .. })));
    }

    #[test]
    fn mass_is_conserved_and_flat_region_frozen() {
        let s = base();
        let grid = evolution_grid(s, 301).unwrap();
        let mut state = scaled_steady_state(s, 0.8, grid).unwrap();
        let far = grid.len() - 5;
        for _ in 0..1000 {
            let dt = 0.9 * state.stability_bound();
            state = step(&state, dt, 1e-9).unwrap();
            assert_eq!(state.mass[grid.len() - 1], s.mass);
        }
        assert!((state.mass[far] - s.mass).abs() < 1e-10);
    }

    #[test]
    fn fixed_point_over_unit_time_converges_under_refinement() {
        let s = base();
        let mut dists = Vec::new();
        for nodes in [301, 601, 1201] {
            let grid = evolution_grid(s, nodes).unwrap();
            let state = scaled_steady_state(s, 1.0, grid).unwrap();
            let run = evolve(&state, &Controller::uniform(1.0, 4), Some(&|r| s.mass_at(r))).unwrap();
            let worst = run.iter().map(|c| c.sup_distance.unwrap()).fold(0.0, f64::max);
            dists.push(worst);
        }
        assert!(dists[0] <= 1e-3 * s.mass, "{dists:?}");
        for w in dists.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.5, "{dists:?}");
        }
    }

    #[test]
    fn barrier_equilibrium_and_monotone_approach() {
        assert_eq!(barrier_ode(1.0, 1.0, 2.0, 10.0).unwrap(), 1.0);
        let ts: Vec<f64> = (0..200).map(|k| 0.05 * k as f64).collect();
        let ks = barrier_trajectory(0.8, 1.0, 2.0, &ts).unwrap();
        assert!(ks.windows(2).all(|w| w[1] >= w[0] && w[1] <= 1.0));
        let ks = barrier_trajectory(1.25, 1.0, 2.0, &ts).unwrap();
        assert!(ks.windows(2).all(|w| w[1] <= w[0] && w[1] >= 1.0));
        assert!(barrier_ode(0.0, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn barrier_asymptotic_rate() {
        let (c, m) = (1.0, 2.0);
        let ts: Vec<f64> = (0..400).map(|k| 0.025 * k as f64).collect();
        let ks = barrier_trajectory(0.8, c, m, &ts).unwrap();
        let pts: Vec<(f64, f64)> = ts
            .iter()
            .zip(&ks)
            .filter(|(_, k)| (1.0 - *k).abs() < 0.1 && (1.0 - *k).abs() > 1e-12)
            .map(|(t, k)| (*t, (1.0 - k).abs().ln()))
            .collect();
        let (slope, _) = linear_fit(&pts);
        let theory = 2.0 * c * (m - 1.0);
        assert!((-slope - theory).abs() <= 0.05 * theory, "{slope}");
    }

    #[test]
    fn barrier_at_unit_scale_is_the_steady_mass() {
        let s = base();
        let (sub, _) = Barrier::pair(s, 1.0).unwrap();
        let grid = evolution_grid(s, 301).unwrap();
        let mf = barrier_mass(&sub, 3.0, grid).unwrap();
        for (i, r) in grid.nodes().enumerate() {
            assert_eq!(mf.values()[i], s.mass_at(r));
        }
    }

    #[test]
    fn concentration_constants_of_bessel_state() {
        let s = base();
        let (c1, c2) = concentration_constants(s).unwrap();
        assert!((c1 - 1.0 / (2.0 * PI * s.radius * s.radius)).abs() < 1e-12);
        assert!((c1 - 0.01376).abs() < 1e-5, "{c1}");
        assert!(c1 <= c2);
    }

    #[test]
    fn concentration_constants_of_disk() {
        let grid = RadialGrid::new(400, 0.01).unwrap();
        let disk = RadialDensity::uniform_disk(grid, 0.6, 2.0).unwrap();
        let (c1, c2) = concentration_constants_of(&disk).unwrap();
        assert!((c1 - 0.3).abs() < 1e-9 && (c2 - 0.3).abs() < 1e-12);
        let ring = RadialDensity::from_fn(grid, |r| if r > 1.0 && r < 2.0 { 1.0 } else { 0.0 }).unwrap();
        assert!(concentration_constants_of(&ring).is_err());
    }

    #[test]
    fn velocity_vanishes_at_steady_state_and_is_inward_for_sub_barrier() {
        let s = base();
        let grid = evolution_grid(s, 2001).unwrap();
        let steady = scaled_steady_density(s, 1.0, grid).unwrap();
        let v = velocity_field(&steady, 2.0).unwrap();
        let scale = s.mass / (2.0 * PI * s.radius);
        assert!(v.v.iter().all(|x| x.abs() < 1e-4 * scale));
        let sub = scaled_steady_density(s, 0.8, grid).unwrap();
        let v = velocity_field(&sub, 2.0).unwrap();
        assert!(!v.v.is_empty());
        assert!(v.v.iter().all(|x| *x >= -1e-6 * scale), "{:?}", v.v.iter().cloned().fold(0.0, f64::min));
        // closed form (1 - a^2(m-1)) M_0(a r) / (2 pi r)
        for (r, x) in v.r.iter().zip(&v.v).step_by(37) {
            let expect = (1.0 - 0.64) * s.mass_at(0.8 * r) / (2.0 * PI * r);
            assert!((x - expect).abs() < 1e-3 * scale, "r={r}");
        }
    }

    #[test]
    fn ordering_holds_for_scaled_start() {
        let s = base();
        let grid = evolution_grid(s, 301).unwrap();
        let init = scaled_steady_state(s, 0.8, grid).unwrap();
        let run = evolve(&init, &Controller::uniform(20.0, 20), Some(&|r| s.mass_at(r))).unwrap();
        let (sub, sup) = Barrier::pair(s, 0.8).unwrap();
        let report = comparison_monitor(&run, &sub, &sup, 1e-4 * s.mass).unwrap();
        assert!(report.holds, "{report:?}");
        let d: Vec<f64> = run.iter().map(|c| c.sup_distance.unwrap()).collect();
        assert!(d.windows(2).all(|w| w[1] <= w[0]), "{d:?}");
    }

    #[test]
    fn unit_scale_barriers_coincide() {
        let s = base();
        let grid = evolution_grid(s, DEFAULT_EVOLUTION_NODES).unwrap();
        let init = scaled_steady_state(s, 1.0, grid).unwrap();
        let run = evolve(&init, &Controller::uniform(2.0, 4), None).unwrap();
        let (sub, sup) = Barrier::pair(s, 1.0).unwrap();
        let report = comparison_monitor(&run, &sub, &sup, 1e-4).unwrap();
        assert_eq!(report.worst_barriers, 0.0);
        assert!(report.holds);
    }

    #[test]
    fn linear_fit_recovers_slope() {
        let pts: Vec<(f64, f64)> = (0..20).map(|k| (k as f64, 3.0 - 0.5 * k as f64)).collect();
        let (slope, r2) = linear_fit(&pts);
        assert!((slope + 0.5).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
