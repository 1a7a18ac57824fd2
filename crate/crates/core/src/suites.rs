//! Verification suites with deterministic, seedable fixtures.
//!
//! Random cases draw from ChaCha20 keyed by the suite seed (little-endian in
//! the first eight key bytes, the rest zero) on stream `case_index`, so each
//! case is reproducible on its own. Reports list cases in case-id order.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mass_pde::{
    comparison_monitor, convergence_rate, evolution_grid, evolve, scaled_steady_state, Barrier, Controller,
    DEFAULT_EVOLUTION_NODES,
};
use crate::plane::{far_field_check, Density2D};
use crate::potential::{confinement_check, el_residual, free_energy, truncation_bound};
use crate::radial::{RadialDensity, RadialGrid};
use crate::rearrange::{log_hls_check, rearrange_2d, riesz_log_check};
use crate::steady::{solve_steady, SteadyState};

pub const SUITES: [&str; 6] = ["el", "rearrangement", "loghls", "confinement", "farfield", "comparison"];

/// Relative tolerance of the Riesz and equimeasurability checks.
pub const REARRANGEMENT_TOL: f64 = 1e-6;
pub const RANDOM_DENSITIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

impl CaseResult {
    /// Case asserting `lhs <= rhs`.
    fn at_most(case_id: String, lhs: f64, rhs: f64) -> Self {
        Self { case_id, lhs, rhs, margin: rhs - lhs, holds: lhs <= rhs }
    }

    /// Case asserting `lhs >= rhs`.
    fn at_least(case_id: String, lhs: f64, rhs: f64) -> Self {
        Self { case_id, lhs, rhs, margin: lhs - rhs, holds: lhs >= rhs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    fn new(suite: &str, seed: u64, cases: Vec<CaseResult>) -> Self {
        let passed = cases.iter().all(|c| c.holds);
        Self { suite: suite.to_string(), seed, passed, cases }
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| !c.holds)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn run_suite(name: &str, seed: u64) -> Result<SuiteReport> {
    let cases = match name {
        "el" => el_suite()?,
        "rearrangement" => rearrangement_suite(seed)?,
        "loghls" => loghls_suite()?,
        "confinement" => confinement_suite()?,
        "farfield" => farfield_suite()?,
        "comparison" => comparison_suite()?,
        other => return Err(Error::InvalidParameter(format!("unknown suite '{other}', expected one of {SUITES:?}"))),
    };
    Ok(SuiteReport::new(name, seed, cases))
}

/// Generator for case `index` of a suite seeded with `seed`.
pub fn case_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

pub const EL_EXPONENTS: [f64; 3] = [1.5, 2.0, 3.0];
pub const EL_MASSES: [f64; 2] = [1.0, 10.0];

fn tag(x: f64) -> String {
    format!("{x}")
}

fn el_suite() -> Result<Vec<CaseResult>> {
    let grid: Vec<(f64, f64)> =
        EL_EXPONENTS.iter().flat_map(|&m| EL_MASSES.iter().map(move |&mass| (m, mass))).collect();
    let per_state: Vec<Vec<CaseResult>> = grid
        .par_iter()
        .map(|&(m, mass)| -> Result<Vec<CaseResult>> {
            let s = solve_steady(m, mass, 1e-10)?;
            let res = el_residual(&s)?;
            let e = free_energy(&s.density(), m)?;
            let id = format!("m{}-M{}", tag(m), tag(mass));
            Ok(vec![
                CaseResult::at_most(format!("{id}-inner"), res.inner, 1e-4 * m / (m - 1.0) * s.theta_c),
                CaseResult::at_most(format!("{id}-outer"), res.outer, 0.0),
                CaseResult::at_most(
                    format!("{id}-multiplier"),
                    (e.d_formula - e.d_profile).abs(),
                    1e-3 * e.d_formula.abs(),
                ),
            ])
        })
        .collect::<Result<_>>()?;
    Ok(per_state.into_iter().flatten().collect())
}

/// Random nonnegative density: a few overlapping bumps, sometimes with
/// scattered cells, inside a disk of radius `0.95` on a `40 x 40` grid.
pub fn random_density(seed: u64, index: u64) -> Density2D {
    let mut rng = case_rng(seed, index);
    let bumps: Vec<(f64, f64, f64, f64, i32)> = (0..rng.gen_range(1..=4))
        .map(|_| {
            let radius = rng.gen_range(0.0..0.5);
            let angle = rng.gen_range(0.0..2.0 * PI);
            let width = rng.gen_range(0.15..0.45);
            let amp = rng.gen_range(0.2..2.0);
            let power = rng.gen_range(1..=2);
            (radius * angle.cos(), radius * angle.sin(), width, amp, power)
        })
        .collect();
    let noisy = rng.gen_bool(0.3);
    let n = 40;
    let h = 0.06;
    let c = (n as f64 - 1.0) / 2.0;
    let values = (0..n * n)
        .map(|k| {
            let x = (k % n) as f64 - c;
            let y = (k / n) as f64 - c;
            let (x, y) = (x * h, y * h);
            let mut v: f64 = bumps
                .iter()
                .map(|&(cx, cy, w, a, q)| a * (1.0 - ((x - cx).powi(2) + (y - cy).powi(2)) / (w * w)).max(0.0).powi(q))
                .sum();
            if noisy && x.hypot(y) < 0.9 && rng.gen_bool(0.2) {
                v += rng.gen_range(0.0..0.5);
            }
            v
        })
        .collect();
    Density2D::from_values(n, h, values).expect("random fixture stays inside the grid")
}

fn rearrangement_suite(seed: u64) -> Result<Vec<CaseResult>> {
    let m = 2.0;
    let per_case: Vec<Vec<CaseResult>> = (0..RANDOM_DENSITIES as u64)
        .into_par_iter()
        .map(|k| -> Result<Vec<CaseResult>> {
            let rho = random_density(seed, k);
            let re = rearrange_2d(&rho);
            let riesz = riesz_log_check(&rho, REARRANGEMENT_TOL);
            let scale = riesz.w_before.abs().max(riesz.w_after.abs());
            let mut out = vec![CaseResult {
                case_id: format!("{k:03}-riesz"),
                lhs: riesz.w_before,
                rhs: riesz.w_after,
                margin: riesz.margin,
                holds: riesz.margin >= -REARRANGEMENT_TOL * scale,
            }];
            for (label, p) in [("l1", 1.0), ("lm", m), ("l2m", 2.0 * m)] {
                let a = rho.lp_norm(p)?;
                let b = re.lp_norm(p)?;
                let band = REARRANGEMENT_TOL * a;
                out.push(CaseResult {
                    case_id: format!("{k:03}-{label}"),
                    lhs: a,
                    rhs: b,
                    margin: band - (a - b).abs(),
                    holds: (a - b).abs() <= band,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_case.into_iter().flatten().collect())
}

/// Truncated `M l^2 / (pi (l^2 + r^2)^2)` on `[0, 1.01 r_cut]`.
pub fn extremal_density(mass: f64, lambda: f64, r_cut: f64, nodes: usize) -> Result<RadialDensity> {
    let grid = RadialGrid::spanning(1.01 * r_cut, nodes)?;
    let l2 = lambda * lambda;
    RadialDensity::from_fn(grid, |r| if r < r_cut { mass * l2 / (PI * (l2 + r * r).powi(2)) } else { 0.0 })
}

fn loghls_suite() -> Result<Vec<CaseResult>> {
    let mut fixtures: Vec<(String, RadialDensity)> = Vec::new();
    for (r_cut, nodes) in [(50.0, 10001), (200.0, 40001), (800.0, 160001)] {
        fixtures.push((format!("extremal-R{r_cut}"), extremal_density(1.0, 1.0, r_cut, nodes)?));
    }
    fixtures.push(("extremal-M3-lambda0.5".into(), extremal_density(3.0, 0.5, 400.0, 80001)?));
    let g = RadialGrid::spanning(3.0, 3001)?;
    let disk = RadialDensity::uniform_disk(g, 1.0 / PI, 1.0)?;
    fixtures.push(("disk".into(), disk.clone()));
    fixtures.push(("disk-doubled".into(), disk.scaled(2.0)?));
    fixtures.push(("disk-small".into(), RadialDensity::uniform_disk(g, 5.0, 0.3)?));
    let wide = RadialGrid::spanning(12.0, 6001)?;
    fixtures
        .push(("gaussian".into(), RadialDensity::from_fn(wide, |r| if r < 10.0 { (-r * r).exp() / PI } else { 0.0 })?));
    for m in [2.0, 3.0] {
        fixtures.push((format!("steady-m{}", tag(m)), solve_steady(m, 1.0, 1e-10)?.density()));
    }
    fixtures
        .par_iter()
        .map(|(id, rho)| {
            let c = log_hls_check(rho, 1e-9)?;
            Ok(CaseResult { case_id: id.clone(), lhs: c.lhs, rhs: c.rhs, margin: c.margin, holds: c.holds })
        })
        .collect()
}

/// Radial nonincreasing fixtures shared by the confinement checks.
pub fn confinement_fixtures() -> Result<Vec<(String, RadialDensity)>> {
    let mut out = Vec::new();
    let big = RadialGrid::spanning(40.0, 4001)?;
    out.push(("tail4".into(), RadialDensity::from_fn(big, |r| if r < 30.0 { 1.0 / (1.0 + r).powi(4) } else { 0.0 })?));
    out.push(("tail3".into(), RadialDensity::from_fn(big, |r| if r < 30.0 { 0.5 / (1.0 + r).powi(3) } else { 0.0 })?));
    let mid = RadialGrid::spanning(12.0, 2401)?;
    out.push(("gaussian".into(), RadialDensity::from_fn(mid, |r| if r < 8.0 { (-r * r / 4.0).exp() } else { 0.0 })?));
    out.push(("disk-R3".into(), RadialDensity::uniform_disk(mid, 0.2, 3.0)?));
    out.push(("disk-R0.5".into(), RadialDensity::uniform_disk(mid, 2.0, 0.5)?));
    out.push(("steady-m2".into(), solve_steady(2.0, 1.0, 1e-10)?.density()));
    Ok(out)
}

pub const CONFINEMENT_RADII: [f64; 3] = [1.0, 2.0, 4.0];

fn confinement_suite() -> Result<Vec<CaseResult>> {
    let fixtures = confinement_fixtures()?;
    let jobs: Vec<(usize, f64)> =
        (0..fixtures.len()).flat_map(|f| CONFINEMENT_RADII.iter().map(move |&r| (f, r))).collect();
    let per_job: Vec<Vec<CaseResult>> = jobs
        .par_iter()
        .map(|&(f, radius)| -> Result<Vec<CaseResult>> {
            let (id, rho) = &fixtures[f];
            let c = confinement_check(rho, radius, 0.0)?;
            let b = truncation_bound(rho, radius, 2.0, 1e-6)?;
            Ok(vec![
                CaseResult::at_least(format!("{id}-R{}-confinement", tag(radius)), c.lhs, c.rhs),
                CaseResult {
                    case_id: format!("{id}-R{}-truncation", tag(radius)),
                    lhs: b.truncated,
                    rhs: b.full + b.near_abs,
                    margin: b.full + b.near_abs - b.truncated,
                    holds: b.holds,
                },
            ])
        })
        .collect::<Result<_>>()?;
    Ok(per_job.into_iter().flatten().collect())
}

/// Non-radial source with zero centre of mass: a heavy bump balanced by a
/// light one twice as far out on the other side, plus an off-axis pair.
pub fn farfield_fixture(n: usize) -> Result<Density2D> {
    let half = 1.3;
    let bump = |cx: f64, cy: f64, w: f64, a: f64| {
        move |x: f64, y: f64| a * (1.0 - ((x - cx).powi(2) + (y - cy).powi(2)) / (w * w)).max(0.0)
    };
    let heavy = bump(-0.3, 0.0, 0.3, 2.0);
    let light = bump(0.6, 0.0, 0.3, 1.0);
    let up = bump(0.0, 0.5, 0.2, 0.7);
    let down = bump(0.0, -0.5, 0.2, 0.7);
    Density2D::from_fn(n, 2.0 * half / n as f64, |x, y| heavy(x, y) + light(x, y) + up(x, y) + down(x, y))
}

pub const FARFIELD_LEVELS: [usize; 3] = [32, 64, 128];
pub const FARFIELD_SUPPORT: f64 = 1.0;

fn farfield_suite() -> Result<Vec<CaseResult>> {
    let estimates: Vec<_> = FARFIELD_LEVELS
        .par_iter()
        .map(|&n| far_field_check(&farfield_fixture(n)?, FARFIELD_SUPPORT))
        .collect::<Result<_>>()?;
    let lo = estimates.iter().map(|e| e.c1).fold(f64::INFINITY, f64::min);
    let lo2 = estimates.iter().map(|e| e.c2).fold(f64::INFINITY, f64::min);
    let mut cases = Vec::new();
    for (n, e) in FARFIELD_LEVELS.iter().zip(&estimates) {
        cases.push(CaseResult::at_most(format!("n{n:03}-c1"), e.c1, 2.0 * lo));
        cases.push(CaseResult::at_most(format!("n{n:03}-c2"), e.c2, 2.0 * lo2));
    }
    Ok(cases)
}

/// Scaled start used by the comparison suite.
pub const COMPARISON_SCALE: f64 = 0.8;
pub const COMPARISON_HORIZON: f64 = 150.0;
pub const COMPARISON_CHECKPOINTS: usize = 60;

/// Full comparison and convergence run for `a^2 rho_0(a r)`.
pub struct ScaledRun {
    pub base: SteadyState,
    pub history: Vec<crate::mass_pde::Checkpoint>,
    pub report: crate::mass_pde::ComparisonReport,
    pub fit: crate::mass_pde::RateFit,
    pub floor: f64,
}

/// Noise floor of a grid: ten times the drift of the steady state itself over unit time.
pub fn noise_floor(base: &SteadyState, nodes: usize) -> Result<f64> {
    let grid = evolution_grid(base, nodes)?;
    let init = scaled_steady_state(base, 1.0, grid)?;
    let run = evolve(&init, &Controller::uniform(1.0, 4), Some(&|r| base.mass_at(r)))?;
    let drift = run.iter().filter_map(|c| c.sup_distance).fold(0.0, f64::max);
    Ok(10.0 * drift)
}

pub fn scaled_run(m: f64, mass: f64, a: f64, horizon: f64, checkpoints: usize, nodes: usize) -> Result<ScaledRun> {
    let base = solve_steady(m, mass, 1e-10)?;
    let grid = evolution_grid(&base, nodes)?;
    let init = scaled_steady_state(&base, a, grid)?;
    let history = evolve(&init, &Controller::uniform(horizon, checkpoints), Some(&|r| base.mass_at(r)))?;
    let (sub, sup) = Barrier::pair(&base, a)?;
    let report = comparison_monitor(&history, &sub, &sup, 1e-4 * mass)?;
    let floor = noise_floor(&base, nodes)?;
    let fit = convergence_rate(&history, &base, 0.2 * horizon, floor)?;
    Ok(ScaledRun { base, history, report, fit, floor })
}

fn comparison_suite() -> Result<Vec<CaseResult>> {
    let run =
        scaled_run(2.0, 1.0, COMPARISON_SCALE, COMPARISON_HORIZON, COMPARISON_CHECKPOINTS, DEFAULT_EVOLUTION_NODES)?;
    let tol = run.report.tolerance;
    Ok(vec![
        CaseResult::at_least("lower-barrier".into(), run.report.worst_lower, -tol),
        CaseResult::at_least("upper-barrier".into(), run.report.worst_upper, -tol),
        CaseResult::at_least("barrier-order".into(), run.report.worst_barriers, -tol),
        CaseResult::at_least("rate-r-squared".into(), run.fit.r_squared, 0.95),
        CaseResult::at_least("rate-vs-theory".into(), run.fit.lambda_fit, 0.5 * run.fit.lambda_theory),
    ])
}
