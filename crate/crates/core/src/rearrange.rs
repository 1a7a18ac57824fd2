//! Symmetric decreasing rearrangement, the mass-concentration order and the
//! inequality checks that rely on them.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Density2D;
use crate::potential::log_double_integral;
use crate::radial::{interp_linear, is_radially_nonincreasing, mass_function, MassFunction, RadialDensity, RadialGrid};

/// Sub-cells per grid interval when sampling the distribution of a radial profile.
const SUBCELLS: usize = 16;

/// Sorts `(value, area)` pieces by value descending, ties by original position.
fn sort_levels(pieces: &mut [(f64, f64, usize)]) {
    pieces.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.2.cmp(&b.2)));
}

/// Rearrangement of a radial profile on its own grid.
///
/// Nonincreasing inputs come back unchanged. Otherwise each interval is split
/// into sub-annuli valued by linear interpolation, the pieces are sorted in
/// decreasing order and laid out from the origin by area, and the result is
/// interpolated linearly in the area variable back onto the grid.
pub fn rearrange_radial(rho: &RadialDensity) -> RadialDensity {
    if is_radially_nonincreasing(rho, 0.0) {
        return rho.clone();
    }
    let grid = *rho.grid();
    let dr = grid.dr();
    let last = rho.support_index();
    let mut pieces = Vec::with_capacity(last * SUBCELLS);
    for i in 0..last {
        for s in 0..SUBCELLS {
            let a = grid.node(i) + dr * s as f64 / SUBCELLS as f64;
            let b = a + dr / SUBCELLS as f64;
            let v = interp_linear(&grid, rho.values(), 0.5 * (a + b));
            if v > 0.0 {
                pieces.push((v, PI * (b * b - a * a), i * SUBCELLS + s));
            }
        }
    }
    sort_levels(&mut pieces);
    let levels = AreaProfile::from_sorted(pieces.iter().map(|p| (p.0, p.1)));
    let values: Vec<f64> = grid.nodes().map(|r| levels.value_at_area(PI * r * r)).collect();
    let support = levels.total_area().sqrt() / PI.sqrt();
    let support = support.min(grid.r_max());
    RadialDensity::from_values(grid, values)
        .and_then(|d| {
            let edge = d.support_radius().max(support).min(grid.r_max());
            d.with_support_radius(edge)
        })
        .expect("rearranged values are nonnegative and finite")
}

/// Decreasing values laid out by cumulative area, interpolated linearly
/// between piece midpoints.
struct AreaProfile {
    mid_area: Vec<f64>,
    value: Vec<f64>,
    total: f64,
}

impl AreaProfile {
    fn from_sorted(pieces: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut mid_area, mut value) = (Vec::new(), Vec::new());
        let mut acc = 0.0;
        for (v, a) in pieces {
            mid_area.push(acc + 0.5 * a);
            value.push(v);
            acc += a;
        }
        Self { mid_area, value, total: acc }
    }

    fn total_area(&self) -> f64 {
        self.total
    }

    fn value_at_area(&self, a: f64) -> f64 {
        if self.value.is_empty() || a >= self.total {
            return 0.0;
        }
        let k = self.mid_area.partition_point(|&m| m <= a);
        if k == 0 {
            return self.value[0];
        }
        if k == self.value.len() {
            return self.value[k - 1];
        }
        let t = (a - self.mid_area[k - 1]) / (self.mid_area[k] - self.mid_area[k - 1]);
        self.value[k - 1] + t * (self.value[k] - self.value[k - 1])
    }
}

/// Radial rearrangement of a 2D density: the `k`-th largest cell value
/// occupies the annulus `(k-1) h^2 <= pi r^2 < k h^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialRearrangement {
    levels: Vec<f64>,
    cell_area: f64,
}

pub fn rearrange_2d(rho: &Density2D) -> RadialRearrangement {
    let mut pieces: Vec<(f64, f64, usize)> =
        rho.values().iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(k, v)| (*v, rho.cell_area(), k)).collect();
    sort_levels(&mut pieces);
    RadialRearrangement { levels: pieces.into_iter().map(|p| p.0).collect(), cell_area: rho.cell_area() }
}

impl RadialRearrangement {
    /// Sorted positive values, largest first.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_area
    }

    fn ring_radius(&self, k: usize) -> f64 {
        (k as f64 * self.cell_area / PI).sqrt()
    }

    pub fn support_radius(&self) -> f64 {
        self.ring_radius(self.levels.len())
    }

    /// Value at radius `r`.
    pub fn value_at(&self, r: f64) -> f64 {
        let k = (PI * r * r / self.cell_area).floor() as usize;
        self.levels.get(k).copied().unwrap_or(0.0)
    }

    pub fn mass(&self) -> f64 {
        self.power_sum(1.0)
    }

    pub fn power_sum(&self, p: f64) -> f64 {
        self.levels.iter().map(|v| v.powf(p)).sum::<f64>() * self.cell_area
    }

    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(Error::InvalidParameter(format!("norm exponent must be >= 1, got {p}")));
        }
        Ok(self.power_sum(p).powf(1.0 / p))
    }

    /// Mass inside the ball of radius `r`.
    pub fn mass_within(&self, r: f64) -> f64 {
        let a = PI * r * r;
        let mut acc = 0.0;
        for (k, v) in self.levels.iter().enumerate() {
            let lo = k as f64 * self.cell_area;
            if a <= lo {
                break;
            }
            acc += v * (a - lo).min(self.cell_area);
        }
        acc
    }

    /// `int int log|x - y| rho# rho#`, exact for the annular step profile.
    ///
    /// With the mass function `M(r)`, `int int log|x-y| rho rho = M^2 log R - int_0^R M(r)^2 / r dr`,
    /// and on each annulus `M` is linear in `s = r^2`.
    pub fn log_double_integral(&self) -> f64 {
        if self.levels.is_empty() {
            return 0.0;
        }
        let mut mass = 0.0;
        let mut integral = 0.0;
        for (k, v) in self.levels.iter().enumerate() {
            let s0 = self.ring_radius(k).powi(2);
            let s1 = self.ring_radius(k + 1).powi(2);
            // M(s) = alpha + beta s on [s0, s1]
            let beta = v * PI;
            let alpha = mass - beta * s0;
            // int M^2 / (2 s) ds
            let anti = |s: f64| {
                let log_term = if alpha == 0.0 { 0.0 } else { alpha * alpha * s.ln() };
                0.5 * (log_term + 2.0 * alpha * beta * s + 0.5 * beta * beta * s * s)
            };
            integral += anti(s1) - anti(s0);
            mass += v * self.cell_area;
        }
        mass * mass * self.support_radius().ln() - integral
    }

    /// Samples the profile on `grid`; the support must fit inside it.
    pub fn to_density(&self, grid: RadialGrid) -> Result<RadialDensity> {
        let support = self.support_radius();
        if support >= grid.r_max() {
            return Err(Error::SupportExceedsDomain { r_max: grid.r_max() });
        }
        let values = grid.nodes().map(|r| self.value_at(r)).collect();
        let d = RadialDensity::from_values(grid, values)?;
        let edge = d.support_radius().max(support).min(grid.r_max());
        d.with_support_radius(edge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    LessConcentrated,
    MoreConcentrated,
    Equal,
    Crossing,
}

/// Outcome of comparing two mass functions pointwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationOrder {
    pub verdict: Verdict,
    /// `M1 - M2` at the radius where it is largest in magnitude.
    pub max_gap: f64,
    pub crossing_radii: Vec<f64>,
}

/// Compares `M1(r)` against `M2(r)` on the union of both grids.
/// `tol` is relative to the larger total mass.
pub fn compare_concentration(rho1: &RadialDensity, rho2: &RadialDensity, tol: f64) -> ConcentrationOrder {
    compare_mass_functions(&mass_function(rho1), &mass_function(rho2), tol)
}

pub fn compare_mass_functions(m1: &MassFunction, m2: &MassFunction, tol: f64) -> ConcentrationOrder {
    let band = tol * m1.total().abs().max(m2.total().abs());
    let mut radii: Vec<f64> = m1.grid().nodes().chain(m2.grid().nodes()).collect();
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    let mut max_gap: f64 = 0.0;
    let (mut above, mut below) = (false, false);
    let mut crossing_radii = Vec::new();
    let mut last_sign = 0i8;
    for r in radii {
        let gap = m1.at(r) - m2.at(r);
        if gap.abs() > max_gap.abs() {
            max_gap = gap;
        }
        let sign = if gap > band {
            1
        } else if gap < -band {
            -1
        } else {
            0
        };
        above |= sign > 0;
        below |= sign < 0;
        if sign != 0 {
            if last_sign != 0 && sign != last_sign {
                crossing_radii.push(r);
            }
            last_sign = sign;
        }
    }
    let verdict = match (above, below) {
        (false, false) => Verdict::Equal,
        (false, true) => Verdict::LessConcentrated,
        (true, false) => Verdict::MoreConcentrated,
        (true, true) => Verdict::Crossing,
    };
    ConcentrationOrder { verdict, max_gap, crossing_radii }
}

/// Interaction energies of a 2D density and of its rearrangement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RieszCheck {
    /// `W[rho]` by direct summation on the grid.
    pub w_before: f64,
    /// `W[rho#]` through the radial mass function.
    pub w_after: f64,
    pub margin: f64,
    pub holds: bool,
}

/// `W[rho] >= W[rho#]`, where `W = (1/4pi) int int log|x-y| rho rho`.
pub fn riesz_log_check(rho: &Density2D, tol: f64) -> RieszCheck {
    let w_before = rho.log_double_sum() / (4.0 * PI);
    let w_after = rearrange_2d(rho).log_double_integral() / (4.0 * PI);
    let margin = w_before - w_after;
    let scale = w_before.abs().max(w_after.abs());
    RieszCheck { w_before, w_after, margin, holds: margin >= -tol * scale }
}

/// Sharp constant of the logarithmic HLS inequality for mass `M`.
pub fn log_hls_constant(mass: f64) -> f64 {
    mass * (1.0 + PI.ln() - mass.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogHls {
    /// `int rho log rho`.
    pub lhs: f64,
    /// `-(2/M) int int log|x-y| rho rho - C(M)`.
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

pub fn log_hls_check(rho: &RadialDensity, tol: f64) -> Result<LogHls> {
    let mass = rho.quadrature_mass();
    if !(mass > 0.0) {
        return Err(Error::InvalidDensity("log-HLS needs a positive mass".into()));
    }
    let lhs = rho.integrate(|_, v| if v > 0.0 { v * v.ln() } else { 0.0 });
    let rhs = -2.0 / mass * log_double_integral(rho)? - log_hls_constant(mass);
    let margin = lhs - rhs;
    let scale = lhs.abs().max(rhs.abs()).max(1.0);
    Ok(LogHls { lhs, rhs, margin, holds: margin >= -tol * scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::entropy;
    use crate::radial::lp_norm;
    use proptest::prelude::*;

    fn grid(r_max: f64, n: usize) -> RadialGrid {
        RadialGrid::spanning(r_max, n).unwrap()
    }

    #[test]
    fn decreasing_input_is_returned_unchanged() {
        let rho = RadialDensity::from_fn(grid(3.0, 301), |r| (4.0 - r * r).max(0.0)).unwrap();
        let once = rearrange_radial(&rho);
        assert_eq!(once, rho);
        assert_eq!(rearrange_radial(&once), once);
    }

    #[test]
    fn rearrangement_is_idempotent() {
        let rho = RadialDensity::from_fn(grid(3.0, 601), |r| if r < 2.0 { r * (2.0 - r) } else { 0.0 }).unwrap();
        let once = rearrange_radial(&rho);
        assert!(is_radially_nonincreasing(&once, 0.0));
        assert_eq!(rearrange_radial(&once), once);
    }

    #[test]
    fn increasing_ramp_reverses() {
        // rho = r on B_R rearranges to sqrt(R^2 - r^2)
        let radius = 2.0;
        let g = grid(4.0, 4001);
        let ramp = RadialDensity::from_fn(g, |r| if r <= radius { r } else { 0.0 }).unwrap();
        let ramp = ramp.with_support_radius(radius).unwrap();
        let re = rearrange_radial(&ramp);
        for i in (0..1900).step_by(50) {
            let r = g.node(i);
            let expect = (radius * radius - r * r).sqrt();
            assert!((re.values()[i] - expect).abs() < 1e-3, "r={r}: {} vs {expect}", re.values()[i]);
        }
        for p in [1.0, 2.0, 4.0] {
            let a = lp_norm(&ramp, p).unwrap();
            let b = lp_norm(&re, p).unwrap();
            assert!((a - b).abs() < 1e-4 * a, "p={p}: {a} vs {b}");
        }
        let m = 2.0;
        assert!((entropy(&ramp, m).unwrap() - entropy(&re, m).unwrap()).abs() < 1e-4 * entropy(&ramp, m).unwrap());
    }

    #[test]
    fn annulus_moves_to_disk_of_same_area() {
        let g = grid(3.0, 3001);
        let ring = RadialDensity::from_fn(g, |r| if r > 1.0 && r < 2f64.sqrt() { 1.0 } else { 0.0 }).unwrap();
        let re = rearrange_radial(&ring);
        for i in 0..g.len() {
            let r = g.node(i);
            if r < 0.99 {
                assert!((re.values()[i] - 1.0).abs() < 1e-12, "r={r}");
            } else if r > 1.01 {
                assert_eq!(re.values()[i], 0.0, "r={r}");
            }
        }
    }

    fn disk_2d(n: usize, half: f64, pred: impl Fn(f64, f64) -> bool, c: f64) -> Density2D {
        Density2D::from_fn(n, 2.0 * half / n as f64, |x, y| if pred(x, y) { c } else { 0.0 }).unwrap()
    }

    #[test]
    fn two_disks_become_one() {
        let c = 1.5;
        let d = disk_2d(64, 2.0, |x, y| (x - 0.9).hypot(y) < 0.5 || (x + 0.9).hypot(y) < 0.5, c);
        let cells = d.values().iter().filter(|v| **v > 0.0).count();
        let re = rearrange_2d(&d);
        assert!(re.levels().iter().all(|v| *v == c));
        let area = cells as f64 * d.cell_area();
        assert!((PI * re.support_radius().powi(2) - area).abs() < 1e-12 * area);
        assert_eq!(re.value_at(0.0), c);
        assert_eq!(re.value_at(re.support_radius() * 1.0001), 0.0);
    }

    #[test]
    fn checkerboard_collapses_to_half_area_disk() {
        let n = 40;
        let h = 0.05;
        let values = (0..n * n)
            .map(|k| {
                let (i, j) = (k % n, k / n);
                let inner = i > 0 && j > 0 && i < n - 1 && j < n - 1;
                if inner && (i + j) % 2 == 0 {
                    2.0
                } else {
                    0.0
                }
            })
            .collect();
        let d = Density2D::from_values(n, h, values).unwrap();
        let re = rearrange_2d(&d);
        let interior = ((n - 2) * (n - 2)) as f64 * h * h;
        assert!((PI * re.support_radius().powi(2) - interior / 2.0).abs() < 1e-12);
        assert!(re.levels().iter().all(|v| *v == 2.0));
    }

    #[test]
    fn radial_blob_matches_its_profile() {
        let f = |r: f64| (1.0 - r * r).max(0.0).powi(2);
        let d = Density2D::from_fn(128, 2.6 / 128.0, |x, y| f(x.hypot(y))).unwrap();
        let re = rearrange_2d(&d);
        for r in [0.1, 0.3, 0.5, 0.7, 0.9] {
            assert!((re.value_at(r) - f(r)).abs() < 2e-2, "r={r}");
        }
    }

    #[test]
    fn norms_and_mass_function_of_rearrangement() {
        let d = Density2D::from_fn(48, 0.05, |x, y| ((0.8 - x.hypot(y - 0.2)).max(0.0) * (1.0 + x)).max(0.0)).unwrap();
        let re = rearrange_2d(&d);
        for p in [1.0, 1.5, 3.0] {
            let a = d.lp_norm(p).unwrap();
            let b = re.lp_norm(p).unwrap();
            assert!((a - b).abs() <= 1e-12 * a);
        }
        assert!((re.mass_within(10.0) - d.mass()).abs() < 1e-12);
        assert_eq!(re.mass_within(0.0), 0.0);
    }

    #[test]
    fn exact_log_integral_of_disk() {
        // one level: uniform disk of area k h^2
        let re = RadialRearrangement { levels: vec![2.0; 400], cell_area: 0.01 };
        let radius = re.support_radius();
        let mass = re.mass();
        let exact = mass * mass * (radius.ln() - 0.25);
        assert!((re.log_double_integral() - exact).abs() < 1e-12 * exact.abs());
    }

    #[test]
    fn exact_log_integral_matches_radial_quadrature() {
        let re = RadialRearrangement { levels: (0..300).map(|k| 1.0 - k as f64 / 300.0).collect(), cell_area: 0.02 };
        let rho = re.to_density(grid(3.0, 30001)).unwrap();
        let q = log_double_integral(&rho).unwrap();
        let exact = re.log_double_integral();
        assert!((q - exact).abs() < 1e-4 * exact.abs(), "{q} vs {exact}");
    }

    #[test]
    fn riesz_bump_pair_strict() {
        let bump = |cx: f64| move |x: f64, y: f64| (0.1 - (x - cx).powi(2) - y * y).max(0.0);
        let d = Density2D::from_fn(64, 0.05, |x, y| bump(0.7)(x, y) + bump(-0.7)(x, y)).unwrap();
        let c = riesz_log_check(&d, 1e-6);
        assert!(c.holds && c.margin > 1e-3 * c.w_before.abs(), "{c:?}");
    }

    #[test]
    fn riesz_radial_input_near_equality() {
        let d = Density2D::from_fn(96, 0.03, |x, y| (1.0 - (x * x + y * y)).max(0.0)).unwrap();
        let c = riesz_log_check(&d, 1e-6);
        assert!(c.holds, "{c:?}");
        assert!(c.margin < 1e-2 * c.w_before.abs(), "{c:?}");
    }

    #[test]
    fn rearrangement_lowers_free_energy() {
        let bump = |cx: f64, cy: f64| move |x: f64, y: f64| (0.2 - (x - cx).powi(2) - (y - cy).powi(2)).max(0.0);
        let d = Density2D::from_fn(48, 0.06, |x, y| 2.0 * bump(0.4, 0.1)(x, y) + bump(-0.5, -0.3)(x, y)).unwrap();
        let re = rearrange_2d(&d);
        let m = 2.0;
        let h_before = d.power_sum(m) / (m - 1.0);
        let h_after = re.power_sum(m) / (m - 1.0);
        assert!((h_before - h_after).abs() < 1e-12 * h_before);
        let c = riesz_log_check(&d, 1e-6);
        assert!(h_after + c.w_after <= h_before + c.w_before);
    }

    #[test]
    fn concentration_verdicts() {
        let g = grid(4.0, 401);
        let rho = RadialDensity::from_fn(g, |r| (1.0 - r * r / 4.0).max(0.0)).unwrap();
        let double = rho.scaled(2.0).unwrap();
        assert_eq!(compare_concentration(&rho, &double, 1e-9).verdict, Verdict::LessConcentrated);
        assert_eq!(compare_concentration(&double, &rho, 1e-9).verdict, Verdict::MoreConcentrated);
        let same = compare_concentration(&rho, &rho, 1e-9);
        assert_eq!(same.verdict, Verdict::Equal);
        assert_eq!(same.max_gap, 0.0);
        // equal mass, different shapes must cross or be ordered, never both ways
        let flat =
            RadialDensity::from_fn(g, |r| if r < 2.0 * (0.5f64).sqrt() * 2f64.sqrt() { 0.5 } else { 0.0 }).unwrap();
        let order = compare_concentration(&flat, &rho, 1e-3);
        assert_ne!(order.verdict, Verdict::Equal);
    }

    #[test]
    fn crossing_is_reported() {
        let g = grid(4.0, 801);
        let narrow = RadialDensity::from_fn(g, |r| if r < 1.0 { 1.0 } else { 0.0 }).unwrap();
        let wide = RadialDensity::from_fn(g, |r| if r < 3.0 { 0.5 } else { 0.0 }).unwrap();
        let order = compare_concentration(&narrow, &wide, 1e-9);
        assert_eq!(order.verdict, Verdict::Crossing);
        assert_eq!(order.crossing_radii.len(), 1);
        let r = order.crossing_radii[0];
        assert!(r > 1.0 && r < 3.0);
    }

    #[test]
    fn log_hls_sharp_constant_on_extremal_family() {
        let mut gaps = Vec::new();
        for (r_max, n) in [(50.0, 10001), (200.0, 40001), (800.0, 160001)] {
            let g = grid(r_max * 1.01, n);
            let rho = RadialDensity::from_fn(g, |r| if r < r_max { 1.0 / (PI * (1.0 + r * r).powi(2)) } else { 0.0 })
                .unwrap();
            let c = log_hls_check(&rho, 1e-9).unwrap();
            assert!(c.holds, "{c:?}");
            gaps.push(c.margin / c.lhs.abs());
        }
        assert!(gaps[2] < gaps[1] && gaps[1] < gaps[0], "{gaps:?}");
        assert!(gaps[2] <= 1e-2, "{gaps:?}");
    }

    #[test]
    fn log_hls_disk_and_doubled_mass() {
        let g = grid(3.0, 3001);
        let disk = RadialDensity::uniform_disk(g, 1.0 / PI, 1.0).unwrap();
        let c = log_hls_check(&disk, 1e-9).unwrap();
        assert!(c.holds && c.margin > 0.0);
        let c2 = log_hls_check(&disk.scaled(2.0).unwrap(), 1e-9).unwrap();
        assert!(c2.holds && c2.margin > 0.0);
        let zero = RadialDensity::from_values(g, vec![0.0; g.len()]).unwrap();
        assert!(log_hls_check(&zero, 1e-9).is_err());
    }

    proptest! {
        #[test]
        fn rearranged_profiles_are_nonincreasing(amps in proptest::collection::vec(0.0f64..3.0, 5)) {
            let g = grid(4.0, 401);
            let rho = RadialDensity::from_fn(g, |r| {
                if r >= 3.0 { return 0.0; }
                amps.iter().enumerate().map(|(k, a)| a * (1.0 + (k as f64 * r).cos())).sum::<f64>()
            }).unwrap();
            let re = rearrange_radial(&rho);
            prop_assert!(is_radially_nonincreasing(&re, 0.0));
            let a = rho.quadrature_mass();
            let b = re.quadrature_mass();
            prop_assert!((a - b).abs() <= 1e-2 * a.max(1e-12));
        }
    }
}
