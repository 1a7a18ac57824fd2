//! Uniform radial grids, radial quadrature, mass functions and norms.
//!
//! Every radial quantity in the crate lives on a [`RadialGrid`] with nodes
//! `r_i = i * dr`. Integrals over the plane of radial functions are taken with
//! the area element `2 pi r dr`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest node count accepted for a grid.
pub const MIN_NODES: usize = 16;

/// Uniform grid `r_i = i * dr`, `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    n: usize,
    dr: f64,
}

impl RadialGrid {
    pub fn new(n: usize, dr: f64) -> Result<Self> {
        if n < MIN_NODES {
            return Err(Error::InvalidGrid(format!("need at least {MIN_NODES} nodes, got {n}")));
        }
        if !(dr.is_finite() && dr > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {dr}")));
        }
        Ok(Self { n, dr })
    }

    /// Grid with `n` nodes covering `[0, r_max]`.
    pub fn spanning(r_max: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid("need at least two nodes".into()));
        }
        Self::new(n, r_max / (n - 1) as f64)
    }

    /// Rebuilds a grid from a column of radii, validating uniformity.
    pub fn from_nodes(r: &[f64]) -> Result<Self> {
        if r.len() < 2 {
            return Err(Error::InvalidGrid("need at least two nodes".into()));
        }
        if r[0].abs() > 1e-12 {
            return Err(Error::InvalidGrid(format!("first node must be 0, got {}", r[0])));
        }
        let dr = r[1] - r[0];
        let grid = Self::new(r.len(), dr)?;
        for (i, &ri) in r.iter().enumerate() {
            let expect = grid.node(i);
            if (ri - expect).abs() > 1e-9 * dr.max(expect.abs() * 1e-3) + 1e-12 {
                return Err(Error::InvalidGrid(format!(
                    "non-uniform spacing at node {i}: r = {ri}, expected {expect}"
                )));
            }
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dr(&self) -> f64 {
        self.dr
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.dr
    }

    pub fn r_max(&self) -> f64 {
        self.node(self.n - 1)
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.node(i))
    }

    /// Index of the node at `r`, snapping to a node within `1e-6 dr`, otherwise
    /// the first node beyond `r`. Clamped to the last node.
    pub fn index_covering(&self, r: f64) -> usize {
        if r <= 0.0 {
            return 0;
        }
        let x = r / self.dr;
        let nearest = x.round();
        let idx = if (x - nearest).abs() <= 1e-6 { nearest as usize } else { x.ceil() as usize };
        idx.min(self.n - 1)
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.n {
            return Err(Error::InvalidGrid(format!("expected {} values, got {}", self.n, f.len())));
        }
        Ok(())
    }
}

/// Plain integral `int_0^{r_last} g dr` by composite Simpson, closing an odd
/// interval count with the 3/8 rule so cubics integrate exactly.
pub(crate) fn simpson(g: &[f64], dr: f64, last: usize) -> f64 {
    match last {
        0 => 0.0,
        1 => 0.5 * dr * (g[0] + g[1]),
        _ => {
            let (simpson_end, tail) = if last.is_multiple_of(2) { (last, false) } else { (last - 3, true) };
            let mut acc = 0.0;
            let mut i = 0;
            while i + 2 <= simpson_end {
                acc += g[i] + 4.0 * g[i + 1] + g[i + 2];
                i += 2;
            }
            let mut total = acc * dr / 3.0;
            if tail {
                let j = simpson_end;
                total += 3.0 * dr / 8.0 * (g[j] + 3.0 * g[j + 1] + 3.0 * g[j + 2] + g[j + 3]);
            }
            total
        }
    }
}

/// Running integral `G_i = int_0^{r_i} g dr` for `i <= last`, held constant
/// beyond `last`. Each interval uses the four-point cubic rule built from the
/// nearest nodes inside `[0, last]`.
pub(crate) fn cumulative(g: &[f64], dr: f64, last: usize) -> Vec<f64> {
    cumulative_with(g, dr, last, false)
}

/// Like [`cumulative`], but an interval whose cubic estimate comes out
/// negative while both end values are nonnegative falls back to the
/// trapezoid, so nonnegative data always yields a nondecreasing result.
pub(crate) fn cumulative_monotone(g: &[f64], dr: f64, last: usize) -> Vec<f64> {
    cumulative_with(g, dr, last, true)
}

fn cumulative_with(g: &[f64], dr: f64, last: usize, monotone: bool) -> Vec<f64> {
    let n = g.len();
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..last {
        let piece = if last < 3 {
            0.5 * (g[i] + g[i + 1])
        } else if i == 0 {
            (9.0 * g[0] + 19.0 * g[1] - 5.0 * g[2] + g[3]) / 24.0
        } else if i + 1 == last {
            (g[i - 2] - 5.0 * g[i - 1] + 19.0 * g[i] + 9.0 * g[i + 1]) / 24.0
        } else {
            (-g[i - 1] + 13.0 * g[i] + 13.0 * g[i + 1] - g[i + 2]) / 24.0
        };
        let piece =
            if monotone && piece < 0.0 && g[i] >= 0.0 && g[i + 1] >= 0.0 { 0.5 * (g[i] + g[i + 1]) } else { piece };
        acc += piece * dr;
        out[i + 1] = acc;
    }
    for v in out.iter_mut().skip(last + 1) {
        *v = acc;
    }
    out
}

/// `int f(|x|) dx` over the plane, i.e. `int f(r) 2 pi r dr` over the grid.
pub fn integrate_radial(grid: &RadialGrid, f: &[f64]) -> Result<f64> {
    grid.check_len(f)?;
    integrate_radial_upto(grid, f, grid.len() - 1)
}

/// Radial integral restricted to the nodes `0..=last`.
pub fn integrate_radial_upto(grid: &RadialGrid, f: &[f64], last: usize) -> Result<f64> {
    if f.len() < 3 {
        return Err(Error::InvalidGrid(format!("quadrature needs at least 3 nodes, got {}", f.len())));
    }
    if last >= f.len() {
        return Err(Error::InvalidGrid(format!("index {last} out of range")));
    }
    let weighted: Vec<f64> = f[..=last].iter().enumerate().map(|(i, v)| v * 2.0 * PI * grid.node(i)).collect();
    Ok(simpson(&weighted, grid.dr(), last))
}

/// Nonnegative radial density with its mass bookkeeping.
///
/// `support_radius` marks where the density ends; quadratures run over
/// `[0, support_radius]` so that a jump at the edge is never smeared across
/// an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialDensity {
    grid: RadialGrid,
    values: Vec<f64>,
    declared_mass: f64,
    support_radius: f64,
}

impl RadialDensity {
    /// Builds a density and declares its quadrature mass.
    pub fn from_values(grid: RadialGrid, values: Vec<f64>) -> Result<Self> {
        grid.check_len(&values)?;
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidDensity(format!(
                "value {v} at r = {} is not a nonnegative number",
                grid.node(i)
            )));
        }
        let support_radius = auto_support(&grid, &values);
        let mut rho = Self { grid, values, declared_mass: 0.0, support_radius };
        rho.declared_mass = rho.quadrature_mass();
        Ok(rho)
    }

    /// Builds a density and checks it against a declared mass.
    pub fn new(grid: RadialGrid, values: Vec<f64>, declared_mass: f64, rel_tol: f64) -> Result<Self> {
        let mut rho = Self::from_values(grid, values)?;
        let quad = rho.declared_mass;
        if !(declared_mass >= 0.0) || (quad - declared_mass).abs() > rel_tol * declared_mass.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidDensity(format!(
                "quadrature mass {quad} differs from declared mass {declared_mass}"
            )));
        }
        rho.declared_mass = declared_mass;
        Ok(rho)
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(grid: RadialGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_values(grid, grid.nodes().map(f).collect())
    }

    /// Constant `c` on the closed disk of radius `radius`, zero outside.
    /// `radius` is snapped to the nearest node.
    pub fn uniform_disk(grid: RadialGrid, c: f64, radius: f64) -> Result<Self> {
        let k = (radius / grid.dr()).round() as usize;
        if k + 1 >= grid.len() {
            return Err(Error::InvalidDensity("disk does not fit inside the grid".into()));
        }
        let values = (0..grid.len()).map(|i| if i <= k { c } else { 0.0 }).collect();
        Self::from_values(grid, values)?.with_support_radius(grid.node(k))
    }

    /// Overrides the support radius. Nodes beyond it must be zero.
    pub fn with_support_radius(mut self, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || radius > self.grid.r_max() * (1.0 + 1e-12) {
            return Err(Error::InvalidDensity(format!("support radius {radius} outside the grid")));
        }
        let slack = 1e-6 * self.grid.dr();
        if let Some(i) = (0..self.grid.len()).find(|&i| self.grid.node(i) > radius + slack && self.values[i] > 0.0) {
            return Err(Error::InvalidDensity(format!(
                "density is positive at r = {} beyond the support radius {radius}",
                self.grid.node(i)
            )));
        }
        self.support_radius = radius;
        self.declared_mass = self.quadrature_mass();
        Ok(self)
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn declared_mass(&self) -> f64 {
        self.declared_mass
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// Last node index covered by the support.
    pub fn support_index(&self) -> usize {
        self.grid.index_covering(self.support_radius)
    }

    /// Radial integral of `f(i, rho_i)` over the support.
    pub fn integrate(&self, f: impl Fn(usize, f64) -> f64) -> f64 {
        let last = self.support_index();
        let weighted: Vec<f64> = (0..=last).map(|i| f(i, self.values[i]) * 2.0 * PI * self.grid.node(i)).collect();
        simpson(&weighted, self.grid.dr(), last)
    }

    pub fn quadrature_mass(&self) -> f64 {
        self.integrate(|_, rho| rho)
    }

    /// `c * rho`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let values = self.values.iter().map(|v| v * c).collect();
        Self::from_values(self.grid, values)?.with_support_radius(self.support_radius)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        write_profile_csv(w, &self.grid, &self.values)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads a `r,value` CSV.
    pub fn read_csv(r: impl Read) -> Result<Self> {
        let (grid, values) = read_profile_csv(r)?;
        Self::from_values(grid, values)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn auto_support(grid: &RadialGrid, values: &[f64]) -> f64 {
    match values.iter().rposition(|&v| v > 0.0) {
        None => 0.0,
        Some(k) if k + 1 < grid.len() => grid.node(k + 1),
        Some(k) => grid.node(k),
    }
}

/// Writes a profile with header `r,value`.
pub fn write_profile_csv(w: impl Write, grid: &RadialGrid, values: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["r", "value"])?;
    for (i, v) in values.iter().enumerate() {
        wtr.write_record([format!("{:e}", grid.node(i)), format!("{v:e}")])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a profile with header `r,value`.
pub fn read_profile_csv(r: impl Read) -> Result<(RadialGrid, Vec<f64>)> {
    read_columns(r, &[&["r", "value"]])
}

/// Reads a density from either `r,value` or a steady profile `r,theta,rho`.
pub fn read_density_csv(r: impl Read) -> Result<RadialDensity> {
    let (grid, values) = read_columns(r, &[&["r", "value"], &["r", "theta", "rho"]])?;
    RadialDensity::from_values(grid, values)
}

/// Reads `r` and the last column of the first matching layout.
fn read_columns(r: impl Read, layouts: &[&[&str]]) -> Result<(RadialGrid, Vec<f64>)> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let Some(layout) = layouts.iter().find(|l| l[..] == names[..]) else {
        let expected: Vec<String> = layouts.iter().map(|l| l.join(",")).collect();
        return Err(Error::Parse(format!("expected header {}, got `{}`", expected.join(" or "), names.join(","))));
    };
    let last = layout.len() - 1;
    let mut rs = Vec::new();
    let mut vs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rs.push(parse_f64(&rec[0])?);
        vs.push(parse_f64(&rec[last])?);
    }
    if rs.is_empty() {
        return Err(Error::Parse("profile has no rows".into()));
    }
    Ok((RadialGrid::from_nodes(&rs)?, vs))
}

pub(crate) fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")))
}

/// Cumulative mass `M(r) = int_{B_r} rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct MassFunction {
    grid: RadialGrid,
    values: Vec<f64>,
    total: f64,
}

impl MassFunction {
    pub fn from_parts(grid: RadialGrid, values: Vec<f64>, total: f64) -> Result<Self> {
        grid.check_len(&values)?;
        Ok(Self { grid, values, total })
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Linear interpolation, constant past the last node.
    pub fn at(&self, r: f64) -> f64 {
        interp_linear(&self.grid, &self.values, r)
    }
}

pub(crate) fn interp_linear(grid: &RadialGrid, values: &[f64], r: f64) -> f64 {
    if r <= 0.0 {
        return values[0];
    }
    let x = r / grid.dr();
    let i = x.floor() as usize;
    if i + 1 >= values.len() {
        return values[values.len() - 1];
    }
    let w = x - i as f64;
    values[i] * (1.0 - w) + values[i + 1] * w
}

/// Running mass of `rho` over centred balls.
pub fn mass_function(rho: &RadialDensity) -> MassFunction {
    let grid = *rho.grid();
    let g: Vec<f64> = rho.values().iter().enumerate().map(|(i, v)| v * 2.0 * PI * grid.node(i)).collect();
    let values = cumulative_monotone(&g, grid.dr(), rho.support_index());
    MassFunction { grid, values, total: rho.declared_mass() }
}

/// `(int rho^p)^(1/p)`.
pub fn lp_norm(rho: &RadialDensity, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("norm exponent must be >= 1, got {p}")));
    }
    Ok(rho.integrate(|_, v| v.powf(p)).powf(1.0 / p))
}

/// True iff `rho_{i+1} <= rho_i + tol` along the grid.
pub fn is_radially_nonincreasing(rho: &RadialDensity, tol: f64) -> bool {
    rho.values().windows(2).all(|w| w[1] <= w[0] + tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, r_max: f64) -> RadialGrid {
        RadialGrid::spanning(r_max, n).unwrap()
    }

    #[test]
    fn grid_rejects_small_or_bad_spacing() {
        assert!(RadialGrid::new(8, 0.1).is_err());
        assert!(RadialGrid::new(32, 0.0).is_err());
        assert!(RadialGrid::new(32, f64::NAN).is_err());
    }

    #[test]
    fn from_nodes_validates_uniformity() {
        let r: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let g = RadialGrid::from_nodes(&r).unwrap();
        assert_eq!(g.len(), 20);
        let mut bad = r.clone();
        bad[7] += 0.01;
        assert!(RadialGrid::from_nodes(&bad).is_err());
    }

    #[test]
    fn quadrature_rejects_tiny_input() {
        let g = grid(16, 1.0);
        assert!(integrate_radial_upto(&g, &[1.0, 1.0], 1).is_err());
    }

    #[test]
    fn zero_integrates_to_zero() {
        let g = grid(33, 2.0);
        assert_eq!(integrate_radial(&g, &[0.0; 33]).unwrap(), 0.0);
    }

    #[test]
    fn quadratics_are_exact_for_both_parities() {
        for n in [32usize, 33] {
            let g = grid(n, 3.0);
            let f: Vec<f64> = g.nodes().map(|r| 2.0 - 0.5 * r + 0.75 * r * r).collect();
            let rm = g.r_max();
            // int (2 - r/2 + 3r^2/4) 2 pi r dr
            let exact = 2.0 * PI * (rm * rm - rm.powi(3) / 6.0 + 3.0 * rm.powi(4) / 16.0);
            let got = integrate_radial(&g, &f).unwrap();
            assert!((got - exact).abs() < 1e-12 * exact, "n={n}: {got} vs {exact}");
        }
    }

    #[test]
    fn gaussian_integrates_to_pi() {
        let g = grid(4001, 8.0);
        let f: Vec<f64> = g.nodes().map(|r| (-r * r).exp()).collect();
        let exact = PI * (1.0 - (-64.0f64).exp());
        assert!((integrate_radial(&g, &f).unwrap() - exact).abs() < 1e-8);
    }

    #[test]
    fn disk_mass_and_norms() {
        let g = grid(401, 4.0);
        let (c, radius) = (0.7, 2.0);
        let disk = RadialDensity::uniform_disk(g, c, radius).unwrap();
        let area = PI * radius * radius;
        assert!((disk.declared_mass() - c * area).abs() < 1e-12);
        assert!((lp_norm(&disk, 1.0).unwrap() - c * area).abs() < 1e-12);
        let m = 2.5;
        let expect = c * area.powf(1.0 / m);
        assert!((lp_norm(&disk, m).unwrap() - expect).abs() < 1e-12);
        let doubled = disk.scaled(2.0).unwrap();
        assert!((lp_norm(&doubled, m).unwrap() - 2.0 * expect).abs() < 1e-12);
        assert!(lp_norm(&disk, 0.5).is_err());
    }

    #[test]
    fn disk_mass_function_is_exact() {
        let g = grid(401, 4.0);
        let disk = RadialDensity::uniform_disk(g, 1.3, 1.5).unwrap();
        let mf = mass_function(&disk);
        for (i, r) in g.nodes().enumerate() {
            let rr = r.min(1.5);
            assert!((mf.values()[i] - 1.3 * PI * rr * rr).abs() < 1e-12, "r={r}");
        }
    }

    #[test]
    fn gaussian_mass_function() {
        let g = grid(4001, 8.0);
        let rho = RadialDensity::from_fn(g, |r| (-r * r).exp()).unwrap();
        let mf = mass_function(&rho);
        for (i, r) in g.nodes().enumerate() {
            let exact = PI * (1.0 - (-r * r).exp());
            assert!((mf.values()[i] - exact).abs() < 1e-8, "r={r}");
        }
    }

    #[test]
    fn zero_density_has_zero_mass_function() {
        let g = grid(64, 1.0);
        let rho = RadialDensity::from_values(g, vec![0.0; 64]).unwrap();
        assert!(mass_function(&rho).values().iter().all(|&v| v == 0.0));
        assert_eq!(rho.support_radius(), 0.0);
    }

    #[test]
    fn monotonicity_detection() {
        let g = grid(64, 2.0);
        let disk = RadialDensity::uniform_disk(g, 1.0, 1.0).unwrap();
        assert!(is_radially_nonincreasing(&disk, 0.0));
        let ramp = RadialDensity::from_fn(g, |r| r).unwrap();
        assert!(!is_radially_nonincreasing(&ramp, 0.0));
    }

    #[test]
    fn declared_mass_is_checked() {
        let g = grid(101, 2.0);
        let vals: Vec<f64> = g.nodes().map(|r| if r <= 1.0 { 1.0 } else { 0.0 }).collect();
        assert!(RadialDensity::new(g, vals.clone(), 100.0, 1e-4).is_err());
        let m = RadialDensity::from_values(g, vals.clone()).unwrap().declared_mass();
        assert!(RadialDensity::new(g, vals, m, 1e-8).is_ok());
    }

    #[test]
    fn negative_values_rejected() {
        let g = grid(16, 1.0);
        let mut v = vec![1.0; 16];
        v[3] = -0.1;
        assert!(RadialDensity::from_values(g, v).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = grid(50, 2.0);
        let rho = RadialDensity::from_fn(g, |r| (-(r * r)).exp()).unwrap();
        let mut buf = Vec::new();
        rho.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"r,value\n"));
        let back = RadialDensity::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.grid().len(), 50);
        for (a, b) in back.values().iter().zip(rho.values()) {
            assert!((a - b).abs() <= 1e-15 * b.abs());
        }
    }

    #[test]
    fn csv_rejects_wrong_header_and_empty() {
        assert!(RadialDensity::read_csv("x,y\n0,1\n".as_bytes()).is_err());
        assert!(RadialDensity::read_csv("r,value\n".as_bytes()).is_err());
        assert!(RadialDensity::read_csv("".as_bytes()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mass_function_is_nondecreasing(vals in prop::collection::vec(0.0f64..5.0, 16..200)) {
                let n = vals.len();
                let g = RadialGrid::new(n, 0.05).unwrap();
                let rho = RadialDensity::from_values(g, vals).unwrap();
                let mf = mass_function(&rho);
                prop_assert_eq!(mf.values()[0], 0.0);
                for w in mf.values().windows(2) {
                    prop_assert!(w[1] >= w[0]);
                }
            }

            #[test]
            fn l1_norm_matches_declared_mass(a in 0.1f64..3.0, w in 0.2f64..2.0) {
                let g = RadialGrid::spanning(10.0, 2001).unwrap();
                let rho = RadialDensity::from_fn(g, |r| a * (-(r / w).powi(2)).exp()).unwrap();
                let l1 = lp_norm(&rho, 1.0).unwrap();
                prop_assert!((l1 - rho.declared_mass()).abs() <= 1e-8 * l1);
            }
        }
    }
}
