//! Densities on square Cartesian grids and their logarithmic potentials by
//! direct summation.
//!
//! Cells are indexed row-major: value `k = j * n + i` sits at
//! `(x_i, y_j) = ((i - (n-1)/2) h, (j - (n-1)/2) h)`.

use std::f64::consts::{LN_2, PI};
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::radial::parse_f64;

/// Mean of `log|x - y|` over pairs of points in the unit square.
pub const UNIT_SQUARE_MEAN_LOG: f64 = LN_2 / 3.0 - 25.0 / 12.0 + PI / 3.0;

/// Mean of `log|y|` over the square `[-1/2, 1/2]^2`.
pub const UNIT_CELL_MEAN_LOG: f64 = -LN_2 / 2.0 - 1.5 + PI / 4.0;

const BINARY_MAGIC: &[u8; 8] = b"KSGS2D\x00\x01";

/// Offsets up to this Chebyshev distance get a quadrature-averaged kernel.
const NEAR_OFFSETS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    pub n: usize,
    pub h: f64,
    pub values: Vec<f64>,
}

impl Field2D {
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - (self.n as f64 - 1.0) / 2.0) * self.h
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        write_xy_csv(w, self.n, self.h, &self.values)
    }
}

fn write_xy_csv(w: impl Write, n: usize, h: f64, values: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "y", "value"])?;
    let c = (n as f64 - 1.0) / 2.0;
    for j in 0..n {
        for i in 0..n {
            let x = (i as f64 - c) * h;
            let y = (j as f64 - c) * h;
            out.write_record([x.to_string(), y.to_string(), values[j * n + i].to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Density2D {
    n: usize,
    h: f64,
    values: Vec<f64>,
    mass: f64,
    center: (f64, f64),
}

impl Density2D {
    pub fn from_values(n: usize, h: f64, values: Vec<f64>) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGrid(format!("2D grid needs at least 3 cells per side, got {n}")));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidGrid(format!("cell size must be positive, got {h}")));
        }
        if values.len() != n * n {
            return Err(Error::InvalidGrid(format!("expected {} cell values, got {}", n * n, values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidDensity(format!("cell values must be finite and nonnegative, found {v}")));
        }
        for k in 0..n {
            let edge = [k, (n - 1) * n + k, k * n, k * n + n - 1];
            if edge.iter().any(|&e| values[e] > 0.0) {
                return Err(Error::SupportExceedsDomain { r_max: (n as f64) * h / 2.0 });
            }
        }
        let c = (n as f64 - 1.0) / 2.0;
        let cell = h * h;
        let (mut mass, mut mx, mut my) = (0.0, 0.0, 0.0);
        for j in 0..n {
            for i in 0..n {
                let v = values[j * n + i] * cell;
                mass += v;
                mx += v * (i as f64 - c) * h;
                my += v * (j as f64 - c) * h;
            }
        }
        let center = if mass > 0.0 { (mx / mass, my / mass) } else { (0.0, 0.0) };
        Ok(Self { n, h, values, mass, center })
    }

    /// Samples `f` at cell centres.
    pub fn from_fn(n: usize, h: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let c = (n as f64 - 1.0) / 2.0;
        let values = (0..n * n)
            .map(|k| {
                let (i, j) = (k % n, k / n);
                f((i as f64 - c) * h, (j as f64 - c) * h)
            })
            .collect();
        Self::from_values(n, h, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn center_of_mass(&self) -> (f64, f64) {
        self.center
    }

    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - (self.n as f64 - 1.0) / 2.0) * self.h
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    /// `sum v^p h^2`.
    pub fn power_sum(&self, p: f64) -> f64 {
        self.values.iter().filter(|v| **v > 0.0).map(|v| v.powf(p)).sum::<f64>() * self.cell_area()
    }

    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(Error::InvalidParameter(format!("norm exponent must be >= 1, got {p}")));
        }
        Ok(self.power_sum(p).powf(1.0 / p))
    }

    fn occupied(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n;
        (0..n * n).filter(|&k| self.values[k] > 0.0).map(|k| (k % n, k / n, self.values[k])).collect()
    }

    /// Largest distance from `(cx, cy)` to a point of an occupied cell.
    pub fn support_radius_about(&self, cx: f64, cy: f64) -> f64 {
        let half = self.h / 2.0;
        self.occupied()
            .into_iter()
            .map(|(i, j, _)| {
                let dx = (self.coord(i) - cx).abs() + half;
                let dy = (self.coord(j) - cy).abs() + half;
                dx.hypot(dy)
            })
            .fold(0.0, f64::max)
    }

    /// `int int log|x - y| rho(x) rho(y)` with cell-averaged kernels.
    pub fn log_double_sum(&self) -> f64 {
        let table = KernelTable::new(self.n, self.h);
        let cells = self.occupied();
        let area2 = self.cell_area() * self.cell_area();
        let rows: Vec<f64> = cells
            .par_iter()
            .map(|&(i, j, v)| {
                cells.iter().map(|&(k, l, w)| w * table.get(i.abs_diff(k), j.abs_diff(l))).sum::<f64>() * v
            })
            .collect();
        rows.iter().sum::<f64>() * area2
    }

    /// `u(p) = -(1/2pi) sum log|p - y_j| rho_j h^2`, for points off the support.
    pub fn potential_at(&self, px: f64, py: f64) -> f64 {
        let s: f64 =
            self.occupied().iter().map(|&(i, j, v)| v * (px - self.coord(i)).hypot(py - self.coord(j)).ln()).sum();
        -s * self.cell_area() / (2.0 * PI)
    }

    /// Analytic gradient of [`Density2D::potential_at`].
    pub fn potential_gradient_at(&self, px: f64, py: f64) -> (f64, f64) {
        let (mut gx, mut gy) = (0.0, 0.0);
        for (i, j, v) in self.occupied() {
            let dx = px - self.coord(i);
            let dy = py - self.coord(j);
            let d2 = dx * dx + dy * dy;
            gx += v * dx / d2;
            gy += v * dy / d2;
        }
        let c = -self.cell_area() / (2.0 * PI);
        (c * gx, c * gy)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        write_xy_csv(w, self.n, self.h, &self.values)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    /// Reads `x,y,value` rows covering a full square grid in any order.
    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.iter().map(str::trim).collect::<Vec<_>>() != ["x", "y", "value"] {
            return Err(Error::Parse(format!("expected header x,y,value, found {:?}", header)));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::Parse(format!("expected 3 columns, found {}", rec.len())));
            }
            rows.push((parse_f64(&rec[0])?, parse_f64(&rec[1])?, parse_f64(&rec[2])?));
        }
        let n = (rows.len() as f64).sqrt().round() as usize;
        if n * n != rows.len() || n < 3 {
            return Err(Error::Parse(format!("{} rows do not form a square grid", rows.len())));
        }
        let mut xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup_by(|a, b| (*a - *b).abs() < 1e-9 * (1.0 + b.abs()));
        if xs.len() != n {
            return Err(Error::Parse("x coordinates do not form a uniform grid".into()));
        }
        let h = (xs[n - 1] - xs[0]) / (n - 1) as f64;
        let c = (n as f64 - 1.0) / 2.0;
        let index = |z: f64| -> Result<usize> {
            let t = z / h + c;
            let k = t.round();
            if (t - k).abs() > 1e-6 || k < 0.0 || k >= n as f64 {
                return Err(Error::Parse(format!("coordinate {z} is not a centred grid node")));
            }
            Ok(k as usize)
        };
        let mut values = vec![f64::NAN; n * n];
        for (x, y, v) in rows {
            values[index(y)? * n + index(x)?] = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Parse("grid has duplicate or missing cells".into()));
        }
        Self::from_values(n, h, values)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Binary layout: 8-byte magic, `n` as little-endian u64, `h` as
    /// little-endian f64, then `n*n` little-endian f64 values row-major.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&self.h.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Parse("not a binary 2D density".into()));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        if n > 1 << 14 {
            return Err(Error::Parse(format!("grid side {n} is implausibly large")));
        }
        r.read_exact(&mut word)?;
        let h = f64::from_le_bytes(word);
        let mut values = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            r.read_exact(&mut word)?;
            values.push(f64::from_le_bytes(word));
        }
        Self::from_values(n, h, values)
    }

    /// Loads by extension: `.csv` as text, anything else as binary.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            Self::load_csv(path)
        } else {
            Self::read_binary(std::io::BufReader::new(std::fs::File::open(path)?))
        }
    }
}

/// `h^4`-free kernel values `log h + tau(a, b)`, where `tau` is the mean of
/// `log|x - y|` over pairs of unit cells offset by `(a, b)`.
struct KernelTable {
    n: usize,
    values: Vec<f64>,
}

impl KernelTable {
    fn new(n: usize, h: f64) -> Self {
        let gl = GaussLegendre::new(20);
        let log_h = h.ln();
        let values = (0..n * n)
            .into_par_iter()
            .map(|k| {
                let (a, b) = (k % n, k / n);
                log_h + pair_mean_log(a, b, &gl)
            })
            .collect();
        Self { n, values }
    }

    fn get(&self, a: usize, b: usize) -> f64 {
        self.values[b * self.n + a]
    }
}

/// Mean of `log|x - y|` for `x`, `y` uniform in unit cells offset by `(a, b)`.
///
/// The difference of two uniform cell points has the tent density
/// `(1 - |s|)(1 - |t|)` on `[-1, 1]^2`.
fn pair_mean_log(a: usize, b: usize, gl: &GaussLegendre) -> f64 {
    if a == 0 && b == 0 {
        return UNIT_SQUARE_MEAN_LOG;
    }
    let (af, bf) = (a as f64, b as f64);
    if a.max(b) > NEAR_OFFSETS {
        return 0.5 * (af * af + bf * bf).ln();
    }
    let f = |s: f64, t: f64| {
        let d2 = (af + s).powi(2) + (bf + t).powi(2);
        (1.0 - s.abs()) * (1.0 - t.abs()) * 0.5 * d2.ln()
    };
    [(-1.0, 0.0), (0.0, 1.0)]
        .iter()
        .flat_map(|&sx| [(-1.0, 0.0), (0.0, 1.0)].map(|ty| (sx, ty)))
        .map(|(sx, ty)| gl.integrate_2d(sx, ty, f))
        .sum()
}

/// Logarithmic potential at cell centres; the self-cell uses the exact cell
/// average `int_cell log|y| dy = h^2 (log h + UNIT_CELL_MEAN_LOG)`.
pub fn potential_2d(rho: &Density2D) -> Field2D {
    let n = rho.n;
    let h = rho.h;
    let cells = rho.occupied();
    let area = rho.cell_area();
    let values = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % n, k / n);
            let s: f64 = cells
                .iter()
                .map(|&(a, b, v)| {
                    if a == i && b == j {
                        v * (h.ln() + UNIT_CELL_MEAN_LOG)
                    } else {
                        v * (rho.coord(i) - rho.coord(a)).hypot(rho.coord(j) - rho.coord(b)).ln()
                    }
                })
                .sum();
            -s * area / (2.0 * PI)
        })
        .collect();
    Field2D { n, h, values }
}

/// Sampled far-field decay constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarField {
    /// `sup |u - M K| |x|^2 / r_o^2`.
    pub c1: f64,
    /// `sup |grad(u - M K)| |x|^3 / r_o^2`.
    pub c2: f64,
    /// Ring radius range sampled, in units of `r_o`.
    pub rings: (f64, f64),
}

const RING_RADII: [f64; 5] = [2.0, 2.5, 3.0, 3.5, 4.0];
const RING_ANGLES: usize = 64;

/// Samples `u - M K` on rings `2 r_o <= |x| <= 4 r_o` about the centre of mass.
pub fn far_field_check(rho: &Density2D, r_o: f64) -> Result<FarField> {
    if !(r_o > 0.0) {
        return Err(Error::InvalidParameter(format!("support radius must be positive, got {r_o}")));
    }
    let (cx, cy) = rho.center_of_mass();
    let reach = rho.support_radius_about(cx, cy);
    if reach > r_o {
        return Err(Error::InvalidParameter(format!(
            "support reaches {reach} from the centre of mass, beyond r_o = {r_o}"
        )));
    }
    let mass = rho.mass();
    let samples: Vec<(f64, f64)> = RING_RADII
        .iter()
        .flat_map(|&k| (0..RING_ANGLES).map(move |a| (k, a)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(k, a)| {
            let t = 2.0 * PI * a as f64 / RING_ANGLES as f64;
            let r = k * r_o;
            let (px, py) = (r * t.cos(), r * t.sin());
            let u = rho.potential_at(cx + px, cy + py);
            let mk = -mass / (2.0 * PI) * r.ln();
            let (gx, gy) = rho.potential_gradient_at(cx + px, cy + py);
            let g = -mass / (2.0 * PI * r * r);
            let dg = (gx - g * px).hypot(gy - g * py);
            ((u - mk).abs() * r * r / (r_o * r_o), dg * r.powi(3) / (r_o * r_o))
        })
        .collect();
    let c1 = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    let c2 = samples.iter().map(|s| s.1).fold(0.0, f64::max);
    Ok(FarField { c1, c2, rings: (RING_RADII[0], RING_RADII[RING_RADII.len() - 1]) })
}
