//! Periodic grid on `[-L, L)`, complex grid functions, FFT helpers and norms.
//!
//! Transform convention, used everywhere in the crate: the forward transform is
//! the unnormalized DFT `F_m = sum_j f_j exp(-2 pi i j m / N)` stored in FFT
//! order, so index `m < N/2` carries wavenumber `pi m / L` and index `m >= N/2`
//! carries `pi (m - N) / L`. The Nyquist mode is therefore `-pi N / (2L)`.
//! The unitary coefficients returned by [`Grid1D::fourier_coefficients`] are
//! `sqrt(h/N) F_m`, which makes Parseval read `sum |c_m|^2 = h sum |f_j|^2`.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::{Add, Mul, Sub};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Fraction of the half width beyond which mass counts as "tail".
pub const TAIL_FRACTION: f64 = 0.9;

#[derive(Clone)]
pub struct Grid1D {
    half_width: f64,
    num_points: usize,
    spacing: f64,
    wavenumbers: Arc<[f64]>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid1D")
            .field("half_width", &self.half_width)
            .field("num_points", &self.num_points)
            .finish()
    }
}

impl PartialEq for Grid1D {
    fn eq(&self, other: &Self) -> bool {
        self.half_width == other.half_width && self.num_points == other.num_points
    }
}

impl Grid1D {
    pub fn new(half_width: f64, num_points: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "half width must be positive, got {half_width}"
            )));
        }
        if num_points < 4 || num_points % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "number of points must be even and >= 4, got {num_points}"
            )));
        }
        let n = num_points;
        let wavenumbers: Arc<[f64]> = (0..n)
            .map(|m| {
                let signed = if m < n / 2 {
                    m as f64
                } else {
                    m as f64 - n as f64
                };
                std::f64::consts::PI * signed / half_width
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Grid1D {
            half_width,
            num_points,
            spacing: 2.0 * half_width / n as f64,
            wavenumbers,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn node(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.spacing
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.num_points).map(|j| self.node(j)).collect()
    }

    /// Wavenumbers in FFT order (see module docs).
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn nyquist_index(&self) -> usize {
        self.num_points / 2
    }

    pub fn check_same(&self, other: &Grid1D) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(
                self.half_width,
                self.num_points,
                other.half_width,
                other.num_points,
            ))
        }
    }

    /// In-place unnormalized forward DFT.
    pub fn forward(&self, data: &mut [C64]) {
        self.forward.process(data);
    }

    /// In-place inverse DFT including the `1/N` factor.
    pub fn inverse(&self, data: &mut [C64]) {
        self.inverse.process(data);
        let s = 1.0 / self.num_points as f64;
        for z in data.iter_mut() {
            *z *= s;
        }
    }

    /// In-place inverse DFT without normalization.
    pub(crate) fn inverse_unscaled(&self, data: &mut [C64]) {
        self.inverse.process(data);
    }

    /// Multiplies the spectrum of `data` by `mult[m]` in place.
    pub fn apply_multiplier(&self, data: &mut [C64], mult: &[f64]) {
        self.forward(data);
        for (z, m) in data.iter_mut().zip(mult) {
            *z *= m;
        }
        self.inverse(data);
    }

    /// Unitary Fourier coefficients `sqrt(h/N) F_m` in FFT order.
    pub fn fourier_coefficients(&self, f: &Field) -> Vec<C64> {
        let mut c = f.values.clone();
        self.forward(&mut c);
        let s = (self.spacing / self.num_points as f64).sqrt();
        c.iter_mut().for_each(|z| *z *= s);
        c
    }

    /// Inverse of [`Grid1D::fourier_coefficients`].
    pub fn from_fourier_coefficients(&self, coeffs: &[C64]) -> Result<Field> {
        if coeffs.len() != self.num_points {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                self.num_points,
                coeffs.len()
            )));
        }
        let mut v = coeffs.to_vec();
        self.inverse(&mut v);
        let s = (self.num_points as f64 / self.spacing).sqrt();
        v.iter_mut().for_each(|z| *z *= s);
        Field::new(self.clone(), v)
    }

    pub(crate) fn is_tail(&self, j: usize) -> bool {
        self.node(j).abs() >= TAIL_FRACTION * self.half_width
    }
}

#[derive(Clone, Debug)]
pub struct Field {
    grid: Grid1D,
    values: Vec<C64>,
}

impl Field {
    pub fn new(grid: Grid1D, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.num_points {
            return Err(Error::InvalidArgument(format!(
                "field has {} values on a grid of {} points",
                values.len(),
                grid.num_points
            )));
        }
        if !values.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite("field construction".into()));
        }
        Ok(Field { grid, values })
    }

    /// Construction without the finiteness scan, for values produced by
    /// finite arithmetic on finite inputs.
    pub(crate) fn from_parts(grid: Grid1D, values: Vec<C64>) -> Self {
        debug_assert_eq!(values.len(), grid.num_points);
        Field { grid, values }
    }

    pub fn zeros(grid: &Grid1D) -> Self {
        Field {
            grid: grid.clone(),
            values: vec![C64::new(0.0, 0.0); grid.num_points],
        }
    }

    pub fn from_fn(grid: &Grid1D, f: impl Fn(f64) -> C64) -> Result<Self> {
        let values = (0..grid.num_points).map(|j| f(grid.node(j))).collect();
        Field::new(grid.clone(), values)
    }

    pub fn from_real(grid: &Grid1D, values: &[f64]) -> Result<Self> {
        Field::new(
            grid.clone(),
            values.iter().map(|&r| C64::new(r, 0.0)).collect(),
        )
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn norm(&self) -> f64 {
        (self.grid.spacing * self.values.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
    }

    pub fn scale(&self, a: C64) -> Field {
        Field::from_parts(
            self.grid.clone(),
            self.values.iter().map(|z| z * a).collect(),
        )
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: C64, x: &Field) {
        assert_eq!(self.grid, x.grid, "axpy on mismatched grids");
        for (y, xv) in self.values.iter_mut().zip(&x.values) {
            *y += a * xv;
        }
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Field {
        Field::from_parts(
            self.grid.clone(),
            self.values.iter().map(|&z| f(z)).collect(),
        )
    }

    /// Pointwise product with a real array.
    pub fn mul_real(&self, w: &[f64]) -> Field {
        Field::from_parts(
            self.grid.clone(),
            self.values.iter().zip(w).map(|(z, r)| z * r).collect(),
        )
    }

    /// Mass `h sum |f_j|^2` over nodes with `|x| >= 0.9 L`.
    pub fn tail_mass(&self) -> f64 {
        let h = self.grid.spacing;
        self.values
            .iter()
            .enumerate()
            .filter(|(j, _)| self.grid.is_tail(*j))
            .map(|(_, z)| h * z.norm_sqr())
            .sum()
    }

    /// Band-limited translation: returns `f(x - s)`.
    pub fn shifted(&self, s: f64) -> Field {
        let g = &self.grid;
        let mut v = self.values.clone();
        g.forward(&mut v);
        let nyq = g.nyquist_index();
        for (m, z) in v.iter_mut().enumerate() {
            let k = g.wavenumbers[m];
            *z *= if m == nyq {
                C64::new((k * s).cos(), 0.0)
            } else {
                C64::from_polar(1.0, -k * s)
            };
        }
        g.inverse(&mut v);
        Field::from_parts(g.clone(), v)
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        assert_eq!(self.grid, rhs.grid, "addition on mismatched grids");
        Field::from_parts(
            self.grid.clone(),
            self.values
                .iter()
                .zip(&rhs.values)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        assert_eq!(self.grid, rhs.grid, "subtraction on mismatched grids");
        Field::from_parts(
            self.grid.clone(),
            self.values
                .iter()
                .zip(&rhs.values)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }
}

impl Mul<C64> for &Field {
    type Output = Field;
    fn mul(self, a: C64) -> Field {
        self.scale(a)
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, a: f64) -> Field {
        self.scale(C64::new(a, 0.0))
    }
}

/// Unweighted `sum conj(a_j) b_j`.
pub(crate) fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// `h sum conj(f_j) g_j`.
pub fn inner_product(f: &Field, g: &Field) -> Result<C64> {
    f.grid.check_same(&g.grid)?;
    Ok(dot(&f.values, &g.values) * f.grid.spacing)
}

/// `(h sum |f_j|^p)^(1/p)`.
pub fn norm_lp(f: &Field, p: f64) -> Result<f64> {
    if !p.is_finite() || p < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "L^p exponent must be finite and >= 1, got {p}"
        )));
    }
    if p == 2.0 {
        return Ok(f.norm());
    }
    let s: f64 = f.values.iter().map(|z| z.norm().powf(p)).sum();
    Ok((f.grid.spacing * s).powf(1.0 / p))
}

/// Multiplies by `(i k)^order` in Fourier space. The Nyquist mode is dropped
/// for odd orders so that real fields stay real.
pub fn spectral_derivative(f: &Field, order: u32) -> Field {
    let g = &f.grid;
    let mut v = f.values.clone();
    g.forward(&mut v);
    let nyq = g.nyquist_index();
    for (m, z) in v.iter_mut().enumerate() {
        if order % 2 == 1 && m == nyq {
            *z = C64::new(0.0, 0.0);
        } else {
            *z *= C64::new(0.0, g.wavenumbers[m]).powu(order);
        }
    }
    g.inverse(&mut v);
    Field::from_parts(g.clone(), v)
}

/// `H^k` norm with multiplier `(1 + k_m^2)^(k/2)`.
pub fn sobolev_norm(f: &Field, k: u32) -> f64 {
    let g = &f.grid;
    let c = g.fourier_coefficients(f);
    c.iter()
        .zip(g.wavenumbers.iter())
        .map(|(z, &km)| (1.0 + km * km).powi(k as i32) * z.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    #[serde(rename = "L")]
    half_width: f64,
    #[serde(rename = "N")]
    num_points: usize,
}

/// Writes interleaved little-endian `(re, im)` doubles to `path` and a JSON
/// sidecar `{L, N}` next to it with extension `json`.
pub fn write_dump(f: &Field, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for z in &f.values {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    w.flush()?;
    let header = DumpHeader {
        half_width: f.grid.half_width,
        num_points: f.grid.num_points,
    };
    let json = serde_json::to_string(&header).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    std::fs::write(path.with_extension("json"), json)?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<Field> {
    let json = std::fs::read_to_string(path.with_extension("json"))?;
    let header: DumpHeader =
        serde_json::from_str(&json).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let grid = Grid1D::new(header.half_width, header.num_points)?;
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() != 16 * header.num_points {
        return Err(Error::InvalidArgument(format!(
            "dump holds {} bytes, expected {}",
            bytes.len(),
            16 * header.num_points
        )));
    }
    let word = |i: usize| f64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
    let values = (0..header.num_points)
        .map(|j| C64::new(word(2 * j), word(2 * j + 1)))
        .collect();
    Field::new(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn sech(x: f64) -> f64 {
        1.0 / x.cosh()
    }

    // Composite Simpson on [a, b] with n (even) panels; independent of the grid.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn grid_layout() {
        let g = Grid1D::new(20.0, 512).unwrap();
        assert_eq!(g.node(0), -20.0);
        assert_abs_diff_eq!(g.spacing(), 40.0 / 512.0);
        let k = g.wavenumbers();
        assert_eq!(k[0], 0.0);
        assert_abs_diff_eq!(k[1], PI / 20.0);
        assert_abs_diff_eq!(k[256], -256.0 * PI / 20.0);
        assert_abs_diff_eq!(k[511], -PI / 20.0);
        assert!(Grid1D::new(1.0, 7).is_err());
        assert!(Grid1D::new(-1.0, 8).is_err());
    }

    #[test]
    fn inner_product_constants() {
        let g = Grid1D::new(1.0, 8).unwrap();
        let one = Field::from_fn(&g, |_| C64::new(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(inner_product(&one, &one).unwrap().re, 2.0, epsilon = 1e-15);
        let wave = Field::from_fn(&g, |x| C64::from_polar(1.0, PI * x)).unwrap();
        assert!(inner_product(&wave, &one).unwrap().norm() < 1e-12);
    }

    #[test]
    fn inner_product_sech_mass() {
        let g = Grid1D::new(20.0, 512).unwrap();
        let f = Field::from_fn(&g, |x| C64::new(sech(x) / 2f64.sqrt(), 0.0)).unwrap();
        let oracle = simpson(|x| sech(x).powi(2) / 2.0, -20.0, 20.0, 20000);
        assert_abs_diff_eq!(oracle, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(inner_product(&f, &f).unwrap().re, oracle, epsilon = 1e-10);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = Field::zeros(&Grid1D::new(1.0, 8).unwrap());
        let b = Field::zeros(&Grid1D::new(1.0, 16).unwrap());
        assert!(matches!(
            inner_product(&a, &b),
            Err(Error::GridMismatch(..))
        ));
    }

    #[test]
    fn lp_norms() {
        let g = Grid1D::new(20.0, 512).unwrap();
        let chi = Field::from_fn(&g, |x| C64::new(sech(x) / 2f64.sqrt(), 0.0)).unwrap();
        let oracle = simpson(|x| sech(x).powi(4) / 4.0, -20.0, 20.0, 20000).powf(0.25);
        assert_abs_diff_eq!(norm_lp(&chi, 4.0).unwrap(), oracle, epsilon = 1e-6);
        assert_abs_diff_eq!(
            norm_lp(&chi, 4.0).unwrap(),
            (1.0f64 / 3.0).powf(0.25),
            epsilon = 1e-6
        );
        assert_eq!(norm_lp(&Field::zeros(&g), 3.0).unwrap(), 0.0);
        let g1 = Grid1D::new(1.0, 8).unwrap();
        let one = Field::from_fn(&g1, |_| C64::new(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(norm_lp(&one, 2.0).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
        assert!(norm_lp(&one, 0.5).is_err());
        assert!(norm_lp(&one, f64::INFINITY).is_err());
    }

    #[test]
    fn derivatives() {
        let g = Grid1D::new(20.0, 512).unwrap();
        let w = PI / 20.0;
        let s = Field::from_fn(&g, |x| C64::new((w * x).sin(), 0.0)).unwrap();
        let d2 = spectral_derivative(&s, 2);
        for (j, z) in d2.values().iter().enumerate() {
            assert_abs_diff_eq!(z.re, -w * w * (w * g.node(j)).sin(), epsilon = 1e-10);
        }
        let c = Field::from_fn(&g, |_| C64::new(3.0, 0.0)).unwrap();
        assert!(spectral_derivative(&c, 1).norm() < 1e-12);

        let f = Field::from_fn(&g, |x| C64::new(sech(x), 0.0)).unwrap();
        let d2 = spectral_derivative(&f, 2);
        // x = 0 is node 256; analytic sech'' = sech - 2 sech^3.
        let oracle = |x: f64| sech(x) - 2.0 * sech(x).powi(3);
        assert_abs_diff_eq!(d2.values()[256].re, oracle(0.0), epsilon = 1e-8);
        // Away from the periodic seam, where sech(20) ~ 4e-9 leaves a kink.
        for j in 64..448 {
            assert_abs_diff_eq!(d2.values()[j].re, oracle(g.node(j)), epsilon = 1e-8);
        }
    }

    #[test]
    fn sobolev_examples() {
        let g = Grid1D::new(1.0, 16).unwrap();
        assert_eq!(sobolev_norm(&Field::zeros(&g), 2), 0.0);
        let one = Field::from_fn(&g, |_| C64::new(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(sobolev_norm(&one, 3), 2f64.sqrt(), epsilon = 1e-12);
        let gp = Grid1D::new(PI, 64).unwrap();
        let s = Field::from_fn(&gp, |x| C64::new(x.sin(), 0.0)).unwrap();
        assert_abs_diff_eq!(sobolev_norm(&s, 1), (2.0 * PI).sqrt(), epsilon = 1e-10);
        assert_abs_diff_eq!(sobolev_norm(&s, 0), s.norm(), epsilon = 1e-12);
    }

    #[test]
    fn shift_matches_translation() {
        let g = Grid1D::new(20.0, 512).unwrap();
        let f = Field::from_fn(&g, |x| C64::new(sech(x), 0.0)).unwrap();
        let fs = f.shifted(0.37);
        let exact = Field::from_fn(&g, |x| C64::new(sech(x - 0.37), 0.0)).unwrap();
        assert!((&fs - &exact).norm() < 1e-8);
    }

    #[test]
    fn dump_round_trip() {
        let g = Grid1D::new(3.0, 16).unwrap();
        let f = Field::from_fn(&g, |x| C64::new(x.cos(), x * 0.5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_dump(&f, &p).unwrap();
        let back = read_dump(&p).unwrap();
        assert_eq!(back.grid(), f.grid());
        assert_eq!(back.values(), f.values());
        let json = std::fs::read_to_string(dir.path().join("f.json")).unwrap();
        assert!(json.contains("\"L\":3.0") && json.contains("\"N\":16"));
    }
}
