//! Uniform periodic grid functions with spectral calculus.
//!
//! A [`Field`] samples a real function on `n` equispaced points of the
//! periodic box `[-L/2, L/2)`. All calculus goes through the Fourier side:
//! derivatives multiply coefficients by `(i 2πk/L)^order`, quadrature is the
//! trapezoid rule (spectrally accurate for smooth periodic data), and
//! quadratic products are dealiased on a 3/2 zero-padded grid so that no
//! spurious energy folds back into the retained modes.
//!
//! Fields are immutable values; every operation returns a fresh field, so
//! they can be shared freely across threads.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform periodic grid on `[-L/2, L/2)`.
///
/// `n` must be a power of two (and at least 8) so transforms stay fast and
/// refinement tests can halve/double exactly. The spacing is always derived
/// as `length / n`, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    length: f64,
}

impl Grid {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::config(format!(
                "grid.n must be a power of two >= 8, got {n}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::config(format!(
                "grid.length must be positive and finite, got {length}"
            )));
        }
        Ok(Grid { n, length })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    /// j-th grid point, `x_j = -L/2 + j h`.
    pub fn point(&self, j: usize) -> f64 {
        -0.5 * self.length + j as f64 * self.spacing()
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |j| self.point(j))
    }

    /// Signed integer frequency for storage index `i` (FFT layout, Nyquist
    /// kept at `+n/2`).
    pub fn signed_freq(&self, i: usize) -> i64 {
        if i <= self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// Physical wavenumber `2π k̃ / L` for storage index `i`.
    pub fn wavenumber(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.signed_freq(i) as f64 / self.length
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if forward {
            p.plan_fft_forward(n)
        } else {
            p.plan_fft_inverse(n)
        }
    })
}

/// Real-valued grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::config(format!(
                "field length {} does not match grid.n {}",
                values.len(),
                grid.n()
            )));
        }
        let f = Field { grid, values };
        f.check_finite(0.0)?;
        Ok(f)
    }

    pub fn zeros(grid: Grid) -> Self {
        Field {
            grid,
            values: vec![0.0; grid.n()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Field {
            grid,
            values: vec![c; grid.n()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Field {
            grid,
            values: grid.points().map(f).collect(),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(&self, t: f64) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::BlowUp {
                t,
                detail: "non-finite field value".into(),
            })
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest |u| over the outer 10% of the box relative to the global
    /// maximum. Non-periodic weights and the unbounded-domain reading of the
    /// model only make sense while this stays small.
    pub fn boundary_contamination(&self) -> f64 {
        let peak = self.max_abs();
        if peak == 0.0 {
            return 0.0;
        }
        let edge = 0.45 * self.grid.length();
        let mut worst = 0.0f64;
        for (j, x) in self.grid.points().enumerate() {
            if x.abs() >= edge {
                worst = worst.max(self.values[j].abs());
            }
        }
        worst / peak
    }

    /// Trapezoidal quadrature over the periodic box: `h · Σ values`.
    pub fn integrate(&self) -> f64 {
        self.grid.spacing() * self.values.iter().sum::<f64>()
    }

    /// Quadrature of the pointwise product of two fields on the same grid.
    pub fn inner(&self, other: &Field) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        self.grid.spacing()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.inner(self)
    }

    pub fn to_spectrum(&self) -> Spectrum {
        let n = self.grid.n();
        let mut buf: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        plan(n, true).process(&mut buf);
        let scale = 1.0 / n as f64;
        for c in &mut buf {
            *c *= scale;
        }
        Spectrum {
            grid: self.grid,
            coeffs: buf,
        }
    }

    /// Spectral derivative of the given order (1..=4).
    pub fn derivative(&self, order: u32) -> Result<Field> {
        if !(1..=4).contains(&order) {
            return Err(Error::config(format!(
                "derivative order must be in 1..=4, got {order}"
            )));
        }
        self.check_finite(0.0)?;
        Ok(self.to_spectrum().derivative(order).to_field())
    }

    /// Squared Sobolev norm `Σ_{j=0..s} ∫ (d^j f)²`, optionally restricted to
    /// a window `[a, b]`. Derivatives are always computed globally, then the
    /// quadrature is restricted.
    pub fn sobolev_norm_sq(&self, s: u32, window: Option<(f64, f64)>) -> Result<f64> {
        if s > 2 {
            return Err(Error::config(format!(
                "sobolev order must be in 0..=2, got {s}"
            )));
        }
        if let Some((a, b)) = window {
            let half = 0.5 * self.grid.length();
            if !(a < b && a >= -half && b <= half) {
                return Err(Error::config(format!(
                    "window [{a}, {b}] outside domain [-{half}, {half})"
                )));
            }
        }
        let mut total = self.restricted_l2_sq(window);
        let mut spec = self.to_spectrum();
        for _ in 0..s {
            spec = spec.derivative(1);
            total += spec.to_field().restricted_l2_sq(window);
        }
        Ok(total)
    }

    fn restricted_l2_sq(&self, window: Option<(f64, f64)>) -> f64 {
        match window {
            None => self.l2_norm_sq(),
            Some((a, b)) => {
                let h = self.grid.spacing();
                h * self
                    .grid
                    .points()
                    .zip(&self.values)
                    .filter(|(x, _)| *x >= a && *x <= b)
                    .map(|(_, v)| v * v)
                    .sum::<f64>()
            }
        }
    }

    /// Zero every Fourier mode with |frequency| > m.
    pub fn project(&self, m: usize) -> Result<Field> {
        Ok(self.to_spectrum().project(m)?.to_field())
    }

    /// Largest coefficient magnitude outside the first `m` frequencies,
    /// relative to the largest coefficient overall. Zero for band-limited
    /// fields.
    pub fn band_limit_excess(&self, m: usize) -> f64 {
        let spec = self.to_spectrum();
        let peak = spec.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for (i, c) in spec.coeffs.iter().enumerate() {
            if spec.grid.signed_freq(i).unsigned_abs() as usize > m {
                worst = worst.max(c.norm());
            }
        }
        worst / peak
    }

    /// Dealiased pointwise product: both factors are evaluated on a 3/2
    /// zero-padded grid, multiplied there, and the result truncated back.
    pub fn dealiased_mul(&self, other: &Field) -> Field {
        debug_assert_eq!(self.grid, other.grid);
        let sa = self.to_spectrum();
        let sb = other.to_spectrum();
        sa.dealiased_mul(&sb).to_field()
    }

    // -- pointwise helpers used by the steppers and diagnostics --

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert_eq!(self.grid, other.grid);
        Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a - b)
    }

    /// `self + c * other`, the workhorse of the explicit steppers.
    pub fn axpy(&self, c: f64, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + c * b)
    }
}

/// Fourier coefficients of a real field, `c_k = (1/n) Σ_j f_j e^{-2πi jk/n}`,
/// stored in FFT layout (`k = 0..n/2` then negative frequencies).
#[derive(Debug, Clone)]
pub struct Spectrum {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficient at signed frequency `k` (`-n/2 < k <= n/2`).
    pub fn coeff(&self, k: i64) -> Complex64 {
        let n = self.grid.n() as i64;
        let idx = if k >= 0 { k } else { k + n };
        self.coeffs[idx as usize]
    }

    pub fn to_field(&self) -> Field {
        let n = self.grid.n();
        let mut buf = self.coeffs.clone();
        plan(n, false).process(&mut buf);
        Field {
            grid: self.grid,
            values: buf.iter().map(|c| c.re).collect(),
        }
    }

    /// Multiply by the derivative symbol `(i 2πk/L)^order`. The Nyquist mode
    /// is zeroed for odd orders (its sign is ambiguous on the grid).
    pub fn derivative(&self, order: u32) -> Spectrum {
        let n = self.grid.n();
        let mut out = self.coeffs.clone();
        for (i, c) in out.iter_mut().enumerate() {
            if order % 2 == 1 && i == n / 2 {
                *c = Complex64::new(0.0, 0.0);
                continue;
            }
            let ik = Complex64::new(0.0, self.grid.wavenumber(i));
            *c *= ik.powu(order);
        }
        Spectrum {
            grid: self.grid,
            coeffs: out,
        }
    }

    /// Parseval form of the squared L² norm: `L · Σ |c_k|²`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.grid.length() * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    /// Squared L² norm of the `order`-th derivative without leaving
    /// coefficient space.
    pub fn deriv_l2_norm_sq(&self, order: u32) -> f64 {
        let n = self.grid.n();
        self.grid.length()
            * self
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if order % 2 == 1 && i == n / 2 {
                        return 0.0;
                    }
                    let k = self.grid.wavenumber(i);
                    k.powi(2 * order as i32) * c.norm_sqr()
                })
                .sum::<f64>()
    }

    /// Orthogonal projection onto frequencies |k| <= m. Idempotent.
    pub fn project(&self, m: usize) -> Result<Spectrum> {
        let n = self.grid.n();
        if m > n / 2 {
            return Err(Error::config(format!(
                "projection dimension m={m} exceeds n/2={}",
                n / 2
            )));
        }
        let mut out = self.coeffs.clone();
        for (i, c) in out.iter_mut().enumerate() {
            if self.grid.signed_freq(i).unsigned_abs() as usize > m {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        Ok(Spectrum {
            grid: self.grid,
            coeffs: out,
        })
    }

    /// Same grid, replacement coefficient vector.
    pub fn with_coeffs(&self, coeffs: Vec<Complex64>) -> Spectrum {
        debug_assert_eq!(coeffs.len(), self.grid.n());
        Spectrum {
            grid: self.grid,
            coeffs,
        }
    }

    pub fn add(&self, other: &Spectrum) -> Spectrum {
        debug_assert_eq!(self.grid, other.grid);
        Spectrum {
            grid: self.grid,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Spectrum {
        Spectrum {
            grid: self.grid,
            coeffs: self.coeffs.iter().map(|v| v * c).collect(),
        }
    }

    /// Dealiased product of two spectra (3/2-rule zero padding). The result
    /// is band-limited strictly below the Nyquist mode.
    pub fn dealiased_mul(&self, other: &Spectrum) -> Spectrum {
        debug_assert_eq!(self.grid, other.grid);
        let n = self.grid.n();
        let m = 3 * n / 2;

        let pa = pad_values(&self.coeffs, n, m);
        let pb = pad_values(&other.coeffs, n, m);

        let mut prod: Vec<Complex64> = pa
            .iter()
            .zip(&pb)
            .map(|(a, b)| Complex64::new(a.re * b.re, 0.0))
            .collect();
        plan(m, true).process(&mut prod);
        let scale = 1.0 / m as f64;

        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..=(n / 2 - 1) {
            out[k] = prod[k] * scale;
            if k > 0 {
                out[n - k] = prod[m - k] * scale;
            }
        }
        Spectrum {
            grid: self.grid,
            coeffs: out,
        }
    }
}

/// Zero-pad `coeffs` (length `n`, FFT layout) to length `m` and return the
/// physical values on the fine grid. The Nyquist coefficient is split across
/// `±n/2` so real fields stay exactly real.
fn pad_values(coeffs: &[Complex64], n: usize, m: usize) -> Vec<Complex64> {
    let mut padded = vec![Complex64::new(0.0, 0.0); m];
    padded[0] = coeffs[0];
    for k in 1..n / 2 {
        padded[k] = coeffs[k];
        padded[m - k] = coeffs[n - k];
    }
    let nyq = coeffs[n / 2] * 0.5;
    padded[n / 2] = nyq;
    padded[m - n / 2] = nyq;
    plan(m, false).process(&mut padded);
    padded
}
