//! Discrete torus geometry, interaction kernels, and periodic convolution.
//!
//! Sites of Δ_n^d = {0,...,n-1}^d are indexed lexicographically (first
//! coordinate most significant). Kernels are probability densities on the
//! continuum torus [0,1)^d, evaluated through the minimal-image map into
//! [-1/2, 1/2)^d; discretization samples J(x/n) on grid displacements and by
//! default rescales so the discrete mean (1/n^d) Σ_x J(x/n) is exactly 1,
//! which keeps lattice energies aligned with their continuum normalization.
//!
//! Convolution is the torus average (J * f)(x) = (1/n^d) Σ_y J((x-y)/n) f(y),
//! available as a direct double sum and as an FFT pass; the two agree to
//! rounding noise and the tests pin that down.

use crate::error::{ModelError, Result};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

/// Side length and dimension of the discrete torus (Z/nZ)^d, d in 1..=3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    d: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(ModelError::BadDimension(d));
        }
        if n == 0 {
            return Err(ModelError::EmptyGrid);
        }
        Ok(TorusGrid { d, n })
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of sites, n^d.
    #[inline]
    pub fn sites(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Coordinates of a site index; entries past `d` are zero.
    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let mut c = [0usize; 3];
        let mut rest = idx;
        for ax in (0..self.d).rev() {
            c[ax] = rest % self.n;
            rest /= self.n;
        }
        c
    }

    /// Site index of a coordinate tuple (entries taken mod n).
    #[inline]
    pub fn index(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for ax in 0..self.d {
            idx = idx * self.n + coords[ax] % self.n;
        }
        idx
    }

    /// Site index of the componentwise difference x - y on the torus.
    #[inline]
    pub fn diff(&self, x: usize, y: usize) -> usize {
        let cx = self.coords(x);
        let cy = self.coords(y);
        let mut idx = 0;
        for ax in 0..self.d {
            idx = idx * self.n + (cx[ax] + self.n - cy[ax]) % self.n;
        }
        idx
    }

    /// Macroscopic position x/n of a site, reduced to [-1/2, 1/2)^d.
    #[inline]
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        let mut p = [0.0; 3];
        for ax in 0..self.d {
            p[ax] = wrap_unit(c[ax] as f64 / self.n as f64);
        }
        p
    }
}

/// Reduces a coordinate to the fundamental domain [-1/2, 1/2).
#[inline]
pub fn wrap_unit(v: f64) -> f64 {
    let mut w = v - v.floor();
    if w >= 0.5 {
        w -= 1.0;
    }
    w
}

/// Interaction kernels: nonnegative, even, unit integral over the torus.
///
/// All are products of one-axis factors, so the unit integral holds in any
/// dimension by construction:
/// - `Uniform`: J = 1.
/// - `Box { radius }`: (2 radius)^-1 on |v| <= radius per axis, radius in (0, 1/2].
/// - `Cosine`: 1 + cos(2 pi v) per axis.
/// - `WrappedGaussian { bandwidth }`: the wrapped normal density per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KacKernel {
    Uniform,
    Box { radius: f64 },
    Cosine,
    WrappedGaussian { bandwidth: f64 },
}

impl KacKernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KacKernel::Uniform | KacKernel::Cosine => Ok(()),
            KacKernel::Box { radius } => {
                if radius.is_finite() && radius > 0.0 && radius <= 0.5 {
                    Ok(())
                } else {
                    Err(ModelError::KernelParam(format!(
                        "box radius {radius} outside (0, 0.5]"
                    )))
                }
            }
            KacKernel::WrappedGaussian { bandwidth } => {
                if bandwidth.is_finite() && bandwidth > 0.0 {
                    Ok(())
                } else {
                    Err(ModelError::KernelParam(format!(
                        "gaussian bandwidth {bandwidth} not positive"
                    )))
                }
            }
        }
    }

    /// Kernel value at a displacement, components wrapped to [-1/2, 1/2).
    pub fn value(&self, v: &[f64]) -> f64 {
        let mut out = 1.0;
        for &vi in v {
            let w = wrap_unit(vi);
            out *= match *self {
                KacKernel::Uniform => 1.0,
                KacKernel::Box { radius } => {
                    if w.abs() <= radius {
                        0.5 / radius
                    } else {
                        0.0
                    }
                }
                KacKernel::Cosine => 1.0 + (2.0 * std::f64::consts::PI * w).cos(),
                KacKernel::WrappedGaussian { bandwidth } => wrapped_gaussian(w, bandwidth),
            };
        }
        out
    }
}

/// Wrapped normal density on the unit circle: Σ_k φ_σ(t + k).
fn wrapped_gaussian(t: f64, sigma: f64) -> f64 {
    let reach = (8.0 * sigma).ceil() as i64 + 2;
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let mut s = 0.0;
    for k in -reach..=reach {
        let z = (t + k as f64) / sigma;
        s += (-0.5 * z * z).exp();
    }
    s * norm
}

/// A real field over the sites of a grid, in lexicographic site order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.sites() {
            return Err(ModelError::GridMismatch(format!(
                "field has {} values, grid has {} sites",
                values.len(),
                grid.sites()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        ScalarField {
            grid,
            values: vec![c; grid.sites()],
        }
    }

    #[inline]
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    /// Quadrature mean (1/n^d) Σ_x f(x).
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Quadrature inner product (1/n^d) Σ_x f(x) g(x).
    pub fn dot(&self, other: &ScalarField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(ModelError::GridMismatch("dot on different grids".into()));
        }
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        Ok(s / self.values.len() as f64)
    }
}

/// Samples a kernel on grid displacements; with `renormalize` the stencil is
/// rescaled so its discrete mean is exactly 1.
pub fn discretize_kernel(
    kernel: &KacKernel,
    grid: TorusGrid,
    renormalize: bool,
) -> Result<ScalarField> {
    kernel.validate()?;
    let mut values: Vec<f64> = (0..grid.sites())
        .map(|x| {
            let p = grid.point(x);
            kernel.value(&p[..grid.d()])
        })
        .collect();
    if renormalize {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        if mean <= 0.0 {
            return Err(ModelError::KernelParam(
                "discretized kernel has nonpositive mean".into(),
            ));
        }
        for v in &mut values {
            *v /= mean;
        }
    }
    ScalarField::new(grid, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    Direct,
    Fft,
}

/// Torus convolution (stencil * f)(x) = (1/n^d) Σ_y stencil(x - y) f(y).
pub fn convolve(stencil: &ScalarField, f: &ScalarField, mode: ConvMode) -> Result<ScalarField> {
    if stencil.grid != f.grid {
        return Err(ModelError::GridMismatch(
            "convolve: stencil and field on different grids".into(),
        ));
    }
    match mode {
        ConvMode::Direct => convolve_direct(stencil, f),
        ConvMode::Fft => convolve_fft(stencil, f),
    }
}

fn convolve_direct(stencil: &ScalarField, f: &ScalarField) -> Result<ScalarField> {
    let grid = stencil.grid;
    let nsites = grid.sites();
    let inv = 1.0 / nsites as f64;
    let mut out = vec![0.0; nsites];
    for (x, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for y in 0..nsites {
            acc += stencil.values[grid.diff(x, y)] * f.values[y];
        }
        *o = acc * inv;
    }
    ScalarField::new(grid, out)
}

fn convolve_fft(stencil: &ScalarField, f: &ScalarField) -> Result<ScalarField> {
    let grid = stencil.grid;
    let nsites = grid.sites();
    let mut a: Vec<Complex64> = stencil
        .values
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    let mut b: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_all_axes(&mut a, grid, true);
    fft_all_axes(&mut b, grid, true);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= *y;
    }
    fft_all_axes(&mut a, grid, false);
    // one 1/N for the unnormalized inverse transform, one for the torus average
    let scale = 1.0 / (nsites as f64 * nsites as f64);
    let out = a.iter().map(|z| z.re * scale).collect();
    ScalarField::new(grid, out)
}

/// In-place FFT along every axis of a row-major d-dimensional buffer.
fn fft_all_axes(buf: &mut [Complex64], grid: TorusGrid, forward: bool) {
    let n = grid.n();
    let d = grid.d();
    let mut planner = FftPlanner::<f64>::new();
    let plan = if forward {
        planner.plan_fft_forward(n)
    } else {
        planner.plan_fft_inverse(n)
    };
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..d {
        // stride of `axis` in lexicographic layout: n^(d-1-axis)
        let stride = n.pow((d - 1 - axis) as u32);
        let block = stride * n;
        let nlines = buf.len() / n;
        for l in 0..nlines {
            let start = (l / stride) * block + (l % stride);
            for (j, slot) in line.iter_mut().enumerate() {
                *slot = buf[start + j * stride];
            }
            plan.process(&mut line);
            for (j, &v) in line.iter().enumerate() {
                buf[start + j * stride] = v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn grid_validation() {
        assert!(TorusGrid::new(0, 4).is_err());
        assert!(TorusGrid::new(4, 4).is_err());
        assert!(TorusGrid::new(2, 0).is_err());
        assert!(TorusGrid::new(3, 5).is_ok());
    }

    #[test]
    fn index_coords_roundtrip() {
        for d in 1..=3 {
            let g = TorusGrid::new(d, 5).unwrap();
            for idx in 0..g.sites() {
                let c = g.coords(idx);
                assert_eq!(g.index(&c[..d]), idx);
            }
        }
    }

    #[test]
    fn diff_matches_coordinate_arithmetic() {
        let g = TorusGrid::new(2, 4).unwrap();
        for x in 0..g.sites() {
            for y in 0..g.sites() {
                let cx = g.coords(x);
                let cy = g.coords(y);
                let want = g.index(&[(cx[0] + 4 - cy[0]) % 4, (cx[1] + 4 - cy[1]) % 4]);
                assert_eq!(g.diff(x, y), want);
            }
        }
    }

    #[test]
    fn box_kernel_point_value() {
        let k = KacKernel::Box { radius: 0.25 };
        assert_eq!(k.value(&[0.1]), 2.0);
        assert_eq!(k.value(&[0.25]), 2.0);
        assert_eq!(k.value(&[0.3]), 0.0);
        // wrap: 0.9 is distance 0.1
        assert_eq!(k.value(&[0.9]), 2.0);
    }

    #[test]
    fn kernel_param_validation() {
        assert!(KacKernel::Box { radius: 0.0 }.validate().is_err());
        assert!(KacKernel::Box { radius: 0.6 }.validate().is_err());
        assert!(KacKernel::WrappedGaussian { bandwidth: -1.0 }.validate().is_err());
        assert!(KacKernel::Box { radius: 0.5 }.validate().is_ok());
    }

    #[test]
    fn kernels_are_even_on_grid_points() {
        let g = TorusGrid::new(1, 17).unwrap();
        for k in [
            KacKernel::Uniform,
            KacKernel::Box { radius: 0.3 },
            KacKernel::Cosine,
            KacKernel::WrappedGaussian { bandwidth: 0.2 },
        ] {
            for x in 0..17 {
                let p = g.point(x)[0];
                let (a, b) = (k.value(&[p]), k.value(&[-p]));
                assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()), "{k:?} at {p}");
            }
        }
    }

    // reference values from an independent long-truncation wrapped sum
    #[test]
    fn wrapped_gaussian_matches_reference() {
        let k = KacKernel::WrappedGaussian { bandwidth: 0.2 };
        let cases = [
            (0.0, 1.9947262692023107),
            (0.125, 1.640944281584654),
            (0.25, 0.9150084119269561),
            (0.5, 0.17528300493811977),
        ];
        for (v, want) in cases {
            assert!((k.value(&[v]) - want).abs() < 1e-10, "at {v}");
        }
        let st = discretize_kernel(&k, TorusGrid::new(1, 64).unwrap(), false).unwrap();
        assert!((st.mean() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn smooth_kernels_integrate_to_one() {
        let g = TorusGrid::new(1, 512).unwrap();
        for k in [KacKernel::Cosine, KacKernel::WrappedGaussian { bandwidth: 0.15 }] {
            let st = discretize_kernel(&k, g, false).unwrap();
            assert!((st.mean() - 1.0).abs() < 1e-12, "{k:?}");
        }
        let g2 = TorusGrid::new(2, 48).unwrap();
        let st = discretize_kernel(&KacKernel::Cosine, g2, false).unwrap();
        assert!((st.mean() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn renormalized_stencil_has_unit_mean() {
        let g = TorusGrid::new(1, 8).unwrap();
        let st = discretize_kernel(&KacKernel::Box { radius: 0.25 }, g, true).unwrap();
        assert!((st.mean() - 1.0).abs() < 1e-14);
        // raw mean differs: 5 of 8 displacements inside the box at height 2
        let raw = discretize_kernel(&KacKernel::Box { radius: 0.25 }, g, false).unwrap();
        assert!((raw.mean() - 1.25).abs() < 1e-14);
    }

    fn pseudo_field(grid: TorusGrid, seed: u64) -> ScalarField {
        let key = StreamKey::from_seed(seed);
        let values = (0..grid.sites()).map(|i| key.uniform(i as u64) - 0.3).collect();
        ScalarField::new(grid, values).unwrap()
    }

    #[test]
    fn fft_matches_direct() {
        for (d, n) in [(1, 16), (1, 15), (2, 8), (3, 4)] {
            let g = TorusGrid::new(d, n).unwrap();
            let st = discretize_kernel(&KacKernel::WrappedGaussian { bandwidth: 0.3 }, g, true)
                .unwrap();
            let f = pseudo_field(g, 42 + n as u64);
            let a = convolve(&st, &f, ConvMode::Direct).unwrap();
            let b = convolve(&st, &f, ConvMode::Fft).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-12, "d={d} n={n}");
            }
        }
    }

    #[test]
    fn uniform_stencil_convolution_is_mean() {
        let g = TorusGrid::new(2, 6).unwrap();
        let st = discretize_kernel(&KacKernel::Uniform, g, true).unwrap();
        let f = pseudo_field(g, 7);
        let c = convolve(&st, &f, ConvMode::Fft).unwrap();
        for v in c.values() {
            assert!((v - f.mean()).abs() < 1e-13);
        }
    }

    #[test]
    fn convolution_preserves_mean_and_positivity() {
        let g = TorusGrid::new(1, 32).unwrap();
        let st = discretize_kernel(&KacKernel::Box { radius: 0.2 }, g, true).unwrap();
        let mut f = pseudo_field(g, 9);
        for v in f.values_mut() {
            *v = v.abs();
        }
        let c = convolve(&st, &f, ConvMode::Fft).unwrap();
        assert!((c.mean() - f.mean()).abs() < 1e-13);
        for v in c.values() {
            assert!(*v >= -1e-15);
        }
    }

    #[test]
    fn convolution_is_self_adjoint_for_even_stencils() {
        let g = TorusGrid::new(2, 5).unwrap();
        let st = discretize_kernel(&KacKernel::Cosine, g, true).unwrap();
        let f = pseudo_field(g, 1);
        let h = pseudo_field(g, 2);
        let lhs = convolve(&st, &f, ConvMode::Direct).unwrap().dot(&h).unwrap();
        let rhs = convolve(&st, &h, ConvMode::Direct).unwrap().dot(&f).unwrap();
        assert!((lhs - rhs).abs() < 1e-13);
    }
}
