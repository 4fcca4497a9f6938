//! Empirical color measures, density profiles, dilution fields, the weak
//! metric, coarse-graining, and realization of target profiles on a grid.

use std::f64::consts::TAU;

use crate::error::{ModelError, Result};
use crate::sampler::ColorConfiguration;
use crate::torus::TorusGrid;

/// Per-cell simplex tolerance for density profiles.
pub const SIMPLEX_TOL: f64 = 1e-12;

fn check_site_list(sites: &[usize], grid: TorusGrid) -> Result<()> {
    if sites.is_empty() {
        return Err(ModelError::BadSubvolume("empty site list".into()));
    }
    let l = grid.sites();
    for w in sites.windows(2) {
        if w[0] >= w[1] {
            return Err(ModelError::BadSubvolume(
                "sites must be strictly increasing".into(),
            ));
        }
    }
    if *sites.last().unwrap() >= l {
        return Err(ModelError::BadSubvolume(format!(
            "site {} outside grid of {} sites",
            sites.last().unwrap(),
            l
        )));
    }
    Ok(())
}

/// Empirical color measure of a configuration on a volume: for each color an
/// atom of mass 1/|volume| at x/n for every occupied site x of that color.
#[derive(Debug, Clone)]
pub struct EmpiricalProfile {
    grid: TorusGrid,
    q: u8,
    sites_by_color: Vec<Vec<usize>>,
    total: usize,
}

impl EmpiricalProfile {
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn q(&self) -> u8 {
        self.q
    }

    /// Number of sites carrying mass.
    pub fn total_sites(&self) -> usize {
        self.total
    }

    /// Sites of one color, ascending.
    pub fn sites_of(&self, color: u8) -> &[usize] {
        &self.sites_by_color[color as usize]
    }

    /// Total mass of one color component.
    pub fn mass_of(&self, color: u8) -> f64 {
        self.sites_by_color[color as usize].len() as f64 / self.total as f64
    }

    pub fn color_masses(&self) -> Vec<f64> {
        (0..self.q).map(|a| self.mass_of(a)).collect()
    }

    /// Normalized counting measure of a site set, as a single-color profile.
    pub fn counting(grid: TorusGrid, sites: Vec<usize>) -> Result<Self> {
        check_site_list(&sites, grid)?;
        let total = sites.len();
        Ok(EmpiricalProfile {
            grid,
            q: 1,
            sites_by_color: vec![sites],
            total,
        })
    }
}

/// Builds the empirical color measure of `cfg` restricted to `volume`
/// (`None` means the whole occupied domain of `cfg`).
pub fn empirical_profile(
    cfg: &ColorConfiguration,
    volume: Option<&[usize]>,
) -> Result<EmpiricalProfile> {
    let grid = cfg.grid;
    let mut by_color = vec![Vec::new(); cfg.q as usize];
    match volume {
        None => {
            if cfg.is_empty() {
                return Err(ModelError::BadSubvolume("empty domain".into()));
            }
            for i in 0..cfg.len() {
                by_color[cfg.colors[i] as usize].push(cfg.site_at(i));
            }
        }
        Some(vol) => {
            check_site_list(vol, grid)?;
            let mut color_at = vec![None::<u8>; grid.sites()];
            for i in 0..cfg.len() {
                color_at[cfg.site_at(i)] = Some(cfg.colors[i]);
            }
            for &x in vol {
                match color_at[x] {
                    Some(c) => by_color[c as usize].push(x),
                    None => {
                        return Err(ModelError::BadSubvolume(format!(
                            "site {x} not in the configuration domain"
                        )))
                    }
                }
            }
        }
    }
    let total: usize = by_color.iter().map(|v| v.len()).sum();
    for v in &mut by_color {
        v.sort_unstable();
    }
    Ok(EmpiricalProfile {
        grid,
        q: cfg.q,
        sites_by_color: by_color,
        total,
    })
}

/// Full-torus site list with the single cell containing u removed.
pub fn perforated_volume(grid: TorusGrid, u: &[f64]) -> Result<Vec<usize>> {
    if u.len() != grid.d() {
        return Err(ModelError::GridMismatch(format!(
            "point has {} coordinates, grid dimension is {}",
            u.len(),
            grid.d()
        )));
    }
    let n = grid.n();
    let mut c = [0usize; 3];
    for ax in 0..grid.d() {
        c[ax] = ((u[ax].rem_euclid(1.0) * n as f64).floor() as usize).min(n - 1);
    }
    let hole = grid.index(&c[..grid.d()]);
    if grid.sites() == 1 {
        return Err(ModelError::BadSubvolume(
            "perforation empties a one-site grid".into(),
        ));
    }
    Ok((0..grid.sites()).filter(|&x| x != hole).collect())
}

/// Block-constant color densities on a mesh: per occupied cell a probability
/// vector over colors; unoccupied cells carry the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    mesh: TorusGrid,
    q: u8,
    values: Vec<f64>,
    occupied: Vec<bool>,
}

impl DensityProfile {
    pub fn new(mesh: TorusGrid, q: u8, values: Vec<f64>) -> Result<Self> {
        let occupied = vec![true; mesh.sites()];
        Self::with_occupancy(mesh, q, values, occupied)
    }

    pub fn with_occupancy(
        mesh: TorusGrid,
        q: u8,
        values: Vec<f64>,
        occupied: Vec<bool>,
    ) -> Result<Self> {
        if q == 0 {
            return Err(ModelError::BadColorCount(0));
        }
        let cells = mesh.sites();
        if values.len() != cells * q as usize || occupied.len() != cells {
            return Err(ModelError::GridMismatch(format!(
                "{} values for {} cells x {} colors",
                values.len(),
                cells,
                q
            )));
        }
        for cell in 0..cells {
            let row = &values[cell * q as usize..(cell + 1) * q as usize];
            if row.iter().any(|&v| v < -SIMPLEX_TOL) {
                return Err(ModelError::InvalidArg(format!(
                    "negative density in cell {cell}"
                )));
            }
            let s: f64 = row.iter().sum();
            let want = if occupied[cell] { 1.0 } else { 0.0 };
            if (s - want).abs() > SIMPLEX_TOL {
                return Err(ModelError::InvalidArg(format!(
                    "cell {cell} mass {s} should be {want}"
                )));
            }
        }
        Ok(DensityProfile {
            mesh,
            q,
            values,
            occupied,
        })
    }

    /// Constant profile taking the same color vector in every cell.
    pub fn flat(mesh: TorusGrid, weights: &[f64]) -> Result<Self> {
        let q = weights.len();
        if q == 0 || q > u8::MAX as usize {
            return Err(ModelError::BadColorCount(q));
        }
        let mut values = Vec::with_capacity(mesh.sites() * q);
        for _ in 0..mesh.sites() {
            values.extend_from_slice(weights);
        }
        Self::new(mesh, q as u8, values)
    }

    pub fn mesh(&self) -> TorusGrid {
        self.mesh
    }

    pub fn q(&self) -> u8 {
        self.q
    }

    pub fn cells(&self) -> usize {
        self.mesh.sites()
    }

    #[inline]
    pub fn value(&self, cell: usize, color: u8) -> f64 {
        self.values[cell * self.q as usize + color as usize]
    }

    pub fn row(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.q as usize..(cell + 1) * self.q as usize]
    }

    pub fn is_occupied(&self, cell: usize) -> bool {
        self.occupied[cell]
    }

    pub fn occupied_flags(&self) -> &[bool] {
        &self.occupied
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Cell-wise dilution density rho on a mesh, with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct DilutionField {
    mesh: TorusGrid,
    rho: Vec<f64>,
}

impl DilutionField {
    pub fn new(mesh: TorusGrid, rho: Vec<f64>) -> Result<Self> {
        if rho.len() != mesh.sites() {
            return Err(ModelError::GridMismatch(format!(
                "{} dilution values for {} cells",
                rho.len(),
                mesh.sites()
            )));
        }
        if rho.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(ModelError::InvalidArg(
                "dilution values must lie in [0, 1]".into(),
            ));
        }
        Ok(DilutionField { mesh, rho })
    }

    pub fn constant(mesh: TorusGrid, c: f64) -> Result<Self> {
        Self::new(mesh, vec![c; mesh.sites()])
    }

    pub fn mesh(&self) -> TorusGrid {
        self.mesh
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    #[inline]
    pub fn at(&self, cell: usize) -> f64 {
        self.rho[cell]
    }

    /// Total mass of rho against Lebesgue measure on the unit torus.
    pub fn total_mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() / self.rho.len() as f64
    }

    /// Normalized density rho / total mass, one value per cell.
    pub fn normalized(&self) -> Result<Vec<f64>> {
        let m = self.total_mass();
        if m <= 0.0 {
            return Err(ModelError::InvalidArg(
                "dilution field has zero total mass".into(),
            ));
        }
        Ok(self.rho.iter().map(|&v| v / m).collect())
    }

    /// The probability measure with density rho / total mass, as a
    /// single-color measure for weak-distance comparisons.
    pub fn normalized_density(&self) -> Result<DilutionDensity> {
        Ok(DilutionDensity {
            mesh: self.mesh,
            weights: self.normalized()?,
        })
    }
}

/// A color-blind measure with a block-constant density on the mesh.
#[derive(Debug, Clone)]
pub struct DilutionDensity {
    mesh: TorusGrid,
    weights: Vec<f64>,
}

/// One test function: a Fourier mode on the torus times a color indicator.
/// `freq` is canonical: either zero, or its first nonzero entry is positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestFunction {
    pub freq: [i64; 3],
    pub sine: bool,
    pub color: u8,
}

impl TestFunction {
    /// Value at a point carrying the given color; sup norm is at most 1.
    pub fn eval(&self, u: &[f64], color: u8) -> f64 {
        if color != self.color {
            return 0.0;
        }
        let mut phase = 0.0;
        for (ax, &c) in u.iter().enumerate() {
            phase += self.freq[ax] as f64 * c;
        }
        let t = TAU * phase;
        if self.sine {
            t.sin()
        } else {
            t.cos()
        }
    }
}

/// Ordered family metrizing weak convergence: Fourier modes by total
/// frequency, then lexicographic canonical frequency vector, cosine before
/// sine, colors ascending innermost. The j-th function (0-based) carries
/// weight 2^-(j+1); truncating after K functions leaves a tail below 2^-K.
#[derive(Debug, Clone)]
pub struct TestFunctionFamily {
    d: usize,
    q: u8,
    funcs: Vec<TestFunction>,
}

fn canonical_shell(d: usize, s: i64) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    if s == 0 {
        out.push([0, 0, 0]);
        return out;
    }
    let mut k = [0i64; 3];
    let mut emit = |k: [i64; 3]| {
        let norm: i64 = k.iter().map(|v| v.abs()).sum();
        if norm != s {
            return;
        }
        let first = k.iter().find(|&&v| v != 0).copied().unwrap_or(0);
        if first > 0 {
            out.push(k);
        }
    };
    for a0 in -s..=s {
        k[0] = a0;
        if d == 1 {
            emit(k);
            continue;
        }
        for a1 in -s..=s {
            k[1] = a1;
            if d == 2 {
                emit(k);
                continue;
            }
            for a2 in -s..=s {
                k[2] = a2;
                emit(k);
            }
            k[2] = 0;
        }
        k[1] = 0;
    }
    out.sort_unstable();
    out
}

impl TestFunctionFamily {
    /// The standard family of `len` functions for dimension `d` and `q` colors.
    pub fn standard(d: usize, q: u8, len: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(ModelError::BadDimension(d));
        }
        if q == 0 {
            return Err(ModelError::BadColorCount(0));
        }
        if len == 0 {
            return Err(ModelError::InvalidArg(
                "family length must be at least 1".into(),
            ));
        }
        let mut funcs = Vec::with_capacity(len);
        let mut s = 0i64;
        'fill: loop {
            for freq in canonical_shell(d, s) {
                let trigs: &[bool] = if s == 0 { &[false] } else { &[false, true] };
                for &sine in trigs {
                    for color in 0..q {
                        funcs.push(TestFunction { freq, sine, color });
                        if funcs.len() == len {
                            break 'fill;
                        }
                    }
                }
            }
            s += 1;
        }
        Ok(TestFunctionFamily { d, q, funcs })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn q(&self) -> u8 {
        self.q
    }

    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }

    pub fn funcs(&self) -> &[TestFunction] {
        &self.funcs
    }

    /// Weight of the j-th function, 2^-(j+1).
    pub fn weight(j: usize) -> f64 {
        0.5f64.powi(j as i32 + 1)
    }

    /// Upper bound for the discarded tail of the metric series.
    pub fn tail(&self) -> f64 {
        0.5f64.powi(self.funcs.len() as i32)
    }
}

/// Measures on torus x colors that integrate test functions exactly.
pub trait ProfileMeasure {
    fn integrate(&self, f: &TestFunction) -> f64;
}

impl ProfileMeasure for EmpiricalProfile {
    fn integrate(&self, f: &TestFunction) -> f64 {
        if f.color >= self.q {
            return 0.0;
        }
        let sites = &self.sites_by_color[f.color as usize];
        let sum: f64 = sites
            .iter()
            .map(|&x| {
                let p = self.grid.point(x);
                let mut phase = 0.0;
                for ax in 0..self.grid.d() {
                    phase += f.freq[ax] as f64 * p[ax];
                }
                let t = TAU * phase;
                if f.sine {
                    t.sin()
                } else {
                    t.cos()
                }
            })
            .sum();
        sum / self.total as f64
    }
}

/// Exact integral of exp(2 pi i k.u) over the cell box, as (re, im).
fn cell_mode_integral(mesh: TorusGrid, cell: usize, freq: &[i64; 3]) -> (f64, f64) {
    let c = mesh.coords(cell);
    let n = mesh.n() as f64;
    let (mut re, mut im) = (1.0, 0.0);
    for ax in 0..mesh.d() {
        let k = freq[ax] as f64;
        let (fr, fi) = if freq[ax] == 0 {
            (1.0 / n, 0.0)
        } else {
            let a = c[ax] as f64 / n;
            let b = (c[ax] as f64 + 1.0) / n;
            let (ta, tb) = (TAU * k * a, TAU * k * b);
            let dr = tb.cos() - ta.cos();
            let di = tb.sin() - ta.sin();
            let denom = TAU * k;
            (di / denom, -dr / denom)
        };
        let nr = re * fr - im * fi;
        let ni = re * fi + im * fr;
        re = nr;
        im = ni;
    }
    (re, im)
}

impl ProfileMeasure for DensityProfile {
    fn integrate(&self, f: &TestFunction) -> f64 {
        if f.color >= self.q {
            return 0.0;
        }
        let mesh = self.mesh;
        let freq = f.freq;
        let sine = f.sine;
        (0..self.cells())
            .map(|cell| {
                let w = self.value(cell, f.color);
                if w == 0.0 {
                    return 0.0;
                }
                let (re, im) = cell_mode_integral(mesh, cell, &freq);
                w * if sine { im } else { re }
            })
            .sum()
    }
}

impl ProfileMeasure for DilutionDensity {
    fn integrate(&self, f: &TestFunction) -> f64 {
        if f.color != 0 {
            return 0.0;
        }
        let mesh = self.mesh;
        let freq = f.freq;
        let sine = f.sine;
        (0..mesh.sites())
            .map(|cell| {
                let w = self.weights[cell];
                if w == 0.0 {
                    return 0.0;
                }
                let (re, im) = cell_mode_integral(mesh, cell, &freq);
                w * if sine { im } else { re }
            })
            .sum()
    }
}

/// Truncated weak metric between two measures: the weighted sum of
/// |mu(f_j) - nu(f_j)| / (1 + |mu(f_j) - nu(f_j)|) over the family, plus a
/// rigorous bound for the discarded tail. Returns (value, tail).
pub fn weak_distance<A, B>(a: &A, b: &B, family: &TestFunctionFamily) -> (f64, f64)
where
    A: ProfileMeasure + ?Sized,
    B: ProfileMeasure + ?Sized,
{
    let mut value = 0.0;
    for (j, f) in family.funcs().iter().enumerate() {
        let delta = (a.integrate(f) - b.integrate(f)).abs();
        value += TestFunctionFamily::weight(j) * delta / (1.0 + delta);
    }
    (value, family.tail())
}

/// Grouping of a fine mesh into the cells of a coarser mesh with the same
/// dimension and a dividing side length.
#[derive(Debug, Clone, Copy)]
pub struct BlockPartition {
    fine: TorusGrid,
    coarse: TorusGrid,
}

impl BlockPartition {
    pub fn new(fine: TorusGrid, coarse: TorusGrid) -> Result<Self> {
        if fine.d() != coarse.d() {
            return Err(ModelError::BadPartition(format!(
                "dimension {} vs {}",
                fine.d(),
                coarse.d()
            )));
        }
        if fine.n() % coarse.n() != 0 {
            return Err(ModelError::BadPartition(format!(
                "coarse side {} does not divide fine side {}",
                coarse.n(),
                fine.n()
            )));
        }
        Ok(BlockPartition { fine, coarse })
    }

    pub fn fine(&self) -> TorusGrid {
        self.fine
    }

    pub fn coarse(&self) -> TorusGrid {
        self.coarse
    }

    /// Coarse cell containing a fine cell.
    pub fn block_of(&self, cell: usize) -> usize {
        let ratio = self.fine.n() / self.coarse.n();
        let c = self.fine.coords(cell);
        let mut cc = [0usize; 3];
        for ax in 0..self.fine.d() {
            cc[ax] = c[ax] / ratio;
        }
        self.coarse.index(&cc[..self.fine.d()])
    }
}

/// Dilution-weighted block averages of a profile, constant on each coarse
/// cell. Blocks with zero weight get the zero vector and are flagged
/// unoccupied.
pub fn coarse_grain(
    profile: &DensityProfile,
    part: &BlockPartition,
    dilution: Option<&DilutionField>,
) -> Result<DensityProfile> {
    if part.fine() != profile.mesh() {
        return Err(ModelError::GridMismatch(
            "partition fine mesh differs from profile mesh".into(),
        ));
    }
    if let Some(rho) = dilution {
        if rho.mesh() != profile.mesh() {
            return Err(ModelError::GridMismatch(
                "dilution mesh differs from profile mesh".into(),
            ));
        }
    }
    let q = profile.q() as usize;
    let blocks = part.coarse().sites();
    let mut sums = vec![0.0; blocks * q];
    let mut mass = vec![0.0; blocks];
    for cell in 0..profile.cells() {
        if !profile.is_occupied(cell) {
            continue;
        }
        let w = dilution.map_or(1.0, |rho| rho.at(cell));
        if w == 0.0 {
            continue;
        }
        let b = part.block_of(cell);
        mass[b] += w;
        for a in 0..q {
            sums[b * q + a] += w * profile.row(cell)[a];
        }
    }
    let mut occupied = vec![false; blocks];
    for b in 0..blocks {
        if mass[b] > 0.0 {
            occupied[b] = true;
            for a in 0..q {
                sums[b * q + a] /= mass[b];
            }
        }
    }
    DensityProfile::with_occupancy(part.coarse(), profile.q(), sums, occupied)
}

/// Mesh cell containing a grid site, by coordinate scaling.
fn cell_of_site(grid: TorusGrid, mesh: TorusGrid, site: usize) -> usize {
    let c = grid.coords(site);
    let mut mc = [0usize; 3];
    for ax in 0..grid.d() {
        mc[ax] = c[ax] * mesh.n() / grid.n();
    }
    mesh.index(&mc[..grid.d()])
}

/// Per-cell color frequencies of an empirical measure on a mesh: its
/// coarse-graining to block-constant densities. Cells without atoms are
/// flagged unoccupied.
pub fn density_from_empirical(emp: &EmpiricalProfile, mesh: TorusGrid) -> Result<DensityProfile> {
    if mesh.d() != emp.grid().d() {
        return Err(ModelError::GridMismatch(format!(
            "mesh dimension {} vs grid dimension {}",
            mesh.d(),
            emp.grid().d()
        )));
    }
    if mesh.n() > emp.grid().n() {
        return Err(ModelError::GridMismatch(
            "mesh finer than the configuration grid".into(),
        ));
    }
    let q = emp.q() as usize;
    let cells = mesh.sites();
    let mut counts = vec![0usize; cells * q];
    let mut totals = vec![0usize; cells];
    for a in 0..emp.q() {
        for &x in emp.sites_of(a) {
            let cell = cell_of_site(emp.grid(), mesh, x);
            counts[cell * q + a as usize] += 1;
            totals[cell] += 1;
        }
    }
    let mut values = vec![0.0; cells * q];
    let mut occupied = vec![false; cells];
    for cell in 0..cells {
        if totals[cell] > 0 {
            occupied[cell] = true;
            for a in 0..q {
                values[cell * q + a] = counts[cell * q + a] as f64 / totals[cell] as f64;
            }
        }
    }
    DensityProfile::with_occupancy(mesh, emp.q(), values, occupied)
}

/// Outcome of realizing a target profile at a finite grid size.
#[derive(Debug, Clone)]
pub struct Realization {
    pub configuration: ColorConfiguration,
    /// Achieved per-cell color frequencies on the target mesh.
    pub achieved: DensityProfile,
    /// Largest |achieved - target| over occupied cells and colors.
    pub max_deviation: f64,
}

/// Deterministic periodic coloring of the whole grid approximating the
/// target densities cell by cell.
pub fn realize_profile(target: &DensityProfile, grid: TorusGrid) -> Result<Realization> {
    let sites: Vec<usize> = (0..grid.sites()).collect();
    realize_on_sites(target, grid, &sites)
}

/// Colors the given sites so that within every target cell each color's
/// frequency differs from the target by less than one site's worth. The
/// coloring walks each cell's sites in lexicographic order and hands out
/// colors by a running-quota rule, which makes the pattern periodic whenever
/// the target is flat with rational entries. Fails when the achieved
/// frequencies land further than 2/n from the target.
pub fn realize_on_sites(
    target: &DensityProfile,
    grid: TorusGrid,
    sites: &[usize],
) -> Result<Realization> {
    if target.mesh().d() != grid.d() {
        return Err(ModelError::GridMismatch(format!(
            "target dimension {} vs grid dimension {}",
            target.mesh().d(),
            grid.d()
        )));
    }
    if target.mesh().n() > grid.n() {
        return Err(ModelError::Infeasible(
            "target mesh finer than the grid".into(),
        ));
    }
    if (0..target.cells()).any(|c| !target.is_occupied(c)) {
        return Err(ModelError::InvalidArg(
            "target has unoccupied cells".into(),
        ));
    }
    check_site_list(sites, grid)?;
    let mesh = target.mesh();
    let q = target.q() as usize;
    let cells = mesh.sites();
    let mut cell_sites = vec![Vec::new(); cells];
    for &x in sites {
        cell_sites[cell_of_site(grid, mesh, x)].push(x);
    }
    let mut color_of = vec![0u8; grid.sites()];
    let mut values = vec![0.0; cells * q];
    let mut occupied = vec![false; cells];
    let mut max_dev = 0.0f64;
    for cell in 0..cells {
        let members = &cell_sites[cell];
        if members.is_empty() {
            continue;
        }
        occupied[cell] = true;
        let alpha = target.row(cell);
        let mut acc = vec![0.0f64; q];
        let mut counts = vec![0usize; q];
        for &x in members {
            let mut best = 0;
            for a in 0..q {
                acc[a] += alpha[a];
                if acc[a] > acc[best] {
                    best = a;
                }
            }
            acc[best] -= 1.0;
            counts[best] += 1;
            color_of[x] = best as u8;
        }
        let m = members.len() as f64;
        for a in 0..q {
            let f = counts[a] as f64 / m;
            values[cell * q + a] = f;
            max_dev = max_dev.max((f - alpha[a]).abs());
        }
    }
    let bound = 2.0 / grid.n() as f64 + 1e-12;
    if max_dev > bound {
        return Err(ModelError::Infeasible(format!(
            "best achievable deviation {max_dev:.6} exceeds {bound:.6}"
        )));
    }
    let colors: Vec<u8> = sites.iter().map(|&x| color_of[x]).collect();
    let configuration = ColorConfiguration::on_sites(grid, target.q(), sites.to_vec(), colors)?;
    let achieved = DensityProfile::with_occupancy(mesh, target.q(), values, occupied)?;
    Ok(Realization {
        configuration,
        achieved,
        max_deviation: max_dev,
    })
}

/// One row of a level-set convergence report.
#[derive(Debug, Clone)]
pub struct DilutionRow {
    pub n: usize,
    pub sites: usize,
    pub distance: f64,
    pub tail: f64,
}

/// Weak distances between normalized counting measures of a subvolume ladder
/// and the normalized dilution density.
#[derive(Debug, Clone)]
pub struct DilutionReport {
    pub rows: Vec<DilutionRow>,
    /// Whether the distances never increase along the ladder (up to 1e-12).
    pub nonincreasing: bool,
}

/// Evaluates how fast the subvolumes produced by `subvolume` approximate the
/// dilution target in the weak metric, over the ladder `ns`.
pub fn levelset_dilution(
    ns: &[usize],
    mut subvolume: impl FnMut(TorusGrid) -> Result<Vec<usize>>,
    target: &DilutionField,
    family: &TestFunctionFamily,
) -> Result<DilutionReport> {
    if ns.is_empty() {
        return Err(ModelError::InvalidArg("empty size ladder".into()));
    }
    if family.q() != 1 {
        return Err(ModelError::InvalidArg(
            "dilution comparisons need a single-color family".into(),
        ));
    }
    let density = target.normalized_density()?;
    let d = target.mesh().d();
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let grid = TorusGrid::new(d, n)?;
        let sites = subvolume(grid)?;
        let counting = EmpiricalProfile::counting(grid, sites)?;
        let (distance, tail) = weak_distance(&counting, &density, family);
        rows.push(DilutionRow {
            n,
            sites: counting.total_sites(),
            distance,
            tail,
        });
    }
    let nonincreasing = rows
        .windows(2)
        .all(|w| w[1].distance <= w[0].distance + 1e-12);
    Ok(DilutionReport { rows, nonincreasing })
}
