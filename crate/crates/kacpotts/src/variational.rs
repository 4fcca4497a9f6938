//! The diluted rate functional on density profiles: evaluation, the
//! inhomogeneity/local-term decomposition, local temperature fields,
//! analytic gradients, and entropic mirror-descent minimization.

use crate::error::{ModelError, Result};
use crate::exec::{self, ExecMode};
use crate::profiles::{weak_distance, DensityProfile, DilutionField, TestFunctionFamily};
use crate::rng::StreamKey;
use crate::torus::{convolve, discretize_kernel, ConvMode, KacKernel, ScalarField, TorusGrid};

/// Iterates and logs are kept at least this far from the simplex boundary.
pub const ENTROPY_FLOOR: f64 = 1e-12;

/// Everything fixed in the rate functional: coupling, colors, the mesh, the
/// unit-mean discretized stencil and the dilution in raw and normalized form.
#[derive(Debug, Clone)]
pub struct RateContext {
    beta: f64,
    r: u8,
    mesh: TorusGrid,
    stencil: ScalarField,
    rho: Vec<f64>,
    rho_tilde: Vec<f64>,
    conv_mode: ConvMode,
    exec_mode: ExecMode,
}

impl RateContext {
    pub fn new(beta: f64, kernel: &KacKernel, dilution: &DilutionField, r: u8) -> Result<Self> {
        if r == 0 {
            return Err(ModelError::BadColorCount(0));
        }
        if !beta.is_finite() || beta < 0.0 {
            return Err(ModelError::InvalidArg(format!("bad beta {beta}")));
        }
        let mesh = dilution.mesh();
        let stencil = discretize_kernel(kernel, mesh, true)?;
        let rho_tilde = dilution.normalized()?;
        Ok(RateContext {
            beta,
            r,
            mesh,
            stencil,
            rho: dilution.rho().to_vec(),
            rho_tilde,
            conv_mode: ConvMode::Fft,
            exec_mode: ExecMode::default(),
        })
    }

    pub fn with_conv_mode(mut self, mode: ConvMode) -> Self {
        self.conv_mode = mode;
        self
    }

    pub fn with_exec_mode(mut self, mode: ExecMode) -> Self {
        self.exec_mode = mode;
        self
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn r(&self) -> u8 {
        self.r
    }

    pub fn mesh(&self) -> TorusGrid {
        self.mesh
    }

    pub fn rho_tilde(&self) -> &[f64] {
        &self.rho_tilde
    }

    pub fn stencil(&self) -> &ScalarField {
        &self.stencil
    }

    fn convolved(&self, values: Vec<f64>) -> Vec<f64> {
        let field = ScalarField::new(self.mesh, values).expect("mesh-sized buffer");
        convolve(&self.stencil, &field, self.conv_mode)
            .expect("same grid")
            .values()
            .to_vec()
    }

    fn check_profile(&self, profile: &DensityProfile) -> Result<()> {
        if profile.mesh() != self.mesh {
            return Err(ModelError::GridMismatch(
                "profile mesh differs from context mesh".into(),
            ));
        }
        if profile.q() != self.r {
            return Err(ModelError::BadColorCount(profile.q() as usize));
        }
        for cell in 0..profile.cells() {
            if !profile.is_occupied(cell) && self.rho_tilde[cell] > 0.0 {
                return Err(ModelError::InvalidArg(format!(
                    "cell {cell} has dilution mass but no density"
                )));
            }
        }
        Ok(())
    }
}

fn entropy_to_flat(row: &[f64]) -> f64 {
    let r = row.len() as f64;
    row.iter()
        .map(|&a| if a > 0.0 { a * (r * a).ln() } else { 0.0 })
        .sum()
}

/// Objective on raw cell-major values, no simplex validation; used by the
/// optimizer and finite-difference checks.
fn objective_raw(ctx: &RateContext, values: &[f64]) -> f64 {
    let m = ctx.mesh.sites();
    let r = ctx.r as usize;
    let inv_m = 1.0 / m as f64;
    let mut quad = 0.0;
    for a in 0..r {
        let h: Vec<f64> = (0..m)
            .map(|c| ctx.rho_tilde[c] * values[c * r + a])
            .collect();
        let conv = ctx.convolved(h.clone());
        quad += exec::sum_indexed(ctx.exec_mode, m, |c| conv[c] * h[c]) * inv_m;
    }
    let ent = exec::sum_indexed(ctx.exec_mode, m, |c| {
        if ctx.rho_tilde[c] == 0.0 {
            0.0
        } else {
            ctx.rho_tilde[c] * entropy_to_flat(&values[c * r..(c + 1) * r])
        }
    }) * inv_m;
    -ctx.beta * quad + ent
}

/// Value of the rate functional at a profile: the quadratic interaction term
/// plus the relative entropy to equidistribution, both integrated against
/// the normalized dilution.
pub fn rate_eval_direct(ctx: &RateContext, profile: &DensityProfile) -> Result<f64> {
    ctx.check_profile(profile)?;
    Ok(objective_raw(ctx, profile.values()))
}

/// The two summands of the rate functional's square-difference form.
#[derive(Debug, Clone, Copy)]
pub struct RateDecomposition {
    /// Flatness cost: (beta/2) sum_a of the rho-weighted double integral of
    /// (alpha_a(u) - alpha_a(v))^2 J(u - v).
    pub inhomogeneity: f64,
    /// Cell-wise free energy with the local temperature replacing beta.
    pub local: f64,
    pub total: f64,
}

/// Evaluates the square-difference decomposition by an explicit double sum,
/// independent of the convolution path of `rate_eval_direct`; the totals of
/// the two routes agree exactly because the stencil has unit mean.
pub fn rate_eval_decomposed(ctx: &RateContext, profile: &DensityProfile) -> Result<RateDecomposition> {
    ctx.check_profile(profile)?;
    let m = ctx.mesh.sites();
    let r = ctx.r as usize;
    let inv_m = 1.0 / m as f64;
    let values = profile.values();
    let mesh = ctx.mesh;
    let inhom = exec::sum_indexed(ctx.exec_mode, m, |c| {
        let wc = ctx.rho_tilde[c];
        if wc == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for cp in 0..m {
            let wp = ctx.rho_tilde[cp];
            if wp == 0.0 {
                continue;
            }
            let j = ctx.stencil.at(mesh.diff(c, cp));
            if j == 0.0 {
                continue;
            }
            let mut sq = 0.0;
            for a in 0..r {
                let d = values[c * r + a] - values[cp * r + a];
                sq += d * d;
            }
            acc += wc * wp * j * sq;
        }
        acc
    }) * inv_m * inv_m * ctx.beta / 2.0;
    let b = local_temperature(ctx, TemperatureConvention::Normalized)?;
    let local = exec::sum_indexed(ctx.exec_mode, m, |c| {
        let w = ctx.rho_tilde[c];
        if w == 0.0 {
            return 0.0;
        }
        let row = &values[c * r..(c + 1) * r];
        let sumsq: f64 = row.iter().map(|&a| a * a).sum();
        w * (-b.values()[c] * sumsq + entropy_to_flat(row))
    }) * inv_m;
    Ok(RateDecomposition {
        inhomogeneity: inhom,
        local,
        total: inhom + local,
    })
}

/// Which dilution density enters the local temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemperatureConvention {
    /// b = beta J * rho; bounded by beta since rho <= 1 and J has unit mean.
    Raw,
    /// b = beta J * rho-tilde; the coefficient of the local free energy.
    Normalized,
}

/// Site-dependent coupling strength b(u) on the mesh.
#[derive(Debug, Clone)]
pub struct LocalTemperatureField {
    mesh: TorusGrid,
    values: Vec<f64>,
}

impl LocalTemperatureField {
    pub fn mesh(&self) -> TorusGrid {
        self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }
}

pub fn local_temperature(
    ctx: &RateContext,
    convention: TemperatureConvention,
) -> Result<LocalTemperatureField> {
    let dens = match convention {
        TemperatureConvention::Raw => ctx.rho.clone(),
        TemperatureConvention::Normalized => ctx.rho_tilde.clone(),
    };
    let conv = ctx.convolved(dens);
    Ok(LocalTemperatureField {
        mesh: ctx.mesh,
        values: conv.into_iter().map(|v| ctx.beta * v).collect(),
    })
}

/// Euclidean gradient per quadrature weight, cell-major: entry (c, a) is
/// rho_tilde(c) (-2 beta (J * rho_tilde alpha_a)(c) + log(r alpha_a(c)) + 1),
/// with alpha floored at the entropy floor inside the log.
pub fn rate_gradient(ctx: &RateContext, profile: &DensityProfile) -> Result<Vec<f64>> {
    ctx.check_profile(profile)?;
    Ok(gradient_raw(ctx, profile.values()))
}

fn gradient_raw(ctx: &RateContext, values: &[f64]) -> Vec<f64> {
    let m = ctx.mesh.sites();
    let r = ctx.r as usize;
    let rf = r as f64;
    let mut convs = Vec::with_capacity(r);
    for a in 0..r {
        let h: Vec<f64> = (0..m)
            .map(|c| ctx.rho_tilde[c] * values[c * r + a])
            .collect();
        convs.push(ctx.convolved(h));
    }
    let mut g = vec![0.0; m * r];
    for c in 0..m {
        let w = ctx.rho_tilde[c];
        if w == 0.0 {
            continue;
        }
        for a in 0..r {
            let alpha = values[c * r + a].max(ENTROPY_FLOOR);
            g[c * r + a] = w * (-2.0 * ctx.beta * convs[a][c] + (rf * alpha).ln() + 1.0);
        }
    }
    g
}

/// Sup norm of the gradient projected on the simplex tangent space, over
/// cells carrying dilution mass.
fn projected_gradient_norm(ctx: &RateContext, g: &[f64]) -> f64 {
    let r = ctx.r as usize;
    let mut norm = 0.0f64;
    for c in 0..ctx.mesh.sites() {
        if ctx.rho_tilde[c] == 0.0 {
            continue;
        }
        let row = &g[c * r..(c + 1) * r];
        let mean: f64 = row.iter().sum::<f64>() / r as f64;
        for &v in row {
            norm = norm.max((v - mean).abs());
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct MinimizeOptions {
    pub max_iters: usize,
    pub pg_tol: f64,
    pub multistarts: usize,
    pub seed: u64,
    pub mode: ExecMode,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            max_iters: 50_000,
            pg_tol: 1e-9,
            multistarts: 16,
            seed: 1,
            mode: ExecMode::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub pg_norm: f64,
}

/// One descent run: final profile, value, and the full iteration trace.
#[derive(Debug, Clone)]
pub struct MinimizeRun {
    pub profile: DensityProfile,
    pub value: f64,
    pub pg_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

/// Multistart outcome: every run, the index of the best value, and all runs
/// tied with it within 1e-8.
#[derive(Debug, Clone)]
pub struct MinimizeOutcome {
    pub runs: Vec<MinimizeRun>,
    pub best: usize,
    pub ties: Vec<usize>,
}

fn clamp_rows(values: &mut [f64], r: usize) {
    for row in values.chunks_mut(r) {
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = v.max(1e-15);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Entropic mirror descent from one starting profile. Cells without dilution
/// mass are pinned to equidistribution. The options' execution mode governs
/// the objective's internal sums, overriding the context's.
pub fn minimize_rate_from(
    ctx: &RateContext,
    init: &DensityProfile,
    opts: &MinimizeOptions,
) -> Result<MinimizeRun> {
    ctx.check_profile(init)?;
    let moded;
    let ctx = if opts.mode == ctx.exec_mode {
        ctx
    } else {
        moded = ctx.clone().with_exec_mode(opts.mode);
        &moded
    };
    let m = ctx.mesh.sites();
    let r = ctx.r as usize;
    let flat = 1.0 / r as f64;
    let mut alpha = init.values().to_vec();
    for c in 0..m {
        if ctx.rho_tilde[c] == 0.0 {
            for a in 0..r {
                alpha[c * r + a] = flat;
            }
        }
    }
    clamp_rows(&mut alpha, r);
    let mut f = objective_raw(ctx, &alpha);
    let mut eta = 1.0f64;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..opts.max_iters {
        iterations = iter;
        let g = gradient_raw(ctx, &alpha);
        let pg = projected_gradient_norm(ctx, &g);
        trace.push(TraceRow {
            iter,
            objective: f,
            pg_norm: pg,
        });
        if pg < opts.pg_tol {
            converged = true;
            break;
        }
        let mut accepted = false;
        while eta >= 1e-16 {
            let mut trial = alpha.clone();
            for c in 0..m {
                if ctx.rho_tilde[c] == 0.0 {
                    continue;
                }
                // dividing out the dilution weight makes the unit step the
                // per-cell softmax self-consistency map, which contracts
                // fast near minima; backtracking keeps descent monotone
                let scale = eta / ctx.rho_tilde[c];
                let row = &mut trial[c * r..(c + 1) * r];
                let mut wmax = f64::NEG_INFINITY;
                let mut logs = [0.0f64; 256];
                for a in 0..r {
                    let w = row[a].ln() - scale * g[c * r + a];
                    logs[a] = w;
                    wmax = wmax.max(w);
                }
                let mut sum = 0.0;
                for a in 0..r {
                    row[a] = (logs[a] - wmax).exp();
                    sum += row[a];
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            clamp_rows(&mut trial, r);
            let fv = objective_raw(ctx, &trial);
            // tight slack: only floating-point noise may pass uphill, so the
            // unit-step contraction cannot park in a micro-ascent cycle
            if fv.is_finite() && fv <= f + 1e-14 * (1.0 + f.abs()) {
                alpha = trial;
                f = fv;
                accepted = true;
                eta = (eta * 2.0).min(1.0);
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let g = gradient_raw(ctx, &alpha);
    let pg = projected_gradient_norm(ctx, &g);
    converged = converged || pg < opts.pg_tol;
    let profile = DensityProfile::new(ctx.mesh, ctx.r, alpha)?;
    Ok(MinimizeRun {
        profile,
        value: f,
        pg_norm: pg,
        converged,
        iterations,
        trace,
    })
}

fn start_profile(ctx: &RateContext, which: usize, seed: u64) -> DensityProfile {
    let m = ctx.mesh.sites();
    let r = ctx.r as usize;
    let flat = 1.0 / r as f64;
    let mut values = vec![flat; m * r];
    if which == 0 {
        // flat equidistribution, tilted so that exactly symmetric saddles
        // are not fixed points of the descent map
        for c in 0..m {
            for a in 0..r {
                values[c * r + a] = flat * (1.0 + a as f64 * 1e-6);
            }
        }
    } else if which <= r {
        let corner = which - 1;
        let eps = 1e-6;
        for c in 0..m {
            for a in 0..r {
                values[c * r + a] = if a == corner {
                    1.0 - eps * (r as f64 - 1.0)
                } else {
                    eps
                };
            }
        }
    } else {
        let key = StreamKey::from_seed(seed).derive(which as u64);
        for c in 0..m {
            let cell_key = key.derive(c as u64);
            let mut sum = 0.0;
            for a in 0..r {
                let e = cell_key.exponential(a as u64);
                values[c * r + a] = e;
                sum += e;
            }
            for a in 0..r {
                values[c * r + a] /= sum;
            }
        }
    }
    clamp_rows(&mut values, r);
    DensityProfile::new(ctx.mesh, ctx.r, values).expect("rows normalized")
}

/// Multistart minimization: one flat start, one near each pure-color corner,
/// and random Dirichlet starts for the rest; runs execute independently.
pub fn minimize_rate(ctx: &RateContext, opts: &MinimizeOptions) -> Result<MinimizeOutcome> {
    if opts.multistarts == 0 {
        return Err(ModelError::InvalidArg("need at least one start".into()));
    }
    if ctx.r as usize > 255 {
        return Err(ModelError::BadColorCount(ctx.r as usize));
    }
    let moded;
    let ctx = if opts.mode == ctx.exec_mode {
        ctx
    } else {
        moded = ctx.clone().with_exec_mode(opts.mode);
        &moded
    };
    let runs: Vec<Result<MinimizeRun>> = exec::map_indexed(opts.mode, opts.multistarts, |i| {
        let init = start_profile(ctx, i, opts.seed);
        minimize_rate_from(ctx, &init, opts)
    });
    let mut collected = Vec::with_capacity(runs.len());
    for r in runs {
        collected.push(r?);
    }
    let best = collected
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value))
        .map(|(i, _)| i)
        .unwrap();
    let best_value = collected[best].value;
    let ties = collected
        .iter()
        .enumerate()
        .filter(|(_, r)| (r.value - best_value).abs() <= 1e-8)
        .map(|(i, _)| i)
        .collect();
    Ok(MinimizeOutcome {
        runs: collected,
        best,
        ties,
    })
}

/// The magnetization form of the rate functional for two colors: quadratic
/// flatness cost of m plus the cell-wise potential with the local
/// temperature. Asserts agreement with `rate_eval_direct` under the
/// substitution alpha = ((1 + m)/2, (1 - m)/2).
pub fn ising_profile_functional(ctx: &RateContext, m: &[f64]) -> Result<f64> {
    if ctx.r != 2 {
        return Err(ModelError::InvalidArg(format!(
            "magnetization form needs two colors, context has {}",
            ctx.r
        )));
    }
    let cells = ctx.mesh.sites();
    if m.len() != cells {
        return Err(ModelError::GridMismatch(format!(
            "{} magnetization values for {} cells",
            m.len(),
            cells
        )));
    }
    if m.iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
        return Err(ModelError::InvalidArg(
            "magnetization outside [-1, 1]".into(),
        ));
    }
    let inv = 1.0 / cells as f64;
    let mesh = ctx.mesh;
    let inhom = exec::sum_indexed(ctx.exec_mode, cells, |c| {
        let wc = ctx.rho_tilde[c];
        if wc == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for cp in 0..cells {
            let wp = ctx.rho_tilde[cp];
            if wp == 0.0 {
                continue;
            }
            let d = m[c] - m[cp];
            acc += wc * wp * ctx.stencil.at(mesh.diff(c, cp)) * d * d;
        }
        acc
    }) * inv * inv * ctx.beta / 4.0;
    let b = local_temperature(ctx, TemperatureConvention::Normalized)?;
    let local = exec::sum_indexed(ctx.exec_mode, cells, |c| {
        let w = ctx.rho_tilde[c];
        if w == 0.0 {
            return 0.0;
        }
        let row = [(1.0 + m[c]) / 2.0, (1.0 - m[c]) / 2.0];
        let sumsq = row[0] * row[0] + row[1] * row[1];
        w * (-b.values()[c] * sumsq + entropy_to_flat(&row))
    }) * inv;
    let total = inhom + local;
    let mut values = Vec::with_capacity(cells * 2);
    for &mi in m {
        values.push((1.0 + mi) / 2.0);
        values.push((1.0 - mi) / 2.0);
    }
    let profile = DensityProfile::new(ctx.mesh, 2, values)?;
    let direct = rate_eval_direct(ctx, &profile)?;
    assert!(
        (total - direct).abs() <= 1e-10,
        "magnetization form {total} vs direct {direct}"
    );
    Ok(total)
}

/// One cluster of minimizers found by the Ising exploration.
#[derive(Debug, Clone)]
pub struct IsingMinimum {
    pub profile: DensityProfile,
    pub value: f64,
    pub magnetization_min: f64,
    pub magnetization_max: f64,
    pub flat: bool,
    /// Number of multistart runs landing in this cluster.
    pub hits: usize,
}

/// Report of the two-color inhomogeneity exploration, minima sorted by value.
#[derive(Debug, Clone)]
pub struct IsingReport {
    pub minima: Vec<IsingMinimum>,
    /// Whether some non-flat local minimum is strictly below every flat one.
    pub nonflat_beats_flat: bool,
}

/// Multistart minimization for two colors with clustering of the minimizers
/// in the weak metric. The contract is the report shape; which side wins on
/// mixed local temperature profiles is left open.
pub fn explore_ising_inhomogeneity(
    ctx: &RateContext,
    opts: &MinimizeOptions,
) -> Result<IsingReport> {
    if ctx.r != 2 {
        return Err(ModelError::InvalidArg(format!(
            "exploration needs two colors, context has {}",
            ctx.r
        )));
    }
    let outcome = minimize_rate(ctx, opts)?;
    let family = TestFunctionFamily::standard(ctx.mesh.d(), 2, 32)?;
    let mut order: Vec<usize> = (0..outcome.runs.len()).collect();
    order.sort_by(|&a, &b| outcome.runs[a].value.total_cmp(&outcome.runs[b].value));
    let mut minima: Vec<IsingMinimum> = Vec::new();
    for idx in order {
        let run = &outcome.runs[idx];
        let mut placed = false;
        for min in minima.iter_mut() {
            let (dist, _) = weak_distance(&run.profile, &min.profile, &family);
            if dist < 1e-4 {
                min.hits += 1;
                placed = true;
                break;
            }
        }
        if placed {
            continue;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in 0..ctx.mesh.sites() {
            if ctx.rho_tilde[c] == 0.0 {
                continue;
            }
            let mag = run.profile.value(c, 0) - run.profile.value(c, 1);
            lo = lo.min(mag);
            hi = hi.max(mag);
        }
        minima.push(IsingMinimum {
            profile: run.profile.clone(),
            value: run.value,
            magnetization_min: lo,
            magnetization_max: hi,
            flat: hi - lo < 1e-5,
            hits: 1,
        });
    }
    let best_flat = minima
        .iter()
        .filter(|m| m.flat)
        .map(|m| m.value)
        .fold(f64::INFINITY, f64::min);
    let nonflat_beats_flat = minima
        .iter()
        .any(|m| !m.flat && m.value < best_flat - 1e-8);
    Ok(IsingReport {
        minima,
        nonflat_beats_flat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield;

    fn uniform_ctx(beta: f64, r: u8, cells: usize) -> RateContext {
        let mesh = TorusGrid::new(1, cells).unwrap();
        let rho = DilutionField::constant(mesh, 1.0).unwrap();
        RateContext::new(beta, &KacKernel::Uniform, &rho, r).unwrap()
    }

    fn gaussian_ctx(beta: f64, r: u8, cells: usize) -> RateContext {
        let mesh = TorusGrid::new(1, cells).unwrap();
        let rho = DilutionField::constant(mesh, 1.0).unwrap();
        RateContext::new(
            beta,
            &KacKernel::WrappedGaussian { bandwidth: 0.2 },
            &rho,
            r,
        )
        .unwrap()
    }

    fn random_profile(ctx: &RateContext, seed: u64) -> DensityProfile {
        start_profile(ctx, ctx.r as usize + 1, seed)
    }

    #[test]
    fn flat_equidistribution_rate_is_minus_beta_over_r() {
        for r in [2u8, 3, 4] {
            let ctx = uniform_ctx(0.7, r, 8);
            let flat = DensityProfile::flat(ctx.mesh(), &vec![1.0 / r as f64; r as usize]).unwrap();
            let v = rate_eval_direct(&ctx, &flat).unwrap();
            assert!((v + 0.7 / r as f64).abs() < 1e-12, "r {r} value {v}");
        }
    }

    #[test]
    fn zero_coupling_rate_is_entropy_and_vanishes_only_when_flat() {
        let ctx = gaussian_ctx(0.0, 3, 8);
        let flat = DensityProfile::flat(ctx.mesh(), &[1.0 / 3.0; 3]).unwrap();
        assert!(rate_eval_direct(&ctx, &flat).unwrap().abs() < 1e-12);
        let p = random_profile(&ctx, 11);
        let v = rate_eval_direct(&ctx, &p).unwrap();
        assert!(v > 1e-6);
    }

    #[test]
    fn decomposition_matches_direct_on_random_profiles() {
        let ctx = gaussian_ctx(1.3, 3, 32);
        for seed in [5u64, 6, 7] {
            let p = random_profile(&ctx, seed);
            let direct = rate_eval_direct(&ctx, &p).unwrap();
            let dec = rate_eval_decomposed(&ctx, &p).unwrap();
            assert!(
                (dec.total - direct).abs() < 1e-10,
                "seed {seed}: {} vs {direct}",
                dec.total
            );
            assert!(dec.inhomogeneity >= 0.0);
        }
        let flat = DensityProfile::flat(ctx.mesh(), &[1.0 / 3.0; 3]).unwrap();
        let dec = rate_eval_decomposed(&ctx, &flat).unwrap();
        assert_eq!(dec.inhomogeneity, 0.0);
    }

    #[test]
    fn raw_local_temperature_is_scaled_and_bounded_by_beta() {
        let mesh = TorusGrid::new(1, 16).unwrap();
        let rho = DilutionField::constant(mesh, 0.5).unwrap();
        let ctx = RateContext::new(1.1, &KacKernel::Cosine, &rho, 2).unwrap();
        let b = local_temperature(&ctx, TemperatureConvention::Raw).unwrap();
        for &v in b.values() {
            assert!((v - 0.55).abs() < 1e-12);
        }
        let full = DilutionField::constant(mesh, 1.0).unwrap();
        let ctx1 = RateContext::new(1.1, &KacKernel::Cosine, &full, 2).unwrap();
        let b1 = local_temperature(&ctx1, TemperatureConvention::Raw).unwrap();
        assert!((b1.max() - 1.1).abs() < 1e-12);
        assert!(b1.max() <= 1.1 + 1e-12);
    }

    #[test]
    fn box_kernel_half_torus_temperature_is_a_trapezoid() {
        // With a box of radius 1/8 on a 32-cell mesh the discretized stencil
        // charges the 9 lattice points |k| <= 4, so after renormalization the
        // convolution with an indicator counts occupied window points over 9.
        let mesh = TorusGrid::new(1, 32).unwrap();
        let mut rho_vals = vec![0.0; 32];
        for v in rho_vals.iter_mut().take(16) {
            *v = 1.0;
        }
        let rho = DilutionField::new(mesh, rho_vals.clone()).unwrap();
        let beta = 0.9;
        let ctx = RateContext::new(beta, &KacKernel::Box { radius: 0.125 }, &rho, 2).unwrap();
        let b = local_temperature(&ctx, TemperatureConvention::Raw).unwrap();
        for c in 0..32usize {
            let mut count = 0;
            for k in -4i64..=4 {
                let idx = (c as i64 + k).rem_euclid(32) as usize;
                if rho_vals[idx] > 0.0 {
                    count += 1;
                }
            }
            let want = beta * count as f64 / 9.0;
            assert!(
                (b.values()[c] - want).abs() < 1e-8,
                "cell {c}: {} vs {want}",
                b.values()[c]
            );
        }
        assert!(b.max() <= beta + 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let ctx = gaussian_ctx(1.2, 3, 16);
        let p = random_profile(&ctx, 3);
        let g = rate_gradient(&ctx, &p).unwrap();
        let m = ctx.mesh().sites() as f64;
        let h = 1e-6;
        let mut max_rel = 0.0f64;
        for idx in 0..g.len() {
            let mut up = p.values().to_vec();
            let mut dn = p.values().to_vec();
            up[idx] += h;
            dn[idx] -= h;
            let fd = (objective_raw(&ctx, &up) - objective_raw(&ctx, &dn)) / (2.0 * h) * m;
            let denom = g[idx].abs().max(1e-3);
            max_rel = max_rel.max((fd - g[idx]).abs() / denom);
        }
        assert!(max_rel < 1e-5, "max relative error {max_rel}");
    }

    #[test]
    fn gradient_is_tangent_constant_at_flat_equidistribution() {
        let ctx = gaussian_ctx(0.8, 3, 8);
        let flat = DensityProfile::flat(ctx.mesh(), &[1.0 / 3.0; 3]).unwrap();
        let g = rate_gradient(&ctx, &flat).unwrap();
        assert!(projected_gradient_norm(&ctx, &g) < 1e-12);
        let first = g[0];
        for &v in &g {
            assert!((v - first).abs() < 1e-12);
        }
    }

    #[test]
    fn subcritical_multistart_lands_on_flat_equidistribution() {
        let beta_rate = 0.5;
        assert!(meanfield::mf_beta_from_rate(beta_rate) < meanfield::beta_critical(3).unwrap());
        let ctx = gaussian_ctx(beta_rate, 3, 8);
        let opts = MinimizeOptions {
            multistarts: 8,
            ..MinimizeOptions::default()
        };
        let out = minimize_rate(&ctx, &opts).unwrap();
        for run in &out.runs {
            assert!(run.converged, "run stalled at pg {}", run.pg_norm);
            for w in run.trace.windows(2) {
                assert!(w[1].objective <= w[0].objective + 1e-12);
            }
            for c in 0..8 {
                for a in 0..3 {
                    assert!((run.profile.value(c, a) - 1.0 / 3.0).abs() < 1e-6);
                }
            }
        }
        let want = meanfield::mf_rate(&[1.0 / 3.0; 3], beta_rate);
        assert!((out.runs[out.best].value - want).abs() < 1e-10);
    }

    #[test]
    fn supercritical_multistart_finds_the_asymmetric_flat_minimizer() {
        let beta_mf = 3.2;
        let beta_rate = meanfield::rate_beta_from_mf(beta_mf);
        let ctx = gaussian_ctx(beta_rate, 3, 8);
        let opts = MinimizeOptions {
            multistarts: 8,
            ..MinimizeOptions::default()
        };
        let out = minimize_rate(&ctx, &opts).unwrap();
        let best = &out.runs[out.best];
        let u = meanfield::minimizer_order_parameter(beta_mf, 3).unwrap();
        assert!(u > 0.5);
        let want = meanfield::mf_rate(&meanfield::ew_vector(u, 3), beta_rate);
        assert!(
            (best.value - want).abs() < 1e-8,
            "value {} vs {want}",
            best.value
        );
        let minimizers = meanfield::mf_minimizers(beta_mf, 3).unwrap();
        for c in 0..8 {
            let row = best.profile.row(c);
            let matched = minimizers.iter().any(|cand| {
                row.iter()
                    .zip(cand)
                    .all(|(a, b)| (a - b).abs() < 1e-6)
            });
            assert!(matched, "cell {c} row {row:?}");
        }
        let row0: Vec<f64> = best.profile.row(0).to_vec();
        for c in 1..8 {
            for a in 0..3 {
                assert!((best.profile.value(c, a) - row0[a as usize]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn uniform_kernel_with_dilution_still_minimizes_at_the_flat_meanfield_point() {
        let mesh = TorusGrid::new(1, 8).unwrap();
        let rho =
            DilutionField::new(mesh, vec![1.0, 0.5, 1.0, 0.5, 1.0, 0.5, 1.0, 0.5]).unwrap();
        let beta_mf = 3.2;
        let beta_rate = meanfield::rate_beta_from_mf(beta_mf);
        let ctx = RateContext::new(beta_rate, &KacKernel::Uniform, &rho, 3).unwrap();
        let opts = MinimizeOptions {
            multistarts: 8,
            ..MinimizeOptions::default()
        };
        let out = minimize_rate(&ctx, &opts).unwrap();
        let best = &out.runs[out.best];
        let u = meanfield::minimizer_order_parameter(beta_mf, 3).unwrap();
        let want = meanfield::mf_rate(&meanfield::ew_vector(u, 3), beta_rate);
        assert!(
            (best.value - want).abs() < 1e-8,
            "value {} vs {want}",
            best.value
        );
        let minimizers = meanfield::mf_minimizers(beta_mf, 3).unwrap();
        let row0: Vec<f64> = best.profile.row(0).to_vec();
        assert!(minimizers
            .iter()
            .any(|cand| row0.iter().zip(cand).all(|(a, b)| (a - b).abs() < 1e-6)));
        for c in 1..8 {
            for a in 0..3 {
                assert!((best.profile.value(c, a) - row0[a as usize]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn magnetization_form_agrees_with_the_color_form() {
        let ctx = gaussian_ctx(1.1, 2, 32);
        let zero = vec![0.0; 32];
        let v0 = ising_profile_functional(&ctx, &zero).unwrap();
        let flat = DensityProfile::flat(ctx.mesh(), &[0.5, 0.5]).unwrap();
        assert!((v0 - rate_eval_direct(&ctx, &flat).unwrap()).abs() < 1e-12);
        let key = StreamKey::from_seed(77);
        let m: Vec<f64> = (0..32).map(|c| 2.0 * key.uniform(c) - 1.0).collect();
        let v = ising_profile_functional(&ctx, &m).unwrap();
        assert!(v.is_finite());
        let c = vec![0.3; 32];
        let vc = ising_profile_functional(&ctx, &c).unwrap();
        assert!(vc.is_finite());
    }

    #[test]
    fn ising_exploration_sees_one_or_two_flat_minima_around_criticality() {
        let low = gaussian_ctx(meanfield::rate_beta_from_mf(0.8), 2, 8);
        let opts = MinimizeOptions {
            multistarts: 6,
            ..MinimizeOptions::default()
        };
        let report = explore_ising_inhomogeneity(&low, &opts).unwrap();
        assert_eq!(report.minima.len(), 1);
        assert!(report.minima[0].flat);
        assert!(report.minima[0].magnetization_max.abs() < 1e-5);
        assert!(!report.nonflat_beats_flat);

        let high = gaussian_ctx(meanfield::rate_beta_from_mf(3.0), 2, 8);
        let report = explore_ising_inhomogeneity(&high, &opts).unwrap();
        assert_eq!(report.minima.len(), 2);
        let u = meanfield::minimizer_order_parameter(3.0, 2).unwrap();
        let mags: Vec<f64> = report.minima.iter().map(|m| m.magnetization_max).collect();
        assert!(report.minima.iter().all(|m| m.flat));
        assert!(mags.iter().any(|&v| (v - u).abs() < 1e-5));
        assert!(report
            .minima
            .iter()
            .any(|m| (m.magnetization_min + u).abs() < 1e-5));
        assert!(!report.nonflat_beats_flat);
    }

    #[test]
    fn ising_step_temperature_report_has_the_contract_shape() {
        let mesh = TorusGrid::new(1, 8).unwrap();
        let mut rho_vals = vec![1.0; 8];
        for v in rho_vals.iter_mut().take(4) {
            *v = 0.4;
        }
        let rho = DilutionField::new(mesh, rho_vals).unwrap();
        let ctx = RateContext::new(
            1.0,
            &KacKernel::WrappedGaussian { bandwidth: 0.1 },
            &rho,
            2,
        )
        .unwrap();
        let opts = MinimizeOptions {
            multistarts: 6,
            ..MinimizeOptions::default()
        };
        let report = explore_ising_inhomogeneity(&ctx, &opts).unwrap();
        assert!(!report.minima.is_empty());
        let total: usize = report.minima.iter().map(|m| m.hits).sum();
        assert_eq!(total, 6);
    }

    #[test]
    fn context_rejects_mismatched_profiles() {
        let ctx = gaussian_ctx(1.0, 3, 8);
        let other = DensityProfile::flat(TorusGrid::new(1, 4).unwrap(), &[0.5, 0.5]).unwrap();
        assert!(rate_eval_direct(&ctx, &other).is_err());
        let wrong_q = DensityProfile::flat(ctx.mesh(), &[0.5, 0.5]).unwrap();
        assert!(rate_eval_direct(&ctx, &wrong_q).is_err());
    }
}
