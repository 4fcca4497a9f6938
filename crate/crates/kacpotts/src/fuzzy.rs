//! Fuzzy coarse-graining: class partitions of the color set, the induced
//! single-site conditional kernel given a fuzzy boundary, its exact
//! factorization over boundary level sets, the limiting kernel, bad-point
//! construction, the one-sided kernel gap, and the Gibbs classification.

use crate::error::{ModelError, Result};
use crate::exec::{self, ExecMode};
use crate::meanfield::{a_limit, beta_critical, phi_minus, phi_plus};
use crate::profiles::DensityProfile;
use crate::rng::StreamKey;
use crate::sampler::{
    exact_distribution, run_chain, Chain, ChainInit, ColorConfiguration, SamplerKind,
    EXACT_STATE_CAP,
};
use crate::torus::{ScalarField, TorusGrid};

/// Ordered partition of the q colors into s classes of sizes (r_1, ..., r_s).
/// Colors are grouped consecutively: class i holds colors
/// offset_i .. offset_i + r_i. A proper coarse-graining needs 1 < s < q.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzyPartition {
    q: u8,
    sizes: Vec<u8>,
    offsets: Vec<u8>,
}

impl FuzzyPartition {
    pub fn new(sizes: Vec<u8>) -> Result<Self> {
        if sizes.iter().any(|&r| r == 0) {
            return Err(ModelError::BadPartition("class of size zero".into()));
        }
        let total: u32 = sizes.iter().map(|&r| r as u32).sum();
        if total > u8::MAX as u32 {
            return Err(ModelError::BadPartition(format!(
                "{total} colors exceed the u8 color range"
            )));
        }
        let q = total as u8;
        let s = sizes.len();
        if s < 2 || s as u32 >= total {
            return Err(ModelError::BadPartition(format!(
                "need 1 < s < q, got s = {s}, q = {q}"
            )));
        }
        let mut offsets = Vec::with_capacity(s);
        let mut acc = 0u8;
        for &r in &sizes {
            offsets.push(acc);
            acc += r;
        }
        Ok(FuzzyPartition { q, sizes, offsets })
    }

    pub fn q(&self) -> u8 {
        self.q
    }

    /// Number of classes.
    pub fn s(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[u8] {
        &self.sizes
    }

    pub fn size(&self, class: usize) -> u8 {
        self.sizes[class]
    }

    /// First color of the class.
    pub fn offset(&self, class: usize) -> u8 {
        self.offsets[class]
    }

    pub fn class_of(&self, color: u8) -> u8 {
        assert!(color < self.q, "color {color} out of range");
        match self.offsets.binary_search(&color) {
            Ok(i) => i as u8,
            Err(i) => (i - 1) as u8,
        }
    }

    pub fn colors_of(&self, class: usize) -> std::ops::Range<u8> {
        let lo = self.offsets[class];
        lo..lo + self.sizes[class]
    }

    pub fn r_star(&self) -> u8 {
        *self.sizes.iter().max().expect("nonempty partition")
    }
}

/// Site-wise pushforward of a color configuration to class labels.
pub fn fuzzy_map(cfg: &ColorConfiguration, part: &FuzzyPartition) -> Result<ColorConfiguration> {
    if cfg.q != part.q() {
        return Err(ModelError::BadColorCount(cfg.q as usize));
    }
    let labels: Vec<u8> = cfg.colors.iter().map(|&c| part.class_of(c)).collect();
    let s = part.s() as u8;
    if cfg.is_full() {
        ColorConfiguration::full(cfg.grid, s, labels)
    } else {
        ColorConfiguration::on_sites(cfg.grid, s, cfg.site_indices(), labels)
    }
}

/// Level sets of a fuzzy boundary configuration together with the effective
/// inverse temperature each one carries: beta_l = beta |Lambda_l| / n^d.
#[derive(Debug, Clone)]
pub struct LevelSets {
    pub sets: Vec<Vec<usize>>,
    pub betas: Vec<f64>,
}

pub fn level_sets(
    boundary: &ColorConfiguration,
    part: &FuzzyPartition,
    beta: f64,
) -> Result<LevelSets> {
    let s = part.s();
    if boundary.q as usize != s {
        return Err(ModelError::BadColorCount(boundary.q as usize));
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(ModelError::InvalidArg(format!("bad beta {beta}")));
    }
    let mut sets = vec![Vec::new(); s];
    for (i, &label) in boundary.colors.iter().enumerate() {
        sets[label as usize].push(boundary.site_at(i));
    }
    let vol = boundary.grid.sites() as f64;
    let betas = sets.iter().map(|set| beta * set.len() as f64 / vol).collect();
    Ok(LevelSets { sets, betas })
}

/// Torus site whose cell contains the point u (coordinates wrapped to [0,1)).
pub fn site_of_point(grid: TorusGrid, u: &[f64]) -> Result<usize> {
    if u.len() != grid.d() {
        return Err(ModelError::InvalidArg(format!(
            "point has {} coordinates on a {}-dimensional torus",
            u.len(),
            grid.d()
        )));
    }
    let n = grid.n();
    let mut coords = [0usize; 3];
    for (j, &x) in u.iter().enumerate() {
        if !x.is_finite() {
            return Err(ModelError::InvalidArg("non-finite coordinate".into()));
        }
        let w = x - x.floor();
        coords[j] = ((w * n as f64).floor() as usize).min(n - 1);
    }
    Ok(grid.index(&coords[..grid.d()]))
}

fn check_boundary(
    site: usize,
    boundary: &ColorConfiguration,
    grid: TorusGrid,
) -> Result<()> {
    if boundary.grid != grid {
        return Err(ModelError::GridMismatch(
            "boundary lives on a different grid than the stencil".into(),
        ));
    }
    if site >= grid.sites() {
        return Err(ModelError::InvalidArg(format!("site {site} out of range")));
    }
    if boundary.len() != grid.sites() - 1 {
        return Err(ModelError::BadSubvolume(format!(
            "boundary covers {} of the {} sites other than the tagged one",
            boundary.len(),
            grid.sites() - 1
        )));
    }
    if boundary.site_indices().binary_search(&site).is_ok() {
        return Err(ModelError::BadSubvolume(
            "boundary contains the tagged site".into(),
        ));
    }
    Ok(())
}

/// Streaming log-sum-exp accumulator.
#[derive(Debug, Clone, Copy)]
struct LogSum {
    max: f64,
    sum: f64,
}

impl LogSum {
    fn new() -> Self {
        LogSum {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn push(&mut self, lw: f64) {
        if lw > self.max {
            self.sum = self.sum * (self.max - lw).exp() + 1.0;
            self.max = lw;
        } else {
            self.sum += (lw - self.max).exp();
        }
    }

    fn log_total(&self) -> f64 {
        self.max + self.sum.ln()
    }
}

/// Conditional class probabilities at `site` given the fuzzy boundary, by
/// direct enumeration of all colorings compatible with the boundary classes
/// (each boundary site ranges over its class, the tagged site over all q
/// colors). Exact; state space capped like the exact sampler.
pub fn kernel_direct(
    stencil: &ScalarField,
    beta: f64,
    part: &FuzzyPartition,
    site: usize,
    boundary: &ColorConfiguration,
) -> Result<Vec<f64>> {
    let grid = stencil.grid();
    check_boundary(site, boundary, grid)?;
    if boundary.q as usize != part.s() {
        return Err(ModelError::BadColorCount(boundary.q as usize));
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(ModelError::InvalidArg(format!("bad beta {beta}")));
    }
    let s = part.s();
    let l = grid.sites();

    // local order: tagged site first (fastest digit), then the boundary
    let mut locals = Vec::with_capacity(l);
    let mut radix = Vec::with_capacity(l);
    let mut base = Vec::with_capacity(l);
    locals.push(site);
    radix.push(part.q());
    base.push(0u8);
    for (i, &label) in boundary.colors.iter().enumerate() {
        locals.push(boundary.site_at(i));
        radix.push(part.size(label as usize));
        base.push(part.offset(label as usize));
    }
    let states: u128 = radix.iter().map(|&r| r as u128).product();
    if states > EXACT_STATE_CAP {
        return Err(ModelError::StateSpaceTooLarge {
            states,
            cap: EXACT_STATE_CAP,
        });
    }

    let coupling = 2.0 * beta / l as f64;
    let jrow = |i: usize, j: usize| stencil.at(grid.diff(locals[i], locals[j]));

    let mut digits = vec![0u8; l];
    let mut colors: Vec<u8> = base.clone();
    // log-weight of the all-zeros assignment (unordered pairs, doubled;
    // self-pairs are constant across colorings and cancel in the ratio)
    let mut lw = 0.0;
    for i in 0..l {
        for j in (i + 1)..l {
            if colors[i] == colors[j] {
                lw += coupling * jrow(i, j);
            }
        }
    }

    let mut buckets = vec![LogSum::new(); s];
    let mut visited: u128 = 0;
    loop {
        buckets[part.class_of(colors[0]) as usize].push(lw);
        visited += 1;
        // odometer advance with incremental log-weight updates
        let mut pos = 0usize;
        loop {
            if pos == l {
                break;
            }
            let old = colors[pos];
            digits[pos] += 1;
            let wrapped = digits[pos] == radix[pos];
            if wrapped {
                digits[pos] = 0;
            }
            let new = base[pos] + digits[pos];
            if new != old {
                let mut delta = 0.0;
                for j in 0..l {
                    if j != pos {
                        if colors[j] == new {
                            delta += jrow(pos, j);
                        }
                        if colors[j] == old {
                            delta -= jrow(pos, j);
                        }
                    }
                }
                lw += coupling * delta;
                colors[pos] = new;
            }
            if wrapped {
                pos += 1;
            } else {
                break;
            }
        }
        if pos == l {
            break;
        }
    }
    debug_assert_eq!(visited, states);

    let logs: Vec<f64> = buckets.iter().map(|b| b.log_total()).collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logs.iter().map(|&g| (g - m).exp()).collect();
    let z: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= z;
    }
    Ok(probs)
}

/// How the per-class boundary factor A is estimated.
#[derive(Debug, Clone, Copy)]
pub enum AMode {
    /// Exact enumeration of the diluted Gibbs measure on the level set.
    Exact,
    /// Independent MCMC chains with jackknife error bars.
    Mcmc {
        sweeps: u64,
        burn_in: u64,
        chains: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct AEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Minimum chain count for jackknife error bars.
pub const MIN_JACKKNIFE_CHAINS: usize = 8;

/// Boundary factor A(beta_eff, r, Lambda): the expectation, under the diluted
/// r-color model on `subvolume` at inverse temperature beta_eff, of
/// exp(2 beta_eff (J * pi[1])(site)) where pi[1] is the |Lambda|-normalized
/// empirical measure of the distinguished first color. Conventions: empty
/// subvolume and beta_eff = 0 both give A = 1 exactly; r = 1 is the closed
/// form exp(2 beta_eff Sigma_y J((site - y)/n) / |Lambda|).
pub fn estimate_a(
    stencil: &ScalarField,
    site: usize,
    beta_eff: f64,
    r: u8,
    subvolume: &[usize],
    mode: AMode,
    exec_mode: ExecMode,
) -> Result<AEstimate> {
    let grid = stencil.grid();
    if site >= grid.sites() {
        return Err(ModelError::InvalidArg(format!("site {site} out of range")));
    }
    if r == 0 {
        return Err(ModelError::BadColorCount(0));
    }
    if !beta_eff.is_finite() || beta_eff < 0.0 {
        return Err(ModelError::InvalidArg(format!("bad beta {beta_eff}")));
    }
    if subvolume.is_empty() || beta_eff == 0.0 {
        return Ok(AEstimate {
            value: 1.0,
            stderr: 0.0,
        });
    }
    let l = subvolume.len();
    let weights: Vec<f64> = subvolume
        .iter()
        .map(|&y| 2.0 * beta_eff * stencil.at(grid.diff(site, y)) / l as f64)
        .collect();
    if r == 1 {
        return Ok(AEstimate {
            value: weights.iter().sum::<f64>().exp(),
            stderr: 0.0,
        });
    }
    match mode {
        AMode::Exact => {
            let dist = exact_distribution(stencil, beta_eff, r, subvolume)?;
            let mut digits = vec![0u8; l];
            let mut esum: f64 = weights.iter().sum(); // all sites start in color 0
            let mut a = 0.0;
            for &p in &dist.probs {
                a += p * esum.exp();
                let mut pos = 0usize;
                while pos < l {
                    let old = digits[pos];
                    digits[pos] += 1;
                    let wrapped = digits[pos] == r;
                    if wrapped {
                        digits[pos] = 0;
                    }
                    if old == 0 {
                        esum -= weights[pos];
                    }
                    if digits[pos] == 0 {
                        esum += weights[pos];
                    }
                    if wrapped {
                        pos += 1;
                    } else {
                        break;
                    }
                }
            }
            Ok(AEstimate {
                value: a,
                stderr: 0.0,
            })
        }
        AMode::Mcmc {
            sweeps,
            burn_in,
            chains,
            seed,
        } => {
            if chains < MIN_JACKKNIFE_CHAINS {
                return Err(ModelError::InvalidArg(format!(
                    "jackknife needs at least {MIN_JACKKNIFE_CHAINS} chains, got {chains}"
                )));
            }
            if sweeps <= burn_in {
                return Err(ModelError::InvalidArg(
                    "sweeps must exceed burn-in".into(),
                ));
            }
            let root = StreamKey::from_seed(seed);
            let means = exec::map_indexed(exec_mode, chains, |c| -> Result<f64> {
                let mut chain = Chain::new(
                    stencil,
                    beta_eff,
                    r,
                    subvolume.to_vec(),
                    ChainInit::UniformRandom,
                    root.derive(c as u64),
                )?;
                let mut acc = 0.0;
                let mut count = 0u64;
                run_chain(
                    &mut chain,
                    SamplerKind::Alternate,
                    sweeps,
                    burn_in,
                    1,
                    |_, ch| {
                        let mut e = 0.0;
                        for (i, &col) in ch.colors().iter().enumerate() {
                            if col == 0 {
                                e += weights[i];
                            }
                        }
                        acc += e.exp();
                        count += 1;
                    },
                );
                Ok(acc / count as f64)
            });
            let mut m = Vec::with_capacity(chains);
            for v in means {
                m.push(v?);
            }
            let c = chains as f64;
            let total: f64 = m.iter().sum();
            let grand = total / c;
            // jackknife over leave-one-out chain means
            let loo: Vec<f64> = m.iter().map(|&mi| (total - mi) / (c - 1.0)).collect();
            let loo_mean = loo.iter().sum::<f64>() / c;
            let var = (c - 1.0) / c
                * loo.iter().map(|&t| (t - loo_mean).powi(2)).sum::<f64>();
            Ok(AEstimate {
                value: grand,
                stderr: var.sqrt(),
            })
        }
    }
}

/// Factorized conditional kernel with per-class boundary factors.
#[derive(Debug, Clone)]
pub struct KernelEstimate {
    pub probs: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub a_factors: Vec<AEstimate>,
    pub betas: Vec<f64>,
}

/// Conditional class probabilities at `site` through the exact factorization
/// gamma(k) = r_k A(beta_k, r_k, Lambda_k) / Sigma_l r_l A(beta_l, r_l, Lambda_l)
/// over the boundary level sets. With AMode::Exact this agrees with
/// kernel_direct to machine precision; with MCMC factors the standard errors
/// are propagated to the probabilities by the delta method.
pub fn kernel_factorized(
    stencil: &ScalarField,
    beta: f64,
    part: &FuzzyPartition,
    site: usize,
    boundary: &ColorConfiguration,
    mode: AMode,
    exec_mode: ExecMode,
) -> Result<KernelEstimate> {
    let grid = stencil.grid();
    check_boundary(site, boundary, grid)?;
    let ls = level_sets(boundary, part, beta)?;
    let s = part.s();
    let mut a_factors = Vec::with_capacity(s);
    for k in 0..s {
        let class_mode = match mode {
            AMode::Exact => AMode::Exact,
            AMode::Mcmc {
                sweeps,
                burn_in,
                chains,
                seed,
            } => AMode::Mcmc {
                sweeps,
                burn_in,
                chains,
                seed: StreamKey::from_seed(seed).derive(k as u64).word(0),
            },
        };
        a_factors.push(estimate_a(
            stencil,
            site,
            ls.betas[k],
            part.size(k),
            &ls.sets[k],
            class_mode,
            exec_mode,
        )?);
    }
    let total: f64 = (0..s)
        .map(|k| part.size(k) as f64 * a_factors[k].value)
        .sum();
    let probs: Vec<f64> = (0..s)
        .map(|k| part.size(k) as f64 * a_factors[k].value / total)
        .collect();
    let stderrs: Vec<f64> = (0..s)
        .map(|k| {
            let mut var = 0.0;
            for (lcl, af) in a_factors.iter().enumerate() {
                let rk = part.size(k) as f64;
                let rl = part.size(lcl) as f64;
                let dk = if k == lcl { rk } else { 0.0 };
                let grad = (dk - probs[k] * rl) / total;
                var += (grad * af.stderr).powi(2);
            }
            var.sqrt()
        })
        .collect();
    Ok(KernelEstimate {
        probs,
        stderrs,
        a_factors,
        betas: ls.betas,
    })
}

/// Limiting (n -> infinity) conditional kernel at a boundary profile.
#[derive(Debug, Clone)]
pub struct LimitingKernel {
    pub probs: Vec<f64>,
    /// True when the classification theorem guarantees this limit holds for
    /// every boundary (the Gibbs branch); elsewhere the formula is the
    /// generic-profile value and can fail at bad points.
    pub guaranteed: bool,
}

/// Limiting kernel from class densities: gamma(k) is proportional to
/// r_k exp(2 beta r_k^{-1} Integral rho_k(v) J(u - v) dv), evaluated at the
/// cell center of `cell` on the profile mesh.
pub fn limiting_kernel(
    stencil: &ScalarField,
    beta: f64,
    part: &FuzzyPartition,
    cell: usize,
    class_profile: &DensityProfile,
) -> Result<LimitingKernel> {
    let mesh = class_profile.mesh();
    if stencil.grid() != mesh {
        return Err(ModelError::GridMismatch(
            "stencil and class profile use different meshes".into(),
        ));
    }
    if class_profile.q() as usize != part.s() {
        return Err(ModelError::BadColorCount(class_profile.q() as usize));
    }
    if cell >= mesh.sites() {
        return Err(ModelError::InvalidArg(format!("cell {cell} out of range")));
    }
    let m = mesh.sites();
    let exponents: Vec<f64> = (0..part.s())
        .map(|k| {
            let mut conv = 0.0;
            for c in 0..m {
                conv += stencil.at(mesh.diff(cell, c)) * class_profile.value(c, k as u8);
            }
            conv /= m as f64;
            2.0 * beta * conv / part.size(k) as f64
        })
        .collect();
    finish_limit(part, beta, &exponents)
}

/// Limiting kernel at a flat boundary with class masses alpha: the
/// convolution collapses to alpha_k for a unit-mean interaction.
pub fn limiting_kernel_flat(
    beta: f64,
    part: &FuzzyPartition,
    alpha: &[f64],
) -> Result<LimitingKernel> {
    check_class_masses(part, alpha)?;
    let exponents: Vec<f64> = alpha
        .iter()
        .zip(part.sizes())
        .map(|(&a, &r)| 2.0 * beta * a / r as f64)
        .collect();
    finish_limit(part, beta, &exponents)
}

fn finish_limit(part: &FuzzyPartition, beta: f64, exponents: &[f64]) -> Result<LimitingKernel> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(ModelError::InvalidArg(format!("bad beta {beta}")));
    }
    let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = exponents
        .iter()
        .zip(part.sizes())
        .map(|(&e, &r)| r as f64 * (e - m).exp())
        .collect();
    let z: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= z;
    }
    let guaranteed = gng_classify(part, beta)? == GibbsClass::Gibbs;
    Ok(LimitingKernel { probs, guaranteed })
}

fn check_class_masses(part: &FuzzyPartition, alpha: &[f64]) -> Result<()> {
    if alpha.len() != part.s() {
        return Err(ModelError::InvalidArg(format!(
            "{} class masses for {} classes",
            alpha.len(),
            part.s()
        )));
    }
    if alpha.iter().any(|&a| !a.is_finite() || a < 0.0) {
        return Err(ModelError::InvalidArg("negative class mass".into()));
    }
    let total: f64 = alpha.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(ModelError::InvalidArg(format!(
            "class masses sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// A bad boundary point: flat class masses putting one class of size >= 3
/// exactly at its effective critical temperature, with the two one-sided
/// approximating mass vectors at scale 1/m.
#[derive(Debug, Clone)]
pub struct BadPoint {
    pub class_index: usize,
    pub alpha: Vec<f64>,
    pub minus: Vec<f64>,
    pub plus: Vec<f64>,
    pub m: usize,
}

/// Constructs the canonical bad point for (partition, beta): the lowest class
/// index i with r_i >= 3 and beta_c(r_i)/beta <= 1 gets mass
/// alpha_i = beta_c(r_i)/beta (so beta alpha_i = beta_c(r_i) exactly); the
/// remaining mass is spread over the other classes proportionally to their
/// sizes. The approximating vectors move 1/m of mass onto (plus) or off
/// (minus) class i, compensated evenly across the other classes.
pub fn bad_profile_pair(part: &FuzzyPartition, beta: f64, m: usize) -> Result<BadPoint> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(ModelError::InvalidArg(format!("bad beta {beta}")));
    }
    if m < 2 {
        return Err(ModelError::InvalidArg("need m >= 2".into()));
    }
    let s = part.s();
    let mut found = None;
    for i in 0..s {
        let r = part.size(i) as usize;
        if r >= 3 {
            let ai = beta_critical(r)? / beta;
            if ai <= 1.0 + 1e-12 {
                found = Some((i, ai.min(1.0)));
                break;
            }
        }
    }
    let (class_index, ai) = found.ok_or(ModelError::NoBadPoint)?;
    let rest: f64 = (0..s)
        .filter(|&l| l != class_index)
        .map(|l| part.size(l) as f64)
        .sum();
    let alpha: Vec<f64> = (0..s)
        .map(|l| {
            if l == class_index {
                ai
            } else {
                (1.0 - ai) * part.size(l) as f64 / rest
            }
        })
        .collect();
    let eps = 1.0 / m as f64;
    let comp = eps / (s as f64 - 1.0);
    let mut minus = alpha.clone();
    let mut plus = alpha.clone();
    for l in 0..s {
        if l == class_index {
            minus[l] -= eps;
            plus[l] += eps;
        } else {
            minus[l] += comp;
            plus[l] -= comp;
        }
    }
    for v in minus.iter().chain(plus.iter()) {
        if *v < 0.0 || *v > 1.0 {
            return Err(ModelError::InvalidArg(format!(
                "m = {m} too coarse: perturbed mass {v} leaves [0, 1]"
            )));
        }
    }
    Ok(BadPoint {
        class_index,
        alpha,
        minus,
        plus,
        m,
    })
}

/// One-sided limiting kernels at a bad point and the jump between them.
#[derive(Debug, Clone)]
pub struct KernelGap {
    pub class_index: usize,
    /// Limiting kernel approached from below the critical mass.
    pub minus: Vec<f64>,
    /// Limiting kernel approached from above.
    pub plus: Vec<f64>,
    /// Per-class boundary factors on each side.
    pub a_minus: Vec<f64>,
    pub a_plus: Vec<f64>,
    /// plus[class_index] - minus[class_index].
    pub gap: f64,
}

/// Evaluates the one-sided limiting kernels at a bad point. The critical
/// class takes its two one-sided boundary factors (uniqueness side and
/// phase-transition side); every other class takes its off-critical factor at
/// effective temperature beta alpha_l. Both kernels normalize over all
/// classes. The gap is strictly positive exactly because the critical class
/// has a first-order transition (r_i >= 3).
pub fn kernel_gap(part: &FuzzyPartition, beta: f64, bad: &BadPoint) -> Result<KernelGap> {
    let s = part.s();
    if bad.alpha.len() != s {
        return Err(ModelError::InvalidArg(
            "bad point does not match the partition".into(),
        ));
    }
    let i = bad.class_index;
    let ri = part.size(i) as usize;
    if ri < 3 {
        return Err(ModelError::InvalidArg(format!(
            "class {i} has size {ri}; a first-order jump needs size >= 3"
        )));
    }
    let bc = beta_critical(ri)?;
    if (beta * bad.alpha[i] - bc).abs() > 1e-9 * bc {
        return Err(ModelError::InvalidArg(
            "class is not at its critical effective temperature".into(),
        ));
    }
    let mut a_minus = Vec::with_capacity(s);
    let mut a_plus = Vec::with_capacity(s);
    for l in 0..s {
        if l == i {
            a_minus.push(phi_minus(ri)?);
            a_plus.push(phi_plus(ri)?);
        } else {
            let off = a_limit(beta * bad.alpha[l], part.size(l) as usize)?;
            a_minus.push(off);
            a_plus.push(off);
        }
    }
    let norm = |a: &[f64]| -> Vec<f64> {
        let z: f64 = a
            .iter()
            .zip(part.sizes())
            .map(|(&v, &r)| r as f64 * v)
            .sum();
        a.iter()
            .zip(part.sizes())
            .map(|(&v, &r)| r as f64 * v / z)
            .collect()
    };
    let minus = norm(&a_minus);
    let plus = norm(&a_plus);
    let gap = plus[i] - minus[i];
    Ok(KernelGap {
        class_index: i,
        minus,
        plus,
        a_minus,
        a_plus,
        gap,
    })
}

/// Gibbs / non-Gibbs classification of the fuzzy model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GibbsClass {
    Gibbs,
    NonGibbs,
    /// Parameter region the classification theorem does not cover (size-2
    /// classes above the Ising threshold without any size >= 3 class at or
    /// beyond its own transition).
    OutsideTheorem,
}

pub fn gng_classify(part: &FuzzyPartition, beta: f64) -> Result<GibbsClass> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(ModelError::InvalidArg(format!("bad beta {beta}")));
    }
    let r_star = part.r_star() as usize;
    let has_pair = part.sizes().iter().any(|&r| r == 2);
    let has_triple = part.sizes().iter().any(|&r| r >= 3);
    let bc2 = beta_critical(2)?;
    if beta <= bc2 || (!has_pair && beta < beta_critical(r_star)?) {
        return Ok(GibbsClass::Gibbs);
    }
    if has_triple && beta >= beta_critical(r_star)? {
        return Ok(GibbsClass::NonGibbs);
    }
    Ok(GibbsClass::OutsideTheorem)
}
