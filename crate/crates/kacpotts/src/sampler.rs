//! Exact and MCMC sampling for the Kac-Potts measure and its dilutions.
//!
//! The full-torus Hamiltonian is
//!   H_n(σ) = -(1/n^d) Σ_{x,y} J((x-y)/n) 1{σ(x)=σ(y)}
//! over ordered pairs including x = y; on a subvolume Λ the same double sum
//! runs over Λ with prefactor 1/|Λ|. Both measures share the single-site
//! conditional weight exp((2β/|Λ|) Σ_{y≠x} J_xy 1{σ(y)=c}), which is what the
//! heat-bath sweep samples (via Gumbel-argmax over the color logits) and what
//! the exact transition matrix is built from.
//!
//! The cluster sweep is the standard bond construction: an unordered pair of
//! equal-color sites bonds with probability 1 - exp(-2 β J_xy / |Λ|), bond
//! components are recolored uniformly. For constant couplings the bond stage
//! runs in expected O(bonds) time by geometric skipping over the pair list
//! instead of one coin per pair; this is what makes low-temperature phase
//! hopping affordable, since the recoloring moves whole phases in one step.
//!
//! All randomness is addressed through counter streams keyed by
//! (chain key, sweep, site/pair, color), so trajectories depend only on the
//! seed, never on evaluation order.

use crate::error::{ModelError, Result};
use crate::rng::StreamKey;
use crate::torus::{ScalarField, TorusGrid};

const L_INIT: u64 = 1;
const L_HB: u64 = 2;
const L_SW: u64 = 3;
const L_BOND_GENERIC: u64 = 0;
const L_RECOLOR: u64 = u64::MAX - 1;

/// Colors of a (sub)set of torus sites; colors are 0-based in `0..q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorConfiguration {
    pub grid: TorusGrid,
    pub q: u8,
    sites: Option<Vec<usize>>,
    pub colors: Vec<u8>,
}

impl ColorConfiguration {
    pub fn full(grid: TorusGrid, q: u8, colors: Vec<u8>) -> Result<Self> {
        if colors.len() != grid.sites() {
            return Err(ModelError::GridMismatch(format!(
                "{} colors for {} sites",
                colors.len(),
                grid.sites()
            )));
        }
        Self::check_colors(q, &colors)?;
        Ok(ColorConfiguration {
            grid,
            q,
            sites: None,
            colors,
        })
    }

    pub fn on_sites(grid: TorusGrid, q: u8, sites: Vec<usize>, colors: Vec<u8>) -> Result<Self> {
        validate_sites(&sites, grid)?;
        if colors.len() != sites.len() {
            return Err(ModelError::BadSubvolume(format!(
                "{} colors for {} sites",
                colors.len(),
                sites.len()
            )));
        }
        Self::check_colors(q, &colors)?;
        if sites.len() == grid.sites() {
            return Ok(ColorConfiguration {
                grid,
                q,
                sites: None,
                colors,
            });
        }
        Ok(ColorConfiguration {
            grid,
            q,
            sites: Some(sites),
            colors,
        })
    }

    fn check_colors(q: u8, colors: &[u8]) -> Result<()> {
        if q == 0 {
            return Err(ModelError::BadColorCount(0));
        }
        if colors.iter().any(|&c| c >= q) {
            return Err(ModelError::InvalidArg("color out of range".into()));
        }
        Ok(())
    }

    pub fn is_full(&self) -> bool {
        self.sites.is_none()
    }

    /// Number of occupied sites.
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    /// Torus site index of the i-th occupied site.
    #[inline]
    pub fn site_at(&self, i: usize) -> usize {
        match &self.sites {
            None => i,
            Some(s) => s[i],
        }
    }

    pub fn site_indices(&self) -> Vec<usize> {
        match &self.sites {
            None => (0..self.colors.len()).collect(),
            Some(s) => s.clone(),
        }
    }
}

fn validate_sites(sites: &[usize], grid: TorusGrid) -> Result<()> {
    if sites.is_empty() {
        return Err(ModelError::BadSubvolume("empty subvolume".into()));
    }
    for w in sites.windows(2) {
        if w[0] >= w[1] {
            return Err(ModelError::BadSubvolume(
                "sites must be strictly increasing".into(),
            ));
        }
    }
    if *sites.last().unwrap() >= grid.sites() {
        return Err(ModelError::BadSubvolume("site beyond grid".into()));
    }
    Ok(())
}

/// Full-torus energy of a coloring under a discretized stencil.
pub fn hamiltonian(stencil: &ScalarField, colors: &[u8]) -> Result<f64> {
    let grid = stencil.grid();
    if colors.len() != grid.sites() {
        return Err(ModelError::GridMismatch(
            "hamiltonian: colors do not cover the grid".into(),
        ));
    }
    let n = colors.len();
    let mut s = 0.0;
    for x in 0..n {
        for y in 0..n {
            if colors[x] == colors[y] {
                s += stencil.at(grid.diff(x, y));
            }
        }
    }
    Ok(-s / n as f64)
}

/// Subvolume energy with the same double sum restricted to Λ and a 1/|Λ|
/// prefactor.
pub fn hamiltonian_diluted(stencil: &ScalarField, sites: &[usize], colors: &[u8]) -> Result<f64> {
    let grid = stencil.grid();
    validate_sites(sites, grid)?;
    if colors.len() != sites.len() {
        return Err(ModelError::BadSubvolume(
            "hamiltonian_diluted: colors/sites length mismatch".into(),
        ));
    }
    let l = sites.len();
    let mut s = 0.0;
    for i in 0..l {
        for j in 0..l {
            if colors[i] == colors[j] {
                s += stencil.at(grid.diff(sites[i], sites[j]));
            }
        }
    }
    Ok(-s / l as f64)
}

/// Exact Gibbs distribution on r^|Λ| colorings, states indexed little-endian:
/// the color of local site i is digit i of the state in base r.
#[derive(Debug, Clone)]
pub struct ExactDistribution {
    pub r: u8,
    pub nsites: usize,
    pub probs: Vec<f64>,
}

impl ExactDistribution {
    pub fn state_index(&self, colors: &[u8]) -> usize {
        let mut idx = 0usize;
        for &c in colors.iter().rev() {
            idx = idx * self.r as usize + c as usize;
        }
        idx
    }

    pub fn prob_of(&self, colors: &[u8]) -> f64 {
        self.probs[self.state_index(colors)]
    }

    pub fn decode(&self, mut state: usize) -> Vec<u8> {
        let mut out = vec![0u8; self.nsites];
        for slot in out.iter_mut() {
            *slot = (state % self.r as usize) as u8;
            state /= self.r as usize;
        }
        out
    }
}

pub const EXACT_STATE_CAP: u128 = 1 << 22;

/// Enumerates exp(-β H_Λ) over all colorings of `sites` and normalizes.
pub fn exact_distribution(
    stencil: &ScalarField,
    beta: f64,
    r: u8,
    sites: &[usize],
) -> Result<ExactDistribution> {
    let grid = stencil.grid();
    validate_sites(sites, grid)?;
    if r == 0 {
        return Err(ModelError::BadColorCount(0));
    }
    let l = sites.len();
    let states = (r as u128).pow(l as u32);
    if states > EXACT_STATE_CAP {
        return Err(ModelError::StateSpaceTooLarge {
            states,
            cap: EXACT_STATE_CAP,
        });
    }
    let states = states as usize;
    let jl = coupling_table(stencil, sites);
    let self_sum: f64 = (0..l).map(|i| jl[i * l + i]).sum();

    // odometer enumeration with O(l) cross-energy updates per digit flip
    let mut colors = vec![0u8; l];
    let mut cross = 0.0f64; // Σ_{i≠j} J_ij 1{equal}
    for i in 0..l {
        for j in 0..l {
            if i != j {
                cross += jl[i * l + j];
            }
        }
    }
    let scale = beta / l as f64;
    let mut logw = vec![0.0f64; states];
    for (state, slot) in logw.iter_mut().enumerate() {
        *slot = scale * (cross + self_sum);
        if state + 1 == states {
            break;
        }
        // advance: digits roll over like an odometer, each single-digit
        // change updates the cross energy in O(l)
        let mut i = 0;
        loop {
            let old = colors[i];
            let new = if old as usize + 1 == r as usize { 0 } else { old + 1 };
            let mut delta = 0.0;
            for j in 0..l {
                if j != i {
                    if colors[j] == new {
                        delta += jl[i * l + j];
                    }
                    if colors[j] == old {
                        delta -= jl[i * l + j];
                    }
                }
            }
            cross += 2.0 * delta;
            colors[i] = new;
            if new != 0 {
                break;
            }
            i += 1;
        }
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for w in logw.iter_mut() {
        *w = (*w - max).exp();
        z += *w;
    }
    for w in logw.iter_mut() {
        *w /= z;
    }
    Ok(ExactDistribution {
        r,
        nsites: l,
        probs: logw,
    })
}

fn coupling_table(stencil: &ScalarField, sites: &[usize]) -> Vec<f64> {
    let grid = stencil.grid();
    let l = sites.len();
    let mut jl = vec![0.0; l * l];
    for i in 0..l {
        for j in 0..l {
            jl[i * l + j] = stencil.at(grid.diff(sites[i], sites[j]));
        }
    }
    jl
}

#[derive(Debug, Clone)]
pub enum ChainInit {
    UniformRandom,
    Given(Vec<u8>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    HeatBath,
    Cluster,
    /// Cluster sweep followed by a heat-bath sweep each step.
    Alternate,
}

pub const CHAIN_SITE_CAP: usize = 2048;

/// One MCMC chain on a fixed subvolume (possibly the whole torus).
#[derive(Debug, Clone)]
pub struct Chain {
    grid: TorusGrid,
    beta: f64,
    r: u8,
    sites: Vec<usize>,
    colors: Vec<u8>,
    couplings: Vec<f64>, // l*l cached J values
    fields: Vec<f64>,    // l*r: F_i(c) = Σ_{j≠i} J_ij 1{σ_j = c}
    uniform_bond: Option<f64>,
    key: StreamKey,
    sweep: u64,
    resync_every: u64,
}

impl Chain {
    pub fn new(
        stencil: &ScalarField,
        beta: f64,
        r: u8,
        sites: Vec<usize>,
        init: ChainInit,
        key: StreamKey,
    ) -> Result<Self> {
        let grid = stencil.grid();
        validate_sites(&sites, grid)?;
        if r == 0 {
            return Err(ModelError::BadColorCount(0));
        }
        if sites.len() > CHAIN_SITE_CAP {
            return Err(ModelError::InvalidArg(format!(
                "chain on {} sites exceeds cap {}",
                sites.len(),
                CHAIN_SITE_CAP
            )));
        }
        if !beta.is_finite() || beta < 0.0 {
            return Err(ModelError::InvalidArg(format!("bad beta {beta}")));
        }
        if stencil.values().iter().any(|&v| v < 0.0) {
            return Err(ModelError::InvalidArg(
                "cluster/heat-bath chains need a nonnegative stencil".into(),
            ));
        }
        let l = sites.len();
        let couplings = coupling_table(stencil, &sites);
        let mut uniform_bond = None;
        if l >= 2 {
            let first = couplings[1]; // (0,1) off-diagonal
            if (0..l).all(|i| (0..l).all(|j| i == j || couplings[i * l + j] == first)) {
                uniform_bond = Some(first);
            }
        }
        let colors = match init {
            ChainInit::Given(c) => {
                if c.len() != l {
                    return Err(ModelError::InvalidArg("init colors length".into()));
                }
                if c.iter().any(|&x| x >= r) {
                    return Err(ModelError::InvalidArg("init color out of range".into()));
                }
                c
            }
            ChainInit::UniformRandom => {
                let ik = key.derive(L_INIT);
                (0..l).map(|i| ik.below(i as u64, r as u64) as u8).collect()
            }
        };
        let mut chain = Chain {
            grid,
            beta,
            r,
            sites,
            colors,
            couplings,
            fields: vec![0.0; l * r as usize],
            uniform_bond,
            key,
            sweep: 0,
            resync_every: 64,
        };
        chain.recompute_fields();
        Ok(chain)
    }

    pub fn colors(&self) -> &[u8] {
        &self.colors
    }

    pub fn r(&self) -> u8 {
        self.r
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sweeps_done(&self) -> u64 {
        self.sweep
    }

    /// Disables the constant-coupling bond shortcut (diagnostics only).
    pub fn disable_uniform_bond_path(&mut self) {
        self.uniform_bond = None;
    }

    pub fn to_configuration(&self) -> ColorConfiguration {
        ColorConfiguration::on_sites(self.grid, self.r, self.sites.clone(), self.colors.clone())
            .expect("chain state is always consistent")
    }

    pub fn color_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.r as usize];
        for &c in &self.colors {
            counts[c as usize] += 1;
        }
        counts
    }

    fn recompute_fields(&mut self) {
        let l = self.sites.len();
        let r = self.r as usize;
        if let Some(j) = self.uniform_bond {
            // constant couplings: F_i(c) = J (count_c - 1{σ_i = c})
            let counts = self.color_counts();
            for i in 0..l {
                let ci = self.colors[i] as usize;
                for c in 0..r {
                    let own = if c == ci { 1.0 } else { 0.0 };
                    self.fields[i * r + c] = j * (counts[c] as f64 - own);
                }
            }
            return;
        }
        self.fields.iter_mut().for_each(|f| *f = 0.0);
        for i in 0..l {
            for j in 0..l {
                if i != j {
                    self.fields[i * r + self.colors[j] as usize] += self.couplings[i * l + j];
                }
            }
        }
    }

    /// Exact conditional law of the color at local site i given the rest,
    /// recomputed from scratch (test- and matrix-facing; the sweep itself
    /// uses the incrementally maintained fields).
    pub fn site_conditional(&self, i: usize) -> Vec<f64> {
        let l = self.sites.len();
        let coupling = 2.0 * self.beta / l as f64;
        let r = self.r as usize;
        let mut f = vec![0.0f64; r];
        for j in 0..l {
            if j != i {
                f[self.colors[j] as usize] += self.couplings[i * l + j];
            }
        }
        let mut w: Vec<f64> = f.iter().map(|&x| coupling * x).collect();
        let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for x in w.iter_mut() {
            *x = (*x - max).exp();
            z += *x;
        }
        for x in w.iter_mut() {
            *x /= z;
        }
        w
    }

    /// One systematic-scan heat-bath sweep (sites in subvolume order).
    pub fn heat_bath_sweep(&mut self) {
        let l = self.sites.len();
        let r = self.r as usize;
        let coupling = 2.0 * self.beta / l as f64;
        let sweep_key = self.key.derive(L_HB).derive(self.sweep);
        for i in 0..l {
            let base = i * r;
            let mut best_c = 0usize;
            let mut best = f64::NEG_INFINITY;
            for c in 0..r {
                let v = coupling * self.fields[base + c] + sweep_key.gumbel((i * r + c) as u64);
                if v > best {
                    best = v;
                    best_c = c;
                }
            }
            let old = self.colors[i] as usize;
            if best_c != old {
                self.colors[i] = best_c as u8;
                for j in 0..l {
                    if j != i {
                        let jij = self.couplings[j * l + i];
                        self.fields[j * r + old] -= jij;
                        self.fields[j * r + best_c] += jij;
                    }
                }
            }
        }
        self.finish_sweep();
    }

    /// One cluster sweep: bond equal-color pairs, recolor components
    /// uniformly. Component representatives are minimal local indices, and
    /// their recolor draws are keyed by representative, so the outcome does
    /// not depend on union order.
    pub fn cluster_sweep(&mut self) {
        let l = self.sites.len();
        let sweep_key = self.key.derive(L_SW).derive(self.sweep);
        let mut uf = UnionFind::new(l);
        match self.uniform_bond {
            Some(j) if self.beta > 0.0 && j > 0.0 => {
                let lnq = -2.0 * self.beta * j / l as f64; // ln(1 - p), exact
                // sites of each color in ascending local order
                let mut by_color: Vec<Vec<u32>> = vec![Vec::new(); self.r as usize];
                for (i, &c) in self.colors.iter().enumerate() {
                    by_color[c as usize].push(i as u32);
                }
                for members in by_color.iter() {
                    let m = members.len() as u64;
                    if m < 2 {
                        continue;
                    }
                    let pairs = m * (m - 1) / 2;
                    // keyed by the class's minimal member, not its color
                    // value, so relabeling colors leaves the bonds unchanged
                    let ck = sweep_key.derive(1 + members[0] as u64);
                    // geometric skipping: each draw jumps over the failed
                    // coins before the next bonded pair
                    let mut t: i128 = -1;
                    let mut ctr: u64 = 0;
                    loop {
                        let u = ck.uniform(ctr);
                        ctr += 1;
                        let gap = ((1.0 - u).ln() / lnq).floor();
                        if !gap.is_finite() || gap >= pairs as f64 {
                            break;
                        }
                        t += 1 + gap as i128;
                        if t >= pairs as i128 {
                            break;
                        }
                        let (a, b) = triangle_pair(t as u64, m);
                        uf.union(members[a as usize] as usize, members[b as usize] as usize);
                    }
                }
            }
            _ => {
                let bk = sweep_key.derive(L_BOND_GENERIC);
                let coupling = 2.0 * self.beta / l as f64;
                let mut pair_idx: u64 = 0;
                for i in 0..l {
                    for j in (i + 1)..l {
                        if self.colors[i] == self.colors[j] {
                            let jij = self.couplings[i * l + j];
                            if jij > 0.0 {
                                let p = -(-coupling * jij).exp_m1();
                                if bk.uniform(pair_idx) < p {
                                    uf.union(i, j);
                                }
                            }
                        }
                        pair_idx += 1;
                    }
                }
            }
        }
        // recolor components by minimal-index representative
        let rk = sweep_key.derive(L_RECOLOR);
        let mut rep_color: Vec<u8> = vec![u8::MAX; l];
        for i in 0..l {
            let root = uf.find(i);
            if rep_color[root] == u8::MAX {
                // i is the minimal local index in its component
                rep_color[root] = rk.below(i as u64, self.r as u64) as u8;
            }
            self.colors[i] = rep_color[root];
        }
        self.recompute_fields();
        self.finish_sweep();
    }

    fn finish_sweep(&mut self) {
        self.sweep += 1;
        if self.sweep % self.resync_every == 0 {
            self.recompute_fields();
        }
    }

    /// Largest absolute difference between the cached fields and a fresh
    /// recomputation (diagnostics).
    pub fn field_cache_drift(&self) -> f64 {
        let mut fresh = self.clone();
        fresh.recompute_fields();
        self.fields
            .iter()
            .zip(&fresh.fields)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Decodes pair index t (0-based, pairs ordered (0,1), (0,2), ..., (1,2), ...)
/// into (i, j) with i < j < m.
fn triangle_pair(t: u64, m: u64) -> (u64, u64) {
    // row i starts at offset i*m - i*(i+1)/2 - i ... search the row boundary
    let offset = |i: u64| i * (2 * m - i - 1) / 2;
    let mut lo = 0u64;
    let mut hi = m - 1;
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if offset(mid) <= t {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let i = lo;
    let j = i + 1 + (t - offset(i));
    (i, j)
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] as usize != x {
            let gp = self.parent[self.parent[x] as usize];
            self.parent[x] = gp;
            x = gp as usize;
        }
        x
    }

    /// Union keeping the smaller root index as the representative, so the
    /// component structure is order-independent.
    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo as u32;
    }
}

/// Runs the requested sweeps, invoking `on_sample` after burn-in at the
/// given cadence (`thin` >= 1).
pub fn run_chain<F>(
    chain: &mut Chain,
    kind: SamplerKind,
    sweeps: u64,
    burn_in: u64,
    thin: u64,
    mut on_sample: F,
) where
    F: FnMut(u64, &Chain),
{
    let thin = thin.max(1);
    for s in 0..sweeps {
        match kind {
            SamplerKind::HeatBath => chain.heat_bath_sweep(),
            SamplerKind::Cluster => chain.cluster_sweep(),
            SamplerKind::Alternate => {
                chain.cluster_sweep();
                chain.heat_bath_sweep();
            }
        }
        if s >= burn_in && (s - burn_in) % thin == 0 {
            on_sample(s, chain);
        }
    }
}

/// Sampled full configurations at a sweep cadence (convenience wrapper).
#[allow(clippy::too_many_arguments)]
pub fn sample_profiles(
    stencil: &ScalarField,
    beta: f64,
    r: u8,
    sites: Vec<usize>,
    kind: SamplerKind,
    sweeps: u64,
    burn_in: u64,
    thin: u64,
    key: StreamKey,
) -> Result<Vec<ColorConfiguration>> {
    let mut chain = Chain::new(stencil, beta, r, sites, ChainInit::UniformRandom, key)?;
    let mut out = Vec::new();
    run_chain(&mut chain, kind, sweeps, burn_in, thin, |_, c| {
        out.push(c.to_configuration())
    });
    Ok(out)
}

/// One-sweep heat-bath transition matrix (row = from state, little-endian
/// base-r state indexing as in `ExactDistribution`). Feasible only for tiny
/// systems; used to check stationarity at machine precision.
pub fn heat_bath_transition_matrix(
    stencil: &ScalarField,
    beta: f64,
    r: u8,
    sites: &[usize],
) -> Result<Vec<f64>> {
    let grid = stencil.grid();
    validate_sites(sites, grid)?;
    let l = sites.len();
    let states_big = (r as u128).pow(l as u32);
    if states_big > 1 << 10 {
        return Err(ModelError::StateSpaceTooLarge {
            states: states_big,
            cap: 1 << 10,
        });
    }
    let states = states_big as usize;
    let rl = r as usize;
    let jl = coupling_table(stencil, sites);
    let coupling = 2.0 * beta / l as f64;
    let mut pow = vec![1usize; l];
    for i in 1..l {
        pow[i] = pow[i - 1] * rl;
    }
    let decode = |mut s: usize| -> Vec<u8> {
        let mut c = vec![0u8; l];
        for slot in c.iter_mut() {
            *slot = (s % rl) as u8;
            s /= rl;
        }
        c
    };
    let mut matrix = vec![0.0f64; states * states];
    for from in 0..states {
        let mut dist = vec![0.0f64; states];
        dist[from] = 1.0;
        for i in 0..l {
            let mut next = vec![0.0f64; states];
            for (s, &mass) in dist.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                let colors = decode(s);
                let mut w = vec![0.0f64; rl];
                for j in 0..l {
                    if j != i {
                        w[colors[j] as usize] += jl[i * l + j];
                    }
                }
                let mut z = 0.0;
                for x in w.iter_mut() {
                    *x = (coupling * *x).exp();
                    z += *x;
                }
                let base = s - colors[i] as usize * pow[i];
                for (c, &x) in w.iter().enumerate() {
                    next[base + c * pow[i]] += mass * x / z;
                }
            }
            dist = next;
        }
        matrix[from * states..(from + 1) * states].copy_from_slice(&dist);
    }
    Ok(matrix)
}
