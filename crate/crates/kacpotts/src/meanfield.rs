//! Mean-field Potts theory: the reduced free energy on the simplex, the
//! scalar fixed-point equation, the first-order transition, and the closed
//! forms used by the fuzzy-kernel limits.
//!
//! Two beta conventions coexist in this crate and meet only here:
//!
//! - the rate convention: f(α) = -β̃ Σ_a α_a^2 + Σ_a α_a log(r α_a), the
//!   per-cell reduction of the spatial rate functional;
//! - the fixed-point convention: stationarity written as
//!   (1 + (r-1) u) / (1 - u) = exp(β u) along the Ellis-Wang segment
//!   α(u) = ((1 + (r-1)u)/r, (1-u)/r, ..., (1-u)/r).
//!
//! Differentiating f along the segment gives exp(2 β̃ u), so the two agree
//! under beta_fixed_point = 2 β̃. `mf_beta_from_rate` / `rate_beta_from_mf`
//! are the only conversion points; everything in this module speaks the
//! fixed-point convention unless a parameter is explicitly named `beta_eff`.
//!
//! The critical coupling is beta_c(r) = 2 (r-1) log(r-1) / (r-2) for r >= 3
//! and its r -> 2 limit, beta_c(2) = 2. At beta_c the order parameter of the
//! global minimizer jumps from 0 to (r-2)/(r-1); note the largest *solution*
//! of the fixed-point equation already turns positive at the spinodal
//! slightly below beta_c (metastable branch), so jump localization tracks
//! the minimizer switch, not the largest root.

use crate::error::{ModelError, Result};

/// Converts a rate-convention coupling to the fixed-point convention.
#[inline]
pub fn mf_beta_from_rate(beta_rate: f64) -> f64 {
    2.0 * beta_rate
}

/// Converts a fixed-point-convention coupling to the rate convention.
#[inline]
pub fn rate_beta_from_mf(beta_mf: f64) -> f64 {
    0.5 * beta_mf
}

/// Reduced free energy -β̃ Σ α² + Σ α log(r α), with 0 log 0 = 0.
/// `beta_eff` is in the rate convention.
pub fn mf_rate(alpha: &[f64], beta_eff: f64) -> f64 {
    let r = alpha.len() as f64;
    let mut quad = 0.0;
    let mut ent = 0.0;
    for &a in alpha {
        quad += a * a;
        if a > 0.0 {
            ent += a * (r * a).ln();
        }
    }
    -beta_eff * quad + ent
}

/// The Ellis-Wang segment point with order parameter u.
pub fn ew_vector(u: f64, r: usize) -> Vec<f64> {
    let rf = r as f64;
    let mut v = vec![(1.0 - u) / rf; r];
    v[0] = (1.0 + (rf - 1.0) * u) / rf;
    v
}

/// Residual of the fixed-point equation, log form:
/// log(1 + (r-1)u) - log(1 - u) - beta u.
pub fn mf_equation_residual(u: f64, beta: f64, r: usize) -> f64 {
    let rf = r as f64;
    ((rf - 1.0) * u).ln_1p() - (-u).ln_1p() - beta * u
}

fn mf_equation_slope(u: f64, beta: f64, r: usize) -> f64 {
    let rf = r as f64;
    (rf - 1.0) / (1.0 + (rf - 1.0) * u) + 1.0 / (1.0 - u) - beta
}

/// Largest solution u in [0, 1) of the fixed-point equation; 0 when the
/// trivial solution is the only one. `beta` is in the fixed-point convention.
pub fn mf_equation_solve(beta: f64, r: usize) -> Result<f64> {
    if r == 0 {
        return Err(ModelError::InvalidArg("r must be >= 1".into()));
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(ModelError::InvalidArg(format!(
            "beta must be finite and >= 0, got {beta}"
        )));
    }
    if r == 1 {
        // (1)/(1-u) = exp(beta u) has only u = 0 in [0, 1)
        return Ok(0.0);
    }
    let lo = 1e-9;
    let hi = 1.0 - 1e-9;
    let k = 20_000;
    let mut best = 0.0f64;
    let mut prev_u = lo;
    let mut prev_g = mf_equation_residual(lo, beta, r);
    for i in 1..=k {
        let u = lo + (hi - lo) * i as f64 / k as f64;
        let g = mf_equation_residual(u, beta, r);
        if prev_g == 0.0 {
            best = prev_u;
        } else if (prev_g < 0.0) != (g < 0.0) {
            best = refine_root(prev_u, u, beta, r);
        }
        prev_u = u;
        prev_g = g;
    }
    if best < 1e-8 {
        best = 0.0;
    }
    Ok(best)
}

fn refine_root(mut a: f64, mut b: f64, beta: f64, r: usize) -> f64 {
    let mut ga = mf_equation_residual(a, beta, r);
    for _ in 0..90 {
        let m = 0.5 * (a + b);
        let gm = mf_equation_residual(m, beta, r);
        if gm == 0.0 {
            return m;
        }
        if (ga < 0.0) == (gm < 0.0) {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    let mut u = 0.5 * (a + b);
    for _ in 0..4 {
        let g = mf_equation_residual(u, beta, r);
        let s = mf_equation_slope(u, beta, r);
        if s.abs() > 1e-12 {
            let next = u - g / s;
            if next > 0.0 && next < 1.0 {
                u = next;
            }
        }
    }
    u
}

/// Critical coupling in the fixed-point convention: 2 (r-1) log(r-1) / (r-2)
/// for r >= 3, and the limiting value 2 at r = 2.
pub fn beta_critical(r: usize) -> Result<f64> {
    match r {
        0 | 1 => Err(ModelError::InvalidArg(format!(
            "beta_critical needs r >= 2, got {r}"
        ))),
        2 => Ok(2.0),
        _ => {
            let rf = r as f64;
            Ok(2.0 * (rf - 1.0) * (rf - 1.0).ln() / (rf - 2.0))
        }
    }
}

/// Order parameter of the global minimizer: the largest fixed-point solution
/// if the Ellis-Wang point (weakly) beats the equidistribution, else 0.
pub fn minimizer_order_parameter(beta_mf: f64, r: usize) -> Result<f64> {
    let u = mf_equation_solve(beta_mf, r)?;
    if u == 0.0 {
        return Ok(0.0);
    }
    let beta_eff = rate_beta_from_mf(beta_mf);
    let eq = vec![1.0 / r as f64; r];
    let f_eq = mf_rate(&eq, beta_eff);
    let f_asym = mf_rate(&ew_vector(u, r), beta_eff);
    Ok(if f_asym <= f_eq { u } else { 0.0 })
}

/// Global minimizers of the reduced free energy at coupling `beta_mf`
/// (fixed-point convention): the equidistribution, the r placements of the
/// Ellis-Wang vector, or all of them at coexistence (tie tolerance 1e-10).
pub fn mf_minimizers(beta_mf: f64, r: usize) -> Result<Vec<Vec<f64>>> {
    if r < 2 {
        return Err(ModelError::InvalidArg("mf_minimizers needs r >= 2".into()));
    }
    let beta_eff = rate_beta_from_mf(beta_mf);
    let eq = vec![1.0 / r as f64; r];
    let f_eq = mf_rate(&eq, beta_eff);
    let u = mf_equation_solve(beta_mf, r)?;
    let mut out = Vec::new();
    if u == 0.0 {
        out.push(eq);
        return Ok(out);
    }
    let base = ew_vector(u, r);
    let f_asym = mf_rate(&base, beta_eff);
    let fmin = f_eq.min(f_asym);
    if f_eq <= fmin + 1e-10 {
        out.push(eq);
    }
    if f_asym <= fmin + 1e-10 {
        for k in 0..r {
            let mut v = vec![(1.0 - u) / r as f64; r];
            v[k] = (1.0 + (r as f64 - 1.0) * u) / r as f64;
            out.push(v);
        }
    }
    Ok(out)
}

/// Bisects the coupling at which the Ellis-Wang point strictly overtakes the
/// equidistribution; at a first-order transition this is beta_c itself.
/// `lo` must classify as equidistribution-optimal and `hi` as asymmetric.
pub fn locate_first_order_jump(r: usize, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let asym_wins = |beta: f64| -> Result<bool> {
        let u = mf_equation_solve(beta, r)?;
        if u == 0.0 {
            return Ok(false);
        }
        let beta_eff = rate_beta_from_mf(beta);
        let f_eq = mf_rate(&vec![1.0 / r as f64; r], beta_eff);
        Ok(mf_rate(&ew_vector(u, r), beta_eff) < f_eq)
    };
    if asym_wins(lo)? || !asym_wins(hi)? {
        return Err(ModelError::InvalidArg(
            "jump bracket endpoints do not straddle the transition".into(),
        ));
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let m = 0.5 * (a + b);
        if asym_wins(m)? {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Low-temperature one-sided limit factor at criticality, from below:
/// exp(2 beta_c(r) / r).
pub fn phi_minus(r: usize) -> Result<f64> {
    if r < 3 {
        return Err(ModelError::InvalidArg("phi_minus needs r >= 3".into()));
    }
    Ok((2.0 * beta_critical(r)? / r as f64).exp())
}

/// One-sided limit factor at criticality from above:
/// (1/r) [exp(2 beta_c (r-1)/r) + (r-1) exp(2 beta_c / (r (r-1)))].
pub fn phi_plus(r: usize) -> Result<f64> {
    if r < 3 {
        return Err(ModelError::InvalidArg("phi_plus needs r >= 3".into()));
    }
    let rf = r as f64;
    let bc = beta_critical(r)?;
    Ok(((2.0 * bc * (rf - 1.0) / rf).exp() + (rf - 1.0) * (2.0 * bc / (rf * (rf - 1.0))).exp())
        / rf)
}

/// Mean-field limit of the tilted expectation A at coupling `beta_tilde`
/// (fixed-point convention) when the internal state is the Ellis-Wang
/// mixture with order parameter u:
/// (1/r) [exp(2 β̃ (1+(r-1)u)/r) + (r-1) exp(2 β̃ (1-u)/r)].
/// u = 0 recovers exp(2 β̃ / r); r = 1 gives exp(2 β̃) for any u.
pub fn a_limit_flat(beta_tilde: f64, r: usize, u: f64) -> f64 {
    let rf = r as f64;
    ((2.0 * beta_tilde * (1.0 + (rf - 1.0) * u) / rf).exp()
        + (rf - 1.0) * (2.0 * beta_tilde * (1.0 - u) / rf).exp())
        / rf
}

/// Side-resolved A-limit for an off-critical class: uniqueness formula below
/// beta_c, low-temperature mixture (global-minimizer order parameter) at or
/// above. r = 1 is the deterministic class, exp(2 β̃).
pub fn a_limit(beta_tilde: f64, r: usize) -> Result<f64> {
    if r == 0 {
        return Err(ModelError::InvalidArg("a_limit needs r >= 1".into()));
    }
    if r == 1 {
        return Ok((2.0 * beta_tilde).exp());
    }
    if beta_tilde < beta_critical(r)? {
        Ok(a_limit_flat(beta_tilde, r, 0.0))
    } else {
        let u = minimizer_order_parameter(beta_tilde, r)?;
        Ok(a_limit_flat(beta_tilde, r, u))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn beta_critical_closed_forms() {
        assert!((beta_critical(3).unwrap() - 4.0 * LN2).abs() < 1e-14);
        assert!((beta_critical(4).unwrap() - 3.0 * 3.0f64.ln()).abs() < 1e-14);
        assert_eq!(beta_critical(2).unwrap(), 2.0);
        assert!(beta_critical(1).is_err());
        // r -> 2 limit of the closed form approaches the stored value 2
        let r = 2.0 + 1e-7;
        let val = 2.0 * (r - 1.0) * (r - 1.0f64).ln() / (r - 2.0);
        assert!((val - 2.0).abs() < 1e-6);
    }

    #[test]
    fn fixed_point_at_criticality_is_half() {
        let u = mf_equation_solve(beta_critical(3).unwrap(), 3).unwrap();
        assert!((u - 0.5).abs() < 1e-10);
        let a = ew_vector(u, 3);
        assert!((a[0] - 2.0 / 3.0).abs() < 1e-10);
        assert!((a[1] - 1.0 / 6.0).abs() < 1e-10);
        assert!((a[2] - 1.0 / 6.0).abs() < 1e-10);
    }

    #[test]
    fn fixed_point_reference_values() {
        // independently bracketed reference roots
        let u = mf_equation_solve(3.2, 3).unwrap();
        assert!((u - 0.7980557664991588).abs() < 1e-9);
        assert!(mf_equation_residual(u, 3.2, 3).abs() < 1e-12);
        // metastable largest root exists below beta_c(3) ~ 2.7726
        let um = mf_equation_solve(2.76, 3).unwrap();
        assert!((um - 0.46763377319311616).abs() < 1e-8);
        assert_eq!(mf_equation_solve(2.70, 3).unwrap(), 0.0);
        assert_eq!(mf_equation_solve(0.5, 3).unwrap(), 0.0);
        assert_eq!(mf_equation_solve(1.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn largest_root_nondecreasing_in_beta() {
        let mut prev = -1.0;
        for i in 0..=60 {
            let beta = 2.0 + i as f64 * 0.05;
            let u = mf_equation_solve(beta, 3).unwrap();
            assert!(u >= prev - 1e-12, "beta {beta}: {u} < {prev}");
            prev = u;
        }
    }

    #[test]
    fn rate_handles_zero_entries() {
        let v = vec![0.5, 0.5, 0.0];
        let f = mf_rate(&v, 1.0);
        assert!(f.is_finite());
        // -1*(0.5) + 2*0.5*ln(1.5) = -0.5 + ln 1.5
        assert!((f - (-0.5 + 1.5f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn coexistence_at_criticality() {
        // at beta_mf = beta_c(3), both phases have reduced free energy -(2/3) ln 2
        let beta_eff = rate_beta_from_mf(beta_critical(3).unwrap());
        let f_eq = mf_rate(&[1.0 / 3.0; 3], beta_eff);
        let f_asym = mf_rate(&[2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], beta_eff);
        assert!((f_eq - (-2.0 / 3.0 * LN2)).abs() < 1e-12);
        assert!((f_asym - (-2.0 / 3.0 * LN2)).abs() < 1e-12);
    }

    #[test]
    fn minimizers_by_phase() {
        let bc = beta_critical(3).unwrap();
        assert_eq!(mf_minimizers(2.0, 3).unwrap().len(), 1);
        let at = mf_minimizers(bc, 3).unwrap();
        assert_eq!(at.len(), 4, "coexistence keeps all four");
        let above = mf_minimizers(3.0, 3).unwrap();
        assert_eq!(above.len(), 3);
        for v in &above {
            let s: f64 = v.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn minimizers_are_stationary() {
        for beta_mf in [1.5, beta_critical(3).unwrap(), 3.4] {
            let beta_eff = rate_beta_from_mf(beta_mf);
            for v in mf_minimizers(beta_mf, 3).unwrap() {
                let grads: Vec<f64> = v
                    .iter()
                    .map(|&a| -2.0 * beta_eff * a + (3.0 * a).ln() + 1.0)
                    .collect();
                let mean = grads.iter().sum::<f64>() / grads.len() as f64;
                for g in grads {
                    assert!((g - mean).abs() < 1e-8, "beta_mf {beta_mf}");
                }
            }
        }
    }

    #[test]
    fn minimizer_order_parameter_jumps_at_beta_c() {
        let bc = beta_critical(3).unwrap();
        assert_eq!(minimizer_order_parameter(bc - 1e-3, 3).unwrap(), 0.0);
        let above = minimizer_order_parameter(bc + 1e-3, 3).unwrap();
        assert!(above > 0.49, "{above}");
        let jump = locate_first_order_jump(3, 2.5, 3.0, 1e-9).unwrap();
        assert!((jump - bc).abs() < 1e-6, "{jump} vs {bc}");
    }

    #[test]
    fn phi_closed_forms() {
        let pm = phi_minus(3).unwrap();
        let pp = phi_plus(3).unwrap();
        assert!((pm - 2f64.powf(8.0 / 3.0)).abs() < 1e-12);
        assert!((pp - (2f64.powf(16.0 / 3.0) + 2f64.powf(7.0 / 3.0)) / 3.0).abs() < 1e-12);
        assert!(phi_minus(2).is_err());
        assert!(phi_plus(2).is_err());
    }

    #[test]
    fn a_limit_special_cases() {
        assert!((a_limit_flat(1.3, 3, 0.0) - (2.0 * 1.3 / 3.0f64).exp()).abs() < 1e-14);
        assert!((a_limit_flat(0.9, 1, 0.7) - (1.8f64).exp()).abs() < 1e-14);
        assert!((a_limit(0.9, 1).unwrap() - (1.8f64).exp()).abs() < 1e-14);
        // below criticality the side-resolved value uses the flat branch
        assert!((a_limit(1.0, 3).unwrap() - a_limit_flat(1.0, 3, 0.0)).abs() < 1e-14);
        // far above, it uses the ordered branch and exceeds the flat value
        assert!(a_limit(4.0, 3).unwrap() > a_limit_flat(4.0, 3, 0.0));
    }
}
