//! Exact calculus of a single 2×2 table: Dale inversion of marginal effects,
//! log-linear conversions and the Jacobians between the two parametrizations.
//!
//! Cells are always in lexicographic order of `(z_i, z_j)`: `00, 01, 10, 11`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MarginalTriple;

/// Below this magnitude the log-odds ratio is treated as exactly zero.
pub const INDEPENDENCE_EPS: f64 = 1e-10;
/// Smallest cell probability allowed into a logarithm.
pub const CELL_FLOOR: f64 = 1e-300;
/// Largest tolerated deviation of the cell sum from one before renormalizing.
pub const SIMPLEX_TOL: f64 = 1e-12;

pub type Mat3 = [[f64; 3]; 3];

/// Joint distribution of two binary participation indicators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariateTable {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

impl BivariateTable {
    /// Validating constructor: every cell in `(0, 1)`, sum within `1e-12` of one.
    pub fn new(p00: f64, p01: f64, p10: f64, p11: f64) -> Result<Self> {
        let t = Self { p00, p01, p10, p11 };
        let cells = t.cells();
        if cells.iter().any(|c| !(c.is_finite() && *c > 0.0 && *c < 1.0)) {
            return Err(Error::Domain(format!("cells {cells:?} not strictly inside (0, 1)")));
        }
        let sum: f64 = cells.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Domain(format!("cells sum to {sum}")));
        }
        Ok(t)
    }

    pub fn from_cells(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn cells(&self) -> [f64; 4] {
        [self.p00, self.p01, self.p10, self.p11]
    }

    /// `P(Z_i = 1)`.
    pub fn p_i(&self) -> f64 {
        self.p10 + self.p11
    }

    /// `P(Z_j = 1)`.
    pub fn p_j(&self) -> f64 {
        self.p01 + self.p11
    }

    fn check_positive(&self) -> Result<()> {
        if self.cells().iter().any(|c| !(*c > 0.0)) {
            return Err(Error::Saturation(format!("zero cell in {:?}", self.cells())));
        }
        Ok(())
    }
}

/// Canonical parameters of a 2×2 table: two conditional logits and the interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoglinearTriple {
    pub lam_i: f64,
    pub lam_j: f64,
    pub lam_ij: f64,
}

impl LoglinearTriple {
    pub fn new(lam_i: f64, lam_j: f64, lam_ij: f64) -> Self {
        Self { lam_i, lam_j, lam_ij }
    }
}

pub(crate) fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `P(A = 1, B = 1)` for margins `p_a`, `p_b` (with complements given
/// separately so that probabilities near one keep full precision) and
/// odds ratio `psi = exp(log_or)`, with `e = expm1(log_or)` passed alongside.
///
/// Solves the Plackett/Dale quadratic. The discriminant is rewritten as a sum
/// of nonnegative terms and the root is taken in whichever algebraic form
/// avoids subtractive cancellation, so the result has small relative error
/// even for cells near `1e-300`.
#[inline]
fn dale_p11(p_a: f64, q_a: f64, p_b: f64, q_b: f64, psi: f64, e: f64) -> f64 {
    if e > 1.0 {
        // Divide through by e so that huge odds ratios do not overflow.
        let r = 1.0 / e;
        let d = p_a - p_b;
        let disc = r * r + 2.0 * r * (p_a * q_b + q_a * p_b) + d * d;
        return 2.0 * (1.0 + r) * p_a * p_b / (r + p_a + p_b + disc.sqrt());
    }
    let (s, disc) = if e > 0.0 {
        let d = p_a - p_b;
        (
            1.0 + (p_a + p_b) * e,
            1.0 + 2.0 * e * (p_a * q_b + q_a * p_b) + e * e * d * d,
        )
    } else {
        // 1 + (p_a + p_b) e, regrouped so that psi survives when e rounds to -1
        let s = (q_a - p_b) + (p_a + p_b) * psi;
        (s, s * s - 4.0 * e * psi * p_a * p_b)
    };
    let root = disc.sqrt();
    if s > 0.0 {
        2.0 * psi * p_a * p_b / (s + root)
    } else {
        (s - root) / (2.0 * e)
    }
}

/// `(expit(x), expit(-x))` from a single exponential.
#[inline]
fn expit_pair(x: f64) -> (f64, f64) {
    let z = (-x.abs()).exp();
    let (big, small) = (1.0 / (1.0 + z), z / (1.0 + z));
    if x >= 0.0 {
        (big, small)
    } else {
        (small, big)
    }
}

/// Four cells before the final normalization. Each cell is the (1,1) cell of
/// the table with the relevant variables flipped, which keeps every cell at
/// full relative precision.
#[inline]
fn dale_raw(eta_i: f64, eta_j: f64, eta_ij: f64) -> [f64; 4] {
    let (pa, qa) = expit_pair(eta_i);
    let (pb, qb) = expit_pair(eta_j);
    if eta_ij.abs() < INDEPENDENCE_EPS {
        return [qa * qb, qa * pb, pa * qb, pa * pb];
    }
    let (psi, e) = (eta_ij.exp(), eta_ij.exp_m1());
    let (psi_f, e_f) = ((-eta_ij).exp(), (-eta_ij).exp_m1());
    [
        dale_p11(qa, pa, qb, pb, psi, e),
        dale_p11(qa, pa, pb, qb, psi_f, e_f),
        dale_p11(pa, qa, qb, pb, psi_f, e_f),
        dale_p11(pa, qa, pb, qb, psi, e),
    ]
}

/// Unchecked Dale inversion used in likelihood loops. Returns the four cells,
/// renormalized to sum to one.
#[inline]
pub(crate) fn dale_cells(eta_i: f64, eta_j: f64, eta_ij: f64) -> [f64; 4] {
    let raw = dale_raw(eta_i, eta_j, eta_ij);
    let sum = raw[0] + raw[1] + raw[2] + raw[3];
    raw.map(|c| c / sum)
}

/// Joint 2×2 table with the given marginal logits and log-odds ratio.
pub fn invert_dale(eta: MarginalTriple) -> Result<BivariateTable> {
    if !eta.is_finite() {
        return Err(Error::Domain(format!("non-finite marginal triple {eta:?}")));
    }
    let raw = dale_raw(eta.eta_i, eta.eta_j, eta.eta_ij);
    let sum: f64 = raw.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > SIMPLEX_TOL || raw.iter().any(|c| *c < 0.0) {
        return Err(Error::Internal(format!(
            "Dale inversion of {eta:?} left the simplex: {raw:?}"
        )));
    }
    let clamped = raw.map(|c| c.clamp(CELL_FLOOR, 1.0));
    let total: f64 = clamped.iter().sum();
    let c = clamped.map(|c| c / total);
    Ok(BivariateTable {
        p00: c[0],
        p01: c[1],
        p10: c[2],
        p11: c[3],
    })
}

/// Marginal logits and log-odds ratio of a table.
pub fn table_to_marginal(p: &BivariateTable) -> Result<MarginalTriple> {
    p.check_positive()?;
    Ok(MarginalTriple {
        eta_i: (p.p10 + p.p11).ln() - (p.p00 + p.p01).ln(),
        eta_j: (p.p01 + p.p11).ln() - (p.p00 + p.p10).ln(),
        eta_ij: p.p00.ln() + p.p11.ln() - p.p01.ln() - p.p10.ln(),
    })
}

/// Table with cells proportional to `exp(a lam_i + b lam_j + ab lam_ij)`.
pub fn loglinear_to_table(lam: LoglinearTriple) -> Result<BivariateTable> {
    let logw = [
        0.0,
        lam.lam_j,
        lam.lam_i,
        lam.lam_i + lam.lam_j + lam.lam_ij,
    ];
    if logw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite log-linear triple {lam:?}")));
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w = logw.map(|v| (v - max).exp());
    let k: f64 = w.iter().sum();
    let c = w.map(|v| (v / k).max(CELL_FLOOR));
    Ok(BivariateTable {
        p00: c[0],
        p01: c[1],
        p10: c[2],
        p11: c[3],
    })
}

pub fn table_to_loglinear(p: &BivariateTable) -> Result<LoglinearTriple> {
    p.check_positive()?;
    Ok(LoglinearTriple {
        lam_i: p.p10.ln() - p.p00.ln(),
        lam_j: p.p01.ln() - p.p00.ln(),
        lam_ij: p.p11.ln() + p.p00.ln() - p.p01.ln() - p.p10.ln(),
    })
}

/// Closed-form marginal effects of a log-linear triple.
pub fn loglinear_to_marginal(lam: LoglinearTriple) -> MarginalTriple {
    let LoglinearTriple { lam_i, lam_j, lam_ij } = lam;
    MarginalTriple {
        eta_i: lam_i + softplus(lam_j + lam_ij) - softplus(lam_j),
        eta_j: lam_j + softplus(lam_i + lam_ij) - softplus(lam_i),
        eta_ij: lam_ij,
    }
}

/// `∂η/∂λ'`: rows `(η_i, η_j, η_ij)`, columns `(λ_i, λ_j, λ_ij)`.
pub fn deta_dlambda(lam: LoglinearTriple) -> Mat3 {
    let LoglinearTriple { lam_i, lam_j, lam_ij } = lam;
    let c = expit(lam_j + lam_ij);
    let d = expit(lam_i + lam_ij);
    [
        [1.0, c - expit(lam_j), c],
        [d - expit(lam_i), 1.0, d],
        [0.0, 0.0, 1.0],
    ]
}

/// `∂λ/∂η'`, the inverse of [`deta_dlambda`], by the closed form for a unit
/// upper-block-triangular 3×3 matrix.
pub fn dlambda_deta(lam: LoglinearTriple) -> Mat3 {
    let j = deta_dlambda(lam);
    let (a, c) = (j[0][1], j[0][2]);
    let (b, d) = (j[1][0], j[1][2]);
    let det = 1.0 - a * b;
    debug_assert!(det > 1e-12, "degenerate Jacobian determinant {det}");
    inverse_from_parts(a, b, c, d, det)
}

fn inverse_from_parts(a: f64, b: f64, c: f64, d: f64, det: f64) -> Mat3 {
    let k = 1.0 / det;
    [
        [k, -a * k, (a * d - c) * k],
        [-b * k, k, (b * c - d) * k],
        [0.0, 0.0, 1.0],
    ]
}

/// `∂λ/∂η'` evaluated from the cells of the table directly, so that tables
/// with extreme log-linear parameters never exponentiate anything.
///
/// Uses `∂η_i/∂λ_j = (p00 p11 - p01 p10) / (p_i (1 - p_i))`,
/// `∂η_i/∂λ_ij = p11 / p_i` and the cancellation-free determinant
/// `1 - ab = (p01 p10 p11 + p00 p10 p11 + p00 p01 p11 + p00 p01 p10) / (p_i q_i p_j q_j)`.
pub(crate) fn dlambda_deta_from_cells(c: &[f64; 4]) -> Mat3 {
    let [p00, p01, p10, p11] = *c;
    let (pa, qa) = (p10 + p11, p00 + p01);
    let (pb, qb) = (p01 + p11, p00 + p10);
    let cross = p00 * p11 - p01 * p10;
    let a = cross / (pa * qa);
    let b = cross / (pb * qb);
    let triple = p01 * p10 * p11 + p00 * p10 * p11 + p00 * p01 * p11 + p00 * p01 * p10;
    let det = triple / (pa * qa * pb * qb);
    inverse_from_parts(a, b, p11 / pa, p11 / pb, det)
}

/// Logit of the probability that both actors take part: `logit(p11)`.
pub fn joint_logit(p: &BivariateTable) -> Result<f64> {
    if !(p.p11 > 0.0 && p.p11 < 1.0) {
        return Err(Error::Saturation(format!("p11 = {} on the boundary", p.p11)));
    }
    Ok(p.p11.ln() - (p.p00 + p.p01 + p.p10).ln())
}

/// Log-odds ratio of the table with margins `expit(eta_i)`, `expit(eta_j)` and
/// joint cell `expit(eta_tilde)`.
pub fn logodds_from_joint_logit(eta_i: f64, eta_j: f64, eta_tilde: f64) -> Result<f64> {
    let (pa, qa) = (expit(eta_i), expit(-eta_i));
    let (pb, qb) = (expit(eta_j), expit(-eta_j));
    let p11 = expit(eta_tilde);
    let lower = (pa - qb).max(0.0);
    let upper = pa.min(pb);
    if !(p11 > lower && p11 < upper) {
        return Err(Error::Infeasible(format!(
            "p11 = {p11} outside Fréchet bounds ({lower}, {upper})"
        )));
    }
    let p10 = pa - p11;
    let p01 = pb - p11;
    let p00 = qa - p01;
    if !(p00 > 0.0) {
        return Err(Error::Infeasible(format!("p00 = {p00} not positive")));
    }
    Ok(p00.ln() + p11.ln() - p01.ln() - p10.ln())
}

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn round3(x: f64) -> f64 {
        (x * 1000.0).round() / 1000.0
    }

    #[test]
    fn dale_examples() {
        let t = invert_dale(MarginalTriple::new(-3.0, -3.0, -1.0)).unwrap();
        assert_eq!(t.cells().map(round3), [0.906, 0.047, 0.047, 0.001]);
        let t = invert_dale(MarginalTriple::new(-3.0, -1.0, 2.0)).unwrap();
        assert_eq!(t.cells().map(round3), [0.717, 0.235, 0.014, 0.034]);
        let t = invert_dale(MarginalTriple::new(0.0, 0.0, 0.0)).unwrap();
        for c in t.cells() {
            assert!(close(c, 0.25, 1e-15));
        }
    }

    #[test]
    fn dale_rejects_nonfinite() {
        assert!(matches!(
            invert_dale(MarginalTriple::new(f64::NAN, 0.0, 0.0)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            invert_dale(MarginalTriple::new(0.0, 0.0, f64::INFINITY)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn dale_extreme_effects_stay_in_simplex() {
        for &e in &[-45.0, -30.0, -15.0, 15.0, 30.0, 45.0] {
            for &a in &[-45.0, -5.0, 0.0, 5.0, 45.0] {
                for &b in &[-45.0, 0.0, 45.0] {
                    let t = invert_dale(MarginalTriple::new(a, b, e)).unwrap();
                    let s: f64 = t.cells().iter().sum();
                    assert!(close(s, 1.0, 1e-14));
                }
            }
        }
    }

    #[test]
    fn table_to_marginal_examples() {
        let u = BivariateTable::new(0.25, 0.25, 0.25, 0.25).unwrap();
        assert_eq!(table_to_marginal(&u).unwrap(), MarginalTriple::new(0.0, 0.0, 0.0));
        let s = BivariateTable::new(0.4, 0.1, 0.1, 0.4).unwrap();
        let m = table_to_marginal(&s).unwrap();
        assert!(close(m.eta_i, 0.0, 1e-15) && close(m.eta_j, 0.0, 1e-15));
        assert!(close(m.eta_ij, 16f64.ln(), 1e-14));
        let eta = MarginalTriple::new(-3.0, -1.0, 2.0);
        let back = table_to_marginal(&invert_dale(eta).unwrap()).unwrap();
        for (x, y) in back.to_array().iter().zip(eta.to_array()) {
            assert!(close(*x, y, 1e-10));
        }
        let zero = BivariateTable { p00: 0.5, p01: 0.5, p10: 0.0, p11: 0.0 };
        assert!(matches!(table_to_marginal(&zero), Err(Error::Saturation(_))));
    }

    #[test]
    fn table_constructor_validates() {
        assert!(BivariateTable::new(0.5, 0.5, 0.0, 0.0).is_err());
        assert!(BivariateTable::new(0.3, 0.3, 0.3, 0.3).is_err());
        assert!(BivariateTable::new(0.1, 0.2, 0.3, 0.4).is_ok());
    }

    #[test]
    fn loglinear_examples() {
        let u = loglinear_to_table(LoglinearTriple::new(0.0, 0.0, 0.0)).unwrap();
        for c in u.cells() {
            assert!(close(c, 0.25, 1e-15));
        }
        let r = loglinear_to_table(LoglinearTriple::new(3f64.ln(), 0.0, 0.0)).unwrap();
        for (c, e) in r.cells().iter().zip([0.125, 0.125, 0.375, 0.375]) {
            assert!(close(*c, e, 1e-15));
        }
        let lam = table_to_loglinear(&r).unwrap();
        assert!(close(lam.lam_i, 3f64.ln(), 1e-14) && close(lam.lam_j, 0.0, 1e-14));
        assert!(close(lam.lam_ij, 0.0, 1e-14));
        let t = invert_dale(MarginalTriple::new(-3.0, -3.0, -1.0)).unwrap();
        assert!(close(table_to_loglinear(&t).unwrap().lam_ij, -1.0, 1e-12));
    }

    #[test]
    fn loglinear_to_marginal_examples() {
        for c in [-4.0, 0.0, 2.5] {
            let m = loglinear_to_marginal(LoglinearTriple::new(c, 0.0, 0.0));
            assert!(close(m.eta_i, c, 1e-15) && m.eta_j == 0.0 && m.eta_ij == 0.0);
        }
        let m = loglinear_to_marginal(LoglinearTriple::new(0.0, 0.0, 2.0));
        let expect = ((1.0 + 2f64.exp()) / 2.0).ln();
        assert!(close(m.eta_i, expect, 1e-14) && close(m.eta_j, expect, 1e-14));
        assert_eq!(m.eta_ij, 2.0);
    }

    #[test]
    fn jacobian_at_zero() {
        let z = LoglinearTriple::new(0.0, 0.0, 0.0);
        assert_eq!(
            deta_dlambda(z),
            [[1.0, 0.0, 0.5], [0.0, 1.0, 0.5], [0.0, 0.0, 1.0]]
        );
        assert_eq!(
            dlambda_deta(z),
            [[1.0, 0.0, -0.5], [0.0, 1.0, -0.5], [0.0, 0.0, 1.0]]
        );
        let indep = LoglinearTriple::new(1.3, -0.7, 0.0);
        let j = deta_dlambda(indep);
        assert_eq!([j[0][0], j[0][1], j[1][0], j[1][1]], [1.0, 0.0, 0.0, 1.0]);
        let inv = dlambda_deta(indep);
        assert_eq!([inv[0][0], inv[0][1], inv[1][0], inv[1][1]], [1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn joint_logit_examples() {
        let u = BivariateTable::new(0.25, 0.25, 0.25, 0.25).unwrap();
        assert!(close(joint_logit(&u).unwrap(), -(3f64.ln()), 1e-14));
        let t = invert_dale(MarginalTriple::new(-3.0, -1.0, 2.0)).unwrap();
        let v = joint_logit(&t).unwrap();
        // p11 rounds to 0.034 in the printed table
        assert!(close(v, (t.p11 / (1.0 - t.p11)).ln(), 1e-12));
        assert!((v - (-3.36)).abs() < 0.02);
        let half = BivariateTable::new(0.25, 0.125, 0.125, 0.5).unwrap();
        assert!(close(joint_logit(&half).unwrap(), 0.0, 1e-15));
    }

    #[test]
    fn logodds_from_joint_logit_examples() {
        let v = logodds_from_joint_logit(0.0, 0.0, (0.25f64 / 0.75).ln()).unwrap();
        assert!(close(v, 0.0, 1e-14));
        let v = logodds_from_joint_logit(-3.0, -2.0, -4.0).unwrap();
        // direct composition of the table
        let (pa, pb, p11) = (expit(-3.0), expit(-2.0), expit(-4.0));
        let expect = ((1.0 - pa - pb + p11) * p11 / ((pa - p11) * (pb - p11))).ln();
        assert!(close(v, expect, 1e-12) && v.is_finite());
        assert!(matches!(
            logodds_from_joint_logit(-3.0, -2.0, (0.2f64 / 0.8).ln()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn cell_jacobian_matches_lambda_jacobian() {
        for eta in [
            MarginalTriple::new(-3.0, -1.0, 2.0),
            MarginalTriple::new(1.5, -0.5, -3.0),
            MarginalTriple::new(0.2, 0.1, 0.0),
        ] {
            let t = invert_dale(eta).unwrap();
            let lam = table_to_loglinear(&t).unwrap();
            let a = dlambda_deta(lam);
            let b = dlambda_deta_from_cells(&t.cells());
            for i in 0..3 {
                for j in 0..3 {
                    assert!(close(a[i][j], b[i][j], 1e-10), "{a:?} vs {b:?}");
                }
            }
        }
    }

    fn triple() -> impl Strategy<Value = (f64, f64, f64)> {
        (-8.0..8.0f64, -8.0..8.0f64, -8.0..8.0f64)
    }

    proptest! {
        #[test]
        fn dale_round_trip((a, b, e) in triple()) {
            let eta = MarginalTriple::new(a, b, e);
            let back = table_to_marginal(&invert_dale(eta).unwrap()).unwrap();
            prop_assert!(close(back.eta_i, a, 1e-8));
            prop_assert!(close(back.eta_j, b, 1e-8));
            prop_assert!(close(back.eta_ij, e, 1e-8));
        }

        #[test]
        fn loglinear_round_trip((a, b, e) in triple()) {
            let lam = LoglinearTriple::new(a, b, e);
            let back = table_to_loglinear(&loglinear_to_table(lam).unwrap()).unwrap();
            prop_assert!(close(back.lam_i, a, 1e-10));
            prop_assert!(close(back.lam_j, b, 1e-10));
            prop_assert!(close(back.lam_ij, e, 1e-10));
        }

        #[test]
        fn closed_form_matches_table_path((a, b, e) in triple()) {
            let lam = LoglinearTriple::new(a, b, e);
            let direct = loglinear_to_marginal(lam);
            let via = table_to_marginal(&loglinear_to_table(lam).unwrap()).unwrap();
            prop_assert!(close(direct.eta_i, via.eta_i, 1e-10));
            prop_assert!(close(direct.eta_j, via.eta_j, 1e-10));
            prop_assert!(close(direct.eta_ij, via.eta_ij, 1e-10));
        }

        #[test]
        fn jacobian_matches_finite_differences((a, b, e) in (-4.0..4.0f64, -4.0..4.0f64, -4.0..4.0f64)) {
            let lam = [a, b, e];
            let j = deta_dlambda(LoglinearTriple::new(a, b, e));
            let h = 1e-5;
            for col in 0..3 {
                let mut up = lam;
                let mut dn = lam;
                up[col] += h;
                dn[col] -= h;
                let fu = loglinear_to_marginal(LoglinearTriple::new(up[0], up[1], up[2])).to_array();
                let fd = loglinear_to_marginal(LoglinearTriple::new(dn[0], dn[1], dn[2])).to_array();
                for row in 0..3 {
                    let fdv = (fu[row] - fd[row]) / (2.0 * h);
                    prop_assert!(close(j[row][col], fdv, 1e-6), "{row},{col}: {} vs {}", j[row][col], fdv);
                }
            }
        }

        #[test]
        fn inverse_jacobian_is_inverse((a, b, e) in triple()) {
            let lam = LoglinearTriple::new(a, b, e);
            let prod = mat3_mul(&deta_dlambda(lam), &dlambda_deta(lam));
            for i in 0..3 {
                for k in 0..3 {
                    let id = if i == k { 1.0 } else { 0.0 };
                    prop_assert!(close(prod[i][k], id, 1e-10));
                }
            }
            // cross-check against a general-purpose inverse
            let j = deta_dlambda(lam);
            let m = nalgebra::Matrix3::from_fn(|r, c| j[r][c]);
            let inv = m.try_inverse().unwrap();
            let closed = dlambda_deta(lam);
            for r in 0..3 {
                for c in 0..3 {
                    prop_assert!(close(inv[(r, c)], closed[r][c], 1e-9));
                }
            }
        }

        #[test]
        fn conditional_logit_identity((a, b, e) in triple()) {
            let t = invert_dale(MarginalTriple::new(a, b, e)).unwrap();
            let lhs = (t.p11 / t.p01).ln() - (t.p10 / t.p00).ln();
            let rhs = table_to_marginal(&t).unwrap().eta_ij;
            prop_assert!(close(lhs, rhs, 1e-12 * (1.0 + rhs.abs())));
            let lam = table_to_loglinear(&t).unwrap();
            prop_assert_eq!(lam.lam_ij, rhs);
        }

        #[test]
        fn log_odds_monotone_in_joint_logit(
            (a, b) in (-4.0..1.0f64, -4.0..1.0f64),
            frac in 0.05..0.95f64,
        ) {
            // pick a feasible joint probability inside the Fréchet interval
            let (pa, pb) = (expit(a), expit(b));
            let lo = (pa + pb - 1.0).max(0.0);
            let hi = pa.min(pb);
            let p11 = lo + frac * (hi - lo);
            let tilde = (p11 / (1.0 - p11)).ln();
            let h = 1e-6;
            let f0 = logodds_from_joint_logit(a, b, tilde - h).unwrap();
            let f1 = logodds_from_joint_logit(a, b, tilde + h).unwrap();
            prop_assert!(f1 > f0);
            let g0 = logodds_from_joint_logit(a - h, b, tilde).unwrap();
            let g1 = logodds_from_joint_logit(a + h, b, tilde).unwrap();
            prop_assert!(g1 < g0);
        }
    }
}
