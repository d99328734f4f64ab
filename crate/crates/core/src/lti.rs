//! Continuous- and discrete-time LTI state-space models.
//!
//! Provides the interconnection algebra (series, parallel, block
//! diagonal, lower LFT), stability tests, frequency response, and an
//! H-infinity norm based on refined frequency gridding.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Margin used to classify marginally stable poles as unstable.
pub const EPS_STAB: f64 = 1e-9;

/// Continuous time, or discrete time with a fixed sample period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimeDomain {
    Continuous,
    Discrete { sample_time: f64 },
}

impl TimeDomain {
    pub fn discrete(sample_time: f64) -> Self {
        assert!(sample_time > 0.0, "sample time must be positive");
        TimeDomain::Discrete { sample_time }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, TimeDomain::Discrete { .. })
    }

    pub fn sample_time(&self) -> Option<f64> {
        match self {
            TimeDomain::Continuous => None,
            TimeDomain::Discrete { sample_time } => Some(*sample_time),
        }
    }

    /// Same domain, with sample times compared to a relative 1e-12.
    pub fn compatible_with(&self, other: &TimeDomain) -> bool {
        match (self, other) {
            (TimeDomain::Continuous, TimeDomain::Continuous) => true,
            (TimeDomain::Discrete { sample_time: a }, TimeDomain::Discrete { sample_time: b }) => {
                (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
            }
            _ => false,
        }
    }
}

/// Scalar rational transfer function with real coefficients in
/// descending powers of s (or z).
#[derive(Debug, Clone, PartialEq)]
pub struct RationalTransferFunction {
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    pub domain: TimeDomain,
}

impl RationalTransferFunction {
    pub fn new(numerator: Vec<f64>, denominator: Vec<f64>, domain: TimeDomain) -> Result<Self> {
        if denominator.is_empty() || denominator[0] == 0.0 {
            return Err(Error::DegenerateDenominator);
        }
        let num_deg = degree(&numerator);
        let den_deg = denominator.len() - 1;
        if let Some(nd) = num_deg {
            if nd > den_deg {
                return Err(Error::NonProper {
                    num_deg: nd,
                    den_deg,
                });
            }
        }
        Ok(Self {
            numerator,
            denominator,
            domain,
        })
    }

    /// Evaluate the transfer function at a complex point.
    pub fn eval(&self, x: C64) -> C64 {
        let horner = |c: &[f64]| {
            c.iter()
                .fold(C64::new(0.0, 0.0), |acc, &k| acc * x + C64::new(k, 0.0))
        };
        horner(&self.numerator) / horner(&self.denominator)
    }
}

/// Effective polynomial degree (index of first nonzero coefficient),
/// or None for the zero polynomial.
fn degree(coeffs: &[f64]) -> Option<usize> {
    coeffs
        .iter()
        .position(|&c| c != 0.0)
        .map(|i| coeffs.len() - 1 - i)
}

/// LTI system x' = Ax + Bu, y = Cx + Du (or the discrete-time update).
///
/// n = 0 is allowed and represents a pure gain D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub domain: TimeDomain,
}

impl StateSpaceModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        domain: TimeDomain,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || c.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "B has {} rows and C has {} cols, expected {}",
                b.nrows(),
                c.ncols(),
                n
            )));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b, c, d, domain })
    }

    /// Pure gain (n = 0).
    pub fn gain(d: DMatrix<f64>, domain: TimeDomain) -> Self {
        let p = d.nrows();
        let m = d.ncols();
        Self {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, m),
            c: DMatrix::zeros(p, 0),
            d,
            domain,
        }
    }

    /// Scalar pure gain.
    pub fn scalar_gain(g: f64, domain: TimeDomain) -> Self {
        Self::gain(DMatrix::from_element(1, 1, g), domain)
    }

    /// Identity map of a given width.
    pub fn identity(size: usize, domain: TimeDomain) -> Self {
        Self::gain(DMatrix::identity(size, size), domain)
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn num_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn sample_time(&self) -> Option<f64> {
        self.domain.sample_time()
    }

    /// Eigenvalues of A.
    pub fn poles(&self) -> Vec<C64> {
        eigenvalues(&self.a)
    }

    /// Asymptotic stability with margin `eps`: discrete systems need
    /// spectral radius < 1 - eps, continuous systems need all real
    /// parts < -eps. Marginal poles count as unstable.
    pub fn is_stable_margin(&self, eps: f64) -> bool {
        let poles = self.poles();
        match self.domain {
            TimeDomain::Continuous => poles.iter().all(|p| p.re < -eps),
            TimeDomain::Discrete { .. } => poles.iter().all(|p| p.norm() < 1.0 - eps),
        }
    }

    pub fn is_stable(&self) -> bool {
        self.is_stable_margin(EPS_STAB)
    }

    /// C (zeta*I - A)^{-1} B + D at zeta = j*omega (continuous) or
    /// zeta = e^{j*omega} with omega in rad/sample (discrete).
    pub fn freq_response(&self, omega: f64) -> Result<DMatrix<C64>> {
        let zeta = match self.domain {
            TimeDomain::Continuous => C64::new(0.0, omega),
            TimeDomain::Discrete { .. } => C64::new(omega.cos(), omega.sin()),
        };
        self.eval_at(zeta)
    }

    /// Transfer matrix evaluated at an arbitrary complex point.
    pub fn eval_at(&self, zeta: C64) -> Result<DMatrix<C64>> {
        let n = self.order();
        let dc = to_complex(&self.d);
        if n == 0 {
            return Ok(dc);
        }
        let mut m = to_complex(&self.a).map(|x| -x);
        for i in 0..n {
            m[(i, i)] += zeta;
        }
        let lu = m.lu();
        let bc = to_complex(&self.b);
        let x = lu.solve(&bc).ok_or(Error::NearPole)?;
        Ok(to_complex(&self.c) * x + dc)
    }

    /// One step of the discrete recursion: returns (A x + B u, C x + D u).
    pub fn step_states(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if x.len() != self.order() || u.len() != self.num_inputs() {
            return Err(Error::DimensionMismatch(format!(
                "state len {} (expected {}), input len {} (expected {})",
                x.len(),
                self.order(),
                u.len(),
                self.num_inputs()
            )));
        }
        let x_next = &self.a * x + &self.b * u;
        let y = &self.c * x + &self.d * u;
        Ok((x_next, y))
    }

    /// H-infinity norm by dense log-spaced frequency gridding with
    /// golden-section refinement around the grid peak.
    pub fn hinf_norm(&self, rel_tol: f64) -> Result<f64> {
        if !self.is_stable() {
            return Err(Error::UnstableSystem);
        }
        let sbar_d = max_singular_value_real(&self.d);
        if self.order() == 0 || self.num_inputs() == 0 || self.num_outputs() == 0 {
            return Ok(sbar_d);
        }
        let sbar = |w: f64| -> f64 {
            self.freq_response(w)
                .map(|g| max_singular_value(&g))
                .unwrap_or(0.0)
        };

        let grid = self.norm_grid(2000);
        let mut best_i = 0;
        let mut best = f64::NEG_INFINITY;
        let vals: Vec<f64> = grid.iter().map(|&w| sbar(w)).collect();
        for (i, &v) in vals.iter().enumerate() {
            if v > best {
                best = v;
                best_i = i;
            }
        }
        // Refine between the neighbors of the grid peak.
        let lo = if best_i == 0 { grid[0] } else { grid[best_i - 1] };
        let hi = if best_i + 1 == grid.len() {
            grid[best_i]
        } else {
            grid[best_i + 1]
        };
        let refined = golden_max(lo.max(1e-300), hi, rel_tol * 1e-2, &sbar);
        Ok(best.max(refined).max(sbar_d))
    }

    /// Log-spaced evaluation grid including 0 (and pi for discrete).
    fn norm_grid(&self, n_points: usize) -> Vec<f64> {
        let mut grid = vec![0.0];
        match self.domain {
            TimeDomain::Continuous => {
                let poles = self.poles();
                let mags: Vec<f64> = poles.iter().map(|p| p.norm()).filter(|&m| m > 0.0).collect();
                let lo = mags.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = mags.iter().cloned().fold(0.0f64, f64::max);
                let (w_lo, w_hi) = if mags.is_empty() {
                    (1e-4, 1e6)
                } else {
                    (lo * 1e-4, hi * 1e4)
                };
                log_space(w_lo, w_hi, n_points, &mut grid);
            }
            TimeDomain::Discrete { .. } => {
                log_space(1e-7, std::f64::consts::PI, n_points, &mut grid);
                grid.push(std::f64::consts::PI);
            }
        }
        grid
    }
}

fn log_space(lo: f64, hi: f64, n: usize, out: &mut Vec<f64>) {
    let (l0, l1) = (lo.ln(), hi.ln());
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        out.push((l0 + t * (l1 - l0)).exp());
    }
}

/// Golden-section maximization of f over [lo, hi] in log-frequency.
fn golden_max(lo: f64, hi: f64, rel_tol: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    if !(hi > lo) {
        return f(lo.max(hi));
    }
    let phi = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = f(c.exp());
    let mut fd = f(d.exp());
    for _ in 0..200 {
        if (b - a).abs() < rel_tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d.exp());
        }
    }
    fc.max(fd)
}

/// Diagonal (Osborne-style) balancing by powers of two: an exact
/// similarity, so eigenvalues are unchanged while badly scaled
/// matrices become tractable for the QR iteration.
fn balance_for_eigen(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _ in 0..32 {
        let mut changed = false;
        for i in 0..n {
            let mut row = 0.0;
            let mut col = 0.0;
            for j in 0..n {
                if j != i {
                    row += a[(i, j)].abs();
                    col += a[(j, i)].abs();
                }
            }
            if row == 0.0 || col == 0.0 {
                continue;
            }
            let f = (col / row).sqrt().log2().round();
            if f == 0.0 || !f.is_finite() {
                continue;
            }
            let f = 2f64.powi(f.clamp(-512.0, 512.0) as i32);
            for j in 0..n {
                a[(i, j)] *= f;
                a[(j, i)] /= f;
            }
            changed = true;
        }
        if !changed {
            break;
        }
    }
    a
}

/// Eigenvalues through a balanced, iteration-capped Schur
/// decomposition. The unbounded QR iteration can spin forever on hard
/// matrices; when the capped iteration fails, fall back to the
/// eigenvalues of A + E for a tiny perturbation (shifting the diagonal
/// breaks the symmetry that stalls the iteration).
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<C64> {
    let n = m.nrows();
    if n == 0 {
        return Vec::new();
    }
    let m = &balance_for_eigen(m);
    if let Some(schur) = m.clone().try_schur(1e-14, 20_000) {
        return schur.complex_eigenvalues().iter().copied().collect();
    }
    let scale = m.iter().map(|x| x.abs()).fold(0.0f64, f64::max).max(1.0);
    for k in 1..=3 {
        let mut shifted = m.clone();
        let eps = scale * 1e-12 * 10f64.powi(k);
        for i in 0..n {
            shifted[(i, i)] += eps * if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        if let Some(schur) = shifted.try_schur(1e-14, 20_000) {
            return schur.complex_eigenvalues().iter().copied().collect();
        }
    }
    // Last resort: the uncapped iteration.
    m.complex_eigenvalues().iter().copied().collect()
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|x| C64::new(x, 0.0))
}

pub fn max_singular_value(m: &DMatrix<C64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
}

pub fn max_singular_value_real(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
}

/// Controllable canonical realization of a proper rational transfer
/// function. State dimension equals the denominator degree.
pub fn realize_tf(tf: &RationalTransferFunction) -> Result<StateSpaceModel> {
    let den = &tf.denominator;
    if den.is_empty() || den[0] == 0.0 {
        return Err(Error::DegenerateDenominator);
    }
    let n = den.len() - 1;
    // Monic denominator: s^n + a1 s^{n-1} + ... + an.
    let a_coef: Vec<f64> = den[1..].iter().map(|&c| c / den[0]).collect();
    // Numerator padded to length n+1: b0 s^n + ... + bn.
    let num_deg = degree(&tf.numerator);
    if let Some(nd) = num_deg {
        if nd > n {
            return Err(Error::NonProper {
                num_deg: nd,
                den_deg: n,
            });
        }
    }
    let mut b_coef = vec![0.0; n + 1];
    for (i, &c) in tf.numerator.iter().rev().enumerate() {
        if n >= i {
            b_coef[n - i] = c / den[0];
        }
    }

    if n == 0 {
        return Ok(StateSpaceModel::gain(
            DMatrix::from_element(1, 1, b_coef[0]),
            tf.domain,
        ));
    }

    let mut a = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = -a_coef[n - 1 - j];
    }
    let mut b = DMatrix::zeros(n, 1);
    b[(n - 1, 0)] = 1.0;
    let d0 = b_coef[0];
    let mut c = DMatrix::zeros(1, n);
    for j in 0..n {
        // y = (b_{n-j} - b0 a_{n-j}) on state j (ascending powers order).
        c[(0, j)] = b_coef[n - j] - d0 * a_coef[n - 1 - j];
    }
    StateSpaceModel::new(a, b, c, DMatrix::from_element(1, 1, d0), tf.domain)
}

fn check_domains(g1: &StateSpaceModel, g2: &StateSpaceModel) -> Result<()> {
    if !g1.domain.compatible_with(&g2.domain) {
        return Err(Error::DomainMismatch(format!(
            "{:?} vs {:?}",
            g1.domain, g2.domain
        )));
    }
    Ok(())
}

/// Series interconnection with response G1(w) * G2(w): the input feeds
/// g2, whose output feeds g1.
pub fn series(g1: &StateSpaceModel, g2: &StateSpaceModel) -> Result<StateSpaceModel> {
    check_domains(g1, g2)?;
    if g1.num_inputs() != g2.num_outputs() {
        return Err(Error::DimensionMismatch(format!(
            "series: g1 has {} inputs, g2 has {} outputs",
            g1.num_inputs(),
            g2.num_outputs()
        )));
    }
    let (n1, n2) = (g1.order(), g2.order());
    let n = n1 + n2;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (n1, n1)).copy_from(&g1.a);
    a.view_mut((n1, n1), (n2, n2)).copy_from(&g2.a);
    a.view_mut((0, n1), (n1, n2)).copy_from(&(&g1.b * &g2.c));
    let mut b = DMatrix::zeros(n, g2.num_inputs());
    b.view_mut((0, 0), (n1, g2.num_inputs()))
        .copy_from(&(&g1.b * &g2.d));
    b.view_mut((n1, 0), (n2, g2.num_inputs())).copy_from(&g2.b);
    let mut c = DMatrix::zeros(g1.num_outputs(), n);
    c.view_mut((0, 0), (g1.num_outputs(), n1)).copy_from(&g1.c);
    c.view_mut((0, n1), (g1.num_outputs(), n2))
        .copy_from(&(&g1.d * &g2.c));
    let d = &g1.d * &g2.d;
    StateSpaceModel::new(a, b, c, d, g1.domain)
}

/// Parallel interconnection: shared input, summed outputs.
pub fn parallel(g1: &StateSpaceModel, g2: &StateSpaceModel) -> Result<StateSpaceModel> {
    check_domains(g1, g2)?;
    if g1.num_inputs() != g2.num_inputs() || g1.num_outputs() != g2.num_outputs() {
        return Err(Error::DimensionMismatch(
            "parallel: operand port dimensions differ".into(),
        ));
    }
    let (n1, n2) = (g1.order(), g2.order());
    let n = n1 + n2;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (n1, n1)).copy_from(&g1.a);
    a.view_mut((n1, n1), (n2, n2)).copy_from(&g2.a);
    let mut b = DMatrix::zeros(n, g1.num_inputs());
    b.view_mut((0, 0), (n1, g1.num_inputs())).copy_from(&g1.b);
    b.view_mut((n1, 0), (n2, g1.num_inputs())).copy_from(&g2.b);
    let mut c = DMatrix::zeros(g1.num_outputs(), n);
    c.view_mut((0, 0), (g1.num_outputs(), n1)).copy_from(&g1.c);
    c.view_mut((0, n1), (g1.num_outputs(), n2)).copy_from(&g2.c);
    let d = &g1.d + &g2.d;
    StateSpaceModel::new(a, b, c, d, g1.domain)
}

/// Block-diagonal interconnection: stacked inputs, stacked outputs.
pub fn block_diagonal(g1: &StateSpaceModel, g2: &StateSpaceModel) -> Result<StateSpaceModel> {
    check_domains(g1, g2)?;
    let (n1, n2) = (g1.order(), g2.order());
    let (m1, m2) = (g1.num_inputs(), g2.num_inputs());
    let (p1, p2) = (g1.num_outputs(), g2.num_outputs());
    let n = n1 + n2;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (n1, n1)).copy_from(&g1.a);
    a.view_mut((n1, n1), (n2, n2)).copy_from(&g2.a);
    let mut b = DMatrix::zeros(n, m1 + m2);
    b.view_mut((0, 0), (n1, m1)).copy_from(&g1.b);
    b.view_mut((n1, m1), (n2, m2)).copy_from(&g2.b);
    let mut c = DMatrix::zeros(p1 + p2, n);
    c.view_mut((0, 0), (p1, n1)).copy_from(&g1.c);
    c.view_mut((p1, n1), (p2, n2)).copy_from(&g2.c);
    let mut d = DMatrix::zeros(p1 + p2, m1 + m2);
    d.view_mut((0, 0), (p1, m1)).copy_from(&g1.d);
    d.view_mut((p1, m1), (p2, m2)).copy_from(&g2.d);
    StateSpaceModel::new(a, b, c, d, g1.domain)
}

/// Lower linear fractional transformation: close the last `n_meas`
/// outputs of `p` against `k`, whose outputs drive the last `n_act`
/// inputs of `p`. Returns the map from the remaining inputs to the
/// remaining outputs.
pub fn lft_lower_raw(
    p: &StateSpaceModel,
    n_meas: usize,
    n_act: usize,
    k: &StateSpaceModel,
) -> Result<StateSpaceModel> {
    check_domains(p, k)?;
    if n_meas > p.num_outputs() || n_act > p.num_inputs() {
        return Err(Error::DimensionMismatch(
            "lft: partition larger than plant".into(),
        ));
    }
    if k.num_inputs() != n_meas || k.num_outputs() != n_act {
        return Err(Error::DimensionMismatch(format!(
            "lft: controller is {}x{}, expected {}x{}",
            k.num_outputs(),
            k.num_inputs(),
            n_act,
            n_meas
        )));
    }
    let n_w = p.num_inputs() - n_act;
    let n_z = p.num_outputs() - n_meas;
    let np = p.order();
    let nk = k.order();

    let b1 = p.b.columns(0, n_w).into_owned();
    let b2 = p.b.columns(n_w, n_act).into_owned();
    let c1 = p.c.rows(0, n_z).into_owned();
    let c2 = p.c.rows(n_z, n_meas).into_owned();
    let d11 = p.d.view((0, 0), (n_z, n_w)).into_owned();
    let d12 = p.d.view((0, n_w), (n_z, n_act)).into_owned();
    let d21 = p.d.view((n_z, 0), (n_meas, n_w)).into_owned();
    let d22 = p.d.view((n_z, n_w), (n_meas, n_act)).into_owned();

    // y = C2 x + D21 w + D22 u, u = Ck xk + Dk y.
    let loop_mat = DMatrix::identity(n_meas, n_meas) - &d22 * &k.d;
    let loop_inv = loop_mat.try_inverse().ok_or(Error::AlgebraicLoop)?;

    let my_c2 = &loop_inv * &c2;
    let my_ck = &loop_inv * &d22 * &k.c;
    let my_d21 = &loop_inv * &d21;

    // u = Dk y + Ck xk with y substituted.
    let u_x = &k.d * &my_c2;
    let u_xk = &k.c + &k.d * &my_ck;
    let u_w = &k.d * &my_d21;

    let n = np + nk;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (np, np)).copy_from(&(&p.a.clone() + &b2 * &u_x));
    a.view_mut((0, np), (np, nk)).copy_from(&(&b2 * &u_xk));
    a.view_mut((np, 0), (nk, np)).copy_from(&(&k.b * &my_c2));
    a.view_mut((np, np), (nk, nk))
        .copy_from(&(&k.a + &k.b * &my_ck));
    let mut b = DMatrix::zeros(n, n_w);
    b.view_mut((0, 0), (np, n_w)).copy_from(&(&b1 + &b2 * &u_w));
    b.view_mut((np, 0), (nk, n_w)).copy_from(&(&k.b * &my_d21));
    let mut c = DMatrix::zeros(n_z, n);
    c.view_mut((0, 0), (n_z, np)).copy_from(&(&c1 + &d12 * &u_x));
    c.view_mut((0, np), (n_z, nk)).copy_from(&(&d12 * &u_xk));
    let d = &d11 + &d12 * &u_w;
    StateSpaceModel::new(a, b, c, d, p.domain)
}

/// Discrete SISO delay z^{-k} as a k-state shift chain. k = 0 is the
/// identity gain.
pub fn delay_block(k: usize, sample_time: f64) -> StateSpaceModel {
    let domain = TimeDomain::discrete(sample_time);
    if k == 0 {
        return StateSpaceModel::scalar_gain(1.0, domain);
    }
    let mut a = DMatrix::zeros(k, k);
    for i in 1..k {
        a[(i, i - 1)] = 1.0;
    }
    let mut b = DMatrix::zeros(k, 1);
    b[(0, 0)] = 1.0;
    let mut c = DMatrix::zeros(1, k);
    c[(0, k - 1)] = 1.0;
    StateSpaceModel::new(a, b, c, DMatrix::zeros(1, 1), domain).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn first_order_lag() -> StateSpaceModel {
        // 1/(s+1)
        realize_tf(
            &RationalTransferFunction::new(vec![1.0], vec![1.0, 1.0], TimeDomain::Continuous)
                .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn realize_first_order() {
        let g = first_order_lag();
        assert_eq!(g.order(), 1);
        assert_relative_eq!(g.a[(0, 0)], -1.0);
        assert_relative_eq!(g.b[(0, 0)], 1.0);
        assert_relative_eq!(g.c[(0, 0)], 1.0);
        assert_relative_eq!(g.d[(0, 0)], 0.0);
    }

    #[test]
    fn realize_static_gain() {
        let tf =
            RationalTransferFunction::new(vec![5.0], vec![1.0], TimeDomain::Continuous).unwrap();
        let g = realize_tf(&tf).unwrap();
        assert_eq!(g.order(), 0);
        assert_relative_eq!(g.d[(0, 0)], 5.0);
    }

    #[test]
    fn realize_rejects_nonproper() {
        let r = RationalTransferFunction::new(vec![1.0, 0.0], vec![1.0], TimeDomain::Continuous);
        assert!(matches!(r, Err(Error::NonProper { .. })));
    }

    #[test]
    fn realize_rejects_degenerate_denominator() {
        let r = RationalTransferFunction::new(vec![1.0], vec![0.0, 1.0], TimeDomain::Continuous);
        assert!(matches!(r, Err(Error::DegenerateDenominator)));
    }

    #[test]
    fn amplifier_dc_gain() {
        // Experimentally identified amplifier model: DC gain 6.221e9/6.099e9.
        let tf = RationalTransferFunction::new(
            vec![6.221e9],
            vec![1.0, 1.255e5, 6.099e9],
            TimeDomain::Continuous,
        )
        .unwrap();
        let g = realize_tf(&tf).unwrap();
        assert_eq!(g.order(), 2);
        let dc = g.eval_at(C64::new(0.0, 0.0)).unwrap()[(0, 0)].re;
        assert_relative_eq!(dc, 6.221e9 / 6.099e9, max_relative = 1e-12);
        assert!((dc - 1.02).abs() < 1e-4);
        assert!(g.is_stable());
    }

    #[test]
    fn series_of_gains() {
        let g = series(
            &StateSpaceModel::scalar_gain(2.0, TimeDomain::Continuous),
            &StateSpaceModel::scalar_gain(3.0, TimeDomain::Continuous),
        )
        .unwrap();
        assert_relative_eq!(g.d[(0, 0)], 6.0);
    }

    #[test]
    fn parallel_cancels() {
        let g = parallel(
            &StateSpaceModel::scalar_gain(2.0, TimeDomain::Continuous),
            &StateSpaceModel::scalar_gain(-2.0, TimeDomain::Continuous),
        )
        .unwrap();
        assert_relative_eq!(g.d[(0, 0)], 0.0);
    }

    #[test]
    fn series_dc_value() {
        let g1 = first_order_lag();
        let g2 = realize_tf(
            &RationalTransferFunction::new(vec![1.0], vec![1.0, 2.0], TimeDomain::Continuous)
                .unwrap(),
        )
        .unwrap();
        let g = series(&g1, &g2).unwrap();
        let dc = g.eval_at(C64::new(0.0, 0.0)).unwrap()[(0, 0)].re;
        assert_relative_eq!(dc, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn domain_mismatch_rejected() {
        let g1 = StateSpaceModel::scalar_gain(1.0, TimeDomain::Continuous);
        let g2 = StateSpaceModel::scalar_gain(1.0, TimeDomain::discrete(1e-4));
        assert!(matches!(series(&g1, &g2), Err(Error::DomainMismatch(_))));
    }

    #[test]
    fn lft_zero_controller_gives_p11() {
        // P = [[1,1],[1,0]] static, K = 0 -> closed loop = P11 = 1.
        let p = StateSpaceModel::gain(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]),
            TimeDomain::Continuous,
        );
        let k = StateSpaceModel::scalar_gain(0.0, TimeDomain::Continuous);
        let cl = lft_lower_raw(&p, 1, 1, &k).unwrap();
        assert_relative_eq!(cl.d[(0, 0)], 1.0);
    }

    #[test]
    fn lft_scalar_static_example() {
        // P = [[1,1],[1,0]], K = 0.5 -> 1 + 1*0.5*(1-0)^{-1}*1 = 1.5.
        let p = StateSpaceModel::gain(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]),
            TimeDomain::Continuous,
        );
        let k = StateSpaceModel::scalar_gain(0.5, TimeDomain::Continuous);
        let cl = lft_lower_raw(&p, 1, 1, &k).unwrap();
        assert_relative_eq!(cl.d[(0, 0)], 1.5, max_relative = 1e-12);
    }

    #[test]
    fn lft_algebraic_loop_detected() {
        // P22 = 1, K = 1 -> I - D22 Dk singular.
        let p = StateSpaceModel::gain(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            TimeDomain::Continuous,
        );
        let k = StateSpaceModel::scalar_gain(1.0, TimeDomain::Continuous);
        assert!(matches!(
            lft_lower_raw(&p, 1, 1, &k),
            Err(Error::AlgebraicLoop)
        ));
    }

    #[test]
    fn stability_classification() {
        let ts = TimeDomain::discrete(1.0);
        let stable = StateSpaceModel::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            ts,
        )
        .unwrap();
        assert!(stable.is_stable());
        let marginal = StateSpaceModel::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            ts,
        )
        .unwrap();
        assert!(!marginal.is_stable());
    }

    #[test]
    fn freq_response_first_order_point() {
        let g = first_order_lag();
        let h = g.freq_response(1.0).unwrap()[(0, 0)];
        assert_relative_eq!(h.norm(), 1.0 / 2f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn freq_response_static() {
        let g = StateSpaceModel::scalar_gain(3.0, TimeDomain::Continuous);
        let h = g.freq_response(123.0).unwrap()[(0, 0)];
        assert_relative_eq!(h.re, 3.0);
    }

    #[test]
    fn zoh_integrator_at_pi() {
        // Ts/(z-1) evaluated at z = -1 gives Ts/(-2).
        let ts = 0.25;
        let g = StateSpaceModel::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, ts),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            TimeDomain::discrete(ts),
        )
        .unwrap();
        let h = g.freq_response(std::f64::consts::PI).unwrap()[(0, 0)];
        assert_relative_eq!(h.re, ts / -2.0, max_relative = 1e-12);
        assert_relative_eq!(h.norm(), ts / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn hinf_norm_static_matrix() {
        let g = StateSpaceModel::gain(
            DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 4.0]),
            TimeDomain::Continuous,
        );
        assert_relative_eq!(g.hinf_norm(1e-3).unwrap(), 4.0, max_relative = 1e-9);
    }

    #[test]
    fn hinf_norm_first_order() {
        let g = first_order_lag();
        assert_relative_eq!(g.hinf_norm(1e-3).unwrap(), 1.0, max_relative = 1e-3);
    }

    #[test]
    fn hinf_norm_rejects_unstable() {
        let g = realize_tf(
            &RationalTransferFunction::new(vec![1.0], vec![1.0, -1.0], TimeDomain::Continuous)
                .unwrap(),
        )
        .unwrap();
        assert!(matches!(g.hinf_norm(1e-3), Err(Error::UnstableSystem)));
    }

    #[test]
    fn hinf_norm_amplifier_vs_brute_force() {
        let tf = RationalTransferFunction::new(
            vec![6.221e9],
            vec![1.0, 1.255e5, 6.099e9],
            TimeDomain::Continuous,
        )
        .unwrap();
        let g = realize_tf(&tf).unwrap();
        let norm = g.hinf_norm(1e-4).unwrap();
        // Brute-force grid oracle over 10^6 points.
        let mut brute: f64 = 0.0;
        let n = 1_000_000;
        for i in 0..n {
            let w = 10f64.powf(-1.0 + 8.0 * i as f64 / (n - 1) as f64);
            brute = brute.max(tf.eval(C64::new(0.0, w)).norm());
        }
        assert!(norm >= brute * (1.0 - 1e-6));
        assert_relative_eq!(norm, brute, max_relative = 1e-3);
    }

    #[test]
    fn delay_block_impulse() {
        let g = delay_block(2, 1.0);
        let mut x = DVector::zeros(2);
        let mut outputs = Vec::new();
        for step in 0..5 {
            let u = DVector::from_element(1, if step == 0 { 1.0 } else { 0.0 });
            let (xn, y) = g.step_states(&x, &u).unwrap();
            outputs.push(y[0]);
            x = xn;
        }
        assert_eq!(outputs, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn delay_block_zero_is_identity() {
        let g = delay_block(0, 1.0);
        assert_eq!(g.order(), 0);
        assert_relative_eq!(g.d[(0, 0)], 1.0);
    }

    #[test]
    fn delay_block_frequency_point() {
        let g = delay_block(1, 1.0);
        let h = g.freq_response(std::f64::consts::FRAC_PI_2).unwrap()[(0, 0)];
        assert_relative_eq!(h.re, 0.0, epsilon = 1e-15);
        assert_relative_eq!(h.im, -1.0, max_relative = 1e-12);
    }

    #[test]
    fn step_states_basic() {
        let g = StateSpaceModel::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            TimeDomain::discrete(1.0),
        )
        .unwrap();
        let (xn, y) = g
            .step_states(&DVector::zeros(1), &DVector::from_element(1, 5.0))
            .unwrap();
        assert_relative_eq!(xn[0], 5.0);
        assert_relative_eq!(y[0], 0.0);
    }

    #[test]
    fn step_states_pure_gain() {
        let g = StateSpaceModel::scalar_gain(2.0, TimeDomain::discrete(1.0));
        let (xn, y) = g
            .step_states(&DVector::zeros(0), &DVector::from_element(1, 3.0))
            .unwrap();
        assert_eq!(xn.len(), 0);
        assert_relative_eq!(y[0], 6.0);
    }

    #[test]
    fn zoh_integrator_ramp() {
        let ts = 0.1;
        let g = StateSpaceModel::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, ts),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            TimeDomain::discrete(ts),
        )
        .unwrap();
        let mut x = DVector::zeros(1);
        let u = DVector::from_element(1, 1.0);
        let n = 20;
        let mut y_last = 0.0;
        for _ in 0..n {
            let (xn, y) = g.step_states(&x, &u).unwrap();
            y_last = y[0];
            x = xn;
        }
        assert_relative_eq!(y_last, (n - 1) as f64 * ts, max_relative = 1e-12);
    }
}
