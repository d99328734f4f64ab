//! Continuous-to-discrete conversion: bilinear (Tustin) transform and
//! zero-order hold, plus the matrix exponential they rely on.
//!
//! The bilinear routines use the symmetric sqrt(Ts) input/output
//! splitting so that the transform is exactly invertible; `d2c_bilinear`
//! is the inverse map used by the synthesis lifting.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lti::{StateSpaceModel, TimeDomain};

/// Matrix exponential by scaling-and-squaring with a Padé(13)
/// approximant (Higham's method, fixed order).
pub fn matrix_exponential(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "matrix_exponential requires a square matrix");
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }

    // 1-norm based scaling, theta_13 from Higham (2005), Table 10.2.
    let norm = one_norm(m);
    let theta_13 = 5.371_920_351_148_152;
    let s = if norm > theta_13 {
        (norm / theta_13).log2().ceil() as u32
    } else {
        0
    };
    let a = m / 2f64.powi(s as i32);

    // Padé(13) coefficients.
    let b: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];

    let ident = DMatrix::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];

    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .expect("Pade denominator is singular");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..m.ncols() {
        let s: f64 = m.column(j).iter().map(|x| x.abs()).sum();
        best = best.max(s);
    }
    best
}

/// Zero-order-hold discretization. Ad = exp(A Ts), Bd from the
/// augmented-matrix exponential; C and D are unchanged.
pub fn zoh(g: &StateSpaceModel, sample_time: f64) -> Result<StateSpaceModel> {
    if g.domain.is_discrete() {
        return Err(Error::DomainMismatch("zoh expects a continuous model".into()));
    }
    assert!(sample_time > 0.0, "sample time must be positive");
    let n = g.order();
    let m = g.num_inputs();
    // exp([[A, B], [0, 0]] * Ts) = [[Ad, Bd], [0, I]].
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&g.a);
    aug.view_mut((0, n), (n, m)).copy_from(&g.b);
    let e = matrix_exponential(&(aug * sample_time));
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, m)).into_owned();
    StateSpaceModel::new(
        ad,
        bd,
        g.c.clone(),
        g.d.clone(),
        TimeDomain::discrete(sample_time),
    )
}

/// Bilinear (Tustin) discretization, s = (2/Ts)(z-1)/(z+1).
///
/// Ad = (I - aA)^{-1}(I + aA), Bd = sqrt(Ts) (I - aA)^{-1} B,
/// Cd = sqrt(Ts) C (I - aA)^{-1}, Dd = D + a C (I - aA)^{-1} B,
/// with a = Ts/2. DC gain is preserved exactly.
pub fn bilinear(g: &StateSpaceModel, sample_time: f64) -> Result<StateSpaceModel> {
    if g.domain.is_discrete() {
        return Err(Error::DomainMismatch(
            "bilinear expects a continuous model".into(),
        ));
    }
    assert!(sample_time > 0.0, "sample time must be positive");
    let n = g.order();
    if n == 0 {
        return Ok(StateSpaceModel::gain(
            g.d.clone(),
            TimeDomain::discrete(sample_time),
        ));
    }
    let alpha = sample_time / 2.0;
    let m = DMatrix::identity(n, n) - &g.a * alpha;
    let lu = m.lu();
    if lu.determinant().abs() < 1e-300 {
        return Err(Error::SingularTransform);
    }
    let m_inv_b = lu.solve(&g.b).ok_or(Error::SingularTransform)?;
    let m_inv = lu
        .try_inverse()
        .ok_or(Error::SingularTransform)?;
    let ad = &m_inv * (DMatrix::identity(n, n) + &g.a * alpha);
    let bd = &m_inv_b * sample_time.sqrt();
    let cd = (&g.c * &m_inv) * sample_time.sqrt();
    let dd = &g.d + &g.c * &m_inv_b * alpha;
    StateSpaceModel::new(ad, bd, cd, dd, TimeDomain::discrete(sample_time))
}

/// Inverse bilinear map back to continuous time. Requires that Ad has
/// no eigenvalue at -1 (discrete pole mapping to s = infinity).
pub fn d2c_bilinear(g: &StateSpaceModel) -> Result<StateSpaceModel> {
    let sample_time = g
        .sample_time()
        .ok_or_else(|| Error::DomainMismatch("d2c_bilinear expects a discrete model".into()))?;
    let n = g.order();
    if n == 0 {
        return Ok(StateSpaceModel::gain(g.d.clone(), TimeDomain::Continuous));
    }
    let alpha = sample_time / 2.0;
    let m = &g.a + DMatrix::identity(n, n);
    let lu = m.lu();
    if lu.determinant().abs() < 1e-300 {
        return Err(Error::SingularTransform);
    }
    let m_inv = lu.try_inverse().ok_or(Error::SingularTransform)?;
    let a = (&m_inv * (&g.a - DMatrix::identity(n, n))) / alpha;
    let b = (&m_inv * &g.b) * (2.0 / sample_time.sqrt());
    let c = (&g.c * &m_inv) * (2.0 / sample_time.sqrt());
    let d = &g.d - &g.c * &m_inv * &g.b;
    StateSpaceModel::new(a, b, c, d, TimeDomain::Continuous)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{realize_tf, RationalTransferFunction, C64};
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn expm_zero_is_identity() {
        let e = matrix_exponential(&DMatrix::zeros(3, 3));
        assert_relative_eq!(e, DMatrix::identity(3, 3), epsilon = 1e-14);
    }

    #[test]
    fn expm_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        let e = matrix_exponential(&m);
        assert_relative_eq!(e[(0, 0)], 1f64.exp(), max_relative = 1e-13);
        assert_relative_eq!(e[(1, 1)], (-2f64).exp(), max_relative = 1e-13);
        assert_relative_eq!(e[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn expm_nilpotent() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = matrix_exponential(&m);
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert_relative_eq!(e, expected, epsilon = 1e-14);
    }

    #[test]
    fn expm_inverse_identity() {
        let m = DMatrix::from_row_slice(3, 3, &[0.3, -1.2, 0.5, 2.0, 0.1, -0.7, 0.9, 0.4, -1.5]);
        let e = matrix_exponential(&m);
        let e_neg = matrix_exponential(&(-&m));
        assert_relative_eq!(&e * &e_neg, DMatrix::identity(3, 3), epsilon = 1e-10);
    }

    #[test]
    fn zoh_integrator() {
        let g = realize_tf(
            &RationalTransferFunction::new(vec![1.0], vec![1.0, 0.0], TimeDomain::Continuous)
                .unwrap(),
        )
        .unwrap();
        let ts = 0.05;
        let gd = zoh(&g, ts).unwrap();
        assert_relative_eq!(gd.a[(0, 0)], 1.0, max_relative = 1e-14);
        assert_relative_eq!(gd.b[(0, 0)], ts, max_relative = 1e-13);
    }

    #[test]
    fn zoh_zero_a() {
        let g = StateSpaceModel::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            TimeDomain::Continuous,
        )
        .unwrap();
        let ts = 0.1;
        let gd = zoh(&g, ts).unwrap();
        assert_relative_eq!(gd.a, DMatrix::identity(2, 2), epsilon = 1e-14);
        assert_relative_eq!(gd.b[(0, 0)], 0.1, max_relative = 1e-13);
        assert_relative_eq!(gd.b[(1, 0)], 0.2, max_relative = 1e-13);
    }

    #[test]
    fn zoh_amplifier_step_invariance() {
        // Second-order amplifier model: the discrete step response must
        // match the closed-form continuous step response at t = k Ts.
        let num = 6.221e9;
        let (a1, a0) = (1.255e5, 6.099e9);
        let tf = RationalTransferFunction::new(
            vec![num],
            vec![1.0, a1, a0],
            TimeDomain::Continuous,
        )
        .unwrap();
        let g = realize_tf(&tf).unwrap();
        let ts = 50e-6;
        let gd = zoh(&g, ts).unwrap();

        // Underdamped pole pair at -alpha +/- j beta.
        let alpha = a1 / 2.0;
        let beta = (a0 - alpha * alpha).sqrt();
        let step = |t: f64| -> f64 {
            (num / a0)
                * (1.0
                    - (-alpha * t).exp() * ((beta * t).cos() + (alpha / beta) * (beta * t).sin()))
        };

        let mut x = DVector::zeros(2);
        let u = DVector::from_element(1, 1.0);
        for k in 0..200usize {
            let (xn, y) = gd.step_states(&x, &u).unwrap();
            let expected = step(k as f64 * ts);
            assert!(
                (y[0] - expected).abs() <= 1e-8 * expected.abs().max(1.0),
                "mismatch at k={k}: {} vs {expected}",
                y[0]
            );
            x = xn;
        }
    }

    #[test]
    fn bilinear_integrator() {
        // 1/s at Ts = 2 becomes (z+1)/(z-1).
        let g = realize_tf(
            &RationalTransferFunction::new(vec![1.0], vec![1.0, 0.0], TimeDomain::Continuous)
                .unwrap(),
        )
        .unwrap();
        let gd = bilinear(&g, 2.0).unwrap();
        for (zr, zi) in [(0.5, 0.3), (-0.2, 0.9), (0.1, -0.4)] {
            let z = C64::new(zr, zi);
            let got = gd.eval_at(z).unwrap()[(0, 0)];
            let expected = (z + 1.0) / (z - 1.0);
            assert_relative_eq!(got.re, expected.re, max_relative = 1e-12);
            assert_relative_eq!(got.im, expected.im, max_relative = 1e-12);
        }
    }

    #[test]
    fn bilinear_static_gain_unchanged() {
        let g = StateSpaceModel::scalar_gain(7.0, TimeDomain::Continuous);
        let gd = bilinear(&g, 1e-4).unwrap();
        assert_eq!(gd.order(), 0);
        assert_relative_eq!(gd.d[(0, 0)], 7.0);
    }

    #[test]
    fn bilinear_scalar_pole() {
        // 1/(s+1) at Ts = 1e-4: pole at (1 - Ts/2)/(1 + Ts/2).
        let g = realize_tf(
            &RationalTransferFunction::new(vec![1.0], vec![1.0, 1.0], TimeDomain::Continuous)
                .unwrap(),
        )
        .unwrap();
        let ts = 1e-4;
        let gd = bilinear(&g, ts).unwrap();
        let expected = (1.0 - ts / 2.0) / (1.0 + ts / 2.0);
        assert_relative_eq!(gd.a[(0, 0)], expected, max_relative = 1e-14);
    }

    #[test]
    fn bilinear_rejects_pole_at_two_over_ts() {
        // Continuous pole exactly at 2/Ts makes I - (Ts/2)A singular.
        let ts = 0.5;
        let g = realize_tf(
            &RationalTransferFunction::new(
                vec![1.0],
                vec![1.0, -2.0 / ts],
                TimeDomain::Continuous,
            )
            .unwrap(),
        )
        .unwrap();
        assert!(matches!(bilinear(&g, ts), Err(Error::SingularTransform)));
    }

    #[test]
    fn bilinear_preserves_dc_gain() {
        let tf = RationalTransferFunction::new(
            vec![2.0, 3.0],
            vec![1.0, 4.0, 5.0],
            TimeDomain::Continuous,
        )
        .unwrap();
        let g = realize_tf(&tf).unwrap();
        let gd = bilinear(&g, 1e-3).unwrap();
        let dc_c = g.eval_at(C64::new(0.0, 0.0)).unwrap()[(0, 0)].re;
        let dc_d = gd.eval_at(C64::new(1.0, 0.0)).unwrap()[(0, 0)].re;
        assert_relative_eq!(dc_c, dc_d, max_relative = 1e-12);
    }

    #[test]
    fn bilinear_frequency_warp_match() {
        // Discrete response at omega equals continuous response at the
        // pre-warped frequency (2/Ts) tan(omega Ts / 2).
        let tf = RationalTransferFunction::new(
            vec![1.0],
            vec![1.0 / (2.0 * std::f64::consts::PI * 500.0), 1.0],
            TimeDomain::Continuous,
        )
        .unwrap();
        let g = realize_tf(&tf).unwrap();
        let ts = 50e-6;
        let gd = bilinear(&g, ts).unwrap();
        for f_hz in [10.0, 60.0, 300.0, 1000.0] {
            let w_d = 2.0 * std::f64::consts::PI * f_hz * ts; // rad/sample
            let w_pre = (2.0 / ts) * (w_d / 2.0).tan();
            let hd = gd.freq_response(w_d).unwrap()[(0, 0)];
            let hc = g.freq_response(w_pre).unwrap()[(0, 0)];
            assert_relative_eq!(hd.re, hc.re, epsilon = 1e-9);
            assert_relative_eq!(hd.im, hc.im, epsilon = 1e-9);
        }
    }

    #[test]
    fn bilinear_round_trip() {
        let tf = RationalTransferFunction::new(
            vec![1.0, 2.0],
            vec![1.0, 3.0, 7.0],
            TimeDomain::Continuous,
        )
        .unwrap();
        let g = realize_tf(&tf).unwrap();
        let gd = bilinear(&g, 1e-3).unwrap();
        let gc = d2c_bilinear(&gd).unwrap();
        assert_relative_eq!(gc.a, g.a, epsilon = 1e-9);
        assert_relative_eq!(gc.b, g.b, epsilon = 1e-9);
        assert_relative_eq!(gc.c, g.c, epsilon = 1e-9);
        assert_relative_eq!(gc.d, g.d, epsilon = 1e-9);
    }
}
