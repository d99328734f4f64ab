//! Interface algorithms between the rest-of-system and device models.
//!
//! An interface is a discrete 4-input/2-output system mapping the
//! measurements (V1, Vc, I1, Id) to the actuation commands (V, J_B).
//! Two kinds exist: the classic ideal-transformer-method coupling and
//! a synthesized H-infinity controller wrapped back to physical units.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{StateSpaceModel, TimeDomain};
use crate::plant::{lowpass_d, ScalingSpec};
use crate::synthesis::ControllerRealization;

/// Which interface algorithm a realization implements.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum InterfaceKind {
    /// Ideal transformer method with a first-order feedback filter.
    Itm { filter_cutoff_hz: f64 },
    /// Synthesized H-infinity controller; the normalized-coordinates
    /// realization is retained alongside the wrapped one.
    HInf(Box<ControllerRealization>),
}

/// A discrete interface: inputs y = (V1, Vc, I1, Id), outputs
/// u = (V, J_B), in physical units at the scenario sample time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterfaceAlgorithm {
    pub kind: InterfaceKind,
    pub realization: StateSpaceModel,
}

impl InterfaceAlgorithm {
    fn check_shape(realization: &StateSpaceModel) -> Result<()> {
        if realization.num_inputs() != 4 || realization.num_outputs() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "interface must be 4-in/2-out, got {}-in/{}-out",
                realization.num_inputs(),
                realization.num_outputs()
            )));
        }
        if realization.sample_time().is_none() {
            return Err(Error::DomainMismatch(
                "interface realization must be discrete".into(),
            ));
        }
        Ok(())
    }
}

/// Ideal transformer method: V follows V1 directly (transport delays
/// live in the interconnection model, not here) and J_B follows Id
/// through a unity-DC first-order low-pass.
pub fn itm_interface(filter_cutoff_hz: f64, sample_time: f64) -> Result<InterfaceAlgorithm> {
    let nyquist = 0.5 / sample_time;
    if !(filter_cutoff_hz > 0.0) || filter_cutoff_hz >= nyquist {
        return Err(Error::CutoffAboveNyquist {
            cutoff_hz: filter_cutoff_hz,
            nyquist_hz: nyquist,
        });
    }
    let lp = lowpass_d(filter_cutoff_hz, sample_time)?;
    // Embed the scalar filter into the 4-in/2-out frame: the single
    // state listens to Id (input 3) and drives J_B (output 1); V is a
    // pure feedthrough from V1 (input 0).
    let mut b = DMatrix::zeros(1, 4);
    b[(0, 3)] = lp.b[(0, 0)];
    let mut c = DMatrix::zeros(2, 1);
    c[(1, 0)] = lp.c[(0, 0)];
    let mut d = DMatrix::zeros(2, 4);
    d[(0, 0)] = 1.0;
    d[(1, 3)] = lp.d[(0, 0)];
    let realization = StateSpaceModel::new(
        lp.a.clone(),
        b,
        c,
        d,
        TimeDomain::discrete(sample_time),
    )?;
    Ok(InterfaceAlgorithm {
        kind: InterfaceKind::Itm {
            filter_cutoff_hz,
        },
        realization,
    })
}

/// Wrap a controller synthesized on the normalized plant so it acts on
/// physical signals: inputs are divided by their measurement bounds
/// and outputs multiplied by the actuation bounds.
pub fn wrap_scaled_controller(
    k: &ControllerRealization,
    scaling: &ScalingSpec,
) -> Result<InterfaceAlgorithm> {
    InterfaceAlgorithm::check_shape(&k.sys)?;
    let d_y = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        4,
        scaling.y_bounds.iter().map(|b| 1.0 / b),
    ));
    let d_u = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        2,
        scaling.u_scales.iter().copied(),
    ));
    let realization = StateSpaceModel::new(
        k.sys.a.clone(),
        &k.sys.b * &d_y,
        &d_u * &k.sys.c,
        &d_u * &k.sys.d * &d_y,
        k.sys.domain,
    )?;
    Ok(InterfaceAlgorithm {
        kind: InterfaceKind::HInf(Box::new(k.clone())),
        realization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::SynthesisReport;
    use approx::assert_relative_eq;
    use num_complex::Complex;

    const TS: f64 = 50e-6;

    #[test]
    fn itm_has_one_state_and_unity_v_path() {
        for cutoff in [10.0, 600.0, 9000.0] {
            let itm = itm_interface(cutoff, TS).unwrap();
            assert_eq!(itm.realization.order(), 1);
            // V responds only to V1, with unit gain at every frequency.
            for omega in [0.0, 0.3, 1.0, 3.0] {
                let h = itm.realization.freq_response(omega).unwrap();
                assert_relative_eq!(h[(0, 0)].re, 1.0, max_relative = 1e-14);
                assert!(h[(0, 0)].im.abs() < 1e-14);
                for j in 1..4 {
                    assert_eq!(h[(0, j)], Complex::new(0.0, 0.0));
                }
                // Structural zeros from Vc and I1 on both outputs.
                assert_eq!(h[(1, 1)], Complex::new(0.0, 0.0));
                assert_eq!(h[(1, 2)], Complex::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn itm_filter_unity_dc_gain() {
        let itm = itm_interface(600.0, TS).unwrap();
        let h = itm.realization.freq_response(0.0).unwrap();
        assert_relative_eq!(h[(1, 3)].re, 1.0, max_relative = 1e-12);
        assert!(h[(1, 3)].im.abs() < 1e-12);
    }

    #[test]
    fn itm_wide_open_filter_tracks_step() {
        // Cutoff just below Nyquist: J_B reaches a unit Id step within
        // 2% after 5 samples.
        let itm = itm_interface(0.49 / TS, TS).unwrap();
        let sys = &itm.realization;
        let mut x = nalgebra::DVector::zeros(1);
        let u = nalgebra::DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
        let mut jb = 0.0;
        for _ in 0..5 {
            jb = (&sys.c * &x + &sys.d * &u)[1];
            x = &sys.a * &x + &sys.b * &u;
        }
        assert!((jb - 1.0).abs() < 0.02, "J_B = {jb}");
    }

    #[test]
    fn itm_rejects_cutoff_at_nyquist() {
        assert!(matches!(
            itm_interface(10_000.0, TS),
            Err(Error::CutoffAboveNyquist { .. })
        ));
        assert!(itm_interface(0.0, TS).is_err());
    }

    fn fake_controller(sys: StateSpaceModel) -> ControllerRealization {
        ControllerRealization {
            sys,
            gamma_achieved: 1.0,
            synthesis_report: SynthesisReport::default(),
        }
    }

    #[test]
    fn unity_scales_wrap_is_identity() {
        let k = fake_controller(StateSpaceModel::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DMatrix::from_row_slice(2, 4, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]),
            TimeDomain::discrete(TS),
        )
        .unwrap());
        let wrapped = wrap_scaled_controller(&k, &ScalingSpec::unity()).unwrap();
        assert_eq!(wrapped.realization.a, k.sys.a);
        assert_eq!(wrapped.realization.b, k.sys.b);
        assert_eq!(wrapped.realization.c, k.sys.c);
        assert_eq!(wrapped.realization.d, k.sys.d);
    }

    #[test]
    fn wrap_composes_physical_gains() {
        // Unit normalized gain V1 -> V becomes 200/120 in physical
        // units with the default bounds.
        let mut d = DMatrix::zeros(2, 4);
        d[(0, 0)] = 1.0;
        let k = fake_controller(StateSpaceModel::gain(d, TimeDomain::discrete(TS)));
        let wrapped = wrap_scaled_controller(&k, &ScalingSpec::default()).unwrap();
        assert_relative_eq!(
            wrapped.realization.d[(0, 0)],
            200.0 / 120.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn wrap_matches_diagonal_frequency_oracle() {
        let k = fake_controller(StateSpaceModel::new(
            DMatrix::from_row_slice(2, 2, &[0.3, 0.1, -0.2, 0.6]),
            DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.5, -0.3, 0.2, 1.0, 0.0, 0.7]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.4, -0.6, 0.9]),
            DMatrix::from_row_slice(2, 4, &[0.1, 0.0, 0.0, 0.2, 0.0, 0.3, 0.4, 0.0]),
            TimeDomain::discrete(TS),
        )
        .unwrap());
        let scaling = ScalingSpec::default();
        let wrapped = wrap_scaled_controller(&k, &scaling).unwrap();
        // Deterministic pseudo-random frequencies in (0, pi).
        let mut state = 0x2545f4914f6cdd1du64;
        for _ in 0..50 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let omega = (state >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::PI;
            let h_k = k.sys.freq_response(omega).unwrap();
            let h_w = wrapped.realization.freq_response(omega).unwrap();
            for r in 0..2 {
                for c in 0..4 {
                    let expect = h_k[(r, c)] * scaling.u_scales[r] / scaling.y_bounds[c];
                    assert!((h_w[(r, c)] - expect).norm() <= 1e-12 * (1.0 + expect.norm()));
                }
            }
        }
    }

    #[test]
    fn wrap_rejects_wrong_shape() {
        let k = fake_controller(StateSpaceModel::gain(
            DMatrix::zeros(2, 3),
            TimeDomain::discrete(TS),
        ));
        assert!(matches!(
            wrap_scaled_controller(&k, &ScalingSpec::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
