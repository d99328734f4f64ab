//! Continuous-time circuit models of the PHIL components.
//!
//! The ROS is a Thevenin source V_grid behind Z1(s) = R1 + L1 s with a
//! shunt resistor R_j; the DUT is a resistive load R2 driven by the
//! identified amplifier A(s); the REF model is their direct
//! interconnection, free of delays and amplifiers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{realize_tf, RationalTransferFunction, StateSpaceModel, TimeDomain};
use crate::plant::DelaySpec;

/// Physical and configuration parameters of one PHIL scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PhilScenario {
    /// Grid RMS voltage, volts.
    pub v_grid_rms: f64,
    /// Fundamental frequency, hertz.
    pub f0: f64,
    /// Current-source shunt resistor R_j, ohms.
    pub shunt_resistance: f64,
    /// DUT load resistance R2, ohms.
    pub dut_resistance: f64,
    /// Grid short-circuit ratio S.
    pub scr: f64,
    /// Reactance-to-resistance ratio of the grid impedance.
    pub xr_ratio: f64,
    /// Amplifier transfer function numerator, descending powers of s.
    pub amplifier_num: Vec<f64>,
    /// Amplifier transfer function denominator, descending powers of s.
    pub amplifier_den: Vec<f64>,
    /// Real-time sample period, seconds.
    pub sample_time: f64,
    pub delay_spec: DelaySpec,
}

impl Default for PhilScenario {
    fn default() -> Self {
        Self {
            v_grid_rms: 120.0,
            f0: 60.0,
            shunt_resistance: 1000.0,
            dut_resistance: 24.0,
            scr: 1.0,
            xr_ratio: 1.0,
            amplifier_num: vec![6.221e9],
            amplifier_den: vec![1.0, 1.255e5, 6.099e9],
            sample_time: 50e-6,
            delay_spec: DelaySpec::default(),
        }
    }
}

impl PhilScenario {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("v_grid_rms", self.v_grid_rms),
            ("f0", self.f0),
            ("shunt_resistance", self.shunt_resistance),
            ("dut_resistance", self.dut_resistance),
            ("scr", self.scr),
            ("sample_time", self.sample_time),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(Error::ValidationError {
                    field: name.into(),
                    constraint: format!("must be strictly positive, got {value}"),
                });
            }
        }
        if !(self.xr_ratio >= 0.0) {
            return Err(Error::ValidationError {
                field: "xr_ratio".into(),
                constraint: "must be >= 0".into(),
            });
        }
        if self.amplifier_den.is_empty() || self.amplifier_den[0] == 0.0 {
            return Err(Error::ValidationError {
                field: "amplifier_den".into(),
                constraint: "leading coefficient must be nonzero".into(),
            });
        }
        if self.amplifier_num.len() > self.amplifier_den.len() {
            return Err(Error::ValidationError {
                field: "amplifier_num".into(),
                constraint: "amplifier must be proper (num degree <= den degree)".into(),
            });
        }
        Ok(())
    }

    /// DUT rated power at nominal voltage, watts (single phase).
    pub fn rated_power(&self) -> f64 {
        self.v_grid_rms * self.v_grid_rms / self.dut_resistance
    }

    pub fn amplifier_tf(&self) -> Result<RationalTransferFunction> {
        RationalTransferFunction::new(
            self.amplifier_num.clone(),
            self.amplifier_den.clone(),
            TimeDomain::Continuous,
        )
    }
}

/// Grid Thevenin impedance Z1(s) = R1 + L1 s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridImpedance {
    pub r1: f64,
    pub l1: f64,
}

/// Derive the grid impedance from the short-circuit ratio.
///
/// |Z| = V^2 / (S P_rated) with P_rated = V^2 / R2 per phase, so
/// |Z| = R2 / S; the X/R ratio splits |Z| into R1 and L1 at f0.
pub fn grid_impedance_from_scr(scenario: &PhilScenario) -> GridImpedance {
    let z_mag = scenario.dut_resistance / scenario.scr;
    let r1 = z_mag / (1.0 + scenario.xr_ratio * scenario.xr_ratio).sqrt();
    let l1 = r1 * scenario.xr_ratio / (2.0 * std::f64::consts::PI * scenario.f0);
    GridImpedance { r1, l1 }
}

/// ROS circuit model: inputs (V_grid, J_B), outputs (V1, I1).
///
/// Realizes (1/(R_j + Z1(s))) [[R_j, -R_j Z1(s)], [1, R_j]].
pub fn build_ros(scenario: &PhilScenario, z1: &GridImpedance) -> Result<StateSpaceModel> {
    scenario.validate()?;
    let rj = scenario.shunt_resistance;
    let (r1, l1) = (z1.r1, z1.l1);
    if l1 == 0.0 {
        let den = rj + r1;
        let d = DMatrix::from_row_slice(
            2,
            2,
            &[rj / den, -rj * r1 / den, 1.0 / den, rj / den],
        );
        return Ok(StateSpaceModel::gain(d, TimeDomain::Continuous));
    }
    // Shared first-order state x = (V_grid + R_j J_B)/(R_j + Z1(s)):
    // V1 = R_j x - R_j J_B, I1 = x.
    let p = (r1 + rj) / l1;
    let a = DMatrix::from_element(1, 1, -p);
    let b = DMatrix::from_row_slice(1, 2, &[1.0 / l1, rj / l1]);
    let c = DMatrix::from_row_slice(2, 1, &[rj, 1.0]);
    let d = DMatrix::from_row_slice(2, 2, &[0.0, -rj, 0.0, 0.0]);
    StateSpaceModel::new(a, b, c, d, TimeDomain::Continuous)
}

/// DUT and amplifier model: input V, outputs (Vc, Id).
///
/// Realizes A(s) [1; 1/R2] with Z_d(s) = R2.
pub fn build_dut(scenario: &PhilScenario) -> Result<StateSpaceModel> {
    scenario.validate()?;
    let amp = realize_tf(&scenario.amplifier_tf()?)?;
    let r2 = scenario.dut_resistance;
    let n = amp.order();
    let mut c = DMatrix::zeros(2, n);
    c.view_mut((0, 0), (1, n)).copy_from(&amp.c);
    c.view_mut((1, 0), (1, n)).copy_from(&(&amp.c / r2));
    let mut d = DMatrix::zeros(2, 1);
    d[(0, 0)] = amp.d[(0, 0)];
    d[(1, 0)] = amp.d[(0, 0)] / r2;
    StateSpaceModel::new(amp.a, amp.b, c, d, TimeDomain::Continuous)
}

/// REF model, the direct ROS/DUT interconnection: input V_grid,
/// outputs (V_ref, I_ref).
///
/// Realizes (1/(R2 + Z1(s))) [R2; 1].
pub fn build_ref(scenario: &PhilScenario, z1: &GridImpedance) -> Result<StateSpaceModel> {
    scenario.validate()?;
    let r2 = scenario.dut_resistance;
    let (r1, l1) = (z1.r1, z1.l1);
    if l1 == 0.0 {
        let den = r1 + r2;
        let d = DMatrix::from_row_slice(2, 1, &[r2 / den, 1.0 / den]);
        return Ok(StateSpaceModel::gain(d, TimeDomain::Continuous));
    }
    let p = (r1 + r2) / l1;
    let a = DMatrix::from_element(1, 1, -p);
    let b = DMatrix::from_element(1, 1, 1.0 / l1);
    let c = DMatrix::from_row_slice(2, 1, &[r2, 1.0]);
    let d = DMatrix::zeros(2, 1);
    StateSpaceModel::new(a, b, c, d, TimeDomain::Continuous)
}
