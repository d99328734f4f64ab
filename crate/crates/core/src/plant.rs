//! Assembly of the discrete-time model-matching generalized plant.
//!
//! The plant interconnects the bilinear-discretized ROS and REF models
//! with the zero-order-hold discretized amplifier/DUT model, imposes
//! the measurement/actuation delay structure, folds in the channel
//! scalings, and applies the loop-shaping weight filters. The result is
//! a `PartitionedPlant` ready for H-infinity synthesis.
//!
//! Canonical ordering: inputs (w..., u...), outputs (z..., y...).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::circuit::{build_dut, build_ref, build_ros, grid_impedance_from_scr, PhilScenario};
use crate::discretization::{bilinear, zoh};
use crate::error::{Error, Result};
use crate::lti::{
    block_diagonal, delay_block, lft_lower_raw, realize_tf, series, RationalTransferFunction,
    StateSpaceModel, TimeDomain,
};

/// Integer-sample delay structure of the experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DelaySpec {
    /// Measurement delays on (V1, Vc, I1, Id), in samples.
    pub meas_delay_steps: [usize; 4],
    /// Actuation delay on the amplifier command V, in samples.
    pub act_v_steps: usize,
    /// Actuation delay on the ROS current command J_B, in samples.
    pub act_jb_steps: usize,
    /// Additional unconditional delay on J_B breaking the algebraic loop.
    pub ros_act_extra: usize,
}

impl Default for DelaySpec {
    /// V1 and I1 are rest-of-system signals computed inside the
    /// real-time simulator where the controller also runs, so they
    /// reach it within the same step; Vc and Id cross the hardware
    /// boundary through the A/D chain and arrive one sample late.
    fn default() -> Self {
        Self {
            meas_delay_steps: [0, 1, 0, 1],
            act_v_steps: 1,
            act_jb_steps: 0,
            ros_act_extra: 1,
        }
    }
}

impl DelaySpec {
    pub fn validate(&self) -> Result<()> {
        if self.ros_act_extra < 1 {
            return Err(Error::ValidationError {
                field: "ros_act_extra".into(),
                constraint: "must be >= 1".into(),
            });
        }
        Ok(())
    }

    pub fn jb_total(&self) -> usize {
        self.act_jb_steps + self.ros_act_extra
    }
}

/// Channel normalization bounds (Table-ordered).
///
/// Input channels are multiplied by their scale; output channels by the
/// reciprocal of their bound, so a unit-magnitude normalized signal
/// corresponds to the physical maximum.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingSpec {
    /// V_grid amplitude bound, volts.
    pub w_scale: f64,
    /// Actuation bounds (V, J_B): volts, amperes.
    pub u_scales: [f64; 2],
    /// Performance bounds in transparency order
    /// (V1-Vref, I1-Iref, Vc-Vref, Id-Iref, V, J_B).
    pub z_bounds: [f64; 6],
    /// Measurement bounds (V1, Vc, I1, Id).
    pub y_bounds: [f64; 4],
}

impl Default for ScalingSpec {
    fn default() -> Self {
        Self {
            w_scale: 120.0 * 2f64.sqrt(),
            u_scales: [200.0, 15.0],
            z_bounds: [6.0, 0.5, 6.0, 0.5, 200.0, 15.0],
            y_bounds: [120.0, 120.0, 10.0, 10.0],
        }
    }
}

impl ScalingSpec {
    pub fn unity() -> Self {
        Self {
            w_scale: 1.0,
            u_scales: [1.0, 1.0],
            z_bounds: [1.0; 6],
            y_bounds: [1.0; 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = std::iter::once(self.w_scale)
            .chain(self.u_scales)
            .chain(self.z_bounds)
            .chain(self.y_bounds);
        for v in all {
            if !(v > 0.0) {
                return Err(Error::ValidationError {
                    field: "scaling".into(),
                    constraint: "all scales must be strictly positive".into(),
                });
            }
        }
        Ok(())
    }

    /// Bounds of the z channels for a given objective.
    pub fn z_bounds_for(&self, objective: Objective) -> Vec<f64> {
        match objective {
            Objective::Transparency => self.z_bounds.to_vec(),
            Objective::Accuracy => vec![
                self.z_bounds[0],
                self.z_bounds[1],
                self.z_bounds[4],
                self.z_bounds[5],
            ],
        }
    }
}

/// Loop-shaping weight filters: first-order Butterworth prototypes,
/// low-pass c/(s+c) on w and the error channels, high-pass s/(s+c) on
/// the actuation channels, discretized by the bilinear transform.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightSpec {
    pub w_filter_hz: f64,
    pub error_filter_hz: [f64; 4],
    pub actuation_filter_hz: [f64; 2],
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self {
            w_filter_hz: 1000.0,
            error_filter_hz: [1000.0; 4],
            actuation_filter_hz: [1000.0; 2],
        }
    }
}

impl WeightSpec {
    pub fn validate(&self, sample_time: f64) -> Result<()> {
        let nyquist = 0.5 / sample_time;
        let all = std::iter::once(self.w_filter_hz)
            .chain(self.error_filter_hz)
            .chain(self.actuation_filter_hz);
        for c in all {
            if !(c > 0.0) || c >= nyquist {
                return Err(Error::CutoffAboveNyquist {
                    cutoff_hz: c,
                    nyquist_hz: nyquist,
                });
            }
        }
        Ok(())
    }
}

/// Synthesis objective: the model-matching transparency errors, or the
/// standard accuracy errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    Transparency,
    Accuracy,
}

/// A state-space model whose inputs are partitioned (w..., u...) and
/// outputs (z..., y...).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionedPlant {
    pub sys: StateSpaceModel,
    pub n_w: usize,
    pub n_u: usize,
    pub n_z: usize,
    pub n_y: usize,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
}

impl PartitionedPlant {
    pub fn new(
        sys: StateSpaceModel,
        n_w: usize,
        n_u: usize,
        n_z: usize,
        n_y: usize,
        input_names: Vec<String>,
        output_names: Vec<String>,
    ) -> Result<Self> {
        if n_w + n_u != sys.num_inputs() || n_z + n_y != sys.num_outputs() {
            return Err(Error::DimensionMismatch(format!(
                "partition ({n_w}+{n_u}, {n_z}+{n_y}) does not cover a {}x{} system",
                sys.num_outputs(),
                sys.num_inputs()
            )));
        }
        if input_names.len() != n_w + n_u || output_names.len() != n_z + n_y {
            return Err(Error::DimensionMismatch("channel name count".into()));
        }
        Ok(Self {
            sys,
            n_w,
            n_u,
            n_z,
            n_y,
            input_names,
            output_names,
        })
    }

    /// Partition with generated channel names (w1.., u1.., z1.., y1..).
    pub fn unnamed(
        sys: StateSpaceModel,
        n_w: usize,
        n_u: usize,
        n_z: usize,
        n_y: usize,
    ) -> Result<Self> {
        let mut input_names: Vec<String> = (1..=n_w).map(|i| format!("w{i}")).collect();
        input_names.extend((1..=n_u).map(|i| format!("u{i}")));
        let mut output_names: Vec<String> = (1..=n_z).map(|i| format!("z{i}")).collect();
        output_names.extend((1..=n_y).map(|i| format!("y{i}")));
        Self::new(sys, n_w, n_u, n_z, n_y, input_names, output_names)
    }

    /// Close the (u, y) ports against a controller: the map w -> z.
    pub fn lft_lower(&self, k: &StateSpaceModel) -> Result<StateSpaceModel> {
        lft_lower_raw(&self.sys, self.n_y, self.n_u, k)
    }
}

/// Generic wiring of subsystem stacks.
///
/// With stacked subsystem inputs U and outputs Y, external inputs W and
/// outputs Z: U = Fy Y + Fw W, Z = Hy Y + Hw W.
fn interconnect(
    subs: &[StateSpaceModel],
    fy: &DMatrix<f64>,
    fw: &DMatrix<f64>,
    hy: &DMatrix<f64>,
    hw: &DMatrix<f64>,
) -> Result<StateSpaceModel> {
    let mut stacked = subs[0].clone();
    for s in &subs[1..] {
        stacked = block_diagonal(&stacked, s)?;
    }
    let p = stacked.num_outputs();
    let loop_mat = DMatrix::identity(p, p) - &stacked.d * fy;
    let e = loop_mat.try_inverse().ok_or(Error::AlgebraicLoop)?;
    // Y = E (C X + D Fw W); U = Fy Y + Fw W.
    let y_x = &e * &stacked.c;
    let y_w = &e * &stacked.d * fw;
    let u_x = fy * &y_x;
    let u_w = fy * &y_w + fw;
    let a = &stacked.a + &stacked.b * &u_x;
    let b = &stacked.b * &u_w;
    let c = hy * &y_x;
    let d = hy * &y_w + hw;
    StateSpaceModel::new(a, b, c, d, stacked.domain)
}

/// First-order low-pass c/(s+c), bilinear-discretized.
pub(crate) fn lowpass_d(cutoff_hz: f64, sample_time: f64) -> Result<StateSpaceModel> {
    let c = 2.0 * std::f64::consts::PI * cutoff_hz;
    let g = realize_tf(&RationalTransferFunction::new(
        vec![c],
        vec![1.0, c],
        TimeDomain::Continuous,
    )?)?;
    bilinear(&g, sample_time)
}

/// First-order high-pass s/(s+c), bilinear-discretized.
fn highpass_d(cutoff_hz: f64, sample_time: f64) -> Result<StateSpaceModel> {
    let c = 2.0 * std::f64::consts::PI * cutoff_hz;
    let g = realize_tf(&RationalTransferFunction::new(
        vec![1.0, 0.0],
        vec![1.0, c],
        TimeDomain::Continuous,
    )?)?;
    bilinear(&g, sample_time)
}

/// Discretized component models of one scenario.
struct Components {
    ros: StateSpaceModel,
    dut: StateSpaceModel,
    reference: StateSpaceModel,
}

fn discretize_components(scenario: &PhilScenario) -> Result<Components> {
    let z1 = grid_impedance_from_scr(scenario);
    let ts = scenario.sample_time;
    Ok(Components {
        ros: bilinear(&build_ros(scenario, &z1)?, ts)?,
        dut: zoh(&build_dut(scenario)?, ts)?,
        reference: bilinear(&build_ref(scenario, &z1)?, ts)?,
    })
}

/// Unscaled, unweighted generalized plant in physical units, with the
/// delay structure and the fictitious measurement-noise inputs.
///
/// Inputs: (V_grid, nu1..nu4, V, J_B); outputs: (z..., V1m, Vcm, I1m, Idm).
/// `noise_phys` is the additive noise level per measurement channel in
/// physical units.
pub fn assemble_raw(
    scenario: &PhilScenario,
    objective: Objective,
    noise_phys: [f64; 4],
) -> Result<PartitionedPlant> {
    scenario.validate()?;
    scenario.delay_spec.validate()?;
    let ts = scenario.sample_time;
    let comps = discretize_components(scenario)?;
    let delays = &scenario.delay_spec;

    // Subsystem stack; output indices:
    //   ros: (V1, I1) -> 0, 1
    //   dut: (Vc, Id) -> 2, 3
    //   ref: (V_ref, I_ref) -> 4, 5
    //   meas delays -> 6..=9, act V delay -> 10, act J_B delay -> 11
    let subs = vec![
        comps.ros,
        comps.dut,
        comps.reference,
        delay_block(delays.meas_delay_steps[0], ts),
        delay_block(delays.meas_delay_steps[1], ts),
        delay_block(delays.meas_delay_steps[2], ts),
        delay_block(delays.meas_delay_steps[3], ts),
        delay_block(delays.act_v_steps, ts),
        delay_block(delays.jb_total(), ts),
    ];
    let n_sub_in = 10;
    let n_sub_out = 12;
    let n_ext_in = 7; // V_grid, nu1..nu4, V, J_B
    let n_z = match objective {
        Objective::Transparency => 6,
        Objective::Accuracy => 4,
    };
    let n_ext_out = n_z + 4;

    let mut fy = DMatrix::zeros(n_sub_in, n_sub_out);
    let mut fw = DMatrix::zeros(n_sub_in, n_ext_in);
    fw[(0, 0)] = 1.0; // ROS V_grid
    fy[(1, 11)] = 1.0; // ROS J_B from act delay
    fy[(2, 10)] = 1.0; // DUT V from act delay
    fw[(3, 0)] = 1.0; // REF V_grid
    fy[(4, 0)] = 1.0; // meas V1
    fy[(5, 2)] = 1.0; // meas Vc
    fy[(6, 1)] = 1.0; // meas I1
    fy[(7, 3)] = 1.0; // meas Id
    fw[(8, 5)] = 1.0; // act V command
    fw[(9, 6)] = 1.0; // act J_B command

    let mut hy = DMatrix::zeros(n_ext_out, n_sub_out);
    let mut hw = DMatrix::zeros(n_ext_out, n_ext_in);
    match objective {
        Objective::Transparency => {
            hy[(0, 0)] = 1.0;
            hy[(0, 4)] = -1.0; // V1 - V_ref
            hy[(1, 1)] = 1.0;
            hy[(1, 5)] = -1.0; // I1 - I_ref
            hy[(2, 2)] = 1.0;
            hy[(2, 4)] = -1.0; // Vc - V_ref
            hy[(3, 3)] = 1.0;
            hy[(3, 5)] = -1.0; // Id - I_ref
            hw[(4, 5)] = 1.0; // V
            hw[(5, 6)] = 1.0; // J_B
        }
        Objective::Accuracy => {
            hy[(0, 0)] = 1.0;
            hy[(0, 2)] = -1.0; // V1 - Vc
            hy[(1, 1)] = 1.0;
            hy[(1, 3)] = -1.0; // I1 - Id
            hw[(2, 5)] = 1.0; // V
            hw[(3, 6)] = 1.0; // J_B
        }
    }
    for i in 0..4 {
        hy[(n_z + i, 6 + i)] = 1.0;
        hw[(n_z + i, 1 + i)] = noise_phys[i];
    }

    let sys = interconnect(&subs, &fy, &fw, &hy, &hw)?;
    let input_names: Vec<String> = ["V_grid", "nu1", "nu2", "nu3", "nu4", "V", "J_B"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut output_names: Vec<String> = match objective {
        Objective::Transparency => vec![
            "V1-V_ref", "I1-I_ref", "Vc-V_ref", "Id-I_ref", "V", "J_B",
        ],
        Objective::Accuracy => vec!["V1-Vc", "I1-Id", "V", "J_B"],
    }
    .iter()
    .map(|s| s.to_string())
    .collect();
    output_names.extend(["V1", "Vc", "I1", "Id"].iter().map(|s| s.to_string()));
    PartitionedPlant::new(sys, 5, 2, n_z, 4, input_names, output_names)
}

/// Multiply input channels by their scales and output channels by the
/// reciprocal of their bounds.
pub fn apply_scaling(plant: &PartitionedPlant, scaling: &ScalingSpec) -> Result<PartitionedPlant> {
    scaling.validate()?;
    if plant.n_w != 5 || plant.n_u != 2 || plant.n_y != 4 || !(plant.n_z == 6 || plant.n_z == 4) {
        return Err(Error::DimensionMismatch(
            "apply_scaling expects the PHIL channel layout".into(),
        ));
    }
    let objective = if plant.n_z == 6 {
        Objective::Transparency
    } else {
        Objective::Accuracy
    };
    let z_bounds = scaling.z_bounds_for(objective);
    let mut in_scales = vec![scaling.w_scale, 1.0, 1.0, 1.0, 1.0];
    in_scales.extend(scaling.u_scales);
    let mut out_scales: Vec<f64> = z_bounds.iter().map(|b| 1.0 / b).collect();
    out_scales.extend(scaling.y_bounds.iter().map(|b| 1.0 / b));

    let mut sys = plant.sys.clone();
    for (j, s) in in_scales.iter().enumerate() {
        for i in 0..sys.b.nrows() {
            sys.b[(i, j)] *= s;
        }
        for i in 0..sys.d.nrows() {
            sys.d[(i, j)] *= s;
        }
    }
    for (i, s) in out_scales.iter().enumerate() {
        for j in 0..sys.c.ncols() {
            sys.c[(i, j)] *= s;
        }
        for j in 0..sys.d.ncols() {
            sys.d[(i, j)] *= s;
        }
    }
    PartitionedPlant::new(
        sys,
        plant.n_w,
        plant.n_u,
        plant.n_z,
        plant.n_y,
        plant.input_names.clone(),
        plant.output_names.clone(),
    )
}

/// Fold the loop-shaping filters into the plant: low-pass on the
/// exogenous V_grid channel, low-pass on the error channels, high-pass
/// on the actuation channels.
pub fn apply_weights(plant: &PartitionedPlant, weights: &WeightSpec) -> Result<PartitionedPlant> {
    let ts = plant
        .sys
        .sample_time()
        .ok_or_else(|| Error::DomainMismatch("weights require a discrete plant".into()))?;
    weights.validate(ts)?;
    let domain = TimeDomain::discrete(ts);

    // Input-side: filter w channel 0 only.
    let mut w_in = lowpass_d(weights.w_filter_hz, ts)?;
    w_in = block_diagonal(
        &w_in,
        &StateSpaceModel::identity(plant.n_w - 1 + plant.n_u, domain),
    )?;

    // Output-side: error low-passes then actuation high-passes.
    let n_err = plant.n_z - 2;
    let mut w_out = lowpass_d(weights.error_filter_hz[0], ts)?;
    for i in 1..n_err {
        w_out = block_diagonal(&w_out, &lowpass_d(weights.error_filter_hz[i], ts)?)?;
    }
    for i in 0..2 {
        w_out = block_diagonal(&w_out, &highpass_d(weights.actuation_filter_hz[i], ts)?)?;
    }
    w_out = block_diagonal(&w_out, &StateSpaceModel::identity(plant.n_y, domain))?;

    let sys = series(&w_out, &series(&plant.sys, &w_in)?)?;
    PartitionedPlant::new(
        sys,
        plant.n_w,
        plant.n_u,
        plant.n_z,
        plant.n_y,
        plant.input_names.clone(),
        plant.output_names.clone(),
    )
}

/// Synthesis-ready generalized plant: delays, scalings and weights
/// folded into one discrete state space.
pub fn assemble_plant(
    scenario: &PhilScenario,
    scaling: &ScalingSpec,
    weights: &WeightSpec,
    objective: Objective,
) -> Result<PartitionedPlant> {
    assemble_plant_with_noise(scenario, scaling, weights, objective, 1e-2)
}

/// As `assemble_plant` with an explicit measurement-noise weight
/// (normalized units) on the fictitious nu inputs.
pub fn assemble_plant_with_noise(
    scenario: &PhilScenario,
    scaling: &ScalingSpec,
    weights: &WeightSpec,
    objective: Objective,
    noise_eps: f64,
) -> Result<PartitionedPlant> {
    let noise_phys = [
        noise_eps * scaling.y_bounds[0],
        noise_eps * scaling.y_bounds[1],
        noise_eps * scaling.y_bounds[2],
        noise_eps * scaling.y_bounds[3],
    ];
    let raw = assemble_raw(scenario, objective, noise_phys)?;
    let scaled = apply_scaling(&raw, scaling)?;
    apply_weights(&scaled, weights)
}

/// The unscaled, unweighted physical interconnection used by the
/// simulator: inputs (V_grid, V, J_B), outputs (V_ref, I_ref, V1m, Vcm,
/// I1m, Idm). The REF input is delayed by the smallest measurement
/// delay so that the metric outputs stay sample-aligned with the
/// measurements.
pub fn physical_interconnection(scenario: &PhilScenario) -> Result<PartitionedPlant> {
    scenario.validate()?;
    scenario.delay_spec.validate()?;
    let ts = scenario.sample_time;
    let comps = discretize_components(scenario)?;
    let delays = &scenario.delay_spec;
    let align = *delays.meas_delay_steps.iter().min().unwrap();

    // Output indices: ros 0,1; dut 2,3; ref 4,5; meas 6..=9;
    // act V 10; act J_B 11; ref alignment 12.
    let subs = vec![
        comps.ros,
        comps.dut,
        comps.reference,
        delay_block(delays.meas_delay_steps[0], ts),
        delay_block(delays.meas_delay_steps[1], ts),
        delay_block(delays.meas_delay_steps[2], ts),
        delay_block(delays.meas_delay_steps[3], ts),
        delay_block(delays.act_v_steps, ts),
        delay_block(delays.jb_total(), ts),
        delay_block(align, ts),
    ];
    let n_sub_in = 11;
    let n_sub_out = 13;
    let n_ext_in = 3;
    let n_ext_out = 6;

    let mut fy = DMatrix::zeros(n_sub_in, n_sub_out);
    let mut fw = DMatrix::zeros(n_sub_in, n_ext_in);
    fw[(0, 0)] = 1.0; // ROS V_grid
    fy[(1, 11)] = 1.0; // ROS J_B
    fy[(2, 10)] = 1.0; // DUT V
    fy[(3, 12)] = 1.0; // REF from alignment delay
    fy[(4, 0)] = 1.0;
    fy[(5, 2)] = 1.0;
    fy[(6, 1)] = 1.0;
    fy[(7, 3)] = 1.0;
    fw[(8, 1)] = 1.0; // act V
    fw[(9, 2)] = 1.0; // act J_B
    fw[(10, 0)] = 1.0; // alignment delay input

    let mut hy = DMatrix::zeros(n_ext_out, n_sub_out);
    let hw = DMatrix::zeros(n_ext_out, n_ext_in);
    hy[(0, 4)] = 1.0; // V_ref
    hy[(1, 5)] = 1.0; // I_ref
    for i in 0..4 {
        hy[(2 + i, 6 + i)] = 1.0;
    }

    let sys = interconnect(&subs, &fy, &fw, &hy, &hw)?;
    PartitionedPlant::new(
        sys,
        1,
        2,
        2,
        4,
        vec!["V_grid".into(), "V".into(), "J_B".into()],
        vec![
            "V_ref".into(),
            "I_ref".into(),
            "V1".into(),
            "Vc".into(),
            "I1".into(),
            "Id".into(),
        ],
    )
}
