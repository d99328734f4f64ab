//! Fixed-step closed-loop co-simulation of the power interconnection.
//!
//! The physical interconnection (rest-of-system, device under test,
//! reference model, transport delays) and an interface algorithm are
//! stepped jointly sample by sample, one independent run per phase of
//! a balanced three-phase source. Metrics quantify coupling accuracy
//! (V1 vs Vc, I1 vs Id) and transparency (each side vs the reference
//! interconnection), and a sweep varies the grid short-circuit ratio
//! while the interface stays fixed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::circuit::PhilScenario;
use crate::error::{Error, Result};
use crate::interfaces::InterfaceAlgorithm;
use crate::plant::physical_interconnection;

pub const PHASE_LABELS: [&str; 3] = ["a", "b", "c"];

/// Signals |x| > factor * bound flag divergence; bounds follow the
/// design scaling table (V_grid amplitude, 120 V node voltages, 10 A
/// branch currents, 200 V / 15 A actuation).
pub const DEFAULT_DIVERGENCE_FACTOR: f64 = 50.0;

/// Recorded signals of one phase, all arrays the same length.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub v_grid: Vec<f64>,
    pub v1: Vec<f64>,
    pub i1: Vec<f64>,
    pub vc: Vec<f64>,
    pub id: Vec<f64>,
    pub v: Vec<f64>,
    pub j_b: Vec<f64>,
    pub v_ref: Vec<f64>,
    pub i_ref: Vec<f64>,
}

impl PhaseTrace {
    fn with_capacity(n: usize) -> Self {
        let mk = || Vec::with_capacity(n);
        Self {
            v_grid: mk(),
            v1: mk(),
            i1: mk(),
            vc: mk(),
            id: mk(),
            v: mk(),
            j_b: mk(),
            v_ref: mk(),
            i_ref: mk(),
        }
    }

    pub fn len(&self) -> usize {
        self.v_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_grid.is_empty()
    }
}

/// A three-phase closed-loop run. When a phase diverges, recording
/// stops at the offending sample (all arrays stay equal length within
/// the phase) and `diverged_at` notes (phase index, sample index).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTrace {
    pub sample_time: f64,
    pub fundamental_hz: f64,
    pub phases: Vec<PhaseTrace>,
    pub diverged_at: Option<(usize, usize)>,
}

impl SimTrace {
    pub fn stable(&self) -> bool {
        self.diverged_at.is_none()
    }
}

/// Accuracy and transparency figures over the steady-state window.
/// RMS/peak fields are meaningful only when `stable`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyMetrics {
    pub stable: bool,
    /// Worst-phase steady-state RMS of V1 - Vc.
    pub ss_rms_e_v: f64,
    /// Worst-phase steady-state RMS of I1 - Id.
    pub ss_rms_e_i: f64,
    /// Worst of RMS(V1 - V_ref) and RMS(Vc - V_ref), worst phase.
    pub ss_rms_t_v: f64,
    /// Worst of RMS(I1 - I_ref) and RMS(Id - I_ref), worst phase.
    pub ss_rms_t_i: f64,
    pub peak_e_v: f64,
    pub peak_e_i: f64,
}

impl AccuracyMetrics {
    fn unstable() -> Self {
        Self {
            stable: false,
            ss_rms_e_v: f64::NAN,
            ss_rms_e_i: f64::NAN,
            ss_rms_t_v: f64::NAN,
            ss_rms_t_i: f64::NAN,
            peak_e_v: f64::NAN,
            peak_e_i: f64::NAN,
        }
    }
}

/// Balanced three-phase sinusoids: phase k is
/// v_rms*sqrt(2)*sin(2*pi*f0*t - 2*pi*k/3) sampled at multiples of Ts.
pub fn three_phase_source(
    v_rms: f64,
    f0: f64,
    sample_time: f64,
    duration: f64,
) -> [Vec<f64>; 3] {
    let n = (duration / sample_time).ceil().max(0.0) as usize;
    let amp = v_rms * 2f64.sqrt();
    let mut out = [
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    ];
    for (k, arr) in out.iter_mut().enumerate() {
        let shift = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
        for i in 0..n {
            let t = i as f64 * sample_time;
            arr.push(amp * (2.0 * std::f64::consts::PI * f0 * t - shift).sin());
        }
    }
    out
}

/// Per-signal divergence bounds in recording order
/// (v_grid, v1, i1, vc, id, v, j_b, v_ref, i_ref).
fn divergence_bounds() -> [f64; 9] {
    let a = 120.0 * 2f64.sqrt();
    [a, 120.0, 10.0, 120.0, 10.0, 200.0, 15.0, 120.0, 10.0]
}

/// Run the closed loop against the scenario's own three-phase source.
pub fn run_closed_loop(
    scenario: &PhilScenario,
    interface: &InterfaceAlgorithm,
    duration: f64,
) -> Result<SimTrace> {
    let sources = three_phase_source(
        scenario.v_grid_rms,
        scenario.f0,
        scenario.sample_time,
        duration,
    );
    run_closed_loop_with_sources(scenario, interface, &sources, DEFAULT_DIVERGENCE_FACTOR)
}

/// Run the closed loop with explicit per-phase source arrays.
pub fn run_closed_loop_with_sources(
    scenario: &PhilScenario,
    interface: &InterfaceAlgorithm,
    sources: &[Vec<f64>; 3],
    divergence_factor: f64,
) -> Result<SimTrace> {
    let ts = scenario.sample_time;
    match interface.realization.sample_time() {
        Some(t) if (t - ts).abs() <= 1e-12 * ts.max(t) => {}
        _ => {
            return Err(Error::DomainMismatch(
                "interface sample time does not match the scenario".into(),
            ))
        }
    }
    let plant = physical_interconnection(scenario)?;
    let p = &plant.sys;
    let k = &interface.realization;

    // Plant inputs (V_grid, V, J_B); outputs (V_ref, I_ref, V1, Vc,
    // I1, Id); the interface consumes the last four outputs. The
    // sample-rate loop through any feedthrough is solved jointly:
    //   u = Kc xk + Kd y,  y = Cy xp + Dyw w + Dyu u
    //   => (I - Kd Dyu) u = Kc xk + Kd (Cy xp + Dyw w).
    let c_y = p.c.rows(2, 4).into_owned();
    let d_yw = p.d.view((2, 0), (4, 1)).into_owned();
    let d_yu = p.d.view((2, 1), (4, 2)).into_owned();
    let loop_gain = DMatrix::identity(2, 2) - &k.d * &d_yu;
    let loop_inv = loop_gain.lu().try_inverse().ok_or(Error::AlgebraicLoop)?;

    let bounds = divergence_bounds();
    let mut phases = Vec::with_capacity(3);
    let mut diverged_at = None;

    for (phase_idx, source) in sources.iter().enumerate() {
        let mut xp = DVector::<f64>::zeros(p.order());
        let mut xk = DVector::<f64>::zeros(k.order());
        let mut trace = PhaseTrace::with_capacity(source.len());

        for (sample, &w) in source.iter().enumerate() {
            let drive = &k.d * (&c_y * &xp) + &k.d * &d_yw * w + &k.c * &xk;
            let u = &loop_inv * drive;
            let mut pin = DVector::zeros(3);
            pin[0] = w;
            pin[1] = u[0];
            pin[2] = u[1];
            let y_all = &p.c * &xp + &p.d * &pin;
            let y_meas = y_all.rows(2, 4).into_owned();

            let rec = [
                w, y_all[2], y_all[4], y_all[3], y_all[5], u[0], u[1], y_all[0], y_all[1],
            ];
            if rec.iter().any(|v| !v.is_finite())
                || xp.iter().any(|v| !v.is_finite())
                || xk.iter().any(|v| !v.is_finite())
            {
                return Err(Error::NonFiniteState {
                    sample,
                    phase: phase_idx,
                });
            }
            trace.v_grid.push(rec[0]);
            trace.v1.push(rec[1]);
            trace.i1.push(rec[2]);
            trace.vc.push(rec[3]);
            trace.id.push(rec[4]);
            trace.v.push(rec[5]);
            trace.j_b.push(rec[6]);
            trace.v_ref.push(rec[7]);
            trace.i_ref.push(rec[8]);

            let diverged = rec
                .iter()
                .zip(bounds.iter())
                .any(|(v, b)| v.abs() > divergence_factor * b);
            if diverged {
                diverged_at.get_or_insert((phase_idx, sample));
                break;
            }

            xp = &p.a * &xp + &p.b * &pin;
            xk = &k.a * &xk + &k.b * &y_meas;
        }
        phases.push(trace);
        if diverged_at.is_some() {
            break;
        }
    }
    // Keep three phase slots even when aborting early.
    while phases.len() < 3 {
        phases.push(PhaseTrace::default());
    }

    Ok(SimTrace {
        sample_time: ts,
        fundamental_hz: scenario.f0,
        phases,
        diverged_at,
    })
}

fn rms(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Steady-state metrics over the final (1 - settle_fraction) of the
/// trace, truncated to an integer number of fundamental periods.
pub fn accuracy_metrics(trace: &SimTrace, settle_fraction: f64) -> Result<AccuracyMetrics> {
    if trace.phases.iter().all(|p| p.is_empty()) {
        return Err(Error::EmptyTrace);
    }
    if !trace.stable() {
        return Ok(AccuracyMetrics::unstable());
    }
    let mut m = AccuracyMetrics {
        stable: true,
        ss_rms_e_v: 0.0,
        ss_rms_e_i: 0.0,
        ss_rms_t_v: 0.0,
        ss_rms_t_i: 0.0,
        peak_e_v: 0.0,
        peak_e_i: 0.0,
    };
    // Samples per fundamental period need not be an integer; round the
    // window to the nearest sample of a whole number of periods so a
    // 0.5 s tail at 60 Hz / 20 kHz covers exactly 30 periods.
    let period_samples = 1.0 / (trace.fundamental_hz * trace.sample_time);
    for phase in &trace.phases {
        let len = phase.len();
        if len == 0 {
            continue;
        }
        let tail = ((1.0 - settle_fraction) * len as f64).floor() as usize;
        let periods = (tail as f64 / period_samples).floor();
        let window = if periods >= 1.0 {
            ((periods * period_samples).round() as usize).min(len)
        } else {
            tail.max(1).min(len)
        };
        let start = len - window;
        let w = |xs: &Vec<f64>| xs[start..].to_vec();

        let e_v = diff(&w(&phase.v1), &w(&phase.vc));
        let e_i = diff(&w(&phase.i1), &w(&phase.id));
        m.ss_rms_e_v = m.ss_rms_e_v.max(rms(&e_v));
        m.ss_rms_e_i = m.ss_rms_e_i.max(rms(&e_i));
        m.peak_e_v = e_v.iter().fold(m.peak_e_v, |a, x| a.max(x.abs()));
        m.peak_e_i = e_i.iter().fold(m.peak_e_i, |a, x| a.max(x.abs()));
        let t_v = rms(&diff(&w(&phase.v1), &w(&phase.v_ref)))
            .max(rms(&diff(&w(&phase.vc), &w(&phase.v_ref))));
        let t_i = rms(&diff(&w(&phase.i1), &w(&phase.i_ref)))
            .max(rms(&diff(&w(&phase.id), &w(&phase.i_ref))));
        m.ss_rms_t_v = m.ss_rms_t_v.max(t_v);
        m.ss_rms_t_i = m.ss_rms_t_i.max(t_i);
    }
    Ok(m)
}

/// One row of a short-circuit-ratio sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub scr: f64,
    pub stable: bool,
    pub metrics: Option<AccuracyMetrics>,
    pub error: Option<String>,
}

fn thread_cap() -> usize {
    std::env::var("PHIL_FORGE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Sweep the grid short-circuit ratio with a FIXED interface designed
/// once at the template's nominal operating point; only the grid
/// impedance inside the plant changes per row. Row failures are
/// reported in-row, the sweep continues.
pub fn sweep_scr<F>(
    template: &PhilScenario,
    interface_factory: F,
    s_values: &[f64],
    duration: f64,
) -> Result<Vec<SweepRow>>
where
    F: FnOnce(&PhilScenario) -> Result<InterfaceAlgorithm>,
{
    for &s in s_values {
        if !(s > 0.0) {
            return Err(Error::ValidationError {
                field: "scr".into(),
                constraint: format!("sweep values must be positive, got {s}"),
            });
        }
    }
    let interface = interface_factory(template)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap().min(s_values.len().max(1)))
        .build()
        .map_err(|e| Error::ValidationError {
            field: "PHIL_FORGE_THREADS".into(),
            constraint: e.to_string(),
        })?;
    let rows: Vec<SweepRow> = pool.install(|| {
        use rayon::prelude::*;
        s_values
            .par_iter()
            .map(|&s| {
                let mut scenario = template.clone();
                scenario.scr = s;
                match run_closed_loop(&scenario, &interface, duration)
                    .and_then(|tr| accuracy_metrics(&tr, 0.5))
                {
                    Ok(m) => SweepRow {
                        scr: s,
                        stable: m.stable,
                        metrics: Some(m),
                        error: None,
                    },
                    Err(e) => SweepRow {
                        scr: s,
                        stable: false,
                        metrics: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });
    Ok(rows)
}

fn itm_stable_at(
    template: &PhilScenario,
    filter_cutoff_hz: f64,
    s: f64,
    duration: f64,
) -> Result<bool> {
    let mut scenario = template.clone();
    scenario.scr = s;
    let itm = crate::interfaces::itm_interface(filter_cutoff_hz, scenario.sample_time)?;
    let trace = run_closed_loop(&scenario, &itm, duration)?;
    Ok(trace.stable())
}

/// Bisect the short-circuit ratio for the stability threshold of the
/// ideal-transformer interface: unstable at `s_lo`, stable at `s_hi`.
pub fn find_itm_threshold(
    template: &PhilScenario,
    filter_cutoff_hz: f64,
    s_lo: f64,
    s_hi: f64,
    tol: f64,
) -> Result<f64> {
    if !(s_lo > 0.0 && s_hi > s_lo && tol > 0.0) {
        return Err(Error::BracketInvalid(format!(
            "need 0 < s_lo < s_hi and tol > 0, got [{s_lo}, {s_hi}], tol {tol}"
        )));
    }
    let duration = 1.0;
    if itm_stable_at(template, filter_cutoff_hz, s_lo, duration)? {
        return Err(Error::BracketInvalid(format!(
            "expected instability at s_lo = {s_lo}"
        )));
    }
    if !itm_stable_at(template, filter_cutoff_hz, s_hi, duration)? {
        return Err(Error::BracketInvalid(format!(
            "expected stability at s_hi = {s_hi}"
        )));
    }
    let (mut lo, mut hi) = (s_lo, s_hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if itm_stable_at(template, filter_cutoff_hz, mid, duration)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
