//! JSON run configuration and controller artifacts.
//!
//! A [`RunConfig`] collects every knob of the workflow; any field left
//! out of the JSON file takes the documented default, so `{}` is a
//! complete configuration. Controller artifacts round-trip the full
//! state-space realization with 17 significant digits.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::circuit::PhilScenario;
use crate::error::{Error, Result};
use crate::plant::{ScalingSpec, WeightSpec};
use crate::synthesis::{ControllerRealization, SynthesisOptions};

/// Complete configuration of a command-line run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Physical scenario (grid, amplifier, delays, sample time).
    #[serde(flatten)]
    pub scenario: PhilScenario,
    pub scaling: ScalingSpec,
    pub weights: WeightSpec,
    pub synthesis: SynthesisOptions,
    /// First-order feedback-filter cutoff of the ITM baseline, hertz.
    pub itm_filter_cutoff_hz: f64,
    /// Short-circuit ratios visited by `sweep` and `compare`.
    pub sweep_scr: Vec<f64>,
    /// Simulation horizon, seconds.
    pub duration: f64,
    /// Output directory for artifacts, CSVs and plot scripts.
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: PhilScenario::default(),
            scaling: ScalingSpec::default(),
            weights: WeightSpec::default(),
            synthesis: SynthesisOptions::default(),
            itm_filter_cutoff_hz: 150.0,
            sweep_scr: vec![0.1, 1.0, 2.0, 5.0, 200.0],
            duration: 1.0,
            output_dir: "out".into(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.scenario.delay_spec.validate()?;
        self.scaling.validate()?;
        self.weights.validate(self.scenario.sample_time)?;
        self.synthesis.validate()?;
        let nyquist = 0.5 / self.scenario.sample_time;
        if !(self.itm_filter_cutoff_hz > 0.0) || self.itm_filter_cutoff_hz >= nyquist {
            return Err(Error::CutoffAboveNyquist {
                cutoff_hz: self.itm_filter_cutoff_hz,
                nyquist_hz: nyquist,
            });
        }
        for &s in &self.sweep_scr {
            if !(s > 0.0) {
                return Err(Error::ValidationError {
                    field: "sweep_scr".into(),
                    constraint: format!("entries must be strictly positive, got {s}"),
                });
            }
        }
        if !(self.duration >= 0.0) {
            return Err(Error::ValidationError {
                field: "duration".into(),
                constraint: "must be >= 0".into(),
            });
        }
        if self.output_dir.is_empty() {
            return Err(Error::ValidationError {
                field: "output_dir".into(),
                constraint: "must not be empty".into(),
            });
        }
        Ok(())
    }

    /// DUT rated power implied by the scenario, watts.
    pub fn rated_power(&self) -> f64 {
        self.scenario.rated_power()
    }
}

/// Parse and validate a configuration file. Unset fields take the
/// documented defaults; `{}` yields the full default configuration.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ParseError(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::ParseError(msg) => Error::ParseError(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parse and validate a configuration from a JSON string.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = serde_json::from_str(text)
        .map_err(|e| Error::ParseError(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    config.validate()?;
    Ok(config)
}

/// serde_json formatter printing every float with 17 significant
/// digits, enough to reproduce any f64 bit-exactly on load.
struct SigDigitFormatter;

impl serde_json::ser::Formatter for SigDigitFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Write a synthesized controller to a JSON artifact.
pub fn save_controller(path: &Path, k: &ControllerRealization) -> Result<()> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigitFormatter);
    k.serialize(&mut ser)
        .map_err(|e| Error::ParseError(format!("serializing controller: {e}")))?;
    buf.push(b'\n');
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read a controller artifact written by [`save_controller`].
pub fn load_controller(path: &Path) -> Result<ControllerRealization> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::ParseError(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{StateSpaceModel, TimeDomain};
    use crate::synthesis::SynthesisReport;
    use nalgebra::DMatrix;

    #[test]
    fn empty_object_is_full_default() {
        let c = parse_config("{}").unwrap();
        let d = RunConfig::default();
        assert_eq!(c.scenario.scr, d.scenario.scr);
        assert_eq!(c.scenario.sample_time, 50e-6);
        assert_eq!(c.itm_filter_cutoff_hz, 150.0);
        assert_eq!(c.sweep_scr, vec![0.1, 1.0, 2.0, 5.0, 200.0]);
        assert_eq!(c.duration, 1.0);
        assert_eq!(c.output_dir, "out");
    }

    #[test]
    fn negative_scr_rejected() {
        let err = parse_config(r#"{"scr": -1}"#).unwrap_err();
        assert!(matches!(err, Error::ValidationError { ref field, .. } if field == "scr"));
    }

    #[test]
    fn rated_power_is_derived() {
        let c = parse_config(r#"{"dut_resistance": 24, "v_grid_rms": 120}"#).unwrap();
        assert_eq!(c.rated_power(), 600.0);
    }

    #[test]
    fn parse_error_carries_location() {
        let err = parse_config("{\n  \"scr\": oops\n}").unwrap_err();
        match err {
            Error::ParseError(msg) => assert!(msg.contains("line 2"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nested_overrides_merge_with_defaults() {
        let c = parse_config(r#"{"weights": {"w_filter_hz": 500}, "scr": 2.5}"#).unwrap();
        assert_eq!(c.weights.w_filter_hz, 500.0);
        assert_eq!(c.weights.error_filter_hz, [1000.0; 4]);
        assert_eq!(c.scenario.scr, 2.5);
    }

    #[test]
    fn controller_artifact_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("controller.json");
        // Awkward values: subnormal-ish, irrational, negative exponents.
        let a = DMatrix::from_row_slice(2, 2, &[0.1 + 0.2, -1.0 / 3.0, 2f64.sqrt(), 1e-17]);
        let k = ControllerRealization {
            sys: StateSpaceModel::new(
                a.clone(),
                DMatrix::from_row_slice(2, 1, &[std::f64::consts::PI, -0.0]),
                DMatrix::from_row_slice(1, 2, &[1.0, 7e300]),
                DMatrix::from_element(1, 1, f64::MIN_POSITIVE),
                TimeDomain::discrete(50e-6),
            )
            .unwrap(),
            gamma_achieved: 0.912_345_678_901_234_5,
            synthesis_report: SynthesisReport::default(),
        };
        save_controller(&path, &k).unwrap();
        let back = load_controller(&path).unwrap();
        assert_eq!(back.sys.a, k.sys.a);
        assert_eq!(back.sys.b, k.sys.b);
        assert_eq!(back.sys.c, k.sys.c);
        assert_eq!(back.sys.d, k.sys.d);
        assert_eq!(back.gamma_achieved.to_bits(), k.gamma_achieved.to_bits());
        assert_eq!(back.sys.sample_time(), k.sys.sample_time());
    }

    #[test]
    fn missing_artifact_error() {
        assert!(matches!(
            load_controller(Path::new("/nonexistent/k.json")),
            Err(Error::MissingArtifact(_))
        ));
    }
}
