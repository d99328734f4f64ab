//! Command-line workflow: synthesize, validate, simulate, sweep and
//! compare PHIL interface controllers.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use phil_forge::config::{load_config, load_controller, save_controller, RunConfig};
use phil_forge::error::Result;
use phil_forge::interfaces::{itm_interface, wrap_scaled_controller, InterfaceAlgorithm};
use phil_forge::plant::{assemble_plant, Objective};
use phil_forge::sim::{run_closed_loop, sweep_scr, SweepRow};
use phil_forge::synthesis::{synthesize, validate_closed_loop, ControllerRealization};

#[derive(Parser)]
#[command(
    name = "phil-forge",
    about = "Model-matching H-infinity synthesis and co-simulation of PHIL interface controllers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file; omitted fields take the documented
    /// defaults, and omitting the flag uses the full default config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Interface algorithm for simulate/sweep.
    #[arg(long, global = true, value_enum, default_value_t = InterfaceKindArg::Hinf)]
    interface: InterfaceKindArg,
    /// Short-circuit ratio override for simulate.
    #[arg(long, global = true)]
    scr: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the H-infinity interface controller and write the
    /// controller artifact.
    Synth,
    /// Check the synthesized controller against the 0 dB closed-loop
    /// criterion and write the frequency-response CSV.
    Validate,
    /// Run one closed-loop simulation and write the trace CSV.
    Simulate,
    /// Sweep the short-circuit ratio with one interface and write the
    /// metrics CSV.
    Sweep,
    /// Sweep both interfaces and emit the comparison CSV + plot script.
    Compare,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InterfaceKindArg {
    Hinf,
    Itm,
}

impl InterfaceKindArg {
    fn label(self) -> &'static str {
        match self {
            InterfaceKindArg::Hinf => "hinf",
            InterfaceKindArg::Itm => "itm",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.output_dir = out.display().to_string();
    }
    let out_dir = PathBuf::from(&config.output_dir);
    std::fs::create_dir_all(&out_dir)?;

    match cli.command {
        Command::Synth => cmd_synth(&config, &out_dir),
        Command::Validate => cmd_validate(&config, &out_dir),
        Command::Simulate => cmd_simulate(&config, &out_dir, cli.interface, cli.scr),
        Command::Sweep => cmd_sweep(&config, &out_dir, cli.interface),
        Command::Compare => cmd_compare(&config, &out_dir),
    }
}

fn artifact_path(out_dir: &Path) -> PathBuf {
    out_dir.join("controller.json")
}

/// Shortest round-trip decimal form; locale-independent by
/// construction (Rust float formatting never uses separators).
fn csv_f(x: f64) -> String {
    format!("{x:?}")
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)?;
    Ok(())
}

fn synthesize_from(config: &RunConfig) -> Result<ControllerRealization> {
    let plant = assemble_plant(
        &config.scenario,
        &config.scaling,
        &config.weights,
        Objective::Transparency,
    )?;
    synthesize(&plant, &config.synthesis)
}

fn cmd_synth(config: &RunConfig, out_dir: &Path) -> Result<ExitCode> {
    let k = synthesize_from(config)?;
    save_controller(&artifact_path(out_dir), &k)?;
    println!(
        "synthesized: order {}, gamma {:.6} (optimal {:.6}), closed-loop norm {:.6}",
        k.sys.order(),
        k.gamma_achieved,
        k.synthesis_report.gamma_optimal,
        k.synthesis_report.closed_loop_norm
    );
    println!("wrote {}", artifact_path(out_dir).display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(config: &RunConfig, out_dir: &Path) -> Result<ExitCode> {
    let k = load_controller(&artifact_path(out_dir))?;
    let plant = assemble_plant(
        &config.scenario,
        &config.scaling,
        &config.weights,
        Objective::Transparency,
    )?;
    let f_max = 1000.0;
    let report = validate_closed_loop(&plant, &k, f_max)?;

    // Per-channel gains of the scaled, weighted closed loop over a log
    // grid, long form: freq_hz, channel, gain_db.
    let mut csv = String::from("freq_hz,channel,gain_db\n");
    if report.stable {
        let ts = config.scenario.sample_time;
        let cl = plant.lft_lower(&k.sys)?;
        let n_pts = 600;
        let f_lo: f64 = 1e-2;
        for i in 0..n_pts {
            let t = i as f64 / (n_pts - 1) as f64;
            let f = (f_lo.ln() + t * (f_max.ln() - f_lo.ln())).exp();
            let h = cl.freq_response(2.0 * std::f64::consts::PI * f * ts)?;
            for r in 0..h.nrows() {
                for c in 0..h.ncols() {
                    let db = 20.0 * h[(r, c)].norm().log10();
                    csv.push_str(&format!(
                        "{},{}<-{},{}\n",
                        csv_f(f),
                        plant.output_names[r],
                        plant.input_names[c],
                        csv_f(db)
                    ));
                }
            }
        }
    }
    write_atomic(&out_dir.join("freqresp.csv"), &csv)?;
    println!("wrote {}", out_dir.join("freqresp.csv").display());

    if report.pass {
        println!(
            "validate: PASS (stable, all {} channels < 0 dB up to {f_max} Hz, norm {:.4})",
            report.channel_peaks.len(),
            report.hinf_norm
        );
        Ok(ExitCode::SUCCESS)
    } else {
        println!(
            "validate: FAIL (stable = {}, {} channel(s) at/above 0 dB)",
            report.stable,
            report.violations.len()
        );
        Ok(ExitCode::from(2))
    }
}

fn make_interface(
    config: &RunConfig,
    kind: InterfaceKindArg,
    out_dir: &Path,
) -> Result<InterfaceAlgorithm> {
    match kind {
        InterfaceKindArg::Itm => {
            itm_interface(config.itm_filter_cutoff_hz, config.scenario.sample_time)
        }
        InterfaceKindArg::Hinf => {
            let k = load_controller(&artifact_path(out_dir))?;
            wrap_scaled_controller(&k, &config.scaling)
        }
    }
}

fn cmd_simulate(
    config: &RunConfig,
    out_dir: &Path,
    kind: InterfaceKindArg,
    scr: Option<f64>,
) -> Result<ExitCode> {
    let mut scenario = config.scenario.clone();
    if let Some(s) = scr {
        scenario.scr = s;
        scenario.validate()?;
    }
    let interface = make_interface(config, kind, out_dir)?;
    let trace = run_closed_loop(&scenario, &interface, config.duration)?;

    let mut csv = String::from("t,phase,V_grid,V1,I1,Vc,Id,V,J_B,V_ref,I_ref\n");
    for (p, phase) in trace.phases.iter().enumerate() {
        for i in 0..phase.len() {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                csv_f(i as f64 * trace.sample_time),
                phil_forge::sim::PHASE_LABELS[p],
                csv_f(phase.v_grid[i]),
                csv_f(phase.v1[i]),
                csv_f(phase.i1[i]),
                csv_f(phase.vc[i]),
                csv_f(phase.id[i]),
                csv_f(phase.v[i]),
                csv_f(phase.j_b[i]),
                csv_f(phase.v_ref[i]),
                csv_f(phase.i_ref[i]),
            ));
        }
    }
    write_atomic(&out_dir.join("trace.csv"), &csv)?;
    println!("wrote {}", out_dir.join("trace.csv").display());

    match trace.diverged_at {
        None => println!(
            "simulate: stable over {} s at S = {}",
            config.duration, scenario.scr
        ),
        Some((phase, sample)) => println!(
            "simulate: DIVERGED in phase {} at sample {} (t = {} s)",
            phil_forge::sim::PHASE_LABELS[phase],
            sample,
            csv_f(sample as f64 * trace.sample_time)
        ),
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep_rows_csv(rows: &[(String, SweepRow)]) -> String {
    let mut csv = String::from("S,interface,stable,ss_rms_eV,ss_rms_eI,ss_rms_tV,ss_rms_tI\n");
    for (label, row) in rows {
        let m = row.metrics.as_ref();
        let get = |f: fn(&phil_forge::sim::AccuracyMetrics) -> f64| -> String {
            match m {
                Some(m) if row.stable => csv_f(f(m)),
                _ => "NaN".into(),
            }
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            csv_f(row.scr),
            label,
            row.stable,
            get(|m| m.ss_rms_e_v),
            get(|m| m.ss_rms_e_i),
            get(|m| m.ss_rms_t_v),
            get(|m| m.ss_rms_t_i),
        ));
    }
    csv
}

fn cmd_sweep(config: &RunConfig, out_dir: &Path, kind: InterfaceKindArg) -> Result<ExitCode> {
    let interface = make_interface(config, kind, out_dir)?;
    let rows = sweep_scr(
        &config.scenario,
        |_| Ok(interface),
        &config.sweep_scr,
        config.duration,
    )?;
    let labeled: Vec<(String, SweepRow)> = rows
        .into_iter()
        .map(|r| (kind.label().to_string(), r))
        .collect();
    write_atomic(&out_dir.join("sweep.csv"), &sweep_rows_csv(&labeled))?;
    println!("wrote {}", out_dir.join("sweep.csv").display());
    for (label, row) in &labeled {
        println!(
            "S = {}: {} {}",
            csv_f(row.scr),
            label,
            if row.stable { "stable" } else { "UNSTABLE" }
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(config: &RunConfig, out_dir: &Path) -> Result<ExitCode> {
    // Fresh synthesis keeps compare self-contained and reproducible;
    // the artifact is (re)written so later validate/simulate agree.
    let k = synthesize_from(config)?;
    save_controller(&artifact_path(out_dir), &k)?;
    let hinf = wrap_scaled_controller(&k, &config.scaling)?;
    let itm = itm_interface(config.itm_filter_cutoff_hz, config.scenario.sample_time)?;

    let mut labeled = Vec::new();
    for (label, interface) in [("hinf", hinf), ("itm", itm)] {
        let rows = sweep_scr(
            &config.scenario,
            |_| Ok(interface),
            &config.sweep_scr,
            config.duration,
        )?;
        labeled.extend(rows.into_iter().map(|r| (label.to_string(), r)));
    }
    write_atomic(&out_dir.join("compare.csv"), &sweep_rows_csv(&labeled))?;
    write_atomic(&out_dir.join("plot_compare.py"), PLOT_SCRIPT)?;
    println!("wrote {}", out_dir.join("compare.csv").display());
    println!("wrote {}", out_dir.join("plot_compare.py").display());
    for (label, row) in &labeled {
        let detail = match (&row.metrics, row.stable) {
            (Some(m), true) => format!(
                "rms eV = {:.3} V, rms eI = {:.4} A",
                m.ss_rms_e_v, m.ss_rms_e_i
            ),
            _ => "diverged".into(),
        };
        println!("S = {:>6}: {:<4} {}", csv_f(row.scr), label, detail);
    }
    Ok(ExitCode::SUCCESS)
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Render the sweep comparison (steady-state errors per S) from
compare.csv: one panel for the voltage error, one for the current
error, both interfaces overlaid; unstable rows appear as gaps."""
import csv
import math
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "compare.csv"
series = {}
with open(path, newline="") as fh:
    for row in csv.DictReader(fh):
        label = row["interface"]
        s = float(row["S"])
        ev = float(row["ss_rms_eV"]) if row["stable"] == "true" else math.nan
        ei = float(row["ss_rms_eI"]) if row["stable"] == "true" else math.nan
        series.setdefault(label, []).append((s, ev, ei))

fig, (ax_v, ax_i) = plt.subplots(2, 1, sharex=True, figsize=(6, 6))
for label, rows in sorted(series.items()):
    rows.sort()
    s_vals = [r[0] for r in rows]
    ax_v.plot(s_vals, [r[1] for r in rows], marker="o", label=label)
    ax_i.plot(s_vals, [r[2] for r in rows], marker="o", label=label)
ax_v.set_ylabel("steady-state RMS $e_V$ [V]")
ax_i.set_ylabel("steady-state RMS $e_I$ [A]")
ax_i.set_xlabel("short-circuit ratio $S$")
ax_v.set_xscale("log")
for ax in (ax_v, ax_i):
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
fig.tight_layout()
fig.savefig("compare.png", dpi=150)
print("wrote compare.png")
"#;
