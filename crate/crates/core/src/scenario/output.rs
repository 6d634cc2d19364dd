//! CSV artifacts. Every file opens with a versioned `#` header line, then a
//! column row. Numbers carry 9 significant digits in plain decimal.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use super::{Comparison, RunArtifact};

pub const STEPS_HEADER: &str = "# srlmpc steps v1";
pub const ITERATIONS_HEADER: &str = "# srlmpc iterations v1";
pub const PLOT_HEADER: &str = "# srlmpc plot v1";
pub const COMPARISON_HEADER: &str = "# srlmpc comparison v1";

/// 9 significant digits, no exponent, trailing zeros trimmed.
///
/// ```
/// use srlmpc::scenario::format_number;
/// assert_eq!(format_number(1.5336), "1.5336");
/// assert_eq!(format_number(-2.0 / 3.0), "-0.666666667");
/// assert_eq!(format_number(1e5), "100000");
/// assert_eq!(format_number(f64::INFINITY), "inf");
/// ```
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let (int, frac) = if exp >= 0 {
        let cut = exp as usize + 1;
        if cut >= digits.len() {
            (
                format!("{digits}{}", "0".repeat(cut - digits.len())),
                String::new(),
            )
        } else {
            (digits[..cut].to_string(), digits[cut..].to_string())
        }
    } else {
        (
            "0".to_string(),
            format!("{}{digits}", "0".repeat((-exp - 1) as usize)),
        )
    };
    let frac = frac.trim_end_matches('0');
    let sign = if negative { "-" } else { "" };
    if frac.is_empty() {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac}")
    }
}

pub fn write_steps(artifact: &RunArtifact, w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "{STEPS_HEADER}")?;
    writeln!(
        w,
        "step,ego_position,ego_velocity,input,leader_position,leader_velocity,delivered,horizon"
    )?;
    for r in &artifact.steps {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.step,
            format_number(r.ego.position),
            format_number(r.ego.velocity),
            r.input.map(format_number).unwrap_or_default(),
            format_number(r.leader.position),
            format_number(r.leader.velocity),
            u8::from(r.delivered),
            r.horizon
        )?;
    }
    Ok(())
}

pub fn write_iterations(artifact: &RunArtifact, w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "{ITERATIONS_HEADER}")?;
    writeln!(w, "iteration,cost,energy,saturated,dropped,zone_steps")?;
    for r in &artifact.iterations {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.iteration,
            format_number(r.cost),
            format_number(r.energy),
            r.saturated,
            r.dropped,
            r.zone_steps
        )?;
    }
    Ok(())
}

/// Long format: one `(mode, iteration, step, quantity, value)` row per value.
///
/// The executed run is written as iteration `final`, each stored iteration under its index.
pub fn write_plot_data(artifact: &RunArtifact, w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "{PLOT_HEADER}")?;
    writeln!(w, "mode,iteration,step,quantity,value")?;
    let mode = artifact.mode;
    let mut emit = |iteration: &str, step: usize, quantity: &str, value: f64| {
        writeln!(
            w,
            "{mode},{iteration},{step},{quantity},{}",
            format_number(value)
        )
    };
    for r in &artifact.steps {
        emit("final", r.step, "position", r.ego.position)?;
        emit("final", r.step, "velocity", r.ego.velocity)?;
        if let Some(u) = r.input {
            emit("final", r.step, "input", u)?;
        }
        emit("final", r.step, "leader_position", r.leader.position)?;
        emit("final", r.step, "gap", r.leader.position - r.ego.position)?;
        emit(
            "final",
            r.step,
            "delivered",
            f64::from(u8::from(r.delivered)),
        )?;
        emit("final", r.step, "horizon", r.horizon as f64)?;
    }
    for t in &artifact.trajectories {
        let label = t.iteration.to_string();
        for (k, x) in t.states.iter().enumerate() {
            emit(&label, t.origin + k, "position", x.position)?;
            emit(&label, t.origin + k, "velocity", x.velocity)?;
        }
        for (k, &u) in t.inputs.iter().enumerate() {
            emit(&label, t.origin + k, "input", u)?;
        }
    }
    Ok(())
}

pub fn write_comparison(cmp: &Comparison, w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "{COMPARISON_HEADER}")?;
    writeln!(
        w,
        "mode,energy,dropped,saturated,zone_steps,min_ttc,converged"
    )?;
    for r in &cmp.rows {
        let s = &r.summary;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.mode,
            format_number(s.energy),
            s.dropped,
            s.saturated,
            s.zone_steps,
            format_number(s.min_ttc),
            u8::from(r.converged)
        )?;
    }
    Ok(())
}

fn to_file(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write(&mut w)?;
    w.flush()
}

/// Writes `steps.csv` and `iterations.csv` into `dir`, creating it if needed.
pub fn emit_csv(artifact: &RunArtifact, dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    to_file(&dir.join("steps.csv"), |w| write_steps(artifact, w))?;
    to_file(&dir.join("iterations.csv"), |w| {
        write_iterations(artifact, w)
    })
}

pub fn emit_plot_data(artifact: &RunArtifact, path: &Path) -> io::Result<()> {
    to_file(path, |w| write_plot_data(artifact, w))
}
