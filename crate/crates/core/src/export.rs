//! Trace, metrics and figure-data writers.
//!
//! Trace CSV columns, in order (`<a>` is `x` then `y`, `<r>` the 1-based
//! region, `<c>` the gain component):
//!
//! ```text
//! step, t_s, q1_rad, q2_rad, qdot1_radps, qdot2_radps,
//! x_dev_m, y_dev_m, xdot_mps, ydot_mps,
//! per axis <a>: delta1_<a>_m, delta2_<a>_mps, delta_m1_<a>_m, delta_m2_<a>_mps,
//!               region_<a>, k<r>_<a>_<c> for every region and component, v_<a>,
//! fext_x_n, fext_y_n, f_x_n, f_y_n, tau1_nm, tau2_nm, det_j
//! ```
//!
//! Regions are printed 1-based. Floats use 9 significant digits.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use crate::sim::{SimTrace, StepRecord, SAFETY_BOUND_M};

const AXES: [&str; 2] = ["x", "y"];

/// Nine significant digits in scientific notation.
pub fn fmt_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn trace_header(regions: usize) -> String {
    let mut cols: Vec<String> = [
        "step", "t_s", "q1_rad", "q2_rad", "qdot1_radps", "qdot2_radps", "x_dev_m", "y_dev_m",
        "xdot_mps", "ydot_mps",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for a in AXES {
        cols.extend([
            format!("delta1_{a}_m"),
            format!("delta2_{a}_mps"),
            format!("delta_m1_{a}_m"),
            format!("delta_m2_{a}_mps"),
            format!("region_{a}"),
        ]);
        for r in 1..=regions {
            cols.extend([format!("k{r}_{a}_1"), format!("k{r}_{a}_2")]);
        }
        cols.push(format!("v_{a}"));
    }
    cols.extend(
        ["fext_x_n", "fext_y_n", "f_x_n", "f_y_n", "tau1_nm", "tau2_nm", "det_j"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.join(",")
}

fn push_f(out: &mut String, v: f64) {
    out.push(',');
    out.push_str(&fmt_sig9(v));
}

fn trace_row(r: &StepRecord, out: &mut String) {
    let _ = write!(out, "{}", r.step);
    push_f(out, r.t);
    for v in r.q.iter().chain(&r.qdot).chain(&r.x).chain(&r.xdot) {
        push_f(out, *v);
    }
    for ax in &r.axes {
        for v in ax.delta.iter().chain(&ax.delta_m) {
            push_f(out, *v);
        }
        let _ = write!(out, ",{}", ax.region + 1);
        for v in ax.gains.iter().flatten() {
            push_f(out, *v);
        }
        push_f(out, ax.lyapunov);
    }
    for v in r.f_ext.iter().chain(&r.force).chain(&r.tau) {
        push_f(out, *v);
    }
    push_f(out, r.det_j);
    out.push('\n');
}

pub fn write_trace_csv<W: Write>(trace: &SimTrace, mut w: W) -> io::Result<()> {
    let regions = trace.records.first().map(|r| r.axes[0].gains.len()).unwrap_or(0);
    writeln!(w, "{}", trace_header(regions))?;
    let mut line = String::with_capacity(512);
    for r in &trace.records {
        line.clear();
        trace_row(r, &mut line);
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

pub fn trace_csv_string(trace: &SimTrace) -> String {
    let mut buf = Vec::new();
    write_trace_csv(trace, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii")
}

/// Names of the four figure data files.
pub const FIGURE_FILES: [&str; 4] = ["fig1_reference.csv", "fig2_gains.csv", "fig3_xy.csv", "fig4_torque.csv"];

/// Writes figure CSVs plus one gnuplot script per figure into `dir`.
pub fn write_figures(trace: &SimTrace, dir: &Path) -> io::Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, body: String| -> io::Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };

    let mut fig1 = String::from("t_s,delta1_x_m,delta_m1_x_m,region_x,delta1_y_m,delta_m1_y_m,region_y,bound_upper_m,bound_lower_m\n");
    let mut fig2 = String::from("t_s,kx1_stiffness_x,kx2_damping_x,kx1_stiffness_y,kx2_damping_y\n");
    let mut fig4 = String::from("t_s,tau1_nm,tau2_nm\n");
    let mut fig3 = String::from("series,x_m,y_m\n");
    for r in &trace.records {
        let t = fmt_sig9(r.t);
        let [ax, ay] = &r.axes;
        let _ = writeln!(
            fig1,
            "{t},{},{},{},{},{},{},{},{}",
            fmt_sig9(ax.delta[0]),
            fmt_sig9(ax.delta_m[0]),
            ax.region + 1,
            fmt_sig9(ay.delta[0]),
            fmt_sig9(ay.delta_m[0]),
            ay.region + 1,
            fmt_sig9(SAFETY_BOUND_M),
            fmt_sig9(-SAFETY_BOUND_M)
        );
        // active gain row K_x = [K_x(1), K_x(2)]: −K_x(1) is stiffness, −K_x(2) damping
        let (gx, gy) = (ax.active_gain(), ay.active_gain());
        let _ = writeln!(
            fig2,
            "{t},{},{},{},{}",
            fmt_sig9(gx[0]),
            fmt_sig9(gx[1]),
            fmt_sig9(gy[0]),
            fmt_sig9(gy[1])
        );
        let _ = writeln!(fig4, "{t},{},{}", fmt_sig9(r.tau[0]), fmt_sig9(r.tau[1]));
        let _ = writeln!(fig3, "end_effector,{},{}", fmt_sig9(r.x[0]), fmt_sig9(r.x[1]));
    }
    for r in &trace.records {
        let _ = writeln!(fig3, "reference,{},{}", fmt_sig9(r.axes[0].delta[0]), fmt_sig9(r.axes[1].delta[0]));
    }
    let b = SAFETY_BOUND_M;
    for (x, y) in [(-b, -b), (b, -b), (b, b), (-b, b), (-b, -b)] {
        let _ = writeln!(fig3, "safety_square,{},{}", fmt_sig9(x), fmt_sig9(y));
    }

    emit(FIGURE_FILES[0], fig1)?;
    emit(FIGURE_FILES[1], fig2)?;
    emit(FIGURE_FILES[2], fig3)?;
    emit(FIGURE_FILES[3], fig4)?;
    emit("fig1_reference.gp", gnuplot_fig1())?;
    emit("fig2_gains.gp", gnuplot_fig2())?;
    emit("fig3_xy.gp", gnuplot_fig3())?;
    emit("fig4_torque.gp", gnuplot_fig4())?;
    Ok(written)
}

const GP_PREAMBLE: &str = "set datafile separator ','\nset key autotitle columnhead\nset grid\n";

fn gnuplot_fig1() -> String {
    format!(
        "{GP_PREAMBLE}set title 'Admittance output'\nset xlabel 't [s]'\nset ylabel 'position [m]'\n\
plot 'fig1_reference.csv' using 1:2 with lines, '' using 1:5 with lines, \
'' using 1:8 with lines dt 2 lc 'red', '' using 1:9 with lines dt 2 lc 'red'\npause -1\n"
    )
}

fn gnuplot_fig2() -> String {
    format!(
        "{GP_PREAMBLE}set title 'Admittance gains K_x'\nset xlabel 't [s]'\n\
plot 'fig2_gains.csv' using 1:2 with lines, '' using 1:3 with lines, \
'' using 1:4 with lines, '' using 1:5 with lines\npause -1\n"
    )
}

fn gnuplot_fig3() -> String {
    format!(
        "{GP_PREAMBLE}set title 'End-effector deviation in the X-Y plane'\nset xlabel 'x [m]'\nset ylabel 'y [m]'\nset size ratio -1\n\
plot 'fig3_xy.csv' using (strcol(1) eq 'end_effector' ? $2 : NaN):3 with lines title 'end effector', \
'' using (strcol(1) eq 'reference' ? $2 : NaN):3 with lines dt 3 title 'reference', \
'' using (strcol(1) eq 'safety_square' ? $2 : NaN):3 with lines lc 'red' title 'safety bound'\npause -1\n"
    )
}

fn gnuplot_fig4() -> String {
    format!(
        "{GP_PREAMBLE}set title 'Joint torques'\nset xlabel 't [s]'\nset ylabel 'torque [N m]'\n\
plot 'fig4_torque.csv' using 1:2 with lines, '' using 1:3 with lines\npause -1\n"
    )
}
