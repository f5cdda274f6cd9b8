//! CSV export of traces and plot data.
//!
//! Trace columns: `step`, `mode`, then `y_c[i]`, `y[i]`, `u[i]`, `r[i]`,
//! `r_norm`, `alarm`, `x[i]`, `x_c[i]`, `xhat[i]`, `e[i]`, `f_norm`,
//! `v_detector`, `in_nominal_set`, `in_faulty_set`, `v_error`,
//! `in_error_set`, `in_closed_loop`, `in_observer`. Numbers are printed in
//! the shortest form that parses back to the same `f64`; flags are 0/1.
//!
//! Plot data has columns `series`, `index`, `e0`, `e1`: the boundaries of
//! the nominal and faulty detector sets projected on the first two error
//! components, followed by the trajectory split by mode.

use super::{LoopTrace, SimError, Trace};
use crate::ellipsoid::var_names;
use crate::model::Mode;
use crate::numerics::{inverse_spd, sym_sqrt};
use crate::synthesis::CertificateBundle;

const BOUNDARY_POINTS: usize = 256;

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("csv output is UTF-8")
}

fn push_all(row: &mut Vec<String>, v: &[f64]) {
    row.extend(v.iter().map(|&x| num(x)));
}

pub fn trace_csv(trace: &Trace) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let Some(first) = trace.samples.first() else {
        return String::new();
    };
    let mut header = vec!["step".to_string(), "mode".to_string()];
    for (base, len) in [
        ("y_c", first.y_c.len()),
        ("y", first.y.len()),
        ("u", first.u.len()),
        ("r", first.r.len()),
    ] {
        header.extend(var_names(base, len));
    }
    header.extend(["r_norm".into(), "alarm".into()]);
    for (base, len) in [
        ("x", first.x.len()),
        ("x_c", first.x_c.len()),
        ("xhat", first.xhat.len()),
        ("e", first.e.len()),
    ] {
        header.extend(var_names(base, len));
    }
    header.extend(
        [
            "f_norm",
            "v_detector",
            "in_nominal_set",
            "in_faulty_set",
            "v_error",
            "in_error_set",
            "in_closed_loop",
            "in_observer",
        ]
        .map(String::from),
    );
    w.write_record(&header).expect("in-memory write");
    for s in &trace.samples {
        let mut row = vec![s.step.to_string(), s.mode.label().to_string()];
        for v in [&s.y_c, &s.y, &s.u, &s.r] {
            push_all(&mut row, v);
        }
        row.push(num(s.r_norm));
        row.push(flag(s.alarm));
        for v in [&s.x, &s.x_c, &s.xhat, &s.e] {
            push_all(&mut row, v);
        }
        row.push(num(s.f_norm));
        row.push(num(s.v_detector));
        row.push(flag(s.in_nominal_set));
        row.push(flag(s.in_faulty_set));
        row.push(num(s.v_error));
        row.push(flag(s.in_error_set));
        row.push(flag(s.in_closed_loop));
        row.push(flag(s.in_observer));
        w.write_record(&row).expect("in-memory write");
    }
    finish(w)
}

/// Columns `step`, the input components named after the C input, the state
/// components, `v` and `inside`.
pub fn loop_trace_csv(trace: &LoopTrace) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let Some(first) = trace.samples.first() else {
        return String::new();
    };
    let names = |base: &str, len: usize| {
        if len == 1 {
            vec![base.to_string()]
        } else {
            var_names(base, len)
        }
    };
    let mut header = vec!["step".to_string()];
    header.extend(names(&format!("io_{}", trace.input), first.input.len()));
    header.extend(names(&trace.state, first.x.len()));
    header.extend(["v".to_string(), "inside".to_string()]);
    w.write_record(&header).expect("in-memory write");
    for s in &trace.samples {
        let mut row = vec![s.step.to_string()];
        push_all(&mut row, &s.input);
        push_all(&mut row, &s.x);
        row.push(num(s.v));
        row.push(flag(s.inside));
        w.write_record(&row).expect("in-memory write");
    }
    finish(w)
}

pub fn plot_csv(trace: &Trace, bundle: &CertificateBundle) -> Result<String, SimError> {
    let det = &bundle.detector;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series", "index", "e0", "e1"])
        .expect("in-memory write");
    let q = inverse_spd(&det.p)?.principal(&[0, 1]);
    for (series, level) in [("nominal_set", det.zeta), ("faulty_set", det.zeta_bar)] {
        let root = sym_sqrt(&q.scale(level), 0.0)?;
        for i in 0..=BOUNDARY_POINTS {
            let t = 2.0 * std::f64::consts::PI * i as f64 / BOUNDARY_POINTS as f64;
            let p = root.as_matrix().mul_vec(&[t.cos(), t.sin()])?;
            w.write_record([series.to_string(), i.to_string(), num(p[0]), num(p[1])])
                .expect("in-memory write");
        }
    }
    for s in &trace.samples {
        let series = match s.mode {
            Mode::Nominal => "trajectory_nominal",
            Mode::Faulty => "trajectory_faulty",
        };
        w.write_record([
            series.to_string(),
            s.step.to_string(),
            num(s.e[0]),
            num(s.e[1]),
        ])
        .expect("in-memory write");
    }
    Ok(finish(w))
}
