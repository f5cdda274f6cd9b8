//! C99 text with ACSL-style contracts.
//!
//! Every shape is printed once as a `QMat_k` logic constant (numbered densely
//! in order of first use) with the digits the sidecar carries. Ghost state
//! and contracts live inside `/*@ ... */` comments, so a C compiler sees only
//! the straight-line updates.

use std::fmt::Write as _;

use super::{Assign, Decl, IrProgram, ObligationSet};
use crate::ellipsoid::EllipsoidQ;
use crate::model::Mode;
use crate::numerics::Matrix;
use crate::sidecar::{number, Obligation};

#[derive(Clone, Debug, PartialEq)]
pub struct ContractBlock {
    /// 1-based line of the block's opening `/*@`.
    pub line: usize,
    pub obligations: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedSource {
    pub c_text: String,
    pub blocks: Vec<ContractBlock>,
}

#[derive(Default)]
struct QMats {
    mats: Vec<Matrix>,
}

impl QMats {
    fn id(&mut self, m: &Matrix) -> usize {
        let same = |a: &Matrix| {
            a.shape() == m.shape()
                && a.data()
                    .iter()
                    .zip(m.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        };
        if let Some(i) = self.mats.iter().position(same) {
            return i + 1;
        }
        self.mats.push(m.clone());
        self.mats.len()
    }

    fn declarations(&self) -> String {
        let mut out = String::new();
        for (i, m) in self.mats.iter().enumerate() {
            let _ = writeln!(
                out,
                "/*@ logic matrix QMat_{} = mat_of_{}x{}_scalar(",
                i + 1,
                m.rows(),
                m.cols()
            );
            for r in 0..m.rows() {
                let row: Vec<String> = m.row(r).iter().map(|&v| number(v)).collect();
                let sep = if r + 1 == m.rows() { ");" } else { "," };
                let _ = writeln!(out, "      {}{sep}", row.join(", "));
            }
            out.push_str("*/\n");
        }
        out
    }
}

struct Writer {
    text: String,
    blocks: Vec<ContractBlock>,
}

impl Writer {
    fn line(&mut self, indent: usize, s: &str) {
        for _ in 0..indent {
            self.text.push_str("    ");
        }
        self.text.push_str(s);
        self.text.push('\n');
    }

    fn blank(&mut self) {
        self.text.push('\n');
    }

    fn open_block(&mut self, indent: usize, ids: Vec<u32>) {
        self.blocks.push(ContractBlock {
            line: self.text.lines().count() + 1,
            obligations: ids,
        });
        self.line(indent, "/*@");
    }
}

fn vect(vars: &[String]) -> String {
    format!("vect_of_{}_scalar({})", vars.len(), vars.join(", "))
}

fn in_ellipsoid(q: &mut QMats, m: &Matrix, vars: &[String]) -> String {
    format!("in_ellipsoidQ(QMat_{}, {})", q.id(m), vect(vars))
}

fn behavior_header(mode: Option<Mode>) -> Option<String> {
    mode.map(|m| format!("behavior {}_ellipsoid:", m.label()))
}

/// `c0 * v0 + c1 * v1 ...`, zero coefficients dropped, signs folded.
fn expression(coeffs: &[f64], vars: &[String]) -> String {
    let mut s = String::new();
    for (&c, v) in coeffs.iter().zip(vars) {
        if c == 0.0 {
            continue;
        }
        if s.is_empty() {
            let _ = write!(s, "{} * {v}", number(c));
        } else if c < 0.0 {
            let _ = write!(s, " - {} * {v}", number(-c));
        } else {
            let _ = write!(s, " + {} * {v}", number(c));
        }
    }
    if s.is_empty() {
        s.push_str("0.0");
    }
    s
}

fn assign_lines(a: &Assign) -> Vec<String> {
    let exprs: Vec<String> = (0..a.out_vars.len())
        .map(|i| {
            let e = expression(a.t.row(i), &a.in_vars);
            if a.b[i] != 0.0 {
                format!("{e} + {}", number(a.b[i]))
            } else {
                e
            }
        })
        .collect();
    let in_place = a.out_vars.iter().any(|o| a.in_vars.contains(o));
    if !in_place {
        return a
            .out_vars
            .iter()
            .zip(&exprs)
            .map(|(o, e)| format!("{o} = {e};"))
            .collect();
    }
    let mut lines = vec![
        "{".to_string(),
        format!("    double next[{}];", a.out_vars.len()),
    ];
    for (i, e) in exprs.iter().enumerate() {
        lines.push(format!("    next[{i}] = {e};"));
    }
    for (i, o) in a.out_vars.iter().enumerate() {
        lines.push(format!("    {o} = next[{i}];"));
    }
    lines.push("}".to_string());
    lines
}

fn param(d: &Decl, mutable: bool) -> String {
    match (d.len, mutable) {
        (Some(n), false) => format!("const double {}[{n}]", d.name),
        (Some(n), true) => format!("double {}[{n}]", d.name),
        (None, false) => format!("double {}", d.name),
        (None, true) => format!("double *{}", d.name),
    }
}

fn obligation_lines(w: &mut Writer, q: &mut QMats, o: &Obligation, indent: usize) {
    if !o.assumptions.is_empty() {
        let eqs: Vec<String> = o
            .assumptions
            .iter()
            .map(|a| format!("{} == {}", a.var, a.equals))
            .collect();
        w.line(indent, &format!("assumes {};", eqs.join(" && ")));
    }
    for p in &o.pre {
        w.line(
            indent,
            &format!("requires {};", in_ellipsoid(q, &p.q, &p.vars)),
        );
    }
    w.line(
        indent,
        &format!("ensures {};", in_ellipsoid(q, &o.q_post, &o.post_vars)),
    );
    w.line(
        indent,
        &format!("PROOF_TACTIC (use_strategy ({}));", o.tactic.name()),
    );
    w.line(indent, &format!("// obligation {}", o.id));
}

/// Deterministic C source for the program and its obligations.
pub fn emit_c_acsl(ir: &IrProgram, set: &ObligationSet) -> AnnotatedSource {
    let mut q = QMats::default();
    let mut w = Writer {
        text: String::new(),
        blocks: Vec::new(),
    };
    let name = &ir.name;
    let obligations = &set.sidecar.obligations;

    for d in ir.state.iter().chain(&ir.signals) {
        w.line(0, &format!("{};", d.c_type()));
    }
    if ir.alarm.is_some() {
        w.line(0, "int alarm;");
    }
    if !ir.ghosts.is_empty() {
        w.blank();
        for &mode in &ir.behaviors {
            for g in &ir.ghosts {
                let qualified = Decl {
                    name: format!("{}_{}", mode.label(), g.name),
                    len: g.len,
                };
                w.line(0, &format!("/*@ ghost {}; */", qualified.c_type()));
            }
        }
    }

    w.blank();
    let init_params: Vec<String> = ir
        .state
        .iter()
        .map(|d| {
            param(
                &Decl {
                    name: format!("{}0", d.name),
                    len: d.len,
                },
                false,
            )
        })
        .collect();
    w.line(0, &format!("void {name}_init({})", init_params.join(", ")));
    w.line(0, "{");
    for d in &ir.state {
        match d.len {
            Some(n) => {
                w.line(1, &format!("for (int i = 0; i < {n}; i++) {{"));
                w.line(2, &format!("{}[i] = {}0[i];", d.name, d.name));
                w.line(1, "}");
            }
            None => w.line(1, &format!("{} = {}0;", d.name, d.name)),
        }
    }
    w.line(0, "}");

    // step contract: loop-head facts in, inductive facts out
    w.blank();
    let closing_ids: Vec<u32> = set
        .closing
        .iter()
        .map(|&(_, _, oi)| obligations[oi].id)
        .collect();
    w.open_block(0, closing_ids);
    for (mode, sets) in &set.head {
        let indent = if let Some(h) = behavior_header(*mode) {
            w.line(1, &h);
            2
        } else {
            1
        };
        for s in sets {
            w.line(
                indent,
                &format!(
                    "requires {};",
                    in_ellipsoid(&mut q, s.q.as_matrix(), &s.vars)
                ),
            );
        }
        for &(m, hi, oi) in &set.closing {
            if m != *mode {
                continue;
            }
            let s: &EllipsoidQ = &sets[hi];
            w.line(
                indent,
                &format!(
                    "ensures {};",
                    in_ellipsoid(&mut q, s.q.as_matrix(), &s.vars)
                ),
            );
            w.line(indent, "PROOF_TACTIC (use_strategy (AffineEllipsoid));");
            w.line(
                indent,
                &format!("// obligation {} (back edge)", obligations[oi].id),
            );
        }
    }
    w.line(0, "*/");
    let step_params: Vec<String> = ir.inputs.iter().map(|d| param(d, false)).collect();
    w.line(0, &format!("void {name}_step({})", step_params.join(", ")));
    w.line(0, "{");

    for (stmt, ids) in ir.body.iter().zip(&set.by_statement) {
        w.blank();
        w.open_block(1, ids.iter().map(|&(_, oi)| obligations[oi].id).collect());
        for &(mode, oi) in ids {
            let indent = if let Some(h) = behavior_header(mode) {
                w.line(2, &h);
                3
            } else {
                2
            };
            obligation_lines(&mut w, &mut q, &obligations[oi], indent);
        }
        w.line(1, "*/");
        if stmt.ghost {
            w.line(1, "/*@ ghost");
            for (_, a) in &stmt.code {
                for l in assign_lines(a) {
                    w.line(2, &l);
                }
            }
            w.line(1, "*/");
        } else {
            for (_, a) in &stmt.code {
                for l in assign_lines(a) {
                    w.line(1, &l);
                }
            }
        }
    }

    if let Some(alarm) = &ir.alarm {
        w.blank();
        let sum: Vec<String> = alarm
            .residual
            .iter()
            .map(|v| format!("{v} * {v}"))
            .collect();
        let limit = number(alarm.r_th * alarm.r_th);
        if let Some((id, guard)) = &set.alarm_guard {
            w.open_block(1, vec![*id]);
            if let Some(h) = behavior_header(Some(Mode::Nominal)) {
                w.line(2, &h);
            }
            w.line(
                3,
                &format!(
                    "assumes {};",
                    in_ellipsoid(&mut q, guard.q.as_matrix(), &guard.vars)
                ),
            );
            w.line(3, "ensures alarm == 0;");
            w.line(
                3,
                &format!(
                    "// derived obligation {id} (residual threshold {})",
                    number(alarm.r_th)
                ),
            );
            w.line(1, "*/");
        }
        w.line(1, &format!("alarm = {} > {limit};", sum.join(" + ")));
    }
    w.line(0, "}");

    // environment and the outer loop
    w.blank();
    let read: Vec<String> = ir.inputs.iter().map(|d| param(d, true)).collect();
    let mut write: Vec<String> = ir.outputs.iter().map(|d| param(d, false)).collect();
    if ir.alarm.is_some() {
        write.push("int alarm".into());
    }
    w.line(0, &format!("extern void {name}_read({});", read.join(", ")));
    w.line(
        0,
        &format!("extern void {name}_write({});", write.join(", ")),
    );
    w.blank();
    w.line(0, &format!("void {name}_run(void)"));
    w.line(0, "{");
    for d in &ir.inputs {
        w.line(1, &format!("{};", d.c_type()));
    }
    w.line(1, "/*@");
    for (mode, sets) in &set.head {
        for (h, s) in ir.head.iter().zip(sets) {
            if !h.inductive {
                continue;
            }
            let inv = format!(
                "loop invariant {};",
                in_ellipsoid(&mut q, s.q.as_matrix(), &s.vars)
            );
            match mode {
                Some(m) => w.line(2, &format!("for {}_ellipsoid: {inv}", m.label())),
                None => w.line(2, &inv),
            }
        }
    }
    w.line(1, "*/");
    w.line(1, "while (1) {");
    let read_args: Vec<String> = ir
        .inputs
        .iter()
        .map(|d| {
            if d.len.is_some() {
                d.name.clone()
            } else {
                format!("&{}", d.name)
            }
        })
        .collect();
    let step_args: Vec<String> = ir.inputs.iter().map(|d| d.name.clone()).collect();
    let mut write_args: Vec<String> = ir.outputs.iter().map(|d| d.name.clone()).collect();
    if ir.alarm.is_some() {
        write_args.push("alarm".into());
    }
    w.line(2, &format!("{name}_read({});", read_args.join(", ")));
    w.line(2, &format!("{name}_step({});", step_args.join(", ")));
    w.line(2, &format!("{name}_write({});", write_args.join(", ")));
    w.line(1, "}");
    w.line(0, "}");

    let mut header = String::new();
    let _ = writeln!(
        header,
        "/* {name}: generated by fdcert {}; regenerate rather than edit.",
        env!("CARGO_PKG_VERSION")
    );
    header.push_str(
        " * in_ellipsoidQ(Q, v) holds when [[1, v'], [v, Q]] is positive semidefinite. */\n\n",
    );
    header.push_str(&q.declarations());
    header.push('\n');
    let offset = header.lines().count();
    for b in &mut w.blocks {
        b.line += offset;
    }
    AnnotatedSource {
        c_text: header + &w.text,
        blocks: w.blocks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expressions_fold_signs_and_zeros() {
        let vars: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            expression(&[0.0, -2.0, 0.5], &vars),
            "-2.0000000000000000e0 * b + 5.0000000000000000e-1 * c"
        );
        assert_eq!(expression(&[0.0, 0.0, 0.0], &vars), "0.0");
        assert_eq!(
            expression(&[1.0, -1.0, 0.0], &vars),
            "1.0000000000000000e0 * a - 1.0000000000000000e0 * b"
        );
    }

    #[test]
    fn in_place_updates_use_a_temporary() {
        let a = Assign::new(
            vec!["x".into()],
            vec!["x".into(), "u".into()],
            Matrix::from_rows(&[vec![0.5, 1.0]]).unwrap(),
        );
        let lines = assign_lines(&a);
        assert_eq!(lines.first().map(String::as_str), Some("{"));
        assert!(lines.iter().any(|l| l.contains("x = next[0];")));
    }
}
