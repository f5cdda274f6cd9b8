//! Slot-indexed interpreter for lowered programs.

use std::collections::HashMap;

use super::SimError;
use crate::autocoder::{Assign, IrProgram};
use crate::model::Mode;

struct Op {
    out: Vec<usize>,
    /// Nonzero coefficients per output row, in `in_vars` order.
    rows: Vec<Vec<(f64, usize)>>,
    b: Vec<f64>,
}

struct Step {
    code: Vec<(Option<Mode>, Op)>,
    /// `(input, ghost)` copies performed before the statement runs.
    alias: Vec<(usize, usize)>,
}

pub(super) struct Machine {
    slots: HashMap<String, usize>,
    values: Vec<f64>,
    body: Vec<Step>,
}

impl Machine {
    /// Ghost variables of every behavior share one slot, so a switch of
    /// behavior carries the plant state over.
    pub fn compile(ir: &IrProgram) -> Result<Self, SimError> {
        let mut slots = HashMap::new();
        for d in ir.inputs.iter().chain(&ir.state).chain(&ir.signals) {
            for v in d.vars() {
                let k = slots.len();
                slots.insert(v, k);
            }
        }
        for g in &ir.ghosts {
            for v in g.vars() {
                let k = slots.len();
                for mode in ir.behavior_keys() {
                    slots.insert(ir.qualify(&v, mode), k);
                }
                slots.insert(v, k);
            }
        }
        let slot = |v: &str| {
            slots
                .get(v)
                .copied()
                .ok_or_else(|| SimError::Scenario(format!("program uses undeclared `{v}`")))
        };
        let op = |a: &Assign| -> Result<Op, SimError> {
            let ins = a
                .in_vars
                .iter()
                .map(|v| slot(v))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Op {
                out: a
                    .out_vars
                    .iter()
                    .map(|v| slot(v))
                    .collect::<Result<_, _>>()?,
                rows: (0..a.t.rows())
                    .map(|i| {
                        a.t.row(i)
                            .iter()
                            .zip(&ins)
                            .filter(|(c, _)| **c != 0.0)
                            .map(|(&c, &j)| (c, j))
                            .collect()
                    })
                    .collect(),
                b: a.b.clone(),
            })
        };
        let mut body = Vec::new();
        for stmt in &ir.body {
            let code = stmt
                .code
                .iter()
                .map(|(m, a)| Ok((*m, op(a)?)))
                .collect::<Result<Vec<_>, SimError>>()?;
            let mut alias = Vec::new();
            if let Some(rule) = &stmt.alias {
                let prefix = format!("{}[", rule.input);
                for (_, a) in &stmt.code {
                    for v in &a.in_vars {
                        if let Some(rest) = v.strip_prefix(&prefix) {
                            alias.push((slot(v)?, slot(&format!("{}[{rest}", rule.ghost))?));
                        }
                    }
                }
            }
            body.push(Step { code, alias });
        }
        let values = vec![0.0; slots.values().max().map_or(0, |m| m + 1)];
        Ok(Self {
            slots,
            values,
            body,
        })
    }

    pub fn slots(&self, vars: &[String]) -> Result<Vec<usize>, SimError> {
        vars.iter()
            .map(|v| {
                self.slots
                    .get(v)
                    .copied()
                    .ok_or_else(|| SimError::Scenario(format!("no variable `{v}`")))
            })
            .collect()
    }

    pub fn read(&self, slots: &[usize]) -> Vec<f64> {
        slots.iter().map(|&s| self.values[s]).collect()
    }

    pub fn write(&mut self, slots: &[usize], v: &[f64]) {
        for (&s, &x) in slots.iter().zip(v) {
            self.values[s] = x;
        }
    }

    /// One pass over the body with the statements of `mode`.
    pub fn step(&mut self, mode: Option<Mode>) {
        let mut next = Vec::new();
        for st in &self.body {
            for &(dst, src) in &st.alias {
                self.values[dst] = self.values[src];
            }
            let Some((_, op)) = st.code.iter().find(|(m, _)| m.is_none() || *m == mode) else {
                continue;
            };
            next.clear();
            for (row, &b) in op.rows.iter().zip(&op.b) {
                // left to right, as the emitted C sums its terms
                let mut acc = match row.first() {
                    Some(&(c, j)) => c * self.values[j],
                    None => 0.0,
                };
                for &(c, j) in row.iter().skip(1) {
                    acc += c * self.values[j];
                }
                if b != 0.0 {
                    acc += b;
                }
                next.push(acc);
            }
            for (&o, &v) in op.out.iter().zip(&next) {
                self.values[o] = v;
            }
        }
    }
}
