//! Canonical printer for the `.envdt` format.
//!
//! `parse_model(print_model(m)) == m` for every model the parser can
//! produce: the printer emits the canonical layout the parser normalises
//! to, and numbers are printed in shortest round-trip form.

use std::fmt::Write;

use crate::instance::{ConstraintKind, CountBound};
use crate::model::{
    ActionBlock, BehaviorMachine, BinOp, EnvironmentModel, Expr, PropertyType, SignalCategory,
    SignalKind, State, StateKind, Statement, UnOp, INITIAL_STATE,
};

/// Prints a model as canonical `.envdt` text.
pub fn print_model(model: &EnvironmentModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model {}", model.name);
    for class in &model.classes {
        out.push('\n');
        if class.dt_side {
            out.push_str("dt ");
        }
        let _ = write!(out, "component {}", class.name);
        for s in &class.stereotypes {
            let _ = write!(out, " <<{s}>>");
        }
        out.push_str(" {\n");
        for p in &class.properties {
            let _ = write!(out, "  property {}: {}", p.name, type_text(&p.ty));
            if let Some((lo, hi)) = &p.range {
                let _ = write!(out, " in [{lo}, {hi}]");
            }
            if let Some(u) = &p.unit {
                let _ = write!(out, " unit {u}");
            }
            out.push_str(";\n");
        }
        for r in &class.receptions {
            let _ = writeln!(out, "  reception {};", signal_text(r));
        }
        for a in &class.assocs {
            let _ = writeln!(out, "  assoc {} -> {} [{}..{}];", a.role, a.target, a.lower, a.upper);
        }
        if let Some(b) = &class.owned_behavior {
            let _ = writeln!(out, "  behavior {b};");
        }
        out.push_str("}\n");
    }
    if !model.constraints.is_empty() {
        out.push('\n');
    }
    for c in &model.constraints {
        let _ = writeln!(out, "constraint {} on {}: {};", c.id, c.context, constraint_text(&c.kind));
    }
    for m in &model.machines {
        out.push('\n');
        machine_text(&mut out, m);
    }
    out
}

fn type_text(ty: &PropertyType) -> String {
    match ty {
        PropertyType::Int => "int".into(),
        PropertyType::Real => "real".into(),
        PropertyType::Bool => "bool".into(),
        PropertyType::Str => "str".into(),
        PropertyType::Enum(variants) => format!("enum({})", variants.join(", ")),
    }
}

/// Signal reference text: library signals by name, user interactions as
/// their label, prefixed by a category keyword when not `info`.
fn signal_text(sig: &SignalKind) -> String {
    match sig {
        SignalKind::UserInteraction { label, category } => match category {
            SignalCategory::Info => label.clone(),
            other => format!("{} {label}", other.name()),
        },
        lib => lib.name().to_string(),
    }
}

/// Canonical expression text for each constraint shape; re-parsing and
/// re-classifying this text reproduces the same shape.
fn constraint_text(kind: &ConstraintKind) -> String {
    match kind {
        ConstraintKind::Range { path, lo, hi } => {
            let p = path.join(".");
            format!("{p} >= {lo} and {p} <= {hi}")
        }
        ConstraintKind::Unique { role, property } => {
            format!("forAllPairs({role}, a, b | a.{property} <> b.{property})")
        }
        ConstraintKind::Cardinality { role, lower, upper } => {
            format!(
                "size({role}) >= {} and size({role}) <= {}",
                bound_text(lower),
                bound_text(upper)
            )
        }
        ConstraintKind::Positive { path } => format!("{} > 0", path.join(".")),
        ConstraintKind::BoolExpr(expr) => expr_text(expr),
    }
}

fn bound_text(bound: &CountBound) -> String {
    match bound {
        CountBound::Lit(n) => n.to_string(),
        CountBound::Param(name) => format!("param({name})"),
    }
}

fn machine_text(out: &mut String, m: &BehaviorMachine) {
    let _ = writeln!(out, "machine {} for {} {{", m.name, m.owner_class);
    for t in &m.transitions {
        if t.source == INITIAL_STATE {
            let _ = writeln!(out, "  initial -> {};", t.target);
        }
    }
    for s in &m.states {
        match s.kind {
            StateKind::Initial => {}
            StateKind::Final => {
                let _ = writeln!(out, "  final {};", s.name);
            }
            StateKind::Simple => state_text(out, s),
        }
    }
    for t in &m.transitions {
        if t.source == INITIAL_STATE {
            continue;
        }
        let _ = write!(out, "  transition {}: {} -> {}", t.name, t.source, t.target);
        if let Some(sig) = &t.trigger {
            let _ = write!(out, " on {}", signal_text(sig));
        }
        if let Some(b) = &t.belief {
            let _ = write!(out, " belief {}", b.degree);
            if let Some(d) = &b.dist {
                let _ = write!(out, " dist {d}");
            }
        }
        out.push_str(";\n");
    }
    out.push_str("}\n");
}

fn state_text(out: &mut String, s: &State) {
    let _ = write!(out, "  state {}", s.name);
    for st in &s.stereotypes {
        let _ = write!(out, " <<{st}>>");
    }
    out.push_str(" {\n");
    if let Some(b) = &s.entry {
        block_text(out, "entry", b);
    }
    if let Some(b) = &s.do_activity {
        block_text(out, "do", b);
    }
    if let Some(b) = &s.exit {
        block_text(out, "exit", b);
    }
    if let Some(sub) = &s.submachine {
        let _ = writeln!(out, "    submachine {sub};");
    }
    out.push_str("  }\n");
}

fn block_text(out: &mut String, slot: &str, block: &ActionBlock) {
    let _ = writeln!(out, "    {slot} {{");
    for stmt in &block.statements {
        let _ = match stmt {
            Statement::Set { path, expr } => {
                writeln!(out, "      set {} = {};", path.join("."), expr_text(expr))
            }
            Statement::Rand { path, lo, hi } => {
                writeln!(out, "      rand {} in [{lo}, {hi}];", path.join("."))
            }
            Statement::Emit(sig) => writeln!(out, "      emit {};", signal_text(sig)),
            Statement::Log(msg) => writeln!(out, "      log {msg:?};"),
            Statement::Wait(ms) => writeln!(out, "      wait {ms};"),
        };
    }
    out.push_str("    }\n");
}

/// Operator precedence, from loosest to tightest. Unary operators and
/// atoms sit above every binary level.
fn prec(op: BinOp) -> u8 {
    match op {
        BinOp::Or => 1,
        BinOp::And => 2,
        BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 3,
        BinOp::Add | BinOp::Sub => 4,
        BinOp::Mul | BinOp::Div => 5,
    }
}

const UNARY_PREC: u8 = 6;

pub(crate) fn expr_text(expr: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, expr, 0);
    s
}

fn write_expr(out: &mut String, expr: &Expr, min_prec: u8) {
    match expr {
        Expr::Lit(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Path(path) => out.push_str(&path.join(".")),
        Expr::Param(name) => {
            let _ = write!(out, "param({name})");
        }
        Expr::Size(role) => {
            let _ = write!(out, "size({role})");
        }
        Expr::ForAllPairs { role, v1, v2, body } => {
            let _ = write!(out, "forAllPairs({role}, {v1}, {v2} | ");
            write_expr(out, body, 0);
            out.push(')');
        }
        Expr::Var(var, path) => {
            let _ = write!(out, "{var}.{}", path.join("."));
        }
        Expr::Unary(op, inner) => {
            out.push_str(match op {
                UnOp::Not => "not ",
                UnOp::Neg => "-",
            });
            write_expr(out, inner, UNARY_PREC);
        }
        Expr::Binary(op, lhs, rhs) => {
            let p = prec(*op);
            let parens = p < min_prec;
            if parens {
                out.push('(');
            }
            write_expr(out, lhs, p);
            let _ = write!(out, " {} ", op.symbol());
            // Right operand needs one level more so left association is
            // preserved on re-parse.
            write_expr(out, rhs, p + 1);
            if parens {
                out.push(')');
            }
        }
    }
}
