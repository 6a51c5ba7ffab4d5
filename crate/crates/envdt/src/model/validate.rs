//! Structural validation of environment models.
//!
//! `validate_model` never mutates and never stops early: it collects every
//! finding into a [`ValidationReport`]. A model with zero error-severity
//! diagnostics is executable; warnings flag constructs that are legal but
//! almost certainly unintended (a non-final state with no way out, an
//! uncertain transition that can never win).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{
    ActionBlock, BehaviorMachine, ComponentClass, EnvironmentModel, Expr, PropertyType, SignalKind,
    State, StateKind, Statement, Stereotype, Value,
};
use crate::instance::{Constraint, ConstraintKind};

/// True when the machine's transition graph contains a directed cycle.
fn has_cycle(machine: &BehaviorMachine) -> bool {
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        Grey,
        Black,
    }
    fn visit(machine: &BehaviorMachine, state: &str, color: &mut BTreeMap<String, Color>) -> bool {
        color.insert(state.to_string(), Color::Grey);
        for t in machine.outgoing(state) {
            if machine.state(&t.target).is_none() {
                continue;
            }
            match color.get(t.target.as_str()) {
                Some(Color::Grey) => return true,
                Some(Color::Black) => {}
                _ => {
                    if visit(machine, &t.target, color) {
                        return true;
                    }
                }
            }
        }
        color.insert(state.to_string(), Color::Black);
        false
    }
    let mut color = BTreeMap::new();
    for s in &machine.states {
        if !matches!(color.get(s.name.as_str()), Some(Color::Black)) && visit(machine, &s.name, &mut color) {
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
}

/// One validation finding, located by a human-readable model path such as
/// `machine KarieDeviceSM, state SettingUp`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {}: {}", self.location, self.message)
    }
}

/// All findings for one model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.severity == Severity::Warning)
    }

    /// True when the model has no error-severity findings.
    pub fn is_ok(&self) -> bool {
        self.errors().next().is_none()
    }
}

struct Checker<'m> {
    model: &'m EnvironmentModel,
    out: Vec<Diagnostic>,
}

impl<'m> Checker<'m> {
    fn error(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.out.push(Diagnostic {
            severity: Severity::Error,
            location: location.into(),
            message: message.into(),
        });
    }

    fn warning(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.out.push(Diagnostic {
            severity: Severity::Warning,
            location: location.into(),
            message: message.into(),
        });
    }
}

/// Validates `model` structurally, returning every finding.
pub fn validate_model(model: &EnvironmentModel) -> ValidationReport {
    let mut ck = Checker { model, out: Vec::new() };
    ck.check_unique_top_level_names();
    ck.check_classes();
    ck.check_device_class();
    for machine in &model.machines {
        ck.check_machine(machine);
    }
    ck.check_submachine_dag();
    ck.check_signal_consistency();
    for constraint in &model.constraints {
        ck.check_constraint(constraint);
    }
    ValidationReport { diagnostics: ck.out }
}

impl<'m> Checker<'m> {
    fn check_unique_top_level_names(&mut self) {
        let mut class_names = BTreeSet::new();
        for c in &self.model.classes {
            if !class_names.insert(&c.name) {
                self.error(format!("class {}", c.name), "duplicate class name");
            }
        }
        let mut machine_names = BTreeSet::new();
        for m in &self.model.machines {
            if !machine_names.insert(&m.name) {
                self.error(format!("machine {}", m.name), "duplicate machine name");
            }
        }
        let mut constraint_ids = BTreeSet::new();
        for c in &self.model.constraints {
            if !constraint_ids.insert(&c.id) {
                self.error(format!("constraint {}", c.id), "duplicate constraint id");
            }
        }
    }

    fn check_classes(&mut self) {
        let classes = &self.model.classes;
        for class in classes {
            let loc = format!("class {}", class.name);
            let mut props = BTreeSet::new();
            for p in &class.properties {
                if !props.insert(&p.name) {
                    self.error(&loc, format!("duplicate property '{}'", p.name));
                }
                self.check_property_range(&loc, p);
            }
            let mut roles = BTreeSet::new();
            for a in &class.assocs {
                if !roles.insert(&a.role) {
                    self.error(&loc, format!("duplicate association role '{}'", a.role));
                }
                if self.model.class(&a.target).is_none() {
                    self.error(&loc, format!("association '{}' targets unknown class '{}'", a.role, a.target));
                }
                if a.lower > a.upper {
                    self.error(
                        &loc,
                        format!("association '{}' multiplicity lower {} exceeds upper {}", a.role, a.lower, a.upper),
                    );
                }
            }
            if let Some(behavior) = &class.owned_behavior {
                match self.model.machine(behavior) {
                    None => {
                        self.error(&loc, format!("owned behavior names unknown machine '{behavior}'"));
                    }
                    Some(m) if m.owner_class != class.name => {
                        self.error(
                            &loc,
                            format!(
                                "owned behavior '{}' is declared for class '{}', not '{}'",
                                behavior, m.owner_class, class.name
                            ),
                        );
                    }
                    Some(_) => {}
                }
            }
        }
    }

    fn check_property_range(&mut self, loc: &str, p: &super::PropertyDecl) {
        let Some((lo, hi)) = &p.range else { return };
        let numeric = matches!(p.ty, PropertyType::Int | PropertyType::Real);
        if !numeric {
            self.error(loc, format!("property '{}' declares a range but is not numeric", p.name));
            return;
        }
        match (lo.as_f64(), hi.as_f64()) {
            (Some(l), Some(h)) if l > h => {
                self.error(loc, format!("property '{}' range lower bound exceeds upper bound", p.name));
            }
            (Some(_), Some(_)) => {}
            _ => self.error(loc, format!("property '{}' range bounds must be numeric", p.name)),
        }
    }

    /// Exactly one environment class is the device (`<<Feature>>`), and it
    /// must own a behaviour: that machine roots every simulation.
    fn check_device_class(&mut self) {
        let features: Vec<_> = self
            .model
            .classes
            .iter()
            .filter(|c| !c.dt_side && c.stereotypes.contains(&Stereotype::Feature))
            .collect();
        match features.as_slice() {
            [] => self.error("model", "no class carries <<Feature>>: the device machine cannot be located"),
            [device] => {
                if device.owned_behavior.is_none() {
                    self.error(
                        format!("class {}", device.name),
                        "the <<Feature>> class must declare an owned behavior (the device machine)",
                    );
                }
            }
            many => {
                let names: Vec<_> = many.iter().map(|c| c.name.as_str()).collect();
                self.error("model", format!("multiple classes carry <<Feature>>: {}", names.join(", ")));
            }
        }
    }

    fn check_machine(&mut self, machine: &BehaviorMachine) {
        let loc = format!("machine {}", machine.name);
        if self.model.class(&machine.owner_class).is_none() {
            self.error(&loc, format!("owner class '{}' is not declared", machine.owner_class));
        }

        let mut state_names = BTreeSet::new();
        for s in &machine.states {
            if !state_names.insert(s.name.as_str()) {
                self.error(&loc, format!("duplicate state '{}'", s.name));
            }
        }
        let initials = machine.states.iter().filter(|s| s.kind == StateKind::Initial).count();
        if initials != 1 {
            self.error(&loc, format!("expected exactly one initial state, found {initials}"));
        }

        for s in &machine.states {
            self.check_state(machine, s);
        }

        let mut transition_names = BTreeSet::new();
        for t in &machine.transitions {
            let tloc = format!("{loc}, transition {}", t.name);
            if !transition_names.insert(t.name.as_str()) {
                self.error(&loc, format!("duplicate transition '{}'", t.name));
            }
            match machine.state(&t.source) {
                None => self.error(&tloc, format!("unknown source state '{}'", t.source)),
                Some(s) if s.kind == StateKind::Final => {
                    self.error(&tloc, "final states have no outgoing transitions");
                }
                Some(_) => {}
            }
            match machine.state(&t.target) {
                None => self.error(&tloc, format!("unknown target state '{}'", t.target)),
                Some(s) if s.kind == StateKind::Initial => {
                    self.error(&tloc, "transitions cannot target the initial state");
                }
                Some(_) => {}
            }
            if let Some(belief) = &t.belief {
                if !(0.0..=1.0).contains(&belief.degree) || !belief.degree.is_finite() {
                    self.error(&tloc, format!("belief degree {} out of [0, 1]", belief.degree));
                } else if belief.degree == 0.0 {
                    self.warning(&tloc, "belief degree 0 can never be selected");
                }
                if let Some(dist) = &belief.dist {
                    if let Err(e) = dist.validate() {
                        self.error(&tloc, format!("distribution override: {e}"));
                    }
                }
            }
        }

        self.check_machine_graph(machine);
    }

    fn check_state(&mut self, machine: &BehaviorMachine, state: &State) {
        let loc = format!("machine {}, state {}", machine.name, state.name);
        if state.kind != StateKind::Simple {
            let bare = state.entry.is_none()
                && state.do_activity.is_none()
                && state.exit.is_none()
                && state.submachine.is_none();
            if !bare {
                let which = if state.kind == StateKind::Initial { "initial" } else { "final" };
                self.error(&loc, format!("{which} states carry no behaviors or submachines"));
            }
        }
        if let Some(sub) = &state.submachine {
            if self.model.machine(sub).is_none() {
                self.error(&loc, format!("submachine '{sub}' is not declared"));
            }
        }
        let owner = self.model.class(&machine.owner_class);
        for (slot, block) in state.behaviors() {
            let bloc = format!("{loc}, {} block", slot.name());
            if let Some(owner) = owner {
                self.check_action_block(&bloc, owner, block);
            }
        }
    }

    fn check_action_block(&mut self, loc: &str, owner: &'m ComponentClass, block: &ActionBlock) {
        for stmt in &block.statements {
            match stmt {
                Statement::Set { path, expr } => {
                    self.check_action_path(loc, owner, path, None);
                    self.check_action_expr(loc, owner, expr);
                }
                Statement::Rand { path, lo, hi } => {
                    self.check_action_path(loc, owner, path, Some((lo, hi)));
                }
                Statement::Emit(_) | Statement::Log(_) | Statement::Wait(_) => {}
            }
        }
    }

    /// Resolves `path` from `owner` through association roles to a property.
    /// Multi-valued roles are allowed: at run time navigation follows the
    /// first link.
    fn resolve_path<'a>(
        &self,
        start: &'a ComponentClass,
        path: &[String],
    ) -> Result<&'a super::PropertyDecl, String>
    where
        'm: 'a,
    {
        let mut class = start;
        for (i, seg) in path.iter().enumerate() {
            let last = i + 1 == path.len();
            if last {
                return class
                    .properties
                    .iter()
                    .find(|p| &p.name == seg)
                    .ok_or_else(|| format!("class '{}' has no property '{}'", class.name, seg));
            }
            let assoc = class
                .assocs
                .iter()
                .find(|a| &a.role == seg)
                .ok_or_else(|| format!("class '{}' has no association role '{}'", class.name, seg))?;
            class = self
                .model
                .class(&assoc.target)
                .ok_or_else(|| format!("association '{}' targets unknown class '{}'", seg, assoc.target))?;
        }
        Err("empty property path".to_string())
    }

    fn check_action_path(
        &mut self,
        loc: &str,
        owner: &'m ComponentClass,
        path: &[String],
        rand_bounds: Option<(&Value, &Value)>,
    ) {
        let prop = match self.resolve_path(owner, path) {
            Ok(p) => p,
            Err(e) => {
                self.error(loc, e);
                return;
            }
        };
        if let Some((lo, hi)) = rand_bounds {
            if !matches!(prop.ty, PropertyType::Int | PropertyType::Real) {
                self.error(loc, format!("rand targets non-numeric property '{}'", prop.name));
                return;
            }
            match (lo.as_f64(), hi.as_f64()) {
                (Some(l), Some(h)) if l > h => {
                    self.error(loc, "rand bounds are inverted");
                }
                (Some(_), Some(_)) => {}
                _ => self.error(loc, "rand bounds must be numeric"),
            }
        }
    }

    fn check_action_expr(&mut self, loc: &str, owner: &'m ComponentClass, expr: &Expr) {
        match expr {
            Expr::Lit(_) => {}
            Expr::Path(path) => self.check_action_path(loc, owner, path, None),
            Expr::Unary(_, e) => self.check_action_expr(loc, owner, e),
            Expr::Binary(_, a, b) => {
                self.check_action_expr(loc, owner, a);
                self.check_action_expr(loc, owner, b);
            }
            Expr::Param(_) | Expr::Size(_) | Expr::ForAllPairs { .. } | Expr::Var(..) => {
                self.error(loc, "collection and parameter expressions are not allowed in actions");
            }
        }
    }

    /// Per-machine graph checks: reachability from the initial state, and
    /// "can terminate or loop" (at least one final state or one cycle).
    fn check_machine_graph(&mut self, machine: &BehaviorMachine) {
        let loc = format!("machine {}", machine.name);
        let Some(initial) = machine.initial_state() else { return };

        let mut reachable = BTreeSet::new();
        let mut queue = VecDeque::from([initial.name.as_str()]);
        while let Some(cur) = queue.pop_front() {
            if !reachable.insert(cur) {
                continue;
            }
            for t in machine.outgoing(cur) {
                if machine.state(&t.target).is_some() {
                    queue.push_back(&t.target);
                }
            }
        }
        for s in &machine.states {
            if !reachable.contains(s.name.as_str()) {
                self.error(format!("{loc}, state {}", s.name), "unreachable from the initial state");
            }
        }

        let has_final = machine.states.iter().any(|s| s.kind == StateKind::Final);
        if !has_final && !has_cycle(machine) {
            self.error(&loc, "machine has neither a final state nor a cycle and cannot run meaningfully");
        }

        for s in &machine.states {
            if s.kind == StateKind::Simple && machine.outgoing(&s.name).next().is_none() {
                self.warning(
                    format!("{loc}, state {}", s.name),
                    "non-final state has no outgoing transitions; execution will strand here",
                );
            }
        }
    }

    /// Submachine references must form a DAG: a machine reachable from one
    /// of its own states' submachines would recurse forever.
    fn check_submachine_dag(&mut self) {
        let edges: BTreeMap<&str, Vec<&str>> = self
            .model
            .machines
            .iter()
            .map(|m| {
                let subs: Vec<&str> = m
                    .states
                    .iter()
                    .filter_map(|s| s.submachine.as_deref())
                    .filter(|sub| self.model.machine(sub).is_some())
                    .collect();
                (m.name.as_str(), subs)
            })
            .collect();

        // Iterative DFS with colouring; report each cycle participant once.
        #[derive(Clone, Copy, PartialEq)]
        enum Color {
            White,
            Grey,
            Black,
        }
        let mut color: BTreeMap<&str, Color> =
            edges.keys().map(|&name| (name, Color::White)).collect();
        let mut in_cycle = BTreeSet::new();

        fn visit<'a>(
            node: &'a str,
            edges: &BTreeMap<&'a str, Vec<&'a str>>,
            color: &mut BTreeMap<&'a str, Color>,
            in_cycle: &mut BTreeSet<&'a str>,
        ) {
            color.insert(node, Color::Grey);
            for &next in edges.get(node).into_iter().flatten() {
                match color.get(next) {
                    Some(Color::White) => visit(next, edges, color, in_cycle),
                    Some(Color::Grey) => {
                        in_cycle.insert(next);
                    }
                    _ => {}
                }
            }
            color.insert(node, Color::Black);
        }

        let names: Vec<&str> = edges.keys().copied().collect();
        for name in names {
            if color[name] == Color::White {
                visit(name, &edges, &mut color, &mut in_cycle);
            }
        }
        for name in in_cycle {
            self.error(format!("machine {name}"), "submachine references form a cycle");
        }
    }

    /// Signal-level consistency across the whole model: library triggers
    /// must be declared as receptions somewhere, and a user-interaction
    /// label must keep one category everywhere it appears.
    fn check_signal_consistency(&mut self) {
        let receptions: BTreeSet<&SignalKind> = self
            .model
            .classes
            .iter()
            .flat_map(|c| c.receptions.iter())
            .collect();

        let mut label_categories: BTreeMap<&str, (super::SignalCategory, String)> = BTreeMap::new();
        let mut signals: Vec<(String, &SignalKind)> = Vec::new();
        for class in &self.model.classes {
            for r in &class.receptions {
                signals.push((format!("class {}", class.name), r));
            }
        }
        for machine in &self.model.machines {
            for t in &machine.transitions {
                if let Some(sig) = &t.trigger {
                    let loc = format!("machine {}, transition {}", machine.name, t.name);
                    if sig.is_library() && !receptions.contains(sig) {
                        self.error(
                            &loc,
                            format!("library signal '{}' is not declared as a reception in any class", sig.name()),
                        );
                    }
                    signals.push((loc, sig));
                }
            }
            for state in &machine.states {
                for (slot, block) in state.behaviors() {
                    for stmt in &block.statements {
                        if let Statement::Emit(sig) = stmt {
                            signals.push((
                                format!("machine {}, state {}, {} block", machine.name, state.name, slot.name()),
                                sig,
                            ));
                        }
                    }
                }
            }
        }

        for (loc, sig) in signals {
            if let SignalKind::UserInteraction { label, category } = sig {
                if SignalKind::from_library_name(label).is_some() {
                    self.error(&loc, format!("user signal label '{label}' shadows a library signal"));
                    continue;
                }
                match label_categories.get(label.as_str()) {
                    None => {
                        label_categories.insert(label, (*category, loc));
                    }
                    Some((prev, first_loc)) if prev != category => {
                        self.error(
                            &loc,
                            format!(
                                "user signal '{label}' declared '{category}' here but '{prev}' at {first_loc}"
                            ),
                        );
                    }
                    Some(_) => {}
                }
            }
        }
    }

    fn check_constraint(&mut self, constraint: &Constraint) {
        let loc = format!("constraint {}", constraint.id);
        let Some(context) = self.model.class(&constraint.context) else {
            self.error(&loc, format!("context class '{}' is not declared", constraint.context));
            return;
        };
        match &constraint.kind {
            ConstraintKind::Range { path, lo, hi } => {
                match self.resolve_path(context, path) {
                    Ok(p) if !matches!(p.ty, PropertyType::Int | PropertyType::Real) => {
                        self.error(&loc, format!("range constrains non-numeric property '{}'", p.name));
                    }
                    Ok(_) => {}
                    Err(e) => self.error(&loc, e),
                }
                match (lo.as_f64(), hi.as_f64()) {
                    (Some(l), Some(h)) if l > h => self.error(&loc, "range bounds are inverted"),
                    (Some(_), Some(_)) => {}
                    _ => self.error(&loc, "range bounds must be numeric"),
                }
            }
            ConstraintKind::Unique { role, property } => match self.resolve_role(context, role) {
                Ok(target) => {
                    if !target.properties.iter().any(|p| &p.name == property) {
                        self.error(
                            &loc,
                            format!("class '{}' has no property '{}' to be unique over", target.name, property),
                        );
                    }
                }
                Err(e) => self.error(&loc, e),
            },
            ConstraintKind::Cardinality { role, lower, upper } => {
                if let Err(e) = self.resolve_role(context, role) {
                    self.error(&loc, e);
                }
                if let (crate::instance::CountBound::Lit(l), crate::instance::CountBound::Lit(u)) =
                    (lower, upper)
                {
                    if l > u {
                        self.error(&loc, "cardinality lower bound exceeds upper bound");
                    }
                }
            }
            ConstraintKind::Positive { path } => match self.resolve_path(context, path) {
                Ok(p) if !matches!(p.ty, PropertyType::Int | PropertyType::Real) => {
                    self.error(&loc, format!("positive constrains non-numeric property '{}'", p.name));
                }
                Ok(_) => {}
                Err(e) => self.error(&loc, e),
            },
            ConstraintKind::BoolExpr(expr) => {
                self.check_constraint_expr(&loc, context, expr, &mut BTreeMap::new());
            }
        }
    }

    fn resolve_role(&self, context: &ComponentClass, role: &str) -> Result<&'m ComponentClass, String> {
        let assoc = context
            .assocs
            .iter()
            .find(|a| a.role == role)
            .ok_or_else(|| format!("class '{}' has no association role '{role}'", context.name))?;
        self.model
            .class(&assoc.target)
            .ok_or_else(|| format!("association '{role}' targets unknown class '{}'", assoc.target))
    }

    fn check_constraint_expr(
        &mut self,
        loc: &str,
        context: &'m ComponentClass,
        expr: &Expr,
        bound: &mut BTreeMap<String, &'m ComponentClass>,
    ) {
        match expr {
            Expr::Lit(_) | Expr::Param(_) => {}
            Expr::Path(path) => {
                if let Err(e) = self.resolve_path(context, path) {
                    self.error(loc, e);
                }
            }
            Expr::Size(role) => {
                if let Err(e) = self.resolve_role(context, role) {
                    self.error(loc, e);
                }
            }
            Expr::ForAllPairs { role, v1, v2, body } => match self.resolve_role(context, role) {
                Ok(target) => {
                    bound.insert(v1.clone(), target);
                    bound.insert(v2.clone(), target);
                    self.check_constraint_expr(loc, context, body, bound);
                    bound.remove(v1);
                    bound.remove(v2);
                }
                Err(e) => self.error(loc, e),
            },
            Expr::Var(var, path) => match bound.get(var) {
                Some(class) => {
                    if let Err(e) = self.resolve_path(class, path) {
                        self.error(loc, e);
                    }
                }
                None => self.error(loc, format!("unbound variable '{var}'")),
            },
            Expr::Unary(_, e) => self.check_constraint_expr(loc, context, e, bound),
            Expr::Binary(_, a, b) => {
                self.check_constraint_expr(loc, context, a, bound);
                self.check_constraint_expr(loc, context, b, bound);
            }
        }
    }
}
