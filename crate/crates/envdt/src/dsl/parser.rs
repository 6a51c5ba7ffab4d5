//! Recursive-descent parser for the `.envdt` format.
//!
//! The parser produces a *canonical* model: each machine's initial
//! pseudostate sits at index 0 of its state list with the wired-in initial
//! transition (named `init`) first in the transition list, and constraint
//! expressions are classified into their shapes. Printing a parsed model
//! and re-parsing the output therefore reproduces the same value.

use super::lexer::{lex, Pos, Tok};
use super::ParseError;
use crate::instance::{classify, Constraint};
use crate::model::{
    ActionBlock, AssocDecl, BehaviorMachine, BeliefAnnotation, BinOp, ComponentClass,
    EnvironmentModel, Expr, PropertyDecl, PropertyType, SignalCategory, SignalKind, State,
    StateKind, Statement, Stereotype, Transition, UnOp, Value, INITIAL_STATE,
};
use crate::stoch::DistributionSpec;

/// Parses a complete model from `.envdt` text.
pub fn parse_model(text: &str) -> Result<EnvironmentModel, ParseError> {
    let toks = lex(text)?;
    let mut parser = Parser { toks, i: 0, bound: Vec::new() };
    parser.model()
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    i: usize,
    /// Variables bound by enclosing pair quantifiers, innermost last.
    bound: Vec<String>,
}

impl Parser {
    fn pos(&self) -> Pos {
        self.toks
            .get(self.i)
            .or_else(|| self.toks.last())
            .map(|(_, p)| *p)
            .unwrap_or(Pos { line: 1, col: 1 })
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let pos = self.pos();
        Err(ParseError { line: pos.line, col: pos.col, message: message.into() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|(t, _)| t)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.i + 1).map(|(t, _)| t)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.i).map(|(t, _)| t.clone());
        if t.is_some() {
            self.i += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if self.eat(&tok) {
            Ok(())
        } else {
            match self.peek() {
                Some(got) => self.err(format!("expected {tok}, found {got}")),
                None => self.err(format!("expected {tok}, found end of input")),
            }
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.i += 1;
                Ok(s)
            }
            Some(got) => self.err(format!("expected {what}, found {got}")),
            None => self.err(format!("expected {what}, found end of input")),
        }
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            match self.peek() {
                Some(got) => self.err(format!("expected '{kw}', found {got}")),
                None => self.err(format!("expected '{kw}', found end of input")),
            }
        }
    }

    fn model(&mut self) -> Result<EnvironmentModel, ParseError> {
        self.expect_kw("model")?;
        let name = self.ident("model name")?;
        let mut model =
            EnvironmentModel { name, classes: Vec::new(), constraints: Vec::new(), machines: Vec::new() };
        while self.peek().is_some() {
            if self.eat_kw("component") {
                model.classes.push(self.component(false)?);
            } else if self.at_kw("dt") {
                self.i += 1;
                self.expect_kw("component")?;
                model.classes.push(self.component(true)?);
            } else if self.eat_kw("constraint") {
                model.constraints.push(self.constraint()?);
            } else if self.eat_kw("machine") {
                model.machines.push(self.machine()?);
            } else {
                return self.err("expected 'component', 'dt component', 'constraint', or 'machine'");
            }
        }
        Ok(model)
    }

    fn component(&mut self, dt_side: bool) -> Result<ComponentClass, ParseError> {
        let name = self.ident("component name")?;
        let stereotypes = self.stereotypes()?;
        self.expect(Tok::LBrace)?;
        let mut class = ComponentClass {
            name,
            stereotypes,
            properties: Vec::new(),
            receptions: Vec::new(),
            assocs: Vec::new(),
            owned_behavior: None,
            dt_side,
        };
        while !self.eat(&Tok::RBrace) {
            if self.eat_kw("property") {
                class.properties.push(self.property()?);
            } else if self.eat_kw("reception") {
                class.receptions.push(self.signal_ref()?);
                self.expect(Tok::Semi)?;
            } else if self.eat_kw("assoc") {
                class.assocs.push(self.assoc()?);
            } else if self.eat_kw("behavior") {
                if class.owned_behavior.is_some() {
                    return self.err("component already declares a behavior");
                }
                class.owned_behavior = Some(self.ident("machine name")?);
                self.expect(Tok::Semi)?;
            } else {
                return self.err("expected 'property', 'reception', 'assoc', 'behavior', or '}'");
            }
        }
        Ok(class)
    }

    fn stereotypes(&mut self) -> Result<Vec<Stereotype>, ParseError> {
        let mut out = Vec::new();
        while self.eat(&Tok::StereoOpen) {
            let name = self.ident("stereotype name")?;
            match Stereotype::from_name(&name) {
                Some(s) => out.push(s),
                None => return self.err(format!("unknown stereotype '{name}'")),
            }
            self.expect(Tok::StereoClose)?;
        }
        Ok(out)
    }

    fn property(&mut self) -> Result<PropertyDecl, ParseError> {
        let name = self.ident("property name")?;
        self.expect(Tok::Colon)?;
        let ty = self.prop_type()?;
        let range = if self.eat_kw("in") {
            self.expect(Tok::LBracket)?;
            let lo = self.num_value()?;
            self.expect(Tok::Comma)?;
            let hi = self.num_value()?;
            self.expect(Tok::RBracket)?;
            Some((lo, hi))
        } else {
            None
        };
        let unit = if self.eat_kw("unit") { Some(self.ident("unit name")?) } else { None };
        self.expect(Tok::Semi)?;
        Ok(PropertyDecl { name, ty, range, unit })
    }

    fn prop_type(&mut self) -> Result<PropertyType, ParseError> {
        let name = self.ident("type")?;
        Ok(match name.as_str() {
            "int" => PropertyType::Int,
            "real" => PropertyType::Real,
            "bool" => PropertyType::Bool,
            "str" => PropertyType::Str,
            "enum" => {
                self.expect(Tok::LParen)?;
                let mut variants = vec![self.ident("enum variant")?];
                while self.eat(&Tok::Comma) {
                    variants.push(self.ident("enum variant")?);
                }
                self.expect(Tok::RParen)?;
                PropertyType::Enum(variants)
            }
            other => return self.err(format!("unknown type '{other}'")),
        })
    }

    /// A (possibly negated) numeric literal.
    fn num_value(&mut self) -> Result<Value, ParseError> {
        let neg = self.eat(&Tok::Minus);
        match self.peek() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.i += 1;
                Ok(Value::Int(if neg { -v } else { v }))
            }
            Some(Tok::Real(v)) => {
                let v = *v;
                self.i += 1;
                Ok(Value::Real(if neg { -v } else { v }))
            }
            Some(got) => self.err(format!("expected number, found {got}")),
            None => self.err("expected number, found end of input"),
        }
    }

    fn f64_value(&mut self) -> Result<f64, ParseError> {
        match self.num_value()? {
            Value::Int(v) => Ok(v as f64),
            Value::Real(v) => Ok(v),
            _ => unreachable!("num_value only returns numbers"),
        }
    }

    fn assoc(&mut self) -> Result<AssocDecl, ParseError> {
        let role = self.ident("association role")?;
        self.expect(Tok::Arrow)?;
        let target = self.ident("target component")?;
        self.expect(Tok::LBracket)?;
        let lower = self.small_uint("lower multiplicity")?;
        self.expect(Tok::DotDot)?;
        let upper = self.small_uint("upper multiplicity")?;
        self.expect(Tok::RBracket)?;
        self.expect(Tok::Semi)?;
        Ok(AssocDecl { role, target, lower, upper })
    }

    fn small_uint(&mut self, what: &str) -> Result<u32, ParseError> {
        match self.peek() {
            Some(Tok::Int(v)) if (0..=u32::MAX as i64).contains(v) => {
                let v = *v as u32;
                self.i += 1;
                Ok(v)
            }
            Some(got) => self.err(format!("expected {what}, found {got}")),
            None => self.err(format!("expected {what}, found end of input")),
        }
    }

    /// A signal reference: a library signal name, a plain label (a user
    /// interaction reported at `info`), or `warning`/`error`/`info`
    /// followed by a label for the other categories.
    fn signal_ref(&mut self) -> Result<SignalKind, ParseError> {
        let category = match self.peek() {
            Some(Tok::Ident(word)) if SignalCategory::from_name(word).is_some() => {
                let word = word.clone();
                self.i += 1;
                SignalCategory::from_name(&word)
            }
            _ => None,
        };
        let label = self.ident("signal name")?;
        match (category, SignalKind::from_library_name(&label)) {
            (None, Some(lib)) => Ok(lib),
            (None, None) => {
                Ok(SignalKind::UserInteraction { label, category: SignalCategory::Info })
            }
            (Some(_), Some(_)) => {
                self.err(format!("'{label}' is a library signal and cannot take a category"))
            }
            (Some(category), None) => Ok(SignalKind::UserInteraction { label, category }),
        }
    }

    fn constraint(&mut self) -> Result<Constraint, ParseError> {
        let id = self.ident("constraint id")?;
        self.expect_kw("on")?;
        let context = self.ident("context component")?;
        self.expect(Tok::Colon)?;
        let expr = self.expr()?;
        self.expect(Tok::Semi)?;
        Ok(Constraint { id, context, kind: classify(expr) })
    }

    fn machine(&mut self) -> Result<BehaviorMachine, ParseError> {
        let name = self.ident("machine name")?;
        self.expect_kw("for")?;
        let owner_class = self.ident("owner component")?;
        self.expect(Tok::LBrace)?;
        let mut init_target: Option<String> = None;
        let mut states: Vec<State> = Vec::new();
        let mut transitions: Vec<Transition> = Vec::new();
        while !self.eat(&Tok::RBrace) {
            if self.eat_kw("initial") {
                if init_target.is_some() {
                    return self.err("machine already declares its initial transition");
                }
                self.expect(Tok::Arrow)?;
                init_target = Some(self.ident("state name")?);
                self.expect(Tok::Semi)?;
            } else if self.eat_kw("state") {
                states.push(self.state()?);
            } else if self.eat_kw("final") {
                let fname = self.ident("state name")?;
                self.expect(Tok::Semi)?;
                states.push(State::final_state(&fname));
            } else if self.eat_kw("transition") {
                transitions.push(self.transition()?);
            } else {
                return self.err("expected 'initial', 'state', 'final', 'transition', or '}'");
            }
        }
        let Some(target) = init_target else {
            return self.err(format!("machine '{name}' has no 'initial ->' declaration"));
        };
        let mut all_states = vec![State::initial()];
        all_states.extend(states);
        let mut all_transitions = vec![Transition {
            name: "init".into(),
            source: INITIAL_STATE.into(),
            target,
            trigger: None,
            belief: None,
        }];
        all_transitions.extend(transitions);
        Ok(BehaviorMachine { name, owner_class, states: all_states, transitions: all_transitions })
    }

    fn state(&mut self) -> Result<State, ParseError> {
        let name = self.ident("state name")?;
        let stereotypes = self.stereotypes()?;
        self.expect(Tok::LBrace)?;
        let mut state = State {
            name,
            kind: StateKind::Simple,
            stereotypes,
            entry: None,
            do_activity: None,
            exit: None,
            submachine: None,
        };
        while !self.eat(&Tok::RBrace) {
            if self.at_kw("entry") || self.at_kw("do") || self.at_kw("exit") {
                let Some(Tok::Ident(slot)) = self.bump() else { unreachable!() };
                let block = self.action_block()?;
                let field = match slot.as_str() {
                    "entry" => &mut state.entry,
                    "do" => &mut state.do_activity,
                    _ => &mut state.exit,
                };
                if field.is_some() {
                    return self.err(format!("duplicate '{slot}' block"));
                }
                *field = Some(block);
            } else if self.eat_kw("submachine") {
                if state.submachine.is_some() {
                    return self.err("state already declares a submachine");
                }
                state.submachine = Some(self.ident("machine name")?);
                self.expect(Tok::Semi)?;
            } else {
                return self.err("expected 'entry', 'do', 'exit', 'submachine', or '}'");
            }
        }
        Ok(state)
    }

    fn action_block(&mut self) -> Result<ActionBlock, ParseError> {
        self.expect(Tok::LBrace)?;
        let mut statements = Vec::new();
        while !self.eat(&Tok::RBrace) {
            statements.push(self.statement()?);
        }
        Ok(ActionBlock { statements })
    }

    fn statement(&mut self) -> Result<Statement, ParseError> {
        if self.eat_kw("set") {
            let path = self.path()?;
            self.expect(Tok::Eq)?;
            let expr = self.expr()?;
            self.expect(Tok::Semi)?;
            Ok(Statement::Set { path, expr })
        } else if self.eat_kw("rand") {
            let path = self.path()?;
            self.expect_kw("in")?;
            self.expect(Tok::LBracket)?;
            let lo = self.num_value()?;
            self.expect(Tok::Comma)?;
            let hi = self.num_value()?;
            self.expect(Tok::RBracket)?;
            self.expect(Tok::Semi)?;
            Ok(Statement::Rand { path, lo, hi })
        } else if self.eat_kw("emit") {
            let sig = self.signal_ref()?;
            self.expect(Tok::Semi)?;
            Ok(Statement::Emit(sig))
        } else if self.eat_kw("log") {
            match self.peek() {
                Some(Tok::Str(s)) => {
                    let s = s.clone();
                    self.i += 1;
                    self.expect(Tok::Semi)?;
                    Ok(Statement::Log(s))
                }
                _ => self.err("expected string literal after 'log'"),
            }
        } else if self.eat_kw("wait") {
            match self.peek() {
                Some(Tok::Int(ms)) if *ms >= 0 => {
                    let ms = *ms as u64;
                    self.i += 1;
                    self.expect(Tok::Semi)?;
                    Ok(Statement::Wait(ms))
                }
                _ => self.err("expected a non-negative duration after 'wait'"),
            }
        } else {
            self.err("expected 'set', 'rand', 'emit', 'log', or 'wait'")
        }
    }

    fn path(&mut self) -> Result<Vec<String>, ParseError> {
        let mut segs = vec![self.ident("property path")?];
        while self.eat(&Tok::Dot) {
            segs.push(self.ident("path segment")?);
        }
        Ok(segs)
    }

    fn transition(&mut self) -> Result<Transition, ParseError> {
        let name = self.ident("transition name")?;
        self.expect(Tok::Colon)?;
        let source = self.ident("source state")?;
        self.expect(Tok::Arrow)?;
        let target = self.ident("target state")?;
        let trigger = if self.eat_kw("on") { Some(self.signal_ref()?) } else { None };
        let belief = if self.eat_kw("belief") {
            let degree = self.f64_value()?;
            let dist = if self.eat_kw("dist") { Some(self.dist_ref()?) } else { None };
            Some(BeliefAnnotation { degree, dist })
        } else {
            None
        };
        self.expect(Tok::Semi)?;
        Ok(Transition { name, source, target, trigger, belief })
    }

    fn dist_ref(&mut self) -> Result<DistributionSpec, ParseError> {
        let pos = self.pos();
        let kind = self.ident("distribution kind")?;
        self.expect(Tok::LParen)?;
        let mut args = vec![self.f64_value()?];
        while self.eat(&Tok::Comma) {
            args.push(self.f64_value()?);
        }
        self.expect(Tok::RParen)?;
        DistributionSpec::from_parts(&kind, &args)
            .map_err(|e| ParseError { line: pos.line, col: pos.col, message: e.to_string() })
    }

    // ----- expressions ------------------------------------------------

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.eat_kw("or") {
            let rhs = self.and_expr()?;
            lhs = Expr::bin(BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.cmp_expr()?;
        while self.eat_kw("and") {
            let rhs = self.cmp_expr()?;
            lhs = Expr::bin(BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    /// Comparisons do not chain: `a < b < c` is a parse error.
    fn cmp_expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.add_expr()?;
        let op = match self.peek() {
            Some(Tok::Eq) => Some(BinOp::Eq),
            Some(Tok::Ne) => Some(BinOp::Ne),
            Some(Tok::Lt) => Some(BinOp::Lt),
            Some(Tok::Le) => Some(BinOp::Le),
            Some(Tok::Gt) => Some(BinOp::Gt),
            Some(Tok::Ge) => Some(BinOp::Ge),
            _ => None,
        };
        match op {
            Some(op) => {
                self.i += 1;
                let rhs = self.add_expr()?;
                Ok(Expr::bin(op, lhs, rhs))
            }
            None => Ok(lhs),
        }
    }

    fn add_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            self.i += 1;
            let rhs = self.mul_expr()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn mul_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary_expr()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => break,
            };
            self.i += 1;
            let rhs = self.unary_expr()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary_expr(&mut self) -> Result<Expr, ParseError> {
        if self.eat_kw("not") {
            Ok(Expr::Unary(UnOp::Not, Box::new(self.unary_expr()?)))
        } else if self.eat(&Tok::Minus) {
            let inner = self.unary_expr()?;
            // Fold negation into literals so `-5` classifies as a literal.
            Ok(match inner {
                Expr::Lit(Value::Int(v)) => Expr::Lit(Value::Int(-v)),
                Expr::Lit(Value::Real(v)) => Expr::Lit(Value::Real(-v)),
                other => Expr::Unary(UnOp::Neg, Box::new(other)),
            })
        } else {
            self.primary()
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.i += 1;
                Ok(Expr::Lit(Value::Int(v)))
            }
            Some(Tok::Real(v)) => {
                let v = *v;
                self.i += 1;
                Ok(Expr::Lit(Value::Real(v)))
            }
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.i += 1;
                Ok(Expr::Lit(Value::Str(s)))
            }
            Some(Tok::LParen) => {
                self.i += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Ident(_)) => self.primary_ident(),
            Some(got) => self.err(format!("expected expression, found {got}")),
            None => self.err("expected expression, found end of input"),
        }
    }

    fn primary_ident(&mut self) -> Result<Expr, ParseError> {
        if self.eat_kw("true") {
            return Ok(Expr::Lit(Value::Bool(true)));
        }
        if self.eat_kw("false") {
            return Ok(Expr::Lit(Value::Bool(false)));
        }
        let called = self.peek2() == Some(&Tok::LParen);
        if self.at_kw("size") && called {
            self.i += 2;
            let role = self.ident("association role")?;
            self.expect(Tok::RParen)?;
            return Ok(Expr::Size(role));
        }
        if self.at_kw("param") && called {
            self.i += 2;
            let name = self.ident("parameter name")?;
            self.expect(Tok::RParen)?;
            return Ok(Expr::Param(name));
        }
        if self.at_kw("forAllPairs") && called {
            self.i += 2;
            let role = self.ident("association role")?;
            self.expect(Tok::Comma)?;
            let v1 = self.ident("variable")?;
            self.expect(Tok::Comma)?;
            let v2 = self.ident("variable")?;
            self.expect(Tok::Pipe)?;
            self.bound.push(v1.clone());
            self.bound.push(v2.clone());
            let body = self.expr();
            self.bound.pop();
            self.bound.pop();
            let body = body?;
            self.expect(Tok::RParen)?;
            return Ok(Expr::ForAllPairs { role, v1, v2, body: Box::new(body) });
        }
        let segs = self.path()?;
        if self.bound.contains(&segs[0]) {
            if segs.len() < 2 {
                return self.err(format!("expected '.' after variable '{}'", segs[0]));
            }
            let mut it = segs.into_iter();
            let var = it.next().expect("checked length");
            Ok(Expr::Var(var, it.collect()))
        } else {
            Ok(Expr::Path(segs))
        }
    }
}
