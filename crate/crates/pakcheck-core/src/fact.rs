//! The fact language: conditions evaluable at points (run, time) of a
//! tree, and their liftings to facts about runs.
//!
//! Grammar (ASCII keywords, precedence `not` < `and` < `or` < `implies`,
//! parentheses allowed):
//!
//! ```text
//! fact    := "ever" "(" fact ")" | orexpr ;
//! orexpr  := andexpr { "or" andexpr } | andexpr "implies" andexpr ;
//! andexpr := unary { "and" unary } ;
//! unary   := "not" unary | atom | "(" fact ")" ;
//! atom    := "performs" "(" id "," id ")" | "var" "(" id "," id ")" "==" literal
//!          | "envvar" "(" id ")" "==" literal | "time" "==" int | "true" | "false" ;
//! literal := int | "true" | "false" | id ;
//! ```
//!
//! `performs(i, a)` at (r, t) reads the history of the successor state
//! r_e(t+1); at the final state of a run it is false by definition.
//! `ever(φ)` holds at every point of a run iff φ holds at some point of
//! it, and may not be nested inside another `ever`.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::model::{
    measure, properness, LocalState, ModelError, PpsTree, RunId, RunSet, Value, ENV,
};
use crate::rational::Rat;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Fact {
    True,
    False,
    Performs { agent: String, action: String },
    VarEq { agent: String, name: String, value: Value },
    EnvVarEq { name: String, value: Value },
    TimeEq(u32),
    Not(Box<Fact>),
    And(Box<Fact>, Box<Fact>),
    Or(Box<Fact>, Box<Fact>),
    Implies(Box<Fact>, Box<Fact>),
    Ever(Box<Fact>),
}

impl Fact {
    pub fn performs(agent: &str, action: &str) -> Fact {
        Fact::Performs {
            agent: agent.to_string(),
            action: action.to_string(),
        }
    }

    pub fn var_eq(agent: &str, name: &str, value: Value) -> Fact {
        Fact::VarEq {
            agent: agent.to_string(),
            name: name.to_string(),
            value,
        }
    }

    pub fn not(self) -> Fact {
        Fact::Not(Box::new(self))
    }

    pub fn and(self, other: Fact) -> Fact {
        Fact::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Fact) -> Fact {
        Fact::Or(Box::new(self), Box::new(other))
    }

    pub fn ever(self) -> Fact {
        Fact::Ever(Box::new(self))
    }

    fn precedence(&self) -> u8 {
        match self {
            Fact::Implies(_, _) => 0,
            Fact::Or(_, _) => 1,
            Fact::And(_, _) => 2,
            Fact::Not(_) => 3,
            _ => 4,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, needed: u8) -> fmt::Result {
        let prec = self.precedence();
        if prec < needed {
            write!(f, "(")?;
            self.fmt_prec(f, 0)?;
            return write!(f, ")");
        }
        match self {
            Fact::True => write!(f, "true"),
            Fact::False => write!(f, "false"),
            Fact::Performs { agent, action } => write!(f, "performs({agent}, {action})"),
            Fact::VarEq { agent, name, value } => {
                write!(f, "var({agent}, {name}) == {}", literal(value))
            }
            Fact::EnvVarEq { name, value } => write!(f, "envvar({name}) == {}", literal(value)),
            Fact::TimeEq(t) => write!(f, "time == {t}"),
            Fact::Not(x) => {
                write!(f, "not ")?;
                x.fmt_prec(f, 3)
            }
            Fact::And(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, " and ")?;
                b.fmt_prec(f, 3)
            }
            Fact::Or(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " or ")?;
                b.fmt_prec(f, 2)
            }
            Fact::Implies(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " implies ")?;
                b.fmt_prec(f, 0)
            }
            Fact::Ever(x) => {
                write!(f, "ever(")?;
                x.fmt_prec(f, 0)?;
                write!(f, ")")
            }
        }
    }
}

fn literal(value: &Value) -> String {
    value.to_string()
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[derive(Debug, Error)]
pub enum FactError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("unknown action `{action}` for `{agent}`")]
    UnknownAction { agent: String, action: String },
    #[error("unknown variable `{name}` for `{agent}`")]
    UnknownVar { agent: String, name: String },
    #[error("unknown environment variable `{0}`")]
    UnknownEnvVar(String),
    #[error("ever() may not be nested inside another ever()")]
    NestedEver,
    #[error("fact is not time-invariant within every run, so it is not a fact about runs")]
    NotARunFact,
    #[error("local state {0} does not occur in the tree")]
    StateNotInTree(LocalState),
    #[error("{fact} @ {agent}.{action} requires a proper action: {detail}")]
    NotProper {
        fact: String,
        agent: String,
        action: String,
        detail: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

// ---------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    LParen,
    RParen,
    Comma,
    EqEq,
}

struct Lexer {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

fn lex(text: &str) -> Result<Lexer, FactError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            ',' => {
                toks.push((Tok::Comma, i));
                i += 1;
            }
            '=' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    toks.push((Tok::EqEq, i));
                    i += 2;
                } else {
                    return Err(FactError::Syntax {
                        pos: i,
                        msg: "expected `==`".to_string(),
                    });
                }
            }
            '-' | '0'..='9' => {
                let start = i;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let s = &text[start..i];
                let n = s.parse().map_err(|_| FactError::Syntax {
                    pos: start,
                    msg: format!("bad integer `{s}`"),
                })?;
                toks.push((Tok::Int(n), start));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(text[start..i].to_string()), start));
            }
            _ => {
                return Err(FactError::Syntax {
                    pos: i,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    Ok(Lexer {
        toks,
        pos: 0,
        end: text.len(),
    })
}

impl Lexer {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn err(&self, msg: impl Into<String>) -> FactError {
        FactError::Syntax {
            pos: self.here(),
            msg: msg.into(),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), FactError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, FactError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }
}

/// Parses the fact grammar; identifiers are resolved against a concrete
/// tree later, at bind time.
pub fn parse_fact(text: &str) -> Result<Fact, FactError> {
    let mut lx = lex(text)?;
    let fact = parse_implies(&mut lx)?;
    if lx.peek().is_some() {
        return Err(lx.err("trailing input"));
    }
    Ok(fact)
}

fn parse_implies(lx: &mut Lexer) -> Result<Fact, FactError> {
    let lhs = parse_or(lx)?;
    if lx.keyword("implies") {
        let rhs = parse_implies(lx)?;
        return Ok(Fact::Implies(Box::new(lhs), Box::new(rhs)));
    }
    Ok(lhs)
}

fn parse_or(lx: &mut Lexer) -> Result<Fact, FactError> {
    let mut lhs = parse_and(lx)?;
    while lx.keyword("or") {
        let rhs = parse_and(lx)?;
        lhs = Fact::Or(Box::new(lhs), Box::new(rhs));
    }
    Ok(lhs)
}

fn parse_and(lx: &mut Lexer) -> Result<Fact, FactError> {
    let mut lhs = parse_unary(lx)?;
    while lx.keyword("and") {
        let rhs = parse_unary(lx)?;
        lhs = Fact::And(Box::new(lhs), Box::new(rhs));
    }
    Ok(lhs)
}

fn parse_literal(lx: &mut Lexer) -> Result<Value, FactError> {
    match lx.next() {
        Some(Tok::Int(n)) => Ok(Value::Int(n)),
        Some(Tok::Ident(s)) if s == "true" => Ok(Value::Bool(true)),
        Some(Tok::Ident(s)) if s == "false" => Ok(Value::Bool(false)),
        Some(Tok::Ident(s)) => Ok(Value::Sym(s)),
        _ => {
            lx.pos -= 1;
            Err(lx.err("expected a literal"))
        }
    }
}

fn parse_unary(lx: &mut Lexer) -> Result<Fact, FactError> {
    if lx.keyword("not") {
        return Ok(Fact::Not(Box::new(parse_unary(lx)?)));
    }
    if lx.keyword("ever") {
        lx.expect(Tok::LParen, "`(` after ever")?;
        let inner = parse_implies(lx)?;
        lx.expect(Tok::RParen, "`)`")?;
        return Ok(Fact::Ever(Box::new(inner)));
    }
    if lx.keyword("performs") {
        lx.expect(Tok::LParen, "`(`")?;
        let agent = lx.ident("an agent id")?;
        lx.expect(Tok::Comma, "`,`")?;
        let action = lx.ident("an action id")?;
        lx.expect(Tok::RParen, "`)`")?;
        return Ok(Fact::Performs { agent, action });
    }
    if lx.keyword("var") {
        lx.expect(Tok::LParen, "`(`")?;
        let agent = lx.ident("an agent id")?;
        lx.expect(Tok::Comma, "`,`")?;
        let name = lx.ident("a variable name")?;
        lx.expect(Tok::RParen, "`)`")?;
        lx.expect(Tok::EqEq, "`==`")?;
        let value = parse_literal(lx)?;
        return Ok(Fact::VarEq { agent, name, value });
    }
    if lx.keyword("envvar") {
        lx.expect(Tok::LParen, "`(`")?;
        let name = lx.ident("a variable name")?;
        lx.expect(Tok::RParen, "`)`")?;
        lx.expect(Tok::EqEq, "`==`")?;
        let value = parse_literal(lx)?;
        return Ok(Fact::EnvVarEq { name, value });
    }
    if lx.keyword("time") {
        lx.expect(Tok::EqEq, "`==`")?;
        match lx.next() {
            Some(Tok::Int(n)) if n >= 0 => return Ok(Fact::TimeEq(n as u32)),
            _ => {
                lx.pos -= 1;
                return Err(lx.err("expected a non-negative time"));
            }
        }
    }
    if lx.keyword("true") {
        return Ok(Fact::True);
    }
    if lx.keyword("false") {
        return Ok(Fact::False);
    }
    if lx.peek() == Some(&Tok::LParen) {
        lx.next();
        let inner = parse_implies(lx)?;
        lx.expect(Tok::RParen, "`)`")?;
        return Ok(inner);
    }
    Err(lx.err("expected an atom"))
}

// ---------------------------------------------------------------------
// Binding and evaluation
// ---------------------------------------------------------------------

/// Checks every atom against the tree's declared agents, actions, and
/// occurring variables, and rejects nested `ever`.
pub fn bind(tree: &PpsTree, fact: &Fact) -> Result<(), FactError> {
    let mut env_vars: BTreeSet<&str> = BTreeSet::new();
    let mut agent_vars: BTreeSet<(&str, &str)> = BTreeSet::new();
    for id in tree.node_ids().skip(1) {
        let state = tree.node(id).state.as_ref().expect("non-root");
        env_vars.extend(state.env.vars.keys().map(|s| s.as_str()));
        for (agent, local) in &state.locals {
            agent_vars.extend(local.vars.keys().map(|n| (agent.as_str(), n.as_str())));
        }
    }
    bind_rec(tree, fact, false, &env_vars, &agent_vars)
}

fn bind_rec(
    tree: &PpsTree,
    fact: &Fact,
    in_ever: bool,
    env_vars: &BTreeSet<&str>,
    agent_vars: &BTreeSet<(&str, &str)>,
) -> Result<(), FactError> {
    match fact {
        Fact::True | Fact::False | Fact::TimeEq(_) => Ok(()),
        Fact::Performs { agent, action } => {
            if !tree.has_agent(agent) && agent != ENV {
                return Err(FactError::UnknownAgent(agent.clone()));
            }
            if !tree.has_action(agent, action) {
                return Err(FactError::UnknownAction {
                    agent: agent.clone(),
                    action: action.clone(),
                });
            }
            Ok(())
        }
        Fact::VarEq { agent, name, .. } => {
            if !tree.has_agent(agent) {
                return Err(FactError::UnknownAgent(agent.clone()));
            }
            if !agent_vars.contains(&(agent.as_str(), name.as_str())) {
                return Err(FactError::UnknownVar {
                    agent: agent.clone(),
                    name: name.clone(),
                });
            }
            Ok(())
        }
        Fact::EnvVarEq { name, .. } => {
            if !env_vars.contains(name.as_str()) {
                return Err(FactError::UnknownEnvVar(name.clone()));
            }
            Ok(())
        }
        Fact::Not(x) => bind_rec(tree, x, in_ever, env_vars, agent_vars),
        Fact::And(a, b) | Fact::Or(a, b) | Fact::Implies(a, b) => {
            bind_rec(tree, a, in_ever, env_vars, agent_vars)?;
            bind_rec(tree, b, in_ever, env_vars, agent_vars)
        }
        Fact::Ever(x) => {
            if in_ever {
                return Err(FactError::NestedEver);
            }
            bind_rec(tree, x, true, env_vars, agent_vars)
        }
    }
}

/// Truth values of a fact at every point, indexed `[run][time]`.
pub type PointTable = Vec<Vec<bool>>;

/// Evaluates a fact at every point of the tree.
pub fn fact_table(tree: &PpsTree, fact: &Fact) -> Result<PointTable, FactError> {
    bind(tree, fact)?;
    let table = tree.run_table()?;
    Ok(eval_table(tree, fact, table.len()))
}

fn eval_table(tree: &PpsTree, fact: &Fact, run_count: usize) -> PointTable {
    let horizon = tree.horizon().expect("valid tree") as usize;
    let width = horizon + 1;
    let mut out = vec![vec![false; width]; run_count];
    match fact {
        Fact::True => {
            for row in &mut out {
                row.fill(true);
            }
        }
        Fact::False => {}
        Fact::TimeEq(t0) => {
            let t0 = *t0 as usize;
            if t0 < width {
                for row in &mut out {
                    row[t0] = true;
                }
            }
        }
        Fact::Performs { agent, action } => {
            let occ = tree
                .action_occurrences(agent, action)
                .expect("bound atoms reference known actions");
            for (run, times) in occ.iter().enumerate() {
                for &t in times {
                    out[run][t as usize] = true;
                }
            }
        }
        Fact::VarEq { agent, name, value } => {
            for (run, row) in out.iter_mut().enumerate() {
                for (t, cell) in row.iter_mut().enumerate() {
                    let local = tree.local(run, t as u32, agent).expect("point exists");
                    *cell = local.vars.get(name) == Some(value);
                }
            }
        }
        Fact::EnvVarEq { name, value } => {
            for (run, row) in out.iter_mut().enumerate() {
                for (t, cell) in row.iter_mut().enumerate() {
                    let state = tree.global(run, t as u32).expect("point exists");
                    *cell = state.env.vars.get(name) == Some(value);
                }
            }
        }
        Fact::Not(x) => {
            out = eval_table(tree, x, run_count);
            for row in &mut out {
                for cell in row.iter_mut() {
                    *cell = !*cell;
                }
            }
        }
        Fact::And(a, b) | Fact::Or(a, b) | Fact::Implies(a, b) => {
            let ta = eval_table(tree, a, run_count);
            let tb = eval_table(tree, b, run_count);
            for run in 0..run_count {
                for t in 0..width {
                    out[run][t] = match fact {
                        Fact::And(_, _) => ta[run][t] && tb[run][t],
                        Fact::Or(_, _) => ta[run][t] || tb[run][t],
                        _ => !ta[run][t] || tb[run][t],
                    };
                }
            }
        }
        Fact::Ever(x) => {
            let inner = eval_table(tree, x, run_count);
            for (run, row) in out.iter_mut().enumerate() {
                let any = inner[run].iter().any(|b| *b);
                row.fill(any);
            }
        }
    }
    out
}

/// Truth of a fact at one point.
pub fn holds_at(tree: &PpsTree, fact: &Fact, run: RunId, t: u32) -> Result<bool, FactError> {
    bind(tree, fact)?;
    if !tree.is_point(run, t)? {
        return Err(FactError::Model(ModelError::NotAPoint { run, time: t }));
    }
    // Tree sizes here are tiny; evaluating the whole table keeps the
    // semantics in one place.
    Ok(eval_table(tree, fact, tree.run_table()?.len())[run][t as usize])
}

// ---------------------------------------------------------------------
// Facts about runs
// ---------------------------------------------------------------------

/// How a run fact was formed; kept for rendering witnesses and reports.
#[derive(Debug, Clone, PartialEq)]
pub enum RunFactSource {
    /// A fact checked to be time-invariant within each run.
    Invariant(Fact),
    /// φ@α: φ holds at the unique point where the agent performs the
    /// action.
    AtAction {
        fact: Fact,
        agent: String,
        action: String,
    },
    /// φ@ℓ: φ holds at the unique point where the local state occurs.
    AtState { fact: Fact, state: LocalState },
}

impl fmt::Display for RunFactSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunFactSource::Invariant(fact) => write!(f, "{fact}"),
            RunFactSource::AtAction {
                fact,
                agent,
                action,
            } => write!(f, "[{fact}] @ {agent}.{action}"),
            RunFactSource::AtState { fact, state } => write!(f, "[{fact}] @ {state}"),
        }
    }
}

/// A fact about runs, realized as the exact set of runs satisfying it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFact {
    pub source: RunFactSource,
    pub runs: RunSet,
}

/// The run set of a run fact.
pub fn runs_satisfying(_tree: &PpsTree, rf: &RunFact) -> RunSet {
    rf.runs.clone()
}

/// Exhaustively decides whether the fact's truth value is constant over
/// time within every run.
pub fn is_run_fact(tree: &PpsTree, fact: &Fact) -> Result<bool, FactError> {
    let table = fact_table(tree, fact)?;
    Ok(table.iter().all(|row| row.iter().all(|&b| b == row[0])))
}

/// Exhaustively decides whether truth at (r, t) depends only on the
/// prefix up to t: at every node, all runs through it agree.
pub fn is_past_based(tree: &PpsTree, fact: &Fact) -> Result<bool, FactError> {
    let table = fact_table(tree, fact)?;
    for id in tree.node_ids().skip(1) {
        let d = tree.depth(id)? as usize;
        let range = tree.runs_through(id)?;
        let mut vals = range.map(|r| table[r][d]);
        if let Some(first) = vals.next() {
            if vals.any(|v| v != first) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Lifts a time-invariant fact to a run fact; `ever(φ)` is invariant by
/// construction, other facts are checked exhaustively.
pub fn run_fact_from(tree: &PpsTree, fact: &Fact) -> Result<RunFact, FactError> {
    let table = fact_table(tree, fact)?;
    if !table.iter().all(|row| row.iter().all(|&b| b == row[0])) {
        return Err(FactError::NotARunFact);
    }
    let runs = table
        .iter()
        .enumerate()
        .filter(|(_, row)| row.first().copied().unwrap_or(false))
        .map(|(r, _)| r)
        .collect();
    Ok(RunFact {
        source: RunFactSource::Invariant(fact.clone()),
        runs,
    })
}

/// R(α): the runs in which the agent ever performs the action.
pub fn r_action(tree: &PpsTree, agent: &str, action: &str) -> Result<RunFact, FactError> {
    run_fact_from(tree, &Fact::performs(agent, action).ever())
}

/// R(ℓ): the runs in which the local state occurs.
pub fn r_state(tree: &PpsTree, state: &LocalState) -> Result<RunFact, FactError> {
    let mut runs = RunSet::new();
    for &(node, _) in tree.occurrences(state)? {
        runs.extend(tree.runs_through(node)?);
    }
    Ok(RunFact {
        source: RunFactSource::AtState {
            fact: Fact::True,
            state: state.clone(),
        },
        runs,
    })
}

/// φ@α for a proper action: the runs where α occurs and φ holds at the
/// occurrence point.
pub fn at_action(
    tree: &PpsTree,
    fact: &Fact,
    agent: &str,
    action: &str,
) -> Result<RunFact, FactError> {
    let prop = properness(tree, agent, action)?;
    if !prop.proper {
        return Err(FactError::NotProper {
            fact: fact.to_string(),
            agent: agent.to_string(),
            action: action.to_string(),
            detail: prop.detail,
        });
    }
    let table = fact_table(tree, fact)?;
    let occ = tree.action_occurrences(agent, action)?;
    let runs = occ
        .iter()
        .enumerate()
        .filter(|(run, times)| times.first().is_some_and(|&t| table[*run][t as usize]))
        .map(|(run, _)| run)
        .collect();
    Ok(RunFact {
        source: RunFactSource::AtAction {
            fact: fact.clone(),
            agent: agent.to_string(),
            action: action.to_string(),
        },
        runs,
    })
}

/// φ@ℓ for a local state occurring in the tree: the runs where ℓ occurs
/// and φ holds at the occurrence point (unique, since ℓ carries its
/// time).
pub fn at_state(tree: &PpsTree, fact: &Fact, state: &LocalState) -> Result<RunFact, FactError> {
    let occ = tree.occurrences(state)?;
    if occ.is_empty() {
        return Err(FactError::StateNotInTree(state.clone()));
    }
    let table = fact_table(tree, fact)?;
    let mut runs = RunSet::new();
    for &(node, t) in occ {
        for run in tree.runs_through(node)? {
            if table[run][t as usize] {
                runs.insert(run);
            }
        }
    }
    Ok(RunFact {
        source: RunFactSource::AtState {
            fact: fact.clone(),
            state: state.clone(),
        },
        runs,
    })
}

/// Exact measure of a run fact.
pub fn measure_of(tree: &PpsTree, rf: &RunFact) -> Result<Rat, FactError> {
    Ok(measure(tree, &rf.runs)?)
}
