//! Token vocabulary, preorder expression grammar and batched evaluation.
//!
//! Expressions are written as preorder traversals of operator trees. A
//! traversal is complete once the open-slot counter, which starts at 1 and is
//! updated with `count + arity - 1` for every token, reaches zero.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::reward::RewardLevel;

/// Largest variable index the vocabulary can spell (`x1`..`x9`).
pub const MAX_VOCAB_VARS: u8 = 9;

/// Default number of input variables.
pub const DEFAULT_MAX_VARS: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnaryOp {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 4] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div];

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 5] = [UnaryOp::Sin, UnaryOp::Cos, UnaryOp::Exp, UnaryOp::Log, UnaryOp::Sqrt];

    pub fn symbol(self) -> &'static str {
        match self {
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
        }
    }

    pub fn is_trig(self) -> bool {
        matches!(self, UnaryOp::Sin | UnaryOp::Cos)
    }

    /// Operators whose argument must stay non-negative.
    pub fn needs_nonnegative_arg(self) -> bool {
        matches!(self, UnaryOp::Log | UnaryOp::Sqrt)
    }

    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            UnaryOp::Sin => a.sin(),
            UnaryOp::Cos => a.cos(),
            UnaryOp::Exp => a.exp(),
            UnaryOp::Log => a.ln(),
            UnaryOp::Sqrt => a.sqrt(),
        }
    }
}

/// Atom of expression and history sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Binary(BinaryOp),
    Unary(UnaryOp),
    /// Input variable, 1-based (`x1` is `Var(1)`).
    Var(u8),
    /// Constant placeholder `C`.
    Const,
    Reward(RewardLevel),
    Bos,
    Pad,
}

impl Token {
    /// Number of operands the token takes; reward and control tokens have none.
    pub fn arity(self) -> Result<usize, ExprError> {
        match self {
            Token::Binary(_) => Ok(2),
            Token::Unary(_) => Ok(1),
            Token::Var(_) | Token::Const => Ok(0),
            other => Err(ExprError::InvalidTokenKind(other)),
        }
    }

    pub fn is_expression(self) -> bool {
        matches!(self, Token::Binary(_) | Token::Unary(_) | Token::Var(_) | Token::Const)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Token::Var(_) | Token::Const)
    }

    pub fn is_trig(self) -> bool {
        matches!(self, Token::Unary(op) if op.is_trig())
    }

    pub fn reward_level(self) -> Option<RewardLevel> {
        match self {
            Token::Reward(level) => Some(level),
            _ => None,
        }
    }

    /// Every expression token, in canonical vocabulary order, with variables up to `max_vars`.
    pub fn expression_alphabet(max_vars: u8) -> Vec<Token> {
        let mut out: Vec<Token> = BinaryOp::ALL.iter().map(|&op| Token::Binary(op)).collect();
        out.extend(UnaryOp::ALL.iter().map(|&op| Token::Unary(op)));
        out.push(Token::Const);
        out.extend((1..=max_vars.min(MAX_VOCAB_VARS)).map(Token::Var));
        out
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Binary(op) => f.write_str(op.symbol()),
            Token::Unary(op) => f.write_str(op.symbol()),
            Token::Var(i) => write!(f, "x{i}"),
            Token::Const => f.write_str("C"),
            Token::Reward(level) => write!(f, "{level}"),
            Token::Bos => f.write_str("<bos>"),
            Token::Pad => f.write_str("<pad>"),
        }
    }
}

impl FromStr for Token {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let tok = match s {
            "+" => Token::Binary(BinaryOp::Add),
            "-" => Token::Binary(BinaryOp::Sub),
            "*" => Token::Binary(BinaryOp::Mul),
            "/" => Token::Binary(BinaryOp::Div),
            "sin" => Token::Unary(UnaryOp::Sin),
            "cos" => Token::Unary(UnaryOp::Cos),
            "exp" => Token::Unary(UnaryOp::Exp),
            "log" => Token::Unary(UnaryOp::Log),
            "sqrt" => Token::Unary(UnaryOp::Sqrt),
            "C" => Token::Const,
            "<bos>" => Token::Bos,
            "<pad>" => Token::Pad,
            _ => {
                if let Some(idx) = s.strip_prefix('x') {
                    match idx.parse::<u8>() {
                        Ok(i) if (1..=MAX_VOCAB_VARS).contains(&i) && idx.len() == 1 => Token::Var(i),
                        _ => return Err(ExprError::UnknownToken(s.to_string())),
                    }
                } else if let Ok(level) = s.parse::<RewardLevel>() {
                    Token::Reward(level)
                } else {
                    return Err(ExprError::UnknownToken(s.to_string()));
                }
            }
        };
        Ok(tok)
    }
}

impl Serialize for Token {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parse a whitespace- or slice-separated list of canonical token spellings.
pub fn parse_tokens<S: AsRef<str>>(items: &[S]) -> Result<Vec<Token>, ExprError> {
    items.iter().map(|s| s.as_ref().parse()).collect()
}

pub fn render_tokens(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("token `{0}` is not an expression token")]
    InvalidTokenKind(Token),
    #[error("expression already complete before position {0}")]
    TrailingTokens(usize),
    #[error("malformed expression: {0}")]
    Malformed(String),
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Open-slot counter after consuming `prefix`, starting from 1.
///
/// Zero means the prefix is a complete expression.
pub fn remaining_slots(prefix: &[Token]) -> Result<usize, ExprError> {
    let mut count: usize = 1;
    for (pos, &tok) in prefix.iter().enumerate() {
        if count == 0 {
            return Err(ExprError::TrailingTokens(pos));
        }
        count = count + tok.arity()? - 1;
    }
    Ok(count)
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    token: Token,
    arity: u8,
    started: u8,
    last_child: Option<Token>,
}

/// Size limits applied while a traversal is grown token by token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrowthLimits {
    pub max_len: usize,
    /// Depth of the deepest allowed node; the root has depth 1.
    pub max_depth: Option<usize>,
}

impl GrowthLimits {
    pub fn len(max_len: usize) -> Self {
        Self { max_len, max_depth: None }
    }
}

/// Incremental view of a partial preorder traversal: open slots, the chain of
/// unfinished ancestors of the next slot, and the structural constraints.
#[derive(Debug, Clone, Default)]
pub struct GenState {
    tokens: Vec<Token>,
    stack: Vec<Frame>,
}

impl GenState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_prefix(prefix: &[Token]) -> Result<Self, ExprError> {
        let mut state = Self::new();
        for &tok in prefix {
            state.push(tok)?;
        }
        Ok(state)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        !self.tokens.is_empty() && self.stack.is_empty()
    }

    /// Slots still to be filled (the preorder counter).
    pub fn open_slots(&self) -> usize {
        if self.tokens.is_empty() {
            return 1;
        }
        self.stack.iter().map(|f| (f.arity - f.started) as usize).sum()
    }

    /// Depth of the next slot to be filled.
    pub fn slot_depth(&self) -> usize {
        self.stack.len() + 1
    }

    /// Parent of the next slot.
    pub fn parent(&self) -> Option<Token> {
        self.stack.last().map(|f| f.token)
    }

    /// Root token of the previously completed sibling of the next slot.
    pub fn sibling(&self) -> Option<Token> {
        self.stack.last().and_then(|f| f.last_child)
    }

    pub fn ancestors(&self) -> impl Iterator<Item = Token> + '_ {
        self.stack.iter().map(|f| f.token)
    }

    /// Structural constraints: no trig under trig, no trig anywhere inside a
    /// log/sqrt argument, and no bare subtraction directly under log/sqrt.
    pub fn allows(&self, candidate: Token) -> bool {
        if !candidate.is_expression() || self.is_complete() {
            return false;
        }
        if candidate.is_trig() {
            for anc in self.ancestors() {
                match anc {
                    Token::Unary(op) if op.is_trig() || op.needs_nonnegative_arg() => return false,
                    _ => {}
                }
            }
        }
        if candidate == Token::Binary(BinaryOp::Sub) {
            if let Some(Token::Unary(op)) = self.parent() {
                if op.needs_nonnegative_arg() {
                    return false;
                }
            }
        }
        true
    }

    /// `allows` plus the length and depth budget: after the candidate, every
    /// open slot must still be fillable with a leaf.
    pub fn allows_within(&self, candidate: Token, limits: GrowthLimits) -> bool {
        if !self.allows(candidate) {
            return false;
        }
        let arity = match candidate.arity() {
            Ok(a) => a,
            Err(_) => return false,
        };
        let new_len = self.tokens.len() + 1;
        let new_open = self.open_slots() + arity - 1;
        if new_len + new_open > limits.max_len {
            return false;
        }
        if let Some(max_depth) = limits.max_depth {
            if arity > 0 && self.slot_depth() >= max_depth {
                return false;
            }
        }
        true
    }

    pub fn push(&mut self, tok: Token) -> Result<(), ExprError> {
        let arity = tok.arity()?;
        if self.is_complete() {
            return Err(ExprError::TrailingTokens(self.tokens.len()));
        }
        if let Some(top) = self.stack.last_mut() {
            top.started += 1;
        }
        self.tokens.push(tok);
        if arity > 0 {
            self.stack.push(Frame { token: tok, arity: arity as u8, started: 0, last_child: None });
            return Ok(());
        }
        // A leaf closes every frame whose last child it completed.
        let mut finished = tok;
        while let Some(top) = self.stack.last_mut() {
            top.last_child = Some(finished);
            if top.started < top.arity {
                break;
            }
            finished = top.token;
            self.stack.pop();
        }
        Ok(())
    }
}

/// `true` iff `candidate` may fill the next slot of the incomplete `prefix`.
pub fn constraint_check(prefix: &[Token], candidate: Token) -> bool {
    match GenState::from_prefix(prefix) {
        Ok(state) => state.allows(candidate),
        Err(_) => false,
    }
}

/// Validate a full traversal: counter discipline and the constraint at every step.
pub fn validate_preorder(tokens: &[Token]) -> Result<(), ExprError> {
    let mut state = GenState::new();
    for (pos, &tok) in tokens.iter().enumerate() {
        if state.is_complete() {
            return Err(ExprError::TrailingTokens(pos));
        }
        if !state.allows(tok) {
            return Err(ExprError::Malformed(format!("token `{tok}` violates a structural constraint at position {pos}")));
        }
        state.push(tok)?;
    }
    if !state.is_complete() {
        return Err(ExprError::Malformed("incomplete expression".into()));
    }
    Ok(())
}

/// Configuration of the random skeleton sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonConfig {
    pub max_len: usize,
    pub max_depth: Option<usize>,
    pub max_vars: u8,
    /// Sampling weight per token spelling; missing or zero disables the token.
    pub weights: Vec<(String, f64)>,
    pub max_attempts: usize,
}

impl Default for SkeletonConfig {
    fn default() -> Self {
        Self {
            max_len: 30,
            max_depth: None,
            max_vars: DEFAULT_MAX_VARS,
            weights: default_weights(DEFAULT_MAX_VARS),
            max_attempts: 10_000,
        }
    }
}

/// Uniform weights over the expression alphabet.
pub fn default_weights(max_vars: u8) -> Vec<(String, f64)> {
    Token::expression_alphabet(max_vars).into_iter().map(|t| (t.to_string(), 1.0)).collect()
}

impl SkeletonConfig {
    fn weighted_tokens(&self) -> Result<Vec<(Token, f64)>, ExprError> {
        let mut out = Vec::new();
        for (name, w) in &self.weights {
            let tok: Token = name.parse()?;
            if !tok.is_expression() {
                return Err(ExprError::Config(format!("`{name}` is not an expression token")));
            }
            if let Token::Var(i) = tok {
                if i > self.max_vars {
                    continue;
                }
            }
            if *w > 0.0 && w.is_finite() {
                out.push((tok, *w));
            }
        }
        Ok(out)
    }

    pub fn limits(&self) -> GrowthLimits {
        GrowthLimits { max_len: usize::MAX, max_depth: self.max_depth }
    }
}

/// Draw a random constraint-satisfying preorder traversal.
///
/// Symbols are drawn from the weighted store among those the constraints allow
/// at the current slot; draws that overflow `max_len` are thrown away and
/// restarted.
pub fn sample_skeleton<R: Rng + ?Sized>(rng: &mut R, cfg: &SkeletonConfig) -> Result<Vec<Token>, ExprError> {
    if cfg.max_len == 0 {
        return Err(ExprError::Config("max_len must be at least 1".into()));
    }
    let store = cfg.weighted_tokens()?;
    if !store.iter().any(|(t, _)| t.is_terminal()) {
        return Err(ExprError::Config("no terminal token enabled".into()));
    }
    let limits = cfg.limits();
    let mut weights = Vec::with_capacity(store.len());
    'attempt: for _ in 0..cfg.max_attempts.max(1) {
        let mut state = GenState::new();
        while !state.is_complete() {
            weights.clear();
            weights.extend(store.iter().map(|&(t, w)| if state.allows_within(t, limits) { w } else { 0.0 }));
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if u < w {
                    break;
                }
                u -= w;
            }
            let tok = store[pick.expect("terminals are always allowed")].0;
            state.push(tok)?;
            if state.len() + state.open_slots() > cfg.max_len {
                continue 'attempt;
            }
        }
        return Ok(state.tokens);
    }
    Err(ExprError::Config(format!(
        "no skeleton within {} tokens after {} attempts",
        cfg.max_len, cfg.max_attempts
    )))
}

/// Parsed expression; constant slots are numbered left to right.
#[derive(Debug, Clone, PartialEq)]
pub enum ExprTree {
    Binary(BinaryOp, Box<ExprTree>, Box<ExprTree>),
    Unary(UnaryOp, Box<ExprTree>),
    Var(u8),
    Const(usize),
}

pub fn parse_preorder(tokens: &[Token]) -> Result<ExprTree, ExprError> {
    fn build(tokens: &[Token], pos: &mut usize, next_const: &mut usize) -> Result<ExprTree, ExprError> {
        let Some(&tok) = tokens.get(*pos) else {
            return Err(ExprError::Malformed("incomplete expression".into()));
        };
        *pos += 1;
        Ok(match tok {
            Token::Binary(op) => {
                let lhs = build(tokens, pos, next_const)?;
                let rhs = build(tokens, pos, next_const)?;
                ExprTree::Binary(op, Box::new(lhs), Box::new(rhs))
            }
            Token::Unary(op) => ExprTree::Unary(op, Box::new(build(tokens, pos, next_const)?)),
            Token::Var(i) => ExprTree::Var(i),
            Token::Const => {
                *next_const += 1;
                ExprTree::Const(*next_const - 1)
            }
            other => return Err(ExprError::Malformed(format!("`{other}` is not an expression token"))),
        })
    }
    let mut pos = 0;
    let mut next_const = 0;
    let tree = build(tokens, &mut pos, &mut next_const)?;
    if pos != tokens.len() {
        return Err(ExprError::Malformed(format!("trailing tokens from position {pos}")));
    }
    Ok(tree)
}

/// Parse canonical spellings directly into a tree.
pub fn parse_preorder_str<S: AsRef<str>>(items: &[S]) -> Result<ExprTree, ExprError> {
    let tokens = items
        .iter()
        .map(|s| s.as_ref().parse::<Token>().map_err(|e| ExprError::Malformed(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    parse_preorder(&tokens)
}

impl ExprTree {
    pub fn to_preorder(&self) -> Vec<Token> {
        let mut out = Vec::new();
        self.write_preorder(&mut out);
        out
    }

    fn write_preorder(&self, out: &mut Vec<Token>) {
        match self {
            ExprTree::Binary(op, a, b) => {
                out.push(Token::Binary(*op));
                a.write_preorder(out);
                b.write_preorder(out);
            }
            ExprTree::Unary(op, a) => {
                out.push(Token::Unary(*op));
                a.write_preorder(out);
            }
            ExprTree::Var(i) => out.push(Token::Var(*i)),
            ExprTree::Const(_) => out.push(Token::Const),
        }
    }

    pub fn n_consts(&self) -> usize {
        match self {
            ExprTree::Binary(_, a, b) => a.n_consts() + b.n_consts(),
            ExprTree::Unary(_, a) => a.n_consts(),
            ExprTree::Var(_) => 0,
            ExprTree::Const(_) => 1,
        }
    }

    pub fn max_var(&self) -> u8 {
        match self {
            ExprTree::Binary(_, a, b) => a.max_var().max(b.max_var()),
            ExprTree::Unary(_, a) => a.max_var(),
            ExprTree::Var(i) => *i,
            ExprTree::Const(_) => 0,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            ExprTree::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
            ExprTree::Unary(_, a) => 1 + a.depth(),
            _ => 1,
        }
    }

    pub fn compile(&self) -> CompiledExpr {
        let mut ops = Vec::new();
        self.write_postfix(&mut ops);
        CompiledExpr { ops, n_consts: self.n_consts(), max_var: self.max_var() }
    }

    fn write_postfix(&self, out: &mut Vec<Op>) {
        match self {
            ExprTree::Binary(op, a, b) => {
                a.write_postfix(out);
                b.write_postfix(out);
                out.push(Op::Binary(*op));
            }
            ExprTree::Unary(op, a) => {
                a.write_postfix(out);
                out.push(Op::Unary(*op));
            }
            ExprTree::Var(i) => out.push(Op::Var(*i as usize - 1)),
            ExprTree::Const(k) => out.push(Op::Const(*k)),
        }
    }
}

/// Debug renderer; constants print as `C0`, `C1`, ...
impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprTree::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            ExprTree::Unary(op, a) => write!(f, "{}({a})", op.symbol()),
            ExprTree::Var(i) => write!(f, "x{i}"),
            ExprTree::Const(k) => write!(f, "C{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("expression uses x{needed} but the data has {got} columns")]
    ArityMismatch { needed: usize, got: usize },
    #[error("expected {expected} constants, got {got}")]
    ConstantCountMismatch { expected: usize, got: usize },
    #[error("domain violation")]
    DomainViolation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Binary(BinaryOp),
    Unary(UnaryOp),
    Var(usize),
    Const(usize),
}

/// Postfix program for fast repeated evaluation of one tree.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    n_consts: usize,
    max_var: u8,
}

impl CompiledExpr {
    pub fn n_consts(&self) -> usize {
        self.n_consts
    }

    pub fn check(&self, x: ArrayView2<'_, f64>, constants: &[f64]) -> Result<(), EvalError> {
        if constants.len() != self.n_consts {
            return Err(EvalError::ConstantCountMismatch { expected: self.n_consts, got: constants.len() });
        }
        if self.max_var as usize > x.ncols() {
            return Err(EvalError::ArityMismatch { needed: self.max_var as usize, got: x.ncols() });
        }
        Ok(())
    }

    /// Evaluate on every row of `x`. Any invalid log/sqrt/division argument or
    /// non-finite intermediate fails the whole batch.
    pub fn eval(&self, x: ArrayView2<'_, f64>, constants: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.check(x, constants)?;
        let n = x.nrows();
        let mut stack: Vec<Vec<f64>> = Vec::with_capacity(8);
        let mut pool: Vec<Vec<f64>> = Vec::new();
        let fresh = |pool: &mut Vec<Vec<f64>>| -> Vec<f64> {
            let mut v = pool.pop().unwrap_or_default();
            v.clear();
            v
        };
        for &op in &self.ops {
            match op {
                Op::Var(j) => {
                    let mut v = fresh(&mut pool);
                    v.extend(x.column(j).iter().copied());
                    stack.push(v);
                }
                Op::Const(k) => {
                    let c = constants[k];
                    if !c.is_finite() {
                        return Err(EvalError::DomainViolation);
                    }
                    let mut v = fresh(&mut pool);
                    v.resize(n, c);
                    stack.push(v);
                }
                Op::Unary(u) => {
                    let v = stack.last_mut().expect("well-formed program");
                    for a in v.iter_mut() {
                        let arg = *a;
                        let bad = match u {
                            UnaryOp::Log => arg <= 0.0,
                            UnaryOp::Sqrt => arg < 0.0,
                            _ => false,
                        };
                        let r = u.apply(arg);
                        if bad || !r.is_finite() {
                            return Err(EvalError::DomainViolation);
                        }
                        *a = r;
                    }
                }
                Op::Binary(b) => {
                    let rhs = stack.pop().expect("well-formed program");
                    let lhs = stack.last_mut().expect("well-formed program");
                    for (a, &c) in lhs.iter_mut().zip(rhs.iter()) {
                        if b == BinaryOp::Div && c == 0.0 {
                            return Err(EvalError::DomainViolation);
                        }
                        let r = b.apply(*a, c);
                        if !r.is_finite() {
                            return Err(EvalError::DomainViolation);
                        }
                        *a = r;
                    }
                    pool.push(rhs);
                }
            }
        }
        let out = stack.pop().expect("well-formed program");
        if out.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::DomainViolation);
        }
        Ok(out)
    }
}

pub fn evaluate(tree: &ExprTree, x: ArrayView2<'_, f64>, constants: &[f64]) -> Result<Vec<f64>, EvalError> {
    tree.compile().eval(x, constants)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<Token> {
        s.split_whitespace().map(|t| t.parse().unwrap()).collect()
    }

    #[test]
    fn arity_by_kind() {
        assert_eq!("+".parse::<Token>().unwrap().arity().unwrap(), 2);
        assert_eq!("sin".parse::<Token>().unwrap().arity().unwrap(), 1);
        assert_eq!("C".parse::<Token>().unwrap().arity().unwrap(), 0);
        assert_eq!(Token::Var(3).arity().unwrap(), 0);
        assert!(matches!(Token::Bos.arity(), Err(ExprError::InvalidTokenKind(Token::Bos))));
        let r: Token = "0.42".parse().unwrap();
        assert!(r.arity().is_err());
    }

    #[test]
    fn counter_examples() {
        let seq = toks("* C sin x1");
        let counts: Vec<usize> = (0..=seq.len()).map(|k| remaining_slots(&seq[..k]).unwrap()).collect();
        assert_eq!(counts, vec![1, 2, 1, 1, 0]);
        assert_eq!(remaining_slots(&toks("+ sin")).unwrap(), 2);
        assert_eq!(remaining_slots(&toks("x1 x1")), Err(ExprError::TrailingTokens(1)));
    }

    #[test]
    fn constraint_examples() {
        assert!(!constraint_check(&toks("sin"), "cos".parse().unwrap()));
        assert!(!constraint_check(&toks("log"), "sin".parse().unwrap()));
        assert!(constraint_check(&toks("+ x1"), "sin".parse().unwrap()));
        // Indirect nesting through another operator is still under the ancestor chain.
        assert!(!constraint_check(&toks("sin + x1"), "cos".parse().unwrap()));
        assert!(!constraint_check(&toks("sqrt * x1"), "sin".parse().unwrap()));
        assert!(!constraint_check(&toks("log"), "-".parse().unwrap()));
        assert!(constraint_check(&toks("log +"), "-".parse().unwrap()));
        // Once the trig subtree is closed, its siblings are free again.
        assert!(constraint_check(&toks("+ sin x1"), "cos".parse().unwrap()));
        assert!(!constraint_check(&toks("x1"), "x1".parse().unwrap()));
    }

    #[test]
    fn ancestors_survive_last_child() {
        // `log`'s only child has started, but log is still an ancestor of the open slot.
        let st = GenState::from_prefix(&toks("log + x1")).unwrap();
        assert_eq!(st.ancestors().collect::<Vec<_>>(), toks("log +"));
        assert_eq!(st.slot_depth(), 3);
        assert_eq!(st.sibling(), Some(Token::Var(1)));
        assert!(!st.allows(Token::Unary(UnaryOp::Sin)));
    }

    #[test]
    fn parse_examples() {
        let t = parse_preorder(&toks("sin * C x1")).unwrap();
        assert_eq!(
            t,
            ExprTree::Unary(
                UnaryOp::Sin,
                Box::new(ExprTree::Binary(BinaryOp::Mul, Box::new(ExprTree::Const(0)), Box::new(ExprTree::Var(1))))
            )
        );
        let t = parse_preorder(&toks("+ x1 x1")).unwrap();
        assert_eq!(t, ExprTree::Binary(BinaryOp::Add, Box::new(ExprTree::Var(1)), Box::new(ExprTree::Var(1))));
        assert!(matches!(parse_preorder(&toks("sin cos")), Err(ExprError::Malformed(_))));
        assert!(matches!(parse_preorder(&toks("x1 x2")), Err(ExprError::Malformed(_))));
        assert!(matches!(parse_preorder_str(&["sin", "tan", "x1"]), Err(ExprError::Malformed(_))));
        assert!(matches!(parse_preorder(&[Token::Unary(UnaryOp::Sin), Token::Bos]), Err(ExprError::Malformed(_))));
    }

    #[test]
    fn evaluation_examples() {
        let nguyen1 = parse_preorder(&toks("+ + * * x1 x1 x1 * x1 x1 x1")).unwrap();
        let y = evaluate(&nguyen1, array![[1.0]].view(), &[]).unwrap();
        assert_eq!(y, vec![3.0]);

        let log = parse_preorder(&toks("log x1")).unwrap();
        assert_eq!(evaluate(&log, array![[-1.0]].view(), &[]), Err(EvalError::DomainViolation));

        let sin = parse_preorder(&toks("sin * C x1")).unwrap();
        let c = 2.6;
        let y = evaluate(&sin, array![[std::f64::consts::PI / (2.0 * c)]].view(), &[c]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluation_errors() {
        let t = parse_preorder(&toks("/ x1 x2")).unwrap();
        assert_eq!(evaluate(&t, array![[1.0]].view(), &[]), Err(EvalError::ArityMismatch { needed: 2, got: 1 }));
        assert_eq!(evaluate(&t, array![[1.0, 0.0]].view(), &[]), Err(EvalError::DomainViolation));
        let c = parse_preorder(&toks("* C x1")).unwrap();
        assert_eq!(
            evaluate(&c, array![[1.0]].view(), &[]),
            Err(EvalError::ConstantCountMismatch { expected: 1, got: 0 })
        );
        let s = parse_preorder(&toks("sqrt x1")).unwrap();
        assert_eq!(evaluate(&s, array![[0.0]].view(), &[]).unwrap(), vec![0.0]);
        let e = parse_preorder(&toks("exp exp x1")).unwrap();
        assert_eq!(evaluate(&e, array![[10.0]].view(), &[]), Err(EvalError::DomainViolation));
    }

    #[test]
    fn single_var_length_one() {
        let cfg = SkeletonConfig { max_len: 1, weights: vec![("x1".into(), 1.0)], ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_skeleton(&mut rng, &cfg).unwrap(), vec![Token::Var(1)]);
    }

    #[test]
    fn sampler_needs_terminal() {
        let cfg = SkeletonConfig { weights: vec![("+".into(), 1.0), ("sin".into(), 1.0)], ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_skeleton(&mut rng, &cfg), Err(ExprError::Config(_))));
    }

    #[test]
    fn sampler_respects_depth() {
        let cfg = SkeletonConfig { max_depth: Some(3), max_len: 64, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let s = sample_skeleton(&mut rng, &cfg).unwrap();
            assert!(parse_preorder(&s).unwrap().depth() <= 3);
        }
    }

    #[test]
    fn token_spelling_roundtrip() {
        for t in Token::expression_alphabet(9) {
            assert_eq!(t.to_string().parse::<Token>().unwrap(), t);
        }
        assert!("x10".parse::<Token>().is_err());
        assert!("x0".parse::<Token>().is_err());
        assert!("tan".parse::<Token>().is_err());
        assert_eq!("<bos>".parse::<Token>().unwrap(), Token::Bos);
    }
}
