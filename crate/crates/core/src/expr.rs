//! Mechanism expression language: parsing, evaluation, printing, and global
//! derivative bounds.
//!
//! Grammar (standard precedence, left-associative, unary minus binds tightest):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := NUMBER | IDENT | FUNC '(' expr ')' | '(' expr ')' | '-' factor
//! FUNC   := tanh | sin | cos
//! ```
//!
//! The function set is deliberately small: every admitted function has a
//! derivative bounded by one, which keeps automated Lipschitz bounding sound.
//! Division evaluates fine but disqualifies a mechanism from derivative-bound
//! certification (the bound would be unbounded).

use crate::error::{Error, Result};

const MAX_EXPR_DEPTH: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Tanh,
    Sin,
    Cos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Expression tree over endogenous variables, noise terms, and constants.
///
/// Variable and noise references are index-based; names live in the model's
/// symbol table.
#[derive(Debug, Clone, PartialEq)]
pub enum ExprNode {
    Constant(f64),
    Var(usize),
    Noise(usize),
    Unary(UnaryOp, Box<ExprNode>),
    Binary(BinaryOp, Box<ExprNode>, Box<ExprNode>),
}

#[allow(clippy::should_implement_trait)]
impl ExprNode {
    pub fn add(left: ExprNode, right: ExprNode) -> ExprNode {
        ExprNode::Binary(BinaryOp::Add, Box::new(left), Box::new(right))
    }

    pub fn mul(left: ExprNode, right: ExprNode) -> ExprNode {
        ExprNode::Binary(BinaryOp::Mul, Box::new(left), Box::new(right))
    }

    /// True if any node in the tree is a division.
    pub fn contains_division(&self) -> bool {
        match self {
            ExprNode::Binary(BinaryOp::Div, _, _) => true,
            ExprNode::Binary(_, l, r) => l.contains_division() || r.contains_division(),
            ExprNode::Unary(_, c) => c.contains_division(),
            _ => false,
        }
    }

    /// Collects all referenced variable and noise indices.
    pub fn collect_refs(
        &self,
        vars: &mut std::collections::BTreeSet<usize>,
        noises: &mut std::collections::BTreeSet<usize>,
    ) {
        match self {
            ExprNode::Constant(_) => {}
            ExprNode::Var(i) => {
                vars.insert(*i);
            }
            ExprNode::Noise(j) => {
                noises.insert(*j);
            }
            ExprNode::Unary(_, c) => c.collect_refs(vars, noises),
            ExprNode::Binary(_, l, r) => {
                l.collect_refs(vars, noises);
                r.collect_refs(vars, noises);
            }
        }
    }
}

/// Resolves identifiers to variable or noise indices during parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symbol {
    Var(usize),
    Noise(usize),
}

/// Name lookup shared by the parser and the printer.
pub struct SymbolTable {
    var_names: Vec<String>,
    noise_names: Vec<String>,
}

impl SymbolTable {
    /// Builds the table for a variable list; noise symbols are `e_<name>`.
    pub fn new(var_names: &[String]) -> SymbolTable {
        SymbolTable {
            var_names: var_names.to_vec(),
            noise_names: var_names.iter().map(|n| format!("e_{n}")).collect(),
        }
    }

    pub fn resolve(&self, name: &str) -> Option<Symbol> {
        if let Some(i) = self.var_names.iter().position(|n| n == name) {
            return Some(Symbol::Var(i));
        }
        self.noise_names
            .iter()
            .position(|n| n == name)
            .map(Symbol::Noise)
    }

    pub fn var_name(&self, i: usize) -> &str {
        &self.var_names[i]
    }

    pub fn noise_name(&self, j: usize) -> &str {
        &self.noise_names[j]
    }
}

// ── Lexer ──

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    position: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let position = i;
        match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
                continue;
            }
            '+' => tokens.push(Token {
                kind: TokenKind::Plus,
                position,
            }),
            '-' => tokens.push(Token {
                kind: TokenKind::Minus,
                position,
            }),
            '*' => tokens.push(Token {
                kind: TokenKind::Star,
                position,
            }),
            '/' => tokens.push(Token {
                kind: TokenKind::Slash,
                position,
            }),
            '(' => tokens.push(Token {
                kind: TokenKind::LParen,
                position,
            }),
            ')' => tokens.push(Token {
                kind: TokenKind::RParen,
                position,
            }),
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let literal = &text[start..i];
                let value = literal.parse::<f64>().map_err(|_| Error::ExprSyntax {
                    position: start,
                    message: format!("malformed number `{literal}`"),
                })?;
                tokens.push(Token {
                    kind: TokenKind::Number(value),
                    position: start,
                });
                continue;
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric()
                        || bytes[i] == b'_'
                        || bytes[i] == b'\'')
                {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Ident(text[start..i].to_string()),
                    position: start,
                });
                continue;
            }
            _ => {
                return Err(Error::ExprSyntax {
                    position,
                    message: format!("unexpected character `{c}`"),
                })
            }
        }
        i += 1;
    }
    tokens.push(Token {
        kind: TokenKind::Eof,
        position: text.len(),
    });
    Ok(tokens)
}

// ── Parser ──

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    symbols: &'a SymbolTable,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> Result<()> {
        if self.peek().kind == kind {
            self.advance();
            Ok(())
        } else {
            Err(Error::ExprSyntax {
                position: self.peek().position,
                message: format!("expected {what}"),
            })
        }
    }

    fn expr(&mut self, depth: usize) -> Result<ExprNode> {
        let mut node = self.term(depth)?;
        loop {
            let op = match self.peek().kind {
                TokenKind::Plus => BinaryOp::Add,
                TokenKind::Minus => BinaryOp::Sub,
                _ => break,
            };
            self.advance();
            let rhs = self.term(depth)?;
            node = ExprNode::Binary(op, Box::new(node), Box::new(rhs));
        }
        Ok(node)
    }

    fn term(&mut self, depth: usize) -> Result<ExprNode> {
        let mut node = self.factor(depth)?;
        loop {
            let op = match self.peek().kind {
                TokenKind::Star => BinaryOp::Mul,
                TokenKind::Slash => BinaryOp::Div,
                _ => break,
            };
            self.advance();
            let rhs = self.factor(depth)?;
            node = ExprNode::Binary(op, Box::new(node), Box::new(rhs));
        }
        Ok(node)
    }

    fn factor(&mut self, depth: usize) -> Result<ExprNode> {
        if depth > MAX_EXPR_DEPTH {
            return Err(Error::ExprSyntax {
                position: self.peek().position,
                message: "expression nesting too deep".to_string(),
            });
        }
        let token = self.advance();
        match token.kind {
            TokenKind::Number(value) => Ok(ExprNode::Constant(value)),
            TokenKind::Ident(name) => {
                if self.peek().kind == TokenKind::LParen {
                    let op = match name.as_str() {
                        "tanh" => UnaryOp::Tanh,
                        "sin" => UnaryOp::Sin,
                        "cos" => UnaryOp::Cos,
                        _ => {
                            return Err(Error::UnknownFunction {
                                name,
                                position: token.position,
                            })
                        }
                    };
                    self.advance(); // '('
                    let inner = self.expr(depth + 1)?;
                    self.expect(TokenKind::RParen, "`)`")?;
                    Ok(ExprNode::Unary(op, Box::new(inner)))
                } else {
                    match self.symbols.resolve(&name) {
                        Some(Symbol::Var(i)) => Ok(ExprNode::Var(i)),
                        Some(Symbol::Noise(j)) => Ok(ExprNode::Noise(j)),
                        None => Err(Error::UnknownIdentifier {
                            name,
                            position: token.position,
                        }),
                    }
                }
            }
            TokenKind::Minus => {
                let inner = self.factor(depth + 1)?;
                // fold negated literals so `-1.5` is a single constant
                if let ExprNode::Constant(c) = inner {
                    Ok(ExprNode::Constant(-c))
                } else {
                    Ok(ExprNode::Unary(UnaryOp::Neg, Box::new(inner)))
                }
            }
            TokenKind::LParen => {
                let inner = self.expr(depth + 1)?;
                self.expect(TokenKind::RParen, "`)`")?;
                Ok(inner)
            }
            _ => Err(Error::ExprSyntax {
                position: token.position,
                message: "expected a number, identifier, function call, or `(`".to_string(),
            }),
        }
    }
}

/// Parses a formula string into an expression tree.
pub fn parse_expr(text: &str, symbols: &SymbolTable) -> Result<ExprNode> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        symbols,
    };
    let node = parser.expr(0)?;
    if parser.peek().kind != TokenKind::Eof {
        return Err(Error::ExprSyntax {
            position: parser.peek().position,
            message: "unexpected trailing input".to_string(),
        });
    }
    Ok(node)
}

/// Evaluates the tree at an endogenous state `x` and noise realisation `e`.
///
/// Non-finite intermediate values propagate; callers decide how to report
/// them.
pub fn eval_expr(node: &ExprNode, x: &[f64], e: &[f64]) -> f64 {
    match node {
        ExprNode::Constant(c) => *c,
        ExprNode::Var(i) => x[*i],
        ExprNode::Noise(j) => e[*j],
        ExprNode::Unary(op, child) => {
            let v = eval_expr(child, x, e);
            match op {
                UnaryOp::Neg => -v,
                UnaryOp::Tanh => v.tanh(),
                UnaryOp::Sin => v.sin(),
                UnaryOp::Cos => v.cos(),
            }
        }
        ExprNode::Binary(op, left, right) => {
            let l = eval_expr(left, x, e);
            let r = eval_expr(right, x, e);
            match op {
                BinaryOp::Add => l + r,
                BinaryOp::Sub => l - r,
                BinaryOp::Mul => l * r,
                BinaryOp::Div => l / r,
            }
        }
    }
}

// ── Printer ──

fn precedence(node: &ExprNode) -> u8 {
    match node {
        ExprNode::Binary(BinaryOp::Add | BinaryOp::Sub, _, _) => 0,
        ExprNode::Binary(BinaryOp::Mul | BinaryOp::Div, _, _) => 1,
        ExprNode::Unary(UnaryOp::Neg, _) => 2,
        _ => 3,
    }
}

fn binary_symbol(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => " + ",
        BinaryOp::Sub => " - ",
        BinaryOp::Mul => "*",
        BinaryOp::Div => "/",
    }
}

fn print_node(node: &ExprNode, symbols: &SymbolTable, out: &mut String) {
    match node {
        ExprNode::Constant(c) => {
            // negative literals are parenthesised so they re-parse as a
            // single folded constant in any position
            if c.is_sign_negative() {
                out.push_str(&format!("({c})"));
            } else {
                out.push_str(&format!("{c}"));
            }
        }
        ExprNode::Var(i) => out.push_str(symbols.var_name(*i)),
        ExprNode::Noise(j) => out.push_str(symbols.noise_name(*j)),
        ExprNode::Unary(UnaryOp::Neg, child) => {
            out.push('-');
            // constants must keep their parens, otherwise `-` would fold
            let needs_parens =
                precedence(child) < 2 || matches!(child.as_ref(), ExprNode::Constant(_));
            print_child(child, symbols, out, needs_parens);
        }
        ExprNode::Unary(op, child) => {
            let name = match op {
                UnaryOp::Tanh => "tanh",
                UnaryOp::Sin => "sin",
                UnaryOp::Cos => "cos",
                UnaryOp::Neg => unreachable!(),
            };
            out.push_str(name);
            out.push('(');
            print_node(child, symbols, out);
            out.push(')');
        }
        ExprNode::Binary(op, left, right) => {
            let prec = precedence(node);
            print_child(left, symbols, out, precedence(left) < prec);
            out.push_str(binary_symbol(*op));
            // the grammar is left-associative, so an equal-precedence right
            // child needs parens to keep a right-nested tree right-nested
            print_child(right, symbols, out, precedence(right) <= prec);
        }
    }
}

fn print_child(child: &ExprNode, symbols: &SymbolTable, out: &mut String, parens: bool) {
    if parens {
        out.push('(');
        print_node(child, symbols, out);
        out.push(')');
    } else {
        print_node(child, symbols, out);
    }
}

/// Renders a tree back to formula text that re-parses to the same tree.
pub fn to_formula(node: &ExprNode, symbols: &SymbolTable) -> String {
    let mut out = String::new();
    print_node(node, symbols, &mut out);
    out
}

// ── Derivative bounds ──

struct BoundInfo {
    /// per-variable bound on |∂ node / ∂ x_k|, valid for every x and e
    per_var: Vec<f64>,
    /// value of the subtree when it references no variables or noise terms
    constant: Option<f64>,
}

fn bound_node(node: &ExprNode, n_vars: usize) -> Result<BoundInfo> {
    match node {
        ExprNode::Constant(c) => Ok(BoundInfo {
            per_var: vec![0.0; n_vars],
            constant: Some(*c),
        }),
        ExprNode::Var(i) => {
            let mut per_var = vec![0.0; n_vars];
            per_var[*i] = 1.0;
            Ok(BoundInfo {
                per_var,
                constant: None,
            })
        }
        ExprNode::Noise(_) => Ok(BoundInfo {
            per_var: vec![0.0; n_vars],
            constant: None,
        }),
        ExprNode::Unary(op, child) => {
            let inner = bound_node(child, n_vars)?;
            let constant = inner.constant.map(|c| match op {
                UnaryOp::Neg => -c,
                UnaryOp::Tanh => c.tanh(),
                UnaryOp::Sin => c.sin(),
                UnaryOp::Cos => c.cos(),
            });
            // |tanh'|, |sin'|, |cos'| <= 1, so the chain rule keeps the
            // child's bound; negation does too
            Ok(BoundInfo {
                per_var: inner.per_var,
                constant,
            })
        }
        ExprNode::Binary(BinaryOp::Div, _, _) => Err(Error::Uncertifiable(
            "division has no global derivative bound".to_string(),
        )),
        ExprNode::Binary(op, left, right) => {
            let l = bound_node(left, n_vars)?;
            let r = bound_node(right, n_vars)?;
            match op {
                BinaryOp::Add | BinaryOp::Sub => {
                    let per_var = l
                        .per_var
                        .iter()
                        .zip(&r.per_var)
                        .map(|(a, b)| a + b)
                        .collect();
                    let constant = match (l.constant, r.constant) {
                        (Some(a), Some(b)) => {
                            Some(if *op == BinaryOp::Add { a + b } else { a - b })
                        }
                        _ => None,
                    };
                    Ok(BoundInfo { per_var, constant })
                }
                BinaryOp::Mul => match (l.constant, r.constant) {
                    (Some(a), Some(b)) => Ok(BoundInfo {
                        per_var: vec![0.0; n_vars],
                        constant: Some(a * b),
                    }),
                    (Some(c), None) => Ok(BoundInfo {
                        per_var: r.per_var.iter().map(|b| c.abs() * b).collect(),
                        constant: None,
                    }),
                    (None, Some(c)) => Ok(BoundInfo {
                        per_var: l.per_var.iter().map(|b| c.abs() * b).collect(),
                        constant: None,
                    }),
                    (None, None) => Err(Error::Uncertifiable(
                        "product of two non-constant subexpressions".to_string(),
                    )),
                },
                BinaryOp::Div => unreachable!(),
            }
        }
    }
}

/// Global bounds `B[k] >= sup |∂ f / ∂ x_k|`, uniform over state and noise.
///
/// Sound for the admitted grammar: bounded-derivative functions, affine
/// combinations, and products with one constant side. Anything else returns
/// `Uncertifiable`.
pub fn derivative_bounds(node: &ExprNode, n_vars: usize) -> Result<Vec<f64>> {
    bound_node(node, n_vars).map(|info| info.per_var)
}
