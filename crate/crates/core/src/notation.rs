//! Exact, invertible serialization between [`Expr`] and the four token
//! encodings (string/subtree crossed with Polish/reverse-Polish), plus
//! vocabulary management for model input ids.
//!
//! Token spellings are fixed: the 14 operators `plus minus times divide
//! power root sqrt sin cos tan sec csc cot ln`, the leaves `x e n`, and
//! integers. The string encodings spell a negative integer as unary `minus`
//! followed by its magnitude; the subtree encodings fuse the sign into a
//! single token such as `-7`.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::expr::{self, BinOp, Expr, Leaf, UnOp};

/// Whether a sequence is a flat token string or a stream of subtree triples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Format {
    String,
    Subtree,
}

/// Traversal order of the serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Polish,
    ReversePolish,
}

/// One of the four encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scheme {
    pub format: Format,
    pub direction: Direction,
}

impl Scheme {
    pub const STRING_POLISH: Scheme = Scheme {
        format: Format::String,
        direction: Direction::Polish,
    };
    pub const STRING_REVERSE: Scheme = Scheme {
        format: Format::String,
        direction: Direction::ReversePolish,
    };
    pub const SUBTREE_POLISH: Scheme = Scheme {
        format: Format::Subtree,
        direction: Direction::Polish,
    };
    pub const SUBTREE_REVERSE: Scheme = Scheme {
        format: Format::Subtree,
        direction: Direction::ReversePolish,
    };
}

/// Dataset-level pairing of input and output encodings: `Polish` feeds and
/// emits Polish order, `Irpp` feeds the integrand in reverse Polish and
/// emits the primitive in Polish.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OrderScheme {
    Polish,
    Irpp,
}

/// The scheme pair a model variant is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DataScheme {
    pub format: Format,
    pub order: OrderScheme,
}

impl DataScheme {
    pub const ALL: [DataScheme; 4] = [
        DataScheme { format: Format::String, order: OrderScheme::Polish },
        DataScheme { format: Format::String, order: OrderScheme::Irpp },
        DataScheme { format: Format::Subtree, order: OrderScheme::Polish },
        DataScheme { format: Format::Subtree, order: OrderScheme::Irpp },
    ];

    /// Encoding applied to integrands (model input).
    pub fn input_scheme(&self) -> Scheme {
        Scheme {
            format: self.format,
            direction: match self.order {
                OrderScheme::Polish => Direction::Polish,
                OrderScheme::Irpp => Direction::ReversePolish,
            },
        }
    }

    /// Encoding applied to primitives (model output): always Polish order.
    pub fn output_scheme(&self) -> Scheme {
        Scheme {
            format: self.format,
            direction: Direction::Polish,
        }
    }

    pub fn name(&self) -> &'static str {
        match (self.format, self.order) {
            (Format::String, OrderScheme::Polish) => "string-polish",
            (Format::String, OrderScheme::Irpp) => "string-irpp",
            (Format::Subtree, OrderScheme::Polish) => "subtree-polish",
            (Format::Subtree, OrderScheme::Irpp) => "subtree-irpp",
        }
    }

    pub fn parse(name: &str) -> Option<DataScheme> {
        DataScheme::ALL.iter().copied().find(|s| s.name() == name)
    }
}

/// Operator token spellings, shared by both formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpToken {
    Plus,
    Minus,
    Times,
    Divide,
    Power,
    Root,
    Sqrt,
    Sin,
    Cos,
    Tan,
    Sec,
    Csc,
    Cot,
    Ln,
}

impl OpToken {
    pub const ALL: [OpToken; 14] = [
        OpToken::Plus,
        OpToken::Minus,
        OpToken::Times,
        OpToken::Divide,
        OpToken::Power,
        OpToken::Root,
        OpToken::Sqrt,
        OpToken::Sin,
        OpToken::Cos,
        OpToken::Tan,
        OpToken::Sec,
        OpToken::Csc,
        OpToken::Cot,
        OpToken::Ln,
    ];

    pub fn spelling(&self) -> &'static str {
        match self {
            OpToken::Plus => "plus",
            OpToken::Minus => "minus",
            OpToken::Times => "times",
            OpToken::Divide => "divide",
            OpToken::Power => "power",
            OpToken::Root => "root",
            OpToken::Sqrt => "sqrt",
            OpToken::Sin => "sin",
            OpToken::Cos => "cos",
            OpToken::Tan => "tan",
            OpToken::Sec => "sec",
            OpToken::Csc => "csc",
            OpToken::Cot => "cot",
            OpToken::Ln => "ln",
        }
    }

    /// 1 for unary operators, 2 for binary ones. `minus` is always unary.
    pub fn arity(&self) -> usize {
        match self {
            OpToken::Plus | OpToken::Times | OpToken::Divide | OpToken::Power | OpToken::Root => 2,
            _ => 1,
        }
    }
}

/// A vocabulary symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Token {
    Eos,
    Pad,
    Sos,
    Op(OpToken),
    Var,
    ConstN,
    Euler,
    Int(i64),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Eos => write!(f, "EOS"),
            Token::Pad => write!(f, "PAD"),
            Token::Sos => write!(f, "SOS"),
            Token::Op(op) => write!(f, "{}", op.spelling()),
            Token::Var => write!(f, "x"),
            Token::ConstN => write!(f, "n"),
            Token::Euler => write!(f, "e"),
            Token::Int(k) => write!(f, "{k}"),
        }
    }
}

/// Parse one token spelling.
pub fn parse_token(s: &str) -> Result<Token, DecodeError> {
    match s {
        "EOS" => return Ok(Token::Eos),
        "PAD" => return Ok(Token::Pad),
        "SOS" => return Ok(Token::Sos),
        "x" => return Ok(Token::Var),
        "n" => return Ok(Token::ConstN),
        "e" => return Ok(Token::Euler),
        _ => {}
    }
    for op in OpToken::ALL {
        if op.spelling() == s {
            return Ok(Token::Op(op));
        }
    }
    if let Ok(k) = s.parse::<i64>() {
        return Ok(Token::Int(k));
    }
    Err(DecodeError::UnknownToken(s.to_string()))
}

/// A token sequence tagged with its encoding scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub tokens: Vec<Token>,
    pub scheme: Scheme,
}

impl TokenSeq {
    pub fn new(tokens: Vec<Token>, scheme: Scheme) -> Self {
        TokenSeq { tokens, scheme }
    }

    /// Space-separated text rendering; the dataset file format.
    pub fn to_text(&self) -> String {
        let parts: Vec<String> = self.tokens.iter().map(|t| t.to_string()).collect();
        parts.join(" ")
    }

    /// Parse a space-separated token string.
    pub fn from_text(text: &str, scheme: Scheme) -> Result<TokenSeq, DecodeError> {
        let tokens = text
            .split_whitespace()
            .map(parse_token)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TokenSeq { tokens, scheme })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Why a token sequence failed to decode back into an expression.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("sequence ended before the expression was complete")]
    Truncated,
    #[error("token arity or slot shape violated")]
    ArityMismatch,
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("subtree child label inconsistent with its expansion")]
    SubtreeLabelMismatch,
    #[error("tokens remain after a complete expression")]
    TrailingTokens,
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

fn un_op_token(op: UnOp) -> OpToken {
    match op {
        UnOp::Minus => OpToken::Minus,
        UnOp::Sqrt => OpToken::Sqrt,
        UnOp::Sin => OpToken::Sin,
        UnOp::Cos => OpToken::Cos,
        UnOp::Tan => OpToken::Tan,
        UnOp::Sec => OpToken::Sec,
        UnOp::Csc => OpToken::Csc,
        UnOp::Cot => OpToken::Cot,
        UnOp::Ln => OpToken::Ln,
    }
}

fn bin_op_token(op: BinOp) -> OpToken {
    match op {
        BinOp::Plus => OpToken::Plus,
        BinOp::Times => OpToken::Times,
        BinOp::Divide => OpToken::Divide,
        BinOp::Power => OpToken::Power,
        BinOp::Root => OpToken::Root,
    }
}

/// Head token of a node: the label its parent's triple declares for it.
fn head_token(e: &Expr) -> Token {
    match e {
        Expr::Leaf(Leaf::Var) => Token::Var,
        Expr::Leaf(Leaf::ConstN) => Token::ConstN,
        Expr::Leaf(Leaf::Euler) => Token::Euler,
        Expr::Leaf(Leaf::Int(k)) => Token::Int(*k),
        Expr::Unary(op, _) => Token::Op(un_op_token(*op)),
        Expr::Binary(op, _, _) => Token::Op(bin_op_token(*op)),
    }
}

/// Serialize `e` in the given scheme.
///
/// Round-trips through [`decode`] for every canonical (normalized)
/// expression; the string spellings of negative integers assume the
/// canonical form where unary minus has been pushed into the literal.
pub fn encode(e: &Expr, scheme: Scheme) -> TokenSeq {
    let mut tokens = Vec::new();
    match scheme.format {
        Format::String => encode_string(e, scheme.direction, &mut tokens),
        Format::Subtree => encode_subtree(e, scheme.direction, &mut tokens),
    }
    TokenSeq { tokens, scheme }
}

fn push_string_leaf(leaf: &Leaf, out: &mut Vec<Token>, postfix: bool) {
    match leaf {
        Leaf::Int(k) if *k < 0 => {
            // Unary minus plus magnitude; in postfix order the magnitude
            // precedes the operator.
            if postfix {
                out.push(Token::Int(-*k));
                out.push(Token::Op(OpToken::Minus));
            } else {
                out.push(Token::Op(OpToken::Minus));
                out.push(Token::Int(-*k));
            }
        }
        Leaf::Int(k) => out.push(Token::Int(*k)),
        Leaf::Var => out.push(Token::Var),
        Leaf::ConstN => out.push(Token::ConstN),
        Leaf::Euler => out.push(Token::Euler),
    }
}

fn encode_string(e: &Expr, dir: Direction, out: &mut Vec<Token>) {
    match dir {
        Direction::Polish => match e {
            Expr::Leaf(leaf) => push_string_leaf(leaf, out, false),
            Expr::Unary(op, a) => {
                out.push(Token::Op(un_op_token(*op)));
                encode_string(a, dir, out);
            }
            Expr::Binary(op, a, b) => {
                out.push(Token::Op(bin_op_token(*op)));
                encode_string(a, dir, out);
                encode_string(b, dir, out);
            }
        },
        Direction::ReversePolish => match e {
            Expr::Leaf(leaf) => push_string_leaf(leaf, out, true),
            Expr::Unary(op, a) => {
                encode_string(a, dir, out);
                out.push(Token::Op(un_op_token(*op)));
            }
            Expr::Binary(op, a, b) => {
                encode_string(a, dir, out);
                encode_string(b, dir, out);
                out.push(Token::Op(bin_op_token(*op)));
            }
        },
    }
}

fn push_triple(e: &Expr, out: &mut Vec<Token>) {
    out.push(head_token(e));
    match e {
        Expr::Leaf(_) => {
            out.push(Token::Eos);
            out.push(Token::Eos);
        }
        Expr::Unary(_, a) => {
            out.push(head_token(a));
            out.push(Token::Eos);
        }
        Expr::Binary(_, a, b) => {
            out.push(head_token(a));
            out.push(head_token(b));
        }
    }
}

fn encode_subtree(e: &Expr, dir: Direction, out: &mut Vec<Token>) {
    match dir {
        Direction::Polish => {
            push_triple(e, out);
            match e {
                Expr::Leaf(_) => {}
                Expr::Unary(_, a) => encode_subtree(a, dir, out),
                Expr::Binary(_, a, b) => {
                    encode_subtree(a, dir, out);
                    encode_subtree(b, dir, out);
                }
            }
        }
        Direction::ReversePolish => {
            match e {
                Expr::Leaf(_) => {}
                Expr::Unary(_, a) => encode_subtree(a, dir, out),
                Expr::Binary(_, a, b) => {
                    encode_subtree(a, dir, out);
                    encode_subtree(b, dir, out);
                }
            }
            push_triple(e, out);
        }
    }
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

/// Decode a token sequence back into an expression; the inverse of
/// [`encode`] on well-formed input. Ungrammatical model output decodes to a
/// [`DecodeError`] and is scored as incorrect by the evaluator.
pub fn decode(seq: &TokenSeq) -> Result<Expr, DecodeError> {
    match (seq.scheme.format, seq.scheme.direction) {
        (Format::String, Direction::Polish) => {
            let mut pos = 0usize;
            let e = parse_prefix(&seq.tokens, &mut pos)?;
            if pos != seq.tokens.len() {
                return Err(DecodeError::TrailingTokens);
            }
            Ok(e)
        }
        (Format::String, Direction::ReversePolish) => parse_postfix(&seq.tokens),
        (Format::Subtree, Direction::Polish) => {
            let triples = as_triples(&seq.tokens)?;
            let mut pos = 0usize;
            let e = parse_subtree_prefix(&triples, &mut pos, None)?;
            if pos != triples.len() {
                return Err(DecodeError::TrailingTokens);
            }
            check_operand_distinctness(&e)?;
            Ok(e)
        }
        (Format::Subtree, Direction::ReversePolish) => {
            let triples = as_triples(&seq.tokens)?;
            let e = parse_subtree_postfix(&triples)?;
            check_operand_distinctness(&e)?;
            Ok(e)
        }
    }
}

fn leaf_of(tok: Token) -> Option<Expr> {
    match tok {
        Token::Var => Some(expr::x()),
        Token::ConstN => Some(expr::constant_n()),
        Token::Euler => Some(expr::euler()),
        Token::Int(k) => Some(expr::int(k)),
        _ => None,
    }
}

fn un_op_of(op: OpToken) -> Option<UnOp> {
    match op {
        OpToken::Minus => Some(UnOp::Minus),
        OpToken::Sqrt => Some(UnOp::Sqrt),
        OpToken::Sin => Some(UnOp::Sin),
        OpToken::Cos => Some(UnOp::Cos),
        OpToken::Tan => Some(UnOp::Tan),
        OpToken::Sec => Some(UnOp::Sec),
        OpToken::Csc => Some(UnOp::Csc),
        OpToken::Cot => Some(UnOp::Cot),
        OpToken::Ln => Some(UnOp::Ln),
        _ => None,
    }
}

fn bin_op_of(op: OpToken) -> Option<BinOp> {
    match op {
        OpToken::Plus => Some(BinOp::Plus),
        OpToken::Times => Some(BinOp::Times),
        OpToken::Divide => Some(BinOp::Divide),
        OpToken::Power => Some(BinOp::Power),
        OpToken::Root => Some(BinOp::Root),
        _ => None,
    }
}

/// Fold `minus` applied to a bare integer literal back into the literal;
/// this inverts the string spelling of negative integers.
fn apply_minus(operand: Expr) -> Expr {
    match operand.as_int() {
        Some(k) => expr::int(-k),
        None => expr::neg(operand),
    }
}

fn parse_prefix(tokens: &[Token], pos: &mut usize) -> Result<Expr, DecodeError> {
    let tok = *tokens.get(*pos).ok_or(DecodeError::Truncated)?;
    *pos += 1;
    if let Some(leaf) = leaf_of(tok) {
        return Ok(leaf);
    }
    let op = match tok {
        Token::Op(op) => op,
        _ => return Err(DecodeError::ArityMismatch),
    };
    if op.arity() == 1 {
        let a = parse_prefix(tokens, pos)?;
        let u = un_op_of(op).unwrap();
        if u == UnOp::Minus {
            Ok(apply_minus(a))
        } else {
            Ok(Expr::Unary(u, Box::new(a)))
        }
    } else {
        let a = parse_prefix(tokens, pos)?;
        let b = parse_prefix(tokens, pos)?;
        Ok(Expr::Binary(bin_op_of(op).unwrap(), Box::new(a), Box::new(b)))
    }
}

fn parse_postfix(tokens: &[Token]) -> Result<Expr, DecodeError> {
    let mut stack: Vec<Expr> = Vec::new();
    for &tok in tokens {
        if let Some(leaf) = leaf_of(tok) {
            stack.push(leaf);
            continue;
        }
        let op = match tok {
            Token::Op(op) => op,
            _ => return Err(DecodeError::ArityMismatch),
        };
        if op.arity() == 1 {
            let a = stack.pop().ok_or(DecodeError::ArityMismatch)?;
            let u = un_op_of(op).unwrap();
            if u == UnOp::Minus {
                stack.push(apply_minus(a));
            } else {
                stack.push(Expr::Unary(u, Box::new(a)));
            }
        } else {
            let b = stack.pop().ok_or(DecodeError::ArityMismatch)?;
            let a = stack.pop().ok_or(DecodeError::ArityMismatch)?;
            stack.push(Expr::Binary(bin_op_of(op).unwrap(), Box::new(a), Box::new(b)));
        }
    }
    match stack.len() {
        0 => Err(DecodeError::Truncated),
        1 => Ok(stack.pop().unwrap()),
        _ => Err(DecodeError::TrailingTokens),
    }
}

type Triple = (Token, Token, Token);

fn as_triples(tokens: &[Token]) -> Result<Vec<Triple>, DecodeError> {
    if tokens.is_empty() || tokens.len() % 3 != 0 {
        return Err(DecodeError::Truncated);
    }
    Ok(tokens.chunks(3).map(|c| (c[0], c[1], c[2])).collect())
}

/// Slot kinds a triple can declare for a node, derived from its parent token.
enum TripleShape {
    Leaf(Expr),
    Unary(UnOp, Token),
    Binary(BinOp, Token, Token),
}

fn shape_of(t: &Triple) -> Result<TripleShape, DecodeError> {
    let (p, l, r) = *t;
    if let Some(leaf) = leaf_of(p) {
        if l != Token::Eos || r != Token::Eos {
            return Err(DecodeError::ArityMismatch);
        }
        return Ok(TripleShape::Leaf(leaf));
    }
    let op = match p {
        Token::Op(op) => op,
        _ => return Err(DecodeError::ArityMismatch),
    };
    if op.arity() == 1 {
        if l == Token::Eos || r != Token::Eos {
            return Err(DecodeError::ArityMismatch);
        }
        Ok(TripleShape::Unary(un_op_of(op).unwrap(), l))
    } else {
        if l == Token::Eos || r == Token::Eos {
            return Err(DecodeError::ArityMismatch);
        }
        Ok(TripleShape::Binary(bin_op_of(op).unwrap(), l, r))
    }
}

fn parse_subtree_prefix(
    triples: &[Triple],
    pos: &mut usize,
    expected: Option<Token>,
) -> Result<Expr, DecodeError> {
    let triple = triples.get(*pos).ok_or(DecodeError::Truncated)?;
    *pos += 1;
    if let Some(want) = expected {
        if triple.0 != want {
            return Err(DecodeError::SubtreeLabelMismatch);
        }
    }
    match shape_of(triple)? {
        TripleShape::Leaf(e) => Ok(e),
        TripleShape::Unary(op, l) => {
            let child = parse_subtree_prefix(triples, pos, Some(l))?;
            Ok(Expr::Unary(op, Box::new(child)))
        }
        TripleShape::Binary(op, l, r) => {
            let left = parse_subtree_prefix(triples, pos, Some(l))?;
            let right = parse_subtree_prefix(triples, pos, Some(r))?;
            Ok(Expr::Binary(op, Box::new(left), Box::new(right)))
        }
    }
}

fn parse_subtree_postfix(triples: &[Triple]) -> Result<Expr, DecodeError> {
    // Completed subtrees paired with their head tokens.
    let mut stack: Vec<(Expr, Token)> = Vec::new();
    for triple in triples {
        let head = triple.0;
        match shape_of(triple)? {
            TripleShape::Leaf(e) => stack.push((e, head)),
            TripleShape::Unary(op, l) => {
                let (child, child_head) = stack.pop().ok_or(DecodeError::ArityMismatch)?;
                if child_head != l {
                    return Err(DecodeError::SubtreeLabelMismatch);
                }
                stack.push((Expr::Unary(op, Box::new(child)), head));
            }
            TripleShape::Binary(op, l, r) => {
                let (right, right_head) = stack.pop().ok_or(DecodeError::ArityMismatch)?;
                let (left, left_head) = stack.pop().ok_or(DecodeError::ArityMismatch)?;
                if left_head != l || right_head != r {
                    return Err(DecodeError::SubtreeLabelMismatch);
                }
                stack.push((Expr::Binary(op, Box::new(left), Box::new(right)), head));
            }
        }
    }
    match stack.len() {
        0 => Err(DecodeError::Truncated),
        1 => Ok(stack.pop().unwrap().0),
        _ => Err(DecodeError::TrailingTokens),
    }
}

/// In canonical trees the operands of `plus`, `times`, and `divide` are
/// always structurally distinct (equal operands collapse to `2t`, `t^2`, or
/// `1` during normalization), so a subtree stream declaring identical
/// operands under those nodes is inconsistent with the grammar that produced
/// the training data and is rejected as a label mismatch.
fn check_operand_distinctness(e: &Expr) -> Result<(), DecodeError> {
    match e {
        Expr::Leaf(_) => Ok(()),
        Expr::Unary(_, a) => check_operand_distinctness(a),
        Expr::Binary(op, a, b) => {
            if matches!(op, BinOp::Plus | BinOp::Times | BinOp::Divide) && a == b {
                return Err(DecodeError::SubtreeLabelMismatch);
            }
            check_operand_distinctness(a)?;
            check_operand_distinctness(b)
        }
    }
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Bijective token-to-id map with reserved ids for EOS, PAD, and SOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<Token>,
    ids: BTreeMap<Token, u32>,
}

pub const EOS_ID: u32 = 0;
pub const PAD_ID: u32 = 1;
pub const SOS_ID: u32 = 2;

impl Vocab {
    /// Build a vocabulary from observed corpus tokens.
    ///
    /// The reserved tokens, all 14 operators, and the three named leaves are
    /// always present; integer tokens are whatever the corpus used, sorted
    /// ascending. Ordering is deterministic so vocabularies rebuild
    /// identically from identical corpora.
    pub fn from_tokens<'a, I: IntoIterator<Item = &'a Token>>(observed: I) -> Vocab {
        let mut ints: Vec<i64> = Vec::new();
        for t in observed {
            if let Token::Int(k) = t {
                if !ints.contains(k) {
                    ints.push(*k);
                }
            }
        }
        ints.sort_unstable();
        let mut tokens = vec![Token::Eos, Token::Pad, Token::Sos];
        tokens.extend(OpToken::ALL.iter().map(|op| Token::Op(*op)));
        tokens.push(Token::Var);
        tokens.push(Token::ConstN);
        tokens.push(Token::Euler);
        tokens.extend(ints.into_iter().map(Token::Int));
        Vocab::from_ordered(tokens)
    }

    /// Rebuild a vocabulary from an explicit token ordering (checkpoints and
    /// manifests persist this list verbatim).
    pub fn from_ordered(tokens: Vec<Token>) -> Vocab {
        assert_eq!(tokens[EOS_ID as usize], Token::Eos);
        assert_eq!(tokens[PAD_ID as usize], Token::Pad);
        assert_eq!(tokens[SOS_ID as usize], Token::Sos);
        let mut ids = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            let prev = ids.insert(*t, i as u32);
            assert!(prev.is_none(), "duplicate token {t} in vocabulary");
        }
        Vocab { tokens, ids }
    }

    pub fn id(&self, t: &Token) -> Option<u32> {
        self.ids.get(t).copied()
    }

    pub fn token(&self, id: u32) -> Option<&Token> {
        self.tokens.get(id as usize)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }
}

/// Map a token sequence to vocabulary ids.
pub fn ids_of(seq: &TokenSeq, vocab: &Vocab) -> Result<Vec<u32>, DecodeError> {
    seq.tokens
        .iter()
        .map(|t| vocab.id(t).ok_or_else(|| DecodeError::UnknownToken(t.to_string())))
        .collect()
}

/// Inverse of [`ids_of`].
pub fn tokens_of(ids: &[u32], vocab: &Vocab, scheme: Scheme) -> Result<TokenSeq, DecodeError> {
    let tokens = ids
        .iter()
        .map(|&i| {
            vocab
                .token(i)
                .copied()
                .ok_or_else(|| DecodeError::UnknownToken(format!("#{i}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TokenSeq { tokens, scheme })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{cos, int, mul, neg, normalize, pow, sin, x};
    use crate::fuzz::random_normalized;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn x_cos_x() -> Expr {
        mul(x(), cos(x()))
    }

    #[test]
    fn golden_string_polish() {
        let seq = encode(&x_cos_x(), Scheme::STRING_POLISH);
        assert_eq!(seq.to_text(), "times x cos x");
    }

    #[test]
    fn golden_string_reverse_polish() {
        let seq = encode(&x_cos_x(), Scheme::STRING_REVERSE);
        assert_eq!(seq.to_text(), "x x cos times");
    }

    #[test]
    fn golden_subtree_polish() {
        let seq = encode(&x_cos_x(), Scheme::SUBTREE_POLISH);
        assert_eq!(seq.to_text(), "times x cos x EOS EOS cos x EOS x EOS EOS");
    }

    #[test]
    fn golden_subtree_reverse_polish() {
        let seq = encode(&x_cos_x(), Scheme::SUBTREE_REVERSE);
        assert_eq!(seq.to_text(), "x EOS EOS x EOS EOS cos x EOS times x cos");
    }

    #[test]
    fn negative_integer_spellings() {
        let e = pow(x(), crate::expr::div(int(-7), int(2)));
        let s = encode(&e, Scheme::STRING_POLISH);
        assert_eq!(s.to_text(), "power x divide minus 7 2");
        let t = encode(&e, Scheme::SUBTREE_POLISH);
        assert_eq!(t.to_text(), "power x divide x EOS EOS divide -7 2 -7 EOS EOS 2 EOS EOS");
        assert_eq!(decode(&s).unwrap(), e);
        assert_eq!(decode(&t).unwrap(), e);
    }

    #[test]
    fn negative_integer_reverse_string() {
        let e = int(-7);
        let s = encode(&e, Scheme::STRING_REVERSE);
        assert_eq!(s.to_text(), "7 minus");
        assert_eq!(decode(&s).unwrap(), e);
    }

    #[test]
    fn malformed_supp_table5_sequence() {
        let seq = TokenSeq::from_text("divide n n n EOS EOS n EOS EOS", Scheme::SUBTREE_POLISH).unwrap();
        assert_eq!(decode(&seq), Err(DecodeError::SubtreeLabelMismatch));
    }

    #[test]
    fn truncated_string() {
        let seq = TokenSeq::from_text("times x", Scheme::STRING_POLISH).unwrap();
        assert_eq!(decode(&seq), Err(DecodeError::Truncated));
    }

    #[test]
    fn trailing_tokens_string() {
        let seq = TokenSeq::from_text("times x x x", Scheme::STRING_POLISH).unwrap();
        assert_eq!(decode(&seq), Err(DecodeError::TrailingTokens));
    }

    #[test]
    fn mismatched_subtree_label() {
        // Parent declares a `cos` child but the expansion triple is `sin`.
        let seq = TokenSeq::from_text("times x cos x EOS EOS sin x EOS x EOS EOS", Scheme::SUBTREE_POLISH).unwrap();
        assert_eq!(decode(&seq), Err(DecodeError::SubtreeLabelMismatch));
    }

    #[test]
    fn unknown_token_text() {
        assert_eq!(
            TokenSeq::from_text("times x frob", Scheme::STRING_POLISH),
            Err(DecodeError::UnknownToken("frob".to_string()))
        );
    }

    #[test]
    fn supp_table5_correct_answer_round_trip() {
        // The paper's printed subtree encoding for cot(x)*csc(x)^2.
        let e = mul(crate::expr::cot(x()), pow(crate::expr::csc(x()), int(2)));
        let seq = encode(&e, Scheme::SUBTREE_POLISH);
        assert_eq!(
            seq.to_text(),
            "times cot power cot x EOS x EOS EOS power csc 2 csc x EOS x EOS EOS 2 EOS EOS"
        );
        assert_eq!(decode(&seq).unwrap(), e);
    }

    #[test]
    fn subtree_length_is_three_times_node_count() {
        let e = normalize(&mul(neg(sin(x())), pow(x(), int(3))));
        let seq = encode(&e, Scheme::SUBTREE_POLISH);
        assert_eq!(seq.len(), 3 * e.node_count());
    }

    #[test]
    fn vocab_reserved_ids() {
        let v = Vocab::from_tokens([Token::Int(3), Token::Int(-7)].iter());
        assert_eq!(v.id(&Token::Eos), Some(EOS_ID));
        assert_eq!(v.id(&Token::Pad), Some(PAD_ID));
        assert_eq!(v.id(&Token::Sos), Some(SOS_ID));
        assert_eq!(v.token(0), Some(&Token::Eos));
        // All operators and named leaves are always mapped.
        for op in OpToken::ALL {
            assert!(v.id(&Token::Op(op)).is_some());
        }
        assert!(v.id(&Token::Var).is_some());
        assert!(v.id(&Token::Int(-7)).unwrap() < v.id(&Token::Int(3)).unwrap());
    }

    #[test]
    fn ids_round_trip() {
        let v = Vocab::from_tokens([Token::Int(2)].iter());
        let seq = encode(&x_cos_x(), Scheme::STRING_POLISH);
        let ids = ids_of(&seq, &v).unwrap();
        let back = tokens_of(&ids, &v, seq.scheme).unwrap();
        assert_eq!(back, seq);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn round_trip_all_schemes(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = random_normalized(&mut rng, 7);
            for scheme in [
                Scheme::STRING_POLISH,
                Scheme::STRING_REVERSE,
                Scheme::SUBTREE_POLISH,
                Scheme::SUBTREE_REVERSE,
            ] {
                let seq = encode(&e, scheme);
                let back = decode(&seq);
                prop_assert_eq!(back.as_ref(), Ok(&e), "scheme {:?} failed for {}", scheme, e);
                if scheme.format == Format::Subtree {
                    prop_assert_eq!(seq.len(), 3 * e.node_count());
                } else if scheme.direction == Direction::Polish {
                    let rev = encode(&e, Scheme::STRING_REVERSE);
                    let mut a = seq.tokens.clone();
                    let mut b = rev.tokens.clone();
                    a.sort();
                    b.sort();
                    prop_assert_eq!(a, b, "reverse polish is not a permutation");
                }
            }
        }
    }
}
