use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// Co-safe formula in negation normal form. `And`/`Or` operands are kept
/// sorted and deduplicated so that syntactically equal residuals compare
/// equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Formula {
    True,
    False,
    Atom(String),
    NotAtom(String),
    And(BTreeSet<Formula>),
    Or(BTreeSet<Formula>),
    Next(Box<Formula>),
    Eventually(Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn atom(p: &str) -> Self {
        Formula::Atom(p.to_string())
    }

    pub fn next(f: Formula) -> Self {
        Formula::Next(Box::new(f))
    }

    pub fn eventually(f: Formula) -> Self {
        Formula::Eventually(Box::new(f))
    }

    pub fn until(a: Formula, b: Formula) -> Self {
        Formula::Until(Box::new(a), Box::new(b))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Self::and_all([a, b])
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Self::or_all([a, b])
    }

    pub fn and_all(items: impl IntoIterator<Item = Formula>) -> Self {
        let mut set = BTreeSet::new();
        for f in items {
            match f {
                Formula::True => {}
                Formula::False => return Formula::False,
                Formula::And(inner) => set.extend(inner),
                other => {
                    set.insert(other);
                }
            }
        }
        match set.len() {
            0 => Formula::True,
            1 => set.into_iter().next().unwrap(),
            _ => Formula::And(set),
        }
    }

    pub fn or_all(items: impl IntoIterator<Item = Formula>) -> Self {
        let mut set = BTreeSet::new();
        for f in items {
            match f {
                Formula::False => {}
                Formula::True => return Formula::True,
                Formula::Or(inner) => set.extend(inner),
                other => {
                    set.insert(other);
                }
            }
        }
        match set.len() {
            0 => Formula::False,
            1 => set.into_iter().next().unwrap(),
            _ => Formula::Or(set),
        }
    }

    /// Equivalent disjunctive normal form over the non-Boolean subformulas,
    /// with contradictory and subsumed clauses removed. Progression keeps
    /// residuals in this form so that they stay shallow and equal residuals
    /// compare equal.
    pub fn dnf(&self) -> Formula {
        let clauses = self.clauses();
        Formula::or_all(clauses.into_iter().map(Formula::and_all))
    }

    fn clauses(&self) -> BTreeSet<BTreeSet<Formula>> {
        match self {
            Formula::True => BTreeSet::from([BTreeSet::new()]),
            Formula::False => BTreeSet::new(),
            Formula::Or(s) => minimal(s.iter().flat_map(|f| f.clauses()).collect()),
            Formula::And(s) => {
                let mut acc = BTreeSet::from([BTreeSet::new()]);
                for f in s {
                    let rhs = f.clauses();
                    let mut next = BTreeSet::new();
                    for a in &acc {
                        for b in &rhs {
                            let c: BTreeSet<Formula> = a.union(b).cloned().collect();
                            if !contradictory(&c) {
                                next.insert(c);
                            }
                        }
                    }
                    acc = minimal(next);
                    if acc.is_empty() {
                        break;
                    }
                }
                acc
            }
            leaf => BTreeSet::from([BTreeSet::from([leaf.clone()])]),
        }
    }

    /// Atomic propositions occurring in the formula.
    pub fn atoms(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut BTreeSet<String>) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Atom(p) | Formula::NotAtom(p) => {
                out.insert(p.clone());
            }
            Formula::And(s) | Formula::Or(s) => s.iter().for_each(|f| f.collect_atoms(out)),
            Formula::Next(f) | Formula::Eventually(f) => f.collect_atoms(out),
            Formula::Until(a, b) => {
                a.collect_atoms(out);
                b.collect_atoms(out);
            }
        }
    }

    /// Residual obligation after reading one letter (the set of true
    /// propositions).
    pub fn progress(&self, letter: &BTreeSet<String>) -> Formula {
        match self {
            Formula::True => Formula::True,
            Formula::False => Formula::False,
            Formula::Atom(p) => {
                if letter.contains(p) {
                    Formula::True
                } else {
                    Formula::False
                }
            }
            Formula::NotAtom(p) => {
                if letter.contains(p) {
                    Formula::False
                } else {
                    Formula::True
                }
            }
            Formula::And(s) => Formula::and_all(s.iter().map(|f| f.progress(letter))),
            Formula::Or(s) => Formula::or_all(s.iter().map(|f| f.progress(letter))),
            Formula::Next(f) => (**f).clone(),
            Formula::Eventually(f) => Formula::or(f.progress(letter), self.clone()),
            Formula::Until(a, b) => Formula::or(
                b.progress(letter),
                Formula::and(a.progress(letter), self.clone()),
            ),
        }
    }
}

fn contradictory(clause: &BTreeSet<Formula>) -> bool {
    clause.iter().any(|f| match f {
        Formula::Atom(p) => clause.contains(&Formula::NotAtom(p.clone())),
        _ => false,
    })
}

/// Drops clauses that contain another clause.
fn minimal(clauses: BTreeSet<BTreeSet<Formula>>) -> BTreeSet<BTreeSet<Formula>> {
    let mut sorted: Vec<BTreeSet<Formula>> = clauses.into_iter().collect();
    sorted.sort_by_key(|c| c.len());
    let mut kept: Vec<BTreeSet<Formula>> = Vec::new();
    for c in sorted {
        if !kept.iter().any(|k| k.is_subset(&c)) {
            kept.push(c);
        }
    }
    kept.into_iter().collect()
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, s: &BTreeSet<Formula>, op: &str| {
            write!(f, "(")?;
            for (i, g) in s.iter().enumerate() {
                if i > 0 {
                    write!(f, " {op} ")?;
                }
                write!(f, "{g}")?;
            }
            write!(f, ")")
        };
        match self {
            Formula::True => write!(f, "true"),
            Formula::False => write!(f, "false"),
            Formula::Atom(p) => write!(f, "{p}"),
            Formula::NotAtom(p) => write!(f, "!{p}"),
            Formula::And(s) => join(f, s, "&"),
            Formula::Or(s) => join(f, s, "|"),
            Formula::Next(g) => write!(f, "X {g}"),
            Formula::Eventually(g) => write!(f, "F {g}"),
            Formula::Until(a, b) => write!(f, "({a} U {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Not,
    And,
    Or,
    Next,
    Eventually,
    Until,
    LParen,
    RParen,
    True,
    False,
}

fn syntax(position: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        position,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let tok = match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '!' => Tok::Not,
            '&' => Tok::And,
            '|' => Tok::Or,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let tok = match word.as_str() {
                    "X" => Tok::Next,
                    "F" => Tok::Eventually,
                    "U" => Tok::Until,
                    "true" => Tok::True,
                    "false" => Tok::False,
                    "G" => {
                        return Err(syntax(
                            start,
                            "'G' (always) is outside the co-safe fragment",
                        ))
                    }
                    _ => Tok::Ident(word),
                };
                out.push((start, tok));
                continue;
            }
            other => return Err(syntax(i, format!("unexpected character '{other}'"))),
        };
        out.push((i, tok));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn or_expr(&mut self) -> Result<Formula> {
        let mut lhs = self.and_expr()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            lhs = Formula::or(lhs, self.and_expr()?);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Formula> {
        let mut lhs = self.until_expr()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            lhs = Formula::and(lhs, self.until_expr()?);
        }
        Ok(lhs)
    }

    // right associative
    fn until_expr(&mut self) -> Result<Formula> {
        let lhs = self.unary()?;
        if self.peek() == Some(&Tok::Until) {
            self.pos += 1;
            let rhs = self.until_expr()?;
            return Ok(Formula::until(lhs, rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula> {
        let at = self.here();
        match self.peek().cloned() {
            Some(Tok::Not) => {
                self.pos += 1;
                match self.peek().cloned() {
                    Some(Tok::Ident(p)) => {
                        self.pos += 1;
                        Ok(Formula::NotAtom(p))
                    }
                    _ => Err(syntax(at, "negation applies only to atomic propositions")),
                }
            }
            Some(Tok::Next) => {
                self.pos += 1;
                Ok(Formula::next(self.unary()?))
            }
            Some(Tok::Eventually) => {
                self.pos += 1;
                Ok(Formula::eventually(self.unary()?))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.or_expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(syntax(self.here(), "expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Tok::Ident(p)) => {
                self.pos += 1;
                Ok(Formula::Atom(p))
            }
            Some(Tok::True) => {
                self.pos += 1;
                Ok(Formula::True)
            }
            Some(Tok::False) => {
                self.pos += 1;
                Ok(Formula::False)
            }
            Some(t) => Err(syntax(
                at,
                format!("unexpected {t:?}; expected proposition, '!', 'X', 'F' or '('"),
            )),
            None => Err(syntax(at, "unexpected end of formula")),
        }
    }
}

/// Parses `atom | !atom | (f) | f & f | f '|' f | X f | F f | f U f`.
/// Unary operators bind tightest, then `U` (right associative), `&`, `|`.
pub fn parse_cosafe(text: &str) -> Result<Formula> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.chars().count(),
    };
    let f = p.or_expr()?;
    if p.pos < p.toks.len() {
        return Err(syntax(p.here(), "unexpected trailing input"));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eventually_atom() {
        assert_eq!(
            parse_cosafe("F r").unwrap(),
            Formula::eventually(Formula::atom("r"))
        );
    }

    #[test]
    fn nested_eventually() {
        let f = parse_cosafe("F (y & F g)").unwrap();
        let want = Formula::eventually(Formula::and(
            Formula::atom("y"),
            Formula::eventually(Formula::atom("g")),
        ));
        assert_eq!(f, want);
    }

    #[test]
    fn negated_non_atom_rejected() {
        match parse_cosafe("!F r") {
            Err(Error::Syntax { position, .. }) => assert_eq!(position, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn always_rejected() {
        assert!(matches!(
            parse_cosafe("a & G b"),
            Err(Error::Syntax { position: 4, .. })
        ));
    }

    #[test]
    fn precedence() {
        // a | b & c U d  ==  a | (b & (c U d))
        let f = parse_cosafe("a | b & c U d").unwrap();
        let want = Formula::or(
            Formula::atom("a"),
            Formula::and(
                Formula::atom("b"),
                Formula::until(Formula::atom("c"), Formula::atom("d")),
            ),
        );
        assert_eq!(f, want);
        let f = parse_cosafe("X a U b").unwrap();
        assert_eq!(
            f,
            Formula::until(Formula::next(Formula::atom("a")), Formula::atom("b"))
        );
    }

    #[test]
    fn errors_carry_positions() {
        assert!(matches!(
            parse_cosafe("(a & b"),
            Err(Error::Syntax { position: 6, .. })
        ));
        assert!(matches!(
            parse_cosafe("a b"),
            Err(Error::Syntax { position: 2, .. })
        ));
        assert!(matches!(
            parse_cosafe("a # b"),
            Err(Error::Syntax { position: 2, .. })
        ));
    }
}
