//! In-process triple store answering a small SPARQL subset.
//!
//! Supported: `PREFIX`, `SELECT [DISTINCT|REDUCED]` over variables, `*` or a
//! `COUNT` aggregate, `ASK`, basic graph patterns with `;`/`,` shorthand and
//! `a`, `FILTER` expressions, `ORDER BY`, `LIMIT` and `OFFSET`. Enough to
//! execute template-generated question-answering queries against a fixture
//! graph.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde_json::{json, Value as Json};

use crate::error::{Error, Result};
use crate::sparqltok::{is_variable, tokenize_query, PrefixTable};

pub const XSD: &str = "http://www.w3.org/2001/XMLSchema#";
const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Iri(String),
    Literal {
        lexical: String,
        datatype: Option<String>,
        lang: Option<String>,
    },
    Blank(String),
}

impl Term {
    pub fn plain(lexical: impl Into<String>) -> Self {
        Term::Literal {
            lexical: lexical.into(),
            datatype: None,
            lang: None,
        }
    }

    pub fn typed(lexical: impl Into<String>, datatype: impl Into<String>) -> Self {
        Term::Literal {
            lexical: lexical.into(),
            datatype: Some(datatype.into()),
            lang: None,
        }
    }

    fn numeric(&self) -> Option<f64> {
        match self {
            Term::Literal {
                lexical,
                datatype: Some(dt),
                ..
            } if dt.starts_with(XSD)
                && matches!(
                    &dt[XSD.len()..],
                    "integer" | "decimal" | "double" | "float" | "int" | "long" | "short"
                        | "nonNegativeInteger" | "positiveInteger"
                ) =>
            {
                lexical.parse().ok()
            }
            _ => None,
        }
    }

    fn string_value(&self) -> String {
        match self {
            Term::Iri(i) => i.clone(),
            Term::Literal { lexical, .. } => lexical.clone(),
            Term::Blank(b) => b.clone(),
        }
    }

    /// SPARQL JSON results encoding.
    pub fn to_json(&self) -> Json {
        match self {
            Term::Iri(i) => json!({"type": "uri", "value": i}),
            Term::Blank(b) => json!({"type": "bnode", "value": b}),
            Term::Literal {
                lexical,
                datatype,
                lang,
            } => {
                let mut obj = json!({"type": "literal", "value": lexical});
                if let Some(l) = lang {
                    obj["xml:lang"] = json!(l);
                } else if let Some(dt) = datatype {
                    obj["datatype"] = json!(dt);
                }
                obj
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: Term,
    pub predicate: Term,
    pub object: Term,
}

#[derive(Debug, Clone, PartialEq)]
enum Pattern {
    Var(String),
    Const(Term),
}

#[derive(Debug, Clone, PartialEq)]
struct TriplePattern {
    s: Pattern,
    p: Pattern,
    o: Pattern,
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Or(Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    Neg(Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    Arith(char, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
    Var(String),
    Const(Term),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
enum Projection {
    All,
    Vars(Vec<String>),
    Count {
        var: Option<String>,
        distinct: bool,
        alias: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Form {
    Ask,
    Select { distinct: bool, projection: Projection },
}

#[derive(Debug, Clone, PartialEq)]
struct Query {
    form: Form,
    patterns: Vec<TriplePattern>,
    filters: Vec<Expr>,
    order: Vec<(Expr, bool)>,
    limit: Option<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryResult {
    Boolean(bool),
    Solutions {
        vars: Vec<String>,
        rows: Vec<Vec<Option<Term>>>,
    },
}

impl QueryResult {
    /// Standard SPARQL JSON results document.
    pub fn to_json(&self) -> Json {
        match self {
            QueryResult::Boolean(b) => json!({"head": {}, "boolean": b}),
            QueryResult::Solutions { vars, rows } => {
                let bindings: Vec<Json> = rows
                    .iter()
                    .map(|row| {
                        let mut obj = serde_json::Map::new();
                        for (v, t) in vars.iter().zip(row) {
                            if let Some(t) = t {
                                obj.insert(v.clone(), t.to_json());
                            }
                        }
                        Json::Object(obj)
                    })
                    .collect();
                json!({"head": {"vars": vars}, "results": {"bindings": bindings}})
            }
        }
    }
}

/// An immutable in-memory RDF graph.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    triples: Vec<Triple>,
    prefixes: PrefixTable,
}

type Solution = HashMap<String, Term>;

impl Graph {
    pub fn new(prefixes: PrefixTable) -> Self {
        Self {
            triples: Vec::new(),
            prefixes,
        }
    }

    pub fn prefixes(&self) -> &PrefixTable {
        &self.prefixes
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn insert(&mut self, triple: Triple) {
        if !self.triples.contains(&triple) {
            self.triples.push(triple);
        }
    }

    /// Expands a prefixed name or IRI token to a term.
    pub fn iri(&self, token: &str) -> Result<Term> {
        self.prefixes
            .expand(token)
            .map(Term::Iri)
            .ok_or_else(|| Error::Query(format!("cannot expand `{token}`")))
    }

    /// Adds triples written in a Turtle subset: `@prefix` lines and
    /// `subject predicate object .` statements with `;` and `,` shorthand.
    pub fn load_turtle(&mut self, text: &str) -> Result<()> {
        let tokens = tokenize_query(text).map_err(|e| Error::Query(e.to_string()))?;
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            prefixes: self.prefixes.clone(),
        };
        while !parser.done() {
            if parser.peek_is("@prefix") || parser.peek_is("prefix") {
                parser.pos += 1;
                parser.parse_prefix_decl()?;
                parser.eat(".");
                continue;
            }
            let block = parser.parse_triples_block()?;
            for tp in block {
                match (tp.s, tp.p, tp.o) {
                    (Pattern::Const(s), Pattern::Const(p), Pattern::Const(o)) => self.insert(Triple {
                        subject: s,
                        predicate: p,
                        object: o,
                    }),
                    _ => return Err(Error::Query("variables are not allowed in data".into())),
                }
            }
            if !parser.eat(".") && !parser.done() {
                return Err(parser.unexpected());
            }
        }
        self.prefixes = parser.prefixes;
        Ok(())
    }

    pub fn from_turtle_file(path: &Path, prefixes: PrefixTable) -> Result<Self> {
        let mut g = Graph::new(prefixes);
        g.load_turtle(&std::fs::read_to_string(path)?)?;
        Ok(g)
    }

    pub fn query(&self, text: &str) -> Result<QueryResult> {
        let tokens = tokenize_query(text).map_err(|e| Error::Query(e.to_string()))?;
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            prefixes: self.prefixes.clone(),
        };
        let query = parser.parse_query()?;
        Ok(self.evaluate(&query))
    }

    fn matches<'a>(&'a self, tp: &'a TriplePattern, sol: &'a Solution) -> impl Iterator<Item = Solution> + 'a {
        self.triples.iter().filter_map(move |t| {
            let mut out = sol.clone();
            for (pat, term) in [(&tp.s, &t.subject), (&tp.p, &t.predicate), (&tp.o, &t.object)] {
                match pat {
                    Pattern::Const(c) => {
                        if c != term {
                            return None;
                        }
                    }
                    Pattern::Var(v) => match out.get(v) {
                        Some(bound) if bound != term => return None,
                        Some(_) => {}
                        None => {
                            out.insert(v.clone(), term.clone());
                        }
                    },
                }
            }
            Some(out)
        })
    }

    fn evaluate(&self, q: &Query) -> QueryResult {
        let mut sols: Vec<Solution> = vec![Solution::new()];
        for tp in &q.patterns {
            sols = sols.iter().flat_map(|s| self.matches(tp, s)).collect();
            if sols.is_empty() {
                break;
            }
        }
        sols.retain(|s| q.filters.iter().all(|f| ebv(&eval(f, s)).unwrap_or(false)));

        match &q.form {
            Form::Ask => QueryResult::Boolean(!sols.is_empty()),
            Form::Select {
                distinct,
                projection,
            } => {
                if !q.order.is_empty() {
                    sols.sort_by(|a, b| {
                        for (e, asc) in &q.order {
                            let ord = compare_values(&eval(e, a), &eval(e, b));
                            if ord != Ordering::Equal {
                                return if *asc { ord } else { ord.reverse() };
                            }
                        }
                        Ordering::Equal
                    });
                }
                let (vars, mut rows) = match projection {
                    Projection::Count {
                        var,
                        distinct: count_distinct,
                        alias,
                    } => {
                        let n = match var {
                            Some(v) => {
                                let vals: Vec<&Term> = sols.iter().filter_map(|s| s.get(v)).collect();
                                if *count_distinct {
                                    vals.into_iter().collect::<BTreeSet<_>>().len()
                                } else {
                                    vals.len()
                                }
                            }
                            None => sols.len(),
                        };
                        (
                            vec![alias.clone()],
                            vec![vec![Some(Term::typed(n.to_string(), format!("{XSD}integer")))]],
                        )
                    }
                    Projection::All => {
                        let mut vars: Vec<String> = Vec::new();
                        for tp in &q.patterns {
                            for p in [&tp.s, &tp.p, &tp.o] {
                                if let Pattern::Var(v) = p {
                                    if !vars.contains(v) {
                                        vars.push(v.clone());
                                    }
                                }
                            }
                        }
                        let rows = project(&sols, &vars);
                        (vars, rows)
                    }
                    Projection::Vars(vars) => (vars.clone(), project(&sols, vars)),
                };
                if *distinct {
                    let mut seen = BTreeSet::new();
                    rows.retain(|r| seen.insert(r.clone()));
                }
                let rows: Vec<_> = rows
                    .into_iter()
                    .skip(q.offset)
                    .take(q.limit.unwrap_or(usize::MAX))
                    .collect();
                QueryResult::Solutions { vars, rows }
            }
        }
    }
}

fn project(sols: &[Solution], vars: &[String]) -> Vec<Vec<Option<Term>>> {
    sols.iter()
        .map(|s| vars.iter().map(|v| s.get(v).cloned()).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// expression evaluation

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Term(Term),
    Num(f64),
    Bool(bool),
    Str(String),
}

fn to_num(v: &Value) -> Option<f64> {
    match v {
        Value::Num(n) => Some(*n),
        Value::Term(t) => t.numeric(),
        _ => None,
    }
}

fn to_str(v: &Value) -> Option<String> {
    match v {
        Value::Str(s) => Some(s.clone()),
        Value::Term(t) => Some(t.string_value()),
        Value::Num(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
    }
}

fn ebv(v: &Option<Value>) -> Option<bool> {
    match v.as_ref()? {
        Value::Bool(b) => Some(*b),
        Value::Num(n) => Some(*n != 0.0),
        Value::Str(s) => Some(!s.is_empty()),
        Value::Term(t) => {
            if let Some(n) = t.numeric() {
                return Some(n != 0.0);
            }
            match t {
                Term::Literal {
                    lexical,
                    datatype: Some(dt),
                    ..
                } if dt == &format!("{XSD}boolean") => Some(lexical == "true"),
                Term::Literal { lexical, .. } => Some(!lexical.is_empty()),
                _ => None,
            }
        }
    }
}

fn compare_values(a: &Option<Value>, b: &Option<Value>) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, _) => Ordering::Less,
        (_, None) => Ordering::Greater,
        (Some(a), Some(b)) => match (to_num(a), to_num(b)) {
            (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
            _ => to_str(a).cmp(&to_str(b)),
        },
    }
}

fn eval(e: &Expr, s: &Solution) -> Option<Value> {
    Some(match e {
        Expr::Var(v) => Value::Term(s.get(v)?.clone()),
        Expr::Const(t) => Value::Term(t.clone()),
        Expr::Or(a, b) => {
            let l = ebv(&eval(a, s));
            let r = ebv(&eval(b, s));
            match (l, r) {
                (Some(true), _) | (_, Some(true)) => Value::Bool(true),
                (Some(false), Some(false)) => Value::Bool(false),
                _ => return None,
            }
        }
        Expr::And(a, b) => {
            let l = ebv(&eval(a, s));
            let r = ebv(&eval(b, s));
            match (l, r) {
                (Some(false), _) | (_, Some(false)) => Value::Bool(false),
                (Some(true), Some(true)) => Value::Bool(true),
                _ => return None,
            }
        }
        Expr::Not(a) => Value::Bool(!ebv(&eval(a, s))?),
        Expr::Neg(a) => Value::Num(-to_num(&eval(a, s)?)?),
        Expr::Arith(op, a, b) => {
            let x = to_num(&eval(a, s)?)?;
            let y = to_num(&eval(b, s)?)?;
            Value::Num(match op {
                '+' => x + y,
                '-' => x - y,
                '*' => x * y,
                _ => {
                    if y == 0.0 {
                        return None;
                    }
                    x / y
                }
            })
        }
        Expr::Cmp(op, a, b) => {
            let l = eval(a, s)?;
            let r = eval(b, s)?;
            let ord = match (to_num(&l), to_num(&r)) {
                (Some(x), Some(y)) => x.partial_cmp(&y)?,
                _ => match (&l, &r) {
                    (Value::Term(Term::Iri(x)), Value::Term(Term::Iri(y))) => {
                        if matches!(op, CmpOp::Eq | CmpOp::Ne) {
                            x.cmp(y)
                        } else {
                            return None;
                        }
                    }
                    (Value::Term(x @ Term::Literal { .. }), Value::Term(y @ Term::Literal { .. }))
                        if matches!(op, CmpOp::Eq | CmpOp::Ne) =>
                    {
                        if x == y {
                            Ordering::Equal
                        } else {
                            Ordering::Less
                        }
                    }
                    (Value::Term(Term::Iri(_)), _) | (_, Value::Term(Term::Iri(_))) => {
                        if matches!(op, CmpOp::Eq | CmpOp::Ne) {
                            Ordering::Less
                        } else {
                            return None;
                        }
                    }
                    _ => to_str(&l)?.cmp(&to_str(&r)?),
                },
            };
            Value::Bool(match op {
                CmpOp::Eq => ord == Ordering::Equal,
                CmpOp::Ne => ord != Ordering::Equal,
                CmpOp::Lt => ord == Ordering::Less,
                CmpOp::Gt => ord == Ordering::Greater,
                CmpOp::Le => ord != Ordering::Greater,
                CmpOp::Ge => ord != Ordering::Less,
            })
        }
        Expr::Call(name, args) => {
            if name == "bound" {
                return Some(Value::Bool(matches!(args.first(), Some(Expr::Var(v)) if s.contains_key(v))));
            }
            let vals: Vec<Value> = args.iter().map(|a| eval(a, s)).collect::<Option<_>>()?;
            let str_arg = |i: usize| vals.get(i).and_then(to_str);
            match name.as_str() {
                "str" => Value::Str(str_arg(0)?),
                "lcase" => Value::Str(str_arg(0)?.to_lowercase()),
                "ucase" => Value::Str(str_arg(0)?.to_uppercase()),
                "strlen" => Value::Num(str_arg(0)?.chars().count() as f64),
                "contains" => Value::Bool(str_arg(0)?.contains(&str_arg(1)?)),
                "strstarts" => Value::Bool(str_arg(0)?.starts_with(&str_arg(1)?)),
                "strends" => Value::Bool(str_arg(0)?.ends_with(&str_arg(1)?)),
                "regex" => {
                    let (hay, pat) = (str_arg(0)?, str_arg(1)?);
                    let insensitive = str_arg(2).is_some_and(|f| f.contains('i'));
                    if insensitive {
                        Value::Bool(hay.to_lowercase().contains(&pat.to_lowercase()))
                    } else {
                        Value::Bool(hay.contains(&pat))
                    }
                }
                "lang" => match vals.first()? {
                    Value::Term(Term::Literal { lang, .. }) => Value::Str(lang.clone().unwrap_or_default()),
                    _ => return None,
                },
                "year" => Value::Num(str_arg(0)?.get(..4)?.parse().ok()?),
                "concat" => Value::Str(vals.iter().filter_map(to_str).collect()),
                _ => return None,
            }
        }
    })
}

// ---------------------------------------------------------------------------
// parsing

struct Parser<'a> {
    tokens: &'a [String],
    pos: usize,
    prefixes: PrefixTable,
}

impl<'a> Parser<'a> {
    fn done(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn peek(&self) -> Option<&str> {
        self.tokens.get(self.pos).map(String::as_str)
    }

    fn peek_is(&self, kw: &str) -> bool {
        self.peek().is_some_and(|t| t.eq_ignore_ascii_case(kw))
    }

    fn eat(&mut self, kw: &str) -> bool {
        if self.peek_is(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kw: &str) -> Result<()> {
        if self.eat(kw) {
            Ok(())
        } else {
            Err(self.unexpected())
        }
    }

    fn unexpected(&self) -> Error {
        match self.peek() {
            Some(t) => Error::Query(format!("unexpected token `{t}` at position {}", self.pos)),
            None => Error::Query("unexpected end of query".into()),
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        let t = self.tokens.get(self.pos).ok_or_else(|| self.unexpected())?;
        self.pos += 1;
        Ok(t)
    }

    fn parse_prefix_decl(&mut self) -> Result<()> {
        let name = self.next()?;
        let prefix = name
            .strip_suffix(':')
            .ok_or_else(|| Error::Query(format!("bad prefix declaration `{name}`")))?;
        let iri = self.next()?;
        let ns = iri
            .strip_prefix('<')
            .and_then(|i| i.strip_suffix('>'))
            .ok_or_else(|| Error::Query(format!("bad namespace `{iri}`")))?;
        self.prefixes.0.insert(prefix.to_string(), ns.to_string());
        Ok(())
    }

    fn parse_query(&mut self) -> Result<Query> {
        while self.eat("prefix") {
            self.parse_prefix_decl()?;
        }
        let form = if self.eat("ask") {
            Form::Ask
        } else if self.eat("select") {
            let distinct = self.eat("distinct") || self.eat("reduced");
            let projection = self.parse_projection()?;
            Form::Select {
                distinct,
                projection,
            }
        } else {
            return Err(self.unexpected());
        };
        self.eat("where");
        let (patterns, filters) = if self.eat("{") {
            let group = self.parse_group(true)?;
            self.expect("}")?;
            group
        } else {
            self.parse_group(false)?
        };
        let mut query = Query {
            form,
            patterns,
            filters,
            order: Vec::new(),
            limit: None,
            offset: 0,
        };
        loop {
            if self.eat("order") {
                self.expect("by")?;
                while let Some(t) = self.peek() {
                    if t.eq_ignore_ascii_case("limit") || t.eq_ignore_ascii_case("offset") {
                        break;
                    }
                    let asc = if self.eat("desc") {
                        false
                    } else {
                        self.eat("asc");
                        true
                    };
                    let e = self.parse_primary()?;
                    query.order.push((e, asc));
                }
            } else if self.eat("limit") {
                query.limit = Some(self.parse_usize()?);
            } else if self.eat("offset") {
                query.offset = self.parse_usize()?;
            } else {
                break;
            }
        }
        if !self.done() {
            return Err(self.unexpected());
        }
        Ok(query)
    }

    fn parse_usize(&mut self) -> Result<usize> {
        let t = self.next()?;
        t.parse()
            .map_err(|_| Error::Query(format!("expected a number, got `{t}`")))
    }

    fn parse_projection(&mut self) -> Result<Projection> {
        if self.eat("*") {
            return Ok(Projection::All);
        }
        // `count(?x)` without an alias, as accepted by some endpoints
        if self.peek_is("count") {
            let (var, distinct) = self.parse_count()?;
            return Ok(Projection::Count {
                var,
                distinct,
                alias: "callret-0".into(),
            });
        }
        if self.peek_is("(") && self.tokens.get(self.pos + 1).is_some_and(|t| t.eq_ignore_ascii_case("count")) {
            self.pos += 1;
            let (var, distinct) = self.parse_count()?;
            self.expect("as")?;
            let alias = self.next()?;
            if !is_variable(alias) {
                return Err(Error::Query(format!("bad alias `{alias}`")));
            }
            self.expect(")")?;
            return Ok(Projection::Count {
                var,
                distinct,
                alias: alias[1..].to_string(),
            });
        }
        let mut vars = Vec::new();
        while let Some(t) = self.peek() {
            if !is_variable(t) {
                break;
            }
            vars.push(t[1..].to_string());
            self.pos += 1;
        }
        if vars.is_empty() {
            return Err(self.unexpected());
        }
        Ok(Projection::Vars(vars))
    }

    fn parse_count(&mut self) -> Result<(Option<String>, bool)> {
        self.expect("count")?;
        self.expect("(")?;
        let distinct = self.eat("distinct");
        let var = if self.eat("*") {
            None
        } else {
            let v = self.next()?;
            if !is_variable(v) {
                return Err(Error::Query(format!("bad count argument `{v}`")));
            }
            Some(v[1..].to_string())
        };
        self.expect(")")?;
        Ok((var, distinct))
    }

    fn parse_group(&mut self, braced: bool) -> Result<(Vec<TriplePattern>, Vec<Expr>)> {
        let mut patterns = Vec::new();
        let mut filters = Vec::new();
        loop {
            match self.peek() {
                None => break,
                Some("}") if braced => break,
                Some(t)
                    if !braced
                        && ["order", "limit", "offset"].iter().any(|k| t.eq_ignore_ascii_case(k)) =>
                {
                    break
                }
                Some(".") => self.pos += 1,
                Some(t) if t.eq_ignore_ascii_case("filter") => {
                    self.pos += 1;
                    filters.push(self.parse_primary()?);
                }
                Some("{") => {
                    self.pos += 1;
                    let (p, f) = self.parse_group(true)?;
                    self.expect("}")?;
                    patterns.extend(p);
                    filters.extend(f);
                }
                Some(_) => patterns.extend(self.parse_triples_block()?),
            }
        }
        Ok((patterns, filters))
    }

    fn parse_triples_block(&mut self) -> Result<Vec<TriplePattern>> {
        let s = self.parse_term()?;
        let mut out = Vec::new();
        loop {
            let p = if self.eat("a") {
                Pattern::Const(Term::Iri(RDF_TYPE.into()))
            } else {
                self.parse_term()?
            };
            loop {
                let o = self.parse_term()?;
                out.push(TriplePattern {
                    s: s.clone(),
                    p: p.clone(),
                    o,
                });
                if !self.eat(",") {
                    break;
                }
            }
            if !self.eat(";") {
                break;
            }
            if matches!(self.peek(), Some(".") | Some("}") | None) {
                break;
            }
        }
        Ok(out)
    }

    fn parse_term(&mut self) -> Result<Pattern> {
        let t = self.next()?;
        if is_variable(t) {
            return Ok(Pattern::Var(t[1..].to_string()));
        }
        self.term_from_token(t).map(Pattern::Const)
    }

    fn term_from_token(&self, t: &str) -> Result<Term> {
        if t.starts_with('"') || t.starts_with('\'') {
            return self.parse_string_literal(t);
        }
        if t == "true" || t == "false" {
            return Ok(Term::typed(t, format!("{XSD}boolean")));
        }
        if let Some(first) = t.chars().next() {
            if first.is_ascii_digit() || ((first == '-' || first == '+') && t.len() > 1) {
                if t.parse::<i64>().is_ok() {
                    return Ok(Term::typed(t, format!("{XSD}integer")));
                }
                if t.contains(['e', 'E']) && t.parse::<f64>().is_ok() {
                    return Ok(Term::typed(t, format!("{XSD}double")));
                }
                if t.parse::<f64>().is_ok() {
                    return Ok(Term::typed(t, format!("{XSD}decimal")));
                }
            }
        }
        if let Some(b) = t.strip_prefix("_:") {
            return Ok(Term::Blank(b.to_string()));
        }
        self.prefixes
            .expand(t)
            .map(Term::Iri)
            .ok_or_else(|| Error::Query(format!("unknown term `{t}`")))
    }

    fn parse_string_literal(&self, t: &str) -> Result<Term> {
        let quote = t.chars().next().unwrap();
        let mut lexical = String::new();
        let mut chars = t[1..].char_indices();
        let mut end = None;
        while let Some((i, c)) = chars.next() {
            match c {
                '\\' => {
                    if let Some((_, e)) = chars.next() {
                        lexical.push(match e {
                            'n' => '\n',
                            't' => '\t',
                            other => other,
                        });
                    }
                }
                c if c == quote => {
                    end = Some(i + 2);
                    break;
                }
                c => lexical.push(c),
            }
        }
        let rest = &t[end.ok_or_else(|| Error::Query(format!("bad literal `{t}`")))?..];
        if let Some(lang) = rest.strip_prefix('@') {
            return Ok(Term::Literal {
                lexical,
                datatype: None,
                lang: Some(lang.to_lowercase()),
            });
        }
        if let Some(dt) = rest.strip_prefix("^^") {
            let dt = self
                .prefixes
                .expand(dt)
                .ok_or_else(|| Error::Query(format!("unknown datatype `{dt}`")))?;
            if dt == format!("{XSD}string") {
                return Ok(Term::plain(lexical));
            }
            return Ok(Term::typed(lexical, dt));
        }
        Ok(Term::plain(lexical))
    }

    // expression grammar: or > and > comparison > additive > multiplicative > unary > primary
    fn parse_expr(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_and()?;
        while self.eat("||") {
            lhs = Expr::Or(Box::new(lhs), Box::new(self.parse_and()?));
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_cmp()?;
        while self.eat("&&") {
            lhs = Expr::And(Box::new(lhs), Box::new(self.parse_cmp()?));
        }
        Ok(lhs)
    }

    fn parse_cmp(&mut self) -> Result<Expr> {
        let lhs = self.parse_additive()?;
        let op = match self.peek() {
            Some("=") => CmpOp::Eq,
            Some("!=") => CmpOp::Ne,
            Some("<") => CmpOp::Lt,
            Some(">") => CmpOp::Gt,
            Some("<=") => CmpOp::Le,
            Some(">=") => CmpOp::Ge,
            _ => return Ok(lhs),
        };
        self.pos += 1;
        Ok(Expr::Cmp(op, Box::new(lhs), Box::new(self.parse_additive()?)))
    }

    fn parse_additive(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_multiplicative()?;
        loop {
            let op = match self.peek() {
                Some("+") => '+',
                Some("-") => '-',
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::Arith(op, Box::new(lhs), Box::new(self.parse_multiplicative()?));
        }
    }

    fn parse_multiplicative(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_unary()?;
        loop {
            let op = match self.peek() {
                Some("*") => '*',
                Some("/") => '/',
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::Arith(op, Box::new(lhs), Box::new(self.parse_unary()?));
        }
    }

    fn parse_unary(&mut self) -> Result<Expr> {
        if self.eat("!") {
            return Ok(Expr::Not(Box::new(self.parse_unary()?)));
        }
        if self.eat("-") {
            return Ok(Expr::Neg(Box::new(self.parse_unary()?)));
        }
        self.parse_primary()
    }

    fn parse_primary(&mut self) -> Result<Expr> {
        let t = self.next()?;
        if t == "(" {
            let e = self.parse_expr()?;
            self.expect(")")?;
            return Ok(e);
        }
        if is_variable(t) {
            return Ok(Expr::Var(t[1..].to_string()));
        }
        if self.peek_is("(") && t.chars().all(|c| c.is_ascii_alphabetic() || c == '_') {
            self.pos += 1;
            let mut args = Vec::new();
            if !self.eat(")") {
                loop {
                    args.push(self.parse_expr()?);
                    if self.eat(")") {
                        break;
                    }
                    self.expect(",")?;
                }
            }
            return Ok(Expr::Call(t.to_lowercase(), args));
        }
        self.term_from_token(t).map(Expr::Const)
    }
}
