use indexmap::IndexMap;

use super::registry::{FunctionRegistry, ParamSpec};
use super::value::{ArgValue, Quantity, ValueKind};
use super::{Instruction, IrError, ProtocolProgram, Span};

const TITLE_PRAGMA: &str = "@title";
const ENV_PRAGMA: &str = "@env";

/// Unbound literal as written in source, or an already-typed value for synthesized calls.
#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Str(String),
    Number(f64),
    Bare(String),
    Bool(bool),
    List(Vec<String>),
    Value(ArgValue),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawArg {
    Named(String, Literal),
    Positional(Literal),
}

impl RawArg {
    pub fn named(name: impl Into<String>, value: ArgValue) -> Self {
        RawArg::Named(name.into(), Literal::Value(value))
    }
}

/// Parses a program. Blank lines and `#` comments are skipped; `# @title ...` and
/// `# @env ...` set program metadata.
pub fn parse_program(text: &str, registry: &FunctionRegistry) -> Result<ProtocolProgram, IrError> {
    let mut program = ProtocolProgram::default();
    for (i, raw_line) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        let trimmed = line.trim_start();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(rest) = comment.strip_prefix(TITLE_PRAGMA) {
                program.title = rest.trim().to_string();
            } else if let Some(rest) = comment.strip_prefix(ENV_PRAGMA) {
                program.env_ref = rest.trim().to_string();
            }
            continue;
        }
        let mut cur = Cursor::new(line, line_no);
        program.instructions.push(parse_call(&mut cur, registry)?);
    }
    Ok(program)
}

fn parse_call(cur: &mut Cursor, registry: &FunctionRegistry) -> Result<Instruction, IrError> {
    cur.skip_ws();
    let span = cur.span();
    let name = cur
        .ident()
        .ok_or_else(|| cur.syntax("expected function name"))?;
    cur.skip_ws();
    if !cur.eat('(') {
        return Err(cur.syntax("expected `(`"));
    }
    let mut raw = Vec::new();
    cur.skip_ws();
    if !cur.eat(')') {
        loop {
            cur.skip_ws();
            raw.push(parse_arg(cur)?);
            cur.skip_ws();
            if cur.eat(',') {
                continue;
            }
            if cur.eat(')') {
                break;
            }
            return Err(cur.syntax("expected `,` or `)`"));
        }
    }
    cur.skip_ws();
    match cur.peek() {
        None | Some('#') => {}
        Some(_) => return Err(cur.syntax("unexpected text after call")),
    }
    if registry.get(&name).is_none() {
        return Err(IrError::UnknownFunction { name, span });
    }
    let args = bind_args(registry, &name, raw, span)?;
    Ok(Instruction {
        function: name,
        args,
        span: Some(span),
    })
}

fn parse_arg(cur: &mut Cursor) -> Result<RawArg, IrError> {
    let save = cur.pos;
    let save_col = cur.col;
    if let Some(name) = cur.ident() {
        cur.skip_ws();
        if cur.eat('=') {
            cur.skip_ws();
            return Ok(RawArg::Named(name, parse_literal(cur)?));
        }
        cur.pos = save;
        cur.col = save_col;
    }
    Ok(RawArg::Positional(parse_literal(cur)?))
}

fn parse_literal(cur: &mut Cursor) -> Result<Literal, IrError> {
    match cur.peek() {
        Some('"') => Ok(Literal::Str(cur.string()?)),
        Some('[') => {
            cur.bump();
            let mut items = Vec::new();
            cur.skip_ws();
            if cur.eat(']') {
                return Ok(Literal::List(items));
            }
            loop {
                cur.skip_ws();
                let start = cur.span();
                let item = match cur.peek() {
                    Some('"') => cur.string()?,
                    _ => cur
                        .ident()
                        .ok_or_else(|| cur.syntax("expected list element"))?,
                };
                if item.is_empty() {
                    return Err(IrError::MalformedLiteral {
                        message: "empty list element".into(),
                        span: start,
                    });
                }
                items.push(item);
                cur.skip_ws();
                if cur.eat(',') {
                    continue;
                }
                if cur.eat(']') {
                    return Ok(Literal::List(items));
                }
                return Err(cur.syntax("expected `,` or `]`"));
            }
        }
        Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
            let span = cur.span();
            let lexeme =
                cur.take_while(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+' | '_'));
            lexeme
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Literal::Number)
                .ok_or(IrError::MalformedLiteral {
                    message: format!("invalid number `{lexeme}`"),
                    span,
                })
        }
        Some(_) => {
            let word = cur.ident().ok_or_else(|| cur.syntax("expected value"))?;
            Ok(match word.as_str() {
                "true" => Literal::Bool(true),
                "false" => Literal::Bool(false),
                _ => Literal::Bare(word),
            })
        }
        None => Err(cur.syntax("unexpected end of line")),
    }
}

/// Binds raw arguments to a function's parameters and fills defaults.
///
/// Named arguments bind first. Positional arguments then fill the remaining parameters
/// in declaration order; when there are fewer positionals than open parameters, leading
/// optional parameters are skipped so `add_liquid(10, "ContainerA")` binds volume and container.
pub fn bind_args(
    registry: &FunctionRegistry,
    function: &str,
    raw: Vec<RawArg>,
    span: Span,
) -> Result<IndexMap<String, ArgValue>, IrError> {
    let spec = registry
        .get(function)
        .ok_or_else(|| IrError::UnknownFunction {
            name: function.to_string(),
            span,
        })?;

    let mut bound: IndexMap<&str, Literal> = IndexMap::new();
    let mut positional = Vec::new();
    for arg in raw {
        match arg {
            RawArg::Named(name, lit) => {
                let param = spec.param(&name).ok_or_else(|| IrError::UnknownParameter {
                    function: function.to_string(),
                    param: name.clone(),
                    span,
                })?;
                if bound.insert(param.name.as_str(), lit).is_some() {
                    return Err(IrError::ArityError {
                        message: format!("`{function}` got `{name}` more than once"),
                        span,
                    });
                }
            }
            RawArg::Positional(lit) => positional.push(lit),
        }
    }

    let open: Vec<&ParamSpec> = spec
        .params
        .iter()
        .filter(|p| !bound.contains_key(p.name.as_str()))
        .collect();
    if positional.len() > open.len() {
        return Err(IrError::ArityError {
            message: format!(
                "`{function}` takes {} argument(s), got {}",
                spec.params.len(),
                spec.params.len() - open.len() + positional.len()
            ),
            span,
        });
    }
    let mut to_skip = open.len() - positional.len();
    let targets = open.into_iter().filter(|p| {
        if to_skip > 0 && !p.required {
            to_skip -= 1;
            false
        } else {
            true
        }
    });
    for (param, lit) in targets.zip(positional) {
        bound.insert(param.name.as_str(), lit);
    }

    let mut args = IndexMap::new();
    for param in &spec.params {
        match bound.shift_remove(param.name.as_str()) {
            Some(lit) => {
                args.insert(param.name.clone(), convert(lit, param, span)?);
            }
            None => match &param.default {
                Some(d) => {
                    args.insert(param.name.clone(), d.clone());
                }
                None if param.required => {
                    return Err(IrError::ArityError {
                        message: format!(
                            "`{function}` is missing required argument `{}`",
                            param.name
                        ),
                        span,
                    });
                }
                None => {}
            },
        }
    }
    Ok(args)
}

// Text stays text even where a number is expected; the checker owns type repair.
fn convert(lit: Literal, param: &ParamSpec, span: Span) -> Result<ArgValue, IrError> {
    let malformed = |message: String| IrError::MalformedLiteral { message, span };
    Ok(match lit {
        Literal::Value(v) => v,
        Literal::Str(s) | Literal::Bare(s) => ArgValue::Text(s),
        Literal::Bool(b) => ArgValue::Bool(b),
        Literal::List(items) => {
            if items.iter().any(String::is_empty) {
                return Err(malformed("empty list element".into()));
            }
            ArgValue::TextList(items)
        }
        Literal::Number(v) => match param.kind {
            ValueKind::Quantity(unit) => {
                ArgValue::Quantity(Quantity::new(v, unit).ok_or_else(|| {
                    malformed(format!("`{}` must be non-negative, got {v}", param.name))
                })?)
            }
            _ if v.fract() == 0.0 && v.abs() <= 9_007_199_254_740_992.0 => {
                ArgValue::Integer(v as i64)
            }
            _ => {
                return Err(malformed(format!(
                    "`{}` expects a whole number, got {v}",
                    param.name
                )))
            }
        },
    })
}

struct Cursor {
    chars: Vec<char>,
    pos: usize,
    col: usize,
    line: usize,
}

impl Cursor {
    fn new(src: &str, line: usize) -> Self {
        Self {
            chars: src.chars().collect(),
            pos: 0,
            col: 1,
            line,
        }
    }

    fn span(&self) -> Span {
        Span {
            line: self.line,
            column: self.col,
        }
    }

    fn syntax(&self, message: &str) -> IrError {
        IrError::Syntax {
            message: message.to_string(),
            span: self.span(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        self.col += 1;
        Some(c)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c == ' ' || c == '\t') {
            self.bump();
        }
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> String {
        let mut out = String::new();
        while let Some(c) = self.peek() {
            if !f(c) {
                break;
            }
            out.push(c);
            self.bump();
        }
        out
    }

    fn ident(&mut self) -> Option<String> {
        match self.peek() {
            Some(c) if c.is_alphabetic() || c == '_' => {
                Some(self.take_while(|c| c.is_alphanumeric() || c == '_' || c == '.'))
            }
            _ => None,
        }
    }

    fn string(&mut self) -> Result<String, IrError> {
        let start = self.span();
        self.bump();
        let mut out = String::new();
        loop {
            match self.bump() {
                None => {
                    return Err(IrError::MalformedLiteral {
                        message: "unterminated string".into(),
                        span: start,
                    })
                }
                Some('"') => return Ok(out),
                Some('\\') => match self.bump() {
                    Some('\\') => out.push('\\'),
                    Some('"') => out.push('"'),
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    other => {
                        return Err(IrError::MalformedLiteral {
                            message: format!(
                                "unknown escape `\\{}`",
                                other.map(String::from).unwrap_or_default()
                            ),
                            span: start,
                        })
                    }
                },
                Some(c) => out.push(c),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Primitive, Unit};

    fn reg() -> FunctionRegistry {
        FunctionRegistry::builtin()
    }

    fn one(src: &str) -> Instruction {
        let p = parse_program(src, &reg()).unwrap();
        assert_eq!(p.instructions.len(), 1);
        p.instructions.into_iter().next().unwrap()
    }

    #[test]
    fn named_add_liquid() {
        let i = one(r#"add_liquid(liquid_type="PBS", volume=10, container="ContainerA")"#);
        assert_eq!(i.primitive(), Some(Primitive::AddLiquid));
        assert_eq!(i.args["liquid_type"], ArgValue::text("PBS"));
        assert_eq!(i.args["volume"], ArgValue::ml(10.0));
        assert_eq!(i.args["container"], ArgValue::text("ContainerA"));
        assert_eq!(i.span, Some(Span { line: 1, column: 1 }));
    }

    #[test]
    fn positional_centrifuge() {
        let i = one(r#"centrifuge(1000, 5, "TubeA")"#);
        assert_eq!(i.args["speed"], ArgValue::g_force(1000.0));
        assert_eq!(i.args["time"], ArgValue::minutes(5.0));
        assert_eq!(i.args["container"], ArgValue::text("TubeA"));
        match &i.args["speed"] {
            ArgValue::Quantity(q) => assert_eq!(q.unit(), Unit::GForce),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_text_is_empty_program() {
        let p = parse_program("", &reg()).unwrap();
        assert!(p.is_empty());
        assert_eq!(p, ProtocolProgram::default());
    }

    #[test]
    fn comments_blank_lines_and_pragmas() {
        let src = "# @title Medium change\n\n  # note\nshake(ContainerB)  # trailing # comment\r\n";
        let p = parse_program(src, &reg()).unwrap();
        assert_eq!(p.title, "Medium change");
        assert_eq!(p.instructions.len(), 1);
        assert_eq!(p.instructions[0].span, Some(Span { line: 4, column: 1 }));
    }

    #[test]
    fn hash_inside_string_is_not_a_comment() {
        let i = one(r#"get_container("Dish#2")"#);
        assert_eq!(i.args["container"], ArgValue::text("Dish#2"));
    }

    #[test]
    fn defaults_and_skipped_optional_positional() {
        let i = one(r#"add_liquid(10, "ContainerA")"#);
        assert_eq!(i.args["liquid_type"], ArgValue::text("PBS"));
        assert_eq!(i.args["volume"], ArgValue::ml(10.0));
        let i = one(r#"add_liquid(volume=5, ContainerA)"#);
        assert_eq!(i.args["container"], ArgValue::text("ContainerA"));
        let i = one(r#"put_back_incubator(["ContainerA", ContainerB])"#);
        assert_eq!(
            i.args["containers"],
            ArgValue::list(["ContainerA", "ContainerB"])
        );
        assert_eq!(i.args["detachment_time"], ArgValue::Integer(0));
    }

    #[test]
    fn binding_twice_is_identical() {
        let i = one(r#"add_liquid(volume=3, container="TubeA")"#);
        let raw = i
            .args
            .iter()
            .map(|(k, v)| RawArg::named(k.clone(), v.clone()))
            .collect();
        let again = bind_args(&reg(), "add_liquid", raw, Span { line: 1, column: 1 }).unwrap();
        assert_eq!(again, i.args);
    }

    #[test]
    fn errors_carry_spans() {
        let r = reg();
        let err = parse_program("shake(A)\n  pipette(A)", &r).unwrap_err();
        assert_eq!(
            err,
            IrError::UnknownFunction {
                name: "pipette".into(),
                span: Span { line: 2, column: 3 }
            }
        );

        assert!(matches!(
            parse_program("shake()", &r),
            Err(IrError::ArityError { .. })
        ));
        assert!(matches!(
            parse_program("shake(A, B)", &r),
            Err(IrError::ArityError { .. })
        ));
        assert!(matches!(
            parse_program("shake(container=A, container=B)", &r),
            Err(IrError::ArityError { .. })
        ));
        assert!(matches!(
            parse_program("shake(vessel=A)", &r),
            Err(IrError::UnknownParameter { .. })
        ));
        assert!(matches!(
            parse_program("remove_liquid(-3, A)", &r),
            Err(IrError::MalformedLiteral { .. })
        ));
        assert!(matches!(
            parse_program("put_back_incubator([A], 2.5)", &r),
            Err(IrError::MalformedLiteral { .. })
        ));
        assert!(matches!(
            parse_program(r#"shake("A\q")"#, &r),
            Err(IrError::MalformedLiteral { .. })
        ));
        assert!(matches!(
            parse_program(r#"put_back_incubator(["A", ""])"#, &r),
            Err(IrError::MalformedLiteral { .. })
        ));
        assert!(matches!(
            parse_program("shake(A", &r),
            Err(IrError::Syntax { .. })
        ));
        assert!(matches!(
            parse_program("shake(A) extra", &r),
            Err(IrError::Syntax { .. })
        ));
    }

    #[test]
    fn text_for_quantity_survives_parsing() {
        let i = one(r#"centrifuge(speed="1000", time=5, TubeA)"#);
        assert_eq!(i.args["speed"], ArgValue::text("1000"));
    }

    #[test]
    fn every_builtin_name_parses() {
        let r = reg();
        for spec in r.specs() {
            let args: Vec<String> = spec
                .params
                .iter()
                .filter(|p| p.required)
                .map(|p| match p.kind {
                    ValueKind::TextList => "[\"ContainerA\"]".to_string(),
                    ValueKind::Quantity(_) => "5".to_string(),
                    _ => "\"ContainerA\"".to_string(),
                })
                .collect();
            let src = format!("{}({})", spec.name, args.join(", "));
            parse_program(&src, &r).unwrap_or_else(|e| panic!("{src}: {e}"));
        }
    }
}
