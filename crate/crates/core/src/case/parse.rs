//! Reader for the literal-matrix subset of the MATPOWER case language.

use std::collections::BTreeMap;

use super::CaseError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Semi,
    Comma,
    Eq,
    Dot,
    Newline,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Num(v) => format!("number {v}"),
            Tok::Str(s) => format!("string '{s}'"),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Newline => "end of line".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, CaseError> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let chars: Vec<char> = raw.chars().collect();
        let mut i = 0;
        let mut continued = false;
        while i < chars.len() {
            let c = chars[i];
            let column = i + 1;
            let push = |out: &mut Vec<Spanned>, tok| out.push(Spanned { tok, line, column });
            match c {
                '%' | '#' => break,
                ' ' | '\t' | '\r' => i += 1,
                '.' if chars[i..].starts_with(&['.', '.', '.']) => {
                    continued = true;
                    break;
                }
                '[' => {
                    push(&mut out, Tok::LBracket);
                    i += 1;
                }
                ']' => {
                    push(&mut out, Tok::RBracket);
                    i += 1;
                }
                '{' => {
                    push(&mut out, Tok::LBrace);
                    i += 1;
                }
                '}' => {
                    push(&mut out, Tok::RBrace);
                    i += 1;
                }
                ';' => {
                    push(&mut out, Tok::Semi);
                    i += 1;
                }
                ',' => {
                    push(&mut out, Tok::Comma);
                    i += 1;
                }
                '=' => {
                    push(&mut out, Tok::Eq);
                    i += 1;
                }
                '\'' | '"' => {
                    let end = chars[i + 1..].iter().position(|&d| d == c).ok_or_else(|| {
                        CaseError::Parse {
                            line,
                            column,
                            expected: "closing quote".into(),
                            found: "end of line".into(),
                        }
                    })?;
                    let s: String = chars[i + 1..i + 1 + end].iter().collect();
                    push(&mut out, Tok::Str(s));
                    i += end + 2;
                }
                c if c.is_ascii_digit()
                    || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
                    || ((c == '-' || c == '+')
                        && chars.get(i + 1).is_some_and(|d| {
                            d.is_ascii_digit() || matches!(d, '.' | 'I' | 'i')
                        })) =>
                {
                    let start = i;
                    i += 1;
                    while i < chars.len() {
                        let d = chars[i];
                        let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                        if d.is_ascii_alphanumeric() || d == '.' || exp_sign {
                            i += 1;
                        } else {
                            break;
                        }
                    }
                    let word: String = chars[start..i].iter().collect();
                    let value = parse_number(&word).ok_or_else(|| CaseError::Parse {
                        line,
                        column,
                        expected: "number".into(),
                        found: format!("`{word}`"),
                    })?;
                    push(&mut out, Tok::Num(value));
                }
                '.' => {
                    push(&mut out, Tok::Dot);
                    i += 1;
                }
                c if c.is_alphabetic() || c == '_' => {
                    let start = i;
                    while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                        i += 1;
                    }
                    let word: String = chars[start..i].iter().collect();
                    let tok = match word.as_str() {
                        "Inf" | "inf" => Tok::Num(f64::INFINITY),
                        "NaN" | "nan" => Tok::Num(f64::NAN),
                        _ => Tok::Ident(word),
                    };
                    push(&mut out, tok);
                }
                other => {
                    return Err(CaseError::Parse {
                        line,
                        column,
                        expected: "token".into(),
                        found: format!("`{other}`"),
                    })
                }
            }
        }
        if !continued {
            out.push(Spanned {
                tok: Tok::Newline,
                line,
                column: chars.len() + 1,
            });
        }
    }
    let line = text.lines().count() + 1;
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        column: 1,
    });
    Ok(out)
}

fn parse_number(word: &str) -> Option<f64> {
    match word {
        "-Inf" | "-inf" => Some(f64::NEG_INFINITY),
        "+Inf" | "+inf" => Some(f64::INFINITY),
        _ => word.parse().ok(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(super) enum Value {
    Scalar(f64),
    Text(String),
    Matrix(Vec<Vec<f64>>),
    Skipped,
}

/// Assignments `mpc.<field> = <value>` keyed by field name, with the line of
/// each assignment.
#[derive(Debug)]
pub(super) struct Assignments {
    pub name: Option<String>,
    pub fields: BTreeMap<String, (Value, usize)>,
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> CaseError {
        let t = self.peek();
        CaseError::Parse {
            line: t.line,
            column: t.column,
            expected: expected.into(),
            found: t.tok.describe(),
        }
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), CaseError> {
        if self.peek().tok == tok {
            self.next();
            Ok(())
        } else {
            Err(self.error(expected))
        }
    }

    fn ident(&mut self, expected: &str) -> Result<String, CaseError> {
        match &self.peek().tok {
            Tok::Ident(s) => {
                let s = s.clone();
                self.next();
                Ok(s)
            }
            _ => Err(self.error(expected)),
        }
    }

    fn end_of_statement(&mut self) -> Result<(), CaseError> {
        match self.peek().tok {
            Tok::Semi | Tok::Comma => {
                self.next();
                Ok(())
            }
            Tok::Newline | Tok::Eof => Ok(()),
            _ => Err(self.error("`;` or end of line")),
        }
    }

    fn matrix(&mut self) -> Result<Vec<Vec<f64>>, CaseError> {
        self.expect(Tok::LBracket, "`[`")?;
        let mut rows = Vec::new();
        let mut row = Vec::new();
        loop {
            match self.peek().tok.clone() {
                Tok::Num(v) => {
                    row.push(v);
                    self.next();
                }
                Tok::Comma => {
                    self.next();
                }
                Tok::Semi | Tok::Newline => {
                    self.next();
                    if !row.is_empty() {
                        rows.push(std::mem::take(&mut row));
                    }
                }
                Tok::RBracket => {
                    self.next();
                    if !row.is_empty() {
                        rows.push(row);
                    }
                    return Ok(rows);
                }
                _ => return Err(self.error("number or `]`")),
            }
        }
    }

    fn skip_cell_array(&mut self) -> Result<(), CaseError> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut depth = 1;
        while depth > 0 {
            match self.next().tok {
                Tok::LBrace => depth += 1,
                Tok::RBrace => depth -= 1,
                Tok::Eof => return Err(self.error("`}`")),
                _ => {}
            }
        }
        Ok(())
    }

    fn value(&mut self) -> Result<Value, CaseError> {
        match self.peek().tok.clone() {
            Tok::Num(v) => {
                self.next();
                Ok(Value::Scalar(v))
            }
            Tok::Str(s) => {
                self.next();
                Ok(Value::Text(s))
            }
            Tok::LBracket => Ok(Value::Matrix(self.matrix()?)),
            Tok::LBrace => {
                self.skip_cell_array()?;
                Ok(Value::Skipped)
            }
            _ => Err(self.error("number, string or matrix")),
        }
    }
}

pub(super) fn parse_assignments(text: &str) -> Result<Assignments, CaseError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let mut out = Assignments {
        name: None,
        fields: BTreeMap::new(),
    };
    let mut struct_name: Option<String> = None;
    loop {
        match p.peek().tok.clone() {
            Tok::Eof => break,
            Tok::Newline | Tok::Semi => {
                p.next();
            }
            Tok::Ident(word) if word == "function" => {
                p.next();
                let var = p.ident("output variable name")?;
                p.expect(Tok::Eq, "`=`")?;
                out.name = Some(p.ident("function name")?);
                struct_name = Some(var);
                p.end_of_statement()?;
            }
            Tok::Ident(var) => {
                if struct_name.as_ref().is_some_and(|s| s != &var) {
                    return Err(p.error(&format!(
                        "assignment to `{}`",
                        struct_name.as_deref().unwrap_or("mpc")
                    )));
                }
                let line = p.peek().line;
                p.next();
                p.expect(Tok::Dot, "`.`")?;
                let field = p.ident("field name")?;
                p.expect(Tok::Eq, "`=`")?;
                let value = p.value()?;
                p.end_of_statement()?;
                out.fields.insert(field, (value, line));
            }
            _ => return Err(p.error("statement")),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers() {
        let toks: Vec<Tok> = lex("1 -2.5 +3e-2 .5 1E3 -Inf Inf")
            .unwrap()
            .into_iter()
            .map(|t| t.tok)
            .collect();
        assert_eq!(
            toks,
            vec![
                Tok::Num(1.0),
                Tok::Num(-2.5),
                Tok::Num(0.03),
                Tok::Num(0.5),
                Tok::Num(1000.0),
                Tok::Num(f64::NEG_INFINITY),
                Tok::Num(f64::INFINITY),
                Tok::Newline,
                Tok::Eof
            ]
        );
    }

    #[test]
    fn comments_and_continuations() {
        let a = parse_assignments(
            "function mpc = t % comment\nmpc.a = [1 2 ...\n 3; 4 5 6]; % trailing\nmpc.b = 'x';\n",
        )
        .unwrap();
        assert_eq!(a.name.as_deref(), Some("t"));
        assert_eq!(
            a.fields["a"].0,
            Value::Matrix(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]])
        );
        assert_eq!(a.fields["b"].0, Value::Text("x".into()));
    }

    #[test]
    fn error_location() {
        let err = parse_assignments("mpc.baseMVA = 100;\nmpc.bus = [\n 1 2 x;\n];").unwrap_err();
        match err {
            CaseError::Parse { line, column, .. } => assert_eq!((line, column), (3, 6)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_assignments("mpc.bus = [1 2"),
            Err(CaseError::Parse { .. })
        ));
    }

    #[test]
    fn cell_arrays_are_skipped() {
        let a = parse_assignments("mpc.bus_name = {\n 'a';\n 'b';\n};\nmpc.x = 3;").unwrap();
        assert_eq!(a.fields["bus_name"].0, Value::Skipped);
        assert_eq!(a.fields["x"].0, Value::Scalar(3.0));
    }
}
