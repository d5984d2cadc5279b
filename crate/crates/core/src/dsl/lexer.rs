//! Tokenizer for `.nkb` text. `#` starts a comment running to end of line.

use super::{ParseDiagnostic, SourceSpan};
use crate::kb::Severity;
use crate::timebase::Duration;

#[derive(Debug, Clone, PartialEq)]
pub(super) enum Tok {
    Ident(String),
    Num(f64),
    Dur(Duration),
    Str(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Equals,
    Lt,
    DotDot,
    Slash,
}

impl Tok {
    pub(super) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Num(n) => format!("number {n}"),
            Tok::Dur(d) => format!("duration {d}"),
            Tok::Str(_) => "string".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Equals => "`=`".into(),
            Tok::Lt => "`<`".into(),
            Tok::DotDot => "`..`".into(),
            Tok::Slash => "`/`".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(super) struct Token {
    pub tok: Tok,
    pub span: SourceSpan,
}

pub(super) fn lex(text: &str, file: &str) -> (Vec<Token>, Vec<ParseDiagnostic>) {
    let mut tokens = Vec::new();
    let mut diags = Vec::new();
    for (line_idx, line) in text.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let span = |end: usize| SourceSpan {
                file: file.to_string(),
                line: line_idx + 1,
                col_start: col,
                col_end: end,
            };
            match c {
                '#' => break,
                c if c.is_whitespace() => {
                    i += 1;
                }
                '(' | ')' | '{' | '}' | '[' | ']' | ',' | ':' | '=' | '<' | '/' => {
                    let tok = match c {
                        '(' => Tok::LParen,
                        ')' => Tok::RParen,
                        '{' => Tok::LBrace,
                        '}' => Tok::RBrace,
                        '[' => Tok::LBracket,
                        ']' => Tok::RBracket,
                        ',' => Tok::Comma,
                        ':' => Tok::Colon,
                        '=' => Tok::Equals,
                        '<' => Tok::Lt,
                        _ => Tok::Slash,
                    };
                    tokens.push(Token { tok, span: span(col) });
                    i += 1;
                }
                '.' if chars.get(i + 1) == Some(&'.') => {
                    tokens.push(Token { tok: Tok::DotDot, span: span(col + 1) });
                    i += 2;
                }
                c if c.is_ascii_digit()
                    || (c == '-'
                        && chars.get(i + 1).map(|n| n.is_ascii_digit() || *n == '.').unwrap_or(false)) =>
                {
                    let start = i;
                    i += 1; // sign or first digit
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                    // one decimal point, but stop before `..`
                    if i < chars.len() && chars[i] == '.' && chars.get(i + 1) != Some(&'.') {
                        i += 1;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                    if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                        let mut j = i + 1;
                        if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                            j += 1;
                        }
                        if j < chars.len() && chars[j].is_ascii_digit() {
                            i = j;
                            while i < chars.len() && chars[i].is_ascii_digit() {
                                i += 1;
                            }
                        }
                    }
                    let raw: String = chars[start..i].iter().collect();
                    // integer immediately followed by a unit letter is a duration
                    let unit = chars.get(i).copied();
                    let unit_ok = matches!(unit, Some('s' | 'm' | 'h' | 'd'))
                        && !chars
                            .get(i + 1)
                            .map(|n| n.is_alphanumeric() || *n == '_')
                            .unwrap_or(false)
                        && !raw.contains('.')
                        && !raw.contains('e')
                        && !raw.contains('E');
                    if unit_ok {
                        let text = format!("{raw}{}", unit.unwrap());
                        i += 1;
                        match Duration::parse(&text) {
                            Ok(d) => tokens.push(Token { tok: Tok::Dur(d), span: span(i) }),
                            Err(_) => diags.push(ParseDiagnostic {
                                severity: Severity::Error,
                                code: "bad-duration",
                                message: format!("cannot parse duration `{text}`"),
                                span: span(i),
                            }),
                        }
                    } else {
                        match raw.parse::<f64>() {
                            Ok(n) if n.is_finite() => {
                                tokens.push(Token { tok: Tok::Num(n), span: span(i) })
                            }
                            _ => diags.push(ParseDiagnostic {
                                severity: Severity::Error,
                                code: "bad-number",
                                message: format!("cannot parse number `{raw}`"),
                                span: span(i),
                            }),
                        }
                    }
                }
                c if c.is_alphabetic() || c == '_' => {
                    let start = i;
                    while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                        i += 1;
                    }
                    let word: String = chars[start..i].iter().collect();
                    tokens.push(Token { tok: Tok::Ident(word), span: span(i) });
                }
                '"' => {
                    let start = i;
                    i += 1;
                    let mut s = String::new();
                    let mut closed = false;
                    while i < chars.len() {
                        if chars[i] == '"' {
                            closed = true;
                            i += 1;
                            break;
                        }
                        s.push(chars[i]);
                        i += 1;
                    }
                    if closed {
                        tokens.push(Token {
                            tok: Tok::Str(s),
                            span: SourceSpan {
                                file: file.to_string(),
                                line: line_idx + 1,
                                col_start: start + 1,
                                col_end: i,
                            },
                        });
                    } else {
                        diags.push(ParseDiagnostic {
                            severity: Severity::Error,
                            code: "unterminated-string",
                            message: "string literal is not closed".into(),
                            span: span(i),
                        });
                    }
                }
                other => {
                    diags.push(ParseDiagnostic {
                        severity: Severity::Error,
                        code: "bad-char",
                        message: format!("unexpected character `{other}`"),
                        span: span(col),
                    });
                    i += 1;
                }
            }
        }
    }
    (tokens, diags)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(text: &str) -> Vec<Tok> {
        let (tokens, diags) = lex(text, "<test>");
        assert!(diags.is_empty(), "{diags:?}");
        tokens.into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn numbers_durations_and_ranges() {
        assert_eq!(
            toks("1..300"),
            vec![Tok::Num(1.0), Tok::DotDot, Tok::Num(300.0)]
        );
        assert_eq!(toks("-12.5"), vec![Tok::Num(-12.5)]);
        assert_eq!(toks("1e-6"), vec![Tok::Num(1e-6)]);
        assert_eq!(toks("12h"), vec![Tok::Dur(Duration::hours(12))]);
        assert_eq!(toks("30d,"), vec![Tok::Dur(Duration::days(30)), Tok::Comma]);
        // `d3` is an identifier, `3d` a duration
        assert_eq!(toks("d3"), vec![Tok::Ident("d3".into())]);
        assert_eq!(
            toks("rate=1.0/d"),
            vec![
                Tok::Ident("rate".into()),
                Tok::Equals,
                Tok::Num(1.0),
                Tok::Slash,
                Tok::Ident("d".into())
            ]
        );
    }

    #[test]
    fn comments_and_strings() {
        assert_eq!(toks("a # b c d"), vec![Tok::Ident("a".into())]);
        assert_eq!(toks("\"kg\""), vec![Tok::Str("kg".into())]);
        let (_, diags) = lex("\"open", "<test>");
        assert_eq!(diags[0].code, "unterminated-string");
        let (_, diags) = lex("a ~ b", "<test>");
        assert_eq!(diags[0].code, "bad-char");
    }

    #[test]
    fn spans_point_at_the_source() {
        let (tokens, _) = lex("range W\n  = cardinal", "<test>");
        assert_eq!(tokens[2].span.line, 2);
        assert_eq!(tokens[2].span.col_start, 3);
        assert_eq!(tokens[3].span.col_start, 5);
        assert_eq!(tokens[3].span.col_end, 12);
    }
}
