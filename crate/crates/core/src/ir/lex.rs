//! Token stream shared by the function, rule, and precondition parsers.
//! `;` starts a comment running to end of line. Newlines are significant.

use super::IrError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    /// `%name`
    Local(String),
    /// `@name`
    Global(String),
    Int(i128),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Colon,
    /// `=`
    Assign,
    /// `=>`
    Arrow,
    Newline,
    Plus,
    Minus,
    Star,
    Amp,
    Pipe,
    Caret,
    /// `<<`
    Shl,
    /// `>>`
    Shr,
    Tilde,
    Bang,
    /// `==`
    EqEq,
    /// `!=`
    NotEq,
    /// `&&`
    AndAnd,
    /// `||`
    OrOr,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Local(s) => format!("`%{s}`"),
            Tok::Global(s) => format!("`@{s}`"),
            Tok::Int(v) => format!("`{v}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Assign => "`=`".into(),
            Tok::Arrow => "`=>`".into(),
            Tok::Newline => "end of line".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Amp => "`&`".into(),
            Tok::Pipe => "`|`".into(),
            Tok::Caret => "`^`".into(),
            Tok::Shl => "`<<`".into(),
            Tok::Shr => "`>>`".into(),
            Tok::Tilde => "`~`".into(),
            Tok::Bang => "`!`".into(),
            Tok::EqEq => "`==`".into(),
            Tok::NotEq => "`!=`".into(),
            Tok::AndAnd => "`&&`".into(),
            Tok::OrOr => "`||`".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Spanned {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

/// Names after `%` and `@` may be purely numeric (`%1`).
fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

pub(crate) fn lex(text: &str) -> Result<Vec<Spanned>, IrError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0usize;
    let mut line: u32 = 1;
    let mut col: u32 = 1;

    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);

        macro_rules! adv {
            () => {{
                i += 1;
                col += 1;
            }};
        }
        macro_rules! push {
            ($tok:expr) => {
                out.push(Spanned { tok: $tok, line: tl, col: tc })
            };
        }
        macro_rules! two {
            ($second:expr, $long:expr, $short:expr) => {{
                adv!();
                if i < chars.len() && chars[i] == $second {
                    adv!();
                    push!($long);
                } else {
                    push!($short);
                }
            }};
        }
        macro_rules! bail {
            ($msg:expr) => {
                return Err(IrError::Syntax { line: tl, col: tc, msg: $msg })
            };
        }

        match c {
            '\n' => {
                i += 1;
                push!(Tok::Newline);
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => adv!(),
            ';' => {
                while i < chars.len() && chars[i] != '\n' {
                    adv!();
                }
            }
            '%' | '@' => {
                adv!();
                let start = i;
                while i < chars.len() && is_name_char(chars[i]) {
                    adv!();
                }
                if i == start {
                    bail!(format!("`{c}` must be followed by a name"));
                }
                let name: String = chars[start..i].iter().collect();
                push!(if c == '%' { Tok::Local(name) } else { Tok::Global(name) });
            }
            '0'..='9' => {
                let mut v: i128 = 0;
                while i < chars.len() {
                    match chars[i].to_digit(10) {
                        Some(d) => {
                            v = match v.checked_mul(10).and_then(|v| v.checked_add(d as i128)) {
                                Some(v) => v,
                                None => bail!("integer literal too large".into()),
                            };
                            adv!();
                        }
                        None => break,
                    }
                }
                push!(Tok::Int(v));
            }
            c if is_ident_start(c) => {
                let start = i;
                while i < chars.len() && is_ident_continue(chars[i]) {
                    adv!();
                }
                push!(Tok::Ident(chars[start..i].iter().collect()));
            }
            '(' => {
                adv!();
                push!(Tok::LParen);
            }
            ')' => {
                adv!();
                push!(Tok::RParen);
            }
            '{' => {
                adv!();
                push!(Tok::LBrace);
            }
            '}' => {
                adv!();
                push!(Tok::RBrace);
            }
            ',' => {
                adv!();
                push!(Tok::Comma);
            }
            ':' => {
                adv!();
                push!(Tok::Colon);
            }
            '+' => {
                adv!();
                push!(Tok::Plus);
            }
            '-' => {
                adv!();
                push!(Tok::Minus);
            }
            '*' => {
                adv!();
                push!(Tok::Star);
            }
            '~' => {
                adv!();
                push!(Tok::Tilde);
            }
            '^' => {
                adv!();
                push!(Tok::Caret);
            }
            '=' => {
                adv!();
                if i < chars.len() && chars[i] == '>' {
                    adv!();
                    push!(Tok::Arrow);
                } else if i < chars.len() && chars[i] == '=' {
                    adv!();
                    push!(Tok::EqEq);
                } else {
                    push!(Tok::Assign);
                }
            }
            '&' => two!('&', Tok::AndAnd, Tok::Amp),
            '|' => two!('|', Tok::OrOr, Tok::Pipe),
            '!' => two!('=', Tok::NotEq, Tok::Bang),
            '<' => {
                adv!();
                if i < chars.len() && chars[i] == '<' {
                    adv!();
                    push!(Tok::Shl);
                } else {
                    bail!("unexpected `<`".into());
                }
            }
            '>' => {
                adv!();
                if i < chars.len() && chars[i] == '>' {
                    adv!();
                    push!(Tok::Shr);
                } else {
                    bail!("unexpected `>`".into());
                }
            }
            other => bail!(format!("unexpected character `{other}`")),
        }
    }
    Ok(out)
}

/// Cursor over the token stream with span-carrying error helpers.
pub(crate) struct Cursor {
    toks: Vec<Spanned>,
    pos: usize,
    /// Line/col just past the last token, for errors at end of input.
    end: (u32, u32),
}

impl Cursor {
    pub(crate) fn new(toks: Vec<Spanned>) -> Cursor {
        let end = toks.last().map(|t| (t.line, t.col + 1)).unwrap_or((1, 1));
        Cursor { toks, pos: 0, end }
    }

    pub(crate) fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }


    pub(crate) fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    pub(crate) fn pos(&self) -> (u32, u32) {
        self.toks.get(self.pos).map(|t| (t.line, t.col)).unwrap_or(self.end)
    }

    pub(crate) fn err(&self, msg: impl Into<String>) -> IrError {
        let (line, col) = self.pos();
        IrError::Syntax { line, col, msg: msg.into() }
    }

    pub(crate) fn eat(&mut self, want: &Tok) -> bool {
        if self.peek() == Some(want) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub(crate) fn expect(&mut self, want: Tok) -> Result<Spanned, IrError> {
        match self.peek() {
            Some(t) if *t == want => Ok(self.next().unwrap()),
            Some(t) => {
                let msg = format!("expected {}, found {}", want.describe(), t.describe());
                Err(self.err(msg))
            }
            None => Err(self.err(format!("expected {}, found end of input", want.describe()))),
        }
    }

    pub(crate) fn skip_newlines(&mut self) {
        while self.eat(&Tok::Newline) {}
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }
}
