use super::{ParseError, Pos};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    /// Unquoted identifier starting with a lowercase letter.
    Name(String),
    /// `'quoted atom'`
    Quoted(String),
    Var(String),
    Int(i64),
    Real(f64),
    Str(String),
    /// Run of symbol characters other than `:-` and `->`.
    Sym(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Hash,
    End,
    Neck,
    Arrow,
    Eof,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Pos,
    pub start: usize,
    pub end: usize,
}

const SYMBOL_CHARS: &str = "+-*/\\<>=:&?@^~";

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    Lexer {
        src,
        bytes: src.as_bytes(),
        at: 0,
        line: 1,
        col: 1,
    }
    .run()
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    at: usize,
    line: u32,
    col: u32,
}

impl Lexer<'_> {
    fn peek(&self) -> Option<char> {
        self.src[self.at..].chars().next()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.src.get(self.at + offset..)?.chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.at += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn pos(&self) -> Pos {
        Pos::new(self.line, self.col)
    }

    fn run(mut self) -> Result<Vec<Token>, ParseError> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            let pos = self.pos();
            let start = self.at;
            let Some(c) = self.peek() else {
                out.push(Token {
                    tok: Tok::Eof,
                    pos,
                    start,
                    end: start,
                });
                return Ok(out);
            };
            let tok =
                match c {
                    '(' => self.single(Tok::LParen),
                    ')' => self.single(Tok::RParen),
                    '{' => self.single(Tok::LBrace),
                    '}' => self.single(Tok::RBrace),
                    ',' => self.single(Tok::Comma),
                    ';' => self.single(Tok::Semi),
                    '#' => self.single(Tok::Hash),
                    '.' => {
                        self.bump();
                        match self.peek() {
                            None | Some('%') => Tok::End,
                            Some(c) if c.is_whitespace() => Tok::End,
                            Some(c) => return Err(ParseError::new(
                                pos,
                                format!(
                                    "unexpected '{c}' after '.'; a period must end a declaration"
                                ),
                            )),
                        }
                    }
                    '"' => self.string(pos)?,
                    '\'' => self.quoted(pos)?,
                    c if c.is_ascii_digit() => self.number(pos)?,
                    c if c.is_ascii_lowercase() => Tok::Name(self.word()),
                    c if c.is_ascii_uppercase() || c == '_' => Tok::Var(self.word()),
                    c if SYMBOL_CHARS.contains(c) => {
                        let mut s = String::new();
                        while let Some(c) = self.peek().filter(|c| SYMBOL_CHARS.contains(*c)) {
                            s.push(c);
                            self.bump();
                        }
                        match s.as_str() {
                            ":-" => Tok::Neck,
                            "->" => Tok::Arrow,
                            _ => Tok::Sym(s),
                        }
                    }
                    c => return Err(ParseError::new(pos, format!("unexpected character '{c}'"))),
                };
            out.push(Token {
                tok,
                pos,
                start,
                end: self.at,
            });
        }
    }

    fn single(&mut self, tok: Tok) -> Tok {
        self.bump();
        tok
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == '%' {
                while let Some(c) = self.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else {
                break;
            }
        }
    }

    fn word(&mut self) -> String {
        let start = self.at;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            self.bump();
        }
        self.src[start..self.at].to_string()
    }

    fn digits(&mut self) {
        while self.at < self.bytes.len() && self.bytes[self.at].is_ascii_digit() {
            self.bump();
        }
    }

    fn number(&mut self, pos: Pos) -> Result<Tok, ParseError> {
        let start = self.at;
        self.digits();
        let mut real = false;
        if self.peek() == Some('.') && self.peek_at(1).is_some_and(|c| c.is_ascii_digit()) {
            real = true;
            self.bump();
            self.digits();
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let sign = usize::from(matches!(self.peek_at(1), Some('+' | '-')));
            if self.peek_at(1 + sign).is_some_and(|c| c.is_ascii_digit()) {
                real = true;
                for _ in 0..=sign {
                    self.bump();
                }
                self.digits();
            }
        }
        let text = &self.src[start..self.at];
        if real {
            text.parse()
                .map(Tok::Real)
                .map_err(|_| ParseError::new(pos, format!("malformed real literal '{text}'")))
        } else {
            text.parse()
                .map(Tok::Int)
                .map_err(|_| ParseError::new(pos, format!("integer literal '{text}' out of range")))
        }
    }

    fn escaped(&mut self, pos: Pos, quote: char) -> Result<String, ParseError> {
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                None => return Err(ParseError::new(pos, "unterminated literal")),
                Some(c) if c == quote => return Ok(s),
                Some('\\') => match self.bump() {
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    Some('\\') => s.push('\\'),
                    Some('"') => s.push('"'),
                    Some('\'') => s.push('\''),
                    Some(c) => return Err(ParseError::new(pos, format!("unknown escape '\\{c}'"))),
                    None => return Err(ParseError::new(pos, "unterminated literal")),
                },
                Some(c) => s.push(c),
            }
        }
    }

    fn string(&mut self, pos: Pos) -> Result<Tok, ParseError> {
        self.escaped(pos, '"').map(Tok::Str)
    }

    fn quoted(&mut self, pos: Pos) -> Result<Tok, ParseError> {
        let s = self.escaped(pos, '\'')?;
        if s.is_empty() {
            return Err(ParseError::new(pos, "empty quoted atom"));
        }
        Ok(Tok::Quoted(s))
    }
}
