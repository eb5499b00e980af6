use crate::error::{Error, Result};
use crate::schema::{is_identifier, Value};

/// Byte cursor over one statement line. Columns in errors are 1-based byte
/// offsets.
pub(crate) struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        Self { text, pos: 0 }
    }

    pub(crate) fn column(&self) -> usize {
        self.pos + 1
    }

    pub(crate) fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::parse(self.column(), message))
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos == self.text.len()
    }

    pub(crate) fn skip_spaces(&mut self) {
        while self.rest().starts_with(' ') {
            self.pos += 1;
        }
    }

    pub(crate) fn peek(&self) -> Option<u8> {
        self.text.as_bytes().get(self.pos).copied()
    }

    /// Consumes `word`, which must be followed by a non-identifier byte.
    pub(crate) fn keyword(&mut self, word: &str) -> Result<()> {
        self.skip_spaces();
        let rest = self.rest();
        let boundary = rest
            .as_bytes()
            .get(word.len())
            .is_none_or(|b| !(b.is_ascii_alphanumeric() || *b == b'_'));
        if rest.starts_with(word) && boundary {
            self.pos += word.len();
            Ok(())
        } else {
            self.error(format!("expected {word}"))
        }
    }

    pub(crate) fn try_keyword(&mut self, word: &str) -> bool {
        let save = self.pos;
        if self.keyword(word).is_ok() {
            true
        } else {
            self.pos = save;
            false
        }
    }

    pub(crate) fn punct(&mut self, c: u8) -> Result<()> {
        self.skip_spaces();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.error(format!("expected '{}'", c as char))
        }
    }

    pub(crate) fn try_punct(&mut self, c: u8) -> bool {
        self.skip_spaces();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub(crate) fn identifier(&mut self) -> Result<&'a str> {
        self.skip_spaces();
        let rest = self.rest();
        let len = rest
            .bytes()
            .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
            .count();
        let ident = &rest[..len];
        if !is_identifier(ident) {
            return self.error("expected identifier");
        }
        self.pos += len;
        Ok(ident)
    }

    pub(crate) fn literal(&mut self) -> Result<Value> {
        self.skip_spaces();
        match self.peek() {
            Some(b'\'') => self.string_literal(),
            Some(b'-' | b'0'..=b'9') => self.integer_literal(),
            Some(b'T') if self.try_keyword("TRUE") => Ok(Value::Boolean(true)),
            Some(b'F') if self.try_keyword("FALSE") => Ok(Value::Boolean(false)),
            _ => self.error("expected literal"),
        }
    }

    fn integer_literal(&mut self) -> Result<Value> {
        let start = self.pos;
        let bytes = self.text.as_bytes();
        let mut end = start;
        if bytes.get(end) == Some(&b'-') {
            end += 1;
        }
        let digits_start = end;
        while bytes.get(end).is_some_and(u8::is_ascii_digit) {
            end += 1;
        }
        if end == digits_start {
            return self.error("expected digits");
        }
        let text = &self.text[start..end];
        // canonical integers have no leading zeros (and no "-0")
        let digits = &self.text[digits_start..end];
        if (digits.len() > 1 && digits.starts_with('0')) || text == "-0" {
            return self.error("non-canonical integer literal");
        }
        match text.parse::<i64>() {
            Ok(v) => {
                self.pos = end;
                Ok(Value::Integer(v))
            }
            Err(_) => self.error("integer literal out of range"),
        }
    }

    fn string_literal(&mut self) -> Result<Value> {
        let start_col = self.column();
        self.pos += 1;
        let mut out = String::new();
        loop {
            let rest = self.rest();
            let Some(q) = rest.find('\'') else {
                return Err(Error::parse(start_col, "unterminated string literal"));
            };
            out.push_str(&rest[..q]);
            self.pos += q + 1;
            if self.peek() == Some(b'\'') {
                out.push('\'');
                self.pos += 1;
            } else {
                break;
            }
        }
        if out.contains(['\n', '\r']) {
            return Err(Error::parse(start_col, "line break inside string literal"));
        }
        Ok(Value::Text(out))
    }

    pub(crate) fn finish(&mut self) -> Result<()> {
        self.skip_spaces();
        if self.at_end() {
            Ok(())
        } else {
            self.error("trailing characters after statement")
        }
    }
}

pub(crate) fn write_literal(out: &mut String, value: &Value) {
    use std::fmt::Write;
    match value {
        Value::Integer(v) => write!(out, "{v}").expect("writing to String"),
        Value::Boolean(true) => out.push_str("TRUE"),
        Value::Boolean(false) => out.push_str("FALSE"),
        Value::Text(s) => {
            out.push('\'');
            for ch in s.chars() {
                if ch == '\'' {
                    out.push('\'');
                }
                out.push(ch);
            }
            out.push('\'');
        }
    }
}
