//! HCL-syntax configuration parser for the block/attribute subset the drift
//! report needs: resource and module blocks, literal attribute values, and
//! file/line locations. References and function calls are recorded as opaque
//! expression text, never evaluated.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A parsed attribute value. Non-literal expressions are kept verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum AttrValue {
    Str(String),
    Num(f64),
    Bool(bool),
    List(Vec<AttrValue>),
    Map(BTreeMap<String, AttrValue>),
    /// Opaque expression text (references, interpolations, function calls).
    Expr(String),
}

impl AttrValue {
    /// Literal comparison form as a JSON value; `None` for opaque expressions.
    pub fn as_json(&self) -> Option<serde_json::Value> {
        match self {
            AttrValue::Str(s) => Some(serde_json::Value::String(s.clone())),
            AttrValue::Num(n) => serde_json::Number::from_f64(*n).map(serde_json::Value::Number),
            AttrValue::Bool(b) => Some(serde_json::Value::Bool(*b)),
            AttrValue::List(items) => items
                .iter()
                .map(AttrValue::as_json)
                .collect::<Option<Vec<_>>>()
                .map(serde_json::Value::Array),
            AttrValue::Map(map) => map
                .iter()
                .map(|(k, v)| v.as_json().map(|v| (k.clone(), v)))
                .collect::<Option<serde_json::Map<_, _>>>()
                .map(serde_json::Value::Object),
            AttrValue::Expr(_) => None,
        }
    }

    /// True if the value (recursively) contains the given string literal.
    pub fn contains_literal(&self, needle: &str) -> bool {
        match self {
            AttrValue::Str(s) => s == needle,
            AttrValue::List(items) => items.iter().any(|v| v.contains_literal(needle)),
            AttrValue::Map(map) => map.values().any(|v| v.contains_literal(needle)),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attr {
    pub value: AttrValue,
    pub line: usize,
}

/// One parsed block (`resource`, `module`, or other top-level block kinds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// Block kind keyword, e.g. `resource`, `module`, `moved`.
    pub kind: String,
    /// Quoted labels following the keyword, e.g. `["aws_vpc", "main"]`.
    pub labels: Vec<String>,
    pub attrs: BTreeMap<String, Attr>,
    pub blocks: Vec<Block>,
    pub file: PathBuf,
    /// Inclusive 1-based (start, end) line span.
    pub span: (usize, usize),
}

impl Block {
    /// `type.name` address for resource blocks; `module.name` for modules.
    pub fn address(&self) -> Option<String> {
        match (self.kind.as_str(), self.labels.len()) {
            ("resource", 2) => Some(format!("{}.{}", self.labels[0], self.labels[1])),
            ("module", 1) => Some(format!("module.{}", self.labels[0])),
            _ => None,
        }
    }

    pub fn resource_type(&self) -> Option<&str> {
        (self.kind == "resource" && self.labels.len() == 2).then(|| self.labels[0].as_str())
    }

    /// True if any literal in the block (attributes or nested blocks) equals
    /// the given string.
    pub fn contains_literal(&self, needle: &str) -> bool {
        self.attrs.values().any(|a| a.value.contains_literal(needle))
            || self.blocks.iter().any(|b| b.contains_literal(needle))
    }
}

#[derive(Debug, Error)]
#[error("{file}:{line}: {cause}")]
pub struct ParseError {
    pub file: PathBuf,
    pub line: usize,
    pub cause: String,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    file: &'a Path,
}

impl<'a> Parser<'a> {
    fn error(&self, cause: impl fmt::Display) -> ParseError {
        ParseError { file: self.file.to_path_buf(), line: self.line, cause: cause.to_string() }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
        }
        Some(c)
    }

    /// Skips whitespace and comments. When `stop_at_newline` is set, stops
    /// before consuming a line break.
    fn skip_trivia(&mut self, stop_at_newline: bool) {
        loop {
            match self.peek() {
                Some(b'\n') if stop_at_newline => return,
                Some(c) if (c as char).is_whitespace() => {
                    self.bump();
                }
                Some(b'#') => self.skip_line(),
                Some(b'/') if self.src.get(self.pos + 1) == Some(&b'/') => self.skip_line(),
                Some(b'/') if self.src.get(self.pos + 1) == Some(&b'*') => {
                    self.bump();
                    self.bump();
                    while self.pos < self.src.len() {
                        if self.peek() == Some(b'*') && self.src.get(self.pos + 1) == Some(&b'/') {
                            self.bump();
                            self.bump();
                            break;
                        }
                        self.bump();
                    }
                }
                _ => return,
            }
        }
    }

    fn skip_line(&mut self) {
        while let Some(c) = self.peek() {
            if c == b'\n' {
                return;
            }
            self.bump();
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if (c as char).is_alphanumeric() || c == b'_' || c == b'-' {
                self.bump();
            } else {
                break;
            }
        }
        if start == self.pos {
            return Err(self.error("expected identifier"));
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn string_lit(&mut self) -> Result<String, ParseError> {
        if self.bump() != Some(b'"') {
            return Err(self.error("expected string literal"));
        }
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.error("unterminated string literal")),
                Some(b'"') => return Ok(out),
                Some(b'\\') => match self.bump() {
                    Some(b'n') => out.push('\n'),
                    Some(b't') => out.push('\t'),
                    Some(b'"') => out.push('"'),
                    Some(b'\\') => out.push('\\'),
                    Some(c) => {
                        out.push('\\');
                        out.push(c as char);
                    }
                    None => return Err(self.error("unterminated escape")),
                },
                Some(c) => out.push(c as char),
            }
        }
    }

    fn parse_file(&mut self) -> Result<Vec<Block>, ParseError> {
        let mut blocks = Vec::new();
        loop {
            self.skip_trivia(false);
            if self.peek().is_none() {
                return Ok(blocks);
            }
            blocks.push(self.parse_block()?);
        }
    }

    fn parse_block(&mut self) -> Result<Block, ParseError> {
        let start_line = self.line;
        let kind = self.ident()?;
        let mut labels = Vec::new();
        loop {
            self.skip_trivia(true);
            match self.peek() {
                Some(b'"') => labels.push(self.string_lit()?),
                Some(b'{') => break,
                _ => return Err(self.error(format!("expected label or `{{` after `{kind}`"))),
            }
        }
        self.bump(); // consume '{'
        let (attrs, blocks) = self.parse_body()?;
        Ok(Block {
            kind,
            labels,
            attrs,
            blocks,
            file: self.file.to_path_buf(),
            span: (start_line, self.line),
        })
    }

    fn parse_body(&mut self) -> Result<(BTreeMap<String, Attr>, Vec<Block>), ParseError> {
        let mut attrs = BTreeMap::new();
        let mut blocks = Vec::new();
        loop {
            self.skip_trivia(false);
            match self.peek() {
                None => return Err(self.error("unterminated block, expected `}`")),
                Some(b'}') => {
                    self.bump();
                    return Ok((attrs, blocks));
                }
                _ => {}
            }
            let line = self.line;
            let name = self.ident()?;
            self.skip_trivia(true);
            match self.peek() {
                Some(b'=') => {
                    self.bump();
                    self.skip_trivia(true);
                    let value = self.parse_value()?;
                    attrs.insert(name, Attr { value, line });
                }
                Some(b'{') | Some(b'"') => {
                    // Nested block (possibly labeled), e.g. `ingress { ... }`.
                    let mut labels = Vec::new();
                    loop {
                        self.skip_trivia(true);
                        match self.peek() {
                            Some(b'"') => labels.push(self.string_lit()?),
                            Some(b'{') => break,
                            _ => return Err(self.error("expected `{` in nested block")),
                        }
                    }
                    self.bump();
                    let (inner_attrs, inner_blocks) = self.parse_body()?;
                    blocks.push(Block {
                        kind: name,
                        labels,
                        attrs: inner_attrs,
                        blocks: inner_blocks,
                        file: self.file.to_path_buf(),
                        span: (line, self.line),
                    });
                }
                _ => return Err(self.error(format!("expected `=` or block body after `{name}`"))),
            }
        }
    }

    fn parse_value(&mut self) -> Result<AttrValue, ParseError> {
        match self.peek() {
            Some(b'"') => {
                let s = self.string_lit()?;
                if s.contains("${") {
                    return Ok(AttrValue::Expr(format!("\"{s}\"")));
                }
                Ok(AttrValue::Str(s))
            }
            Some(b'[') => {
                self.bump();
                let mut items = Vec::new();
                loop {
                    self.skip_trivia(false);
                    match self.peek() {
                        None => return Err(self.error("unterminated list")),
                        Some(b']') => {
                            self.bump();
                            return Ok(AttrValue::List(items));
                        }
                        Some(b',') => {
                            self.bump();
                        }
                        _ => items.push(self.parse_value()?),
                    }
                }
            }
            Some(b'{') => {
                self.bump();
                let mut map = BTreeMap::new();
                loop {
                    self.skip_trivia(false);
                    match self.peek() {
                        None => return Err(self.error("unterminated map")),
                        Some(b'}') => {
                            self.bump();
                            return Ok(AttrValue::Map(map));
                        }
                        Some(b',') => {
                            self.bump();
                        }
                        _ => {
                            let key = match self.peek() {
                                Some(b'"') => self.string_lit()?,
                                _ => self.ident()?,
                            };
                            self.skip_trivia(true);
                            match self.peek() {
                                Some(b'=') | Some(b':') => {
                                    self.bump();
                                }
                                _ => return Err(self.error("expected `=` in map entry")),
                            }
                            self.skip_trivia(true);
                            map.insert(key, self.parse_value()?);
                        }
                    }
                }
            }
            Some(c) if c.is_ascii_digit() || c == b'-' => {
                let start = self.pos;
                self.bump();
                while let Some(c) = self.peek() {
                    if c.is_ascii_digit() || c == b'.' {
                        self.bump();
                    } else {
                        break;
                    }
                }
                let text = String::from_utf8_lossy(&self.src[start..self.pos]);
                text.parse::<f64>()
                    .map(AttrValue::Num)
                    .map_err(|_| self.error(format!("invalid number `{text}`")))
            }
            Some(_) => {
                // true/false, or an opaque expression up to end of line with
                // balanced brackets.
                let start = self.pos;
                let mut depth = 0usize;
                while let Some(c) = self.peek() {
                    match c {
                        b'\n' if depth == 0 => break,
                        b'(' | b'[' | b'{' => depth += 1,
                        b')' | b']' | b'}' => {
                            if depth == 0 {
                                break;
                            }
                            depth -= 1;
                        }
                        b',' if depth == 0 => break,
                        _ => {}
                    }
                    self.bump();
                }
                let text = String::from_utf8_lossy(&self.src[start..self.pos]).trim().to_string();
                match text.as_str() {
                    "true" => Ok(AttrValue::Bool(true)),
                    "false" => Ok(AttrValue::Bool(false)),
                    "" => Err(self.error("expected value")),
                    _ => Ok(AttrValue::Expr(text)),
                }
            }
            None => Err(self.error("expected value")),
        }
    }
}

/// Parses one configuration file into its top-level blocks.
pub fn parse_file(file: &Path, source: &str) -> Result<Vec<Block>, ParseError> {
    let mut parser = Parser { src: source.as_bytes(), pos: 0, line: 1, file };
    parser.parse_file()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> Vec<Block> {
        parse_file(Path::new("main.tf"), src).unwrap()
    }

    #[test]
    fn parses_resource_block_with_span() {
        let blocks = parse(
            "resource \"aws_vpc\" \"main\" {\n  cidr_block = \"10.0.0.0/16\"\n  enable_dns = true\n}\n",
        );
        assert_eq!(blocks.len(), 1);
        let b = &blocks[0];
        assert_eq!(b.address().as_deref(), Some("aws_vpc.main"));
        assert_eq!(b.span, (1, 4));
        assert_eq!(b.attrs["cidr_block"].value, AttrValue::Str("10.0.0.0/16".to_string()));
        assert_eq!(b.attrs["enable_dns"].value, AttrValue::Bool(true));
        assert_eq!(b.attrs["cidr_block"].line, 2);
    }

    #[test]
    fn parses_numbers_lists_and_maps() {
        let blocks = parse(
            "resource \"aws_instance\" \"a\" {\n  count = 2\n  azs = [\"us-east-1a\", \"us-east-1b\"]\n  tags = { Name = \"web\", Env = \"prod\" }\n}\n",
        );
        let b = &blocks[0];
        assert_eq!(b.attrs["count"].value, AttrValue::Num(2.0));
        assert_eq!(
            b.attrs["azs"].value,
            AttrValue::List(vec![
                AttrValue::Str("us-east-1a".to_string()),
                AttrValue::Str("us-east-1b".to_string())
            ])
        );
        match &b.attrs["tags"].value {
            AttrValue::Map(m) => assert_eq!(m["Name"], AttrValue::Str("web".to_string())),
            other => panic!("expected map, got {other:?}"),
        }
    }

    #[test]
    fn references_become_opaque_expressions() {
        let blocks = parse(
            "resource \"aws_subnet\" \"a\" {\n  vpc_id = aws_vpc.main.id\n  cidr_block = var.cidr\n}\n",
        );
        let b = &blocks[0];
        assert_eq!(b.attrs["vpc_id"].value, AttrValue::Expr("aws_vpc.main.id".to_string()));
        assert!(b.attrs["vpc_id"].value.as_json().is_none());
    }

    #[test]
    fn interpolated_strings_are_expressions() {
        let blocks = parse("resource \"aws_s3_bucket\" \"b\" {\n  bucket = \"${var.prefix}-logs\"\n}\n");
        assert!(matches!(blocks[0].attrs["bucket"].value, AttrValue::Expr(_)));
    }

    #[test]
    fn parses_nested_blocks() {
        let blocks = parse(
            "resource \"aws_security_group\" \"sg\" {\n  name = \"web\"\n  ingress {\n    from_port = 80\n    to_port = 80\n  }\n}\n",
        );
        let b = &blocks[0];
        assert_eq!(b.blocks.len(), 1);
        assert_eq!(b.blocks[0].kind, "ingress");
        assert_eq!(b.blocks[0].attrs["from_port"].value, AttrValue::Num(80.0));
    }

    #[test]
    fn parses_module_and_moved_blocks() {
        let blocks = parse(
            "module \"network\" {\n  source = \"./network\"\n}\n\nmoved {\n  from = aws_vpc.old\n  to = aws_vpc.new\n}\n",
        );
        assert_eq!(blocks[0].address().as_deref(), Some("module.network"));
        assert_eq!(blocks[1].kind, "moved");
        assert_eq!(blocks[1].attrs["from"].value, AttrValue::Expr("aws_vpc.old".to_string()));
    }

    #[test]
    fn comments_are_skipped() {
        let blocks = parse(
            "# leading comment\nresource \"aws_vpc\" \"main\" {\n  // inline\n  cidr_block = \"10.0.0.0/16\" /* trailing */\n}\n",
        );
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].attrs.len(), 1);
    }

    #[test]
    fn malformed_block_reports_file_and_line() {
        let err = parse_file(Path::new("bad.tf"), "resource \"aws_vpc\" \"main\" {\n  cidr_block =\n").unwrap_err();
        assert_eq!(err.file, Path::new("bad.tf"));
        assert!(err.line >= 2, "line was {}", err.line);
    }

    #[test]
    fn contains_literal_searches_nested_values() {
        let blocks = parse(
            "resource \"aws_instance\" \"a\" {\n  tags = { attached = \"vol-123\" }\n  nested {\n    id = \"i-9\"\n  }\n}\n",
        );
        assert!(blocks[0].contains_literal("vol-123"));
        assert!(blocks[0].contains_literal("i-9"));
        assert!(!blocks[0].contains_literal("vpc-1"));
    }
}
