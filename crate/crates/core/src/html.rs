//! Minimal tag tokenizer for table markup.
//!
//! Covers what table recognizers emit: start/end tags with quoted or bare
//! attributes, self-closing tags, text, and the five predefined entities.
//! It is not a general HTML parser.

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Open {
        name: String,
        attrs: Vec<(String, String)>,
        self_closing: bool,
    },
    Close {
        name: String,
    },
    Text(String),
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

pub fn unescape(text: &str) -> String {
    text.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&nbsp;", " ")
        .replace("&amp;", "&")
}

pub fn tokenize(input: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut rest = input;
    while !rest.is_empty() {
        if let Some(after) = rest.strip_prefix("<!--") {
            let end = after
                .find("-->")
                .ok_or_else(|| invalid("unterminated comment"))?;
            rest = &after[end + 3..];
            continue;
        }
        if let Some(after) = rest.strip_prefix('<') {
            let end = find_tag_end(after).ok_or_else(|| invalid("unterminated tag"))?;
            tokens.push(parse_tag(&after[..end])?);
            rest = &after[end + 1..];
        } else {
            let end = rest.find('<').unwrap_or(rest.len());
            let text = &rest[..end];
            if !text.trim().is_empty() {
                tokens.push(Token::Text(unescape(text)));
            }
            rest = &rest[end..];
        }
    }
    Ok(tokens)
}

fn find_tag_end(s: &str) -> Option<usize> {
    let mut quote = None;
    for (i, c) in s.char_indices() {
        match (quote, c) {
            (None, '"' | '\'') => quote = Some(c),
            (Some(q), c) if c == q => quote = None,
            (None, '>') => return Some(i),
            _ => {}
        }
    }
    None
}

fn parse_tag(body: &str) -> Result<Token> {
    let body = body.trim();
    if let Some(name) = body.strip_prefix('/') {
        let name = name.trim().to_ascii_lowercase();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric()) {
            return Err(invalid(format!("bad end tag </{name}>")));
        }
        return Ok(Token::Close { name });
    }
    let (body, self_closing) = match body.strip_suffix('/') {
        Some(b) => (b.trim_end(), true),
        None => (body, false),
    };
    let name_end = body
        .find(|c: char| c.is_whitespace())
        .unwrap_or(body.len());
    let name = body[..name_end].to_ascii_lowercase();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric()) {
        return Err(invalid(format!("bad tag <{body}>")));
    }
    let attrs = parse_attrs(&body[name_end..])?;
    Ok(Token::Open {
        name,
        attrs,
        self_closing,
    })
}

fn parse_attrs(mut s: &str) -> Result<Vec<(String, String)>> {
    let mut attrs = Vec::new();
    loop {
        s = s.trim_start();
        if s.is_empty() {
            return Ok(attrs);
        }
        let key_end = s
            .find(|c: char| c == '=' || c.is_whitespace())
            .unwrap_or(s.len());
        let key = s[..key_end].to_ascii_lowercase();
        if key.is_empty() {
            return Err(invalid(format!("bad attribute list {s:?}")));
        }
        s = s[key_end..].trim_start();
        let Some(after_eq) = s.strip_prefix('=') else {
            attrs.push((key, String::new()));
            continue;
        };
        let after_eq = after_eq.trim_start();
        let (value, rest) = match after_eq.chars().next() {
            Some(q @ ('"' | '\'')) => {
                let inner = &after_eq[1..];
                let close = inner
                    .find(q)
                    .ok_or_else(|| invalid("unterminated attribute value"))?;
                (&inner[..close], &inner[close + 1..])
            }
            _ => {
                let end = after_eq
                    .find(char::is_whitespace)
                    .unwrap_or(after_eq.len());
                (&after_eq[..end], &after_eq[end..])
            }
        };
        attrs.push((key, unescape(value)));
        s = rest;
    }
}

/// Tags that never take a closing tag.
pub fn is_void(name: &str) -> bool {
    matches!(name, "br" | "hr" | "img" | "col" | "meta" | "input")
}

/// Check that every non-void element is closed in properly nested order.
pub fn validate_well_formed(input: &str) -> Result<()> {
    let mut stack: Vec<String> = Vec::new();
    for tok in tokenize(input)? {
        match tok {
            Token::Open {
                name, self_closing, ..
            } => {
                if !self_closing && !is_void(&name) {
                    stack.push(name);
                }
            }
            Token::Close { name } => match stack.pop() {
                Some(open) if open == name => {}
                Some(open) => {
                    return Err(invalid(format!("</{name}> closes <{open}>")));
                }
                None => return Err(invalid(format!("</{name}> without opening tag"))),
            },
            Token::Text(_) => {}
        }
    }
    match stack.pop() {
        Some(open) => Err(invalid(format!("<{open}> never closed"))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_attributes_and_text() {
        let toks = tokenize(r#"<td colspan="2" rowspan=3>a &amp; b</td>"#).unwrap();
        assert_eq!(
            toks,
            vec![
                Token::Open {
                    name: "td".into(),
                    attrs: vec![("colspan".into(), "2".into()), ("rowspan".into(), "3".into())],
                    self_closing: false
                },
                Token::Text("a & b".into()),
                Token::Close { name: "td".into() },
            ]
        );
    }

    #[test]
    fn well_formedness() {
        assert!(validate_well_formed("<table><tr><td>x<br/></td></tr></table>").is_ok());
        assert!(validate_well_formed("<table><tr><td>x</tr></table>").is_err());
        assert!(validate_well_formed("<table><tr>").is_err());
        assert!(validate_well_formed("</td>").is_err());
        assert!(validate_well_formed("<table").is_err());
    }

    #[test]
    fn escape_round_trip() {
        let s = "a<b & \"c\">";
        assert_eq!(unescape(&escape(s)), s);
    }
}
