//! SPICE netlist model, parser and emitter.
//!
//! The parser is line oriented and deliberately permissive about dialect: it
//! understands enough structure (element cards, dotted directives, `.subckt`
//! and `.control` blocks, continuation lines) to lint generated files, and
//! passes anything else through untouched.

mod lint;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lint::{lint, lint_for, Analysis, Finding, LintReport, LintRule, Severity};

/// Value of `pi` every generated netlist must define.
pub const PI_PARAM_VALUE: &str = "3.141592653589793";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("netlist is missing the `.end` card")]
    MissingEnd,
    #[error("line {line}: `{block}` block is never terminated")]
    Unterminated { block: &'static str, line: usize },
    #[error("line {line}: `{card}` without a matching opening card")]
    Unexpected { card: String, line: usize },
}

/// A parsed netlist. Equality is structural: source line numbers are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Netlist {
    pub title: String,
    pub cards: Vec<Card>,
}

/// One logical card with the physical line it started on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Card {
    pub line: usize,
    pub kind: CardKind,
}

impl PartialEq for Card {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CardKind {
    Blank,
    Comment(String),
    Element(Element),
    Param {
        keyword: String,
        assignments: Vec<(String, String)>,
    },
    Model {
        keyword: String,
        name: String,
        rest: String,
    },
    Subckt(Subckt),
    Control(ControlBlock),
    /// Any other dotted card, kept verbatim.
    Directive { keyword: String, args: String },
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub name: String,
    pub nodes: Vec<String>,
    /// Everything after the node list, as written.
    pub value: String,
}

impl Element {
    /// Upper-cased element letter (`R`, `V`, `B`, ...).
    pub fn kind_letter(&self) -> char {
        self.name
            .chars()
            .next()
            .map(|c| c.to_ascii_uppercase())
            .unwrap_or('?')
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subckt {
    pub name: String,
    pub ports: Vec<String>,
    /// Trailing `params:` section or other header text.
    pub header_rest: String,
    pub cards: Vec<Card>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBlock {
    pub lines: Vec<ControlLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLine {
    pub line: usize,
    pub text: String,
}

impl ControlLine {
    /// Command text with any trailing `;` comment removed, or `None` for
    /// comment and blank lines.
    pub fn command(&self) -> Option<&str> {
        let t = self.text.trim();
        if t.is_empty() || t.starts_with('*') || t.starts_with(';') {
            return None;
        }
        let t = match t.find(';') {
            Some(i) => t[..i].trim_end(),
            None => t,
        };
        Some(t)
    }

    /// Lower-cased first word of the command.
    pub fn verb(&self) -> Option<String> {
        self.command()
            .and_then(|c| c.split_whitespace().next())
            .map(|w| w.to_ascii_lowercase())
    }
}

impl Netlist {
    /// Top-level element cards in order.
    pub fn elements(&self) -> impl Iterator<Item = (usize, &Element)> {
        self.cards.iter().filter_map(|c| match &c.kind {
            CardKind::Element(e) => Some((c.line, e)),
            _ => None,
        })
    }

    pub fn subckts(&self) -> impl Iterator<Item = (usize, &Subckt)> {
        self.cards.iter().filter_map(|c| match &c.kind {
            CardKind::Subckt(s) => Some((c.line, s)),
            _ => None,
        })
    }

    pub fn control_blocks(&self) -> impl Iterator<Item = (usize, &ControlBlock)> {
        self.cards.iter().filter_map(|c| match &c.kind {
            CardKind::Control(b) => Some((c.line, b)),
            _ => None,
        })
    }

    /// Top-level `.param` assignments in order.
    pub fn params(&self) -> impl Iterator<Item = (usize, &str, &str)> {
        self.cards.iter().flat_map(|c| {
            let line = c.line;
            let list: &[(String, String)] = match &c.kind {
                CardKind::Param { assignments, .. } => assignments,
                _ => &[],
            };
            list.iter().map(move |(n, v)| (line, n.as_str(), v.as_str()))
        })
    }

    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements()
            .map(|(_, e)| e)
            .find(|e| e.name.eq_ignore_ascii_case(name))
    }

    /// Serialize back to `.cir` text with LF line endings.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.title);
        out.push('\n');
        emit_cards(&self.cards, &mut out);
        out
    }
}

impl fmt::Display for Netlist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.emit())
    }
}

fn emit_cards(cards: &[Card], out: &mut String) {
    for card in cards {
        match &card.kind {
            CardKind::Blank => {}
            CardKind::Comment(text) => out.push_str(text),
            CardKind::Element(e) => {
                out.push_str(&e.name);
                for n in &e.nodes {
                    out.push(' ');
                    out.push_str(n);
                }
                if !e.value.is_empty() {
                    out.push(' ');
                    out.push_str(&e.value);
                }
            }
            CardKind::Param {
                keyword,
                assignments,
            } => {
                out.push_str(keyword);
                for (n, v) in assignments {
                    if v.is_empty() {
                        out.push_str(&format!(" {n}"));
                    } else {
                        out.push_str(&format!(" {n} = {v}"));
                    }
                }
            }
            CardKind::Model {
                keyword,
                name,
                rest,
            } => {
                out.push_str(&format!("{keyword} {name}"));
                if !rest.is_empty() {
                    out.push(' ');
                    out.push_str(rest);
                }
            }
            CardKind::Subckt(s) => {
                out.push_str(".subckt ");
                out.push_str(&s.name);
                for p in &s.ports {
                    out.push(' ');
                    out.push_str(p);
                }
                if !s.header_rest.is_empty() {
                    out.push(' ');
                    out.push_str(&s.header_rest);
                }
                out.push('\n');
                emit_cards(&s.cards, out);
                out.push_str(".ends");
            }
            CardKind::Control(b) => {
                out.push_str(".control\n");
                for l in &b.lines {
                    out.push_str(&l.text);
                    out.push('\n');
                }
                out.push_str(".endc");
            }
            CardKind::Directive { keyword, args } => {
                out.push_str(keyword);
                if !args.is_empty() {
                    out.push(' ');
                    out.push_str(args);
                }
            }
            CardKind::End => out.push_str(".end"),
        }
        out.push('\n');
    }
}

/// Parse `.cir` text.
pub fn parse_netlist(text: &str) -> Result<Netlist, ParseError> {
    let mut physical = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l));
    let title = match physical.next() {
        Some(t) => t.trim_end().to_string(),
        None => return Err(ParseError::MissingEnd),
    };
    let logical = join_continuations(physical);

    // Stack of open blocks: the bottom frame is the top level.
    enum Frame {
        Top(Vec<Card>),
        Subckt { line: usize, sub: Subckt },
    }
    let mut stack = vec![Frame::Top(Vec::new())];
    let mut control: Option<(usize, ControlBlock)> = None;
    let mut ended = false;

    fn push(stack: &mut [Frame], card: Card) {
        match stack.last_mut().expect("stack never empty") {
            Frame::Top(cards) => cards.push(card),
            Frame::Subckt { sub, .. } => sub.cards.push(card),
        }
    }

    for (line, text) in logical {
        let trimmed = text.trim();
        let lower = trimmed.to_ascii_lowercase();
        let keyword = lower.split_whitespace().next().unwrap_or("");

        if let Some((_, block)) = control.as_mut() {
            if keyword == ".endc" {
                let (start, block) = control.take().expect("checked");
                push(
                    &mut stack,
                    Card {
                        line: start,
                        kind: CardKind::Control(block),
                    },
                );
            } else {
                block.lines.push(ControlLine {
                    line,
                    text: trimmed.to_string(),
                });
            }
            continue;
        }

        let kind = if trimmed.is_empty() {
            CardKind::Blank
        } else if trimmed.starts_with('*') {
            CardKind::Comment(text.trim().to_string())
        } else if trimmed.starts_with('.') {
            let original_kw = trimmed.split_whitespace().next().unwrap_or("");
            let args = trimmed[original_kw.len()..].trim();
            match keyword {
                ".control" => {
                    control = Some((line, ControlBlock { lines: Vec::new() }));
                    continue;
                }
                ".endc" => {
                    return Err(ParseError::Unexpected {
                        card: ".endc".into(),
                        line,
                    })
                }
                ".subckt" => {
                    let (head, rest) = split_subckt_header(args);
                    let mut tokens = head.into_iter();
                    let name = tokens.next().unwrap_or_default();
                    stack.push(Frame::Subckt {
                        line,
                        sub: Subckt {
                            name,
                            ports: tokens.collect(),
                            header_rest: rest,
                            cards: Vec::new(),
                        },
                    });
                    continue;
                }
                ".ends" => {
                    if stack.len() < 2 {
                        return Err(ParseError::Unexpected {
                            card: ".ends".into(),
                            line,
                        });
                    }
                    if let Some(Frame::Subckt { line: start, sub }) = stack.pop() {
                        push(
                            &mut stack,
                            Card {
                                line: start,
                                kind: CardKind::Subckt(sub),
                            },
                        );
                    }
                    continue;
                }
                ".param" => CardKind::Param {
                    keyword: original_kw.to_string(),
                    assignments: parse_assignments(args),
                },
                ".model" => {
                    let name = args.split_whitespace().next().unwrap_or("").to_string();
                    let rest = args[name.len()..].trim().to_string();
                    CardKind::Model {
                        keyword: original_kw.to_string(),
                        name,
                        rest,
                    }
                }
                ".end" => {
                    ended = true;
                    push(
                        &mut stack,
                        Card {
                            line,
                            kind: CardKind::End,
                        },
                    );
                    break;
                }
                _ => CardKind::Directive {
                    keyword: original_kw.to_string(),
                    args: args.to_string(),
                },
            }
        } else {
            CardKind::Element(parse_element(trimmed))
        };
        push(&mut stack, Card { line, kind });
    }

    if let Some((line, _)) = control {
        return Err(ParseError::Unterminated {
            block: ".control",
            line,
        });
    }
    if stack.len() > 1 {
        if let Some(Frame::Subckt { line, .. }) = stack.pop() {
            return Err(ParseError::Unterminated {
                block: ".subckt",
                line,
            });
        }
    }
    if !ended {
        return Err(ParseError::MissingEnd);
    }
    let cards = match stack.pop() {
        Some(Frame::Top(cards)) => cards,
        _ => unreachable!("only the top frame remains"),
    };

    Ok(Netlist { title, cards })
}

/// Joins `+` continuation lines onto their parent. Line numbers are 1-based
/// and refer to the first physical line of each logical card.
fn join_continuations<'a>(lines: impl Iterator<Item = &'a str>) -> Vec<(usize, String)> {
    let mut out: Vec<(usize, String)> = Vec::new();
    for (i, raw) in lines.enumerate() {
        let line_no = i + 2; // title is line 1
        let t = raw.trim_start();
        if let Some(rest) = t.strip_prefix('+') {
            if let Some((_, prev)) = out.last_mut() {
                prev.push(' ');
                prev.push_str(rest.trim());
                continue;
            }
        }
        out.push((line_no, raw.to_string()));
    }
    out
}

/// Splits an element card into name, nodes and the remaining value text.
fn parse_element(text: &str) -> Element {
    let tokens = tokens_with_offsets(text);
    let name = tokens.first().map(|t| t.1.to_string()).unwrap_or_default();
    let letter = name.chars().next().map(|c| c.to_ascii_uppercase()).unwrap_or('?');
    let after_name = &tokens[1.min(tokens.len())..];

    let node_count = match letter {
        'R' | 'C' | 'L' | 'V' | 'I' | 'B' | 'D' | 'F' | 'H' | 'W' => 2,
        'E' | 'G' => {
            let behavioral = after_name.get(2).is_some_and(|(_, t)| {
                let t = t.to_ascii_lowercase();
                ["value", "vol", "cur", "poly", "table"]
                    .iter()
                    .any(|k| t.starts_with(k))
            });
            if behavioral {
                2
            } else {
                4
            }
        }
        'S' | 'M' | 'T' | 'O' => 4,
        'Q' | 'J' | 'Z' => 3,
        'X' => {
            let plain = after_name
                .iter()
                .take_while(|(_, t)| !t.contains('=') && !t.eq_ignore_ascii_case("params:"))
                .count();
            plain.saturating_sub(1)
        }
        _ => 0,
    };
    // Node tokens must be plain words; stop at anything that opens a group.
    let node_count = after_name
        .iter()
        .take(node_count)
        .take_while(|(_, t)| !t.contains(['(', '{', '=', '\'']))
        .count();
    let nodes: Vec<String> = after_name[..node_count]
        .iter()
        .map(|(_, t)| t.to_string())
        .collect();
    let value = match after_name.get(node_count) {
        Some((offset, _)) => text[*offset..].trim().to_string(),
        None => String::new(),
    };
    Element { name, nodes, value }
}

fn tokens_with_offsets(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s, &text[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, &text[s..]));
    }
    out
}

fn split_subckt_header(args: &str) -> (Vec<String>, String) {
    let tokens = tokens_with_offsets(args);
    let mut head = Vec::new();
    for (offset, t) in &tokens {
        if t.contains('=') || t.eq_ignore_ascii_case("params:") {
            return (head, args[*offset..].trim().to_string());
        }
        head.push(t.to_string());
    }
    (head, String::new())
}

/// Parses `a = 1 b={2*a}` style assignment lists. Braced, quoted and
/// parenthesized values may contain spaces.
fn parse_assignments(args: &str) -> Vec<(String, String)> {
    let tokens = group_tokens(args);
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if i + 2 < tokens.len() && tokens.get(i + 1).map(String::as_str) == Some("=") {
            let value = tokens.get(i + 2).cloned().unwrap_or_default();
            out.push((tokens[i].clone(), value));
            i += 3;
        } else {
            // Malformed remainder: keep it as a nameless entry so it survives emission.
            out.push((tokens[i..].join(" "), String::new()));
            break;
        }
    }
    out
}

/// Tokenizer that keeps `{...}`, `(...)` and quoted groups together and
/// emits `=` as a separate token.
fn group_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut depth = 0i32;
    let mut quote: Option<char> = None;
    for c in text.chars() {
        if let Some(q) = quote {
            cur.push(c);
            if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '\'' | '"' => {
                quote = Some(c);
                cur.push(c);
            }
            '{' | '(' => {
                depth += 1;
                cur.push(c);
            }
            '}' | ')' => {
                depth -= 1;
                cur.push(c);
            }
            '=' if depth == 0 => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push("=".into());
            }
            c if c.is_whitespace() && depth == 0 => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

/// Parses a SPICE number with an optional scale suffix (`1k`, `4u`,
/// `1Meg`, `2.5e-3`). Trailing unit letters after the suffix are ignored.
pub fn parse_spice_number(text: &str) -> Option<f64> {
    let t = text.trim();
    let bytes = t.as_bytes();
    let mut end = 0;
    let mut seen_digit = false;
    if end < bytes.len() && (bytes[end] == b'+' || bytes[end] == b'-') {
        end += 1;
    }
    while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
        seen_digit |= bytes[end].is_ascii_digit();
        end += 1;
    }
    if !seen_digit {
        return None;
    }
    if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
        let mut k = end + 1;
        if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
            k += 1;
        }
        let digits_start = k;
        while k < bytes.len() && bytes[k].is_ascii_digit() {
            k += 1;
        }
        if k > digits_start {
            end = k;
        }
    }
    let mantissa: f64 = t[..end].parse().ok()?;
    let suffix = t[end..].to_ascii_lowercase();
    if !suffix.chars().all(|c| c.is_ascii_alphabetic()) {
        return None;
    }
    let scale = if suffix.starts_with("meg") {
        1e6
    } else if suffix.starts_with("mil") {
        25.4e-6
    } else {
        match suffix.chars().next() {
            None => 1.0,
            Some('t') => 1e12,
            Some('g') => 1e9,
            Some('k') => 1e3,
            Some('m') => 1e-3,
            Some('u') => 1e-6,
            Some('n') => 1e-9,
            Some('p') => 1e-12,
            Some('f') => 1e-15,
            Some(_) => 1.0,
        }
    };
    Some(mantissa * scale)
}
