//! Structural lint for emitted Verilog: module balance, declare-before-use,
//! and port/compare widths against the netlist geometry. Token-level only;
//! it understands the subset the emitter produces.

use std::collections::{HashMap, HashSet};
use std::fmt;

use super::Netlist;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PortWidths {
    pub code_bits: u32,
    pub record_bits: usize,
    pub leaf_bits: u32,
    pub acc_bits: u32,
}

impl From<&Netlist> for PortWidths {
    fn from(n: &Netlist) -> Self {
        PortWidths {
            code_bits: n.code_bits,
            record_bits: n.record_bits,
            leaf_bits: n.leaf_bits,
            acc_bits: n.acc_bits,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LintFinding {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LintReport {
    pub findings: Vec<LintFinding>,
    pub modules: usize,
}

impl LintReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    fn push(&mut self, line: usize, message: String) {
        self.findings.push(LintFinding { line, message });
    }
}

impl fmt::Display for LintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_clean() {
            return write!(f, "clean ({} modules)", self.modules);
        }
        for x in &self.findings {
            writeln!(f, "line {}: {}", x.line, x.message)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    /// Sized literal: width, digits after the base letter.
    Sized(u32, char, String),
    Num(u64),
    Punct(String),
}

fn lex(text: &str) -> Vec<(usize, Tok)> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split("//").next().unwrap_or("");
        if line.trim_start().starts_with('`') {
            continue;
        }
        let cs: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < cs.len() {
            let c = cs[i];
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_alphabetic() || c == '_' {
                let s = i;
                while i < cs.len() && (cs[i].is_ascii_alphanumeric() || cs[i] == '_' || cs[i] == '$') {
                    i += 1;
                }
                out.push((ln + 1, Tok::Ident(cs[s..i].iter().collect())));
            } else if c.is_ascii_digit() {
                let s = i;
                while i < cs.len() && cs[i].is_ascii_digit() {
                    i += 1;
                }
                let n: String = cs[s..i].iter().collect();
                if i < cs.len() && cs[i] == '\'' {
                    i += 1;
                    if i < cs.len() && (cs[i] == 's' || cs[i] == 'S') {
                        i += 1;
                    }
                    let base = cs.get(i).copied().unwrap_or(' ').to_ascii_lowercase();
                    i += 1;
                    let d = i;
                    while i < cs.len() && (cs[i].is_ascii_alphanumeric() || cs[i] == '?' || cs[i] == '_') {
                        i += 1;
                    }
                    let width = n.parse().unwrap_or(0);
                    out.push((ln + 1, Tok::Sized(width, base, cs[d..i].iter().collect())));
                } else {
                    out.push((ln + 1, Tok::Num(n.parse().unwrap_or(u64::MAX))));
                }
            } else {
                let two: String = cs[i..(i + 2).min(cs.len())].iter().collect();
                if matches!(two.as_str(), "<=" | ">=" | "==" | "!=" | "@*") {
                    out.push((ln + 1, Tok::Punct(two)));
                    i += 2;
                } else {
                    out.push((ln + 1, Tok::Punct(c.to_string())));
                    i += 1;
                }
            }
        }
    }
    out
}

const KEYWORDS: &[&str] = &[
    "always", "assign", "begin", "case", "casez", "default", "else", "end", "endcase", "if", "input", "output", "posedge", "negedge", "reg",
    "signed", "wire",
];

fn is_punct(t: Option<&(usize, Tok)>, p: &str) -> bool {
    matches!(t, Some((_, Tok::Punct(q))) if q == p)
}

fn range_at(toks: &[(usize, Tok)], i: usize) -> Option<(u64, u64)> {
    match toks.get(i..i + 5)? {
        [(_, Tok::Punct(a)), (_, Tok::Num(hi)), (_, Tok::Punct(c)), (_, Tok::Num(lo)), (_, Tok::Punct(b))] if a == "[" && c == ":" && b == "]" => {
            Some((*hi, *lo))
        }
        _ => None,
    }
}

fn literal_value(base: char, digits: &str) -> Option<u128> {
    let radix = match base {
        'd' => 10,
        'h' => 16,
        'b' => 2,
        'o' => 8,
        _ => return None,
    };
    u128::from_str_radix(&digits.replace('_', ""), radix).ok()
}

/// Lints emitted text against the expected geometry.
pub fn lint_structure(text: &str, widths: &PortWidths) -> LintReport {
    let toks = lex(text);
    let mut rep = LintReport::default();
    let mut modules: HashSet<String> = HashSet::new();
    let mut current: Option<(String, usize)> = None;
    let mut declared: HashMap<String, u64> = HashMap::new();
    let expect = |name: &str| -> Option<u64> {
        match name {
            "rec" | "rec_q" | "in_data" => Some(widths.record_bits as u64),
            "out_data" | "sum" => Some(u64::from(widths.acc_bits)),
            "tv" => Some(u64::from(widths.leaf_bits)),
            n if n.starts_with("tv_") => Some(u64::from(widths.leaf_bits)),
            _ => None,
        }
    };

    let mut i = 0;
    while i < toks.len() {
        let (ln, tok) = &toks[i];
        let ln = *ln;
        match tok {
            Tok::Ident(w) if w == "module" => {
                if let Some((m, at)) = &current {
                    rep.push(ln, format!("module opened while `{m}` (line {at}) is still open"));
                }
                let Some((_, Tok::Ident(name))) = toks.get(i + 1) else {
                    rep.push(ln, "module without a name".into());
                    i += 1;
                    continue;
                };
                current = Some((name.clone(), ln));
                declared.clear();
                rep.modules += 1;
                i += 2;
            }
            Tok::Ident(w) if w == "endmodule" => {
                match current.take() {
                    Some((m, _)) => {
                        modules.insert(m);
                    }
                    None => rep.push(ln, "endmodule without a matching module".into()),
                }
                i += 1;
            }
            Tok::Ident(w) if matches!(w.as_str(), "input" | "output" | "wire" | "reg") => {
                i += 1;
                while matches!(&toks.get(i), Some((_, Tok::Ident(k))) if matches!(k.as_str(), "wire" | "reg" | "signed")) {
                    i += 1;
                }
                let width = match range_at(&toks, i) {
                    Some((hi, lo)) => {
                        i += 5;
                        if hi < lo {
                            rep.push(ln, format!("descending range [{hi}:{lo}] expected"));
                        }
                        hi.saturating_sub(lo) + 1
                    }
                    None => 1,
                };
                loop {
                    let Some((_, Tok::Ident(name))) = toks.get(i) else {
                        rep.push(ln, "declaration without an identifier".into());
                        break;
                    };
                    if let Some(want) = expect(name) {
                        if want != width {
                            rep.push(ln, format!("`{name}` declared {width} bits wide, expected {want}"));
                        }
                    }
                    if name == "tvs" && width % u64::from(widths.leaf_bits) != 0 {
                        rep.push(ln, format!("`tvs` width {width} is not a multiple of the leaf width"));
                    }
                    if declared.insert(name.clone(), width).is_some() {
                        rep.push(ln, format!("`{name}` declared twice"));
                    }
                    i += 1;
                    let more = is_punct(toks.get(i), ",") && matches!(&toks.get(i + 1), Some((_, Tok::Ident(k))) if !KEYWORDS.contains(&k.as_str()));
                    if !more {
                        break;
                    }
                    i += 1;
                }
            }
            Tok::Ident(w) if KEYWORDS.contains(&w.as_str()) => i += 1,
            Tok::Ident(w) => {
                if current.is_none() {
                    rep.push(ln, format!("`{w}` outside any module"));
                    i += 1;
                } else if let Some((_, Tok::Ident(inst))) = toks.get(i + 1) {
                    // instantiation: module name then instance name
                    if !modules.contains(w) {
                        rep.push(ln, format!("instance of undeclared module `{w}`"));
                    }
                    declared.insert(inst.clone(), 0);
                    i += 2;
                } else {
                    if !declared.contains_key(w) {
                        rep.push(ln, format!("`{w}` used before declaration"));
                    }
                    i += 1;
                }
            }
            Tok::Punct(p) if p == "." => {
                // named port connection: the port belongs to the child module
                i += 2;
            }
            Tok::Punct(p) if p == "<" => {
                check_compare(&toks, i, widths, &declared, &mut rep);
                i += 1;
            }
            _ => i += 1,
        }
    }
    if let Some((m, at)) = current {
        rep.push(at, format!("module `{m}` is never closed"));
    }
    rep
}

/// `(lhs < rhs)` where each side is a code slice of the record or a rank literal.
fn check_compare(toks: &[(usize, Tok)], at: usize, w: &PortWidths, declared: &HashMap<String, u64>, rep: &mut LintReport) {
    let ln = toks[at].0;
    let cb = u64::from(w.code_bits);
    // left operand ends just before `<`
    let lhs_ok = match toks.get(at.wrapping_sub(1)) {
        Some((_, Tok::Sized(width, _, _))) => {
            if u64::from(*width) != cb {
                rep.push(ln, format!("compare operand is {width} bits, code width is {cb}"));
            }
            true
        }
        Some((_, Tok::Punct(p))) if p == "]" && at >= 6 => match (&toks[at - 6].1, range_at(toks, at - 5)) {
            (Tok::Ident(name), Some((hi, lo))) => {
                let span = hi.saturating_sub(lo) + 1;
                if span != cb {
                    rep.push(ln, format!("compare slice {name}[{hi}:{lo}] is {span} bits, code width is {cb}"));
                }
                if let Some(&decl) = declared.get(name) {
                    if hi >= decl {
                        rep.push(ln, format!("compare slice {name}[{hi}:{lo}] exceeds its {decl}-bit declaration"));
                    }
                }
                true
            }
            _ => false,
        },
        _ => false,
    };
    if !lhs_ok {
        rep.push(ln, "unrecognized compare operand".into());
    }
    match toks.get(at + 1) {
        Some((_, Tok::Sized(width, base, digits))) => {
            if u64::from(*width) != cb {
                rep.push(ln, format!("rank literal is {width} bits, code width is {cb}"));
            }
            match literal_value(*base, digits) {
                Some(v) if v >> cb == 0 => {}
                _ => rep.push(ln, format!("rank literal {width}'{base}{digits} does not fit {cb} bits")),
            }
        }
        _ => rep.push(ln, "compare against something other than a rank literal".into()),
    }
}
