#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hdlkit::design::{Entity, Scope};
use hdlkit::Result;

/// Test bench whose architecture is a closure.
pub struct Tb<F>(pub F);

impl<F> Entity for Tb<F>
where
    F: Fn(&mut Scope<'_>) -> Result<()> + Send + 'static,
{
    fn type_name(&self) -> String {
        "tb".into()
    }
    fn ports(&self, _p: &mut Scope<'_>) -> Result<()> {
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        (self.0)(a)
    }
}

#[derive(Debug, Default)]
pub struct VcdSummary {
    pub vars: usize,
    /// Distinct identifier codes; aliased vars share one.
    pub ids: usize,
    pub times: Vec<u64>,
    pub initial_lines: usize,
    pub change_lines: u64,
}

/// Checks VCD text against the value change dump grammar and counts value
/// changes outside `$dumpvars`.
pub fn check_vcd(text: &str) -> std::result::Result<VcdSummary, String> {
    let mut toks = text.split_whitespace().peekable();
    let mut widths: BTreeMap<String, usize> = BTreeMap::new();
    let mut depth = 0i32;
    let mut s = VcdSummary::default();
    let mut defs_done = false;
    while !defs_done {
        let tok = toks.next().ok_or("header ended before $enddefinitions")?;
        match tok {
            "$date" | "$version" | "$comment" | "$timescale" => {
                let body: Vec<&str> = toks.by_ref().take_while(|t| *t != "$end").collect();
                if tok == "$timescale" {
                    let joined = body.concat();
                    let unit = joined.trim_start_matches(|c: char| c.is_ascii_digit());
                    let num = &joined[..joined.len() - unit.len()];
                    if !["1", "10", "100"].contains(&num) || !["s", "ms", "us", "ns", "ps", "fs"].contains(&unit) {
                        return Err(format!("bad timescale {joined}"));
                    }
                }
            }
            "$scope" => {
                let kind = toks.next().ok_or("scope kind")?;
                if !["module", "task", "function", "begin", "fork"].contains(&kind) {
                    return Err(format!("bad scope kind {kind}"));
                }
                toks.next().ok_or("scope name")?;
                expect(&mut toks, "$end")?;
                depth += 1;
            }
            "$upscope" => {
                expect(&mut toks, "$end")?;
                depth -= 1;
                if depth < 0 {
                    return Err("unbalanced $upscope".into());
                }
            }
            "$var" => {
                let kind = toks.next().ok_or("var kind")?;
                if !["wire", "reg", "integer", "real", "parameter", "event"].contains(&kind) {
                    return Err(format!("bad var kind {kind}"));
                }
                let size: usize = toks
                    .next()
                    .ok_or("var size")?
                    .parse()
                    .map_err(|_| "var size not a number")?;
                let id = toks.next().ok_or("var id")?;
                if id.is_empty() || !id.bytes().all(|b| (33..=126).contains(&b)) {
                    return Err(format!("bad identifier code {id:?}"));
                }
                toks.next().ok_or("var reference")?;
                let mut next = toks.next().ok_or("var end")?;
                if next.starts_with('[') {
                    next = toks.next().ok_or("var end")?;
                }
                if next != "$end" {
                    return Err(format!("expected $end after $var, got {next}"));
                }
                if size == 0 {
                    return Err("zero-width var".into());
                }
                widths.insert(id.to_string(), size);
                s.vars += 1;
            }
            "$enddefinitions" => {
                expect(&mut toks, "$end")?;
                if depth != 0 {
                    return Err("unbalanced scopes".into());
                }
                defs_done = true;
            }
            other => return Err(format!("unexpected header token {other}")),
        }
    }
    let mut in_dump = false;
    let mut seen_time = false;
    while let Some(tok) = toks.next() {
        match tok {
            "$dumpvars" | "$dumpall" | "$dumpon" | "$dumpoff" => {
                if !seen_time {
                    return Err(format!("{tok} before any timestamp"));
                }
                in_dump = true;
                continue;
            }
            "$end" if in_dump => {
                in_dump = false;
                continue;
            }
            _ => {}
        }
        if let Some(t) = tok.strip_prefix('#') {
            let t: u64 = t.parse().map_err(|_| format!("bad timestamp {tok}"))?;
            if s.times.last().is_some_and(|&l| t <= l) {
                return Err(format!("timestamp {t} does not increase"));
            }
            s.times.push(t);
            seen_time = true;
            continue;
        }
        if !seen_time {
            return Err(format!("value change {tok} before any timestamp"));
        }
        let first = tok.chars().next().expect("non-empty token");
        let _id = match first {
            'b' | 'B' => {
                let bits = &tok[1..];
                if bits.is_empty() || !bits.chars().all(|c| "01xXzZ".contains(c)) {
                    return Err(format!("bad vector value {tok}"));
                }
                let id = toks.next().ok_or("vector change without identifier")?;
                let w = *widths.get(id).ok_or_else(|| format!("undeclared identifier {id}"))?;
                if bits.len() > w {
                    return Err(format!("{bits} wider than {w} bits for {id}"));
                }
                id.to_string()
            }
            'r' | 'R' => {
                tok[1..].parse::<f64>().map_err(|_| format!("bad real {tok}"))?;
                toks.next().ok_or("real change without identifier")?.to_string()
            }
            '0' | '1' | 'x' | 'X' | 'z' | 'Z' => {
                let id = &tok[1..];
                let w = *widths.get(id).ok_or_else(|| format!("undeclared identifier {id:?}"))?;
                if w != 1 {
                    return Err(format!("scalar change for {w}-bit var {id}"));
                }
                id.to_string()
            }
            _ => return Err(format!("unexpected token {tok}")),
        };
        if in_dump {
            s.initial_lines += 1;
        } else {
            s.change_lines += 1;
        }
    }
    if in_dump {
        return Err("unterminated $dumpvars".into());
    }
    s.ids = widths.len();
    Ok(s)
}

fn expect<'a>(toks: &mut impl Iterator<Item = &'a str>, want: &str) -> std::result::Result<(), String> {
    match toks.next() {
        Some(t) if t == want => Ok(()),
        other => Err(format!("expected {want}, got {other:?}")),
    }
}

/// Summary of one VHDL file as seen by the structural checker.
#[derive(Debug, Default)]
pub struct VhdlFacts {
    /// record name -> field names
    pub records: BTreeMap<String, Vec<String>>,
    /// entity name -> [(port, direction, type)]
    pub ports: BTreeMap<String, Vec<(String, String, String)>>,
    pub assignments: usize,
}

fn ident_at_start(s: &str) -> Option<(&str, &str)> {
    let end = s
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_alphanumeric() || *c == '_'))
        .map_or(s.len(), |(i, _)| i);
    if end == 0 || !s.as_bytes()[0].is_ascii_alphabetic() {
        return None;
    }
    Some((&s[..end], &s[end..]))
}

/// Splits an assignment statement into target base name and operator.
fn assignment(line: &str) -> Option<(String, &'static str)> {
    let (base, mut rest) = ident_at_start(line)?;
    const KEYWORDS: &[&str] = &[
        "if",
        "elsif",
        "else",
        "return",
        "when",
        "signal",
        "variable",
        "constant",
        "type",
        "end",
        "begin",
        "for",
        "while",
        "case",
        "wait",
        "report",
        "assert",
        "procedure",
        "function",
        "process",
        "port",
        "library",
        "use",
    ];
    if KEYWORDS.contains(&base.to_ascii_lowercase().as_str()) {
        return None;
    }
    loop {
        if let Some(r) = rest.strip_prefix('.') {
            let (_, r) = ident_at_start(r)?;
            rest = r;
        } else if rest.starts_with('(') {
            let mut depth = 0;
            let mut cut = None;
            for (i, c) in rest.char_indices() {
                match c {
                    '(' => depth += 1,
                    ')' => {
                        depth -= 1;
                        if depth == 0 {
                            cut = Some(i + 1);
                            break;
                        }
                    }
                    _ => {}
                }
            }
            rest = &rest[cut?..];
        } else {
            break;
        }
    }
    let rest = rest.trim_start();
    if rest.starts_with("<=") {
        Some((base.to_string(), "<="))
    } else if rest.starts_with(":=") {
        Some((base.to_string(), ":="))
    } else {
        None
    }
}

/// Declaration `name : ...` at the start of a trimmed line.
fn decl_name(line: &str) -> Option<(&str, &str)> {
    let (name, rest) = ident_at_start(line)?;
    let rest = rest.trim_start().strip_prefix(':')?;
    if rest.starts_with('=') {
        return None;
    }
    Some((name, rest.trim()))
}

/// Structural checks on one emitted file: every assignment target is a
/// declared signal, port or variable, and uses `<=` for signals and `:=`
/// for variables.
pub fn check_vhdl(text: &str) -> std::result::Result<VhdlFacts, String> {
    let mut facts = VhdlFacts::default();
    let mut signals: BTreeSet<String> = BTreeSet::new();
    let mut scopes: Vec<BTreeSet<String>> = Vec::new();
    let mut record: Option<(String, Vec<String>)> = None;
    let mut entity: Option<String> = None;
    let mut in_ports = false;
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |m: String| format!("line {}: {m}: {raw}", no + 1);
        if line.is_empty() || line.starts_with("--") {
            continue;
        }
        if let Some((name, _)) = record.as_mut().map(|r| (r.0.clone(), ())) {
            if line.starts_with("end record") {
                let (_, fields) = record.take().expect("open record");
                facts.records.insert(name, fields);
            } else if let Some((field, _)) = decl_name(line) {
                record.as_mut().expect("open record").1.push(field.to_string());
            } else {
                return Err(err("unexpected line in record".into()));
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("type ") {
            if let Some(name) = rest.strip_suffix(" is record") {
                record = Some((name.to_string(), Vec::new()));
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("entity ") {
            if let Some(name) = rest.strip_suffix(" is") {
                entity = Some(name.to_string());
                facts.ports.insert(name.to_string(), Vec::new());
            }
            continue;
        }
        if line == "port (" && entity.is_some() {
            in_ports = true;
            continue;
        }
        if in_ports {
            if line == ");" {
                in_ports = false;
                continue;
            }
            let (name, rest) = decl_name(line).ok_or_else(|| err("bad port".into()))?;
            let (dir, ty) = rest.split_once(' ').ok_or_else(|| err("bad port".into()))?;
            if !["in", "out", "inout"].contains(&dir) {
                return Err(err(format!("bad port direction {dir}")));
            }
            signals.insert(name.to_string());
            let e = entity.clone().expect("entity open");
            facts.ports.get_mut(&e).expect("entity").push((
                name.to_string(),
                dir.to_string(),
                ty.trim_end_matches(';').to_string(),
            ));
            continue;
        }
        if line.starts_with("architecture ") {
            entity = None;
            continue;
        }
        if let Some(rest) = line.strip_prefix("signal ") {
            let (name, _) = decl_name(rest).ok_or_else(|| err("bad signal declaration".into()))?;
            signals.insert(name.to_string());
            continue;
        }
        if let Some(rest) = line.strip_prefix("variable ") {
            let (name, _) = decl_name(rest).ok_or_else(|| err("bad variable declaration".into()))?;
            scopes
                .last_mut()
                .ok_or_else(|| err("variable outside process".into()))?
                .insert(name.to_string());
            continue;
        }
        let opens_process = line.contains(": process") || line.starts_with("process");
        let opens_sub = (line.starts_with("procedure ") || line.starts_with("function ")) && line.ends_with(" is");
        if opens_process {
            scopes.push(BTreeSet::new());
            continue;
        }
        if opens_sub {
            let mut vars = BTreeSet::new();
            if let (Some(open), Some(close)) = (line.find('('), line.rfind(')')) {
                for p in line[open + 1..close].split(';') {
                    let p = p.trim();
                    let p = p.strip_prefix("variable ").unwrap_or(p);
                    if p.starts_with("signal ") {
                        continue;
                    }
                    if let Some((name, _)) = decl_name(p) {
                        vars.insert(name.to_string());
                    }
                }
            }
            scopes.push(vars);
            continue;
        }
        if line.starts_with("end process") || line.starts_with("end procedure") || line.starts_with("end function") {
            scopes.pop().ok_or_else(|| err("unbalanced end".into()))?;
            continue;
        }
        if let Some((base, op)) = assignment(line) {
            facts.assignments += 1;
            let is_var = scopes.last().is_some_and(|s| s.contains(&base));
            let is_sig = signals.contains(&base);
            match (is_var, is_sig, op) {
                (true, _, ":=") | (false, true, "<=") => {}
                (true, _, _) => return Err(err(format!("variable {base} assigned with {op}"))),
                (false, true, _) => return Err(err(format!("signal {base} assigned with {op}"))),
                (false, false, _) => return Err(err(format!("assignment to undeclared {base}"))),
            }
        }
    }
    if !scopes.is_empty() || record.is_some() || in_ports {
        return Err("unterminated scope".into());
    }
    Ok(facts)
}
