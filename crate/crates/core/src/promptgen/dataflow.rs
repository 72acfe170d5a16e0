//! Line-level def/use summary for the auxiliary-information baseline.

use crate::simindex::tokenize;

const MAX_LINES: usize = 40;

const KEYWORDS: &[&str] = &[
    "if", "else", "for", "while", "do", "return", "switch", "case", "break", "continue", "goto",
    "sizeof", "default", "typedef", "extern", "register", "volatile", "inline", "static", "const",
    "restrict", "auto", "NULL", "true", "false",
];

const TYPES: &[&str] = &[
    "void", "char", "short", "int", "long", "float", "double", "signed", "unsigned", "bool",
    "_Bool", "FILE",
];

const ASSIGN: &[&str] = &["=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>="];

fn is_ident(tok: &str) -> bool {
    tok.chars()
        .next()
        .is_some_and(|c| c.is_alphabetic() || c == '_')
}

fn is_type(tok: &str) -> bool {
    TYPES.contains(&tok) || tok.ends_with("_t")
}

fn is_tag(tok: &str) -> bool {
    matches!(tok, "struct" | "union" | "enum")
}

/// Positions of variable-like identifiers: not keywords, types, called
/// functions, member names or struct tags.
fn variables(tokens: &[&str]) -> Vec<usize> {
    (0..tokens.len())
        .filter(|&i| {
            let tok = tokens[i];
            let prev = i.checked_sub(1).map(|p| tokens[p]);
            is_ident(tok)
                && !KEYWORDS.contains(&tok)
                && !is_type(tok)
                && !is_tag(tok)
                && tokens.get(i + 1) != Some(&"(")
                && !matches!(prev, Some("." | "->"))
                && !prev.is_some_and(is_tag)
        })
        .collect()
}

fn push_unique<'a>(list: &mut Vec<&'a str>, name: &'a str) {
    if !list.contains(&name) {
        list.push(name);
    }
}

fn is_declaration(tokens: &[&str]) -> bool {
    tokens
        .iter()
        .find(|t| !matches!(**t, "static" | "const" | "extern" | "register" | "volatile" | "inline"))
        .is_some_and(|t| is_type(t) || is_tag(t))
}

fn line_facts<'a>(tokens: &[&'a str]) -> (Vec<&'a str>, Vec<&'a str>) {
    let vars = variables(tokens);
    let mut defined = Vec::new();
    let mut used = Vec::new();
    if let Some(a) = tokens.iter().position(|t| ASSIGN.contains(t)) {
        let mut lhs = vars.iter().filter(|&&i| i < a);
        if let Some(&first) = lhs.next() {
            push_unique(&mut defined, tokens[first]);
            if tokens[a] != "=" {
                push_unique(&mut used, tokens[first]);
            }
        }
        for &i in lhs {
            push_unique(&mut used, tokens[i]);
        }
        for &i in vars.iter().filter(|&&i| i > a) {
            push_unique(&mut used, tokens[i]);
        }
    } else if is_declaration(tokens) {
        let mut depth = 0i32;
        let mut in_brackets = vec![false; tokens.len()];
        for (i, tok) in tokens.iter().enumerate() {
            match *tok {
                "[" => depth += 1,
                "]" => depth -= 1,
                _ => in_brackets[i] = depth > 0,
            }
        }
        for &i in &vars {
            if in_brackets[i] {
                push_unique(&mut used, tokens[i]);
            } else {
                push_unique(&mut defined, tokens[i]);
            }
        }
    } else {
        for &i in &vars {
            let step = |j: Option<usize>| j.and_then(|j| tokens.get(j)).is_some_and(|t| matches!(*t, "++" | "--"));
            if step(Some(i + 1)) || step(i.checked_sub(1)) {
                push_unique(&mut defined, tokens[i]);
            }
            push_unique(&mut used, tokens[i]);
        }
    }
    (defined, used)
}

/// One `line N: a defined; b, c used` entry per line with facts, capped at
/// 40 entries. Empty for empty source.
pub fn summarize_dataflow(source: &str) -> String {
    let base = source.as_ptr() as usize;
    let mut by_line: Vec<(usize, Vec<&str>)> = Vec::new();
    for tok in tokenize(source) {
        let offset = tok.as_ptr() as usize - base;
        let line = source[..offset].matches('\n').count() + 1;
        match by_line.last_mut() {
            Some((l, toks)) if *l == line => toks.push(tok),
            _ => by_line.push((line, vec![tok])),
        }
    }
    let mut entries = Vec::new();
    for (line, tokens) in &by_line {
        let (defined, used) = line_facts(tokens);
        let mut parts = Vec::new();
        if !defined.is_empty() {
            parts.push(format!("{} defined", defined.join(", ")));
        }
        if !used.is_empty() {
            parts.push(format!("{} used", used.join(", ")));
        }
        if !parts.is_empty() {
            entries.push(format!("line {line}: {}", parts.join("; ")));
        }
    }
    let extra = entries.len().saturating_sub(MAX_LINES);
    entries.truncate(MAX_LINES);
    if extra > 0 {
        entries.push(format!("... ({extra} more lines)"));
    }
    entries.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment() {
        assert_eq!(summarize_dataflow("a = b + c;"), "line 1: a defined; b, c used");
    }

    #[test]
    fn declaration_only() {
        assert_eq!(summarize_dataflow("int x;"), "line 1: x defined");
        assert_eq!(
            summarize_dataflow("char buf[LEN];"),
            "line 1: buf defined; LEN used"
        );
    }

    #[test]
    fn empty_source() {
        assert_eq!(summarize_dataflow(""), "");
        assert_eq!(summarize_dataflow("/* nothing */\n"), "");
    }

    #[test]
    fn calls_members_and_compound() {
        let src = "void f(char *dst, const char *src) {\n  strcpy(dst, src);\n  n += p->len;\n  i++;\n}\n";
        assert_eq!(
            summarize_dataflow(src),
            "line 1: dst, src defined\nline 2: dst, src used\nline 3: n defined; n, p used\nline 4: i defined; i used"
        );
    }

    #[test]
    fn bounded() {
        let src = "x = y;\n".repeat(100);
        let summary = summarize_dataflow(&src);
        assert_eq!(summary.lines().count(), MAX_LINES + 1);
        assert!(summary.ends_with("(60 more lines)"));
    }
}
