/// Module name a solver script must reference to count as calling the solver.
pub const SOLVER_MODULE: &str = "coptpy";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticReport {
    pub solver_invoked: bool,
    /// Why the check failed, if it did.
    pub reason: Option<String>,
}

/// Parse-level plausibility check used when no solver backend is available.
///
/// Passes when the source is non-empty, its brackets and string literals are
/// balanced (Python lexical rules, comments skipped) and it mentions the
/// solver module by name.
pub fn static_check(source: &str) -> StaticReport {
    let fail = |reason: String| StaticReport {
        solver_invoked: false,
        reason: Some(reason),
    };
    if source.trim().is_empty() {
        return fail("empty source".into());
    }
    if let Err(reason) = lex_balanced(source) {
        return fail(reason);
    }
    if !references_solver(source) {
        return fail(format!("no reference to {SOLVER_MODULE}"));
    }
    StaticReport {
        solver_invoked: true,
        reason: None,
    }
}

fn references_solver(source: &str) -> bool {
    source.lines().any(|line| {
        let code = line.split('#').next().unwrap_or("");
        code.match_indices(SOLVER_MODULE).any(|(i, _)| {
            let before = code[..i].chars().next_back();
            let after = code[i + SOLVER_MODULE.len()..].chars().next();
            let ident = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
            !ident(before) && !ident(after)
        })
    })
}

fn lex_balanced(source: &str) -> Result<(), String> {
    let chars: Vec<char> = source.chars().collect();
    let mut stack: Vec<(char, usize)> = Vec::new();
    let mut line = 1;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => line += 1,
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '\'' | '"' => {
                let triple = i + 2 < chars.len() && chars[i + 1] == c && chars[i + 2] == c;
                let start_line = line;
                i += if triple { 3 } else { 1 };
                let mut closed = false;
                while i < chars.len() {
                    let d = chars[i];
                    if d == '\\' {
                        if chars.get(i + 1) == Some(&'\n') {
                            line += 1;
                        }
                        i += 2;
                        continue;
                    }
                    if d == '\n' {
                        if !triple {
                            break;
                        }
                        line += 1;
                    }
                    if d == c {
                        if !triple {
                            closed = true;
                            i += 1;
                            break;
                        }
                        if i + 2 < chars.len() && chars[i + 1] == c && chars[i + 2] == c {
                            closed = true;
                            i += 3;
                            break;
                        }
                    }
                    i += 1;
                }
                if !closed {
                    return Err(format!("unterminated string starting on line {start_line}"));
                }
                continue;
            }
            '(' | '[' | '{' => stack.push((c, line)),
            ')' | ']' | '}' => {
                let want = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                match stack.pop() {
                    Some((open, _)) if open == want => {}
                    _ => return Err(format!("unmatched '{c}' on line {line}")),
                }
            }
            _ => {}
        }
        i += 1;
    }
    match stack.pop() {
        Some((open, l)) => Err(format!("'{open}' opened on line {l} is never closed")),
        None => Ok(()),
    }
}
