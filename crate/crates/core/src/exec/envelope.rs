pub const KEY_SOLVER_INVOKED: &str = "ORR1_SOLVER_INVOKED";
pub const KEY_OBJECTIVE: &str = "ORR1_OBJECTIVE";
pub const KEY_NO_SOLUTION: &str = "ORR1_NO_SOLUTION";
pub const KEY_ERROR: &str = "ORR1_ERROR";

#[derive(Debug, Clone, PartialEq)]
pub enum EnvelopeResult {
    Objective(f64),
    NoSolution,
    Error(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub solver_invoked: bool,
    pub result: EnvelopeResult,
}

impl Envelope {
    pub fn render(&self) -> String {
        let flag = if self.solver_invoked { 1 } else { 0 };
        let result = match &self.result {
            EnvelopeResult::Objective(v) => format!("{KEY_OBJECTIVE} {v:?}"),
            EnvelopeResult::NoSolution => KEY_NO_SOLUTION.to_string(),
            EnvelopeResult::Error(d) => format!("{KEY_ERROR} {d}"),
        };
        format!("{KEY_SOLVER_INVOKED} {flag}\n{result}\n")
    }
}

/// Parses the envelope from the final two non-blank lines of runner output.
///
/// Anything printed before the envelope is ignored. Returns `None` when the
/// tail is not a well-formed envelope.
pub fn parse_envelope(stdout: &str) -> Option<Envelope> {
    let mut lines = stdout
        .lines()
        .rev()
        .map(|l| l.trim_end_matches('\r'))
        .skip_while(|l| l.trim().is_empty());
    let result_line = lines.next()?;
    let flag_line = lines.next()?;

    let flag = flag_line.strip_prefix(KEY_SOLVER_INVOKED)?.strip_prefix(' ')?;
    let solver_invoked = match flag.trim_end() {
        "0" => false,
        "1" => true,
        _ => return None,
    };

    let result = if let Some(rest) = result_line.strip_prefix(KEY_OBJECTIVE) {
        let value: f64 = rest.strip_prefix(' ')?.trim().parse().ok()?;
        if !value.is_finite() {
            return None;
        }
        EnvelopeResult::Objective(value)
    } else if result_line.trim_end() == KEY_NO_SOLUTION {
        EnvelopeResult::NoSolution
    } else if let Some(rest) = result_line.strip_prefix(KEY_ERROR) {
        if !(rest.is_empty() || rest.starts_with(' ')) {
            return None;
        }
        EnvelopeResult::Error(rest.trim().to_string())
    } else {
        return None;
    };

    Some(Envelope {
        solver_invoked,
        result,
    })
}
