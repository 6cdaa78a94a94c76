use crate::editpipe::EditMode;
use crate::error::{Error, Result};

/// One statement of an edit script.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptStep {
    pub line: usize,
    pub edit: String,
    pub values: Vec<f64>,
    /// Values are offsets from the current attributes.
    pub delta: bool,
    /// Overrides the configured mode.
    pub mode: Option<EditMode>,
}

impl ScriptStep {
    /// Absolute targets given the current values of the edit's channels.
    pub fn resolve(&self, current: &[f64]) -> Vec<f64> {
        if self.delta {
            self.values.iter().zip(current).map(|(d, c)| c + d).collect()
        } else {
            self.values.clone()
        }
    }
}

/// Parses an edit script: statements separated by newlines or `;`, `#`
/// starts a comment.
///
/// ```text
/// yaw = 0.8              # absolute target
/// light = +0.5, -0.2     # leading `+` on the first value: offsets
/// expression -= 0.1 fast # `+=` / `-=` offsets, optional mode
/// ```
pub fn parse_script(text: &str) -> Result<Vec<ScriptStep>> {
    let mut steps = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let code = raw.split('#').next().unwrap_or("");
        for stmt in code.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            steps.push(parse_statement(stmt, line)?);
        }
    }
    Ok(steps)
}

fn parse_statement(stmt: &str, line: usize) -> Result<ScriptStep> {
    let err = |msg: String| Error::Parse { line, msg };
    let eq = stmt.find('=').ok_or_else(|| err(format!("expected `name = value` in {stmt:?}")))?;
    let (mut name, mut rest) = (stmt[..eq].trim_end(), stmt[eq + 1..].trim());
    let mut sign = 0.0;
    if let Some(n) = name.strip_suffix('+') {
        (name, sign) = (n.trim_end(), 1.0);
    } else if let Some(n) = name.strip_suffix('-') {
        (name, sign) = (n.trim_end(), -1.0);
    }
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(err(format!("invalid edit name {name:?}")));
    }
    let mut mode = None;
    if let Some((head, last)) = rest.rsplit_once(char::is_whitespace) {
        if let Ok(m) = last.parse::<EditMode>() {
            mode = Some(m);
            rest = head.trim_end();
        }
    }
    let delta = sign != 0.0 || rest.starts_with('+');
    let values = rest
        .split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .map(|x| if sign < 0.0 { -x } else { x })
                .ok_or_else(|| err(format!("invalid value {v:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScriptStep { line, edit: name.to_string(), values, delta, mode })
}
