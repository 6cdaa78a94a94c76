use crate::error::{Error, Result};

/// Number of rows of an extended latent.
pub const DEFAULT_ROWS: usize = 18;

/// One named edit: the rows of the extended latent it writes and the
/// attribute channels it sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditKind {
    pub name: String,
    /// Sorted, de-duplicated row indices.
    pub rows: Vec<usize>,
    /// Channel names, or a prefix ending in `*` matching several channels.
    pub channels: Vec<String>,
}

impl EditKind {
    pub fn new(name: &str, rows: impl IntoIterator<Item = usize>, channels: &[&str]) -> Self {
        let mut rows: Vec<usize> = rows.into_iter().collect();
        rows.sort_unstable();
        rows.dedup();
        EditKind { name: name.to_string(), rows, channels: channels.iter().map(|s| s.to_string()).collect() }
    }

    /// Indices into `names` of the channels this edit sets, in table order.
    pub fn resolve_channels(&self, names: &[String]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for pat in &self.channels {
            if let Some(prefix) = pat.strip_suffix('*') {
                out.extend(names.iter().enumerate().filter(|(_, n)| n.starts_with(prefix)).map(|(i, _)| i));
            } else if let Some(i) = names.iter().position(|n| n == pat) {
                out.push(i);
            }
        }
        if out.is_empty() {
            return Err(Error::config(format!("edit {:?} matches no attribute channel", self.name)));
        }
        Ok(out)
    }
}

/// Mapping from edit names to row sets and channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditTable {
    pub kinds: Vec<EditKind>,
}

impl Default for EditTable {
    fn default() -> Self {
        EditTable {
            kinds: vec![
                EditKind::new("light", 7..=11, &["light*"]),
                EditKind::new("expression", 4..=5, &["expression"]),
                EditKind::new("yaw", 0..=3, &["yaw"]),
                EditKind::new("pitch", 0..=3, &["pitch"]),
                EditKind::new("age", 4..=7, &["age"]),
                EditKind::new("gender", 0..=7, &["gender"]),
                EditKind::new("remove_glasses", 0..=2, &["eyeglasses"]),
                EditKind::new("add_glasses", 0..=5, &["eyeglasses"]),
                EditKind::new("baldness", 0..=5, &["baldness"]),
                EditKind::new("facial_hair", [5, 6, 7, 10], &["facial_hair"]),
            ],
        }
    }
}

impl EditTable {
    pub fn get(&self, name: &str) -> Result<&EditKind> {
        self.kinds
            .iter()
            .find(|k| k.name == name)
            .ok_or_else(|| Error::config(format!("unknown edit {name:?}")))
    }

    /// Rows that carry each channel: the union of the rows of every edit
    /// setting it, or all rows for channels no edit sets.
    pub fn channel_rows(&self, names: &[String], n_rows: usize) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); names.len()];
        for kind in &self.kinds {
            if let Ok(chs) = kind.resolve_channels(names) {
                for c in chs {
                    rows[c].extend(kind.rows.iter().copied().filter(|r| *r < n_rows));
                }
            }
        }
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
            if r.is_empty() {
                *r = (0..n_rows).collect();
            }
        }
        rows
    }

    /// Parses the table format, one edit per line:
    ///
    /// ```text
    /// # comment
    /// light = 7-11 -> light*
    /// facial_hair = 5-7, 10
    /// ```
    ///
    /// Rows are comma-separated indices or inclusive `a-b` ranges. The
    /// optional `-> ch, ch` part lists the channels the edit sets; without
    /// it the edit sets the channel of the same name.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kinds: Vec<EditKind> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: line_no, msg };
            let (name, rest) = line.split_once('=').ok_or_else(|| err("expected `name = rows`".into()))?;
            let name = name.trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(err(format!("invalid edit name {name:?}")));
            }
            if kinds.iter().any(|k| k.name == name) {
                return Err(err(format!("edit {name:?} defined twice")));
            }
            let (rows_txt, chan_txt) = match rest.split_once("->") {
                Some((r, c)) => (r, Some(c)),
                None => (rest, None),
            };
            let mut rows = Vec::new();
            for part in rows_txt.split(',') {
                let part = part.trim();
                let parse_idx = |s: &str| s.trim().parse::<usize>().map_err(|_| err(format!("invalid row index {s:?}")));
                match part.split_once('-') {
                    Some((a, b)) => {
                        let (a, b) = (parse_idx(a)?, parse_idx(b)?);
                        if a > b {
                            return Err(err(format!("empty row range {part:?}")));
                        }
                        rows.extend(a..=b);
                    }
                    None => rows.push(parse_idx(part)?),
                }
            }
            let channels: Vec<&str> = match chan_txt {
                Some(c) => c.split(',').map(str::trim).filter(|s| !s.is_empty()).collect(),
                None => vec![name],
            };
            if channels.is_empty() {
                return Err(err("empty channel list".into()));
            }
            kinds.push(EditKind::new(name, rows, &channels));
        }
        if kinds.is_empty() {
            return Err(Error::config("edit table defines no edits"));
        }
        Ok(EditTable { kinds })
    }

    /// Canonical text form, accepted by [`EditTable::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in &self.kinds {
            let rows: Vec<String> = k.rows.iter().map(|r| r.to_string()).collect();
            out.push_str(&format!("{} = {} -> {}\n", k.name, rows.join(", "), k.channels.join(", ")));
        }
        out
    }
}
