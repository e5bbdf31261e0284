//! Minimal sectioned `key = value` reader.
//!
//! Lines starting with `#` or `;` are comments, as is anything after a `#`
//! preceded by whitespace. Every entry keeps its line number so that typed
//! decoding can point back at the offending line.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: BTreeMap<String, Entry>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ini {
    pub sections: Vec<Section>,
}

impl Ini {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }
}

fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

/// Parses `text`; `source` names the file in error messages.
pub fn parse(text: &str, source: &str) -> Result<Ini, String> {
    let mut ini = Ini::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with(';') {
            continue;
        }
        let line = strip_comment(trimmed).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| format!("{source}:{line_no}: unterminated section header `{line}`"))?
                .trim();
            if name.is_empty() {
                return Err(format!("{source}:{line_no}: empty section name"));
            }
            if ini.section(name).is_some() {
                return Err(format!("{source}:{line_no}: section [{name}] appears twice"));
            }
            ini.sections.push(Section {
                name: name.to_string(),
                line: line_no,
                entries: BTreeMap::new(),
            });
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{source}:{line_no}: expected `key = value`, found `{line}`"))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(format!("{source}:{line_no}: missing key before `=`"));
        }
        if value.is_empty() {
            return Err(format!("{source}:{line_no}: key `{key}` has no value"));
        }
        let section = ini
            .sections
            .last_mut()
            .ok_or_else(|| format!("{source}:{line_no}: key `{key}` appears before any [section]"))?;
        if let Some(prev) = section.entries.get(key) {
            return Err(format!(
                "{source}:{line_no}: key `{key}` repeats [{}] line {}",
                section.name, prev.line
            ));
        }
        section.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line: line_no,
            },
        );
    }
    Ok(ini)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_keys_and_comments() {
        let text = "# header\n[system]\ng = 10.8 MHz   # inline\n; other\n\n[output]\npath = a#b.csv\n";
        let ini = parse(text, "t.ini").unwrap();
        let sys = ini.section("system").unwrap();
        assert_eq!(sys.entries["g"].value, "10.8 MHz");
        assert_eq!(sys.entries["g"].line, 3);
        assert_eq!(ini.section("output").unwrap().entries["path"].value, "a#b.csv");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse("[system]\ng = 1 MHz\ng = 2 MHz\n", "c.ini").unwrap_err();
        assert!(e.starts_with("c.ini:3:"), "{e}");
        let e = parse("g = 1 MHz\n", "c.ini").unwrap_err();
        assert!(e.starts_with("c.ini:1:"), "{e}");
        let e = parse("[system\n", "c.ini").unwrap_err();
        assert!(e.contains("unterminated"));
        let e = parse("[a]\nno equals here\n", "c.ini").unwrap_err();
        assert!(e.starts_with("c.ini:2:"));
        let e = parse("[a]\n[a]\n", "c.ini").unwrap_err();
        assert!(e.contains("twice"));
    }
}
