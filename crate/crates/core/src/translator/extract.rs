//! Pulling a command string out of chatty model output.

use std::ops::Range;

use crate::command::parse_sequence;

fn starts_token(prev: Option<char>) -> bool {
    match prev {
        None => true,
        Some(c) => c.is_whitespace() || matches!(c, '`' | '"' | ':' | '(' | '[' | '*' | '>' | '='),
    }
}

fn ends_token(next: Option<char>) -> bool {
    match next {
        None => true,
        Some(c) => c.is_whitespace() || matches!(c, '`' | '"' | '.' | ',' | ')' | ']' | '*' | '!' | '<'),
    }
}

fn line_ranges(raw: &str) -> impl Iterator<Item = Range<usize>> + '_ {
    let mut start = 0;
    raw.split_inclusive('\n').map(move |line| {
        let r = start..start + line.trim_end_matches(['\n', '\r']).len();
        start += line.len();
        r
    })
}

fn trimmed(raw: &str, r: Range<usize>) -> Range<usize> {
    let s = &raw[r.clone()];
    let lead = s.len() - s.trim_start().len();
    let body = s.trim();
    r.start + lead..r.start + lead + body.len()
}

/// Longest parseable run inside one line; the earliest wins a tie.
fn embedded(line: &str) -> Option<Range<usize>> {
    let bounds: Vec<(usize, char)> = line.char_indices().collect();
    let mut best: Option<Range<usize>> = None;
    for (k, &(i, c)) in bounds.iter().enumerate() {
        if !matches!(c.to_ascii_lowercase(), 'f' | 'b' | 'l' | 'r' | 's' | 'w') {
            continue;
        }
        if !starts_token(k.checked_sub(1).map(|p| bounds[p].1)) {
            continue;
        }
        for (m, &(j, d)) in bounds.iter().enumerate().skip(k).rev() {
            let end = j + d.len_utf8();
            if best.as_ref().is_some_and(|b| b.len() >= end - i) {
                break;
            }
            if d.is_whitespace() || !ends_token(bounds.get(m + 1).map(|b| b.1)) {
                continue;
            }
            if parse_sequence(&line[i..end]).is_ok() {
                best = Some(i..end);
                break;
            }
        }
    }
    best
}

/// Byte range of the command string in `raw`.
///
/// The first line that parses in full (after trimming) is preferred.
/// Otherwise the longest command run embedded in the first line that has
/// one is taken. The result is always a slice of `raw`.
pub fn extract_range(raw: &str) -> Option<Range<usize>> {
    for r in line_ranges(raw) {
        let t = trimmed(raw, r);
        if !t.is_empty() && parse_sequence(&raw[t.clone()]).is_ok() {
            return Some(t);
        }
    }
    for r in line_ranges(raw) {
        if let Some(e) = embedded(&raw[r.clone()]) {
            return Some(r.start + e.start..r.start + e.end);
        }
    }
    None
}

pub fn extract_command(raw: &str) -> Option<&str> {
    extract_range(raw).map(|r| &raw[r])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_output() {
        assert_eq!(extract_command("f,100"), Some("f,100"));
        assert_eq!(extract_command("  r,360;w \n"), Some("r,360;w"));
    }

    #[test]
    fn prefers_a_whole_line() {
        let raw = "Here's your command:\n```\nf,100;s\n```\n";
        assert_eq!(extract_command(raw), Some("f,100;s"));
    }

    #[test]
    fn finds_embedded_commands() {
        assert_eq!(extract_command("Sure! The command is `l,180`."), Some("l,180"));
        assert_eq!(extract_command("Output: f,60.96 (2 feet)"), Some("f,60.96"));
        assert_eq!(extract_command("it's f,10; b,10, done"), Some("f,10; b,10"));
    }

    #[test]
    fn nothing_to_find() {
        assert_eq!(extract_command(""), None);
        assert_eq!(extract_command("I cannot do that."), None);
        assert_eq!(extract_command("Please specify a direction"), None);
    }

    #[test]
    fn multibyte_text_is_handled() {
        assert_eq!(extract_command("→ r,90 ✓"), Some("r,90"));
    }
}
