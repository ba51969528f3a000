//! Line-oriented resource files: UTF-8, one record per line, blank lines and
//! `#` comment lines ignored.

pub(crate) fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.trim_end_matches('\r')))
        .filter(|(_, line)| {
            let t = line.trim();
            !t.is_empty() && !t.starts_with('#')
        })
}

/// Split a record on its first tab into two trimmed fields.
pub(crate) fn tab_pair(line: &str) -> Option<(&str, &str)> {
    let (a, b) = line.split_once('\t')?;
    let (a, b) = (a.trim(), b.trim());
    if a.is_empty() || b.is_empty() {
        None
    } else {
        Some((a, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skips_comments_and_blanks() {
        let text = "# header\nalpha\n\n  # indented comment\nbeta\r\n";
        let got: Vec<_> = records(text).collect();
        assert_eq!(got, vec![(2, "alpha"), (5, "beta")]);
    }

    #[test]
    fn tab_pairs() {
        assert_eq!(tab_pair("ran\trun"), Some(("ran", "run")));
        assert_eq!(tab_pair("ran run"), None);
        assert_eq!(tab_pair("ran\t "), None);
    }
}
