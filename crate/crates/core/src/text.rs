//! Line reader shared by the `[section]`-style data files.

/// One meaningful line of a sectioned file: comments stripped, blank lines
/// skipped, section headers resolved.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SectionLine<'a> {
    pub section: Option<&'a str>,
    /// 1-based line number in the source.
    pub number: usize,
    pub text: &'a str,
}

pub(crate) fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Iterate the content lines of a sectioned file. Section header lines are
/// consumed and reported through `SectionLine::section` of following lines.
pub(crate) fn section_lines(src: &str) -> impl Iterator<Item = SectionLine<'_>> {
    let mut section = None;
    src.lines().enumerate().filter_map(move |(i, raw)| {
        let line = strip_comment(raw).trim_end_matches(['\r', '\n']);
        let trimmed = line.trim();
        if trimmed.is_empty() {
            return None;
        }
        if trimmed.starts_with('[') && trimmed.ends_with(']') {
            section = Some(&trimmed[1..trimmed.len() - 1]);
            return None;
        }
        Some(SectionLine {
            section,
            number: i + 1,
            text: trimmed,
        })
    })
}

/// Split a corpus line of the form `utt-id<TAB>text`, or return the whole
/// line as text when it carries no id.
pub fn split_utterance_line(line: &str) -> (Option<&str>, &str) {
    match line.split_once('\t') {
        Some((id, text)) => (Some(id.trim()), text.trim()),
        None => (None, line.trim()),
    }
}
