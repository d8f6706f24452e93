/// Characters from scripts written without spaces; each becomes its own token.
fn is_unsegmented(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // kana
        | 0x3400..=0x4DBF    // CJK extension A
        | 0x4E00..=0x9FFF    // CJK unified ideographs
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // CJK compatibility ideographs
        | 0x20000..=0x2FA1F) // CJK extensions B-F
}

fn is_word_char(c: char) -> bool {
    (c.is_alphanumeric() || c == '_') && !is_unsegmented(c)
}

/// Splits text into tokens: whitespace separates words, runs of
/// alphanumerics stay whole, and every other character (CJK ideographs,
/// punctuation) is a token of its own.
pub fn split_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace().flat_map(|chunk| {
        let mut pieces = Vec::new();
        let mut start = None;
        for (i, c) in chunk.char_indices() {
            if is_word_char(c) {
                start.get_or_insert(i);
                continue;
            }
            if let Some(s) = start.take() {
                pieces.push(&chunk[s..i]);
            }
            pieces.push(&chunk[i..i + c.len_utf8()]);
        }
        if let Some(s) = start {
            pieces.push(&chunk[s..]);
        }
        pieces
    })
}

pub fn count_tokens(text: &str) -> usize {
    split_tokens(text).count()
}
