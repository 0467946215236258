/// Splits on whitespace, then peels leading and trailing ASCII punctuation
/// off each chunk as one-character tokens. Returns tokens with their
/// `[start, end)` offsets in chars.
pub fn tokenize(text: &str) -> Vec<(String, (usize, usize))> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_chunk(&chars, start, i, &mut out);
    }
    out
}

fn split_chunk(chars: &[char], mut start: usize, mut end: usize, out: &mut Vec<(String, (usize, usize))>) {
    let mut tail = Vec::new();
    while start < end && chars[start].is_ascii_punctuation() {
        out.push((chars[start].to_string(), (start, start + 1)));
        start += 1;
    }
    while end > start && chars[end - 1].is_ascii_punctuation() {
        tail.push((chars[end - 1].to_string(), (end - 1, end)));
        end -= 1;
    }
    if start < end {
        out.push((chars[start..end].iter().collect(), (start, end)));
    }
    out.extend(tail.into_iter().rev());
}
