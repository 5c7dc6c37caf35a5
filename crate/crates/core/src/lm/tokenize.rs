/// Lowercases, splits on whitespace and detaches every character that is
/// neither alphanumeric nor whitespace as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with(text, true)
}

pub fn tokenize_with(text: &str, lowercase: bool) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let push_word = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };
    for c in text.chars() {
        if c.is_whitespace() {
            push_word(&mut word, &mut out);
        } else if c.is_alphanumeric() {
            if lowercase {
                word.extend(c.to_lowercase());
            } else {
                word.push(c);
            }
        } else {
            push_word(&mut word, &mut out);
            out.push(c.to_string());
        }
    }
    push_word(&mut word, &mut out);
    out
}
