/// Lowercases, deletes ASCII punctuation, and splits on whitespace.
///
/// Apostrophes are deleted like any other punctuation, so contractions join
/// into one token: `"don't"` becomes `"dont"`.
pub fn normalize_text(raw: &str) -> Vec<String> {
    let cleaned: String = raw
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .to_lowercase();
    cleaned.split_whitespace().map(str::to_string).collect()
}
