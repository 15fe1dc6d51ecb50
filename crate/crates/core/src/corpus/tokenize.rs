/// Placeholder emitted for links.
pub const URL_TOKEN: &str = "<url>";
/// Placeholder emitted for user mentions.
pub const USER_TOKEN: &str = "<user>";

fn is_url(chunk: &str) -> bool {
    let lower = chunk.to_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Tweet-oriented tokenizer.
///
/// Lowercases, maps links to `<url>` and `@mentions` to `<user>`, strips the
/// `#` of hashtags, and splits everything else on whitespace and punctuation.
/// Punctuation never survives as a token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if is_url(chunk) {
            out.push(URL_TOKEN.to_string());
            continue;
        }
        let mut rest = chunk;
        if let Some(handle) = chunk.strip_prefix('@') {
            let end = handle.find(|c: char| !is_word_char(c)).unwrap_or(handle.len());
            if end > 0 {
                out.push(USER_TOKEN.to_string());
                rest = &handle[end..];
            }
        }
        for word in rest.split(|c: char| !is_word_char(c)) {
            let word = word.trim_matches('_');
            if !word.is_empty() {
                out.push(word.to_lowercase());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sentence() {
        assert_eq!(tokenize("I need water"), ["i", "need", "water"]);
    }

    #[test]
    fn empty_and_punctuation_only() {
        assert!(tokenize("").is_empty());
        assert!(tokenize(" ... !! ,").is_empty());
    }

    #[test]
    fn mentions_urls_hashtags() {
        assert_eq!(
            tokenize("Help @NDRF http://t.co/x #Nepal"),
            ["help", "<user>", "<url>", "nepal"]
        );
        assert_eq!(tokenize("@NDRF: send https://x.y/z, now"), ["<user>", "send", "<url>", "now"]);
    }

    #[test]
    fn alphanumerics_kept_punctuation_split() {
        assert_eq!(tokenize("C130 landed,trucks-ready!"), ["c130", "landed", "trucks", "ready"]);
        assert_eq!(tokenize("Amatrice's"), ["amatrice", "s"]);
    }

    #[test]
    fn lone_at_sign_is_punctuation() {
        assert_eq!(tokenize("meet @ 5pm"), ["meet", "5pm"]);
    }
}
