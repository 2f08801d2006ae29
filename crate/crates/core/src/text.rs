//! Shared word normalization: lowercase, every non-alphanumeric ASCII
//! character becomes a space, split on whitespace.

pub fn normalize(text: &str) -> String {
    text.chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                ' '
            }
        })
        .collect()
}

pub fn tokenize(text: &str) -> Vec<String> {
    normalize(text)
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

pub fn word_count(text: &str) -> usize {
    normalize(text).split_whitespace().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_becomes_boundaries() {
        assert_eq!(
            tokenize("Left-sided   effusion, NOTED."),
            ["left", "sided", "effusion", "noted"]
        );
        assert!(tokenize(" .,; ").is_empty());
        assert_eq!(word_count("the heart is normal"), 4);
    }
}
