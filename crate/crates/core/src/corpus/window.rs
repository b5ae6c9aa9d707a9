use super::bare_token;
use crate::error::{Error, Result};

/// Tokens kept on each side of the target.
pub const WINDOW_RADIUS: usize = 7;

/// Returns the whitespace tokens from `i - 7` to `j + 7` (clipped), where
/// `i..=j` is the first occurrence of `target` in `comment`.
///
/// Comment tokens are compared with surrounding punctuation stripped, so
/// `"muslims,"` matches the target `muslims`.
pub fn extract_window(comment: &str, target: &str) -> Result<String> {
    let tokens: Vec<&str> = comment.split_whitespace().collect();
    let needle: Vec<&str> = target.split_whitespace().collect();
    if needle.is_empty() {
        return Err(Error::invalid("target", "empty target"));
    }
    let start = tokens
        .windows(needle.len())
        .position(|w| w.iter().zip(&needle).all(|(t, n)| bare_token(t) == *n || t == n))
        .ok_or_else(|| Error::invalid("target", format!("`{target}` does not occur in comment")))?;
    let end = start + needle.len() - 1;
    let lo = start.saturating_sub(WINDOW_RADIUS);
    let hi = (end + WINDOW_RADIUS).min(tokens.len() - 1);
    Ok(tokens[lo..=hi].join(" "))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn numbered(n: usize, target_at: usize) -> String {
        (0..n)
            .map(|i| {
                if i == target_at {
                    "jews".to_string()
                } else {
                    format!("w{i}")
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn interior_target() {
        let w = extract_window(&numbered(20, 10), "jews").unwrap();
        let toks: Vec<&str> = w.split(' ').collect();
        assert_eq!(toks.first(), Some(&"w3"));
        assert_eq!(toks.last(), Some(&"w17"));
        assert_eq!(toks.len(), 15);
    }

    #[test]
    fn clipped_at_start() {
        let w = extract_window(&numbered(20, 2), "jews").unwrap();
        let toks: Vec<&str> = w.split(' ').collect();
        assert_eq!(toks.first(), Some(&"w0"));
        assert_eq!(toks.last(), Some(&"w9"));
    }

    #[test]
    fn short_comment_kept_whole() {
        let c = "he just thinks all blacks are criminals";
        assert_eq!(extract_window(c, "blacks").unwrap(), c);
    }

    #[test]
    fn multiword_target_and_punctuation() {
        let c = "well, jewish people, are they?";
        assert_eq!(extract_window(c, "jewish people").unwrap(), c);
    }

    #[test]
    fn absent_target() {
        assert!(extract_window("nothing here", "jews").is_err());
    }

    proptest! {
        #[test]
        fn window_length_bound(n in 1usize..60, at in 0usize..60, tlen in 1usize..4) {
            prop_assume!(at + tlen <= n);
            let toks: Vec<String> = (0..n)
                .map(|i| if (at..at + tlen).contains(&i) { format!("t{}", i - at) } else { format!("w{i}") })
                .collect();
            let target: Vec<String> = (0..tlen).map(|i| format!("t{i}")).collect();
            let w = extract_window(&toks.join(" "), &target.join(" ")).unwrap();
            prop_assert!(w.split(' ').count() < 15 + tlen);
        }
    }
}
