use std::collections::HashSet;

use unicode_segmentation::UnicodeSegmentation;

/// Lowercased Unicode word tokens, no stemming.
#[derive(Debug, Clone, Default)]
pub struct Analyzer {
    stopwords: HashSet<String>,
}

impl Analyzer {
    pub fn with_stopwords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            stopwords: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect(),
        }
    }

    pub fn analyze(&self, text: &str) -> Vec<String> {
        text.unicode_words()
            .map(str::to_lowercase)
            .filter(|t| !self.stopwords.contains(t))
            .collect()
    }
}

pub fn analyze(text: &str) -> Vec<String> {
    Analyzer::default().analyze(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases_words() {
        assert_eq!(analyze("Blue Denim JACKET"), vec!["blue", "denim", "jacket"]);
        assert!(analyze("").is_empty());
        assert_eq!(analyze("  -- , "), Vec::<String>::new());
    }

    #[test]
    fn splits_persian() {
        assert_eq!(analyze("کت جین آبی"), vec!["کت", "جین", "آبی"]);
    }

    #[test]
    fn drops_stopwords() {
        let a = Analyzer::with_stopwords(["the", "A"]);
        assert_eq!(a.analyze("The dress, a Gown"), vec!["dress", "gown"]);
    }
}
