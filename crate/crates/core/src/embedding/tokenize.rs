use super::EmbedError;

/// Ordered tokens of one text: each word followed by its padded character
/// trigrams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<String>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.tokens.iter()
    }
}

/// Lowercases `text`, splits it on runs of non-alphanumeric characters, and
/// emits every word followed by the character 3-grams of `#word#`.
pub fn tokenize(text: &str) -> Result<TokenSequence, EmbedError> {
    if text.trim().is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let lowered = text.to_lowercase();
    let mut tokens = Vec::new();
    for word in lowered.split(|c: char| !c.is_alphanumeric()) {
        if word.is_empty() {
            continue;
        }
        tokens.push(word.to_owned());
        let padded: Vec<char> = std::iter::once('#')
            .chain(word.chars())
            .chain(std::iter::once('#'))
            .collect();
        tokens.extend(padded.windows(3).map(|w| w.iter().collect::<String>()));
    }
    if tokens.is_empty() {
        return Err(EmbedError::NoTokens);
    }
    Ok(TokenSequence { tokens })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_covid() {
        let seq = tokenize("Long COVID").unwrap();
        assert_eq!(
            seq.tokens(),
            ["long", "#lo", "lon", "ong", "ng#", "covid", "#co", "cov", "ovi", "vid", "id#"]
        );
    }

    #[test]
    fn single_letter() {
        assert_eq!(tokenize("a").unwrap().tokens(), ["a", "#a#"]);
    }

    #[test]
    fn blank_is_rejected() {
        assert!(matches!(tokenize("   "), Err(EmbedError::EmptyText)));
        assert!(matches!(tokenize(""), Err(EmbedError::EmptyText)));
    }

    #[test]
    fn punctuation_only_has_no_tokens() {
        assert!(matches!(tokenize("-- !!"), Err(EmbedError::NoTokens)));
    }

    #[test]
    fn splits_on_punctuation_runs_and_keeps_unicode_letters() {
        let seq = tokenize("#LongCOVID, post-COVID; Ñu").unwrap();
        // Each word is immediately followed by its `#`-prefixed first trigram.
        let toks = seq.tokens();
        let words: Vec<_> = (0..toks.len() - 1)
            .filter(|&i| toks[i + 1].starts_with('#') && !toks[i].contains('#'))
            .map(|i| toks[i].clone())
            .collect();
        assert_eq!(words, ["longcovid", "post", "covid", "ñu"]);
        // "ñu" -> "#ñu#" has two trigrams counted by char, not byte.
        assert!(seq
            .tokens()
            .ends_with(&["ñu".into(), "#ñu".into(), "ñu#".into()]));
    }
}
