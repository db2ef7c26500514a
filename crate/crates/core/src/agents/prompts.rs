//! Versioned prompt templates with `{name}` placeholders.

use std::collections::BTreeMap;

use super::AgentError;

pub const PROMPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    System,
    Suggestor,
    Summarizer,
    Scorer,
    Chooser,
    NewsAnalyst,
    Trader,
}

impl Template {
    pub fn text(self) -> &'static str {
        match self {
            Template::System => include_str!("../../assets/prompts/system.txt"),
            Template::Suggestor => include_str!("../../assets/prompts/suggestor.txt"),
            Template::Summarizer => include_str!("../../assets/prompts/summarizer.txt"),
            Template::Scorer => include_str!("../../assets/prompts/scorer.txt"),
            Template::Chooser => include_str!("../../assets/prompts/chooser.txt"),
            Template::NewsAnalyst => include_str!("../../assets/prompts/news_analyst.txt"),
            Template::Trader => include_str!("../../assets/prompts/trader.txt"),
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let t = self.text();
        let mut rest = t;
        while let Some(open) = rest.find('{') {
            let Some(close) = rest[open..].find('}') else { break };
            let name = &rest[open + 1..open + close];
            if !name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase() || c == '_') && !out.contains(&name) {
                out.push(name);
            }
            rest = &rest[open + close + 1..];
        }
        out
    }

    /// Fills every placeholder; a missing value is an error.
    pub fn render(self, values: &BTreeMap<&str, String>) -> Result<String, AgentError> {
        let mut out = self.text().to_string();
        for name in self.placeholders() {
            let v = values.get(name).ok_or_else(|| AgentError::Template(format!("missing placeholder {{{name}}}")))?;
            out = out.replace(&format!("{{{name}}}"), v);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trader_placeholders_mirror_report_keys() {
        let p = Template::Trader.placeholders();
        for k in [
            "var",
            "cvar",
            "mdd",
            "evt_var",
            "evt_cvar",
            "loss_xi",
            "residual_xi",
            "last_residual",
            "rsi",
            "drift_polarity",
        ] {
            assert!(p.contains(&k), "{k}");
        }
    }

    #[test]
    fn render_requires_all_values() {
        let mut v = BTreeMap::new();
        v.insert("symbol", "SPX".to_string());
        v.insert("date", "2024-01-02".to_string());
        assert!(Template::NewsAnalyst.render(&v).is_err());
        v.insert("news", "none".to_string());
        let text = Template::NewsAnalyst.render(&v).unwrap();
        assert!(text.contains("news analyst for SPX"));
        assert!(!text.contains('{'));
    }
}
