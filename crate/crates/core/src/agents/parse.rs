//! Parsers for free-text agent replies.

use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::trading::{Stance, TradeSignal};

const POSITIVE: &[&str] = &[
    "surge",
    "soar",
    "record",
    "profit",
    "growth",
    "beat",
    "strong",
    "gain",
    "upgrade",
    "rally",
    "bullish",
    "opportunit",
    "innovation",
    "leader",
    "expan",
    "confiden",
    "outperform",
    "rebound",
    "optimis",
    "boost",
];
const NEGATIVE: &[&str] = &[
    "fall",
    "drop",
    "loss",
    "decline",
    "downgrade",
    "risk",
    "concern",
    "threat",
    "lawsuit",
    "bearish",
    "weak",
    "miss",
    "pressure",
    "bubble",
    "correction",
    "vulnerab",
    "slump",
    "plunge",
    "tariff",
    "probe",
    "recall",
];

/// Net sentiment of `text`: positive stems minus negative stems, counted
/// per word.
pub fn lexicon_score(text: &str) -> i32 {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| {
            let w = w.to_lowercase();
            let hit = |stems: &[&str]| stems.iter().any(|s| w.starts_with(s)) as i32;
            hit(POSITIVE) - hit(NEGATIVE)
        })
        .sum()
}

pub fn stance_from_score(score: i32) -> Stance {
    match score.signum() {
        1 => Stance::Bullish,
        -1 => Stance::Bearish,
        _ => Stance::Mixed,
    }
}

/// Novelty or total score from a scorer reply. Prefers the last `N/100`;
/// otherwise the first integer after the last mention of "score". Clamped
/// to `[0, 100]`.
pub fn parse_novelty(raw: &str) -> Result<u8, AgentError> {
    let over_100 = raw.match_indices("/100").filter_map(|(i, _)| trailing_int(&raw[..i])).last();
    let value = match over_100 {
        Some(v) => v,
        None => {
            let lower = raw.to_lowercase();
            let at = lower.rfind("score").ok_or(AgentError::NoScore)?;
            leading_int(&raw[at..]).ok_or(AgentError::NoScore)?
        }
    };
    Ok(value.clamp(0, 100) as u8)
}

/// The parts of a scorer reply that could be found.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerReply {
    /// Novelty on 0–100.
    pub novelty: Option<u8>,
    pub metrics_sub: Option<u8>,
    pub total: Option<u8>,
}

/// Reads "Novelty score: N/100", "Score for novelty: N/50",
/// "Score for metrics: N/50" and a closing "= T/100". Sub-scores out of 50
/// are doubled onto the 0–100 novelty scale.
pub fn parse_scorer_reply(raw: &str) -> ScorerReply {
    let lower = raw.to_lowercase();
    let find = |labels: &[&str]| {
        labels.iter().filter_map(|l| lower.rfind(l).map(|i| i + l.len())).max().and_then(|at| fraction(&lower[at..]))
    };
    let on_100 = |(v, d): (i64, Option<i64>)| {
        let scaled = match d {
            Some(50) => v * 2,
            Some(d) if d > 0 && d != 100 => v * 100 / d,
            _ => v,
        };
        scaled.clamp(0, 100) as u8
    };
    let novelty = find(&["novelty score", "score for novelty"]).map(on_100);
    let metrics_sub = find(&["metrics score", "score for metrics"]).map(|(v, d)| {
        let v = if d == Some(100) { v / 2 } else { v };
        v.clamp(0, 50) as u8
    });
    let total =
        raw.match_indices("/100").filter_map(|(i, _)| trailing_int(&raw[..i])).last().map(|v| v.clamp(0, 100) as u8);
    ScorerReply { novelty, metrics_sub, total }
}

/// Novelty on 0–100: the explicit novelty score when given, otherwise the
/// generic score rules of [`parse_novelty`].
pub fn parse_novelty_score(raw: &str) -> Result<u8, AgentError> {
    match parse_scorer_reply(raw).novelty {
        Some(n) => Ok(n),
        None => parse_novelty(raw),
    }
}

/// `N` or `N/D` near the start of `s`, skipping separators.
fn fraction(s: &str) -> Option<(i64, Option<i64>)> {
    let head: String = s.chars().take(12).collect();
    let start = head.find(|c: char| c.is_ascii_digit())?;
    if head[..start].chars().any(|c| c.is_alphabetic()) {
        return None;
    }
    let v = leading_int(&s[start..])?;
    let digits = s[start..].chars().take_while(char::is_ascii_digit).count();
    let rest = s[start + digits..].trim_start();
    let den = rest.strip_prefix('/').and_then(|r| leading_int(r.trim_start()));
    Some((v, den))
}

fn trailing_int(s: &str) -> Option<i64> {
    let t = s.trim_end();
    let digits: String =
        t.chars().rev().take_while(char::is_ascii_digit).collect::<Vec<_>>().into_iter().rev().collect();
    if digits.is_empty() {
        return None;
    }
    let v: i64 = digits.parse().ok()?;
    let negative = t[..t.len() - digits.len()].ends_with('-');
    Some(if negative { -v } else { v })
}

fn leading_int(s: &str) -> Option<i64> {
    let start = s.find(|c: char| c.is_ascii_digit())?;
    let digits: String = s[start..].chars().take_while(char::is_ascii_digit).collect();
    let v: i64 = digits.parse().ok()?;
    Some(if s[..start].ends_with('-') { -v } else { v })
}

/// The signal on the last line mentioning a decision. Lines with
/// `decision:` take precedence over prose such as "a SELL decision".
pub fn parse_trade_decision(raw: &str) -> Result<TradeSignal, AgentError> {
    let signal_in = |line: &str| {
        line.split(|c: char| !c.is_ascii_alphabetic()).filter_map(|w| w.parse::<TradeSignal>().ok()).next_back()
    };
    let lines: Vec<String> = raw.lines().map(str::to_lowercase).collect();
    let pick = |pred: &dyn Fn(&str) -> bool| lines.iter().rev().filter(|l| pred(l)).find_map(|l| signal_in(l));
    pick(&|l| l.contains("decision:")).or_else(|| pick(&|l| l.contains("decision"))).ok_or(AgentError::Undecidable)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NewsAnalysis {
    pub pros: String,
    pub cons: String,
    pub stance: Stance,
}

/// Reads a news-analyst reply. Explicit `Pros:`/`Cons:`/`Stance:` sections
/// are used when present; otherwise each paragraph is filed by its lexicon
/// score and the stance follows the overall balance.
pub fn parse_news_analysis(raw: &str) -> NewsAnalysis {
    let cleaned = raw.replace("\\newline", "\n");
    let lower = cleaned.to_lowercase();
    let explicit_stance = lower.lines().rev().find_map(|l| {
        let rest = l.trim().strip_prefix("stance")?.trim_start_matches([':', ' ', '*']);
        ["bullish", "bearish", "mixed"].into_iter().find(|s| rest.starts_with(s))
    });
    let stance = |fallback: Stance| match explicit_stance {
        Some("bullish") => Stance::Bullish,
        Some("bearish") => Stance::Bearish,
        Some(_) => Stance::Mixed,
        None => fallback,
    };
    if let (Some(p), Some(c)) = (heading(&lower, "pros"), heading(&lower, "cons")) {
        let section = |(_, from): (usize, usize), (other, _): (usize, usize)| {
            let end = if other > from { other } else { cleaned.len() };
            let end = lower[from..end].find("stance").map_or(end, |i| from + i);
            cleaned[from..end].trim().to_string()
        };
        let pros = section(p, c);
        let cons = section(c, p);
        let fallback = stance_from_score(lexicon_score(&pros) - lexicon_score(&cons));
        return NewsAnalysis { stance: stance(fallback), pros, cons };
    }
    let (mut pros, mut cons) = (Vec::new(), Vec::new());
    for para in cleaned.split("\n\n").map(str::trim).filter(|p| !p.is_empty()) {
        if lexicon_score(para) < 0 {
            cons.push(para);
        } else {
            pros.push(para);
        }
    }
    NewsAnalysis {
        stance: stance(stance_from_score(lexicon_score(&cleaned))),
        pros: pros.join("\n\n"),
        cons: cons.join("\n\n"),
    }
}

/// Start of the line holding a `name:` heading and the offset just past it.
fn heading(lower: &str, name: &str) -> Option<(usize, usize)> {
    let mut offset = 0;
    for line in lower.split_inclusive('\n') {
        let t = line.trim_start().trim_start_matches(['#', '*', ' ']);
        if let Some(rest) = t.strip_prefix(name) {
            let rest_trim = rest.trim_start_matches('*');
            if rest_trim.starts_with(':') {
                let skipped = line.len() - rest_trim.len() + 1;
                return Some((offset, offset + skipped));
            }
        }
        offset += line.len();
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn novelty_examples() {
        assert_eq!(parse_novelty("score: 150").unwrap(), 100);
        assert_eq!(parse_novelty("Novelty score: 70").unwrap(), 70);
        assert_eq!(parse_novelty("Total: 35 + 32 = 67/100").unwrap(), 67);
        assert!(matches!(parse_novelty("no digits"), Err(AgentError::NoScore)));
        assert_eq!(parse_novelty("score -5").unwrap(), 0);
    }

    #[test]
    fn scorer_reply_parts() {
        let r = parse_scorer_reply(
            "Score for novelty: 35/50 (good)\nScore for metrics: 32/50\n35 (novelty) + 32 (metrics) = 67/100",
        );
        assert_eq!(r, ScorerReply { novelty: Some(70), metrics_sub: Some(32), total: Some(67) });
        assert_eq!(parse_novelty_score("Novelty score: 80/100").unwrap(), 80);
        assert_eq!(parse_novelty_score("Overall score 40").unwrap(), 40);
        assert!(parse_novelty_score("nothing here").is_err());
    }

    #[test]
    fn decision_examples() {
        assert_eq!(parse_trade_decision("Decision: **SELL**").unwrap(), TradeSignal::Sell);
        assert_eq!(parse_trade_decision("decision: buy\nlater\nDecision: \\textbf{HOLD}").unwrap(), TradeSignal::Hold);
        assert_eq!(parse_trade_decision("I recommend a BUY decision.").unwrap(), TradeSignal::Buy);
        assert!(matches!(parse_trade_decision("no idea"), Err(AgentError::Undecidable)));
    }

    #[test]
    fn news_sections() {
        let a = parse_news_analysis("Pros: record profit and strong growth\nCons: some tariff risk\nStance: bullish");
        assert_eq!(a.stance, Stance::Bullish);
        assert_eq!(a.pros, "record profit and strong growth");
        assert_eq!(a.cons, "some tariff risk");
        let b = parse_news_analysis("Shares plunge on weak guidance.\n\nAnalysts see downgrade risk.");
        assert_eq!(b.stance, Stance::Bearish);
        assert!(b.pros.is_empty());
    }
}
