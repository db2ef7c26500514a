//! Agent roles (suggestor, summarizer, scorer, chooser, news analyst,
//! trader) over a pluggable chat transport, each with a deterministic mock.

mod parse;
mod prompts;
mod transport;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use parse::{
    lexicon_score, parse_news_analysis, parse_novelty, parse_novelty_score, parse_scorer_reply, parse_trade_decision,
    stance_from_score, NewsAnalysis, ScorerReply,
};
pub use prompts::{Template, PROMPT_VERSION};
pub use transport::{
    llm_complete, parse_chat_body, DenyNetwork, FixtureTransport, HttpTransport, LlmRequest, LlmResponse,
    MockTransport, Transport, Usage, DEFAULT_TEMPERATURE, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL,
};

use crate::data::NewsItem;
use crate::dsl::{EmptySuggestions, SdeModel};
use crate::graph::model_similarity;
use crate::risk::RiskReport;
use crate::trading::{rule_policy, RulePolicyConfig, Stance, TradeSignal, TrendReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out after {0}s")]
    Timeout(u64),
    #[error("HTTP status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed response body: {0}")]
    MalformedBody(String),
    #[error("network access denied in offline mode (endpoint {0:?})")]
    NetworkDenied(String),
    #[error("no fixture {key}.txt in {dir}")]
    FixtureMissing { key: String, dir: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<AgentError> },
    #[error("no score found in reply")]
    NoScore,
    #[error("no decision found in reply")]
    Undecidable,
    #[error(transparent)]
    EmptySuggestions(#[from] EmptySuggestions),
    #[error("template error: {0}")]
    Template(String),
}

impl AgentError {
    pub fn is_retryable(&self) -> bool {
        match self {
            AgentError::Transport(_) | AgentError::Timeout(_) => true,
            AgentError::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

/// A transport plus the request settings shared by every role.
#[derive(Clone)]
pub struct LlmClient {
    pub transport: Arc<dyn Transport>,
    pub base: LlmRequest,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient").field("base", &self.base).finish_non_exhaustive()
    }
}

impl LlmClient {
    pub fn new(transport: Arc<dyn Transport>, endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self { transport, base: LlmRequest { endpoint: endpoint.into(), model: model.into(), ..LlmRequest::default() } }
    }

    /// Sends `template` filled with `values` under the shared system prompt.
    pub fn ask(&self, template: Template, values: &BTreeMap<&str, String>) -> Result<String, AgentError> {
        let req = LlmRequest {
            system: Template::System.text().trim().to_string(),
            user: template.render(values)?,
            ..self.base.clone()
        };
        Ok(llm_complete(self.transport.as_ref(), &req)?.text)
    }
}

/// Which implementation answers each role.
#[derive(Debug, Clone, Default)]
pub enum Agents {
    #[default]
    Mock,
    Llm(LlmClient),
}

/// What the summarizer and scorer see about one tested candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDigest {
    pub model: String,
    pub params: String,
    pub loss: f64,
    /// `(name, value)` pairs, typically the flat distribution comparison.
    pub metrics: Vec<(String, f64)>,
}

impl CandidateDigest {
    fn metrics_text(&self) -> String {
        self.metrics.iter().map(|(k, v)| format!("{k}: {v:.6}")).collect::<Vec<_>>().join("\n")
    }
}

/// Everything the trader sees on one day. `risk` and `trend` are absent in
/// the news-only variant.
#[derive(Debug, Clone, PartialEq)]
pub struct TraderContext {
    pub date: String,
    pub symbol: String,
    pub price: f64,
    pub model: String,
    pub horizon: usize,
    pub risk: Option<RiskReport>,
    pub trend: Option<TrendReport>,
    pub news: NewsAnalysis,
}

/// Trader output: the parsed signal, the raw reply, and whether the reply
/// had no decision line and was mapped to hold.
#[derive(Debug, Clone, PartialEq)]
pub struct TraderReply {
    pub signal: TradeSignal,
    pub raw: String,
    pub undecidable: bool,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl Agents {
    pub fn is_mock(&self) -> bool {
        matches!(self, Agents::Mock)
    }

    pub fn summarize(&self, c: &CandidateDigest) -> Result<String, AgentError> {
        match self {
            Agents::Mock => {
                let worst = c
                    .metrics
                    .iter()
                    .filter(|(k, _)| k.starts_with("delta_"))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(k, v)| format!(" Largest delta: {k} = {v:.4}."))
                    .unwrap_or_default();
                Ok(format!("Model {} calibrated to {} with loss {:.6}.{worst}", c.model, c.params, c.loss))
            }
            Agents::Llm(client) => {
                let mut v = BTreeMap::new();
                v.insert("model", c.model.clone());
                v.insert("params", c.params.clone());
                v.insert("loss", format!("{:.6}", c.loss));
                v.insert("metrics", c.metrics_text());
                client.ask(Template::Summarizer, &v)
            }
        }
    }

    /// Novelty on 0–100. The mock scores `100 (1 - max similarity)` against
    /// the tested models.
    pub fn score_novelty(
        &self,
        model: &SdeModel,
        summary: &str,
        tested: &[SdeModel],
        c: &CandidateDigest,
    ) -> Result<u8, AgentError> {
        match self {
            Agents::Mock => {
                let max_sim = tested.iter().map(|t| model_similarity(model, t)).fold(0.0, f64::max);
                Ok((100.0 * (1.0 - max_sim)).round().clamp(0.0, 100.0) as u8)
            }
            Agents::Llm(client) => {
                let mut v = BTreeMap::new();
                v.insert("model", model.render());
                v.insert("summary", summary.to_string());
                v.insert("memory", tested.iter().map(SdeModel::render).collect::<Vec<_>>().join("\n"));
                v.insert("deltas", c.metrics_text());
                parse_novelty_score(&client.ask(Template::Scorer, &v)?)
            }
        }
    }

    /// Raw suggestor reply for the LLM proposer.
    pub fn suggest(&self, memory: &str, stats: &str, count: usize) -> Result<String, AgentError> {
        match self {
            Agents::Mock => Ok(String::new()),
            Agents::Llm(client) => {
                let mut v = BTreeMap::new();
                v.insert("memory", memory.to_string());
                v.insert("stats", stats.to_string());
                v.insert("count", count.to_string());
                client.ask(Template::Suggestor, &v)
            }
        }
    }

    /// Index into `pool` chosen by the critic, or `None` to fall back to the
    /// offline rule.
    pub fn choose(&self, memory: &str, pool: &[SdeModel]) -> Result<Option<usize>, AgentError> {
        match self {
            Agents::Mock => Ok(None),
            Agents::Llm(client) => {
                let mut v = BTreeMap::new();
                v.insert("memory", memory.to_string());
                let listing: Vec<String> =
                    pool.iter().enumerate().map(|(i, m)| format!("{i}: {}", m.render())).collect();
                v.insert("pool", listing.join("\n"));
                let reply = client.ask(Template::Chooser, &v)?;
                Ok(parse_choice(&reply).filter(|&i| i < pool.len()))
            }
        }
    }

    pub fn analyze_news(&self, symbol: &str, date: &str, items: &[NewsItem]) -> Result<NewsAnalysis, AgentError> {
        match self {
            Agents::Mock => Ok(mock_news_analysis(items)),
            Agents::Llm(client) => {
                let lines: Vec<String> = items
                    .iter()
                    .map(|i| format!("{} | {} | {} | {}", i.timestamp, i.source, i.headline, i.summary))
                    .collect();
                let mut v = BTreeMap::new();
                v.insert("symbol", symbol.to_string());
                v.insert("date", date.to_string());
                v.insert("news", if lines.is_empty() { "(no news)".into() } else { lines.join("\n") });
                Ok(parse_news_analysis(&client.ask(Template::NewsAnalyst, &v)?))
            }
        }
    }

    /// Trader decision. Replies without a decision line become hold.
    pub fn trade(&self, ctx: &TraderContext, rule: &RulePolicyConfig) -> Result<TraderReply, AgentError> {
        let raw = match self {
            Agents::Mock => mock_trader_reply(ctx, rule),
            Agents::Llm(client) => client.ask(Template::Trader, &trader_values(ctx))?,
        };
        Ok(match parse_trade_decision(&raw) {
            Ok(signal) => TraderReply { signal, raw, undecidable: false },
            Err(_) => TraderReply { signal: TradeSignal::Hold, raw, undecidable: true },
        })
    }
}

fn parse_choice(reply: &str) -> Option<usize> {
    let lower = reply.to_lowercase();
    let at = lower.rfind("choice")?;
    let rest = &reply[at..];
    let start = rest.find(|c: char| c.is_ascii_digit())?;
    rest[start..].chars().take_while(char::is_ascii_digit).collect::<String>().parse().ok()
}

/// Keyword-lexicon analysis: items with positive net score feed the pros,
/// negative ones the cons.
pub fn mock_news_analysis(items: &[NewsItem]) -> NewsAnalysis {
    let (mut pros, mut cons, mut total) = (Vec::new(), Vec::new(), 0);
    for item in items {
        let s = lexicon_score(&format!("{} {}", item.headline, item.summary));
        total += s;
        match s.signum() {
            1 => pros.push(item.headline.clone()),
            -1 => cons.push(item.headline.clone()),
            _ => {}
        }
    }
    NewsAnalysis { pros: pros.join("; "), cons: cons.join("; "), stance: stance_from_score(total) }
}

fn trader_values(ctx: &TraderContext) -> BTreeMap<&'static str, String> {
    let r = ctx.risk.as_ref();
    let mut v = BTreeMap::new();
    v.insert("symbol", ctx.symbol.clone());
    v.insert("date", ctx.date.clone());
    v.insert("price", format!("{:.4}", ctx.price));
    v.insert("model", ctx.model.clone());
    v.insert("horizon", ctx.horizon.to_string());
    v.insert("var", fmt_opt(r.map(|r| r.var)));
    v.insert("cvar", fmt_opt(r.map(|r| r.cvar)));
    v.insert("mdd", fmt_opt(r.map(|r| r.mdd)));
    v.insert("evt_var", fmt_opt(r.and_then(|r| r.evt_var)));
    v.insert("evt_cvar", fmt_opt(r.and_then(|r| r.evt_cvar)));
    v.insert("loss_xi", fmt_opt(r.and_then(|r| r.loss_gpd.map(|g| g.xi))));
    v.insert("residual_xi", fmt_opt(r.and_then(|r| r.residual_gpd.map(|g| g.xi))));
    v.insert("last_residual", fmt_opt(r.and_then(|r| r.last_residual)));
    v.insert("rsi", fmt_opt(ctx.trend.map(|t| t.rsi)));
    v.insert("drift_polarity", ctx.trend.map_or_else(|| "n/a".into(), |t| t.drift_polarity.to_string()));
    v.insert("pros", ctx.news.pros.clone());
    v.insert("cons", ctx.news.cons.clone());
    v.insert("stance", ctx.news.stance.to_string());
    v
}

/// The rule policy written out as a trader reply. Without risk and trend
/// inputs the mock follows the news stance alone.
fn mock_trader_reply(ctx: &TraderContext, rule: &RulePolicyConfig) -> String {
    let signal = match (&ctx.risk, &ctx.trend) {
        (Some(risk), Some(trend)) => rule_policy(risk, trend, ctx.news.stance, ctx.price, rule),
        _ => match ctx.news.stance {
            Stance::Bullish => TradeSignal::Buy,
            Stance::Bearish => TradeSignal::Sell,
            Stance::Mixed => TradeSignal::Hold,
        },
    };
    format!("Date: {}\nStance: {}\nDecision: **{}**", ctx.date, ctx.news.stance, signal.to_string().to_uppercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(headline: &str) -> NewsItem {
        NewsItem {
            timestamp: 0,
            source: "test".into(),
            headline: headline.into(),
            summary: String::new(),
            symbol: "X".into(),
        }
    }

    #[test]
    fn mock_news_cases() {
        let empty = mock_news_analysis(&[]);
        assert_eq!(empty, NewsAnalysis { pros: String::new(), cons: String::new(), stance: Stance::Mixed });
        let bull = mock_news_analysis(&[item("Shares surge"), item("Record profit reported")]);
        assert_eq!(bull.stance, Stance::Bullish);
        let again = mock_news_analysis(&[item("Shares surge"), item("Record profit reported")]);
        assert_eq!(bull, again);
    }

    #[test]
    fn llm_roles_go_through_transport() {
        let t = Arc::new(MockTransport::new(|req| {
            Ok(if req.user.contains("trader") { "Decision: SELL".into() } else { "Novelty score: 70/100".into() })
        }));
        let agents = Agents::Llm(LlmClient::new(t.clone(), "http://x", "m"));
        let ctx = TraderContext {
            date: "2025-01-30".into(),
            symbol: "NVDA".into(),
            price: 100.0,
            model: "dS = a*S dt + b*S dW".into(),
            horizon: 20,
            risk: None,
            trend: None,
            news: NewsAnalysis::default(),
        };
        let r = agents.trade(&ctx, &RulePolicyConfig::default()).unwrap();
        assert_eq!(r.signal, TradeSignal::Sell);
        assert!(t.requests()[0].user.contains("VaR: n/a"));
        let m = crate::dsl::parse_model("dS = a*S dt + b*S dW").unwrap();
        let d = CandidateDigest { model: m.render(), params: "a=0.1".into(), loss: 1.0, metrics: vec![] };
        assert_eq!(agents.score_novelty(&m, "", &[], &d).unwrap(), 70);
        assert_eq!(t.requests()[1].temperature, 0.2);
    }

    #[test]
    fn undecidable_maps_to_hold() {
        let agents = Agents::Llm(LlmClient::new(Arc::new(MockTransport::canned("no idea")), "http://x", "m"));
        let ctx = TraderContext {
            date: String::new(),
            symbol: String::new(),
            price: 1.0,
            model: String::new(),
            horizon: 20,
            risk: None,
            trend: None,
            news: NewsAnalysis::default(),
        };
        let r = agents.trade(&ctx, &RulePolicyConfig::default()).unwrap();
        assert!(r.undecidable);
        assert_eq!(r.signal, TradeSignal::Hold);
    }

    #[test]
    fn mock_novelty_uses_similarity() {
        let m = crate::dsl::parse_model("dS = a*S dt + b*S dW").unwrap();
        let d = CandidateDigest { model: String::new(), params: String::new(), loss: 0.0, metrics: vec![] };
        assert_eq!(Agents::Mock.score_novelty(&m, "", std::slice::from_ref(&m), &d).unwrap(), 0);
        assert_eq!(Agents::Mock.score_novelty(&m, "", &[], &d).unwrap(), 100);
    }

    #[test]
    fn choice_parsing() {
        assert_eq!(parse_choice("I pick this.\nChoice: 3"), Some(3));
        assert_eq!(parse_choice("none"), None);
    }
}
