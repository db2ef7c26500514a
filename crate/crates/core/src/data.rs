//! Price and news ingestion plus the JSON run configuration.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::stats::log_returns;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Malformed { path: String, line: usize, msg: String },
    #[error("{path}: missing column '{column}'")]
    MissingColumn { path: String, column: String },
    #[error("{path}:{line}: duplicate date {date}")]
    DuplicateDate { path: String, line: usize, date: NaiveDate },
    #[error("{path}:{line}: date {date} is not after the previous row")]
    UnsortedDates { path: String, line: usize, date: NaiveDate },
    #[error("{path}:{line}: non-positive price {price}")]
    NonPositivePrice { path: String, line: usize, price: f64 },
    #[error("{path}: item {index}: {msg}")]
    NewsSchema { path: String, index: usize, msg: String },
    #[error("price path needs at least {need} points, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("invalid config: {0}")]
    Config(String),
}

/// Daily closes with strictly increasing dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePath {
    pub dates: Vec<NaiveDate>,
    pub closes: Vec<f64>,
}

impl PricePath {
    /// Validates ordering and positivity.
    pub fn new(dates: Vec<NaiveDate>, closes: Vec<f64>) -> Result<Self, DataError> {
        let path = "<memory>".to_string();
        if dates.len() != closes.len() {
            return Err(DataError::Malformed { path, line: 0, msg: "dates and closes differ in length".into() });
        }
        for (i, &c) in closes.iter().enumerate() {
            if !(c > 0.0 && c.is_finite()) {
                return Err(DataError::NonPositivePrice { path, line: i + 1, price: c });
            }
        }
        for i in 1..dates.len() {
            if dates[i] == dates[i - 1] {
                return Err(DataError::DuplicateDate { path, line: i + 1, date: dates[i] });
            }
            if dates[i] < dates[i - 1] {
                return Err(DataError::UnsortedDates { path, line: i + 1, date: dates[i] });
            }
        }
        Ok(Self { dates, closes })
    }

    /// Business-day dates starting at `start` for a synthetic series.
    pub fn from_closes(start: NaiveDate, closes: Vec<f64>) -> Result<Self, DataError> {
        let mut dates = Vec::with_capacity(closes.len());
        let mut d = start;
        while dates.len() < closes.len() {
            use chrono::Datelike;
            if d.weekday().number_from_monday() <= 5 {
                dates.push(d);
            }
            d = d.succ_opt().expect("date overflow");
        }
        Self::new(dates, closes)
    }

    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }

    pub fn last(&self) -> f64 {
        self.closes[self.closes.len() - 1]
    }

    pub fn log_returns(&self) -> Vec<f64> {
        log_returns(&self.closes)
    }

    /// Sub-path over `range` of indices.
    pub fn slice(&self, range: std::ops::Range<usize>) -> PricePath {
        PricePath { dates: self.dates[range.clone()].to_vec(), closes: self.closes[range].to_vec() }
    }

    pub fn mean_price(&self) -> f64 {
        crate::stats::mean(&self.closes)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let io = |e: std::io::Error| DataError::Io { path: path.display().to_string(), source: e };
        let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
        w.write_record(["date", "close"]).map_err(|e| io(e.into()))?;
        for (d, c) in self.dates.iter().zip(&self.closes) {
            w.write_record([d.to_string(), c.to_string()]).map_err(|e| io(e.into()))?;
        }
        w.flush().map_err(io)
    }
}

/// Reads a `date,close` CSV; other columns are ignored.
pub fn load_prices(path: impl AsRef<Path>) -> Result<PricePath, DataError> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| DataError::Io { path: p.clone(), source: e.into() })?;
    let headers =
        rdr.headers().map_err(|e| DataError::Malformed { path: p.clone(), line: 1, msg: e.to_string() })?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| DataError::MissingColumn { path: p.clone(), column: name.into() })
    };
    let (di, ci) = (col("date")?, col("close")?);
    let mut dates = Vec::new();
    let mut closes = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| DataError::Malformed { path: p.clone(), line, msg: e.to_string() })?;
        let field = |i: usize, what: &str| {
            rec.get(i).ok_or_else(|| DataError::Malformed { path: p.clone(), line, msg: format!("missing {what}") })
        };
        let date = NaiveDate::parse_from_str(field(di, "date")?, "%Y-%m-%d").map_err(|e| DataError::Malformed {
            path: p.clone(),
            line,
            msg: format!("bad date: {e}"),
        })?;
        let close: f64 = field(ci, "close")?.parse().map_err(|_| DataError::Malformed {
            path: p.clone(),
            line,
            msg: "bad close".into(),
        })?;
        if !(close > 0.0 && close.is_finite()) {
            return Err(DataError::NonPositivePrice { path: p, line, price: close });
        }
        if let Some(&prev) = dates.last() {
            if date == prev {
                return Err(DataError::DuplicateDate { path: p, line, date });
            }
            if date < prev {
                return Err(DataError::UnsortedDates { path: p, line, date });
            }
        }
        dates.push(date);
        closes.push(close);
    }
    if dates.len() < 2 {
        return Err(DataError::TooShort { need: 2, got: dates.len() });
    }
    Ok(PricePath { dates, closes })
}

/// One news article. `timestamp` is UTC seconds; files may also give an
/// RFC 3339 string or a bare `YYYY-MM-DD` date.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsItem {
    pub timestamp: i64,
    pub source: String,
    pub headline: String,
    pub summary: String,
    pub symbol: String,
}

impl NewsItem {
    pub fn date(&self) -> NaiveDate {
        DateTime::<Utc>::from_timestamp(self.timestamp, 0).map(|d| d.date_naive()).unwrap_or_default()
    }
}

fn parse_timestamp(v: &serde_json::Value) -> Result<i64, String> {
    match v {
        serde_json::Value::Number(n) => n.as_i64().ok_or_else(|| "timestamp must be an integer".into()),
        serde_json::Value::String(s) => {
            if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
                return Ok(dt.timestamp());
            }
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp())
                .map_err(|_| format!("unparseable timestamp '{s}'"))
        }
        _ => Err("timestamp must be a number or string".into()),
    }
}

fn news_item_from_json(v: &serde_json::Value) -> Result<NewsItem, String> {
    let obj = v.as_object().ok_or("item is not an object")?;
    let text = |k: &str| -> Result<String, String> {
        obj.get(k)
            .ok_or_else(|| format!("missing field '{k}'"))?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| format!("field '{k}' must be a string"))
    };
    let timestamp = parse_timestamp(obj.get("timestamp").ok_or("missing field 'timestamp'")?)?;
    let symbol = text("symbol")?;
    if symbol.is_empty() {
        return Err("field 'symbol' is empty".into());
    }
    Ok(NewsItem { timestamp, source: text("source")?, headline: text("headline")?, summary: text("summary")?, symbol })
}

/// News indexed by `(symbol, date)` with a related-symbol map.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NewsStore {
    items: BTreeMap<(String, NaiveDate), Vec<NewsItem>>,
    pub related: BTreeMap<String, Vec<String>>,
}

impl NewsStore {
    pub fn new(items: Vec<NewsItem>) -> Self {
        let mut store = NewsStore::default();
        for it in items {
            store.insert(it);
        }
        store
    }

    pub fn insert(&mut self, item: NewsItem) {
        let list = self.items.entry((item.symbol.clone(), item.date())).or_default();
        list.push(item);
        list.sort_by_key(|i| i.timestamp);
    }

    pub fn len(&self) -> usize {
        self.items.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Items for `symbol` and its related symbols dated within
    /// `[from, to]`, ascending by timestamp.
    pub fn query(&self, symbol: &str, from: NaiveDate, to: NaiveDate) -> Vec<NewsItem> {
        let mut symbols = vec![symbol.to_string()];
        if let Some(rel) = self.related.get(symbol) {
            symbols.extend(rel.iter().cloned());
        }
        let mut out: Vec<NewsItem> = symbols
            .iter()
            .flat_map(|s| self.items.range((s.clone(), from)..=(s.clone(), to)).flat_map(|(_, v)| v.iter().cloned()))
            .collect();
        out.sort_by_key(|i| i.timestamp);
        out
    }

    pub fn all(&self) -> Vec<NewsItem> {
        let mut v: Vec<NewsItem> = self.items.values().flatten().cloned().collect();
        v.sort_by_key(|i| i.timestamp);
        v
    }
}

/// Reads a JSON array of news items, or `{"items": [...], "related": {...}}`.
pub fn load_news(path: impl AsRef<Path>) -> Result<NewsStore, DataError> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io { path: p.clone(), source: e })?;
    parse_news(&text).map_err(|(index, msg)| DataError::NewsSchema { path: p, index, msg })
}

/// Parses news JSON text; errors carry the offending item index.
pub fn parse_news(text: &str) -> Result<NewsStore, (usize, String)> {
    let doc: serde_json::Value = serde_json::from_str(text).map_err(|e| (0, e.to_string()))?;
    let (items, related) = match &doc {
        serde_json::Value::Array(a) => (a.clone(), BTreeMap::new()),
        serde_json::Value::Object(o) => {
            let items =
                o.get("items").and_then(|v| v.as_array()).cloned().ok_or((0, "missing 'items' array".to_string()))?;
            let related = match o.get("related") {
                Some(r) => serde_json::from_value(r.clone()).map_err(|e| (0, format!("bad 'related' map: {e}")))?,
                None => BTreeMap::new(),
            };
            (items, related)
        }
        _ => return Err((0, "expected a JSON array of news items".into())),
    };
    let parsed = items
        .iter()
        .enumerate()
        .map(|(i, v)| news_item_from_json(v).map_err(|m| (i, m)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut store = NewsStore::new(parsed);
    store.related = related;
    Ok(store)
}

/// File locations used by the CLI; each may be overridden by a flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub prices: Option<std::path::PathBuf>,
    pub news: Option<std::path::PathBuf>,
    pub out: Option<std::path::PathBuf>,
    pub memory: Option<std::path::PathBuf>,
}

/// Where agent calls go. With no endpoint (and none in the environment)
/// the deterministic mock agents are used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentBinding {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Directory of canned replies served instead of HTTP calls.
    pub fixtures: Option<std::path::PathBuf>,
}

/// The whole run configuration as one JSON document. Unknown keys are
/// rejected at every level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; module seeds derive from it by label.
    pub seed: Option<u64>,
    pub paths: PathsConfig,
    pub agents: AgentBinding,
    pub sim: crate::sim::SimConfig,
    pub calib: crate::calib::CalibConfig,
    pub risk: crate::risk::RiskConfig,
    pub discovery: crate::discovery::DiscoveryConfig,
    pub backtest: crate::backtest::BacktestConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| DataError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| DataError::Io { path: path.display().to_string(), source: e })?;
        Self::from_json(&text).map_err(|e| match e {
            DataError::Config(m) => DataError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let cfg = |e: String| DataError::Config(e);
        self.calib.validate().map_err(|e| cfg(e.to_string()))?;
        self.risk.validate().map_err(|e| cfg(e.to_string()))?;
        self.discovery.validate().map_err(|e| cfg(e.to_string()))?;
        self.backtest.validate().map_err(|e| cfg(e.to_string()))?;
        if self.sim.n_paths == 0 || self.sim.steps == 0 || !(self.sim.dt > 0.0) || !(self.sim.s0 > 0.0) {
            return Err(cfg("sim needs positive n_paths, steps, dt and s0".into()));
        }
        Ok(())
    }
}
