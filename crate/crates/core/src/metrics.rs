//! Offline precision metrics, simulated click-through rate and the
//! evaluation report.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diversity::{ilad, SimilarityMode};
use crate::model::{Catalog, ClickRecord, ItemIdx, Page, UserRequest};
use crate::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Mean over requests, with the requests that could not be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub value: Option<f64>,
    pub n: usize,
    /// Sample standard deviation of the per-request values.
    pub std_dev: f64,
    pub excluded: Vec<usize>,
}

impl MeanEstimate {
    pub fn from_values(values: &[f64], excluded: Vec<usize>) -> Self {
        let n = values.len();
        let value = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
        let std_dev = match (value, n) {
            (Some(mu), n) if n > 1 => (values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt(),
            _ => 0.0,
        };
        Self {
            value,
            n,
            std_dev,
            excluded,
        }
    }

    /// 95% normal-approximation interval of the mean.
    pub fn ci(&self) -> Option<(f64, f64)> {
        let v = self.value?;
        let half = Z95 * self.std_dev / (self.n as f64).sqrt();
        Some((v - half, v + half))
    }
}

/// Mean over requests of `|R ∩ C| / |R|`; empty `R` is excluded.
pub fn precision(results: &[(BTreeSet<ItemIdx>, BTreeSet<ItemIdx>)]) -> MeanEstimate {
    let mut values = Vec::with_capacity(results.len());
    let mut excluded = Vec::new();
    for (u, (shown, clicked)) in results.iter().enumerate() {
        if shown.is_empty() {
            excluded.push(u);
            continue;
        }
        values.push(shown.intersection(clicked).count() as f64 / shown.len() as f64);
    }
    MeanEstimate::from_values(&values, excluded)
}

/// Precision with `R` the page and `C` its clicked items.
pub fn record_precision(records: &[ClickRecord]) -> MeanEstimate {
    let pairs: Vec<_> = records
        .iter()
        .map(|r| (r.page.iter_items().map(|(_, _, i)| i).collect(), r.clicked_items()))
        .collect();
    precision(&pairs)
}

/// Per channel, the mean over requests of the clicked fraction of the first
/// `k` items. `indicators[u][c]` lists click flags of request `u`, channel
/// `c`, in display order. Lists shorter than `k` are excluded.
pub fn precision_at_k_channel(indicators: &[Vec<Vec<bool>>], k: usize) -> Result<Vec<MeanEstimate>> {
    if k == 0 {
        return Err(Error::Config("precision@k needs k >= 1".into()));
    }
    let channels = indicators.iter().map(Vec::len).max().unwrap_or(0);
    Ok((0..channels)
        .map(|c| {
            let mut values = Vec::new();
            let mut excluded = Vec::new();
            for (u, req) in indicators.iter().enumerate() {
                match req.get(c) {
                    Some(list) if list.len() >= k => {
                        values.push(list[..k].iter().filter(|&&b| b).count() as f64 / k as f64);
                    }
                    _ => excluded.push(u),
                }
            }
            MeanEstimate::from_values(&values, excluded)
        })
        .collect())
}

/// A click model that can be queried and sampled.
pub trait ClickModel {
    /// Click probability of every slot, shaped like `page.channels`.
    fn click_probabilities(&self, request: &UserRequest, page: &Page) -> Vec<Vec<f64>>;

    fn sample_clicks<R: Rng + ?Sized>(&self, request: &UserRequest, page: &Page, rng: &mut R) -> BTreeSet<(usize, usize)> {
        let probs = self.click_probabilities(request, page);
        let mut clicks = BTreeSet::new();
        for (c, row) in probs.iter().enumerate() {
            for (p, &q) in row.iter().enumerate() {
                if rng.random::<f64>() < q {
                    clicks.insert((c, p));
                }
            }
        }
        clicks
    }
}

/// Clicks over impressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub clicks: u64,
    pub impressions: u64,
}

impl Rate {
    pub fn value(&self) -> Option<f64> {
        (self.impressions > 0).then(|| self.clicks as f64 / self.impressions as f64)
    }

    /// 95% normal-approximation binomial interval.
    pub fn ci(&self) -> Option<(f64, f64)> {
        let p = self.value()?;
        let half = Z95 * (p * (1.0 - p) / self.impressions as f64).sqrt();
        Some((p - half, p + half))
    }

    fn add(&mut self, clicked: bool) {
        self.impressions += 1;
        self.clicks += u64::from(clicked);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrEstimate {
    pub overall: Rate,
    pub per_channel: Vec<Rate>,
}

/// Click-through rate of already-clicked records.
pub fn logged_ctr(records: &[ClickRecord]) -> Result<CtrEstimate> {
    let channels = records.iter().map(|r| r.page.channels.len()).max().unwrap_or(0);
    let mut overall = Rate {
        clicks: 0,
        impressions: 0,
    };
    let mut per_channel = vec![overall; channels];
    for r in records {
        for (c, p, _) in r.page.iter_items() {
            let hit = r.is_clicked(c, p);
            overall.add(hit);
            per_channel[c].add(hit);
        }
    }
    if overall.impressions == 0 {
        return Err(Error::Data("no impressions to compute a click-through rate".into()));
    }
    Ok(CtrEstimate { overall, per_channel })
}

/// Shows each page to the click model once and measures clicks over
/// impressions. Returns the sampled records alongside the estimate.
pub fn simulated_ctr<M: ClickModel, R: Rng + ?Sized>(
    pages: &[(UserRequest, Page)],
    model: &M,
    rng: &mut R,
) -> Result<(CtrEstimate, Vec<ClickRecord>)> {
    let records: Vec<ClickRecord> = pages
        .iter()
        .map(|(request, page)| ClickRecord {
            request: request.clone(),
            page: page.clone(),
            clicks: model.sample_clicks(request, page, rng),
        })
        .collect();
    Ok((logged_ctr(&records)?, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    /// Channel index, or `total` for page-level rows.
    pub channel: String,
    pub metric: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

impl ReportRow {
    fn from_mean(method: &str, channel: String, metric: &str, m: &MeanEstimate) -> Option<Self> {
        let value = m.value?;
        let (ci_low, ci_high) = m.ci()?;
        Some(Self {
            method: method.to_string(),
            channel,
            metric: metric.to_string(),
            value,
            ci_low,
            ci_high,
            n: m.n,
        })
    }

    fn from_rate(method: &str, channel: String, r: &Rate) -> Option<Self> {
        let value = r.value()?;
        let (ci_low, ci_high) = r.ci()?;
        Some(Self {
            method: method.to_string(),
            channel,
            metric: "ctr".to_string(),
            value,
            ci_low,
            ci_high,
            n: r.impressions as usize,
        })
    }
}

/// One method's evaluated pages with their (observed or simulated) clicks.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: String,
    pub records: Vec<ClickRecord>,
}

/// Per-request raw values behind the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestDump {
    pub method: String,
    pub request: usize,
    pub channel: String,
    pub shown: usize,
    pub clicked: usize,
    pub precision_at_k: Option<f64>,
    pub ilad: Option<f64>,
}

fn channel_items<'a>(catalog: &'a Catalog, items: &[ItemIdx]) -> Vec<&'a crate::model::Item> {
    items.iter().map(|&i| catalog.item(i)).collect()
}

/// Raw per-request, per-channel values plus one `total` row per request.
pub fn request_dump(outcome: &MethodOutcome, catalog: &Catalog, k: usize, mode: SimilarityMode) -> Vec<RequestDump> {
    let mut out = Vec::new();
    for (u, r) in outcome.records.iter().enumerate() {
        let flags = r.click_indicators();
        for (c, items) in r.page.channels.iter().enumerate() {
            let clicked = flags[c].iter().filter(|&&b| b).count();
            out.push(RequestDump {
                method: outcome.method.clone(),
                request: u,
                channel: c.to_string(),
                shown: items.len(),
                clicked,
                precision_at_k: (k > 0 && items.len() >= k)
                    .then(|| flags[c][..k].iter().filter(|&&b| b).count() as f64 / k as f64),
                ilad: ilad(&channel_items(catalog, items), mode),
            });
        }
        let all: Vec<ItemIdx> = r.page.iter_items().map(|(_, _, i)| i).collect();
        out.push(RequestDump {
            method: outcome.method.clone(),
            request: u,
            channel: "total".into(),
            shown: all.len(),
            clicked: r.clicks.len(),
            precision_at_k: None,
            ilad: ilad(&channel_items(catalog, &all), mode),
        });
    }
    out
}

/// Precision@k, ILAD and CTR per channel, and precision, ILAD and CTR for
/// the whole page, for every method.
pub fn evaluation_report(outcomes: &[MethodOutcome], catalog: &Catalog, k: usize, mode: SimilarityMode) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for o in outcomes {
        let m = o.method.as_str();
        let ctr = logged_ctr(&o.records)?;
        let indicators: Vec<_> = o.records.iter().map(ClickRecord::click_indicators).collect();
        let pak = precision_at_k_channel(&indicators, k)?;
        for (c, rate) in ctr.per_channel.iter().enumerate() {
            let ch = c.to_string();
            rows.extend(ReportRow::from_mean(m, ch.clone(), &format!("precision@{k}"), &pak[c]));
            let values: Vec<f64> = o
                .records
                .iter()
                .filter_map(|r| r.page.channels.get(c).and_then(|items| ilad(&channel_items(catalog, items), mode)))
                .collect();
            rows.extend(ReportRow::from_mean(m, ch.clone(), "ilad", &MeanEstimate::from_values(&values, vec![])));
            rows.extend(ReportRow::from_rate(m, ch, rate));
        }
        let total = "total".to_string();
        rows.extend(ReportRow::from_mean(m, total.clone(), "precision", &record_precision(&o.records)));
        let pages: Vec<f64> = o
            .records
            .iter()
            .filter_map(|r| {
                let all: Vec<ItemIdx> = r.page.iter_items().map(|(_, _, i)| i).collect();
                ilad(&channel_items(catalog, &all), mode)
            })
            .collect();
        rows.extend(ReportRow::from_mean(m, total.clone(), "ilad", &MeanEstimate::from_values(&pages, vec![])));
        rows.extend(ReportRow::from_rate(m, total, &ctr.overall));
    }
    Ok(rows)
}

pub const REPORT_HEADER: &str = "method,channel,metric,value,ci_low,ci_high,n";

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method, r.channel, r.metric, r.value, r.ci_low, r.ci_high, r.n
        );
    }
    out
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == REPORT_HEADER => {}
        other => return Err(Error::Data(format!("unexpected report header {other:?}"))),
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Data(format!("report row has {} fields: {line}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Data(format!("{s}: {e}")));
            Ok(ReportRow {
                method: f[0].to_string(),
                channel: f[1].to_string(),
                metric: f[2].to_string(),
                value: num(f[3])?,
                ci_low: num(f[4])?,
                ci_high: num(f[5])?,
                n: f[6].parse().map_err(|e| Error::Data(format!("{}: {e}", f[6])))?,
            })
        })
        .collect()
}

/// Fixed-width text rendering of the report.
pub fn report_table(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>7} {:<14} {:>9} {:>21} {:>8}",
        "method", "channel", "metric", "value", "95% ci", "n"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<16} {:>7} {:<14} {:>9.4} {:>21} {:>8}",
            r.method,
            r.channel,
            r.metric,
            r.value,
            format!("[{:.4}, {:.4}]", r.ci_low, r.ci_high),
            r.n
        );
    }
    out
}
