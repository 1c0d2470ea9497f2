//! JSON Lines file formats.
//!
//! * catalog: `{"item_id","category_id","brand_id","features":[...]}`
//! * channels: `{"channel_id","capacity","features":[...]}`
//! * click log: `{"user_id","user_features":[...],"page":{"channels":[{"channel_id","items":[...]}]},"clicks":[[channel_id,position],...]}`
//! * users: `{"user_id","user_features":[...],"cluster_hint"}`

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::model::{
    validate_channels, Catalog, Channel, ClickRecord, Dataset, ItemIdx, ItemRecord, Page, UserRequest,
    ValidationReport, Violation,
};
use crate::{Error, Result};

pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const CHANNELS_FILE: &str = "channels.jsonl";
pub const LOGS_FILE: &str = "logs.jsonl";
pub const USERS_FILE: &str = "users.jsonl";

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: impl AsRef<Path>, rows: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawChannelItems {
    pub channel_id: usize,
    pub items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPage {
    pub channels: Vec<RawChannelItems>,
}

/// Click-log line as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawClickRecord {
    pub user_id: String,
    pub user_features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_hint: Option<u8>,
    pub page: RawPage,
    pub clicks: Vec<(usize, usize)>,
}

pub fn raw_page(page: &Page, catalog: &Catalog) -> RawPage {
    RawPage {
        channels: page
            .channels
            .iter()
            .enumerate()
            .map(|(c, items)| RawChannelItems {
                channel_id: c,
                items: items.iter().map(|&i| catalog.item(i).id.clone()).collect(),
            })
            .collect(),
    }
}

pub fn to_raw(record: &ClickRecord, catalog: &Catalog) -> RawClickRecord {
    RawClickRecord {
        user_id: record.request.user_id.clone(),
        user_features: record.request.user_features.clone(),
        cluster_hint: record.request.cluster_hint,
        page: raw_page(&record.page, catalog),
        clicks: record.clicks.iter().copied().collect(),
    }
}

/// Validation over on-disk records, before ids are resolved.
pub fn validate_raw(catalog: &Catalog, channels: &[Channel], records: &[RawClickRecord]) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (r, rec) in records.iter().enumerate() {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let mut lens: HashMap<usize, usize> = HashMap::new();
        for ch in &rec.page.channels {
            if ch.channel_id >= channels.len() {
                report.violations.push(Violation::UnknownChannel {
                    record: r,
                    channel: ch.channel_id,
                });
            }
            lens.insert(ch.channel_id, ch.items.len());
            for id in &ch.items {
                if catalog.lookup(id).is_none() {
                    report.violations.push(Violation::DanglingItem {
                        record: r,
                        item: id.clone(),
                    });
                    continue;
                }
                match seen.get(id.as_str()) {
                    Some(&first) => report.violations.push(Violation::DuplicateItem {
                        record: r,
                        item: id.clone(),
                        first_channel: first,
                        second_channel: ch.channel_id,
                    }),
                    None => {
                        seen.insert(id, ch.channel_id);
                    }
                }
            }
        }
        for &(c, p) in &rec.clicks {
            if lens.get(&c).is_none_or(|&len| p >= len) {
                report.violations.push(Violation::ClickOutOfRange {
                    record: r,
                    channel: c,
                    position: p,
                });
            }
        }
    }
    report
}

fn resolve_page(raw: &RawPage, catalog: &Catalog, n_channels: usize) -> Result<Page> {
    let mut channels = vec![Vec::new(); n_channels];
    for ch in &raw.channels {
        let slot = channels
            .get_mut(ch.channel_id)
            .ok_or_else(|| Error::Data(format!("unknown channel {}", ch.channel_id)))?;
        *slot = ch
            .items
            .iter()
            .map(|id| catalog.lookup(id).ok_or_else(|| Error::Data(format!("unknown item {id}"))))
            .collect::<Result<Vec<ItemIdx>>>()?;
    }
    Ok(Page::new(channels))
}

/// Resolves on-disk records against the catalog. Any violation is an error
/// carrying the full report.
pub fn resolve_records(catalog: &Catalog, channels: &[Channel], records: &[RawClickRecord]) -> Result<Vec<ClickRecord>> {
    let report = validate_raw(catalog, channels, records);
    if !report.is_empty() {
        return Err(Error::Data(format!(
            "{} violation(s), first: {:?}",
            report.violations.len(),
            report.violations[0]
        )));
    }
    records
        .iter()
        .map(|r| {
            Ok(ClickRecord {
                request: UserRequest {
                    user_id: r.user_id.clone(),
                    user_features: r.user_features.clone(),
                    cluster_hint: r.cluster_hint,
                },
                page: resolve_page(&r.page, catalog, channels.len())?,
                clicks: r.clicks.iter().copied().collect(),
            })
        })
        .collect()
}

pub fn read_catalog(path: impl AsRef<Path>) -> Result<Catalog> {
    Catalog::from_records(read_jsonl::<ItemRecord>(path)?)
}

pub fn write_catalog(path: impl AsRef<Path>, catalog: &Catalog) -> Result<()> {
    write_jsonl(path, &catalog.to_records())
}

pub fn read_channels(path: impl AsRef<Path>) -> Result<Vec<Channel>> {
    let channels: Vec<Channel> = read_jsonl(path)?;
    validate_channels(&channels)?;
    Ok(channels)
}

pub fn write_click_log(path: impl AsRef<Path>, records: &[ClickRecord], catalog: &Catalog) -> Result<()> {
    let raw: Vec<RawClickRecord> = records.iter().map(|r| to_raw(r, catalog)).collect();
    write_jsonl(path, &raw)
}

pub fn read_click_log(path: impl AsRef<Path>, catalog: &Catalog, channels: &[Channel]) -> Result<Vec<ClickRecord>> {
    let raw: Vec<RawClickRecord> = read_jsonl(path)?;
    resolve_records(catalog, channels, &raw)
}

/// Loads `catalog.jsonl`, `channels.jsonl` and `logs.jsonl` from `dir`.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let catalog = read_catalog(dir.join(CATALOG_FILE))?;
    let channels = read_channels(dir.join(CHANNELS_FILE))?;
    let records = read_click_log(dir.join(LOGS_FILE), &catalog, &channels)?;
    Ok(Dataset {
        catalog,
        channels,
        records,
    })
}

pub fn write_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_catalog(dir.join(CATALOG_FILE), &dataset.catalog)?;
    write_jsonl(dir.join(CHANNELS_FILE), &dataset.channels)?;
    write_click_log(dir.join(LOGS_FILE), &dataset.records, &dataset.catalog)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> Catalog {
        Catalog::from_records(["a", "b", "c"].iter().map(|id| ItemRecord {
            item_id: id.to_string(),
            category_id: "x".into(),
            brand_id: "bx".into(),
            features: vec![0.1],
        }))
        .unwrap()
    }

    fn channels() -> Vec<Channel> {
        (0..2)
            .map(|i| Channel {
                channel_id: i,
                capacity: 1,
                features: vec![],
            })
            .collect()
    }

    fn raw(items0: &[&str], items1: &[&str], clicks: Vec<(usize, usize)>) -> RawClickRecord {
        RawClickRecord {
            user_id: "u1".into(),
            user_features: vec![0.25],
            cluster_hint: None,
            page: RawPage {
                channels: vec![
                    RawChannelItems {
                        channel_id: 0,
                        items: items0.iter().map(|s| s.to_string()).collect(),
                    },
                    RawChannelItems {
                        channel_id: 1,
                        items: items1.iter().map(|s| s.to_string()).collect(),
                    },
                ],
            },
            clicks,
        }
    }

    #[test]
    fn unknown_item_is_one_dangling_entry() {
        let report = validate_raw(&catalog(), &channels(), &[raw(&["a", "x9"], &["b"], vec![])]);
        assert_eq!(
            report.violations,
            vec![Violation::DanglingItem {
                record: 0,
                item: "x9".into()
            }]
        );
        assert!(resolve_records(&catalog(), &channels(), &[raw(&["x9"], &[], vec![])]).is_err());
    }

    #[test]
    fn raw_duplicate_is_reported() {
        let report = validate_raw(&catalog(), &channels(), &[raw(&["a"], &["a"], vec![])]);
        assert_eq!(report.violations.len(), 1);
    }

    #[test]
    fn click_log_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog();
        let recs = resolve_records(&cat, &channels(), &[raw(&["a", "b"], &["c"], vec![(0, 1)])]).unwrap();
        let path = dir.path().join("logs.jsonl");
        write_click_log(&path, &recs, &cat).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"user_id\":\"u1\""));
        assert!(text.contains("\"clicks\":[[0,1]]"));
        let back = read_click_log(&path, &cat, &channels()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn floats_survive_text_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let ch = vec![Channel {
            channel_id: 0,
            capacity: 3,
            features: vec![0.1 + 0.2, 1.0 / 3.0, -2.5e-300],
        }];
        write_jsonl(&path, &ch).unwrap();
        assert_eq!(read_channels(&path).unwrap(), ch);
    }
}
