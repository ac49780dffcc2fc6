//! Optional remote synonym lookup behind the same `SynonymSet` interface,
//! with an on-disk cache in the `synonyms.tsv` format.
//!
//! Benchmark runs and tests never need this: bundles ship an offline synonym
//! table. The client exists for refreshing that table from an ontology
//! search service ahead of time.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use crate::dataset::SynonymSet;

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("api key env var '{0}' is not set")]
    ApiKeyMissing(String),
    #[error("cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("http: {0}")]
    Http(String),
    #[error("malformed service response: {0}")]
    Malformed(String),
}

/// Search client with a write-through cache. Lookups hit the cache first;
/// misses query `GET {endpoint}/search?q={label}` and parse the first
/// result's synonym array. Cache writes go through a single-writer lock.
pub struct OntologyClient {
    endpoint: String,
    api_key_env: String,
    cache_path: PathBuf,
    cache: Mutex<BTreeMap<String, SynonymSet>>,
    client: reqwest::blocking::Client,
}

impl OntologyClient {
    pub fn new(
        endpoint: &str,
        api_key_env: &str,
        cache_path: &Path,
    ) -> Result<Self, OntologyError> {
        let mut cache = BTreeMap::new();
        if cache_path.is_file() {
            let text = fs::read_to_string(cache_path).map_err(|source| OntologyError::Cache {
                path: cache_path.to_path_buf(),
                source,
            })?;
            let mut raw: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for line in text.lines() {
                if let Some((canonical, synonym)) = line.split_once('\t') {
                    raw.entry(canonical.to_string())
                        .or_default()
                        .push(synonym.to_string());
                }
            }
            for (canonical, syns) in raw {
                cache.insert(canonical.clone(), SynonymSet::new(canonical, syns));
            }
        }
        Ok(OntologyClient {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key_env: api_key_env.to_string(),
            cache_path: cache_path.to_path_buf(),
            cache: Mutex::new(cache),
            client: reqwest::blocking::Client::new(),
        })
    }

    pub fn cached(&self, label: &str) -> Option<SynonymSet> {
        self.cache.lock().unwrap().get(label).cloned()
    }

    /// Resolve a label to its synonym set, querying the service on a miss.
    pub fn lookup(&self, label: &str) -> Result<SynonymSet, OntologyError> {
        if let Some(hit) = self.cached(label) {
            return Ok(hit);
        }
        let synonyms = self.fetch(label)?;
        let set = SynonymSet::new(label.to_string(), synonyms);
        let mut cache = self.cache.lock().unwrap();
        // write-through while holding the lock
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.cache_path)
            .map_err(|source| OntologyError::Cache {
                path: self.cache_path.clone(),
                source,
            })?;
        for s in set.candidates() {
            writeln!(f, "{}\t{}", set.canonical(), s).map_err(|source| OntologyError::Cache {
                path: self.cache_path.clone(),
                source,
            })?;
        }
        cache.insert(label.to_string(), set.clone());
        Ok(set)
    }

    fn fetch(&self, label: &str) -> Result<Vec<String>, OntologyError> {
        let mut request = self
            .client
            .get(format!("{}/search", self.endpoint))
            .query(&[("q", label)]);
        if !self.api_key_env.is_empty() {
            let key = std::env::var(&self.api_key_env)
                .map_err(|_| OntologyError::ApiKeyMissing(self.api_key_env.clone()))?;
            request = request.query(&[("apikey", key.as_str())]);
        }
        let response = request.send().map_err(|e| OntologyError::Http(e.to_string()))?;
        let status = response.status();
        let body = response.text().map_err(|e| OntologyError::Http(e.to_string()))?;
        if !status.is_success() {
            return Err(OntologyError::Http(format!("HTTP {status}")));
        }
        let value: serde_json::Value =
            serde_json::from_str(&body).map_err(|e| OntologyError::Malformed(e.to_string()))?;
        let first = value
            .get("collection")
            .and_then(|c| c.as_array())
            .and_then(|a| a.first())
            .ok_or_else(|| OntologyError::Malformed("no results in 'collection'".to_string()))?;
        let mut synonyms = Vec::new();
        if let Some(pref) = first.get("prefLabel").and_then(|v| v.as_str()) {
            synonyms.push(pref.to_string());
        }
        if let Some(list) = first.get("synonym").and_then(|v| v.as_array()) {
            synonyms.extend(list.iter().filter_map(|v| v.as_str().map(str::to_string)));
        }
        Ok(synonyms)
    }
}
