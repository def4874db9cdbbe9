//! URL to registrable-domain normalization against a bundled public-suffix list.

use std::sync::OnceLock;

use publicsuffix::{List, Psl};
use thiserror::Error;

const BUNDLED_LIST: &str = include_str!("../data/public_suffix_list.dat");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("malformed url `{url}`: {reason}")]
    MalformedUrl { url: String, reason: String },
    #[error("`{0}` has no registrable domain")]
    NotRegistrable(String),
    #[error("invalid public suffix list: {0}")]
    List(String),
}

pub struct DomainNormalizer {
    list: List,
}

impl DomainNormalizer {
    pub fn from_list_text(text: &str) -> Result<Self, DomainError> {
        let list = text.parse::<List>().map_err(|e| DomainError::List(e.to_string()))?;
        Ok(DomainNormalizer { list })
    }

    /// Normalizer over the list snapshot shipped with the crate.
    pub fn bundled() -> &'static DomainNormalizer {
        static NORMALIZER: OnceLock<DomainNormalizer> = OnceLock::new();
        NORMALIZER.get_or_init(|| {
            DomainNormalizer::from_list_text(BUNDLED_LIST).expect("bundled suffix list parses")
        })
    }

    /// `https://WWW.Example.com/path` -> `example.com`.
    pub fn normalize_url(&self, raw: &str) -> Result<String, DomainError> {
        let trimmed = raw.trim();
        let malformed = |reason: &str| DomainError::MalformedUrl {
            url: raw.to_string(),
            reason: reason.to_string(),
        };
        if trimmed.is_empty() {
            return Err(malformed("empty"));
        }
        let with_scheme = if trimmed.contains("://") {
            trimmed.to_string()
        } else {
            format!("http://{trimmed}")
        };
        let parsed = url::Url::parse(&with_scheme).map_err(|e| malformed(&e.to_string()))?;
        match parsed.host() {
            Some(url::Host::Domain(host)) => self.normalize_domain(host),
            Some(_) => Err(malformed("ip address host")),
            None => Err(malformed("no host")),
        }
    }

    /// Reduces a bare host name to its registrable domain.
    pub fn normalize_domain(&self, host: &str) -> Result<String, DomainError> {
        let host = host.trim().trim_end_matches('.').to_ascii_lowercase();
        let host = host.strip_prefix("www.").unwrap_or(&host);
        if host.is_empty() || host.contains(['/', ' ', ':']) || !host.contains('.') {
            return Err(DomainError::NotRegistrable(host.to_string()));
        }
        let domain = self
            .list
            .domain(host.as_bytes())
            .ok_or_else(|| DomainError::NotRegistrable(host.to_string()))?;
        String::from_utf8(domain.as_bytes().to_vec())
            .map_err(|_| DomainError::NotRegistrable(host.to_string()))
    }
}
