//! Ad-library targeting reports: fetching, parsing and normalization.

pub mod fetch;
pub mod mock;
pub mod model;
pub mod normalize;
pub mod synth;

pub use fetch::{
    fetch_advertiser_list, fetch_reports, fetch_targeting_report, AdvertiserList, FetchError, FetchOutcome,
    FetchRecord, Fetcher, HttpFetcher, RateLimiter, RawReport, ReplayFetcher, RetryPolicy,
};
pub use model::{
    parse_advertiser_list, parse_targeting_report, CriterionKind, Micros, Mode, ParseError, TargetingCriterion,
    TargetingReportSnapshot,
};
pub use normalize::{
    assemble_dataset, dataset_stats, normalize_snapshots, CriterionSpend, DatasetStats, FetchSummary,
    TargetingDataset, WindowRecord,
};
