use std::fs;

use adskew::adlib::mock::{MockData, MockServer};
use adskew::demo::demo_ad_corpus;
use adskew::pipeline::{run_ingest, RunConfig};

#[test]
fn endpoint_and_replay_ingest_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = demo_ad_corpus(4);
    let replay = tmp.path().join("adlib");
    corpus.write_replay_dir(&replay).unwrap();

    let mut cfg = RunConfig::from_toml_str("[ingest]\nmin_delay_ms = 0\nmax_in_flight = 4\n", tmp.path()).unwrap();
    cfg.output_dir = tmp.path().join("a");
    cfg.paths.replay_dir = Some("adlib".into());
    let from_disk = run_ingest(&cfg).unwrap();

    let server = MockServer::start(MockData::from_replay_dir(&replay).unwrap()).unwrap();
    cfg.output_dir = tmp.path().join("b");
    cfg.paths.replay_dir = None;
    cfg.ingest.endpoint = Some(server.base_url());
    cfg.ingest.dates = corpus.dates();
    let over_http = run_ingest(&cfg).unwrap();

    assert_eq!(from_disk.windows, over_http.windows);
    assert_eq!(from_disk.fetch, over_http.fetch);
    for f in ["dataset.json", "criterion_spend.csv", "dataset_stats.json", "fetch_log.csv"] {
        assert_eq!(fs::read(tmp.path().join("a/ingest").join(f)).unwrap(), fs::read(tmp.path().join("b/ingest").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn endpoint_without_dates_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::from_toml_str("[ingest]\nendpoint = \"http://127.0.0.1:9\"\n", tmp.path()).unwrap();
    cfg.output_dir = tmp.path().join("out");
    assert_eq!(run_ingest(&cfg).unwrap_err().exit_code(), 2);
}
