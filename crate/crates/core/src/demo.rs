//! The shipped demo scenario: one seed fixes the world, the ad-library
//! corpus, affiliations and interest-page data.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adlib::synth::{generate_ad_corpus, AdCorpus, AdCorpusConfig, CorpusInterest};
use crate::demographics::Pair;
use crate::synthworld::{PlantedInterest, WorldConfig};

pub const DEMO_SEED: u64 = 2022;

const INTEREST_NAMES: [&str; 72] = [
    "Fishing", "Hunting", "Country music", "Yoga", "Hip hop music", "Jazz", "NASCAR", "Golf",
    "Tennis", "Basketball", "American football", "Soccer", "Baseball", "Boxing", "Gospel music", "Classical music",
    "Veganism", "Organic food", "Barbecue", "Craft beer", "Wine", "Coffee", "Baking", "Home improvement",
    "Gardening", "Pickup trucks", "Motorcycles", "Electric vehicles", "Camping", "Firearms", "Military", "Law enforcement",
    "Farming", "Cattle", "Real estate", "Investing", "Cryptocurrency", "Entrepreneurship", "Small business", "Volunteering",
    "Environmentalism", "Climate change", "LGBT community", "Feminism", "Social justice", "Civil rights", "Immigration", "Christianity",
    "Bible study", "Catholic Church", "Meditation", "Astrology", "Anime", "Video games", "Board games", "Comic books",
    "Reality television", "Talk radio", "Late-night television", "Documentary films", "Poetry", "Theatre", "Museums", "Travel",
    "Cruises", "Beaches", "Politics", "Voting", "Election", "Homeschooling", "Public schools", "Student loans",
];

/// Interests with rates too low to clear the reliability floor in demo-sized audiences.
const RARE: [&str; 4] = ["Talk radio", "Homeschooling", "Cattle", "Poetry"];

const POPULAR_DOMAINS: [(&str, f64, f64); 4] = [
    // domain, bias, share of interests mentioning it
    ("youtube.com", -0.04, 0.9),
    ("walmart.com", 0.12, 0.55),
    ("amazon.com", -0.08, 0.4),
    ("wikipedia.org", -0.2, 0.3),
];
const TOPICAL_DOMAINS: usize = 150;

fn topical_domain(k: usize) -> String {
    match k % 10 {
        3 => format!("site{k:03}.co.uk"),
        7 => format!("site{k:03}.org"),
        _ => format!("site{k:03}.com"),
    }
}

fn topical_bias(k: usize) -> f64 {
    let v = -0.95 + 1.9 * k as f64 / (TOPICAL_DOMAINS - 1) as f64;
    (v * 1000.0).round() / 1000.0
}

pub struct DemoInterest {
    pub id: String,
    pub name: &'static str,
    pub rd: f64,
}

pub fn demo_interests(seed: u64) -> Vec<DemoInterest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d);
    let n = INTEREST_NAMES.len();
    let mut leans: Vec<f64> = (0..n).map(|i| -0.75 + 1.5 * i as f64 / (n - 1) as f64).collect();
    leans.shuffle(&mut rng);
    INTEREST_NAMES
        .iter()
        .zip(leans)
        .enumerate()
        .map(|(i, (name, rd))| DemoInterest { id: format!("int{:03}", i + 1), name, rd: (rd * 100.0).round() / 100.0 })
        .collect()
}

pub fn demo_world(seed: u64) -> WorldConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2e);
    let mut world = WorldConfig::balanced(60_000, seed);
    world.interests = demo_interests(seed)
        .into_iter()
        .map(|i| {
            let base = if RARE.contains(&i.name) { 0.004 } else { (rng.gen_range(0.05..0.15f64) * 1000.0).round() / 1000.0 };
            let wb = (rng.gen_range(-0.5..0.5f64) * 100.0).round() / 100.0;
            let wh = (rng.gen_range(-0.4..0.4f64) * 100.0).round() / 100.0;
            let mut p = PlantedInterest::new(i.id, base).with_skew(Pair::RD, i.rd).with_skew(Pair::WB, wb).with_skew(Pair::WH, wh);
            p.name = Some(i.name.to_string());
            p
        })
        .collect();
    world
}

pub fn demo_ad_corpus(seed: u64) -> AdCorpus {
    let interests =
        demo_interests(seed).into_iter().map(|i| CorpusInterest { name: i.name.to_string(), lean: i.rd }).collect();
    let mut cfg = AdCorpusConfig::new(seed, interests);
    cfg.weeks = 6;
    generate_ad_corpus(&cfg)
}

/// JSON lines of interest pages plus the `domain,score` bias table.
pub fn demo_pages(seed: u64) -> (String, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3f);
    let mut pages = String::new();
    for (n, i) in demo_interests(seed).iter().enumerate() {
        let mut urls: Vec<String> = Vec::new();
        for (d, _, share) in POPULAR_DOMAINS {
            if rng.gen_bool(share) {
                urls.push(format!("https://www.{d}/{}", i.id));
            }
        }
        let want = rng.gen_range(7..=10usize);
        let centre = (i.rd + 0.95) / 1.9 * (TOPICAL_DOMAINS - 1) as f64;
        while urls.len() < want {
            let k = (centre + rng.gen_range(-12.0..12.0)).round().clamp(0.0, (TOPICAL_DOMAINS - 1) as f64) as usize;
            let url = format!("https://www.{}/p/{}", topical_domain(k), i.id);
            if !urls.contains(&url) {
                urls.push(url);
            }
        }
        if n % 17 == 5 {
            urls.push("http://127.0.0.1/local".to_string());
        }
        let line = serde_json::json!({ "interest_id": i.id, "name": i.name, "urls": urls });
        pages.push_str(&line.to_string());
        pages.push('\n');
    }

    let mut bias = String::from("domain,score\n");
    for (d, b, _) in POPULAR_DOMAINS {
        bias.push_str(&format!("{d},{b}\n"));
    }
    for k in 0..TOPICAL_DOMAINS {
        // some domains have no published score
        if k % 7 != 2 {
            bias.push_str(&format!("{},{}\n", topical_domain(k), topical_bias(k)));
        }
    }
    (pages, bias)
}

pub const DEMO_RUN_CONFIG: &str = r#"# Demo run over the shipped fixtures. Paths are relative to this file.
output_dir = "../../out/demo"

[paths]
world_config = "world.toml"
replay_dir = "adlib"
domain_bias = "domain_bias.csv"
interest_pages = "interest_pages.jsonl"
affiliations = "affiliations.csv"

[audiences]
size = 5000

[estimator]
backend = "synthetic"
min_count = 50

[estimator.noise]
kind = "significant_figures"
figures = 2

[skew]
thresholds = "midterms"
histogram_bin_width = 0.1

[pageskew]
drop_top_k = 1
max_k = 12

[ingest]
min_delay_ms = 0
max_retries = 2

[analyze]
top_n = 60
political_criteria = ["Politics", "Voting", "Election"]
"#;

/// Writes the full demo fixture set into `dir`.
pub fn write_demo_fixtures(dir: &Path, seed: u64) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let world = toml::to_string_pretty(&demo_world(seed)).map_err(std::io::Error::other)?;
    fs::write(dir.join("world.toml"), world)?;
    let corpus = demo_ad_corpus(seed);
    let adlib = dir.join("adlib");
    if adlib.exists() {
        fs::remove_dir_all(&adlib)?;
    }
    corpus.write_replay_dir(&adlib)?;
    let mut aff = Vec::new();
    corpus.write_affiliations(&mut aff).map_err(std::io::Error::other)?;
    fs::write(dir.join("affiliations.csv"), aff)?;
    let (pages, bias) = demo_pages(seed);
    fs::write(dir.join("interest_pages.jsonl"), pages)?;
    fs::write(dir.join("domain_bias.csv"), bias)?;
    let mut f = fs::File::create(dir.join("run.toml"))?;
    f.write_all(DEMO_RUN_CONFIG.as_bytes())?;
    Ok(())
}
