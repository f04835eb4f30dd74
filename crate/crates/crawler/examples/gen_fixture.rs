//! Regenerates the bundled fixture site: `cargo run -p snapforge-crawler
//! --example gen_fixture -- <corpus-dir>`.

use snapforge_crawler::fixture::{generate_fixture_site, FixtureConfig};

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "fixtures/corpus".into());
    let rows = generate_fixture_site(&dir, &FixtureConfig::default()).expect("generate fixture");
    let images: usize = rows.iter().map(|r| r.image_urls.len()).sum();
    println!("{} products, {images} images under {dir}", rows.len());
}
