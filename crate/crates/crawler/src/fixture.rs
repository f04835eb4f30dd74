//! Fixture corpus: `corpus/<site>/manifest.json` plus the HTML and image
//! files it describes, and a deterministic generator for the bundled site.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use snapforge_gan::corpus::{render_glyph, GARMENT_CLASSES};
use snapforge_gan::preprocess::encode_png;

use crate::extract::{FieldName, PostProcess, SelectorRule};
use crate::request::CrawlRequest;
use crate::CrawlError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Expected extraction result of one product page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub url: String,
    /// HTML file relative to the site directory.
    pub file: String,
    pub name: String,
    pub price: f64,
    pub currency: String,
    pub brand: Option<String>,
    pub description: Option<String>,
    pub links: Vec<String>,
    pub image_urls: Vec<String>,
    /// URL of the product this one duplicates (same text, identical image
    /// bytes), if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
}

pub fn load_site_manifest(site_dir: impl AsRef<Path>) -> Result<Vec<ManifestRow>, CrawlError> {
    let path = site_dir.as_ref().join(MANIFEST_FILE);
    let bytes = std::fs::read(&path)?;
    serde_json::from_slice(&bytes).map_err(|e| CrawlError::Fixture(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureConfig {
    pub site_name: String,
    pub host: String,
    pub products: usize,
    /// Products `0..three_image_products` get three images, the rest two.
    pub three_image_products: usize,
    pub image_size: u32,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            site_name: "bazaar".into(),
            host: "bazaar.example".into(),
            products: 50,
            three_image_products: 20,
            image_size: 64,
            seed: 11,
        }
    }
}

const NOUNS: [&str; 8] = ["Tee", "Trousers", "Dress", "Skirt", "Sneakers", "Handbag", "Hat", "Coat"];
const ADJECTIVES: [&str; 10] = [
    "Linen", "Classic", "Summer", "Vintage", "Slim", "Oversized", "Everyday", "Pleated", "Cotton", "Quilted",
];
const COLOURS: [&str; 8] = ["navy", "olive", "crimson", "sand", "charcoal", "ivory", "teal", "mustard"];
const BRANDS: [&str; 6] = ["Nordvik", "Marks & Weave", "Atelier Rue", "Kashan Loom", "Urbanist", "Pellegrino"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Product {
    slug: String,
    class: usize,
    name: String,
    price_text: String,
    price: f64,
    currency: String,
    brand: Option<String>,
    description: Option<String>,
    images: usize,
}

fn product(i: usize, cfg: &FixtureConfig, rng: &mut ChaCha8Rng) -> Product {
    let class = i % NOUNS.len();
    let adjective = ADJECTIVES[rng.random_range(0..ADJECTIVES.len())];
    let colour = COLOURS[rng.random_range(0..COLOURS.len())];
    let name = format!("{adjective} {} {}", capitalize(colour), NOUNS[class]);
    let (price_text, price, currency) = match i {
        5 => ("1,250,000 ریال".to_string(), 1_250_000.0, "IRR"),
        11 => ("€1.234,50".to_string(), 1234.5, "EUR"),
        _ => {
            let dollars = rng.random_range(9..250) as f64 + 0.99;
            (format!("${dollars:.2}"), dollars, "USD")
        }
    };
    let brand = (i % 7 != 3).then(|| BRANDS[rng.random_range(0..BRANDS.len())].to_string());
    let description = (i % 9 != 4).then(|| {
        format!(
            "A {} {} in {colour}, cut for all-day wear. Item {i} of the {} collection.",
            adjective.to_lowercase(),
            GARMENT_CLASSES[class % GARMENT_CLASSES.len()],
            cfg.site_name
        )
    });
    Product {
        slug: format!("{}-{i:02}", NOUNS[class].to_lowercase()),
        class,
        name,
        price_text,
        price,
        currency: currency.to_string(),
        brand,
        description,
        images: if i < cfg.three_image_products { 3 } else { 2 },
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

/// Writes the fixture site under `corpus_dir/<site_name>` and returns its
/// manifest. The last product duplicates the second to last: same text and
/// identical image bytes under a different URL.
pub fn generate_fixture_site(corpus_dir: impl AsRef<Path>, cfg: &FixtureConfig) -> Result<Vec<ManifestRow>, CrawlError> {
    if cfg.products < 3 {
        return Err(CrawlError::Fixture("need at least 3 products".into()));
    }
    let site = corpus_dir.as_ref().join(&cfg.site_name);
    std::fs::create_dir_all(site.join("p"))?;
    std::fs::create_dir_all(site.join("img"))?;
    let base = format!("https://{}", cfg.host);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut products: Vec<Product> = (0..cfg.products).map(|i| product(i, cfg, &mut rng)).collect();
    let n = products.len();
    let dup_src = n - 2;
    {
        let src = &products[dup_src];
        let copy = Product {
            slug: format!("{}-copy", src.slug),
            class: src.class,
            name: src.name.clone(),
            price_text: src.price_text.clone(),
            price: src.price,
            currency: src.currency.clone(),
            brand: src.brand.clone(),
            description: src.description.clone(),
            images: src.images,
        };
        products[n - 1] = copy;
    }
    let url_of = |p: &Product| format!("{base}/p/{}", p.slug);

    let mut image_bytes: Vec<Vec<Vec<u8>>> = Vec::with_capacity(n);
    for (i, p) in products.iter().enumerate() {
        if i == n - 1 {
            image_bytes.push(image_bytes[dup_src].clone());
            continue;
        }
        let imgs = (0..p.images)
            .map(|_| encode_png(&render_glyph(p.class, cfg.image_size, &mut rng)))
            .collect();
        image_bytes.push(imgs);
    }

    let mut rows = Vec::with_capacity(n);
    for (i, p) in products.iter().enumerate() {
        let related = [(i + 1) % n, (i + 7) % n];
        let mut html = String::new();
        let _ = write!(
            html,
            "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>{title} | {site}</title>\n\
             <style>.price {{ color: #b00 }} body {{ font-family: sans-serif }}</style>\n\
             <script>window.dataLayer = [{{\"price\": \"0.00\", \"page\": \"product\"}}];</script>\n</head><body>\n\
             <nav><a href=\"/catalog\">All products</a> <a href=\"/about\">About</a></nav>\n\
             <main class=\"product\" data-sku=\"sku-{i:03}\">\n  <h1 class=\"product-name\">\n    {title}\n  </h1>\n",
            title = escape(&p.name),
            site = escape(&cfg.site_name),
        );
        if let Some(b) = &p.brand {
            let _ = writeln!(html, "  <span class=\"brand\">{}</span>", escape(b));
        }
        let _ = writeln!(html, "  <span class=\"price\">{}</span>", escape(&p.price_text));
        if let Some(d) = &p.description {
            let _ = writeln!(html, "  <div class=\"description\"><p>{}</p></div>", escape(d));
        }
        html.push_str("  <div class=\"gallery\">\n");
        let mut image_urls = Vec::new();
        for (k, bytes) in image_bytes[i].iter().enumerate() {
            let file = format!("img/{}-{k}.png", p.slug);
            std::fs::write(site.join(&file), bytes)?;
            // alternate root-relative and page-relative sources
            let src = if k % 2 == 0 { format!("/{file}") } else { format!("../{file}") };
            let _ = writeln!(html, "    <img class=\"product-image\" src=\"{src}\" alt=\"{}\">", escape(&p.name));
            image_urls.push(format!("{base}/{file}"));
        }
        html.push_str("  </div>\n  <ul class=\"related\">\n");
        let mut links = Vec::new();
        for r in related {
            let _ = writeln!(
                html,
                "    <li><a class=\"related\" href=\"/p/{}\">{}</a></li>",
                products[r].slug,
                escape(&products[r].name)
            );
            let u = url_of(&products[r]);
            if !links.contains(&u) {
                links.push(u);
            }
        }
        html.push_str("  </ul>\n</main>\n<footer><a href=\"https://social.example/bazaar\">Follow us</a></footer>\n</body></html>\n");
        let file = format!("p/{}.html", p.slug);
        std::fs::write(site.join(&file), html)?;
        rows.push(ManifestRow {
            url: url_of(p),
            file,
            name: p.name.clone(),
            price: p.price,
            currency: p.currency.clone(),
            brand: p.brand.clone(),
            description: p.description.clone(),
            links,
            image_urls,
            duplicate_of: (i == n - 1).then(|| url_of(&products[dup_src])),
        });
    }

    // listing page: every product once or twice (with fragments), plus noise
    let mut listing = String::from(
        "<!doctype html>\n<html><head><title>Catalog</title><script>var x = '<a href=\"/p/ghost\">';</script></head><body>\n\
         <nav><a href=\"/\">Home</a> <a href=\"/about\">About</a> <a href=\"/cart\">Cart</a></nav>\n<ul class=\"grid\">\n",
    );
    for (i, p) in products.iter().enumerate() {
        let _ = writeln!(listing, "  <li><a href=\"/p/{}\">{}</a></li>", p.slug, escape(&p.name));
        if i % 5 == 0 {
            let _ = writeln!(listing, "  <li><a href=\"p/{}#reviews\">reviews</a></li>", p.slug);
        }
    }
    listing.push_str(
        "</ul>\n<a href=\"/promo\">sale</a> <a href=\"/p/tee-00/reviews\">more</a> \
         <a href=\"https://social.example/bazaar\">social</a> <a href=\"mailto:shop@bazaar.example\">mail</a>\n</body></html>\n",
    );
    std::fs::write(site.join("catalog.html"), listing)?;
    std::fs::write(site.join("about.html"), "<html><body><h1>About us</h1></body></html>\n")?;
    std::fs::write(site.join("index.html"), "<html><body><a href=\"/catalog\">Catalog</a></body></html>\n")?;

    let json = serde_json::to_vec_pretty(&rows).map_err(std::io::Error::other)?;
    std::fs::write(site.join(MANIFEST_FILE), json)?;
    let req = serde_json::to_vec_pretty(&fixture_request(cfg)).map_err(std::io::Error::other)?;
    std::fs::write(site.join("request.json"), req)?;
    Ok(rows)
}

/// The crawl request matching a generated fixture site.
pub fn fixture_request(cfg: &FixtureConfig) -> CrawlRequest {
    let rule = |field, strategy: &str, pattern: &str, post: &[PostProcess]| SelectorRule {
        field,
        strategy: strategy.into(),
        pattern: pattern.into(),
        post_process: post.to_vec(),
    };
    use PostProcess::*;
    CrawlRequest {
        request_id: None,
        site_name: cfg.site_name.clone(),
        seed_urls: vec![format!("https://{}/catalog", cfg.host)],
        url_include_patterns: vec!["/p/*".into()],
        extraction_rules: vec![
            rule(FieldName::Name, "css-selector", "h1.product-name", &[Trim]),
            rule(FieldName::Price, "css-selector", "span.price", &[Trim, CurrencyParse]),
            rule(FieldName::Brand, "css-selector", "span.brand", &[Trim]),
            rule(FieldName::Description, "css-selector", "div.description", &[Trim]),
            rule(FieldName::Links, "css-selector", "a.related@href", &[AbsoluteUrl]),
            rule(FieldName::ImageUrls, "regex", r#"<img class="product-image" src="([^"]+)""#, &[AbsoluteUrl]),
        ],
        politeness_delay_ms: 50,
        max_pages: 1000,
        recrawl_interval_ms: None,
    }
}
