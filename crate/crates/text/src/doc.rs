use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Price {
    pub amount: f64,
    /// ISO 4217 code, e.g. "IRR".
    pub currency: String,
}

/// One extracted product page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductDoc {
    pub doc_id: String,
    pub url: String,
    pub site_name: String,
    pub name: String,
    pub price: Option<Price>,
    pub brand: Option<String>,
    pub description: Option<String>,
    #[serde(default)]
    pub links: Vec<String>,
    #[serde(default)]
    pub image_urls: Vec<String>,
    /// Milliseconds since the Unix epoch.
    #[serde(default)]
    pub crawl_time: u64,
    /// Required fields that could not be extracted. Empty for a complete doc.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<String>,
}

impl ProductDoc {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }

    /// Text of a searchable field.
    pub fn text(&self, field: Field) -> &str {
        match field {
            Field::Name => &self.name,
            Field::Brand => self.brand.as_deref().unwrap_or(""),
            Field::Description => self.description.as_deref().unwrap_or(""),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Name,
    Brand,
    Description,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::Name, Field::Brand, Field::Description];

    pub fn parse(s: &str) -> Option<Field> {
        match s {
            "name" => Some(Field::Name),
            "brand" => Some(Field::Brand),
            "description" => Some(Field::Description),
            _ => None,
        }
    }
}

/// Exact-match filter keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterField {
    SiteName,
    Brand,
    Currency,
}

impl FilterField {
    pub fn parse(s: &str) -> Option<FilterField> {
        match s {
            "site_name" | "site" => Some(FilterField::SiteName),
            "brand" => Some(FilterField::Brand),
            "currency" => Some(FilterField::Currency),
            _ => None,
        }
    }

    pub fn matches(self, doc: &ProductDoc, value: &str) -> bool {
        match self {
            FilterField::SiteName => doc.site_name == value,
            FilterField::Brand => doc.brand.as_deref() == Some(value),
            FilterField::Currency => doc.price.as_ref().is_some_and(|p| p.currency == value),
        }
    }
}
