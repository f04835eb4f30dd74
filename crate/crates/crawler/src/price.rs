//! Price strings to `(amount, currency)`.

use snapforge_text::Price;

/// ISO 4217 code meaning "no currency"; used when none is detectable.
pub const UNKNOWN_CURRENCY: &str = "XXX";

const CURRENCY_WORDS: &[(&str, &str)] = &[
    ("ریال", "IRR"),
    ("تومان", "IRT"),
    ("rial", "IRR"),
    ("toman", "IRT"),
    ("US$", "USD"),
    ("$", "USD"),
    ("€", "EUR"),
    ("£", "GBP"),
    ("¥", "JPY"),
    ("₹", "INR"),
];

/// Maps Persian and Arabic-Indic digits and separators to ASCII.
fn fold_digits(c: char) -> char {
    match c {
        '\u{06F0}'..='\u{06F9}' => char::from(b'0' + (c as u32 - 0x06F0) as u8),
        '\u{0660}'..='\u{0669}' => char::from(b'0' + (c as u32 - 0x0660) as u8),
        '\u{066C}' => ',',
        '\u{066B}' => '.',
        _ => c,
    }
}

fn detect_currency(text: &str) -> Option<String> {
    let lower = text.to_lowercase();
    for (word, code) in CURRENCY_WORDS {
        if lower.contains(&word.to_lowercase()) {
            return Some(code.to_string());
        }
    }
    text.split(|c: char| !c.is_ascii_alphabetic())
        .find(|w| w.len() == 3 && w.chars().all(|c| c.is_ascii_uppercase()))
        .map(str::to_string)
}

/// Parses the first number in `text`, treating `,` `.` `'` and spaces as
/// digit-group separators where they can only be that. With both `,` and `.`
/// present the later one is the decimal point. A lone separator is a group
/// separator when it sits between a 1-3 digit nonzero head and exactly three
/// digits.
fn parse_amount(text: &str) -> Option<f64> {
    let folded: String = text.chars().map(fold_digits).collect();
    let start = folded.find(|c: char| c.is_ascii_digit())?;
    let chars: Vec<char> = folded[start..].chars().collect();
    let digit_at = |i: usize| chars.get(i).is_some_and(char::is_ascii_digit);
    let mut run = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let keep = match c {
            _ if c.is_ascii_digit() => true,
            ',' | '.' | '\'' => digit_at(i + 1),
            // a space only ever groups thousands
            ' ' | '\u{00A0}' | '\u{202F}' => (1..=3).all(|k| digit_at(i + k)) && !digit_at(i + 4),
            _ => false,
        };
        if !keep {
            break;
        }
        run.push(c);
    }
    let run = run.as_str();
    let seps: Vec<(usize, char)> = run.char_indices().filter(|(_, c)| matches!(c, ',' | '.')).collect();
    let decimal_at = match (seps.iter().any(|s| s.1 == ','), seps.iter().any(|s| s.1 == '.')) {
        (true, true) => seps.last().map(|s| s.0),
        (false, false) => None,
        _ => {
            let (pos, _) = *seps.last()?;
            let tail = run[pos + 1..].chars().take_while(|c| c.is_ascii_digit()).count();
            let head: String = run[..pos].chars().rev().take_while(|c| c.is_ascii_digit()).collect();
            let grouping = tail == 3 && (1..=3).contains(&head.len()) && head != "0";
            (seps.len() == 1 && !grouping).then_some(pos)
        }
    };
    let mut s = String::with_capacity(run.len());
    for (i, c) in run.char_indices() {
        if c.is_ascii_digit() {
            s.push(c);
        } else if Some(i) == decimal_at {
            s.push('.');
        }
    }
    s.parse().ok()
}

/// Parses a displayed price. The currency comes from a symbol, a known
/// word, or an ISO code in the text, else `default_currency`, else
/// [`UNKNOWN_CURRENCY`].
pub fn parse_price(text: &str, default_currency: Option<&str>) -> Option<Price> {
    let amount = parse_amount(text)?;
    let currency = detect_currency(text)
        .or_else(|| default_currency.map(str::to_string))
        .unwrap_or_else(|| UNKNOWN_CURRENCY.to_string());
    Some(Price { amount, currency })
}

/// Canonical text of a parsed price, e.g. `"1250000 IRR"`. Parsing it again
/// gives the same price.
pub fn format_price(p: &Price) -> String {
    format!("{} {}", p.amount, p.currency)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str) -> (f64, String) {
        let p = parse_price(text, None).unwrap();
        (p.amount, p.currency)
    }

    #[test]
    fn rial_with_groups() {
        assert_eq!(p("1,250,000 ریال"), (1_250_000.0, "IRR".into()));
        assert_eq!(p("۱٬۲۵۰٬۰۰۰ ریال"), (1_250_000.0, "IRR".into()));
        assert_eq!(p("۴۵۰۰۰ تومان"), (45_000.0, "IRT".into()));
    }

    #[test]
    fn separators() {
        assert_eq!(p("$19.99"), (19.99, "USD".into()));
        assert_eq!(p("€1.234,50"), (1234.5, "EUR".into()));
        assert_eq!(p("1,234.50 USD"), (1234.5, "USD".into()));
        assert_eq!(p("1 299 EUR"), (1299.0, "EUR".into()));
        assert_eq!(p("£7,5"), (7.5, "GBP".into()));
        assert_eq!(p("Price: 1,250"), (1250.0, UNKNOWN_CURRENCY.into()));
        assert_eq!(p("12."), (12.0, UNKNOWN_CURRENCY.into()));
        assert_eq!(p("0.125"), (0.125, UNKNOWN_CURRENCY.into()));
        assert_eq!(p("1234.567"), (1234.567, UNKNOWN_CURRENCY.into()));
        assert_eq!(p("19.99 5 left"), (19.99, UNKNOWN_CURRENCY.into()));
    }

    #[test]
    fn defaults_and_failures() {
        assert_eq!(parse_price("300", Some("IRR")).unwrap().currency, "IRR");
        assert!(parse_price("call us", None).is_none());
        assert!(parse_price("", None).is_none());
    }

    #[test]
    fn formatted_price_round_trips() {
        for text in ["1,250,000 ریال", "$19.99", "€1.234,50", "7 GBP", "0.125 EUR"] {
            let a = parse_price(text, None).unwrap();
            assert_eq!(parse_price(&format_price(&a), None).unwrap(), a, "{text}");
        }
    }
}
