use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{EvalError, LabeledItem};

/// Stratified, seeded query/gallery split. Each class contributes
/// `round(len × fraction)` queries, capped so at least one item stays in the
/// gallery.
pub fn split(
    corpus: &[LabeledItem],
    query_fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledItem>, Vec<LabeledItem>), EvalError> {
    if !(query_fraction > 0.0 && query_fraction < 1.0) {
        return Err(EvalError::Fraction(query_fraction));
    }
    let mut by_class: BTreeMap<&str, Vec<&LabeledItem>> = BTreeMap::new();
    for item in corpus {
        by_class.entry(&item.class_label).or_default().push(item);
    }
    if let Some((label, _)) = by_class.iter().find(|(_, v)| v.len() < 2) {
        return Err(EvalError::SmallClass(label.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut queries, mut gallery) = (Vec::new(), Vec::new());
    for items in by_class.values_mut() {
        items.shuffle(&mut rng);
        let nq = ((items.len() as f64 * query_fraction).round() as usize).min(items.len() - 1);
        queries.extend(items[..nq].iter().map(|i| (*i).clone()));
        gallery.extend(items[nq..].iter().map(|i| (*i).clone()));
    }
    Ok((queries, gallery))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(classes: usize, per: usize) -> Vec<LabeledItem> {
        (0..classes * per)
            .map(|i| LabeledItem {
                item_id: i.to_string(),
                image: format!("{i}.png").into(),
                class_label: format!("c{}", i % classes),
            })
            .collect()
    }

    #[test]
    fn eight_by_250() {
        let (q, g) = split(&corpus(8, 250), 0.2, 1).unwrap();
        assert_eq!((q.len(), g.len()), (400, 1600));
        for c in 0..8 {
            let label = format!("c{c}");
            assert_eq!(q.iter().filter(|i| i.class_label == label).count(), 50);
            assert_eq!(g.iter().filter(|i| i.class_label == label).count(), 200);
        }
        let ids: std::collections::HashSet<_> = q.iter().chain(&g).map(|i| &i.item_id).collect();
        assert_eq!(ids.len(), 2000);
    }

    #[test]
    fn seeded() {
        let c = corpus(3, 20);
        assert_eq!(split(&c, 0.3, 9).unwrap(), split(&c, 0.3, 9).unwrap());
        assert_ne!(split(&c, 0.3, 9).unwrap().0, split(&c, 0.3, 10).unwrap().0);
    }

    #[test]
    fn rejects_singletons_and_bad_fractions() {
        let mut c = corpus(2, 5);
        c.push(LabeledItem { item_id: "x".into(), image: "x.png".into(), class_label: "lonely".into() });
        assert!(matches!(split(&c, 0.2, 0), Err(EvalError::SmallClass(l)) if l == "lonely"));
        assert!(matches!(split(&corpus(2, 5), 0.0, 0), Err(EvalError::Fraction(_))));
        assert!(matches!(split(&corpus(2, 5), 1.0, 0), Err(EvalError::Fraction(_))));
    }

    #[test]
    fn every_query_class_keeps_a_gallery_member() {
        let (q, g) = split(&corpus(4, 2), 0.9, 3).unwrap();
        for item in &q {
            assert!(g.iter().any(|x| x.class_label == item.class_label));
        }
    }
}
