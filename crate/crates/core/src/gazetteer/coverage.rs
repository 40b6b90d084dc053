use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::{Gazetteer, Surface};
use crate::corpus::{Dataset, EntityType};

/// Fraction of distinct gold entity surfaces found in a gazetteer, per label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub per_label_rate: BTreeMap<EntityType, f64>,
    pub per_label_gold: BTreeMap<EntityType, usize>,
    /// Unweighted mean over labels with at least one gold entity.
    pub average_rate: f64,
    pub total_entries: usize,
}

impl CoverageReport {
    pub fn render(&self) -> String {
        let mut out = String::from("label   gold   rate\n");
        for (label, rate) in &self.per_label_rate {
            out.push_str(&format!(
                "{:<6} {:>5} {:>6.3}\n",
                label.name(),
                self.per_label_gold[label],
                rate
            ));
        }
        out.push_str(&format!(
            "avg          {:>6.3}\nentries {}\n",
            self.average_rate, self.total_entries
        ));
        out
    }
}

/// Distinct gold surfaces per label, sorted.
pub(crate) fn gold_surfaces(data: &Dataset) -> BTreeMap<EntityType, BTreeSet<Surface>> {
    let mut out: BTreeMap<EntityType, BTreeSet<Surface>> = BTreeMap::new();
    for s in &data.sentences {
        for span in s.spans() {
            out.entry(span.etype).or_default().insert(s.surface(&span).to_vec());
        }
    }
    out
}

pub fn coverage_rate(gaz: &Gazetteer, data: &Dataset) -> CoverageReport {
    let gold = gold_surfaces(data);
    let mut per_label_rate = BTreeMap::new();
    let mut per_label_gold = BTreeMap::new();
    for (label, surfaces) in &gold {
        let found = surfaces.iter().filter(|s| gaz.contains(s, *label)).count();
        per_label_rate.insert(*label, found as f64 / surfaces.len() as f64);
        per_label_gold.insert(*label, surfaces.len());
    }
    let average_rate = if per_label_rate.is_empty() {
        0.0
    } else {
        per_label_rate.values().sum::<f64>() / per_label_rate.len() as f64
    };
    CoverageReport {
        per_label_rate,
        per_label_gold,
        average_rate,
        total_entries: gaz.len(),
    }
}

/// Gazetteer keeping `round(target · n_label)` uniformly chosen distinct gold
/// entities of each label.
pub fn subsample_coverage<R: Rng>(data: &Dataset, target: f64, rng: &mut R) -> Gazetteer {
    let target = target.clamp(0.0, 1.0);
    let mut gaz = Gazetteer::new();
    for (label, surfaces) in gold_surfaces(data) {
        let mut pool: Vec<Surface> = surfaces.into_iter().collect();
        let keep = (target * pool.len() as f64).round() as usize;
        pool.shuffle(rng);
        for s in pool.into_iter().take(keep) {
            gaz.insert(s, label).expect("gold surfaces are non-empty");
        }
    }
    gaz
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentence, Tag};
    use crate::seed::rng_from;

    fn entity_sentence(words: &[&str], ty: EntityType) -> Sentence {
        let tokens: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        let mut tags = vec![Tag::inside(ty); tokens.len()];
        tags[0] = Tag::begin(ty);
        Sentence::new(tokens, tags).unwrap()
    }

    fn many_entities(per_label: usize) -> Dataset {
        let mut sents = Vec::new();
        for ty in EntityType::ALL {
            for i in 0..per_label {
                sents.push(entity_sentence(&[&format!("{}{}", ty.name(), i)], ty));
            }
        }
        Dataset::new("many", sents)
    }

    #[test]
    fn full_and_empty_gazetteers() {
        let data = many_entities(5);
        let full = subsample_coverage(&data, 1.0, &mut rng_from(1));
        let r = coverage_rate(&full, &data);
        assert!(r.per_label_rate.values().all(|&v| v == 1.0));
        assert_eq!(r.average_rate, 1.0);
        let r = coverage_rate(&Gazetteer::new(), &data);
        assert!(r.per_label_rate.values().all(|&v| v == 0.0));
        assert!(subsample_coverage(&data, 0.0, &mut rng_from(1)).is_empty());
    }

    #[test]
    fn hand_counted_loc_rate() {
        // 4 distinct LOC surfaces (one repeated), 2 of them in the gazetteer.
        let data = Dataset::new(
            "loc",
            vec![
                entity_sentence(&["paris"], EntityType::Loc),
                entity_sentence(&["new", "york"], EntityType::Loc),
                entity_sentence(&["oslo"], EntityType::Loc),
                entity_sentence(&["lima"], EntityType::Loc),
                entity_sentence(&["paris"], EntityType::Loc),
            ],
        );
        let mut g = Gazetteer::new();
        g.insert_str("paris", EntityType::Loc).unwrap();
        g.insert_str("new york", EntityType::Loc).unwrap();
        g.insert_str("oslo", EntityType::Per).unwrap();
        let r = coverage_rate(&g, &data);
        assert_eq!(r.per_label_rate[&EntityType::Loc], 0.5);
        assert_eq!(r.per_label_rate.len(), 1);
        assert_eq!(r.average_rate, 0.5);
    }

    #[test]
    fn half_coverage_counts() {
        let data = many_entities(100);
        let g = subsample_coverage(&data, 0.5, &mut rng_from(3));
        for ty in EntityType::ALL {
            let kept = g.surfaces(ty).len();
            assert!((49..=51).contains(&kept), "{ty}: {kept}");
        }
        let r = coverage_rate(&g, &data);
        assert!((r.average_rate - 0.5).abs() <= 0.01);
    }
}
