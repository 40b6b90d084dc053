use std::collections::BTreeSet;

use rand::Rng;

use super::{Dataset, EntityType, Sentence, Tag};
use crate::error::{GainError, Result};
use crate::gazetteer::Gazetteer;

/// Entity replacement: every gold span is swapped for a uniformly sampled
/// surface of the same label. Returns a dataset of the same size; append it to
/// the original to get the doubled augmented set.
pub fn augment_replace<R: Rng>(data: &Dataset, gaz: &Gazetteer, rng: &mut R) -> Result<Dataset> {
    let needed: BTreeSet<EntityType> = data
        .sentences
        .iter()
        .flat_map(|s| s.spans().into_iter().map(|sp| sp.etype))
        .collect();
    let missing: Vec<&str> = needed
        .iter()
        .filter(|t| gaz.surfaces(**t).is_empty())
        .map(|t| t.name())
        .collect();
    if !missing.is_empty() {
        return Err(GainError::Data(format!(
            "gazetteer has no entries for label(s): {}",
            missing.join(", ")
        )));
    }

    let sentences = data
        .sentences
        .iter()
        .map(|s| {
            let spans = s.spans();
            if spans.is_empty() {
                return s.clone();
            }
            let mut tokens = Vec::with_capacity(s.len());
            let mut tags = Vec::with_capacity(s.len());
            let mut cursor = 0;
            for span in spans {
                tokens.extend_from_slice(&s.tokens[cursor..span.start]);
                tags.extend_from_slice(&s.tags[cursor..span.start]);
                let pool = gaz.surfaces(span.etype);
                let surface = &pool[rng.gen_range(0..pool.len())];
                tokens.extend(surface.iter().cloned());
                tags.push(Tag::begin(span.etype));
                tags.extend(std::iter::repeat(Tag::inside(span.etype)).take(surface.len() - 1));
                cursor = span.end;
            }
            tokens.extend_from_slice(&s.tokens[cursor..]);
            tags.extend_from_slice(&s.tags[cursor..]);
            Sentence { tokens, tags }
        })
        .collect();
    Ok(Dataset::new(format!("{}+replaced", data.name), sentences))
}
