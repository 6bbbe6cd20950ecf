use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Catalog, Interaction, ItemRecord};
use crate::error::{Error, Result};

const TITLE_LEN: usize = 3;
const DESCRIPTION_LEN: usize = 12;
const TAGS_PER_ITEM: usize = 5;
const DEPARTMENTS: usize = 3;
/// Probability that a non-noise text token comes from the item's facet
/// slice rather than the whole topic vocabulary.
const FACET_TOKEN_SHARE: f64 = 0.5;
const FACET_TAG_SHARE: f64 = 0.6;

/// Parameters of the topic/facet generator.
///
/// Every item has one topic and one facet inside that topic. Text tokens
/// come from the topic vocabulary (biased toward the facet slice) or, with
/// probability `noise_rate`, from a shared noise vocabulary. Tags always
/// come from the topic's tag pool. Users prefer one topic and one facet;
/// each interaction hits the preferred topic with probability
/// `1 - noise_rate`, and within it the preferred facet with probability
/// `facet_affinity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_topics: usize,
    pub n_items: usize,
    pub n_users: usize,
    pub interactions_per_user: usize,
    pub vocab_per_topic: usize,
    pub tag_pool_per_topic: usize,
    pub noise_rate: f64,
    pub seed: u64,
    pub facets_per_topic: usize,
    pub facet_affinity: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_topics: 12,
            n_items: 600,
            n_users: 300,
            interactions_per_user: 10,
            vocab_per_topic: 40,
            tag_pool_per_topic: 20,
            noise_rate: 0.2,
            seed: 7,
            facets_per_topic: 5,
            facet_affinity: 0.7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_topics", self.n_topics),
            ("n_items", self.n_items),
            ("n_users", self.n_users),
            ("interactions_per_user", self.interactions_per_user),
            ("vocab_per_topic", self.vocab_per_topic),
            ("tag_pool_per_topic", self.tag_pool_per_topic),
            ("facets_per_topic", self.facets_per_topic),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synthetic {name} must be >= 1")));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!("noise_rate {} must be in [0,1)", self.noise_rate)));
        }
        if !(0.0..=1.0).contains(&self.facet_affinity) {
            return Err(Error::Config(format!("facet_affinity {} must be in [0,1]", self.facet_affinity)));
        }
        Ok(())
    }
}

/// Generated catalog plus the latent assignments, which only tests and
/// diagnostics look at.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub catalog: Catalog,
    /// Topic of each item, indexed by catalog position.
    pub item_topic: Vec<usize>,
    pub user_topic: BTreeMap<String, usize>,
}

struct Vocab {
    topics: usize,
    words: usize,
    tags: usize,
    facets: usize,
}

impl Vocab {
    fn word(&self, topic: usize, w: usize) -> String {
        format!("t{topic:02}w{w:02}")
    }

    fn noise_word(&self, k: usize) -> String {
        format!("nz{k:03}")
    }

    fn tag(&self, topic: usize, g: usize) -> String {
        format!("t{topic:02}g{g:02}")
    }

    /// Members of `0..n` assigned to `facet` (round-robin slicing).
    fn facet_slice(&self, n: usize, facet: usize) -> Vec<usize> {
        let slice: Vec<usize> = (0..n).filter(|k| k % self.facets == facet).collect();
        if slice.is_empty() {
            (0..n).collect()
        } else {
            slice
        }
    }

    fn text_token(&self, rng: &mut ChaCha8Rng, topic: usize, facet: usize, noise: f64) -> String {
        if rng.gen::<f64>() < noise {
            return self.noise_word(rng.gen_range(0..self.words * 4));
        }
        if rng.gen::<f64>() < FACET_TOKEN_SHARE {
            let slice = self.facet_slice(self.words, facet);
            self.word(topic, *slice.choose(rng).expect("facet slice is nonempty"))
        } else {
            self.word(topic, rng.gen_range(0..self.words))
        }
    }

    fn tags(&self, rng: &mut ChaCha8Rng, topic: usize, facet: usize) -> Vec<String> {
        let facet_tags = self.facet_slice(self.tags, facet);
        let want = TAGS_PER_ITEM.min(self.tags);
        let mut chosen: Vec<usize> = Vec::with_capacity(want);
        let mut guard = 0;
        while chosen.len() < want && guard < 1000 {
            guard += 1;
            let g = if rng.gen::<f64>() < FACET_TAG_SHARE {
                *facet_tags.choose(rng).expect("facet slice is nonempty")
            } else {
                rng.gen_range(0..self.tags)
            };
            if !chosen.contains(&g) {
                chosen.push(g);
            }
        }
        chosen.into_iter().map(|g| self.tag(topic, g)).collect()
    }
}

/// Deterministic in `config`: same config, same catalog.
pub fn generate_synthetic_corpus(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab = Vocab {
        topics: config.n_topics,
        words: config.vocab_per_topic,
        tags: config.tag_pool_per_topic,
        facets: config.facets_per_topic,
    };

    // Balanced topic and facet assignment, shuffled over item ids.
    let mut slots: Vec<(usize, usize)> = (0..config.n_items)
        .map(|i| (i % vocab.topics, (i / vocab.topics) % vocab.facets))
        .collect();
    slots.shuffle(&mut rng);

    let mut items = Vec::with_capacity(config.n_items);
    for (i, &(topic, facet)) in slots.iter().enumerate() {
        let title: Vec<String> =
            (0..TITLE_LEN).map(|_| vocab.text_token(&mut rng, topic, facet, config.noise_rate)).collect();
        let description: Vec<String> =
            (0..DESCRIPTION_LEN).map(|_| vocab.text_token(&mut rng, topic, facet, config.noise_rate)).collect();
        let category = format!("dept{}", topic % DEPARTMENTS);
        let tags = vocab.tags(&mut rng, topic, facet);
        items.push(ItemRecord::from_raw(
            format!("i{i:05}"),
            &title.join(" "),
            &category,
            &description.join(" "),
            &tags,
        ));
    }

    let mut by_topic: Vec<Vec<usize>> = alloc::vec![Vec::new(); vocab.topics];
    let mut by_facet: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, &(topic, facet)) in slots.iter().enumerate() {
        by_topic[topic].push(i);
        by_facet.entry((topic, facet)).or_default().push(i);
    }

    let users: Vec<(String, usize, usize)> = (0..config.n_users)
        .map(|u| (format!("u{u:05}"), rng.gen_range(0..vocab.topics), rng.gen_range(0..vocab.facets)))
        .collect();
    let mut consumed: Vec<BTreeSet<usize>> = alloc::vec![BTreeSet::new(); users.len()];
    let mut interactions = Vec::with_capacity(config.n_users * config.interactions_per_user);
    let mut order: Vec<usize> = (0..users.len()).collect();
    let mut timestamp = 0_i64;

    let pick = |rng: &mut ChaCha8Rng, candidates: &[usize], seen: &BTreeSet<usize>| -> Option<usize> {
        let open: Vec<usize> = candidates.iter().copied().filter(|c| !seen.contains(c)).collect();
        open.choose(rng).copied()
    };
    let everything: Vec<usize> = (0..config.n_items).collect();

    for _round in 0..config.interactions_per_user {
        order.shuffle(&mut rng);
        for &u in &order {
            let (_, topic, facet) = users[u];
            let seen = &consumed[u];
            let chosen = if rng.gen::<f64>() < config.noise_rate {
                pick(&mut rng, &everything, seen)
            } else {
                let facet_items = by_facet.get(&(topic, facet)).map_or(&[][..], Vec::as_slice);
                let in_facet = if rng.gen::<f64>() < config.facet_affinity {
                    pick(&mut rng, facet_items, seen)
                } else {
                    None
                };
                in_facet.or_else(|| pick(&mut rng, &by_topic[topic], seen))
            };
            let Some(item) = chosen.or_else(|| pick(&mut rng, &everything, seen)) else {
                continue;
            };
            consumed[u].insert(item);
            timestamp += 1;
            interactions.push(Interaction {
                user_id: users[u].0.clone(),
                item_id: items[item].item_id.clone(),
                timestamp,
            });
        }
    }

    let user_topic = users.iter().map(|(id, t, _)| (id.clone(), *t)).collect();
    let item_topic_by_id: BTreeMap<&str, usize> =
        items.iter().zip(&slots).map(|(it, &(t, _))| (it.item_id.as_str(), t)).collect();
    let catalog = Catalog::new(items.clone(), interactions)?;
    let item_topic = catalog.items().iter().map(|it| item_topic_by_id[it.item_id.as_str()]).collect();
    Ok(SyntheticCorpus { catalog, item_topic, user_topic })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig { n_items: 120, n_users: 40, interactions_per_user: 6, ..SyntheticConfig::default() }
    }

    #[test]
    fn same_seed_same_catalog() {
        let a = generate_synthetic_corpus(&small()).unwrap();
        let b = generate_synthetic_corpus(&small()).unwrap();
        assert_eq!(a.catalog, b.catalog);
    }

    #[test]
    fn different_seed_differs() {
        let a = generate_synthetic_corpus(&small()).unwrap();
        let b = generate_synthetic_corpus(&SyntheticConfig { seed: 99, ..small() }).unwrap();
        assert_ne!(a.catalog, b.catalog);
    }

    #[test]
    fn zero_noise_keeps_users_on_topic() {
        let corpus = generate_synthetic_corpus(&SyntheticConfig { noise_rate: 0.0, ..small() }).unwrap();
        for it in corpus.catalog.interactions() {
            let idx = corpus.catalog.lookup(&it.item_id).unwrap();
            assert_eq!(corpus.item_topic[idx.get()], corpus.user_topic[&it.user_id]);
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate_synthetic_corpus(&SyntheticConfig { n_topics: 0, ..small() }).is_err());
        assert!(generate_synthetic_corpus(&SyntheticConfig { noise_rate: 1.0, ..small() }).is_err());
    }

    #[test]
    fn tokens_are_normalized() {
        let corpus = generate_synthetic_corpus(&small()).unwrap();
        for item in corpus.catalog.items() {
            assert_eq!(item.image_tags.len(), TAGS_PER_ITEM);
            for tok in item.text_tokens() {
                assert_eq!(tok, &tok.to_lowercase());
            }
        }
    }
}
