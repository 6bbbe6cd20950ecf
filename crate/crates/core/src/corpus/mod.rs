//! Catalogs, interaction logs, chronological splits and the item–item
//! co-occurrence graph.

mod synthetic;

pub use synthetic::{generate_synthetic_corpus, SyntheticConfig, SyntheticCorpus};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evidence channel of an item or episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
    Behavior,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Image, Modality::Behavior];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Behavior => "behavior",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "text" => Some(Modality::Text),
            "image" | "img" => Some(Modality::Image),
            "behavior" | "behaviour" | "beh" => Some(Modality::Behavior),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Index of an item inside a [`Catalog`]. Items are stored sorted by
/// `item_id`, so index order equals ascending id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemIdx(pub u32);

impl ItemIdx {
    #[inline]
    pub fn get(self) -> usize {
        self.0 as usize
    }
}

/// Lowercases and splits on every non-alphanumeric character, dropping
/// empty pieces.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn normalize_tag(tag: &str) -> Option<String> {
    let tag = tag.trim().to_lowercase();
    (!tag.is_empty()).then_some(tag)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub title: Vec<String>,
    pub category: Vec<String>,
    pub description: Vec<String>,
    /// Ordered by salience; an empty list means the item has no image.
    pub image_tags: Vec<String>,
    /// Filled in by [`Catalog::annotate_degrees`].
    #[serde(default)]
    pub graph_degree: u32,
}

impl ItemRecord {
    pub fn from_raw(
        item_id: impl Into<String>,
        title: &str,
        category: &str,
        description: &str,
        image_tags: &[String],
    ) -> Self {
        Self {
            item_id: item_id.into(),
            title: tokenize(title),
            category: tokenize(category),
            description: tokenize(description),
            image_tags: image_tags.iter().filter_map(|t| normalize_tag(t)).collect(),
            graph_degree: 0,
        }
    }

    /// Concatenated title, category and description tokens.
    pub fn text_tokens(&self) -> impl Iterator<Item = &String> {
        self.title.iter().chain(&self.category).chain(&self.description)
    }

    pub fn has_text(&self) -> bool {
        !(self.title.is_empty() && self.category.is_empty() && self.description.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    items: Vec<ItemRecord>,
    index: BTreeMap<String, ItemIdx>,
    users: BTreeSet<String>,
    interactions: Vec<Interaction>,
}

impl Catalog {
    /// Builds a catalog, sorting items by id and interactions by
    /// timestamp (stable, so equal timestamps keep input order).
    pub fn new(mut items: Vec<ItemRecord>, mut interactions: Vec<Interaction>) -> Result<Self> {
        items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        let mut index = BTreeMap::new();
        for (i, item) in items.iter().enumerate() {
            if index.insert(item.item_id.clone(), ItemIdx(i as u32)).is_some() {
                return Err(Error::Integrity(format!("duplicate item_id {:?}", item.item_id)));
            }
        }
        let mut users = BTreeSet::new();
        for it in &interactions {
            if !index.contains_key(&it.item_id) {
                return Err(Error::Integrity(format!(
                    "interaction of user {:?} references unknown item {:?}",
                    it.user_id, it.item_id
                )));
            }
            users.insert(it.user_id.clone());
        }
        interactions.sort_by_key(|it| it.timestamp);
        let mut seen = BTreeSet::new();
        for it in &interactions {
            if !seen.insert((it.user_id.as_str(), it.item_id.as_str(), it.timestamp)) {
                return Err(Error::Integrity(format!(
                    "duplicate interaction ({}, {}, {})",
                    it.user_id, it.item_id, it.timestamp
                )));
            }
        }
        Ok(Self { items, index, users, interactions })
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn item(&self, idx: ItemIdx) -> &ItemRecord {
        &self.items[idx.get()]
    }

    pub fn lookup(&self, item_id: &str) -> Option<ItemIdx> {
        self.index.get(item_id).copied()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn users(&self) -> &BTreeSet<String> {
        &self.users
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn annotate_degrees(&mut self, graph: &ItemGraph) {
        for (i, item) in self.items.iter_mut().enumerate() {
            item.graph_degree = graph.neighbors(ItemIdx(i as u32)).len() as u32;
        }
    }
}

/// Train/validation/test views over a time-sorted interaction list.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub train: &'a [Interaction],
    pub val: &'a [Interaction],
    pub test: &'a [Interaction],
}

/// Splits at `floor(f0 * N)` and `floor((f0 + f1) * N)` over the
/// catalog's time-sorted interactions.
pub fn chronological_split(catalog: &Catalog, fractions: [f64; 3]) -> Result<Split<'_>> {
    let all = catalog.interactions();
    let n = all.len();
    if n < 3 {
        return Err(Error::Config(format!("chronological split needs at least 3 interactions, got {n}")));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let cut = |f: f64| libm::floor(f * n as f64 + 1e-9) as usize;
    let train_end = cut(fractions[0]).min(n);
    let val_end = cut(fractions[0] + fractions[1]).clamp(train_end, n);
    Ok(Split { train: &all[..train_end], val: &all[train_end..val_end], test: &all[val_end..] })
}

/// Symmetric co-occurrence graph: the weight of `(i, j)` is the number of
/// distinct users who interacted with both items.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ItemGraph {
    adjacency: Vec<Vec<(ItemIdx, u32)>>,
}

impl ItemGraph {
    pub fn neighbors(&self, item: ItemIdx) -> &[(ItemIdx, u32)] {
        self.adjacency.get(item.get()).map_or(&[], Vec::as_slice)
    }

    pub fn weight(&self, a: ItemIdx, b: ItemIdx) -> u32 {
        let row = self.neighbors(a);
        row.binary_search_by_key(&b, |&(n, _)| n).map_or(0, |pos| row[pos].1)
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.iter().all(Vec::is_empty)
    }

    /// Map view `item_id -> [(neighbor_id, weight)]` over non-isolated items.
    pub fn to_id_map(&self, catalog: &Catalog) -> BTreeMap<String, Vec<(String, u32)>> {
        self.adjacency
            .iter()
            .enumerate()
            .filter(|(_, row)| !row.is_empty())
            .map(|(i, row)| {
                let id = catalog.item(ItemIdx(i as u32)).item_id.to_string();
                let row = row.iter().map(|&(n, w)| (catalog.item(n).item_id.clone(), w)).collect();
                (id, row)
            })
            .collect()
    }
}

pub fn build_item_graph(catalog: &Catalog, train: &[Interaction]) -> ItemGraph {
    let mut baskets: BTreeMap<&str, BTreeSet<ItemIdx>> = BTreeMap::new();
    for it in train {
        if let Some(idx) = catalog.lookup(&it.item_id) {
            baskets.entry(it.user_id.as_str()).or_default().insert(idx);
        }
    }
    let mut pairs: BTreeMap<(ItemIdx, ItemIdx), u32> = BTreeMap::new();
    for basket in baskets.values() {
        let items: Vec<ItemIdx> = basket.iter().copied().collect();
        for (k, &a) in items.iter().enumerate() {
            for &b in &items[k + 1..] {
                *pairs.entry((a, b)).or_default() += 1;
            }
        }
    }
    let mut adjacency = alloc::vec![Vec::new(); catalog.len()];
    for (&(a, b), &w) in &pairs {
        adjacency[a.get()].push((b, w));
        adjacency[b.get()].push((a, w));
    }
    for row in &mut adjacency {
        row.sort_unstable_by_key(|&(n, _)| n);
    }
    ItemGraph { adjacency }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn item(id: &str) -> ItemRecord {
        ItemRecord::from_raw(id, "A Title", "Cat", "some description", &[])
    }

    fn inter(u: &str, i: &str, t: i64) -> Interaction {
        Interaction { user_id: u.into(), item_id: i.into(), timestamp: t }
    }

    #[test]
    fn tokenization_lowercases_and_drops_empties() {
        assert_eq!(tokenize("Red  Ball--XL, 2x!"), vec!["red", "ball", "xl", "2x"]);
        assert!(tokenize(" -- ").is_empty());
    }

    #[test]
    fn unknown_item_is_an_integrity_error() {
        let err = Catalog::new(vec![item("a")], vec![inter("u", "x9", 1)]).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn duplicate_item_id_rejected() {
        assert!(Catalog::new(vec![item("a"), item("a")], vec![]).is_err());
    }

    #[test]
    fn split_of_ten() {
        let items = vec![item("a")];
        let inters = (1..=10).map(|t| inter("u", "a", t)).collect();
        let cat = Catalog::new(items, inters).unwrap();
        let s = chronological_split(&cat, [0.8, 0.1, 0.1]).unwrap();
        let ts = |xs: &[Interaction]| xs.iter().map(|i| i.timestamp).collect::<Vec<_>>();
        assert_eq!(ts(s.train), (1..=8).collect::<Vec<_>>());
        assert_eq!(ts(s.val), vec![9]);
        assert_eq!(ts(s.test), vec![10]);
    }

    #[test]
    fn split_of_seven_uses_floor() {
        let inters = (1..=7).map(|t| inter("u", "a", t)).collect();
        let cat = Catalog::new(vec![item("a")], inters).unwrap();
        let s = chronological_split(&cat, [0.8, 0.1, 0.1]).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (5, 1, 1));
    }

    #[test]
    fn equal_timestamps_keep_input_order() {
        let inters: Vec<_> = (0..10).map(|k| inter(&format!("u{k}"), "a", 5)).collect();
        let cat = Catalog::new(vec![item("a")], inters.clone()).unwrap();
        let s = chronological_split(&cat, [0.8, 0.1, 0.1]).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert_eq!(cat.interactions(), inters.as_slice());
    }

    #[test]
    fn too_few_interactions() {
        let cat = Catalog::new(vec![item("a")], vec![inter("u", "a", 1)]).unwrap();
        assert!(matches!(chronological_split(&cat, [0.8, 0.1, 0.1]), Err(Error::Config(_))));
    }

    #[test]
    fn graph_counts_distinct_users() {
        let cat = Catalog::new(
            vec![item("i1"), item("i2")],
            vec![
                inter("A", "i1", 1),
                inter("A", "i2", 2),
                inter("A", "i2", 3),
                inter("B", "i1", 4),
                inter("B", "i2", 5),
            ],
        )
        .unwrap();
        let g = build_item_graph(&cat, cat.interactions());
        let (i1, i2) = (cat.lookup("i1").unwrap(), cat.lookup("i2").unwrap());
        assert_eq!(g.weight(i1, i2), 2);
        assert_eq!(g.weight(i2, i1), 2);
        assert_eq!(g.weight(i1, i1), 0);
    }

    #[test]
    fn single_user_single_item_graph_is_empty() {
        let cat = Catalog::new(vec![item("i1")], vec![inter("A", "i1", 1)]).unwrap();
        assert!(build_item_graph(&cat, cat.interactions()).is_empty());
    }
}
