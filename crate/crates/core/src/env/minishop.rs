//! Instruction-following shop: search a product type, inspect listed items
//! and buy one. The final purchase pays the fraction of requested attributes
//! (type, color, price band) that the item matches.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvConfig, Outcome, World};
use crate::trajectory::Termination;

pub(super) const MAX_ITEMS_PER_TYPE: usize = 4;

const TYPES: [&str; 4] = ["shirt", "shoe", "hat", "bag"];
const COLORS: [&str; 4] = ["red", "blue", "green", "black"];
const PRICES: [&str; 3] = ["cheap", "mid", "pricey"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct Product {
    kind: usize,
    color: usize,
    price: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Page {
    Search,
    Results { kind: usize },
    Item { kind: usize, slot: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(super) struct ShopWorld {
    want: Product,
    /// `catalog[kind][slot]`
    catalog: Vec<Vec<Product>>,
    page: Page,
}

fn slot_word(slot: usize) -> String {
    (slot + 1).to_string()
}

pub(super) fn vocab_words(config: &EnvConfig) -> Vec<String> {
    let mut words: Vec<String> = ["search", "click", "buy", "back"]
        .into_iter()
        .map(String::from)
        .collect();
    words.extend(TYPES.iter().chain(&COLORS).chain(&PRICES).map(|s| s.to_string()));
    words.extend((0..config.items_per_type).map(slot_word));
    words.extend(
        ["want", "|", "page", "results", "item", "invalid"]
            .into_iter()
            .map(String::from),
    );
    for slot in 0..config.items_per_type {
        words.extend(COLORS.iter().map(|c| format!("{}:{c}", slot + 1)));
    }
    words
}

impl ShopWorld {
    pub(super) fn new(config: &EnvConfig, task_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
        let want = Product {
            kind: rng.gen_range(0..TYPES.len()),
            color: rng.gen_range(0..COLORS.len()),
            price: rng.gen_range(0..PRICES.len()),
        };
        let mut catalog: Vec<Vec<Product>> = (0..TYPES.len())
            .map(|kind| {
                (0..config.items_per_type)
                    .map(|_| Product {
                        kind,
                        color: rng.gen_range(0..COLORS.len()),
                        price: rng.gen_range(0..PRICES.len()),
                    })
                    .collect()
            })
            .collect();
        // The requested product is always listed somewhere.
        let slots: Vec<usize> = (0..config.items_per_type).collect();
        let slot = *slots.choose(&mut rng).expect("items_per_type >= 1");
        catalog[want.kind][slot] = want;
        ShopWorld {
            want,
            catalog,
            page: Page::Search,
        }
    }

    fn score(&self, item: Product) -> (f64, bool) {
        let matches = usize::from(item.kind == self.want.kind)
            + usize::from(item.color == self.want.color)
            + usize::from(item.price == self.want.price);
        (matches as f64 / 3.0, matches == 3)
    }

    pub(super) fn observe(&self) -> String {
        let want = format!(
            "want {} {} {}",
            COLORS[self.want.color], TYPES[self.want.kind], PRICES[self.want.price]
        );
        match self.page {
            Page::Search => format!("{want} | page search"),
            Page::Results { kind } => {
                let listing: Vec<String> = self.catalog[kind]
                    .iter()
                    .enumerate()
                    .map(|(slot, p)| format!("{}:{}", slot + 1, COLORS[p.color]))
                    .collect();
                format!("{want} | page results {} | {}", TYPES[kind], listing.join(" "))
            }
            Page::Item { kind, slot } => {
                let p = self.catalog[kind][slot];
                format!(
                    "{want} | page item {} {} | {} {}",
                    TYPES[kind],
                    slot_word(slot),
                    COLORS[p.color],
                    PRICES[p.price]
                )
            }
        }
    }

    pub(super) fn commands(&self) -> Vec<String> {
        match self.page {
            Page::Search => TYPES.iter().map(|t| format!("search {t}")).collect(),
            Page::Results { kind } => {
                let n = self.catalog[kind].len();
                let mut out: Vec<String> =
                    (0..n).map(|s| format!("click {}", slot_word(s))).collect();
                out.extend((0..n).map(|s| format!("buy {}", slot_word(s))));
                out.push("back".into());
                out
            }
            Page::Item { .. } => vec!["buy".into(), "back".into()],
        }
    }

    pub(super) fn apply(&self, command: &str) -> Outcome {
        let mut next = self.clone();
        let words: Vec<&str> = command.split(' ').collect();
        let slot_arg = |w: &str| w.parse::<usize>().expect("legal slot") - 1;
        let purchase = match (self.page, words.as_slice()) {
            (Page::Search, ["search", t]) => {
                let kind = TYPES.iter().position(|x| x == t).expect("legal type");
                next.page = Page::Results { kind };
                None
            }
            (Page::Results { kind }, ["click", s]) => {
                next.page = Page::Item {
                    kind,
                    slot: slot_arg(s),
                };
                None
            }
            (Page::Results { kind }, ["buy", s]) => Some(self.catalog[kind][slot_arg(s)]),
            (Page::Results { .. }, ["back"]) => {
                next.page = Page::Search;
                None
            }
            (Page::Item { kind, slot }, ["buy"]) => Some(self.catalog[kind][slot]),
            (Page::Item { kind, .. }, ["back"]) => {
                next.page = Page::Results { kind };
                None
            }
            _ => unreachable!("illegal shop command {command:?}"),
        };
        match purchase {
            None => Outcome {
                world: World::MiniShop(next),
                reward: 0.0,
                terminal: None,
            },
            Some(item) => {
                let (score, exact) = self.score(item);
                Outcome {
                    world: World::MiniShop(next),
                    reward: score,
                    terminal: Some(if exact {
                        Termination::Success
                    } else {
                        Termination::Completed
                    }),
                }
            }
        }
    }
}
