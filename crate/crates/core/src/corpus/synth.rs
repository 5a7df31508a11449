//! Deterministic synthetic world generator.
//!
//! Builds a small linked encyclopedia of countries, cities, people, and
//! films, plus a labeled claim dataset over it. Every supported or refuted
//! claim is grounded in page sentences; two-sentence claims require a
//! hyperlink hop from the sentence that introduces the bridge entity.
//! Output is fully determined by the seed.

use super::{Claim, Corpus, CorpusError, Dataset, Document, Label, SentenceRef};
use crate::tensorkit::Rng;
use std::collections::BTreeMap;
use std::collections::BTreeSet;

// ── Name material ────────────────────────────────────────────────────────────

const FIRST_SYLLABLES: [&str; 24] = [
    "Bal", "Cor", "Dan", "Fen", "Gar", "Hol", "Jas", "Kel", "Lor", "Mar", "Nor", "Pel", "Quin",
    "Ros", "Sal", "Tam", "Ul", "Ver", "Wen", "Xan", "Yor", "Zel", "Bren", "Cal",
];

const SECOND_SYLLABLES: [&str; 12] = [
    "dor", "ia", "mar", "eth", "on", "ara", "is", "ov", "une", "ek", "ast", "il",
];

/// Region names are mentioned on country pages but have no pages of their
/// own, so claims about them exercise the missing-title path downstream.
const REGIONS: [&str; 4] = ["Avaria", "Borealis", "Cantara", "Dorune"];

fn year(idx: usize) -> u32 {
    1950 + 3 * idx as u32
}

const N_YEARS: usize = 24;

/// Unique pronounceable names: all two-syllable combinations, extended with
/// three-syllable ones when the budget requires, shuffled once by the rng.
fn name_pool(rng: &mut Rng, needed: usize) -> Result<Vec<String>, CorpusError> {
    let mut pool: Vec<String> = Vec::new();
    for a in FIRST_SYLLABLES {
        for b in SECOND_SYLLABLES {
            pool.push(format!("{a}{b}"));
        }
    }
    if needed > pool.len() {
        for a in FIRST_SYLLABLES {
            for b in SECOND_SYLLABLES {
                for c in SECOND_SYLLABLES {
                    pool.push(format!("{a}{b}{c}"));
                }
            }
        }
    }
    if needed > pool.len() {
        return Err(CorpusError::Invalid(format!(
            "entity budget {needed} exceeds the name pool ({})",
            pool.len()
        )));
    }
    rng.shuffle(&mut pool);
    Ok(pool)
}

// ── World model ──────────────────────────────────────────────────────────────

struct World {
    countries: Vec<String>,
    cities: Vec<String>,
    persons: Vec<String>,
    films: Vec<String>,
    /// City i lies in country `city_country[i]`.
    city_country: Vec<usize>,
    /// Person i was born in city `person_city[i]`.
    person_city: Vec<usize>,
    /// Country i belongs to region `country_region[i]`.
    country_region: Vec<usize>,
    /// Year-pool indices for film releases and city foundings.
    film_year: Vec<usize>,
    city_year: Vec<usize>,
}

impl World {
    /// Films and persons are counted equally, so film i is directed by
    /// person i.
    fn director(&self, film: usize) -> usize {
        film
    }

    fn build(rng: &mut Rng, n_entities: usize) -> Result<World, CorpusError> {
        let base = n_entities / 4;
        let n_country = n_entities - 3 * base;
        let needed = n_country + base + base + 2 * base;
        let mut pool = name_pool(rng, needed)?;
        let mut take = || pool.pop().expect("pool sized above");
        let countries: Vec<String> = (0..n_country).map(|_| take()).collect();
        let cities: Vec<String> = (0..base).map(|_| take()).collect();
        let persons: Vec<String> = (0..base).map(|_| format!("{} {}", take(), take())).collect();
        let films: Vec<String> = (0..base).map(|_| take()).collect();
        let city_country: Vec<usize> = (0..base).map(|i| i % n_country).collect();
        let person_city: Vec<usize> = (0..base).map(|i| i % base).collect();
        let country_region: Vec<usize> = (0..n_country).map(|i| i % REGIONS.len()).collect();
        let film_year: Vec<usize> = (0..base).map(|_| rng.below(N_YEARS)).collect();
        let city_year: Vec<usize> = (0..base).map(|_| rng.below(N_YEARS)).collect();
        Ok(World {
            countries,
            cities,
            persons,
            films,
            city_country,
            person_city,
            country_region,
            film_year,
            city_year,
        })
    }

    fn pages(&self) -> Vec<Document> {
        let mut docs = Vec::new();
        for (k, name) in self.countries.iter().enumerate() {
            docs.push(Document {
                page_id: name.clone(),
                lines: vec![
                    format!("{name} is in the region of {}.", REGIONS[self.country_region[k]]),
                    format!("The flag of {name} shows a golden sun."),
                ],
                links: BTreeMap::new(),
            });
        }
        for (c, name) in self.cities.iter().enumerate() {
            let country = &self.countries[self.city_country[c]];
            let mut links = BTreeMap::new();
            links.insert(0, vec![country.clone()]);
            docs.push(Document {
                page_id: name.clone(),
                lines: vec![
                    format!("{name} is a city in {country}."),
                    format!("{name} was founded in {}.", year(self.city_year[c])),
                ],
                links,
            });
        }
        for (p, name) in self.persons.iter().enumerate() {
            let city = &self.cities[self.person_city[p]];
            let film = &self.films[p];
            let mut links = BTreeMap::new();
            links.insert(0, vec![city.clone()]);
            links.insert(1, vec![film.clone()]);
            docs.push(Document {
                page_id: name.clone(),
                lines: vec![
                    format!("{name} was born in {city}."),
                    format!("{name} directed the film {film}."),
                ],
                links,
            });
        }
        for (f, name) in self.films.iter().enumerate() {
            let person = &self.persons[self.director(f)];
            let mut links = BTreeMap::new();
            links.insert(1, vec![person.clone()]);
            docs.push(Document {
                page_id: name.clone(),
                lines: vec![
                    format!("{name} was released in {}.", year(self.film_year[f])),
                    format!("{name} was directed by {person}."),
                ],
                links,
            });
        }
        docs
    }
}

// ── Claim generation ─────────────────────────────────────────────────────────

/// One random index from `0..len` excluding `not`; `None` when there is no
/// alternative to pick.
fn pick_other(rng: &mut Rng, len: usize, not: usize) -> Option<usize> {
    if len < 2 {
        return None;
    }
    let j = rng.below(len - 1);
    Some(if j >= not { j + 1 } else { j })
}

fn sref(page: &str, line: usize) -> SentenceRef {
    SentenceRef::new(page, line)
}

/// A candidate claim before dedup: text plus its gold evidence sets.
type Draft = (String, Vec<Vec<SentenceRef>>);

fn draft_supported(rng: &mut Rng, w: &World, multihop: bool) -> Option<Draft> {
    let n = w.cities.len();
    if multihop {
        match rng.below(3) {
            0 => {
                let p = rng.below(n);
                let c = w.person_city[p];
                let k = w.city_country[c];
                Some((
                    format!("{} was born in a city in {}.", w.persons[p], w.countries[k]),
                    vec![vec![sref(&w.persons[p], 0), sref(&w.cities[c], 0)]],
                ))
            }
            1 => {
                let p = rng.below(n);
                Some((
                    format!(
                        "{} directed a film released in {}.",
                        w.persons[p],
                        year(w.film_year[p])
                    ),
                    vec![vec![sref(&w.persons[p], 1), sref(&w.films[p], 0)]],
                ))
            }
            _ => {
                let f = rng.below(n);
                let p = w.director(f);
                Some((
                    format!(
                        "{} was directed by a person born in {}.",
                        w.films[f], w.cities[w.person_city[p]]
                    ),
                    vec![vec![sref(&w.films[f], 1), sref(&w.persons[p], 0)]],
                ))
            }
        }
    } else {
        match rng.below(6) {
            0 => {
                let f = rng.below(n);
                Some((
                    format!("{} was released in {}.", w.films[f], year(w.film_year[f])),
                    vec![vec![sref(&w.films[f], 0)]],
                ))
            }
            1 => {
                let f = rng.below(n);
                Some((
                    format!("{} was directed by {}.", w.films[f], w.persons[w.director(f)]),
                    vec![vec![sref(&w.films[f], 1)]],
                ))
            }
            2 => {
                let c = rng.below(n);
                Some((
                    format!("{} is a city in {}.", w.cities[c], w.countries[w.city_country[c]]),
                    vec![vec![sref(&w.cities[c], 0)]],
                ))
            }
            3 => {
                let p = rng.below(n);
                Some((
                    format!("{} was born in {}.", w.persons[p], w.cities[w.person_city[p]]),
                    vec![vec![sref(&w.persons[p], 0)]],
                ))
            }
            4 => {
                let c = rng.below(n);
                Some((
                    format!("{} was founded in {}.", w.cities[c], year(w.city_year[c])),
                    vec![vec![sref(&w.cities[c], 1)]],
                ))
            }
            _ => {
                let k = rng.below(w.countries.len());
                Some((
                    format!(
                        "{} is in the region of {}.",
                        w.countries[k], REGIONS[w.country_region[k]]
                    ),
                    vec![vec![sref(&w.countries[k], 0)]],
                ))
            }
        }
    }
}

/// Refuted drafts reuse the supported templates with exactly one slot
/// swapped for a wrong value of the same kind.
fn draft_refuted(rng: &mut Rng, w: &World, multihop: bool) -> Option<Draft> {
    let n = w.cities.len();
    if multihop {
        match rng.below(3) {
            0 => {
                let p = rng.below(n);
                let c = w.person_city[p];
                let k = pick_other(rng, w.countries.len(), w.city_country[c])?;
                Some((
                    format!("{} was born in a city in {}.", w.persons[p], w.countries[k]),
                    vec![vec![sref(&w.persons[p], 0), sref(&w.cities[c], 0)]],
                ))
            }
            1 => {
                let p = rng.below(n);
                let y = pick_other(rng, N_YEARS, w.film_year[p])?;
                Some((
                    format!("{} directed a film released in {}.", w.persons[p], year(y)),
                    vec![vec![sref(&w.persons[p], 1), sref(&w.films[p], 0)]],
                ))
            }
            _ => {
                let f = rng.below(n);
                let p = w.director(f);
                let c = pick_other(rng, n, w.person_city[p])?;
                Some((
                    format!(
                        "{} was directed by a person born in {}.",
                        w.films[f], w.cities[c]
                    ),
                    vec![vec![sref(&w.films[f], 1), sref(&w.persons[p], 0)]],
                ))
            }
        }
    } else {
        match rng.below(6) {
            0 => {
                let f = rng.below(n);
                let y = pick_other(rng, N_YEARS, w.film_year[f])?;
                Some((
                    format!("{} was released in {}.", w.films[f], year(y)),
                    vec![vec![sref(&w.films[f], 0)]],
                ))
            }
            1 => {
                let f = rng.below(n);
                let p = pick_other(rng, n, w.director(f))?;
                Some((
                    format!("{} was directed by {}.", w.films[f], w.persons[p]),
                    vec![vec![sref(&w.films[f], 1)]],
                ))
            }
            2 => {
                let c = rng.below(n);
                let k = pick_other(rng, w.countries.len(), w.city_country[c])?;
                Some((
                    format!("{} is a city in {}.", w.cities[c], w.countries[k]),
                    vec![vec![sref(&w.cities[c], 0)]],
                ))
            }
            3 => {
                let p = rng.below(n);
                let c = pick_other(rng, n, w.person_city[p])?;
                Some((
                    format!("{} was born in {}.", w.persons[p], w.cities[c]),
                    vec![vec![sref(&w.persons[p], 0)]],
                ))
            }
            4 => {
                let c = rng.below(n);
                let y = pick_other(rng, N_YEARS, w.city_year[c])?;
                Some((
                    format!("{} was founded in {}.", w.cities[c], year(y)),
                    vec![vec![sref(&w.cities[c], 1)]],
                ))
            }
            _ => {
                let k = rng.below(w.countries.len());
                let r = pick_other(rng, REGIONS.len(), w.country_region[k])?;
                Some((
                    format!("{} is in the region of {}.", w.countries[k], REGIONS[r]),
                    vec![vec![sref(&w.countries[k], 0)]],
                ))
            }
        }
    }
}

/// Claims no page can settle; they still mention real entities so document
/// retrieval has something to find.
fn draft_nei(rng: &mut Rng, w: &World) -> Option<Draft> {
    let n = w.cities.len();
    let text = match rng.below(4) {
        0 => {
            let f = rng.below(n);
            let c = rng.below(n);
            format!("{} was filmed in {}.", w.films[f], w.cities[c])
        }
        1 => {
            let p = rng.below(n);
            let k = rng.below(w.countries.len());
            format!("{} studied in {}.", w.persons[p], w.countries[k])
        }
        2 => {
            let c = rng.below(n);
            format!("{} hosts an annual festival.", w.cities[c])
        }
        _ => {
            let k = rng.below(w.countries.len());
            format!("{} exports silver and timber.", w.countries[k])
        }
    };
    Some((text, Vec::new()))
}

// ── Entry point ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthStats {
    pub pages: usize,
    pub train_claims: usize,
    pub dev_claims: usize,
    pub multihop_claims: usize,
}

fn round_count(fraction: f64, total: usize) -> usize {
    (fraction * total as f64 + 0.5).floor() as usize
}

/// Generate a linked corpus of `n_entities` pages and `n_claims` labeled
/// claims, split into train and dev. Labels rotate supported → refuted →
/// not-enough-info so counts stay within one of each other; within the
/// supported and refuted classes, `multihop_fraction` of the claims need a
/// two-sentence evidence set. Every sixth claim of each class lands in dev.
/// The same seed always yields byte-identical output.
pub fn synth_corpus(
    n_entities: usize,
    n_claims: usize,
    multihop_fraction: f64,
    seed: u64,
) -> Result<(Corpus, Dataset, Dataset, SynthStats), CorpusError> {
    if n_entities < 4 {
        return Err(CorpusError::Invalid(format!(
            "need at least 4 entities (one per kind), got {n_entities}"
        )));
    }
    if !(0.0..=1.0).contains(&multihop_fraction) {
        return Err(CorpusError::Invalid(format!(
            "multihop fraction must lie in [0, 1], got {multihop_fraction}"
        )));
    }
    let mut rng = Rng::for_stream(seed, "synth-world");
    let world = World::build(&mut rng, n_entities)?;

    let mut corpus = Corpus::new();
    for doc in world.pages() {
        if !corpus.insert(doc) {
            return Err(CorpusError::Invalid(
                "generated entity names collided".to_string(),
            ));
        }
    }

    // Per-class totals under strict rotation (class 0 = supported claims).
    let class_total = |c: usize| (n_claims + 2 - c) / 3;
    let multihop_target = [
        round_count(multihop_fraction, class_total(0)),
        round_count(multihop_fraction, class_total(1)),
        0,
    ];

    let mut used_texts: BTreeSet<String> = BTreeSet::new();
    let mut train = Vec::new();
    let mut dev = Vec::new();
    let mut class_members = [0usize; 3];
    let mut multihop_claims = 0usize;
    for claim_id in 0..n_claims as u64 {
        let class = (claim_id % 3) as usize;
        let member = class_members[class];
        class_members[class] += 1;
        let multihop = member < multihop_target[class];
        let mut accepted = None;
        for _ in 0..100 {
            let draft = match class {
                0 => draft_supported(&mut rng, &world, multihop),
                1 => draft_refuted(&mut rng, &world, multihop),
                _ => draft_nei(&mut rng, &world),
            };
            if let Some((text, gold)) = draft {
                if used_texts.insert(text.clone()) {
                    accepted = Some((text, gold));
                    break;
                }
            }
        }
        let (text, gold) = accepted.ok_or_else(|| {
            CorpusError::Invalid(format!(
                "could not draft a fresh claim after 100 tries (claim {claim_id}); \
                 the entity pool is too small for the requested claim count"
            ))
        })?;
        if multihop {
            multihop_claims += 1;
        }
        let label = Label::from_class_index(class).expect("class in 0..3");
        let claim = Claim::new(claim_id, text, label, gold)?;
        if member % 6 == 5 {
            dev.push(claim);
        } else {
            train.push(claim);
        }
    }

    let stats = SynthStats {
        pages: corpus.len(),
        train_claims: train.len(),
        dev_claims: dev.len(),
        multihop_claims,
    };
    let train = Dataset::new("train", train)?;
    let dev = Dataset::new("dev", dev)?;
    Ok((corpus, train, dev, stats))
}
