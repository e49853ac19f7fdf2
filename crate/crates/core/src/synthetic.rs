//! Deterministic synthetic AS2 corpus over a small invented world.
//!
//! Each invented creature has a colour, a home, a diet and a size. A question
//! asks for one of these; its candidates are two correctly labelled
//! paraphrases of the fact plus incorrect sentences: other facts about the
//! same creature and the same kind of fact about other creatures. About one
//! question in ten has no correct candidate at all.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Candidate, CandidateSet, Dataset, Label, Question, Split};

const ONSETS: [&str; 10] = ["k", "l", "m", "r", "z", "t", "v", "n", "p", "s"];
const VOWELS: [&str; 5] = ["a", "o", "i", "u", "e"];
const CODAS: [&str; 4] = ["n", "r", "x", "th"];

const COLORS: [&str; 6] = ["red", "blue", "green", "yellow", "purple", "orange"];
const HOMES: [&str; 6] = ["forest", "desert", "ocean", "mountains", "river", "swamp"];
const FOODS: [&str; 6] = ["seeds", "fish", "leaves", "insects", "fruit", "grass"];
const SIZES: [&str; 4] = ["tiny", "small", "large", "huge"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Relation {
    Color,
    Home,
    Food,
    Size,
}

const RELATIONS: [Relation; 4] = [Relation::Color, Relation::Home, Relation::Food, Relation::Size];

struct Creature {
    name: String,
    color: &'static str,
    home: &'static str,
    food: &'static str,
    size: &'static str,
}

impl Creature {
    fn value(&self, r: Relation) -> &'static str {
        match r {
            Relation::Color => self.color,
            Relation::Home => self.home,
            Relation::Food => self.food,
            Relation::Size => self.size,
        }
    }
}

fn question(r: Relation, name: &str) -> String {
    match r {
        Relation::Color => format!("What color is the {name}?"),
        Relation::Home => format!("Where does the {name} live?"),
        Relation::Food => format!("What does the {name} eat?"),
        Relation::Size => format!("How big is the {name}?"),
    }
}

/// Two wordings of the same fact.
fn statements(r: Relation, name: &str, v: &str) -> [String; 2] {
    match r {
        Relation::Color => [format!("The {name} is {v}."), format!("The color of the {name} is {v}.")],
        Relation::Home => [
            format!("The {name} lives in the {v}."),
            format!("You can find the {name} in the {v}."),
        ],
        Relation::Food => [format!("The {name} eats {v}."), format!("The diet of the {name} is mostly {v}.")],
        Relation::Size => [
            format!("The {name} is a {v} animal."),
            format!("In size, the {name} is {v}."),
        ],
    }
}

fn other_value(r: Relation, not: &str, rng: &mut ChaCha8Rng) -> &'static str {
    let pool: &[&'static str] = match r {
        Relation::Color => &COLORS,
        Relation::Home => &HOMES,
        Relation::Food => &FOODS,
        Relation::Size => &SIZES,
    };
    loop {
        let v = pool.choose(rng).expect("nonempty pool");
        if *v != not {
            return v;
        }
    }
}

fn creatures(n: usize, rng: &mut ChaCha8Rng) -> Vec<Creature> {
    let mut names: Vec<String> = Vec::new();
    for o1 in ONSETS {
        for v1 in VOWELS {
            for o2 in ONSETS {
                for v2 in VOWELS {
                    for c in CODAS {
                        names.push(format!("{o1}{v1}{o2}{v2}{c}"));
                    }
                }
            }
        }
    }
    names.shuffle(rng);
    names
        .into_iter()
        .take(n)
        .map(|name| Creature {
            name,
            color: COLORS.choose(rng).expect("nonempty"),
            home: HOMES.choose(rng).expect("nonempty"),
            food: FOODS.choose(rng).expect("nonempty"),
            size: SIZES.choose(rng).expect("nonempty"),
        })
        .collect()
}

/// Size and seed of the corpus shipped in `data/synthetic_200.jsonl`.
pub const BUNDLED_QUESTIONS: usize = 200;
pub const BUNDLED_SEED: u64 = 20;

/// Builds `n_questions` entries named `synthetic`, deterministic in `seed`.
pub fn synthetic_dataset(n_questions: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = creatures(n_questions.div_ceil(RELATIONS.len()).max(2), &mut rng);
    let mut entries = Vec::with_capacity(n_questions);
    for i in 0..n_questions {
        let c = &world[i / RELATIONS.len()];
        let r = RELATIONS[i % RELATIONS.len()];
        let mut texts: Vec<(String, Label)> = Vec::new();
        let answerable = rng.random_range(0..10) != 0;
        if answerable {
            for s in statements(r, &c.name, c.value(r)) {
                texts.push((s, Label::Correct));
            }
        } else {
            // Right fact pattern, wrong value.
            let wrong = other_value(r, c.value(r), &mut rng);
            texts.push((statements(r, &c.name, wrong)[0].clone(), Label::Incorrect));
        }
        for &other in RELATIONS.iter().filter(|&&o| o != r) {
            let form = rng.random_range(0..2);
            texts.push((statements(other, &c.name, c.value(other))[form].clone(), Label::Incorrect));
        }
        for _ in 0..rng.random_range(1..=3) {
            let mut d = world.choose(&mut rng).expect("nonempty world");
            while d.name == c.name {
                d = world.choose(&mut rng).expect("nonempty world");
            }
            let form = rng.random_range(0..2);
            texts.push((statements(r, &d.name, d.value(r))[form].clone(), Label::Incorrect));
        }
        let mut seen = std::collections::HashSet::new();
        texts.retain(|(t, _)| seen.insert(t.clone()));
        texts.shuffle(&mut rng);
        let candidates = texts
            .into_iter()
            .enumerate()
            .map(|(j, (text, label))| Candidate::new(format!("c{}", j + 1), text, label))
            .collect();
        entries.push(CandidateSet {
            question: Question {
                id: format!("syn{:03}", i + 1),
                text: question(r, &c.name),
            },
            candidates,
            reference_answer: None,
        });
    }
    Dataset {
        name: "synthetic".into(),
        split: Split::Train,
        entries,
    }
}
