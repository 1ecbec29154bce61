//! Seeded simulator for multibotwoz-style corpora.
//!
//! The released corpus behind the published measurements is not
//! redistributable, so the toolkit ships a generator that reproduces its
//! structure instead: one user and six travel-service bots, user/bot
//! alternation with no bot ever following another bot, service runs with
//! occasional handoffs, name mentions, topical utterance text, and a mild
//! behavioral drift between the leading and trailing dialogues (the two
//! ends of a chronological split of collected data do not behave
//! identically). Every draw comes from one seed, so a given seed always
//! yields byte-identical corpora.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{extract_mentions, AgentId, Corpus, Dialogue, Inventory, Role, Utterance};

pub const USER: &str = "user";
pub const BOTS: [&str; 6] = [
    "attraction_bot",
    "hotel_bot",
    "restaurant_bot",
    "taxi_bot",
    "train_bot",
    "travel_bot",
];

const ATTRACTION: usize = 0;
const HOTEL: usize = 1;
const RESTAURANT: usize = 2;
const TAXI: usize = 3;
const TRAIN: usize = 4;
const TRAVEL: usize = 5;

/// Generator parameters. The defaults are calibrated so the standard
/// pipeline (70/30 split, window-2 transition model, the stock classifier
/// settings) lands on the reference corpus statistics and accuracies.
#[derive(Debug, Clone)]
pub struct SynthParams {
    pub dialogues: usize,
    pub utterances: usize,
    /// Fraction of dialogues that end with a closing user turn.
    pub trailing_user_rate: f64,
    /// Boundary between the leading (training) and trailing (test) portions
    /// for the behavioral drift.
    pub train_fraction: f64,
    /// Per-bot probability that the next reply comes from the same bot,
    /// leading portion.
    pub stay_train: [f64; 6],
    /// Same, trailing portion.
    pub stay_test: [f64; 6],
    /// First-bot selection weights.
    pub first_bot: [f64; 6],
    /// Handoff target weights per source bot, leading portion.
    pub switch_train: [[f64; 6]; 6],
    /// Same, trailing portion.
    pub switch_test: [[f64; 6]; 6],
    /// Mention probability of the stimulus by slot kind.
    pub mention_first: f64,
    pub mention_switch: f64,
    pub mention_stay: f64,
    /// Probability that a mention names a different bot than the replier.
    pub mention_mismatch: f64,
    /// Probability that a no-mention stimulus carries the replier's topic
    /// words, by slot kind. Stay slots distinguish the mainline services
    /// from the meta services (taxi, travel), whose follow-ups stay topical.
    pub reveal_first: f64,
    pub reveal_switch: f64,
    pub reveal_stay_main: f64,
    pub reveal_stay_meta: f64,
    /// Probability of injecting another service's topic words.
    pub confusion: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        let mut switch_train = [[0.0; 6]; 6];
        let mut switch_test = [[0.0; 6]; 6];
        // Handoffs from the four mainline services spread over the other
        // mainline services with a slice for the two meta services.
        for src in [ATTRACTION, HOTEL, RESTAURANT, TRAIN] {
            let mut w = [0.21, 0.21, 0.21, 0.09, 0.21, 0.21];
            w[src] = 0.0;
            switch_train[src] = w;
            switch_test[src] = w;
        }
        // In the leading dialogues the meta services hand off immediately;
        // in the trailing ones they hold the floor like everyone else.
        switch_train[TAXI] = [0.10, 0.10, 0.10, 0.0, 0.15, 0.55];
        switch_test[TAXI] = [0.24, 0.24, 0.24, 0.0, 0.24, 0.04];
        switch_train[TRAVEL] = [0.15, 0.15, 0.15, 0.0, 0.55, 0.0];
        switch_test[TRAVEL] = [0.30, 0.30, 0.28, 0.08, 0.04, 0.0];

        SynthParams {
            dialogues: 6138,
            utterances: 99_553,
            trailing_user_rate: 0.049,
            train_fraction: 0.7,
            stay_train: [0.857, 0.857, 0.857, 0.25, 0.857, 0.22],
            stay_test: [0.857, 0.857, 0.857, 0.85, 0.857, 0.80],
            first_bot: [0.21, 0.24, 0.24, 0.0, 0.31, 0.0],
            switch_train,
            switch_test,
            mention_first: 0.60,
            mention_switch: 0.50,
            mention_stay: 0.80,
            mention_mismatch: 0.10,
            reveal_first: 0.55,
            reveal_switch: 0.45,
            reveal_stay_main: 0.30,
            reveal_stay_meta: 0.95,
            confusion: 0.08,
        }
    }
}

/// Topic lexicons, one per bot in [`BOTS`] order.
const TOPICS: [&[&str]; 6] = [
    &[
        "museum",
        "college",
        "park",
        "gallery",
        "cinema",
        "architecture",
        "theatre",
        "boat",
        "nightclub",
        "attraction",
        "entrance",
        "exhibit",
        "tour",
        "sights",
        "concert",
        "pool",
        "visit",
        "open",
        "fun",
    ],
    &[
        "hotel",
        "room",
        "guesthouse",
        "night",
        "stay",
        "parking",
        "wifi",
        "star",
        "bed",
        "breakfast",
        "cheap",
        "expensive",
        "north",
        "south",
        "lodge",
        "double",
        "single",
        "reservation",
        "nights",
    ],
    &[
        "restaurant",
        "food",
        "table",
        "menu",
        "dinner",
        "lunch",
        "italian",
        "chinese",
        "indian",
        "curry",
        "pizza",
        "dish",
        "eat",
        "cuisine",
        "centre",
        "moderately",
        "priced",
        "meal",
        "plates",
    ],
    &[
        "taxi", "car", "cab", "pickup", "driver", "ride", "contact", "yellow", "white", "phone",
        "depart", "dropoff", "vehicle", "honda", "toyota", "lift",
    ],
    &[
        "train",
        "ticket",
        "departure",
        "arrive",
        "station",
        "leaves",
        "platform",
        "cambridge",
        "london",
        "saturday",
        "tuesday",
        "travel",
        "fare",
        "seats",
        "railway",
        "schedule",
    ],
    &[
        "trip",
        "plan",
        "itinerary",
        "recommend",
        "options",
        "arrange",
        "package",
        "summary",
        "coordinate",
        "overview",
        "suggestions",
        "organize",
        "anything",
        "else",
        "assist",
    ],
];

const USER_WORDS: &[&str] = &[
    "i", "need", "a", "the", "please", "can", "you", "me", "find", "want", "would", "like",
    "looking", "for", "book", "my", "we", "about", "what", "is", "there", "do", "have", "am",
    "get", "some", "how", "much", "that", "one", "yes", "thanks", "thank", "good", "great", "it",
    "should", "be", "on", "in", "at", "of", "to", "and", "friend", "help", "with",
];

const BOT_WORDS: &[&str] = &[
    "here",
    "are",
    "available",
    "found",
    "booked",
    "sure",
    "your",
    "reference",
    "number",
    "there",
    "options",
    "matching",
    "request",
    "confirmed",
    "details",
    "anything",
    "else",
    "welcome",
    "glad",
    "happy",
    "certainly",
    "several",
    "results",
    "located",
    "offers",
    "costs",
    "includes",
    "successful",
    "arranged",
    "noted",
    "listed",
    "provided",
    "ready",
    "done",
];

const CLOSING_WORDS: &[&str] = &[
    "thanks",
    "thank",
    "you",
    "that",
    "is",
    "all",
    "goodbye",
    "bye",
    "great",
    "perfect",
    "appreciate",
    "the",
    "help",
    "nothing",
    "else",
    "today",
    "cheers",
];

struct TextGen<'a> {
    params: &'a SynthParams,
}

impl TextGen<'_> {
    fn pick<'w>(rng: &mut ChaCha8Rng, words: &[&'w str], count: usize) -> Vec<&'w str> {
        (0..count)
            .map(|_| words[rng.random_range(0..words.len())])
            .collect()
    }

    /// User stimulus ahead of a reply from `replier`.
    fn stimulus(
        &self,
        rng: &mut ChaCha8Rng,
        replier: usize,
        kind: SlotKind,
        mention_of: Option<usize>,
    ) -> String {
        let target_len = rng.random_range(9..=17);
        let mut tokens: Vec<String> = Vec::with_capacity(target_len);
        if let Some(m) = mention_of {
            tokens.push(BOTS[m].to_string());
        }
        let reveal_p = match kind {
            SlotKind::First => self.params.reveal_first,
            SlotKind::Switch => self.params.reveal_switch,
            SlotKind::Stay if matches!(replier, TAXI | TRAVEL) => self.params.reveal_stay_meta,
            SlotKind::Stay => self.params.reveal_stay_main,
        };
        // a mentioning stimulus still talks about the topic it mentions
        let reveal_topic = mention_of.unwrap_or(replier);
        if mention_of.is_some() || rng.random_bool(reveal_p) {
            let n = rng.random_range(2..=3);
            for w in Self::pick(rng, TOPICS[reveal_topic], n) {
                tokens.push(w.to_string());
            }
        }
        if rng.random_bool(self.params.confusion) {
            let other = rng.random_range(0..6);
            let n = rng.random_range(1..=2);
            for w in Self::pick(rng, TOPICS[other], n) {
                tokens.push(w.to_string());
            }
        }
        while tokens.len() < target_len {
            tokens.push(USER_WORDS[rng.random_range(0..USER_WORDS.len())].to_string());
        }
        tokens.shuffle(rng);
        tokens.join(" ")
    }

    fn reply(&self, rng: &mut ChaCha8Rng, bot: usize) -> String {
        let target_len = rng.random_range(9..=17);
        let mut tokens: Vec<String> = Vec::with_capacity(target_len);
        let n = rng.random_range(2..=4);
        for w in Self::pick(rng, TOPICS[bot], n) {
            tokens.push(w.to_string());
        }
        while tokens.len() < target_len {
            tokens.push(BOT_WORDS[rng.random_range(0..BOT_WORDS.len())].to_string());
        }
        tokens.shuffle(rng);
        tokens.join(" ")
    }

    fn closing(&self, rng: &mut ChaCha8Rng) -> String {
        let target_len = rng.random_range(9..=17);
        let tokens = Self::pick(rng, CLOSING_WORDS, target_len);
        tokens.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SlotKind {
    First,
    Switch,
    Stay,
}

fn weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if draw < *w {
            return i;
        }
        draw -= w;
    }
    weights.len() - 1
}

/// Generate a corpus. Identical `(params, seed)` pairs yield identical
/// corpora.
pub fn synth_corpus(params: &SynthParams, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = TextGen { params };

    // Plan dialogue shapes: bot-turn counts and trailing-user flags, then
    // adjust to land exactly on the utterance budget.
    let mut bot_turns: Vec<usize> = Vec::with_capacity(params.dialogues);
    let mut trailing: Vec<bool> = Vec::with_capacity(params.dialogues);
    for _ in 0..params.dialogues {
        let r: f64 = rng.random();
        let b = if r < 0.12 {
            rng.random_range(3..=5)
        } else if r < 0.88 {
            rng.random_range(5..=11)
        } else {
            rng.random_range(11..=15)
        };
        bot_turns.push(b);
        trailing.push(rng.random_bool(params.trailing_user_rate));
    }
    // Parity: total = 2 * sum(bot_turns) + count(trailing) must match the
    // budget's parity, so the trailing count's parity is forced.
    let budget_parity = params.utterances % 2;
    if trailing.iter().filter(|t| **t).count() % 2 != budget_parity {
        if let Some(t) = trailing.iter_mut().find(|t| !**t) {
            *t = true;
        }
    }
    let total = |bt: &[usize], tr: &[bool]| -> usize {
        2 * bt.iter().sum::<usize>() + tr.iter().filter(|t| **t).count()
    };
    let mut i = 0usize;
    while total(&bot_turns, &trailing) < params.utterances {
        bot_turns[i % params.dialogues] += 1;
        i += 1;
    }
    while total(&bot_turns, &trailing) > params.utterances {
        if bot_turns[i % params.dialogues] > 3 {
            bot_turns[i % params.dialogues] -= 1;
        }
        i += 1;
    }

    let train_cut = (params.train_fraction * params.dialogues as f64).floor() as usize;
    let mut dialogues = Vec::with_capacity(params.dialogues);

    for d in 0..params.dialogues {
        let in_train = d < train_cut;
        let stay = if in_train {
            &params.stay_train
        } else {
            &params.stay_test
        };
        let switch = if in_train {
            &params.switch_train
        } else {
            &params.switch_test
        };

        // Bot sequence for the dialogue's reply turns.
        let b = bot_turns[d];
        let mut bots = Vec::with_capacity(b);
        let mut current = weighted(&mut rng, &params.first_bot);
        bots.push(current);
        for _ in 1..b {
            if !rng.random_bool(stay[current]) {
                current = weighted(&mut rng, &switch[current]);
            }
            bots.push(current);
        }

        let mut turns = Vec::with_capacity(2 * b + 1);
        for (slot_idx, &bot) in bots.iter().enumerate() {
            let kind = if slot_idx == 0 {
                SlotKind::First
            } else if bots[slot_idx - 1] == bot {
                SlotKind::Stay
            } else {
                SlotKind::Switch
            };
            let mention_p = match kind {
                SlotKind::First => params.mention_first,
                SlotKind::Switch => params.mention_switch,
                SlotKind::Stay => params.mention_stay,
            };
            let mention_of = if rng.random_bool(mention_p) {
                if rng.random_bool(params.mention_mismatch) {
                    let mut other = rng.random_range(0..6);
                    if other == bot {
                        other = (other + 1) % 6;
                    }
                    Some(other)
                } else {
                    Some(bot)
                }
            } else {
                None
            };
            let stimulus = gen.stimulus(&mut rng, bot, kind, mention_of);
            turns.push((USER, stimulus));
            let reply = gen.reply(&mut rng, bot);
            turns.push((BOTS[bot], reply));
        }
        if trailing[d] {
            turns.push((USER, gen.closing(&mut rng)));
        }

        dialogues.push(
            turns
                .into_iter()
                .map(|(sender, text)| {
                    let role = if sender == USER {
                        Role::User
                    } else {
                        Role::Bot
                    };
                    (sender.to_string(), role, text)
                })
                .collect::<Vec<_>>(),
        );
    }

    build_corpus(dialogues)
}

fn build_corpus(raw: Vec<Vec<(String, Role, String)>>) -> Corpus {
    let mut agents = vec![(AgentId::from(USER), Role::User)];
    agents.extend(BOTS.iter().map(|b| (AgentId::from(*b), Role::Bot)));
    let inventory = Inventory::new(agents).expect("static inventory");
    let dialogues = raw
        .into_iter()
        .enumerate()
        .map(|(i, turns)| Dialogue {
            id: format!("dlg_{i:05}"),
            turns: turns
                .into_iter()
                .map(|(sender, role, text)| {
                    let mentions = extract_mentions(&text, &inventory);
                    Utterance {
                        sender: AgentId::new(sender),
                        role,
                        text,
                        mentions,
                        is_distractor: false,
                        slot: None,
                    }
                })
                .collect(),
        })
        .collect();
    Corpus {
        dialogues,
        inventory,
    }
}
