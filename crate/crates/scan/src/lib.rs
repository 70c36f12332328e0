//! The SCAN command language, its interpreter, and the standard splits.
//!
//! Commands are generated exhaustively from the phrase-structure grammar
//! (20,910 commands). The jump, turn-left and length splits follow their
//! published definitions. The MCD splits are approximated: compound types
//! are held out at random until enough test material is collected.

use std::collections::{BTreeSet, HashSet};

use qcfg::{Corpus, ExamplePair};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PRIMITIVES: [&str; 4] = ["walk", "look", "run", "jump"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dir {
    Left,
    Right,
}

/// `None` for `turn`, which has no action of its own.
pub type Verb = Option<&'static str>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modifier {
    Plain,
    Turn(Dir),
    Opposite(Dir),
    Around(Dir),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VerbPhrase {
    pub verb: Verb,
    pub modifier: Modifier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Sentence {
    pub vp: VerbPhrase,
    /// 1, 2 (twice) or 3 (thrice).
    pub repeat: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Command {
    Single(Sentence),
    And(Sentence, Sentence),
    After(Sentence, Sentence),
}

fn dir_word(d: Dir) -> &'static str {
    match d {
        Dir::Left => "left",
        Dir::Right => "right",
    }
}

fn turn_action(d: Dir) -> &'static str {
    match d {
        Dir::Left => "LTURN",
        Dir::Right => "RTURN",
    }
}

fn action_of(verb: &str) -> &'static str {
    match verb {
        "walk" => "WALK",
        "look" => "LOOK",
        "run" => "RUN",
        "jump" => "JUMP",
        _ => unreachable!("unknown primitive {verb}"),
    }
}

impl VerbPhrase {
    pub fn words(&self) -> Vec<&'static str> {
        let mut w = vec![self.verb.unwrap_or("turn")];
        match self.modifier {
            Modifier::Plain => {}
            Modifier::Turn(d) => w.push(dir_word(d)),
            Modifier::Opposite(d) => w.extend(["opposite", dir_word(d)]),
            Modifier::Around(d) => w.extend(["around", dir_word(d)]),
        }
        w
    }

    pub fn actions(&self) -> Vec<&'static str> {
        let base: Vec<&'static str> = self.verb.map(action_of).into_iter().collect();
        let with_turns = |turns: usize, d: Dir| {
            let mut v = vec![turn_action(d); turns];
            v.extend(&base);
            v
        };
        match self.modifier {
            Modifier::Plain => base.clone(),
            Modifier::Turn(d) => with_turns(1, d),
            Modifier::Opposite(d) => with_turns(2, d),
            Modifier::Around(d) => with_turns(1, d).repeat(4),
        }
    }
}

impl Sentence {
    pub fn words(&self) -> Vec<&'static str> {
        let mut w = self.vp.words();
        match self.repeat {
            2 => w.push("twice"),
            3 => w.push("thrice"),
            _ => {}
        }
        w
    }

    pub fn actions(&self) -> Vec<&'static str> {
        self.vp.actions().repeat(self.repeat as usize)
    }
}

impl Command {
    pub fn words(&self) -> Vec<&'static str> {
        match self {
            Command::Single(s) => s.words(),
            Command::And(a, b) => [a.words(), vec!["and"], b.words()].concat(),
            Command::After(a, b) => [a.words(), vec!["after"], b.words()].concat(),
        }
    }

    pub fn actions(&self) -> Vec<&'static str> {
        match self {
            Command::Single(s) => s.actions(),
            Command::And(a, b) => [a.actions(), b.actions()].concat(),
            Command::After(a, b) => [b.actions(), a.actions()].concat(),
        }
    }

    pub fn text(&self) -> String {
        self.words().join(" ")
    }

    pub fn example(&self) -> ExamplePair {
        ExamplePair::parse(&self.text(), &self.actions().join(" ")).expect("SCAN sides are never empty")
    }

    /// Parent/child construct pairs appearing in the command's tree.
    pub fn compounds(&self) -> Vec<String> {
        let (head, sents) = match self {
            Command::Single(s) => ("single", vec![*s]),
            Command::And(a, b) => ("and", vec![*a, *b]),
            Command::After(a, b) => ("after", vec![*a, *b]),
        };
        let mut out = Vec::new();
        for (slot, s) in sents.iter().enumerate() {
            let rep = ["", "once", "twice", "thrice"][s.repeat as usize];
            let md = format!("{:?}", s.vp.modifier);
            out.push(format!("{head}/{slot}/{rep}"));
            out.push(format!("{head}/{slot}/{md}"));
            out.push(format!("{rep}/{md}"));
            out.push(format!("{md}/{}", s.vp.verb.unwrap_or("turn")));
        }
        out
    }
}

fn verb_phrases() -> Vec<VerbPhrase> {
    let mut out = Vec::new();
    let verbs: Vec<Verb> = PRIMITIVES.iter().map(|&p| Some(p)).chain([None]).collect();
    for &verb in &verbs {
        let mut mods = vec![];
        if verb.is_some() {
            mods.push(Modifier::Plain);
        }
        for d in [Dir::Left, Dir::Right] {
            mods.extend([Modifier::Turn(d), Modifier::Opposite(d), Modifier::Around(d)]);
        }
        for modifier in mods {
            out.push(VerbPhrase { verb, modifier });
        }
    }
    out
}

/// Every SCAN command, in a fixed order.
pub fn all_commands() -> Vec<Command> {
    let mut sentences = Vec::new();
    for vp in verb_phrases() {
        for repeat in 1..=3 {
            sentences.push(Sentence { vp, repeat });
        }
    }
    let mut out: Vec<Command> = sentences.iter().map(|&s| Command::Single(s)).collect();
    for &a in &sentences {
        for &b in &sentences {
            out.push(Command::And(a, b));
            out.push(Command::After(a, b));
        }
    }
    out
}

/// The action sequence for a command, or `None` if it is not in SCAN.
pub fn interpret(command: &str) -> Option<String> {
    let index: std::collections::HashMap<String, Command> = all_commands().into_iter().map(|c| (c.text(), c)).collect();
    index.get(command).map(|c| c.actions().join(" "))
}

#[derive(Clone, Debug)]
pub struct Split {
    pub name: String,
    pub train: Corpus,
    pub dev: Option<Corpus>,
    pub test: Corpus,
}

fn corpus(name: &str, commands: impl IntoIterator<Item = Command>) -> Corpus {
    Corpus::new(name, commands.into_iter().map(|c| c.example()).collect())
}

/// Training data holds the primitive alone (repeated as in the released
/// files) plus every command not mentioning it; test holds the rest.
fn primitive_split(name: &str, primitive: &str, copies: usize) -> Split {
    let contains = |c: &Command| {
        let text = c.text();
        text == primitive
            || text.starts_with(&format!("{primitive} "))
            || text.ends_with(&format!(" {primitive}"))
            || text.contains(&format!(" {primitive} "))
    };
    let all = all_commands();
    let single = all.iter().find(|c| c.text() == primitive).copied().expect("primitive command exists");
    let mut train: Vec<Command> = all.iter().filter(|c| !contains(c)).copied().collect();
    train.extend(std::iter::repeat_n(single, copies));
    let test: Vec<Command> = all.iter().filter(|c| contains(c) && c.text() != primitive).copied().collect();
    Split {
        name: name.into(),
        train: corpus(&format!("{name}-train"), train),
        dev: None,
        test: corpus(&format!("{name}-test"), test),
    }
}

/// Add-primitive split for `jump`: 14,670 train / 7,706 test.
pub fn jump_split() -> Split {
    primitive_split("jump", "jump", 1467)
}

/// Add-primitive split for `turn left`: 21,890 train / 1,208 test.
pub fn turn_left_split() -> Split {
    primitive_split("turn-left", "turn left", 2189)
}

/// Length split: outputs of at most 22 actions train, longer ones test.
pub fn length_split() -> Split {
    let (train, test): (Vec<Command>, Vec<Command>) = all_commands().into_iter().partition(|c| c.actions().len() <= 22);
    Split {
        name: "length".into(),
        train: corpus("length-train", train),
        dev: None,
        test: corpus("length-test", test),
    }
}

pub const MCD_TRAIN: usize = 8365;
pub const MCD_HELDOUT: usize = 1045;

/// Approximate maximum-compound-divergence split number `which` (1..=3).
///
/// Compound types are held out in a seeded random order until the commands
/// containing any of them can fill dev and test; those commands never reach
/// training. Every word still occurs in training.
pub fn mcd_split(which: u64) -> Split {
    let all = all_commands();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1 + which);
    let types: BTreeSet<String> = all.iter().flat_map(|c| c.compounds()).collect();
    let mut types: Vec<String> = types.into_iter().collect();
    types.shuffle(&mut rng);
    let compounds: Vec<Vec<String>> = all.iter().map(Command::compounds).collect();
    let mut held: HashSet<String> = HashSet::new();
    let mut pool: Vec<usize> = Vec::new();
    for t in types {
        held.insert(t.clone());
        let candidate: Vec<usize> = (0..all.len())
            .filter(|&i| compounds[i].iter().any(|c| held.contains(c)))
            .collect();
        if all.len() - candidate.len() < MCD_TRAIN || !words_covered(&all, &candidate) {
            held.remove(&t);
            continue;
        }
        pool = candidate;
        if pool.len() >= 2 * MCD_HELDOUT {
            break;
        }
    }
    let in_pool: HashSet<usize> = pool.iter().copied().collect();
    let mut rest: Vec<usize> = (0..all.len()).filter(|i| !in_pool.contains(i)).collect();
    rest.shuffle(&mut rng);
    rest.truncate(MCD_TRAIN);
    rest.sort_unstable();
    pool.shuffle(&mut rng);
    let dev: Vec<Command> = pool[..MCD_HELDOUT].iter().map(|&i| all[i]).collect();
    let test: Vec<Command> = pool[MCD_HELDOUT..2 * MCD_HELDOUT].iter().map(|&i| all[i]).collect();
    let name = format!("mcd{which}");
    Split {
        train: corpus(&format!("{name}-train"), rest.iter().map(|&i| all[i])),
        dev: Some(corpus(&format!("{name}-dev"), dev)),
        test: corpus(&format!("{name}-test"), test),
        name,
    }
}

/// Every word occurs in some command outside `held`.
fn words_covered(all: &[Command], held: &[usize]) -> bool {
    let held: HashSet<usize> = held.iter().copied().collect();
    let vocab: HashSet<&str> = all.iter().flat_map(|c| c.words()).collect();
    let mut seen: HashSet<&str> = HashSet::new();
    for (i, c) in all.iter().enumerate() {
        if !held.contains(&i) {
            seen.extend(c.words());
            if seen.len() == vocab.len() {
                return true;
            }
        }
    }
    false
}
