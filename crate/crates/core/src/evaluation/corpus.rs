use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::HoiTriplet;
use crate::error::{invalid, Result};

/// `(verb, object phrase)` pairs drawn from V-COCO interaction labels.
const HOI_INTERACTIONS: [(&str, &str); 30] = [
    ("surfing", "with a surfboard"),
    ("skateboarding", "with a skateboard"),
    ("jumping", "with a skateboard"),
    ("snowboarding", "with a snowboard"),
    ("sitting", "on a chair"),
    ("skiing", "with skis"),
    ("working", "on a laptop"),
    ("catching", "a frisbee"),
    ("carrying", "a suitcase"),
    ("talking", "on a cell phone"),
    ("hitting", "a sports ball"),
    ("cutting", "a cake"),
    ("riding", "a motorcycle"),
    ("riding", "a horse"),
    ("sitting", "on a bench"),
    ("eating", "pizza"),
    ("reading", "a book"),
    ("holding", "a cat"),
    ("drinking", "with a cup"),
    ("holding", "a toothbrush"),
    ("holding", "a teddy bear"),
    ("looking", "at a tv"),
    ("holding", "an umbrella"),
    ("laying", "on a bed"),
    ("looking", "at a dog"),
    ("carrying", "a book"),
    ("kicking", "a sports ball"),
    ("throwing", "a frisbee"),
    ("cutting", "with scissors"),
    ("riding", "a car"),
];

const ACCESSORY: [&str; 10] = [
    "a {} wearing a red hat",
    "a {} wearing a Santa hat",
    "a {} wearing a rainbow scarf",
    "a {} wearing a black top hat and a monocle",
    "a {} in a chef outfit",
    "a {} in a firefighter outfit",
    "a {} in a police outfit",
    "a {} wearing pink glasses",
    "a {} wearing a yellow shirt",
    "a {} in a purple wizard outfit",
];

const STYLE: [&str; 10] = [
    "a painting of a {} in the style of Banksy",
    "a painting of a {} in the style of Vincent Van Gogh",
    "a colorful graffiti painting of a {}",
    "a watercolor painting of a {}",
    "a Greek marble sculpture of a {}",
    "a street art mural of a {}",
    "a black and white photograph of a {}",
    "a pointillism painting of a {}",
    "a Japanese woodblock print of a {}",
    "a street art stencil of a {}",
];

const CONTEXT: [&str; 10] = [
    "a {} in the jungle",
    "a {} in the snow",
    "a {} on the beach",
    "a {} on a cobblestone street",
    "a {} on top of pink fabric",
    "a {} on top of a wooden floor",
    "a {} with a city in the background",
    "a {} with a mountain in the background",
    "a {} with a blue house in the background",
    "a {} on top of a purple rug in a forest",
];

const ACTION: [&str; 10] = [
    "a {} riding a horse",
    "a {} holding a glass of wine",
    "a {} holding a piece of cake",
    "a {} giving a lecture",
    "a {} reading a book",
    "a {} gardening in the backyard",
    "a {} cooking a meal",
    "a {} working out at the gym",
    "a {} walking the dog",
    "a {} baking cookies",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PromptCategory {
    Accessory,
    Style,
    Context,
    Action,
}

impl PromptCategory {
    pub const ALL: [PromptCategory; 4] = [
        PromptCategory::Accessory,
        PromptCategory::Style,
        PromptCategory::Context,
        PromptCategory::Action,
    ];

    fn templates(self) -> &'static [&'static str; 10] {
        match self {
            PromptCategory::Accessory => &ACCESSORY,
            PromptCategory::Style => &STYLE,
            PromptCategory::Context => &CONTEXT,
            PromptCategory::Action => &ACTION,
        }
    }
}

impl fmt::Display for PromptCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

fn check_subject(subject: &str) -> Result<&str> {
    let s = subject.trim();
    if s.is_empty() {
        return Err(invalid!("prompt subject must be non-empty"));
    }
    Ok(s)
}

pub fn build_hoi_triplets(subject: &str) -> Result<Vec<HoiTriplet>> {
    let s = check_subject(subject)?;
    HOI_INTERACTIONS
        .iter()
        .map(|(verb, object)| HoiTriplet::new(s, verb, object))
        .collect()
}

/// The 30 interaction prompts, in corpus order.
pub fn build_hoi_prompts(subject: &str) -> Result<Vec<String>> {
    Ok(build_hoi_triplets(subject)?.iter().map(HoiTriplet::render).collect())
}

/// Ten prompts per category, in corpus order.
pub fn build_general_prompts(subject: &str) -> Result<BTreeMap<PromptCategory, Vec<String>>> {
    let s = check_subject(subject)?;
    Ok(PromptCategory::ALL
        .iter()
        .map(|&c| (c, c.templates().iter().map(|t| t.replace("{}", s)).collect()))
        .collect())
}
