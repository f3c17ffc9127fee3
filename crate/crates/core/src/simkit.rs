//! Seeded offline stand-ins for both model roles.
//!
//! Prompts are described by a small feature grammar (role, specificity,
//! justification request, explicit label list). A simulated user prefers one
//! value per feature; the mock classifier answers correctly with a
//! probability that grows with how well a prompt's features match those
//! preferences. The mock prompt writer improves prompts by recombining the
//! features of the good prompts it is shown.
//!
//! All randomness is keyed on the call's inputs, so results never depend on
//! call order or threading.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, BackendIdentity, DecodeParams, ImageRef, TextGenBackend, VisionClassifyBackend};
use crate::datastore::LabeledSample;
use crate::emotion::{EmotionLabel, EmotionWheel};
use crate::error::{Error, Result};
use crate::keyed::{derive_seed, digest_hex, keyed_rng};
use crate::tuner::templates::{self, label_list, parse_scored_line};

pub const BASE_RATE: f64 = 1.0 / 8.0;
pub const NON_TARGET_RATE: f64 = 0.05;
/// Chance that a recombined prompt gets one coordinate mutated.
pub const MUTATION_RATE: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    None,
    Analyst,
    Professional,
    Artist,
    Psychologist,
    Choreographer,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::None,
        Role::Analyst,
        Role::Professional,
        Role::Artist,
        Role::Psychologist,
        Role::Choreographer,
    ];

    fn prefix(self) -> &'static str {
        match self {
            Role::None => "",
            Role::Analyst => "As an image analyst, ",
            Role::Professional => "As a professional in visual emotion assessment, ",
            Role::Artist => "As an artist sensitive to mood, ",
            Role::Psychologist => "As a psychologist who studies affect, ",
            Role::Choreographer => "As a choreographer expressing feelings through movement, ",
        }
    }

    fn keyword(self) -> Option<&'static str> {
        match self {
            Role::None => None,
            Role::Analyst => Some("analyst"),
            Role::Professional => Some("professional"),
            Role::Artist => Some("artist"),
            Role::Psychologist => Some("psychologist"),
            Role::Choreographer => Some("choreographer"),
        }
    }
}

const GROUP_SIZES: [usize; 4] = [6, 4, 2, 2];
pub const FEATURE_DIMS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptFeatures {
    pub role: Role,
    /// 0 (vague) to 3 (names concrete cues).
    pub specificity: u8,
    pub asks_justification: bool,
    pub label_list_present: bool,
}

impl PromptFeatures {
    /// Keyword extraction; total over all strings.
    pub fn extract(text: &str, labels: &[EmotionLabel]) -> Self {
        let lower = text.to_lowercase();
        let role = [
            Role::Choreographer,
            Role::Psychologist,
            Role::Artist,
            Role::Professional,
            Role::Analyst,
        ]
        .into_iter()
        .find(|r| r.keyword().is_some_and(|k| lower.contains(k)))
        .unwrap_or(Role::None);
        let specificity = if lower.contains("body language") {
            3
        } else if lower.contains("composition") {
            2
        } else if lower.contains("most evident") {
            1
        } else {
            0
        };
        let label_list_present = lower.split('{').skip(1).any(|chunk| {
            chunk
                .split('}')
                .next()
                .is_some_and(|inside| labels.iter().any(|l| inside.contains(l.name())))
        });
        PromptFeatures {
            role,
            specificity,
            asks_justification: lower.contains("justif"),
            label_list_present,
        }
    }

    /// Option index chosen in each feature group.
    pub fn coordinates(&self) -> [usize; 4] {
        [
            Role::ALL.iter().position(|&r| r == self.role).expect("known role"),
            self.specificity.min(3) as usize,
            usize::from(self.asks_justification),
            usize::from(self.label_list_present),
        ]
    }

    pub fn from_coordinates(c: [usize; 4]) -> Self {
        PromptFeatures {
            role: Role::ALL[c[0] % 6],
            specificity: (c[1] % 4) as u8,
            asks_justification: c[2] % 2 == 1,
            label_list_present: c[3] % 2 == 1,
        }
    }

    /// One-hot encoding, groups concatenated.
    pub fn vector(&self) -> [f64; FEATURE_DIMS] {
        let mut v = [0.0; FEATURE_DIMS];
        let mut offset = 0;
        for (g, &c) in self.coordinates().iter().enumerate() {
            v[offset + c] = 1.0;
            offset += GROUP_SIZES[g];
        }
        v
    }
}

const OPENERS: [&str; 4] = ["", "please ", "look closely and ", "take a moment to "];
const VERBS: [&str; 5] = ["identify", "determine", "recognize", "name", "pick out"];
const JUSTIFICATIONS: [&str; 2] = [
    " Provide a short justification for your choice.",
    " Offer a concise justification for your decision.",
];

fn target_phrase(specificity: u8) -> &'static str {
    match specificity {
        0 => "the emotion in this image.",
        1 => "the most evident emotion this image evokes in the viewer.",
        2 => "the most evident emotion this image evokes, paying attention to colors and composition.",
        _ => {
            "the most evident emotion this image evokes, paying attention to facial expressions, \
             body language, colors and composition."
        }
    }
}

/// Renders `features` as a prompt; `rng` picks the surface wording only.
pub fn render_prompt(features: &PromptFeatures, labels: &[EmotionLabel], rng: &mut impl Rng) -> String {
    let opener = OPENERS[rng.gen_range(0..OPENERS.len())];
    let verb = VERBS[rng.gen_range(0..VERBS.len())];
    let mut s = format!(
        "{}{opener}{verb} {}",
        features.role.prefix(),
        target_phrase(features.specificity)
    );
    if features.label_list_present {
        s.push_str(&format!(" Select from {{{}}}.", label_list(labels)));
    }
    if features.asks_justification {
        s.push_str(JUSTIFICATIONS[rng.gen_range(0..JUSTIFICATIONS.len())]);
    }
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => s,
    }
}

fn random_features(rng: &mut impl Rng) -> PromptFeatures {
    PromptFeatures::from_coordinates([
        rng.gen_range(0..6),
        rng.gen_range(0..4),
        rng.gen_range(0..2),
        rng.gen_range(0..2),
    ])
}

/// A simulated person's taste in prompts and their typical confusions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub seed: u64,
    pub noise: f64,
    pub preference: [f64; FEATURE_DIMS],
    /// Row `truth`: probability of answering each wrong label. Zero on the
    /// diagonal.
    pub confusability: [[f64; 8]; 8],
}

impl UserProfile {
    /// Derives a profile from `(user_id, seed)`. In each feature group one
    /// favoured option scores in [0.8, 1), the rest in [0, 0.4).
    pub fn generate(user_id: &str, seed: u64, noise: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&noise) {
            return Err(Error::config("simulation.noise", "must lie in [0, 0.5)"));
        }
        let mut rng = keyed_rng(seed, &[b"profile", user_id.as_bytes()]);
        let mut preference = [0.0; FEATURE_DIMS];
        let mut offset = 0;
        for size in GROUP_SIZES {
            let favoured = rng.gen_range(0..size);
            for o in 0..size {
                preference[offset + o] = if o == favoured {
                    rng.gen_range(0.8..1.0)
                } else {
                    rng.gen_range(0.0..0.4)
                };
            }
            offset += size;
        }
        let wheel = EmotionWheel::default();
        let mut confusability = [[0.0; 8]; 8];
        for truth in EmotionLabel::ALL {
            let row = &mut confusability[truth.index()];
            for other in EmotionLabel::ALL {
                if other != truth {
                    row[other.index()] = rng.gen_range(0.5..1.5) / wheel.distance(truth, other) as f64;
                }
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= total);
        }
        Ok(UserProfile {
            user_id: user_id.to_string(),
            seed,
            noise,
            preference,
            confusability,
        })
    }

    /// The best-matching features.
    pub fn favourite(&self) -> PromptFeatures {
        let mut c = [0usize; 4];
        let mut offset = 0;
        for (g, size) in GROUP_SIZES.into_iter().enumerate() {
            let group = &self.preference[offset..offset + size];
            c[g] = (0..size).max_by(|&a, &b| group[a].total_cmp(&group[b])).expect("non-empty group");
            offset += size;
        }
        PromptFeatures::from_coordinates(c)
    }

    /// Preference dot features, scaled so the favourite scores 1.
    pub fn match_score(&self, features: &PromptFeatures) -> f64 {
        let v = features.vector();
        let dot: f64 = v.iter().zip(&self.preference).map(|(a, b)| a * b).sum();
        let best: f64 = self.favourite().vector().iter().zip(&self.preference).map(|(a, b)| a * b).sum();
        dot / best
    }

    pub fn p_correct(&self, match_score: f64) -> f64 {
        BASE_RATE + (1.0 - BASE_RATE - self.noise) * match_score.clamp(0.0, 1.0)
    }

    /// Draws a reply for one (sample, prompt) pair given the chance of a
    /// correct answer.
    pub fn respond(&self, sample_id: &str, truth: EmotionLabel, prompt: &str, p_correct: f64) -> String {
        let digest = digest_hex(prompt);
        let mut rng = keyed_rng(self.seed, &[b"classify", sample_id.as_bytes(), digest.as_bytes()]);
        let style = rng.gen_range(0..SENTENCES.len());
        if rng.gen::<f64>() < p_correct {
            return SENTENCES[style].replace("{}", truth.name());
        }
        if rng.gen::<f64>() < NON_TARGET_RATE {
            return NON_TARGET[rng.gen_range(0..NON_TARGET.len())].to_string();
        }
        let row = &self.confusability[truth.index()];
        let mut u = rng.gen::<f64>();
        let mut wrong = EmotionLabel::ALL
            .iter()
            .copied()
            .rfind(|&l| l != truth)
            .expect("8 labels");
        for l in EmotionLabel::ALL {
            if l == truth {
                continue;
            }
            if u < row[l.index()] {
                wrong = l;
                break;
            }
            u -= row[l.index()];
        }
        SENTENCES[style].replace("{}", wrong.name())
    }
}

const SENTENCES: [&str; 4] = [
    "{}",
    "The emotion evoked is {}.",
    "This image most likely evokes {} in the viewer.",
    "Answer: {}. The scene carries that feeling overall.",
];

const NON_TARGET: [&str; 2] = ["The image makes me feel happy.", "It looks sad to me."];

/// Builds `size` samples for `profile`. Balanced mode spreads labels evenly;
/// imbalanced mode keeps only `ceil(size / 40)` anger samples.
pub fn make_synthetic_dataset(profile: &UserProfile, size: usize, imbalance: bool) -> Result<Vec<LabeledSample>> {
    if size < 8 {
        return Err(Error::Input(format!("a synthetic dataset needs at least 8 samples, got {size}")));
    }
    let mut counts = [0usize; 8];
    if imbalance {
        let anger = size.div_ceil(40);
        counts[EmotionLabel::Anger.index()] = anger;
        let others: Vec<EmotionLabel> = EmotionLabel::ALL.into_iter().filter(|&l| l != EmotionLabel::Anger).collect();
        let rest = size - anger;
        for (i, l) in others.iter().enumerate() {
            counts[l.index()] = rest / 7 + usize::from(i < rest % 7);
        }
    } else {
        for (i, c) in counts.iter_mut().enumerate() {
            *c = size / 8 + usize::from(i < size % 8);
        }
    }
    let mut labels: Vec<EmotionLabel> = EmotionLabel::ALL
        .iter()
        .flat_map(|&l| std::iter::repeat_n(l, counts[l.index()]))
        .collect();
    labels.shuffle(&mut keyed_rng(profile.seed, &[b"dataset", profile.user_id.as_bytes()]));
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| LabeledSample {
            sample_id: format!("s{i:04}"),
            image: ImageRef(format!("sim://{}/s{i:04}", profile.user_id)),
            user_id: profile.user_id.clone(),
            label,
        })
        .collect())
}

/// Settings for a simulated population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_users")]
    pub users: usize,
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default)]
    pub imbalance: bool,
}

fn default_noise() -> f64 {
    0.05
}
fn default_users() -> usize {
    3
}
fn default_size() -> usize {
    136
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            seed: 0,
            noise: default_noise(),
            users: default_users(),
            size: default_size(),
            imbalance: false,
        }
    }
}

impl SimulationSpec {
    pub fn user_id(i: usize) -> String {
        format!("u{:02}", i + 1)
    }

    pub fn profile_seed(&self, user_id: &str) -> u64 {
        derive_seed(self.seed, &[b"user", user_id.as_bytes()])
    }

    pub fn profile(&self, user_id: &str) -> Result<UserProfile> {
        UserProfile::generate(user_id, self.profile_seed(user_id), self.noise)
    }

    /// Manifest rows for every simulated user.
    pub fn dataset(&self) -> Result<Vec<LabeledSample>> {
        if self.users == 0 {
            return Err(Error::config("simulation.users", "must be at least 1"));
        }
        let mut out = Vec::new();
        for i in 0..self.users {
            let profile = self.profile(&Self::user_id(i))?;
            out.extend(make_synthetic_dataset(&profile, self.size, self.imbalance)?);
        }
        Ok(out)
    }
}

/// Mock prompt writer.
#[derive(Debug, Clone)]
pub struct MockLlm {
    seed: u64,
    labels: Vec<EmotionLabel>,
}

impl MockLlm {
    pub fn new(seed: u64, labels: Vec<EmotionLabel>) -> Self {
        MockLlm { seed, labels }
    }

    fn rng(&self, instruction: &str, decode: &DecodeParams) -> ChaCha8Rng {
        let digest = digest_hex(instruction);
        let call = decode.seed.unwrap_or(0).to_le_bytes();
        keyed_rng(self.seed, &[b"llm", &call, digest.as_bytes()])
    }

    fn distinct_prompts(
        &self,
        count: usize,
        rng: &mut impl Rng,
        mut features: impl FnMut(&mut ChaCha8Rng) -> PromptFeatures,
    ) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut tries = 0;
        while out.len() < count && tries < count * 50 {
            tries += 1;
            let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
            let f = features(&mut r);
            let text = render_prompt(&f, &self.labels, &mut r);
            if !out.contains(&text) {
                out.push(text);
            }
        }
        out
    }

    fn initial(&self, n: usize, rng: &mut impl Rng) -> String {
        let prompts = self.distinct_prompts(n, rng, random_features);
        format!(
            "Here are {n} prompts:\n{}",
            prompts.iter().map(|p| format!("- {p}\n")).collect::<String>()
        )
    }

    fn modified(&self, t: usize, good: &[(String, f64)], bad: &[(String, f64)], rng: &mut impl Rng) -> String {
        let good_f: Vec<([usize; 4], f64)> = good
            .iter()
            .map(|(text, acc)| (PromptFeatures::extract(text, &self.labels).coordinates(), acc + 0.05))
            .collect();
        let bad_c: Vec<[usize; 4]> = bad
            .iter()
            .map(|(text, _)| PromptFeatures::extract(text, &self.labels).coordinates())
            .collect();
        let total: f64 = good_f.iter().map(|(_, w)| w).sum();
        let prompts = self.distinct_prompts(t, rng, |r| {
            let mut c = [0usize; 4];
            for (g, slot) in c.iter_mut().enumerate() {
                let mut u = r.gen::<f64>() * total;
                let mut pick = good_f.last().expect("good list is non-empty").0[g];
                for (coords, w) in &good_f {
                    if u < *w {
                        pick = coords[g];
                        break;
                    }
                    u -= w;
                }
                *slot = pick;
            }
            if r.gen::<f64>() < MUTATION_RATE {
                let g = r.gen_range(0..4);
                let fresh: Vec<usize> = (0..GROUP_SIZES[g])
                    .filter(|&o| o != c[g] && !bad_c.iter().any(|b| b[g] == o))
                    .collect();
                let any: Vec<usize> = (0..GROUP_SIZES[g]).filter(|&o| o != c[g]).collect();
                let choices = if fresh.is_empty() { any } else { fresh };
                c[g] = *choices.choose(r).expect("groups have two or more options");
            }
            PromptFeatures::from_coordinates(c)
        });
        format!(
            "Sure. {} improved templates:\n{}",
            prompts.len(),
            prompts.iter().map(|p| format!("- {p}\n")).collect::<String>()
        )
    }
}

fn number_after(text: &str, marker: &str) -> Option<usize> {
    let rest = &text[text.find(marker)? + marker.len()..];
    rest.split(|c: char| !c.is_ascii_digit()).next()?.parse().ok()
}

/// Scored prompt lines between `start` and `end`.
fn scored_section(text: &str, start: &str, end: &str) -> Vec<(String, f64)> {
    let Some(from) = text.find(start) else {
        return Vec::new();
    };
    let body = &text[from..];
    let body = match body.find(end) {
        Some(to) => &body[..to],
        None => body,
    };
    body.lines().filter_map(parse_scored_line).collect()
}

impl TextGenBackend for MockLlm {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity::new("simulate", format!("mock-llm-{}", self.seed))
    }

    fn generate(&self, instruction: &str, decode: &DecodeParams) -> Result<String, BackendError> {
        let mut rng = self.rng(instruction, decode);
        if instruction.starts_with(templates::INIT_PREFIX) {
            let n = number_after(instruction, templates::INIT_PREFIX)
                .ok_or_else(|| BackendError::Protocol("initial template without a count".into()))?;
            return Ok(self.initial(n, &mut rng));
        }
        if instruction.starts_with(templates::MOD_PREFIX) {
            let t = number_after(instruction, "please provide ")
                .ok_or_else(|| BackendError::Protocol("modification template without a count".into()))?;
            let good = scored_section(instruction, "good templates with their", "bad templates with their");
            let bad = scored_section(instruction, "bad templates with their", templates::REQUIREMENTS_HEADING);
            if good.is_empty() {
                return Err(BackendError::Protocol("modification template lists no good prompts".into()));
            }
            return Ok(self.modified(t, &good, &bad, &mut rng));
        }
        Err(BackendError::Protocol("instruction is neither an initial nor a modification template".into()))
    }
}

/// Mock classifier over simulated users.
#[derive(Debug, Clone)]
pub struct MockMllm {
    labels: Vec<EmotionLabel>,
    profiles: HashMap<String, UserProfile>,
    /// image reference -> (user, sample id, label)
    truth: HashMap<String, (String, String, EmotionLabel)>,
}

impl MockMllm {
    pub fn new(profiles: Vec<UserProfile>, samples: &[LabeledSample], labels: Vec<EmotionLabel>) -> Self {
        MockMllm {
            labels,
            profiles: profiles.into_iter().map(|p| (p.user_id.clone(), p)).collect(),
            truth: samples
                .iter()
                .map(|s| (s.image.0.clone(), (s.user_id.clone(), s.sample_id.clone(), s.label)))
                .collect(),
        }
    }

    /// Profiles for every user in `samples`, derived from `spec`.
    pub fn for_manifest(spec: &SimulationSpec, samples: &[LabeledSample], labels: Vec<EmotionLabel>) -> Result<Self> {
        let users: BTreeMap<&str, ()> = samples.iter().map(|s| (s.user_id.as_str(), ())).collect();
        let profiles = users.keys().map(|u| spec.profile(u)).collect::<Result<Vec<_>>>()?;
        Ok(Self::new(profiles, samples, labels))
    }

    pub fn profile(&self, user_id: &str) -> Option<&UserProfile> {
        self.profiles.get(user_id)
    }
}

impl VisionClassifyBackend for MockMllm {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity::new("simulate", "mock-mllm")
    }

    fn classify(&self, image: &ImageRef, prompt: &str, _: &DecodeParams) -> Result<String, BackendError> {
        let (user, sample_id, truth) = self
            .truth
            .get(image.as_str())
            .ok_or_else(|| BackendError::Input(format!("unknown simulated image {:?}", image.as_str())))?;
        let profile = self
            .profiles
            .get(user)
            .ok_or_else(|| BackendError::Input(format!("no simulated profile for user {user}")))?;
        let features = PromptFeatures::extract(prompt, &self.labels);
        let p = profile.p_correct(profile.match_score(&features));
        Ok(profile.respond(sample_id, *truth, prompt, p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emotion::parse_label;
    use crate::tuner::templates::{render_init_template, render_mod_template};
    use crate::tuner::{Lineage, Origin, ScoredPrompt};

    fn labels() -> Vec<EmotionLabel> {
        EmotionLabel::ALL.to_vec()
    }

    fn all_features() -> Vec<PromptFeatures> {
        let mut v = Vec::new();
        for a in 0..6 {
            for b in 0..4 {
                for c in 0..2 {
                    for d in 0..2 {
                        v.push(PromptFeatures::from_coordinates([a, b, c, d]));
                    }
                }
            }
        }
        v
    }

    #[test]
    fn rendering_round_trips_through_extraction() {
        let mut rng = keyed_rng(1, &[b"t"]);
        for f in all_features() {
            for _ in 0..4 {
                let text = render_prompt(&f, &labels(), &mut rng);
                assert_eq!(PromptFeatures::extract(&text, &labels()), f, "{text}");
            }
        }
    }

    #[test]
    fn extraction_is_total() {
        let f = PromptFeatures::extract("", &labels());
        assert_eq!(f.coordinates(), [0, 0, 0, 0]);
        let f = PromptFeatures::extract("{ {awe} justify", &labels());
        assert!(f.label_list_present && f.asks_justification);
    }

    #[test]
    fn favourite_matches_fully() {
        let p = UserProfile::generate("u01", 3, 0.0).unwrap();
        assert_eq!(p.match_score(&p.favourite()), 1.0);
        assert_eq!(p.p_correct(1.0), 1.0);
        for f in all_features() {
            assert!(p.match_score(&f) <= 1.0 + 1e-12);
        }
        assert_eq!(p, UserProfile::generate("u01", 3, 0.0).unwrap());
        assert!(UserProfile::generate("u01", 3, 0.5).is_err());
    }

    #[test]
    fn perfect_match_is_always_correct() {
        let p = UserProfile::generate("u01", 3, 0.0).unwrap();
        for i in 0..500 {
            let truth = EmotionLabel::ALL[i % 8];
            let reply = p.respond(&format!("s{i}"), truth, "any prompt", p.p_correct(1.0));
            assert_eq!(parse_label(&reply, &labels()).label(), Some(truth));
        }
    }

    #[test]
    fn zero_match_is_chance() {
        let p = UserProfile::generate("u02", 11, 0.05).unwrap();
        let n = 20_000;
        let hits = (0..n)
            .filter(|i| {
                let truth = EmotionLabel::ALL[i % 8];
                let reply = p.respond(&format!("s{i}"), truth, "prompt", p.p_correct(0.0));
                parse_label(&reply, &labels()).is_label(truth)
            })
            .count();
        let rate = hits as f64 / n as f64;
        // three standard errors at p = 1/8
        let se = (BASE_RATE * (1.0 - BASE_RATE) / n as f64).sqrt();
        assert!((rate - BASE_RATE).abs() < 3.0 * se, "{rate}");
    }

    #[test]
    fn matched_prompts_beat_mismatched_by_a_margin() {
        for seed in 0..20 {
            let p = UserProfile::generate("u", seed, 0.1).unwrap();
            let fav = p.favourite().coordinates();
            let worst = PromptFeatures::from_coordinates([
                (fav[0] + 1) % 6,
                (fav[1] + 1) % 4,
                1 - fav[2],
                1 - fav[3],
            ]);
            let gap = p.p_correct(1.0) - p.p_correct(p.match_score(&worst));
            assert!(gap >= 0.3, "seed {seed}: {gap}");
        }
    }

    #[test]
    fn dataset_shapes() {
        let p = UserProfile::generate("u01", 1, 0.05).unwrap();
        let d = make_synthetic_dataset(&p, 80, false).unwrap();
        for l in EmotionLabel::ALL {
            assert_eq!(d.iter().filter(|s| s.label == l).count(), 10);
        }
        assert_eq!(d, make_synthetic_dataset(&p, 80, false).unwrap());
        let d = make_synthetic_dataset(&p, 100, true).unwrap();
        assert_eq!(d.iter().filter(|s| s.label == EmotionLabel::Anger).count(), 3);
        assert_eq!(d.len(), 100);
        assert!(matches!(make_synthetic_dataset(&p, 7, false), Err(Error::Input(_))));
    }

    #[test]
    fn init_reply_has_n_distinct_prompts() {
        let llm = MockLlm::new(7, labels());
        let out = llm
            .generate(&render_init_template(6, &labels()), &DecodeParams::generation().with_seed(1))
            .unwrap();
        let prompts = crate::backend::parse_prompt_list(&out).unwrap();
        assert_eq!(prompts.len(), 6);
        assert_eq!(out, llm.generate(&render_init_template(6, &labels()), &DecodeParams::generation().with_seed(1)).unwrap());
        assert!(matches!(
            llm.generate("hello", &DecodeParams::generation()),
            Err(BackendError::Protocol(_))
        ));
    }

    #[test]
    fn modification_favours_good_features() {
        let llm = MockLlm::new(7, labels());
        let mut rng = keyed_rng(0, &[b"good"]);
        let sp = |text: String, acc: f64, seq: u64| ScoredPrompt {
            text,
            accuracy: acc,
            correct: 0,
            total: 0,
            lineage: Lineage { i3: 1, i2: 0, i1: 0, origin: Origin::Initial },
            created_seq: seq,
        };
        let good: Vec<ScoredPrompt> = (0..3)
            .map(|i| {
                let f = PromptFeatures::from_coordinates([2, i, i % 2, 1]);
                sp(render_prompt(&f, &labels(), &mut rng), 0.6, i as u64)
            })
            .collect();
        let bad: Vec<ScoredPrompt> = (0..3)
            .map(|i| {
                let f = PromptFeatures::from_coordinates([i % 2, 0, 0, 0]);
                sp(render_prompt(&f, &labels(), &mut rng), 0.1, 3 + i as u64)
            })
            .collect();
        let mut total = 0;
        for call in 0..40u64 {
            let out = llm
                .generate(&render_mod_template(&good, &bad, 5), &DecodeParams::generation().with_seed(call))
                .unwrap();
            let prompts = crate::backend::parse_prompt_list(&out).unwrap();
            assert_eq!(prompts.len(), 5);
            let professional = prompts
                .iter()
                .filter(|p| PromptFeatures::extract(p, &labels()).role == Role::Professional)
                .count();
            if call == 0 {
                assert!(professional >= 3, "{prompts:?}");
            }
            total += professional;
        }
        // one coordinate in four is mutated with probability MUTATION_RATE
        let expected = 1.0 - MUTATION_RATE / 4.0;
        let observed = total as f64 / 200.0;
        assert!((observed - expected).abs() < 0.08, "{observed}");
    }

    #[test]
    fn unknown_image_is_an_input_error() {
        let spec = SimulationSpec { users: 1, size: 16, ..Default::default() };
        let data = spec.dataset().unwrap();
        let m = MockMllm::for_manifest(&spec, &data, labels()).unwrap();
        assert!(m.classify(&data[0].image, "x", &DecodeParams::evaluation()).is_ok());
        assert!(matches!(
            m.classify(&ImageRef::new("sim://u99/s0000"), "x", &DecodeParams::evaluation()),
            Err(BackendError::Input(_))
        ));
    }
}
