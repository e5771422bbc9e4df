use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{stable_hash, ChatProvider, ChatRequest, EmbeddingProvider, PromptKind};
use crate::error::Result;

const OPENERS: [&str; 8] = [
    "I hear you",
    "That sounds really hard",
    "Thank you for telling me",
    "It makes sense to feel that way",
    "I can imagine how tiring this is",
    "You have been carrying a lot",
    "I appreciate your honesty",
    "That must be confusing",
];

const MIDDLES: [&str; 8] = [
    "and your feelings about work matter",
    "especially with everything going on at home",
    "since the changes came so suddenly",
    "because friends have not been around much",
    "while money worries keep piling up",
    "after such a long stretch of poor sleep",
    "when school deadlines keep moving",
    "given how close you are to your family",
];

const CLOSERS: [&str; 8] = [
    "What has helped you before?",
    "Would you like to talk more about it?",
    "How are you coping this week?",
    "Maybe a short walk could ease things.",
    "Have you shared this with anyone?",
    "Writing it down might bring some clarity.",
    "What would a good day look like?",
    "Small steps still count.",
];

const TAGS: [&str; 8] = [
    "Honestly.",
    "Take your time.",
    "I am here.",
    "No rush at all.",
    "You are not alone.",
    "One thing at a time.",
    "That is okay.",
    "Go easy on yourself.",
];

const TOPICS: [&str; 12] = [
    "work stress",
    "family tension",
    "sleep problems",
    "a recent breakup",
    "feeling isolated",
    "exam pressure",
    "money worries",
    "a health scare",
    "moving to a new city",
    "losing a friend",
    "self-doubt",
    "the holidays",
];

const STRATEGIES: [&str; 4] = [
    "Question",
    "Reflection of feelings",
    "Affirmation and Reassurance",
    "Providing Suggestions",
];

fn pick<'a>(bank: &[&'a str], h: u64, slot: u32) -> &'a str {
    let idx = (h.rotate_right(slot * 8) & 0xff) as usize % bank.len();
    bank[idx]
}

fn sentence(h: u64) -> String {
    format!(
        "{}, {}. {} {}",
        pick(&OPENERS, h, 0),
        pick(&MIDDLES, h, 1),
        pick(&CLOSERS, h, 2),
        pick(&TAGS, h, 3)
    )
}

/// Deterministic chat provider: the response is a function of the prompt
/// text, shaped by the request's [`PromptKind`].
#[derive(Debug, Clone)]
pub struct MockChat {
    /// Number of numbered items returned for aspect-promotion prompts.
    pub list_len: usize,
    /// Overrides for specific kinds. `{sentence}` and `{topic}` are filled
    /// from the prompt hash.
    pub canned: HashMap<PromptKind, String>,
}

impl Default for MockChat {
    fn default() -> Self {
        Self {
            list_len: 4,
            canned: HashMap::new(),
        }
    }
}

impl MockChat {
    pub fn with_list_len(list_len: usize) -> Self {
        Self {
            list_len,
            ..Self::default()
        }
    }

    pub fn with_canned(mut self, kind: PromptKind, response: impl Into<String>) -> Self {
        self.canned.insert(kind, response.into());
        self
    }

    fn respond(&self, req: &ChatRequest) -> String {
        let h = stable_hash(&req.prompt);
        if let Some(t) = self.canned.get(&req.kind) {
            return t
                .replace("{sentence}", &sentence(h))
                .replace("{topic}", pick(&TOPICS, h, 4));
        }
        match req.kind {
            PromptKind::StateTracking => {
                let no_advice_asked = req.prompt.contains("No suggestions have been given yet");
                let has_system_turn = req
                    .prompt
                    .lines()
                    .any(|l| l.starts_with("Supporter:") || l.starts_with("Persuader:"));
                if no_advice_asked && !has_system_turn {
                    "No suggestions have been given yet".to_string()
                } else {
                    format!(
                        "The conversation so far centers on {} and {}; the mood is {}.",
                        pick(&TOPICS, h, 0),
                        pick(&TOPICS, h, 1),
                        ["low", "tense", "hopeful", "uncertain"][(h >> 40) as usize % 4]
                    )
                }
            }
            PromptKind::AspectPromotion => (0..self.list_len)
                .map(|i| {
                    let hi = h.wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                    format!(
                        "{}. Talk about {} and how it connects to {}",
                        i + 1,
                        pick(&TOPICS, hi, 1),
                        pick(&TOPICS, hi, 2)
                    )
                })
                .collect::<Vec<_>>()
                .join("\n"),
            PromptKind::Generation => {
                let label = if req.prompt.contains("Persuader: [Your generated") {
                    "Persuader"
                } else {
                    "Supporter"
                };
                format!("{label}: {}", sentence(h))
            }
            PromptKind::Seeker => format!(
                "Seeker: Lately it is {}. {} {}",
                pick(&TOPICS, h, 5),
                pick(&MIDDLES, h, 6),
                pick(&TAGS, h, 7)
            ),
            PromptKind::BaselinePlain => sentence(h),
            PromptKind::BaselineCot => format!(
                "[start]\n[Progression Analysis] Exploration is partial; comforting is ongoing; no action yet.\n\
                 [Determine Aspect] Comforting\n[Response] {}\n[end]",
                sentence(h)
            ),
            PromptKind::BaselineMixInit => format!(
                "Therapist: [Strategy: {}] {}",
                pick(&STRATEGIES, h, 2),
                sentence(h)
            ),
            PromptKind::Other => format!("mock response {h:016x}"),
        }
    }
}

impl ChatProvider for MockChat {
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        Ok(self.respond(req))
    }
}

/// Closure-backed provider for scripted tests.
pub struct FnChat<F>(F);

impl<F> FnChat<F>
where
    F: Fn(&ChatRequest) -> Result<String> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F> ChatProvider for FnChat<F>
where
    F: Fn(&ChatRequest) -> Result<String> + Send + Sync,
{
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        (self.0)(req)
    }
}

/// Pseudo-random unit vectors seeded by a hash of the input text.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim, seed: 0 }
    }

    pub fn with_seed(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(text) ^ self.seed);
        let mut v: Vec<f64> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        Ok(v)
    }
}
