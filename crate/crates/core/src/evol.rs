//! Evol-Instruct prompt evolution: seed prompts rewritten round by round
//! along breadth / reasoning / deepening / complexity strategies via a
//! pluggable text-generation client, plus exact-match deduplication for
//! instruction data.

use std::collections::HashSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PLACEHOLDER: &str = "{seed}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    Breadth,
    Reasoning,
    Deepening,
    Complexity,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Breadth,
        StrategyKind::Reasoning,
        StrategyKind::Deepening,
        StrategyKind::Complexity,
    ];
}

/// A rewriting strategy: a template with exactly one seed placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolStrategy {
    pub kind: StrategyKind,
    pub template: String,
}

impl EvolStrategy {
    pub fn new(kind: StrategyKind, template: impl Into<String>) -> Result<Self, EvolError> {
        let template = template.into();
        if template.matches(PLACEHOLDER).count() != 1 {
            return Err(EvolError::BadTemplate(kind));
        }
        Ok(EvolStrategy { kind, template })
    }

    pub fn instantiate(&self, seed: &str) -> String {
        self.template.replace(PLACEHOLDER, seed)
    }
}

/// The in-repo strategy set; templates live under `templates/`.
pub fn builtin_strategies() -> Vec<EvolStrategy> {
    [
        (StrategyKind::Breadth, include_str!("../templates/breadth.txt")),
        (StrategyKind::Reasoning, include_str!("../templates/reasoning.txt")),
        (StrategyKind::Deepening, include_str!("../templates/deepening.txt")),
        (StrategyKind::Complexity, include_str!("../templates/complexity.txt")),
    ]
    .into_iter()
    .map(|(kind, template)| EvolStrategy::new(kind, template).expect("templates are valid"))
    .collect()
}

#[derive(Debug, Error)]
pub enum EvolError {
    #[error("strategy {0:?} template must contain exactly one {PLACEHOLDER}")]
    BadTemplate(StrategyKind),
    #[error("rounds must be >= 1")]
    ZeroRounds,
    #[error("client `{client}` failed after {attempts} attempts: {message}")]
    ClientFailed {
        client: String,
        attempts: u32,
        message: String,
    },
    #[error("client `{0}` returned an empty generation")]
    EmptyGeneration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            temperature: 0.7,
            max_tokens: 1024,
        }
    }
}

/// Minimal request/response contract with an external generation service.
pub trait GenerationClient {
    fn generate(&self, prompt: &str, params: &GenParams) -> Result<String, String>;
    fn identity(&self) -> String;
}

/// Deterministic mock: concatenative, so tests can assert structure.
#[derive(Debug, Default)]
pub struct MockClient {
    /// Fail this many times before succeeding, for retry tests.
    pub failures_before_success: std::cell::Cell<u32>,
}

impl GenerationClient for MockClient {
    fn generate(&self, prompt: &str, _params: &GenParams) -> Result<String, String> {
        let remaining = self.failures_before_success.get();
        if remaining > 0 {
            self.failures_before_success.set(remaining - 1);
            return Err("simulated transport failure".into());
        }
        Ok(format!("[mock] {prompt}"))
    }

    fn identity(&self) -> String {
        "mock-echo-v1".into()
    }
}

/// Retry/backoff hygiene around a client: 3 retries, exponential backoff.
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    /// No sleeping; for tests.
    pub fn immediate(retries: u32) -> Self {
        RetryPolicy {
            retries,
            base_delay: Duration::ZERO,
        }
    }

    fn call<C: GenerationClient + ?Sized>(
        &self,
        client: &C,
        prompt: &str,
        params: &GenParams,
    ) -> Result<String, EvolError> {
        let attempts = self.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match client.generate(prompt, params) {
                Ok(text) if text.trim().is_empty() => {
                    return Err(EvolError::EmptyGeneration(client.identity()))
                }
                Ok(text) => return Ok(text),
                Err(message) => {
                    last = message;
                    if attempt + 1 < attempts && !self.base_delay.is_zero() {
                        std::thread::sleep(self.base_delay * 2u32.pow(attempt));
                    }
                }
            }
        }
        Err(EvolError::ClientFailed {
            client: client.identity(),
            attempts,
            message: last,
        })
    }
}

/// One evolved prompt with full provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolvedPrompt {
    pub text: String,
    pub strategy: StrategyKind,
    pub round: u32,
    pub client: String,
}

/// Evolve a seed for `rounds` rounds; round i feeds round i-1's output.
pub fn evolve_prompt<C: GenerationClient + ?Sized>(
    seed: &str,
    strategy: &EvolStrategy,
    client: &C,
    rounds: u32,
    retry: &RetryPolicy,
) -> Result<Vec<EvolvedPrompt>, EvolError> {
    if rounds == 0 {
        return Err(EvolError::ZeroRounds);
    }
    let mut out = Vec::with_capacity(rounds as usize);
    let mut current = seed.to_string();
    for round in 1..=rounds {
        let prompt = strategy.instantiate(&current);
        current = retry.call(client, &prompt, &GenParams::default())?;
        out.push(EvolvedPrompt {
            text: current.clone(),
            strategy: strategy.kind,
            round,
            client: client.identity(),
        });
    }
    Ok(out)
}

/// Per-seed evolution quotas summing exactly to `target` new prompts,
/// spread as evenly as the division allows (first `target % n_seeds`
/// seeds take the extra one).
pub fn plan_campaign(n_seeds: u64, target: u64) -> Vec<u64> {
    if n_seeds == 0 {
        return Vec::new();
    }
    let base = target / n_seeds;
    let extra = (target % n_seeds) as usize;
    (0..n_seeds as usize)
        .map(|i| base + u64::from(i < extra))
        .collect()
}

/// A prompt/completion pair with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub prompt: String,
    pub completion: String,
    pub client: String,
}

/// One completion per prompt, order preserved.
pub fn generate_answers<C: GenerationClient + ?Sized>(
    prompts: &[String],
    client: &C,
    retry: &RetryPolicy,
) -> Result<Vec<Sample>, EvolError> {
    prompts
        .iter()
        .map(|prompt| {
            let completion = retry.call(client, prompt, &GenParams::default())?;
            Ok(Sample {
                prompt: prompt.clone(),
                completion,
                client: client.identity(),
            })
        })
        .collect()
}

/// Exact-match deduplication, first occurrence kept. Normalization is
/// trailing-whitespace trimming only.
pub fn exact_dedup(samples: Vec<Sample>) -> Vec<Sample> {
    let mut seen = HashSet::new();
    samples
        .into_iter()
        .filter(|s| {
            seen.insert((
                s.prompt.trim_end().to_string(),
                s.completion.trim_end().to_string(),
            ))
        })
        .collect()
}
