//! Prompt ensembles and the text features derived from them.
//!
//! A [`PromptSet`] is the cartesian product of state phrases and templates.
//! Each rendered prompt is embedded by the text encoder and the plain mean of
//! those embeddings is the representative [`TextFeature`] for a role
//! (normal, abnormal, or an added normality).

mod assets;
mod generator;

pub use assets::{parse_asset_lines, PromptAssets};
pub use generator::{
    generate_phrases, instruction_for, CommandPhraseGenerator, GeneratorError, HttpPhraseGenerator,
    PhraseGenerator, GENERATOR_TIMEOUT,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{softmax_over, Embedding, EmbeddingError, EncoderClient, EncoderError};

/// Placeholder token a template must contain exactly once.
pub const PLACEHOLDER: &str = "{}";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("state list is empty")]
    EmptyStates,
    #[error("template list is empty")]
    EmptyTemplates,
    #[error("malformed template {template:?}: {count} placeholders, expected exactly one")]
    MalformedTemplate { template: String, count: usize },
    #[error("no prompt embeddings to aggregate")]
    EmptyEmbeddings,
    #[error("normality text is empty")]
    EmptyNormality,
    #[error("class name is empty")]
    EmptyClass,
    #[error("phrase list is empty")]
    EmptyPhrases,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// State phrases, templates and their rendered cartesian product.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    states: Vec<String>,
    templates: Vec<String>,
    rendered: Vec<String>,
}

impl PromptSet {
    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }

    pub fn rendered(&self) -> &[String] {
        &self.rendered
    }
}

/// Renders every `(state, template)` pair, state-major.
pub fn compose_prompts<S: AsRef<str>, T: AsRef<str>>(states: &[S], templates: &[T]) -> Result<PromptSet, PromptError> {
    if states.is_empty() {
        return Err(PromptError::EmptyStates);
    }
    if templates.is_empty() {
        return Err(PromptError::EmptyTemplates);
    }
    for t in templates {
        let count = t.as_ref().matches(PLACEHOLDER).count();
        if count != 1 {
            return Err(PromptError::MalformedTemplate {
                template: t.as_ref().to_owned(),
                count,
            });
        }
    }
    let rendered = states
        .iter()
        .flat_map(|s| templates.iter().map(move |t| t.as_ref().replacen(PLACEHOLDER, s.as_ref(), 1)))
        .collect();
    Ok(PromptSet {
        states: states.iter().map(|s| s.as_ref().to_owned()).collect(),
        templates: templates.iter().map(|t| t.as_ref().to_owned()).collect(),
        rendered,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextRole {
    Normal,
    Abnormal,
    Addition,
}

/// Mean text embedding of a prompt ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextFeature {
    pub vector: Embedding,
    pub source_prompt_count: usize,
    pub role: TextRole,
}

/// Arithmetic mean of the prompt embeddings. The mean is not renormalized.
pub fn aggregate_text_feature(prompt_embeddings: &[Embedding], role: TextRole) -> Result<TextFeature, PromptError> {
    let first = prompt_embeddings.first().ok_or(PromptError::EmptyEmbeddings)?;
    let dim = first.dim();
    let mut sum = vec![0.0f64; dim];
    for e in prompt_embeddings {
        if e.dim() != dim {
            return Err(EmbeddingError::DimensionMismatch { expected: dim, found: e.dim() }.into());
        }
        for (s, &v) in sum.iter_mut().zip(e.as_slice()) {
            *s += v as f64;
        }
    }
    let n = prompt_embeddings.len() as f64;
    let mean: Vec<f64> = sum.into_iter().map(|s| s / n).collect();
    Ok(TextFeature {
        vector: Embedding::from_f64(&mean)?,
        source_prompt_count: prompt_embeddings.len(),
        role,
    })
}

/// Embeds every rendered prompt of `prompts` and aggregates them.
pub fn encode_feature(
    encoder: &dyn EncoderClient,
    prompts: &PromptSet,
    role: TextRole,
) -> Result<TextFeature, PromptError> {
    let embeddings = prompts
        .rendered()
        .iter()
        .map(|p| encoder.encode_text(p))
        .collect::<Result<Vec<_>, _>>()?;
    aggregate_text_feature(&embeddings, role)
}

/// A normality to add: the class it applies to, its short text and the
/// state phrases derived from that text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalitySpec {
    pub class_name: String,
    pub normality_text: String,
    pub phrases: Vec<String>,
}

impl NormalitySpec {
    /// Spec with no phrases yet; run [`generate_phrases`] before use.
    pub fn new(class_name: impl Into<String>, normality_text: impl Into<String>) -> Self {
        Self {
            class_name: class_name.into(),
            normality_text: normality_text.into(),
            phrases: Vec::new(),
        }
    }
}

/// `P(c_i | x)` as a softmax over cosine similarities to each class feature.
pub fn zero_shot_classify(image_feature: &Embedding, class_features: &[TextFeature]) -> Result<Vec<f64>, PromptError> {
    let vectors: Vec<&[f32]> = class_features.iter().map(|f| f.vector.as_slice()).collect();
    Ok(softmax_over(image_feature, &vectors)?)
}
