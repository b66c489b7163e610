use std::fs;
use std::path::Path;

use super::{compose_prompts, PromptError, PromptSet};

const TEMPLATES: &str = include_str!("../../assets/templates.txt");
const NORMAL_STATES: &str = include_str!("../../assets/normal_states.txt");
const ABNORMAL_STATES: &str = include_str!("../../assets/abnormal_states.txt");

/// Token in state assets replaced by the (space-separated) class name.
pub const CLASS_TOKEN: &str = "{class}";

/// Non-empty lines of an asset file, with `#` comment lines skipped.
pub fn parse_asset_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

/// Template list plus normal and abnormal state phrases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptAssets {
    pub templates: Vec<String>,
    pub normal_states: Vec<String>,
    pub abnormal_states: Vec<String>,
}

impl Default for PromptAssets {
    fn default() -> Self {
        Self {
            templates: parse_asset_lines(TEMPLATES),
            normal_states: parse_asset_lines(NORMAL_STATES),
            abnormal_states: parse_asset_lines(ABNORMAL_STATES),
        }
    }
}

impl PromptAssets {
    /// Loads any of the three lists from files, keeping the shipped default
    /// for the ones not given.
    pub fn load(
        templates: Option<&Path>,
        normal_states: Option<&Path>,
        abnormal_states: Option<&Path>,
    ) -> std::io::Result<Self> {
        let mut assets = Self::default();
        if let Some(p) = templates {
            assets.templates = parse_asset_lines(&fs::read_to_string(p)?);
        }
        if let Some(p) = normal_states {
            assets.normal_states = parse_asset_lines(&fs::read_to_string(p)?);
        }
        if let Some(p) = abnormal_states {
            assets.abnormal_states = parse_asset_lines(&fs::read_to_string(p)?);
        }
        Ok(assets)
    }

    pub fn normal_prompts(&self, class_name: &str) -> Result<PromptSet, PromptError> {
        compose_prompts(&fill_class(&self.normal_states, class_name), &self.templates)
    }

    pub fn abnormal_prompts(&self, class_name: &str) -> Result<PromptSet, PromptError> {
        compose_prompts(&fill_class(&self.abnormal_states, class_name), &self.templates)
    }

    pub fn addition_prompts(&self, phrases: &[String]) -> Result<PromptSet, PromptError> {
        compose_prompts(phrases, &self.templates)
    }
}

fn fill_class(states: &[String], class_name: &str) -> Vec<String> {
    let name = class_name.replace('_', " ");
    states.iter().map(|s| s.replace(CLASS_TOKEN, &name)).collect()
}
