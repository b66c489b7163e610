//! Phrase generation for a text-specified normality.
//!
//! A generator receives one UTF-8 instruction and answers with
//! newline-separated phrases. Any generator failure falls back to a fixed
//! pattern set derived from the normality text and class name.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use thiserror::Error;

use super::{NormalitySpec, PromptError};

pub const GENERATOR_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("phrase generator timed out after {0:?}")]
    Timeout(Duration),
    #[error("phrase generator transport failed: {0}")]
    Transport(String),
    #[error("phrase generator returned no phrases")]
    Empty,
}

/// Text-in, lines-out phrase source. Implementations must tolerate
/// concurrent calls.
pub trait PhraseGenerator: Send + Sync {
    fn generate(&self, instruction: &str) -> Result<Vec<String>, GeneratorError>;
}

/// Sends the instruction as the body of an HTTP POST and splits the
/// response body into lines.
#[derive(Debug, Clone)]
pub struct HttpPhraseGenerator {
    url: String,
    timeout: Duration,
}

impl HttpPhraseGenerator {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout: GENERATOR_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl PhraseGenerator for HttpPhraseGenerator {
    fn generate(&self, instruction: &str) -> Result<Vec<String>, GeneratorError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut response = agent
            .post(&self.url)
            .content_type("text/plain; charset=utf-8")
            .send(instruction)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => GeneratorError::Timeout(self.timeout),
                other => GeneratorError::Transport(other.to_string()),
            })?;
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| GeneratorError::Transport(e.to_string()))?;
        Ok(body.lines().map(str::to_owned).collect())
    }
}

/// Pipes the instruction to a subprocess's stdin and reads phrases from its
/// stdout. The process is killed when the timeout expires.
#[derive(Debug, Clone)]
pub struct CommandPhraseGenerator {
    program: String,
    args: Vec<String>,
    timeout: Duration,
}

impl CommandPhraseGenerator {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
            timeout: GENERATOR_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl PhraseGenerator for CommandPhraseGenerator {
    fn generate(&self, instruction: &str) -> Result<Vec<String>, GeneratorError> {
        let transport = |e: std::io::Error| GeneratorError::Transport(e.to_string());
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(transport)?;
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let mut stdout = child.stdout.take().expect("stdout is piped");
        let payload = instruction.to_owned();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            // a child that never reads stdin must not block the reader
            let _ = stdin.write_all(payload.as_bytes());
            drop(stdin);
            let mut out = String::new();
            let res = stdout.read_to_string(&mut out).map(|_| out);
            let _ = tx.send(res);
        });
        match rx.recv_timeout(self.timeout) {
            Ok(res) => {
                let out = res.map_err(transport)?;
                let status = child.wait().map_err(transport)?;
                if !status.success() {
                    return Err(GeneratorError::Transport(format!("generator exited with {status}")));
                }
                Ok(out.lines().map(str::to_owned).collect())
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(GeneratorError::Timeout(self.timeout))
            }
        }
    }
}

fn humanize(s: &str) -> String {
    s.trim().replace('_', " ").to_lowercase()
}

/// Instruction forwarded to a phrase generator.
pub fn instruction_for(normality_text: &str, class_name: &str) -> String {
    format!(
        "Generate concise phrases describing defects of type '{}' in {}",
        normality_text.trim(),
        humanize(class_name)
    )
}

fn clean_phrase(line: &str) -> String {
    let mut s = line.trim();
    for marker in ["- ", "* ", "• "] {
        if let Some(rest) = s.strip_prefix(marker) {
            s = rest.trim_start();
        }
    }
    // "1. foo" / "2) foo"
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            s = r.trim_start();
        }
    }
    s.trim_matches(|c| c == '"' || c == '\'').trim().to_lowercase()
}

fn dedupe(phrases: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    phrases
        .into_iter()
        .filter(|p| !p.is_empty() && seen.insert(p.clone()))
        .collect()
}

fn fallback_phrases(t: &str, class: &str) -> Vec<String> {
    vec![t.to_owned(), format!("{class} with {t}"), format!("{t} on {class}")]
}

/// Fills `spec.phrases` from `generator` when given, else from the built-in
/// patterns `{t, "<class> with <t>", "<t> on <class>"}`. Phrases come out
/// lowercase, deduplicated and in first-seen order. Generator failures are
/// logged and fall back; they never abort.
pub fn generate_phrases(
    spec: NormalitySpec,
    generator: Option<&dyn PhraseGenerator>,
) -> Result<NormalitySpec, PromptError> {
    let t = humanize(&spec.normality_text);
    let class = humanize(&spec.class_name);
    if t.is_empty() {
        return Err(PromptError::EmptyNormality);
    }
    if class.is_empty() {
        return Err(PromptError::EmptyClass);
    }
    let generated = generator.and_then(|g| {
        let instruction = instruction_for(&spec.normality_text, &spec.class_name);
        match g.generate(&instruction) {
            Ok(lines) => {
                let phrases = dedupe(lines.iter().map(|l| clean_phrase(l)));
                if phrases.is_empty() {
                    log::warn!("{}; using fallback phrases", GeneratorError::Empty);
                    None
                } else {
                    Some(phrases)
                }
            }
            Err(e) => {
                log::warn!("{e}; using fallback phrases");
                None
            }
        }
    });
    let phrases = generated.unwrap_or_else(|| dedupe(fallback_phrases(&t, &class)));
    Ok(NormalitySpec { phrases, ..spec })
}
