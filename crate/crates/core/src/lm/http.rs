//! Completion-service backend: every capability renders a prompt from the
//! prompt library, issues one JSON completion request, and parses the
//! response with fixed markers. Completions that do not parse surface as
//! errors carrying the raw text — never silently reinterpreted.

use std::io::Write;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{
    AnswerMode, CheckVerdict, DecompositionStep, EvalContext, LmBackend, Subquestion,
    TranscriptStep,
};

/// Environment variable the auth token is read from. The token is sent as a
/// bearer header and is never written to config files, traces, or logs.
pub const AUTH_TOKEN_ENV: &str = "HOPEVAL_API_TOKEN";

/// Decoding parameters forwarded with every completion request.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecodingParams {
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            max_tokens: 128,
            temperature: 0.0,
            stop: vec!["\n\n".to_string()],
        }
    }
}

/// One prompt template per capability. Templates are data, not code: the
/// built-in set ships with the crate and any directory with the same six
/// file names can replace it without a rebuild.
#[derive(Clone, Debug)]
pub struct PromptLibrary {
    pub cloze: String,
    pub multihop_direct: String,
    pub multihop_cot: String,
    pub decompose: String,
    pub subanswer: String,
    pub check: String,
}

impl PromptLibrary {
    pub fn builtin() -> Self {
        PromptLibrary {
            cloze: include_str!("../../prompts/cloze.txt").to_string(),
            multihop_direct: include_str!("../../prompts/multihop_direct.txt").to_string(),
            multihop_cot: include_str!("../../prompts/multihop_cot.txt").to_string(),
            decompose: include_str!("../../prompts/decompose.txt").to_string(),
            subanswer: include_str!("../../prompts/subanswer.txt").to_string(),
            check: include_str!("../../prompts/check.txt").to_string(),
        }
    }

    /// Load all six templates from a directory of `<capability>.txt` files.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| std::fs::read_to_string(dir.join(name));
        Ok(PromptLibrary {
            cloze: read("cloze.txt")?,
            multihop_direct: read("multihop_direct.txt")?,
            multihop_cot: read("multihop_cot.txt")?,
            decompose: read("decompose.txt")?,
            subanswer: read("subanswer.txt")?,
            check: read("check.txt")?,
        })
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    capability: &'a str,
    attempts: u32,
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    completion: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

struct ConcurrencyGate {
    limit: u32,
    in_flight: Mutex<u32>,
    freed: Condvar,
}

/// Language-model backend speaking JSON over HTTP:
/// request `{prompt, max_tokens, temperature, stop}`, response `{text}`.
/// Transport failures retry with exponential backoff; unparseable
/// completions never retry.
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    prompts: PromptLibrary,
    params: DecodingParams,
    max_attempts: u32,
    backoff: Duration,
    auth_token: Option<String>,
    trace: Option<Mutex<std::fs::File>>,
    gate: Option<ConcurrencyGate>,
    name: String,
}

impl HttpBackend {
    /// Default timeout 60 s, 3 attempts, 250 ms initial backoff. The auth
    /// token, if any, comes from [`AUTH_TOKEN_ENV`] at construction.
    pub fn new(
        endpoint: impl Into<String>,
        prompts: PromptLibrary,
        params: DecodingParams,
    ) -> Self {
        Self::with_timeout(endpoint, prompts, params, Duration::from_secs(60))
    }

    pub fn with_timeout(
        endpoint: impl Into<String>,
        prompts: PromptLibrary,
        params: DecodingParams,
        timeout: Duration,
    ) -> Self {
        let endpoint = endpoint.into();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpBackend {
            agent,
            name: format!("http:{endpoint}"),
            endpoint,
            prompts,
            params,
            max_attempts: 3,
            backoff: Duration::from_millis(250),
            auth_token: std::env::var(AUTH_TOKEN_ENV).ok(),
            trace: None,
            gate: None,
        }
    }

    pub fn with_retry(mut self, max_attempts: u32, backoff: Duration) -> Self {
        assert!(max_attempts >= 1, "at least one attempt is required");
        self.max_attempts = max_attempts;
        self.backoff = backoff;
        self
    }

    /// Append raw prompt/completion records to a JSONL trace file.
    pub fn with_trace_file(mut self, path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        self.trace = Some(Mutex::new(file));
        Ok(self)
    }

    /// Cap the number of concurrent in-flight requests.
    pub fn with_concurrency_limit(mut self, limit: u32) -> Self {
        assert!(limit >= 1, "concurrency limit must be at least 1");
        self.gate = Some(ConcurrencyGate {
            limit,
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        });
        self
    }

    fn write_trace(&self, record: &TraceRecord<'_>) {
        if let Some(trace) = &self.trace {
            let mut file = trace.lock().expect("trace mutex");
            if let Ok(line) = serde_json::to_string(record) {
                let _ = writeln!(file, "{line}");
            }
        }
    }

    /// One logical completion: up to `max_attempts` transport tries, then a
    /// single parse of the `{text}` body. Returns the completion text and
    /// the number of attempts used.
    fn complete(&self, capability: &'static str, prompt: &str) -> Result<(String, u32)> {
        let _slot = self.gate.as_ref().map(|g| {
            let mut inflight = g.in_flight.lock().expect("gate mutex");
            while *inflight >= g.limit {
                inflight = g.freed.wait(inflight).expect("gate condvar");
            }
            *inflight += 1;
            scopeguard(g)
        });

        let request = CompletionRequest {
            prompt,
            max_tokens: self.params.max_tokens,
            temperature: self.params.temperature,
            stop: &self.params.stop,
        };
        let mut last_error = String::new();
        for attempt in 1..=self.max_attempts {
            let mut call = self.agent.post(&self.endpoint);
            if let Some(token) = &self.auth_token {
                call = call.header("Authorization", &format!("Bearer {token}"));
            }
            let sent = call.send_json(&request);
            match sent {
                Ok(mut response) => {
                    let raw = match response.body_mut().read_to_string() {
                        Ok(raw) => raw,
                        Err(e) => {
                            last_error = format!("reading response body: {e}");
                            self.maybe_backoff(attempt);
                            continue;
                        }
                    };
                    return match serde_json::from_str::<CompletionResponse>(&raw) {
                        Ok(body) => {
                            self.write_trace(&TraceRecord {
                                capability,
                                attempts: attempt,
                                prompt,
                                completion: Some(&body.text),
                                error: None,
                            });
                            Ok((body.text, attempt))
                        }
                        Err(e) => {
                            let err = Error::CompletionParse {
                                message: format!("completion body is not `{{\"text\": ...}}`: {e}"),
                                raw,
                            };
                            self.write_trace(&TraceRecord {
                                capability,
                                attempts: attempt,
                                prompt,
                                completion: None,
                                error: Some(err.to_string()),
                            });
                            Err(err)
                        }
                    };
                }
                Err(e) => {
                    last_error = e.to_string();
                    self.maybe_backoff(attempt);
                }
            }
        }
        let err = Error::Transport {
            attempts: self.max_attempts as usize,
            message: last_error,
        };
        self.write_trace(&TraceRecord {
            capability,
            attempts: self.max_attempts,
            prompt,
            completion: None,
            error: Some(err.to_string()),
        });
        Err(err)
    }

    fn maybe_backoff(&self, attempt: u32) {
        if attempt < self.max_attempts {
            std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
        }
    }
}

struct SlotGuard<'a>(&'a ConcurrencyGate);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("gate mutex") -= 1;
        self.0.freed.notify_one();
    }
}

fn scopeguard(gate: &ConcurrencyGate) -> SlotGuard<'_> {
    SlotGuard(gate)
}

/// First non-empty line, trimmed.
fn first_line(completion: &str) -> Option<&str> {
    completion.lines().map(str::trim).find(|l| !l.is_empty())
}

/// Text after the last `marker`, up to the end of that line, trimmed.
fn after_last_marker<'a>(completion: &'a str, marker: &str) -> Option<&'a str> {
    let at = completion.rfind(marker)?;
    let rest = &completion[at + marker.len()..];
    Some(rest.lines().next().unwrap_or("").trim())
}

fn bare_answer(completion: &str, raw_context: &str) -> Result<String> {
    first_line(completion)
        .map(str::to_string)
        .ok_or_else(|| Error::CompletionParse {
            message: "empty completion where an answer line was expected".into(),
            raw: raw_context.to_string(),
        })
}

fn parse_cot(completion: &str) -> Result<String> {
    match after_last_marker(completion, "Answer:") {
        Some(answer) if !answer.is_empty() => Ok(answer.to_string()),
        _ => Err(Error::CompletionParse {
            message: "no `Answer:` line in chain-of-thought completion".into(),
            raw: completion.to_string(),
        }),
    }
}

fn parse_decomposition(completion: &str) -> Result<DecompositionStep> {
    let sub_at = completion.find("Subquestion:");
    let final_at = completion.find("Final answer:");
    let step = match (sub_at, final_at) {
        (Some(s), Some(f)) if s < f => DecompositionStep::Subquestion(Subquestion {
            text: after_last_marker(&completion[..f], "Subquestion:")
                .unwrap_or("")
                .to_string(),
            resolved_subject: None,
            relation: None,
        }),
        (_, Some(_)) => DecompositionStep::Final(
            after_last_marker(completion, "Final answer:")
                .unwrap_or("")
                .to_string(),
        ),
        (Some(_), None) => {
            let text = completion[sub_at.unwrap()..]
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("Subquestion:")
                .trim()
                .to_string();
            DecompositionStep::Subquestion(Subquestion {
                text,
                resolved_subject: None,
                relation: None,
            })
        }
        (None, None) => {
            return Err(Error::CompletionParse {
                message: "neither `Subquestion:` nor `Final answer:` found".into(),
                raw: completion.to_string(),
            })
        }
    };
    let empty = match &step {
        DecompositionStep::Subquestion(sq) => sq.text.is_empty(),
        DecompositionStep::Final(a) => a.is_empty(),
    };
    if empty {
        return Err(Error::CompletionParse {
            message: "decomposition marker present but the line is empty".into(),
            raw: completion.to_string(),
        });
    }
    Ok(step)
}

fn parse_check(completion: &str) -> Result<CheckVerdict> {
    if completion.contains("does not contradict") {
        return Ok(CheckVerdict::Consistent);
    }
    if completion.contains("contradicts") {
        let adjusted = after_last_marker(completion, "intermediate answer is:")
            .map(|s| s.trim_end_matches('.').trim().to_string())
            .filter(|s| !s.is_empty());
        return Ok(CheckVerdict::Contradicts { adjusted });
    }
    Err(Error::CompletionParse {
        message: "no contradiction judgment found".into(),
        raw: completion.to_string(),
    })
}

impl LmBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn answer_cloze(&self, prompt: &str) -> Result<String> {
        let full = self.prompts.cloze.replace("{prompt}", prompt);
        let (completion, _) = self.complete("cloze", &full)?;
        bare_answer(&completion, &completion)
    }

    fn answer_multihop(
        &self,
        question: &str,
        mode: AnswerMode,
        _ctx: Option<&EvalContext>,
    ) -> Result<String> {
        match mode {
            AnswerMode::Direct => {
                let full = self.prompts.multihop_direct.replace("{question}", question);
                let (completion, _) = self.complete("multihop-direct", &full)?;
                bare_answer(&completion, &completion)
            }
            AnswerMode::Cot => {
                let full = self.prompts.multihop_cot.replace("{question}", question);
                let (completion, _) = self.complete("multihop-cot", &full)?;
                parse_cot(&completion)
            }
        }
    }

    fn propose_subquestion(
        &self,
        question: &str,
        transcript: &[TranscriptStep],
        _ctx: Option<&EvalContext>,
    ) -> Result<DecompositionStep> {
        let block = if transcript.is_empty() {
            String::new()
        } else {
            let lines: Vec<String> = transcript
                .iter()
                .map(|s| format!("Subquestion: {}\nAnswer: {}", s.subquestion, s.answer))
                .collect();
            format!("{}\n", lines.join("\n"))
        };
        let full = self
            .prompts
            .decompose
            .replace("{question}", question)
            .replace("{transcript}", &block);
        let (completion, _) = self.complete("decompose", &full)?;
        parse_decomposition(&completion)
    }

    fn answer_subquestion(&self, subquestion: &str) -> Result<String> {
        let full = self.prompts.subanswer.replace("{subquestion}", subquestion);
        let (completion, _) = self.complete("subanswer", &full)?;
        bare_answer(&completion, &completion)
    }

    fn check_contradiction(
        &self,
        statement: &str,
        tentative: &str,
        subquestion: &str,
    ) -> Result<CheckVerdict> {
        let full = self
            .prompts
            .check
            .replace("{subquestion}", subquestion)
            .replace("{tentative}", tentative)
            .replace("{statement}", statement);
        let (completion, _) = self.complete("check", &full)?;
        parse_check(&completion)
    }
}
