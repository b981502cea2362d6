//! Retriever and context builder: user query in, grounded prompt out.
//!
//! Retrieved chunks are packed greedily in rank order; a chunk is included
//! only if the whole prompt (template + packed chunks + question) plus the
//! generation cap still fits in the context window. Chunks that do not fit
//! are skipped whole — never truncated mid-chunk — and packing continues with
//! the next rank, so grounding text stays intact.

use serde::Serialize;
use thiserror::Error;

use crate::config::RuntimeConfig;
use crate::embed::{EmbedError, EmbeddingProvider};
use crate::index::{IndexError, SearchHit, VectorIndex};
use crate::ingest::{estimate_tokens, CHARS_PER_TOKEN};
use crate::llm::{GenerationBackend, GenerationEvent, GenerationParams, LlmError};

#[derive(Debug, Error)]
pub enum RagError {
    #[error("query must not be empty")]
    EmptyQuery,
    #[error("max_output_tokens ({max_output_tokens}) must be smaller than n_ctx ({n_ctx})")]
    InvalidBudget { max_output_tokens: u32, n_ctx: u32 },
    #[error(
        "context budget exceeded: template and question alone need {needed_tokens} tokens \
         but only {available_tokens} fit ahead of the generation cap; raise N_CTX or shorten \
         the question"
    )]
    BudgetExceeded {
        needed_tokens: usize,
        available_tokens: usize,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Generation(#[from] LlmError),
}

/// Prompt layout: a system preamble, one block per packed chunk, then the
/// question. Rendering is plain slot substitution and fully deterministic.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub system_preamble: String,
    /// Slots `{origin}` and `{text}`, each filled exactly once.
    pub context_block_format: String,
    /// Slot `{query}`, filled exactly once.
    pub question_format: String,
}

pub const DEFAULT_SYSTEM_PREAMBLE: &str = "You are a course assistant. Answer the question using only the context blocks below and name the sources you relied on. If the context does not contain the answer, say so plainly.\n\n";
pub const DEFAULT_CONTEXT_BLOCK_FORMAT: &str = "[source: {origin}]\n{text}\n\n";
pub const DEFAULT_QUESTION_FORMAT: &str = "Question: {query}\nAnswer:";

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system_preamble: DEFAULT_SYSTEM_PREAMBLE.to_string(),
            context_block_format: DEFAULT_CONTEXT_BLOCK_FORMAT.to_string(),
            question_format: DEFAULT_QUESTION_FORMAT.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn render_block(&self, origin: &str, text: &str) -> String {
        self.context_block_format
            .replacen("{origin}", origin, 1)
            .replacen("{text}", text, 1)
    }

    pub fn render_question(&self, query: &str) -> String {
        self.question_format.replacen("{query}", query, 1)
    }
}

/// Where a packed chunk came from, for the answer's source list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Citation {
    pub origin: String,
    pub seq: usize,
}

/// Accounting record for one built prompt.
#[derive(Debug)]
pub struct RetrievedContext {
    /// All retrieved hits, in rank order, texts resolved.
    pub hits: Vec<SearchHit>,
    /// chunk_ids actually packed, a rank-order subsequence of `hits`.
    pub included: Vec<String>,
    pub prompt_token_estimate: usize,
    pub citations: Vec<Citation>,
}

/// Embed the query and return the top-k hits with texts and metadata.
/// An empty index yields an empty hit list, not an error.
pub async fn retrieve(
    index: &VectorIndex,
    provider: &dyn EmbeddingProvider,
    query: &str,
    k: usize,
) -> Result<Vec<SearchHit>, RagError> {
    if query.is_empty() {
        return Err(RagError::EmptyQuery);
    }
    if index.is_empty() {
        return Ok(Vec::new());
    }
    let vectors = provider.embed_texts(&[query.to_string()]).await?;
    Ok(index.search_top_k(&vectors[0], k)?)
}

/// Greedily pack hits into the prompt while
/// `estimate_tokens(prompt) + max_output_tokens <= n_ctx` holds.
///
/// The token estimate is ceil(chars / 4), so the budget check works directly
/// on character counts: the prompt may hold at most
/// `(n_ctx - max_output_tokens) * 4` characters. At minimum the preamble and
/// question must fit; otherwise the call fails rather than truncating.
pub fn build_context(
    hits: Vec<SearchHit>,
    query: &str,
    template: &PromptTemplate,
    n_ctx: u32,
    max_output_tokens: u32,
) -> Result<(RetrievedContext, String), RagError> {
    if max_output_tokens >= n_ctx {
        return Err(RagError::InvalidBudget {
            max_output_tokens,
            n_ctx,
        });
    }
    let max_prompt_chars = (n_ctx - max_output_tokens) as usize * CHARS_PER_TOKEN;
    let question = template.render_question(query);
    let base_chars = template.system_preamble.chars().count() + question.chars().count();
    if base_chars > max_prompt_chars {
        return Err(RagError::BudgetExceeded {
            needed_tokens: estimate_tokens(&template.system_preamble) + estimate_tokens(&question),
            available_tokens: (n_ctx - max_output_tokens) as usize,
        });
    }

    let mut total_chars = base_chars;
    let mut blocks = String::new();
    let mut included = Vec::new();
    let mut citations = Vec::new();
    for hit in &hits {
        let block = template.render_block(&hit.metadata.origin, &hit.text);
        let block_chars = block.chars().count();
        if total_chars + block_chars > max_prompt_chars {
            continue; // skip whole chunk, try the next rank
        }
        total_chars += block_chars;
        blocks.push_str(&block);
        included.push(hit.chunk_id.clone());
        citations.push(Citation {
            origin: hit.metadata.origin.clone(),
            seq: hit.metadata.seq,
        });
    }

    let prompt = format!("{}{}{}", template.system_preamble, blocks, question);
    let prompt_token_estimate = estimate_tokens(&prompt);
    debug_assert!(prompt_token_estimate + max_output_tokens as usize <= n_ctx as usize);
    Ok((
        RetrievedContext {
            hits,
            included,
            prompt_token_estimate,
            citations,
        },
        prompt,
    ))
}

/// The generated answer plus the sources of the chunks that grounded it.
#[derive(Debug)]
pub struct AnswerOutcome {
    pub text: String,
    pub citations: Vec<Citation>,
    pub prompt_token_estimate: usize,
}

/// Full pipeline for one question: retrieve, build the grounded prompt,
/// generate. Budget problems surface as errors, never as silent truncation.
pub async fn answer_query(
    query: &str,
    index: &VectorIndex,
    provider: &dyn EmbeddingProvider,
    backend: &dyn GenerationBackend,
    template: &PromptTemplate,
    config: &RuntimeConfig,
) -> Result<AnswerOutcome, RagError> {
    let hits = retrieve(index, provider, query, config.top_k).await?;
    let (context, prompt) =
        build_context(hits, query, template, config.n_ctx, config.max_output_tokens)?;
    let params = GenerationParams::from_config(config);
    let mut sink = |_: &GenerationEvent| {};
    let result = backend.generate(&prompt, &params, &mut sink).await?;
    Ok(AnswerOutcome {
        text: result.text,
        citations: context.citations,
        prompt_token_estimate: context.prompt_token_estimate,
    })
}
