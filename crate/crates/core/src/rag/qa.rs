use serde::{Deserialize, Serialize};

use super::{
    build_prompt, hybrid_search, redact, KnowledgeBase, Query, RagError, RetrievalHit, DEFAULT_TEMPLATE,
    DEFAULT_TOKEN_BUDGET,
};
use crate::num::Scalar;
use crate::smmf::{ChatMessage, ModelClient, ModelRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct KnowledgeAnswer<F: Scalar = f64> {
    pub answer: String,
    pub hits: Vec<RetrievalHit<F>>,
    /// The redacted prompt sent to the model.
    pub prompt: String,
}

/// Knowledge-base QA: hybrid retrieval, prompt assembly, redaction, one
/// model call.
pub fn answer_question<F: Scalar>(
    kb: &KnowledgeBase<F>,
    question: &str,
    k: usize,
    client: &dyn ModelClient,
    model: &str,
) -> Result<KnowledgeAnswer<F>, RagError> {
    let query = Query::new(question, k, kb.encoder_dim())?;
    let hits = hybrid_search(kb, &query)?;
    let prompt = redact(&build_prompt(question, &hits, kb, DEFAULT_TEMPLATE, DEFAULT_TOKEN_BUDGET)?);
    let resp = client.complete(&ModelRequest::new(model, vec![ChatMessage::user(prompt.clone())]))?;
    Ok(KnowledgeAnswer { answer: resp.content, hits, prompt })
}
