//! Prompt and response records for query recommendation.
//!
//! A prompt carries the user's query plus labeled side information; a
//! response carries optional auxiliary texts followed by exactly `N`
//! recommended queries. The wire form of a response is
//! `aux_1|aux_2|...|q_1<SEP>q_2<SEP>...<SEP>q_N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SEP: &str = "<SEP>";
pub const AUX_DELIM: char = '|';

/// How the serving component lets users click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComponentKind {
    /// Any subset of the displayed queries may be clicked.
    #[serde(rename = "multi")]
    MultiChoice,
    /// At most one displayed query is clicked.
    #[serde(rename = "single")]
    SingleChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideLabel {
    History,
    AiResponse,
    Cor,
}

impl SideLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SideLabel::History => "history",
            SideLabel::AiResponse => "ai_response",
            SideLabel::Cor => "cor",
        }
    }
}

/// One labeled side-information block.
#[derive(Debug, Clone, PartialEq)]
pub struct SideInfo<'a> {
    pub label: SideLabel,
    pub texts: Vec<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PromptRecord {
    pub user_query: String,
    pub history: Vec<String>,
    pub ai_response: String,
    pub cor_candidates: Vec<String>,
    pub n_queries: usize,
    pub component: ComponentKind,
}

impl PromptRecord {
    pub fn new(
        user_query: impl Into<String>,
        n_queries: usize,
        component: ComponentKind,
    ) -> Result<Self> {
        let user_query = user_query.into();
        if user_query.trim().is_empty() {
            return Err(Error::Argument("user query must be non-empty".into()));
        }
        if n_queries == 0 {
            return Err(Error::Argument("n_queries must be at least 1".into()));
        }
        Ok(Self {
            user_query,
            history: Vec::new(),
            ai_response: String::new(),
            cor_candidates: Vec::new(),
            n_queries,
            component,
        })
    }

    pub fn with_history(mut self, history: Vec<String>) -> Self {
        self.history = history;
        self
    }

    pub fn with_cor(mut self, cor: Vec<String>) -> Self {
        self.cor_candidates = cor;
        self
    }

    /// Side information in fixed order: history, AI response, COR candidates.
    /// Empty blocks are omitted.
    pub fn side_info(&self) -> Vec<SideInfo<'_>> {
        let mut out = Vec::with_capacity(3);
        if !self.history.is_empty() {
            out.push(SideInfo {
                label: SideLabel::History,
                texts: self.history.iter().map(String::as_str).collect(),
            });
        }
        if !self.ai_response.is_empty() {
            out.push(SideInfo {
                label: SideLabel::AiResponse,
                texts: vec![self.ai_response.as_str()],
            });
        }
        if !self.cor_candidates.is_empty() {
            out.push(SideInfo {
                label: SideLabel::Cor,
                texts: self.cor_candidates.iter().map(String::as_str).collect(),
            });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRecord {
    pub aux: Vec<String>,
    pub queries: Vec<String>,
}

impl ResponseRecord {
    pub fn new(queries: Vec<String>) -> Self {
        Self {
            aux: Vec::new(),
            queries,
        }
    }

    /// Character count of the serialized query list, the length used when
    /// pairing chosen and rejected responses.
    pub fn char_len(&self) -> usize {
        let sep = SEP.chars().count() * self.queries.len().saturating_sub(1);
        sep + self
            .queries
            .iter()
            .map(|q| q.chars().count())
            .sum::<usize>()
    }

    pub fn query_list(&self) -> String {
        self.queries.join(SEP)
    }
}

pub fn serialize_response(r: &ResponseRecord) -> Result<String> {
    if r.queries.is_empty() {
        return Err(Error::Encoding("response has no queries".into()));
    }
    for q in &r.queries {
        if q.is_empty() {
            return Err(Error::Encoding("empty query".into()));
        }
        if q.contains(SEP) || q.contains(AUX_DELIM) {
            return Err(Error::Encoding(format!(
                "query {q:?} contains a reserved delimiter"
            )));
        }
    }
    for t in &r.aux {
        if t.contains(SEP) || t.contains(AUX_DELIM) {
            return Err(Error::Encoding(format!(
                "aux text {t:?} contains a reserved delimiter"
            )));
        }
    }
    let mut out = String::new();
    for t in &r.aux {
        out.push_str(t);
        out.push(AUX_DELIM);
    }
    out.push_str(&r.queries.join(SEP));
    Ok(out)
}

pub fn parse_response(text: &str, expected_n: usize) -> Result<ResponseRecord> {
    if expected_n == 0 {
        return Err(Error::MalformedResponse(
            "expected query count must be at least 1".into(),
        ));
    }
    let (aux, block) = match text.rfind(AUX_DELIM) {
        Some(pos) => {
            let aux = text[..pos].split(AUX_DELIM).map(str::to_string).collect();
            (aux, &text[pos + 1..])
        }
        None => (Vec::new(), text),
    };
    let queries: Vec<String> = block.split(SEP).map(str::to_string).collect();
    if queries.len() != expected_n {
        return Err(Error::MalformedResponse(format!(
            "expected {expected_n} queries, found {}",
            queries.len()
        )));
    }
    if queries.iter().any(String::is_empty) {
        return Err(Error::MalformedResponse("empty query".into()));
    }
    Ok(ResponseRecord { aux, queries })
}

/// JSON form of a prompt. `n_queries` and the component kind live on the
/// enclosing record.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptWire {
    pub user_query: String,
    pub history: Vec<String>,
    pub ai_response: String,
    pub cor_candidates: Vec<String>,
}

impl PromptWire {
    pub fn from_prompt(p: &PromptRecord) -> Self {
        Self {
            user_query: p.user_query.clone(),
            history: p.history.clone(),
            ai_response: p.ai_response.clone(),
            cor_candidates: p.cor_candidates.clone(),
        }
    }

    pub fn into_prompt(self, n_queries: usize, component: ComponentKind) -> Result<PromptRecord> {
        let mut p = PromptRecord::new(self.user_query, n_queries, component)?;
        p.history = self.history;
        p.ai_response = self.ai_response;
        p.cor_candidates = self.cor_candidates;
        Ok(p)
    }
}

/// One line of an SFT annotation file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationWire {
    pub prompt: PromptWire,
    pub response: ResponseRecord,
    pub component: ComponentKind,
}

impl AnnotationWire {
    pub fn new(prompt: &PromptRecord, response: &ResponseRecord) -> Self {
        Self {
            prompt: PromptWire::from_prompt(prompt),
            response: response.clone(),
            component: prompt.component,
        }
    }

    pub fn into_pair(self) -> Result<(PromptRecord, ResponseRecord)> {
        let n = self.response.queries.len();
        let p = self.prompt.into_prompt(n, self.component)?;
        Ok((p, self.response))
    }
}
