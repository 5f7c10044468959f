//! Partition of embedding-row ids into content tokens (ordinary text) and
//! non-content tokens (special, added, control, and reserved rows).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::TokenizerMeta;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("v_emb {v_emb} < v_tok {v_tok}")]
    EmbSmallerThanTok { v_emb: u32, v_tok: u32 },
    #[error("id {id} out of range for v_emb {v_emb}")]
    IdOutOfRange { id: u32, v_emb: u32 },
}

/// Content/non-content split of the embedding rows. Non-content covers
/// special ids, added ids, any extra configured exclusions, and reserved
/// rows `[v_tok, v_emb)` not produced by the tokenizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VocabPartition {
    pub v_emb: u32,
    pub content_ids: Vec<u32>,
    pub non_content_ids: Vec<u32>,
    #[serde(skip)]
    content_bitmap: Vec<bool>,
}

impl VocabPartition {
    pub fn build(meta: &TokenizerMeta, v_emb: u32) -> Result<Self, VocabError> {
        Self::build_with_exclusions(meta, v_emb, &[])
    }

    /// `extra_exclusions` moves further ids into the non-content set; the
    /// default is empty (the tokenizer classification stays authoritative).
    pub fn build_with_exclusions(
        meta: &TokenizerMeta,
        v_emb: u32,
        extra_exclusions: &[u32],
    ) -> Result<Self, VocabError> {
        if v_emb < meta.v_tok {
            return Err(VocabError::EmbSmallerThanTok {
                v_emb,
                v_tok: meta.v_tok,
            });
        }
        let mut non_content = vec![false; v_emb as usize];
        for &id in meta.special_ids.iter().chain(meta.added_ids.iter()) {
            non_content[id as usize] = true;
        }
        for &id in extra_exclusions {
            if id >= v_emb {
                return Err(VocabError::IdOutOfRange { id, v_emb });
            }
            non_content[id as usize] = true;
        }
        for id in meta.v_tok..v_emb {
            non_content[id as usize] = true;
        }
        let content_ids: Vec<u32> = (0..v_emb).filter(|&i| !non_content[i as usize]).collect();
        let non_content_ids: Vec<u32> = (0..v_emb).filter(|&i| non_content[i as usize]).collect();
        let content_bitmap: Vec<bool> = non_content.iter().map(|b| !b).collect();
        Ok(Self {
            v_emb,
            content_ids,
            non_content_ids,
            content_bitmap,
        })
    }

    /// Rebuild the O(1) lookup bitmap after deserialization.
    pub fn rebuild_bitmap(&mut self) {
        let mut bitmap = vec![false; self.v_emb as usize];
        for &id in &self.content_ids {
            bitmap[id as usize] = true;
        }
        self.content_bitmap = bitmap;
    }

    pub fn is_content(&self, id: u32) -> Result<bool, VocabError> {
        if id >= self.v_emb {
            return Err(VocabError::IdOutOfRange {
                id,
                v_emb: self.v_emb,
            });
        }
        Ok(self.content_bitmap[id as usize])
    }

    pub fn content_count(&self) -> usize {
        self.content_ids.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("partition serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let mut p: Self = serde_json::from_str(text)?;
        p.rebuild_bitmap();
        Ok(p)
    }
}
