//! Token ↔ id table shared by every serialized model artifact.
//!
//! Ids follow the canonical order: `<pad>`, `<bos>`, the binary and unary
//! operators, `C`, `x1`..`x9`, then the 101 reward levels.

use std::collections::HashMap;

use crate::expr::{Token, MAX_VOCAB_VARS};
use crate::reward::RewardLevel;

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<Token>,
    ids: HashMap<Token, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut tokens = vec![Token::Pad, Token::Bos];
        tokens.extend(Token::expression_alphabet(MAX_VOCAB_VARS));
        tokens.extend(RewardLevel::all().map(Token::Reward));
        let ids = tokens.iter().enumerate().map(|(i, &t)| (t, i as u32)).collect();
        Self { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, tok: Token) -> u32 {
        self.ids[&tok]
    }

    pub fn token(&self, id: u32) -> Option<Token> {
        self.tokens.get(id as usize).copied()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn bos_id(&self) -> u32 {
        1
    }

    pub fn encode(&self, tokens: &[Token]) -> Vec<u32> {
        tokens.iter().map(|&t| self.id(t)).collect()
    }

    /// `{"<pad>":0,"<bos>":1,"+":2,...}` in id order.
    pub fn to_json(&self) -> String {
        let mut map = serde_json::Map::new();
        for (i, t) in self.tokens.iter().enumerate() {
            map.insert(t.to_string(), serde_json::Value::from(i));
        }
        serde_json::to_string(&map).expect("string keys serialize")
    }
}
