//! Micro-vocabulary and prompt templates.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const PLACEHOLDER: &str = "<S>";
const TEMPLATE_WORDS: [&str; 3] = ["a", "style", "of"];

/// Longest prompt any template produces: `<bos> a <S> style of a [class] <eos>`.
pub const LONGEST_PROMPT: usize = 8;

pub type TokenId = u32;

/// Whole-word vocabulary: special tokens, template words, the style
/// placeholder and one token per class name. Ids are dense.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    num_classes: usize,
}

impl Vocabulary {
    /// Reserved tokens occupy ids `0..6`; class `m` gets id `6 + m`.
    pub fn new<S: AsRef<str>>(class_names: &[S]) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::BadVocabulary("no class names".into()));
        }
        let mut tokens: Vec<String> = [BOS, EOS]
            .into_iter()
            .chain(TEMPLATE_WORDS)
            .chain([PLACEHOLDER])
            .map(str::to_owned)
            .collect();
        for name in class_names {
            let name = name.as_ref();
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(Error::BadVocabulary(format!(
                    "class name {name:?} must be a single non-empty word"
                )));
            }
            tokens.push(name.to_owned());
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::BadVocabulary(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self {
            tokens,
            index,
            num_classes: class_names.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn placeholder(&self) -> TokenId {
        self.index[PLACEHOLDER]
    }

    pub fn class_token(&self, class: usize) -> Result<TokenId> {
        if class >= self.num_classes {
            return Err(Error::UnknownClass(format!("class index {class}")));
        }
        Ok((self.tokens.len() - self.num_classes + class) as TokenId)
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        let first_class = self.tokens.len() - self.num_classes;
        match self.id(name) {
            Some(id) if id as usize >= first_class => Ok(id as usize - first_class),
            _ => Err(Error::UnknownClass(name.to_owned())),
        }
    }

    pub fn class_names(&self) -> &[String] {
        &self.tokens[self.tokens.len() - self.num_classes..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    /// "a <S> style of a"
    Style,
    /// "[class]"
    Content,
    /// "a <S> style of a [class]"
    StyleContent,
}

/// Which prompt to build. Indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptSpec {
    pub kind: PromptKind,
    pub style_index: Option<usize>,
    pub class_index: Option<usize>,
}

impl PromptSpec {
    pub fn style(i: usize) -> Self {
        Self {
            kind: PromptKind::Style,
            style_index: Some(i),
            class_index: None,
        }
    }

    pub fn content(m: usize) -> Self {
        Self {
            kind: PromptKind::Content,
            style_index: None,
            class_index: Some(m),
        }
    }

    pub fn style_content(i: usize, m: usize) -> Self {
        Self {
            kind: PromptKind::StyleContent,
            style_index: Some(i),
            class_index: Some(m),
        }
    }

    fn validate(&self) -> Result<()> {
        let kind = match self.kind {
            PromptKind::Style => "Style",
            PromptKind::Content => "Content",
            PromptKind::StyleContent => "StyleContent",
        };
        let needs_style = self.kind != PromptKind::Content;
        let needs_class = self.kind != PromptKind::Style;
        match (needs_style, self.style_index) {
            (true, None) => {
                return Err(Error::MissingIndex {
                    kind,
                    index: "style",
                })
            }
            (false, Some(_)) => {
                return Err(Error::UnexpectedIndex {
                    kind,
                    index: "style",
                })
            }
            _ => {}
        }
        match (needs_class, self.class_index) {
            (true, None) => Err(Error::MissingIndex {
                kind,
                index: "class",
            }),
            (false, Some(_)) => Err(Error::UnexpectedIndex {
                kind,
                index: "class",
            }),
            _ => Ok(()),
        }
    }
}

/// Tokenizes a prompt. The placeholder appears exactly once unless the
/// prompt is a pure content prompt.
pub fn build_prompt(spec: &PromptSpec, vocab: &Vocabulary) -> Result<Vec<TokenId>> {
    spec.validate()?;
    let id = |t: &str| vocab.index[t];
    let mut out = vec![id(BOS)];
    if spec.kind != PromptKind::Content {
        out.extend([id("a"), vocab.placeholder(), id("style"), id("of"), id("a")]);
    }
    if let Some(m) = spec.class_index {
        out.push(vocab.class_token(m)?);
    }
    out.push(id(EOS));
    Ok(out)
}
