use super::tokenizer::{label_token, tokenize, ASST, EOT, SYS, USER};
use super::Instance;
use crate::error::{Error, Result};
use crate::hierarchy::{Label, Level};

/// Level-specific instruction text.
pub fn system_prompt(level: Level) -> &'static str {
    match level.get() {
        1 => "Is the text sexist?",
        2 => "Source intention?",
        _ => "Sexism categories?",
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prompt {
    pub tokens: Vec<usize>,
    /// Index right after `<ASST>`; class scores are read one position
    /// earlier.
    pub answer_pos: usize,
    pub truncated: bool,
}

impl Prompt {
    /// Tokens up to and including `<ASST>`.
    pub fn input(&self) -> &[usize] {
        &self.tokens[..self.answer_pos]
    }
}

/// `<SYS> system <EOT> <USER> text <EOT> <ASST> [answer]`, with text bytes
/// cut so the whole fits `max_seq`.
pub fn format_prompt(inst: &Instance, level: Level, answer: Option<Label>, max_seq: usize) -> Result<Prompt> {
    format_text(system_prompt(level), &inst.text, level, answer, max_seq)
}

pub(crate) fn format_text(
    system: &str,
    text: &str,
    level: Level,
    answer: Option<Label>,
    max_seq: usize,
) -> Result<Prompt> {
    if let Some(a) = answer {
        if a.level() != level {
            return Err(Error::Data(format!("answer {a} is not a level-{level} label")));
        }
    }
    let sys = tokenize(system);
    let body = tokenize(text);
    let skeleton = sys.len() + 5 + usize::from(answer.is_some());
    if skeleton > max_seq {
        return Err(Error::Data(format!(
            "prompt skeleton of {skeleton} tokens exceeds max_seq {max_seq}"
        )));
    }
    let keep = body.len().min(max_seq - skeleton);
    let mut tokens = Vec::with_capacity(skeleton + keep);
    tokens.push(SYS);
    tokens.extend_from_slice(&sys);
    tokens.push(EOT);
    tokens.push(USER);
    tokens.extend_from_slice(&body[..keep]);
    tokens.push(EOT);
    tokens.push(ASST);
    let answer_pos = tokens.len();
    if let Some(a) = answer {
        tokens.push(label_token(a));
    }
    Ok(Prompt {
        tokens,
        answer_pos,
        truncated: keep < body.len(),
    })
}
