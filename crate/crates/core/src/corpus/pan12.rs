//! PAN 2012 chat-log corpus: XML parsing, conversation filtering and
//! labeling from the predator id list.
//!
//! ```xml
//! <conversations>
//!   <conversation id="...">
//!     <message line="1">
//!       <author>...</author>
//!       <time>03:20</time>
//!       <text>...</text>
//!     </message>
//!   </conversation>
//! </conversations>
//! ```

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::LabeledExample;

/// Minimum number of messages a kept conversation must have.
pub const MIN_MESSAGES: usize = 7;
/// Exact number of distinct authors a kept conversation must have.
pub const REQUIRED_AUTHORS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub author_id: String,
    pub line_no: usize,
    pub time: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub messages: Vec<Message>,
}

impl Conversation {
    pub fn distinct_authors(&self) -> usize {
        self.messages
            .iter()
            .map(|m| m.author_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Messages joined in order as `author: text` lines.
    pub fn render(&self) -> String {
        let lines: Vec<String> = self
            .messages
            .iter()
            .map(|m| format!("{}: {}", m.author_id, m.text))
            .collect();
        lines.join("\n")
    }
}

pub fn parse_pan12_xml(path: &Path) -> Result<Vec<Conversation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pan12_str(&text)
}

fn child_text<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Option<String> {
    node.children()
        .find(|c| c.has_tag_name(name))
        .map(|c| c.text().unwrap_or("").to_string())
}

/// Parses a whole document; nothing is returned unless all of it is valid.
pub fn parse_pan12_str(xml: &str) -> Result<Vec<Conversation>> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| {
        let pos = e.pos();
        Error::Parse {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let root = doc.root_element();
    if !root.has_tag_name("conversations") {
        return Err(Error::Schema(format!(
            "root element is <{}>, expected <conversations>",
            root.tag_name().name()
        )));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for conv in root.children().filter(|n| n.has_tag_name("conversation")) {
        let id = conv
            .attribute("id")
            .ok_or_else(|| {
                let pos = doc.text_pos_at(conv.range().start);
                Error::Schema(format!(
                    "conversation at line {} has no id attribute",
                    pos.row
                ))
            })?
            .to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Schema(format!("conversation id {id} appears twice")));
        }
        let mut messages = Vec::new();
        for (k, msg) in conv
            .children()
            .filter(|n| n.has_tag_name("message"))
            .enumerate()
        {
            let author_id = child_text(msg, "author")
                .map(|a| a.trim().to_string())
                .filter(|a| !a.is_empty())
                .ok_or_else(|| {
                    Error::Schema(format!(
                        "message {} of conversation {id} has no author",
                        k + 1
                    ))
                })?;
            let line_no = match msg.attribute("line") {
                Some(l) => l.trim().parse().map_err(|_| {
                    Error::Schema(format!(
                        "message {} of conversation {id} has non-numeric line {l:?}",
                        k + 1
                    ))
                })?,
                None => k + 1,
            };
            messages.push(Message {
                author_id,
                line_no,
                time: child_text(msg, "time"),
                text: child_text(msg, "text").unwrap_or_default(),
            });
        }
        out.push(Conversation { id, messages });
    }
    Ok(out)
}

/// How many conversations each rule removed. A conversation failing the
/// author rule is counted there even if it is also too short.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub input: usize,
    pub kept: usize,
    pub removed_author_count: usize,
    pub removed_too_short: usize,
}

/// Keeps conversations with exactly two distinct authors and at least
/// seven messages.
pub fn filter_conversations(convs: &[Conversation]) -> (Vec<Conversation>, FilterStats) {
    let mut stats = FilterStats {
        input: convs.len(),
        ..FilterStats::default()
    };
    let mut kept = Vec::new();
    for c in convs {
        if c.distinct_authors() != REQUIRED_AUTHORS {
            stats.removed_author_count += 1;
        } else if c.messages.len() < MIN_MESSAGES {
            stats.removed_too_short += 1;
        } else {
            kept.push(c.clone());
        }
    }
    stats.kept = kept.len();
    (kept, stats)
}

/// Label 1 when any author is a known predator, else 0.
pub fn label_conversations(
    convs: &[Conversation],
    predator_ids: &HashSet<String>,
) -> Vec<LabeledExample> {
    convs
        .iter()
        .map(|c| {
            let positive = c
                .messages
                .iter()
                .any(|m| predator_ids.contains(&m.author_id));
            LabeledExample {
                text: c.render(),
                label: usize::from(positive),
                source_id: Some(c.id.clone()),
            }
        })
        .collect()
}

/// One author id per line; blank lines are ignored.
pub fn load_predator_ids(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::data(format!(
            "cannot read predator id list {}: {e}",
            path.display()
        ))
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}
