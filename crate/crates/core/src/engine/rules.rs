//! Trigger rules carried in memory segments.
//!
//! A segment whose content has the form `on <keyword>: <action>` acts as a
//! conditional behavior for the agent holding it. Actions:
//!
//! ```text
//! read <key>
//! write <key> <content...>
//! invoke <tool> [target]
//! terminate <agent>
//! ```
//!
//! Rules fire only on messages delivered to the holder, and only when the
//! message text contains the keyword (ASCII case-insensitive).

use crate::memory::{MemoryStore, SegId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RuleAction {
    Read { key: String },
    Write { key: String, content: String },
    Invoke { tool: String, target: Option<String> },
    Terminate { agent: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rule {
    pub seg_id: SegId,
    pub keyword: String,
    pub action: RuleAction,
}

/// Parses one segment body. Returns `None` for anything that is not a
/// well-formed rule.
pub fn parse_rule(content: &str) -> Option<(String, RuleAction)> {
    let rest = content.trim().strip_prefix("on ")?;
    let (keyword, action) = rest.split_once(':')?;
    let keyword = keyword.trim();
    if keyword.is_empty() || keyword.contains(char::is_whitespace) {
        return None;
    }
    let mut words = action.split_whitespace();
    let verb = words.next()?;
    let action = match verb {
        "read" => RuleAction::Read {
            key: one(words)?,
        },
        "write" => {
            let key = words.next()?.to_owned();
            let content = words.collect::<Vec<_>>().join(" ");
            RuleAction::Write { key, content }
        }
        "invoke" => {
            let tool = words.next()?.to_owned();
            let target = words.next().map(str::to_owned);
            if words.next().is_some() {
                return None;
            }
            RuleAction::Invoke { tool, target }
        }
        "terminate" => RuleAction::Terminate {
            agent: one(words)?,
        },
        _ => return None,
    };
    Some((keyword.to_owned(), action))
}

fn one<'a>(mut words: impl Iterator<Item = &'a str>) -> Option<String> {
    let w = words.next()?.to_owned();
    words.next().is_none().then_some(w)
}

/// Rules in `store` whose keyword occurs in `text`, in store order.
pub fn matching_rules(store: &MemoryStore, text: &str) -> Vec<Rule> {
    let text = text.to_ascii_lowercase();
    store
        .segments()
        .iter()
        .filter_map(|s| {
            let (keyword, action) = parse_rule(&s.content)?;
            text.contains(&keyword.to_ascii_lowercase()).then_some(Rule {
                seg_id: s.id,
                keyword,
                action,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_each_action() {
        assert_eq!(
            parse_rule("on popcorn: read hello.txt"),
            Some((
                "popcorn".into(),
                RuleAction::Read {
                    key: "hello.txt".into()
                }
            ))
        );
        assert_eq!(
            parse_rule("on go: write out.txt all done"),
            Some((
                "go".into(),
                RuleAction::Write {
                    key: "out.txt".into(),
                    content: "all done".into()
                }
            ))
        );
        assert_eq!(
            parse_rule("on x: invoke exec payload.mp3"),
            Some((
                "x".into(),
                RuleAction::Invoke {
                    tool: "exec".into(),
                    target: Some("payload.mp3".into())
                }
            ))
        );
        assert_eq!(
            parse_rule("on stop: terminate tracker"),
            Some((
                "stop".into(),
                RuleAction::Terminate {
                    agent: "tracker".into()
                }
            ))
        );
    }

    #[test]
    fn rejects_prose() {
        assert_eq!(parse_rule("tell a joke about history"), None);
        assert_eq!(parse_rule("on popcorn: dance"), None);
        assert_eq!(parse_rule("on two words: read x"), None);
        assert_eq!(parse_rule("on k: read a b"), None);
    }
}
