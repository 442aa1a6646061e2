//! Review records and label schemes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "NO-SPAM")]
    NoSpam,
    #[serde(rename = "SPAM")]
    Spam,
}

/// Spam type: fake/seeding (1), brand-only (2), irrelevant (3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpamLabel {
    #[serde(rename = "NONE")]
    None,
    #[serde(rename = "SPAM-1")]
    Spam1,
    #[serde(rename = "SPAM-2")]
    Spam2,
    #[serde(rename = "SPAM-3")]
    Spam3,
}

impl SpamLabel {
    pub const ALL: [SpamLabel; 4] = [
        SpamLabel::None,
        SpamLabel::Spam1,
        SpamLabel::Spam2,
        SpamLabel::Spam3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpamLabel::None => "NONE",
            SpamLabel::Spam1 => "SPAM-1",
            SpamLabel::Spam2 => "SPAM-2",
            SpamLabel::Spam3 => "SPAM-3",
        }
    }

    pub fn label(self) -> Label {
        match self {
            SpamLabel::None => Label::NoSpam,
            _ => Label::Spam,
        }
    }
}

/// One review with its product metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawReview {
    /// Stable record identifier. Assigned from the line number when absent.
    #[serde(default)]
    pub review_id: String,
    pub comment: String,
    pub rating: u8,
    pub category: String,
    pub product_name: String,
    pub description: String,
    pub num_sold: u64,
    pub num_reviews: u64,
    pub label: Label,
    pub spam_label: SpamLabel,
}

impl RawReview {
    pub const REQUIRED_FIELDS: [&'static str; 9] = [
        "comment",
        "rating",
        "category",
        "product_name",
        "description",
        "num_sold",
        "num_reviews",
        "label",
        "spam_label",
    ];

    pub fn validate(&self) -> Result<()> {
        if self.comment.trim().is_empty() {
            return Err(Error::Data(format!("review {}: empty comment", self.review_id)));
        }
        if !(1..=5).contains(&self.rating) {
            return Err(Error::Data(format!(
                "review {}: rating {} outside 1..=5",
                self.review_id, self.rating
            )));
        }
        if self.spam_label.label() != self.label {
            return Err(Error::Data(format!(
                "review {}: label {:?} inconsistent with spam_label {:?}",
                self.review_id, self.label, self.spam_label
            )));
        }
        Ok(())
    }

    pub fn class(&self, task: Task) -> usize {
        task.class_of(self.spam_label)
    }
}

/// Task 1 is spam vs. non-spam; task 2 is the four-way spam type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Task1,
    Task2,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::Task1 => 2,
            Task::Task2 => 4,
        }
    }

    pub fn class_of(self, spam_label: SpamLabel) -> usize {
        match self {
            Task::Task1 => match spam_label.label() {
                Label::NoSpam => 0,
                Label::Spam => 1,
            },
            Task::Task2 => match spam_label {
                SpamLabel::None => 0,
                SpamLabel::Spam1 => 1,
                SpamLabel::Spam2 => 2,
                SpamLabel::Spam3 => 3,
            },
        }
    }

    pub fn class_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            Task::Task1 => &["NO-SPAM", "SPAM"],
            Task::Task2 => &["NO-SPAM", "SPAM-1", "SPAM-2", "SPAM-3"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Task1 => "task1",
            Task::Task2 => "task2",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "task1" => Ok(Task::Task1),
            "task2" => Ok(Task::Task2),
            other => Err(Error::Config(format!("unknown task `{other}` (expected task1|task2)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_consistency_is_checked() {
        let mut r = RawReview {
            review_id: "x".into(),
            comment: "ok".into(),
            rating: 5,
            category: "Book".into(),
            product_name: "p".into(),
            description: "d".into(),
            num_sold: 0,
            num_reviews: 0,
            label: Label::Spam,
            spam_label: SpamLabel::None,
        };
        assert!(r.validate().is_err());
        r.label = Label::NoSpam;
        assert!(r.validate().is_ok());
        r.comment = "  ".into();
        assert!(r.validate().is_err());
    }

    #[test]
    fn serde_label_names() {
        assert_eq!(serde_json::to_string(&SpamLabel::Spam3).unwrap(), "\"SPAM-3\"");
        assert_eq!(serde_json::to_string(&Label::NoSpam).unwrap(), "\"NO-SPAM\"");
    }

    #[test]
    fn task_classes() {
        assert_eq!(Task::Task1.class_of(SpamLabel::Spam2), 1);
        assert_eq!(Task::Task2.class_of(SpamLabel::Spam2), 2);
        assert_eq!(Task::Task2.num_classes(), 4);
    }
}
