use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of board slots in the one-hot segment.
pub const BOARD_SLOTS: usize = 5;

/// Size of the industry taxonomy.
pub const INDUSTRY_COUNT: usize = 124;

/// Conditioning labels, or the unconditional sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Null,
    Labels { industry: usize, board: usize },
}

impl Condition {
    pub fn labels(industry: usize, board: usize) -> Self {
        Condition::Labels { industry, board }
    }

    /// Both ids present, or both absent.
    pub fn from_ids(industry: Option<usize>, board: Option<usize>) -> Result<Self> {
        match (industry, board) {
            (None, None) => Ok(Condition::Null),
            (Some(industry), Some(board)) => Ok(Condition::Labels { industry, board }),
            _ => Err(Error::domain("industry and board must both be given or both be null")),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Condition::Null)
    }

    pub fn validate(&self, industries: usize) -> Result<()> {
        if let Condition::Labels { industry, board } = *self {
            if industry >= industries {
                return Err(Error::domain(format!("industry id {industry} outside [0, {industries})")));
            }
            if board >= BOARD_SLOTS {
                return Err(Error::domain(format!("board id {board} outside [0, {BOARD_SLOTS})")));
            }
        }
        Ok(())
    }
}

/// An encoded condition: industry encoder output followed by the board one-hot.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector {
    pub condition: Condition,
    pub encoded: Vec<f64>,
}

impl ConditionVector {
    /// The trailing one-hot board segment.
    pub fn board_segment(&self) -> &[f64] {
        &self.encoded[self.encoded.len() - BOARD_SLOTS..]
    }

    pub fn industry_segment(&self) -> &[f64] {
        &self.encoded[..self.encoded.len() - BOARD_SLOTS]
    }
}
