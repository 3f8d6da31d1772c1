use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Positional form of a character within a word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Position {
    Be,
    Mi,
    En,
    Iso,
}

impl Position {
    pub const ALL: [Position; 4] = [Position::Be, Position::Mi, Position::En, Position::Iso];

    /// Form of the character at `index` in a word of `len` characters.
    pub fn in_word(index: usize, len: usize) -> Self {
        match (len, index) {
            (1, _) => Position::Iso,
            (_, 0) => Position::Be,
            (n, i) if i + 1 == n => Position::En,
            _ => Position::Mi,
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatheringError {
    #[error("character {0:?} is not in the gathering table")]
    UnknownCharacter(String),
}

/// Admissible stroke counts of one character, indexed by [`Position`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatheringRow {
    pub symbol: String,
    pub counts: [BTreeSet<usize>; 4],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GatheringTable {
    pub rows: Vec<GatheringRow>,
}

impl GatheringTable {
    pub fn row(&self, symbol: &str) -> Option<&GatheringRow> {
        self.rows.iter().find(|r| r.symbol == symbol)
    }

    /// Marks `count` as admissible, creating the row if needed.
    pub fn admit(&mut self, symbol: &str, position: Position, count: usize) {
        if self.row(symbol).is_none() {
            self.rows.push(GatheringRow { symbol: symbol.to_string(), counts: Default::default() });
        }
        let row = self.rows.iter_mut().find(|r| r.symbol == symbol).expect("row exists");
        row.counts[position.slot()].insert(count);
    }

    /// Same counts at every position.
    pub fn uniform(symbols: &[String], counts: &[usize]) -> Self {
        let mut t = Self::default();
        for (s, &c) in symbols.iter().zip(counts) {
            for p in Position::ALL {
                t.admit(s, p, c);
            }
        }
        t
    }

    /// Checks each character's span of a decoded word.
    pub fn audit(&self, symbols: &[String], chars: &[usize], spans: &[Range<usize>]) -> GatheringAudit {
        let mut audit = GatheringAudit::default();
        for (i, (&c, span)) in chars.iter().zip(spans).enumerate() {
            let Some(symbol) = symbols.get(c) else { continue };
            if let Ok(ok) = check_gathering(symbol, Position::in_word(i, chars.len()), span.len(), self) {
                audit.checked += 1;
                if ok {
                    audit.satisfied += 1;
                }
            }
        }
        audit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GatheringAudit {
    /// Character spans whose character the table covers.
    pub checked: usize,
    pub satisfied: usize,
}

impl GatheringAudit {
    pub fn merge(&mut self, other: GatheringAudit) {
        self.checked += other.checked;
        self.satisfied += other.satisfied;
    }

    /// Satisfied fraction; 1 when nothing was checked.
    pub fn rate(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.satisfied as f64 / self.checked as f64
        }
    }
}

pub fn check_gathering(symbol: &str, position: Position, stroke_count: usize, table: &GatheringTable) -> Result<bool, GatheringError> {
    let row = table.row(symbol).ok_or_else(|| GatheringError::UnknownCharacter(symbol.to_string()))?;
    Ok(row.counts[position.slot()].contains(&stroke_count))
}

/// The published stroke-gathering counts for three letters.
pub fn published_table() -> GatheringTable {
    let mut t = GatheringTable::default();
    let rows: [(&str, [&[usize]; 4]); 3] = [
        ("ب", [&[2, 3], &[3], &[4], &[3]]),
        ("س", [&[5, 6], &[6, 7], &[6, 7], &[6]]),
        ("ح", [&[2, 3], &[3, 4], &[4, 5], &[3, 4]]),
    ];
    for (symbol, cols) in rows {
        for (p, counts) in Position::ALL.into_iter().zip(cols) {
            for &c in counts {
                t.admit(symbol, p, c);
            }
        }
    }
    t
}
