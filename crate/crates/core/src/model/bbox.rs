use serde::{Deserialize, Serialize};

/// Axis-aligned box in normalized image coordinates (origin top-left,
/// y grows downward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    #[serde(default = "full_score")]
    pub score: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

fn full_score() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BBoxError {
    #[error("coordinates out of [0,1]: ({0}, {1}, {2}, {3})")]
    OutOfRange(f64, f64, f64, f64),
    #[error("degenerate box: x0 < x1 and y0 < y1 required, got ({0}, {1}, {2}, {3})")]
    Unordered(f64, f64, f64, f64),
    #[error("score {0} outside [0,1]")]
    Score(f64),
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, BBoxError> {
        let b = BBox {
            x0,
            y0,
            x1,
            y1,
            score: 1.0,
            label: String::new(),
        };
        b.check()?;
        Ok(b)
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn check(&self) -> Result<(), BBoxError> {
        let (x0, y0, x1, y1) = (self.x0, self.y0, self.x1, self.y1);
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if ![x0, y0, x1, y1].into_iter().all(in_unit) {
            return Err(BBoxError::OutOfRange(x0, y0, x1, y1));
        }
        if !(x0 < x1 && y0 < y1) {
            return Err(BBoxError::Unordered(x0, y0, x1, y1));
        }
        if !in_unit(self.score) {
            return Err(BBoxError::Score(self.score));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    /// Same geometry, ignoring score and label.
    pub fn same_region(&self, other: &BBox) -> bool {
        self.x0 == other.x0 && self.y0 == other.y0 && self.x1 == other.x1 && self.y1 == other.y1
    }
}
