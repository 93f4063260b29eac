use super::{Tape, Var};
use crate::error::Result;

impl Tape {
    /// `x · W + b` for `x: T × I`, `W: I × O` and a length-`O` bias.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        let rows = self.shape(x)[0];
        let bb = self.expand_rows(b, rows)?;
        self.add(y, bb)
    }

    /// Adds a length-`C` bias to every column of a `C × T` map.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let cols = self.shape(x)[1];
        let bb = self.expand_cols(b, cols)?;
        self.add(x, bb)
    }
}
