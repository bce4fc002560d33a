use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A fixed, ordered collection of parameter buffers.
///
/// Gradients use the same type as the weights they belong to, so optimizers
/// and checkpoints work on the flattened view.
pub trait Parameters {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a [f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |s| n += s.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |s| out.extend_from_slice(s));
        out
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::domain(format!(
                "expected {n} parameters, got {}",
                flat.len()
            )));
        }
        let mut at = 0;
        self.visit_mut(&mut |s| {
            s.copy_from_slice(&flat[at..at + s.len()]);
            at += s.len();
        });
        Ok(())
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |s| s.fill(value));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }
}
