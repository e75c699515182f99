//! The per-token stack of layer outputs.
//!
//! Columns are generic so the same bookkeeping serves plain tensors and
//! autodiff variables. Column 0 is always the model input. In
//! `FirstLastK(k)` mode the layout is `[input, running_sum, last k...]`,
//! and the running-sum slot appears only once a column has been evicted.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackMode {
    Full,
    FirstLastK(usize),
}

impl StackMode {
    /// Width of the stack after `pushed` columns (input included).
    pub fn width_after(self, pushed: usize) -> usize {
        match self {
            StackMode::Full => pushed,
            StackMode::FirstLastK(k) => pushed.min(k + 2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerStack<C> {
    mode: StackMode,
    input: Option<C>,
    running: Option<C>,
    recent: VecDeque<C>,
    pushed: usize,
}

impl<C: Clone> LayerStack<C> {
    pub fn new(mode: StackMode) -> Self {
        LayerStack {
            mode,
            input: None,
            running: None,
            recent: VecDeque::new(),
            pushed: 0,
        }
    }

    pub fn mode(&self) -> StackMode {
        self.mode
    }

    /// Number of columns ever pushed, input included.
    pub fn pushed(&self) -> usize {
        self.pushed
    }

    pub fn width(&self) -> usize {
        self.input.iter().count() + self.running.iter().count() + self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_none()
    }

    /// Appends a column. In `FirstLastK` mode an overflowing window folds
    /// its oldest column into the running sum with `fold(sum, evicted)`.
    pub fn push_with(&mut self, column: C, fold: impl FnOnce(C, C) -> Result<C>) -> Result<()> {
        self.pushed += 1;
        if self.input.is_none() {
            self.input = Some(column);
            return Ok(());
        }
        self.recent.push_back(column);
        if let StackMode::FirstLastK(k) = self.mode {
            if self.recent.len() > k {
                let evicted = self.recent.pop_front().expect("window is nonempty");
                self.running = Some(match self.running.take() {
                    Some(sum) => fold(sum, evicted)?,
                    None => evicted,
                });
            }
        }
        Ok(())
    }

    /// Columns in slot order: input, running sum (if any), recent outputs.
    pub fn columns(&self) -> Vec<&C> {
        self.input
            .iter()
            .chain(self.running.iter())
            .chain(self.recent.iter())
            .collect()
    }

    pub fn input(&self) -> Option<&C> {
        self.input.as_ref()
    }
}

impl LayerStack<crate::tensor::Tensor> {
    /// `push_with` using elementwise addition, after a shape check against
    /// the input column.
    pub fn push(&mut self, column: crate::tensor::Tensor) -> Result<()> {
        if let Some(x) = &self.input {
            if x.shape() != column.shape() {
                return Err(Error::shape(
                    "stack_push",
                    format!("column {:?} vs stack {:?}", column.shape(), x.shape()),
                ));
            }
        }
        self.push_with(column, |a, b| a.add(&b))
    }
}
