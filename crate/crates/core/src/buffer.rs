//! The two replay buffers: real transitions and weighted imagined ones.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::env::Transition;
use crate::error::{MeeeError, Result};
use crate::scalar::Scalar;

/// Fixed-capacity FIFO with uniform sampling with replacement.
#[derive(Debug, Clone)]
pub struct RingBuffer<I> {
    capacity: usize,
    items: VecDeque<I>,
}

impl<I: Clone> RingBuffer<I> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(MeeeError::InvalidArgument("buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &I> {
        self.items.iter()
    }

    pub fn get(&self, index: usize) -> Option<&I> {
        self.items.get(index)
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    fn push_unchecked(&mut self, item: I) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(MeeeError::EmptyBuffer);
        }
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<I>> {
        if n == 0 {
            return Err(MeeeError::InvalidArgument("batch size must be at least 1".into()));
        }
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }
}

/// Real environment transitions.
#[derive(Debug, Clone)]
pub struct EnvBuffer<T> {
    inner: RingBuffer<Transition<T>>,
}

impl<T: Scalar> EnvBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        Ok(Self {
            inner: RingBuffer::new(capacity)?,
        })
    }

    pub fn push(&mut self, t: Transition<T>) -> Result<()> {
        if let Some(first) = self.inner.get(0) {
            if first.s.len() != t.s.len() || first.a.len() != t.a.len() || t.s_next.len() != t.s.len() {
                return Err(MeeeError::DimensionMismatch {
                    context: "transition pushed to environment buffer",
                    expected: first.s.len() + first.a.len(),
                    actual: t.s.len() + t.a.len(),
                });
            }
        }
        self.inner.push_unchecked(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<T>> {
        self.inner.iter()
    }

    pub fn get(&self, index: usize) -> Option<&Transition<T>> {
        self.inner.get(index)
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition<T>>> {
        self.inner.sample_batch(n, rng)
    }

    /// Start states `s` (never `s'`) of `m` uniformly drawn transitions.
    pub fn sample_states<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<Vec<T>>> {
        if m == 0 {
            return Ok(Vec::new());
        }
        Ok(self
            .inner
            .sample_indices(m, rng)?
            .into_iter()
            .map(|i| self.inner.items[i].s.clone())
            .collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_transitions_csv(path, self.iter().map(|t| (t, None)))
    }
}

/// An imagined transition and its confidence weight in `[0.5, 1.0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTransition<T> {
    pub transition: Transition<T>,
    pub weight: T,
}

impl<T: Scalar> WeightedTransition<T> {
    pub fn new(transition: Transition<T>, weight: T) -> Result<Self> {
        check_weight(weight)?;
        Ok(Self { transition, weight })
    }
}

pub(crate) fn check_weight<T: Scalar>(w: T) -> Result<()> {
    if w.is_finite() && w >= T::of(0.5) && w <= T::one() {
        Ok(())
    } else {
        Err(MeeeError::WeightOutOfRange(w.as_f64()))
    }
}

/// Imagined transitions with weights.
#[derive(Debug, Clone)]
pub struct ModelBuffer<T> {
    inner: RingBuffer<WeightedTransition<T>>,
}

impl<T: Scalar> ModelBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        Ok(Self {
            inner: RingBuffer::new(capacity)?,
        })
    }

    pub fn push(&mut self, item: WeightedTransition<T>) -> Result<()> {
        check_weight(item.weight)?;
        self.inner.push_unchecked(item);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    pub fn iter(&self) -> impl Iterator<Item = &WeightedTransition<T>> {
        self.inner.iter()
    }

    pub fn clear(&mut self) {
        self.inner.clear();
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<WeightedTransition<T>>> {
        self.inner.sample_batch(n, rng)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_transitions_csv(path, self.iter().map(|w| (&w.transition, Some(w.weight))))
    }
}

/// One row per transition: `s_0..s_{n-1}, a_0..a_{m-1}, r, s_next_0..s_next_{n-1}, done, weight`.
/// Real transitions are written with weight 1.
fn write_transitions_csv<'a, T: Scalar>(
    path: &Path,
    rows: impl Iterator<Item = (&'a Transition<T>, Option<T>)>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header_written = false;
    for (t, w) in rows {
        if !header_written {
            let mut cols: Vec<String> = (0..t.s.len()).map(|i| format!("s_{i}")).collect();
            cols.extend((0..t.a.len()).map(|i| format!("a_{i}")));
            cols.push("r".into());
            cols.extend((0..t.s_next.len()).map(|i| format!("s_next_{i}")));
            cols.push("done".into());
            cols.push("weight".into());
            writeln!(out, "{}", cols.join(","))?;
            header_written = true;
        }
        let mut fields: Vec<String> = t.s.iter().chain(&t.a).map(|x| x.as_f64().to_string()).collect();
        fields.push(t.r.as_f64().to_string());
        fields.extend(t.s_next.iter().map(|x| x.as_f64().to_string()));
        fields.push(u8::from(t.done).to_string());
        fields.push(w.map_or(1.0, |w| w.as_f64()).to_string());
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}
