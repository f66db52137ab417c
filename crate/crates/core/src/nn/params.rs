use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Maps named slices onto a flat parameter vector.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
    total: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, len: usize) -> usize {
        let offset = self.total;
        self.segments.push(Segment {
            name: name.into(),
            offset,
            len,
        });
        self.total += len;
        offset
    }

    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        let mut total = 0;
        for s in &segments {
            if s.offset != total {
                return Err(Error::Checkpoint(format!(
                    "segment {} starts at {}, expected {total}",
                    s.name, s.offset
                )));
            }
            total += s.len;
        }
        Ok(Self { segments, total })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn get(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Flat parameter vector. Every mutation through the public API assigns a new
/// version, which activation caches use to detect staleness.
#[derive(Clone, Debug)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
    version: u64,
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values && self.layout == other.layout
    }
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            values: vec![0.0; layout.total()],
            layout,
            version: fresh_version(),
        }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::ShapeMismatch {
                expected: layout.total(),
                got: values.len(),
            });
        }
        Ok(Self {
            values,
            layout,
            version: fresh_version(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.version = fresh_version();
        &mut self.values
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .get(name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    /// `self += scale * delta`.
    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) -> Result<()> {
        if delta.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                got: delta.len(),
            });
        }
        for (p, d) in self.values_mut().iter_mut().zip(delta) {
            *p += scale * d;
        }
        Ok(())
    }

    pub fn copy_from(&mut self, other: &ParamVector) -> Result<()> {
        if other.layout != self.layout {
            return Err(Error::Config("parameter layouts differ".into()));
        }
        self.values.copy_from_slice(&other.values);
        self.version = other.version;
        Ok(())
    }

    pub fn unpack(&self) -> Vec<(String, Vec<f64>)> {
        self.layout
            .segments
            .iter()
            .map(|s| (s.name.clone(), self.values[s.offset..s.offset + s.len].to_vec()))
            .collect()
    }

    pub fn pack(layout: Layout, parts: &[(String, Vec<f64>)]) -> Result<Self> {
        if parts.len() != layout.segments.len() {
            return Err(Error::ShapeMismatch {
                expected: layout.segments.len(),
                got: parts.len(),
            });
        }
        let mut values = Vec::with_capacity(layout.total());
        for (seg, (name, v)) in layout.segments.iter().zip(parts) {
            if &seg.name != name || seg.len != v.len() {
                return Err(Error::Config(format!("segment {name} does not match layout")));
            }
            values.extend_from_slice(v);
        }
        Self::from_values(layout, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn pack_unpack_round_trip(lens in proptest::collection::vec(0usize..20, 1..6), seed in 0u64..1000) {
            let mut layout = Layout::new();
            for (i, l) in lens.iter().enumerate() {
                layout.push(format!("s{i}"), *l);
            }
            prop_assert_eq!(layout.total(), lens.iter().sum::<usize>());
            let values: Vec<f64> = (0..layout.total()).map(|i| (i as f64 + seed as f64).sin()).collect();
            let p = ParamVector::from_values(layout.clone(), values.clone()).unwrap();
            let q = ParamVector::pack(layout, &p.unpack()).unwrap();
            prop_assert_eq!(q.values(), &values[..]);
        }
    }

    #[test]
    fn mutation_changes_version() {
        let mut l = Layout::new();
        l.push("w", 3);
        let mut p = ParamVector::zeros(l);
        let v0 = p.version();
        p.values_mut()[0] = 1.0;
        assert_ne!(p.version(), v0);
        let c = p.clone();
        assert_eq!(c.version(), p.version());
        assert!(p.add_scaled(&[1.0], 1.0).is_err());
    }
}
