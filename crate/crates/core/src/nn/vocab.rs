use std::collections::{BTreeMap, HashMap};

pub const PAD: &str = "<PAD>";
pub const UNK: &str = "<UNK>";

/// String-to-index table. Reserved entries come first; the rest are ordered
/// by frequency (descending), then by string.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    itos: Vec<String>,
    freq: Vec<usize>,
    stoi: HashMap<String, usize>,
}

impl Vocab {
    /// Build with `PAD` and `UNK` reserved at 0 and 1.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(items: I, min_freq: usize) -> Self {
        Self::build_with(items, min_freq, &[PAD, UNK])
    }

    pub fn build_with<'a, I: IntoIterator<Item = &'a str>>(items: I, min_freq: usize, reserved: &[&str]) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in items {
            *counts.entry(s).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(s, n)| *n >= min_freq && !reserved.contains(s))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut v = Vocab {
            itos: Vec::new(),
            freq: Vec::new(),
            stoi: HashMap::new(),
        };
        for r in reserved {
            v.push(r, 0);
        }
        for (s, n) in ranked {
            v.push(s, n);
        }
        v
    }

    fn push(&mut self, s: &str, n: usize) {
        self.stoi.insert(s.to_string(), self.itos.len());
        self.itos.push(s.to_string());
        self.freq.push(n);
    }

    pub fn len(&self) -> usize {
        self.itos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.itos.is_empty()
    }

    pub fn get(&self, s: &str) -> Option<usize> {
        self.stoi.get(s).copied()
    }

    /// Index of `s`, falling back to `UNK` (or 0 when there is none).
    pub fn index(&self, s: &str) -> usize {
        self.get(s).or_else(|| self.get(UNK)).unwrap_or(0)
    }

    pub fn token(&self, i: usize) -> &str {
        &self.itos[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.itos
    }

    pub fn frequency(&self, i: usize) -> usize {
        self.freq[i]
    }

    /// One `entry \t frequency` line per index.
    pub fn to_lines(&self) -> String {
        self.itos.iter().zip(&self.freq).map(|(s, n)| format!("{s}\t{n}\n")).collect()
    }

    pub fn from_lines(doc: &str) -> Option<Self> {
        let mut v = Vocab {
            itos: Vec::new(),
            freq: Vec::new(),
            stoi: HashMap::new(),
        };
        for line in doc.lines() {
            let (s, n) = line.rsplit_once('\t')?;
            v.push(s, n.parse().ok()?);
        }
        Some(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_frequency_then_string() {
        let v = Vocab::build(["b", "a", "c", "b", "a", "d", "a"], 1);
        assert_eq!(v.tokens(), [PAD, UNK, "a", "b", "c", "d"]);
        assert_eq!(v.index("zzz"), 1);
        assert_eq!(v.index("b"), 3);
        assert_eq!(Vocab::from_lines(&v.to_lines()).unwrap(), v);
    }

    #[test]
    fn min_frequency_filters() {
        let v = Vocab::build(["x", "y", "y"], 2);
        assert_eq!(v.tokens(), [PAD, UNK, "y"]);
    }
}
