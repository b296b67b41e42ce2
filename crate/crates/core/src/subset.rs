use std::fmt;

/// A subset of `{0, .., r-1}` stored as a bitmask. Rank is limited to 32.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Subset(pub u32);

impl Subset {
    pub const EMPTY: Subset = Subset(0);

    pub fn full(r: usize) -> Self {
        assert!(r <= 32);
        if r == 32 {
            Subset(u32::MAX)
        } else {
            Subset((1u32 << r) - 1)
        }
    }

    pub fn from_indices(idx: &[usize]) -> Self {
        Subset(idx.iter().fold(0, |acc, &i| acc | (1 << i)))
    }

    pub fn singleton(i: usize) -> Self {
        Subset(1 << i)
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 & (1 << i) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: Subset) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: Subset) -> Subset {
        Subset(self.0 | other.0)
    }

    pub fn intersection(self, other: Subset) -> Subset {
        Subset(self.0 & other.0)
    }

    pub fn minus(self, other: Subset) -> Subset {
        Subset(self.0 & !other.0)
    }

    /// Complement within `[r]`.
    pub fn complement(self, r: usize) -> Subset {
        Subset::full(r).minus(self)
    }

    /// Members in increasing order.
    pub fn indices(self) -> Vec<usize> {
        (0..32).filter(|&i| self.contains(i)).collect()
    }

    /// All subsets of `[r]`, ordered by bitmask.
    pub fn all(r: usize) -> impl Iterator<Item = Subset> {
        (0..(1u64 << r)).map(|m| Subset(m as u32))
    }

    /// All subsets of `self`.
    pub fn subsets(self) -> impl Iterator<Item = Subset> {
        let full = self.0 as u64;
        // enumerate submasks in increasing numeric order
        (0..=full).filter(move |m| m & !full == 0).map(|m| Subset(m as u32))
    }

    /// `(-1)^{|S|}`.
    pub fn parity_sign(self) -> f64 {
        if self.len() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

impl fmt::Debug for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.indices().into_iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        write!(f, "}}")
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl serde::Serialize for Subset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        // 1-based member list
        let v: Vec<usize> = self.indices().into_iter().map(|i| i + 1).collect();
        v.serialize(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_basics() {
        let s = Subset::from_indices(&[0, 2]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.complement(3), Subset::singleton(1));
        assert_eq!(s.subsets().count(), 4);
        assert_eq!(Subset::all(3).count(), 8);
        assert_eq!(format!("{s}"), "{1,3}");
        assert!(Subset::EMPTY.is_subset_of(s));
    }
}
